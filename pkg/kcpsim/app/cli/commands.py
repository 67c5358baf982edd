"""Subcommand handlers.

Each handler writes its outputs through ``atomic_output`` so a failed run
leaves nothing behind, and every file starts with the resolved configuration.
"""
import logging
from pathlib import Path
from typing import Callable, Dict, List

from kcpsim.config.settings import OUTPUT_DIR
from kcpsim.app.core import analysis, experiments
from kcpsim.app.core.dynamics import LatticeState, ProcessKind, evolve
from kcpsim.app.core.event_engine import RngStream, build_timeline
from kcpsim.app.core.exceptions import CouplingViolation, SimulationError, UsageError
from kcpsim.app.core.observables import write_trajectory_csv
from kcpsim.app.utils.helpers import atomic_output, run_replicas, write_csv
from .config import RunConfig
from .render import render_snapshot

logger = logging.getLogger('cli')

DEFAULT_DECAY_TIMES = (0.5, 1.0, 2.0, 4.0)
EXTENSIONS = {'pgm': '.pgm', 'ascii': '.txt'}


def output_path(config: RunConfig) -> Path:
    """Resolve the output file, defaulting to <command> under OUTPUT_DIR"""
    if config.output:
        return Path(config.output)
    suffix = EXTENSIONS[config.format] if config.command == 'snapshot' else '.csv'
    return OUTPUT_DIR / f"{config.command}{suffix}"


def _emit_csv(config: RunConfig, written: List[Path], columns, rows):
    path = output_path(config)
    with atomic_output(path) as tmp:
        write_csv(tmp, config.header(), columns, rows)
    written.append(path)
    logger.info(f"Wrote {path}")


def _initial(config: RunConfig) -> LatticeState:
    kind = config.process_kind
    origin = config.domain_spec().origin
    center = origin if kind is ProcessKind.STAR_RESTRICTED else None
    return LatticeState.point(kind, origin, 1.0, center=center)


def _simulate_replica(task):
    config, stream = task
    times = config.sample_times or [config.horizon]
    return evolve(config.process_kind, _initial(config), config.params(), stream, times)


def cmd_simulate(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write per-replica sampled observables of independent runs"""
    tasks = [(config, rng.child('simulate', r)) for r in range(config.replicas)]
    trajectories = run_replicas(_simulate_replica, tasks, config.jobs, logger=logger)
    path = output_path(config)
    with atomic_output(path) as tmp:
        write_trajectory_csv(trajectories, tmp, header=config.header())
    written.append(path)
    logger.info(f"Wrote {len(trajectories)} trajectories to {path}")
    return 0


def cmd_decay(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write the unbounded total-knowledge mean against its closed form"""
    domain = config.domain_spec() if 'domain' in config.explicit else None
    table = experiments.verify_decay(config.dim, config.lam, config.mu,
                                     config.sample_times or DEFAULT_DECAY_TIMES, config.replicas, rng,
                                     domain=domain, jobs=config.jobs)
    _emit_csv(config, written, ['t', 'mean', 'se', 'closed_form'],
              [(r.t, r.mean, r.se, r.closed_form) for r in table.rows])
    return 0


def cmd_sweep(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write survival frequencies over the lambda x mu grid"""
    table = experiments.sweep_phase_grid(config.lambda_grid or [config.lam], config.mu_grid or [config.mu],
                                         config.domain_spec(), config.horizon, config.delta,
                                         config.replicas, rng, kind=config.process_kind, jobs=config.jobs)
    _emit_csv(config, written, experiments.SWEEP_COLUMNS, [row.as_tuple() for row in table.rows])
    return 0


def cmd_critical(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write the bisected critical value, or "none" when the bracket shows no transition"""
    fixed = config.mu if config.direction == 'lambda' else config.lam
    result = experiments.bisect_critical(config.direction, fixed, config.bracket, config.tolerance,
                                         config.replicas, rng, config.domain_spec(), config.horizon,
                                         delta=config.delta, level=config.level,
                                         kind=config.process_kind, jobs=config.jobs)
    estimate = result.estimate if result.transition_found else 'none'
    _emit_csv(config, written,
              ['direction', 'fixed', 'estimate', 'tolerance', 'lo', 'hi', 'transition_found', 'probes'],
              [(result.direction, result.fixed, estimate, result.tolerance, result.lo, result.hi,
                int(result.transition_found), len(result.probes))])
    return 0


def cmd_couple_check(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write the ordering-violation count of random coupled trials"""
    report = experiments.couple_check(config.trials, rng, size=config.size, horizon=config.horizon,
                                      jobs=config.jobs)
    _emit_csv(config, written, ['trials', 'violations', 'events_checked'],
              [(report.trials, report.violations, report.events_checked)])
    if not report.ok:
        raise CouplingViolation(f"{report.violations} of {report.trials} coupled trials lost their ordering")
    return 0


def cmd_invade(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write the star-graph invasion frequency against its target"""
    lam = config.lam if 'lam' in config.explicit else None
    result = experiments.check_invasion(config.epsilon, config.mu, config.dim, config.replicas, rng,
                                        lam=lam, jobs=config.jobs)
    _emit_csv(config, written,
              ['epsilon', 'mu', 'dim', 'horizon', 'interactions', 'lambda', 'replicas', 'frequency', 'se', 'target'],
              [(config.epsilon, config.mu, config.dim, result.horizon, result.interactions, result.lam,
                result.replicas, result.frequency, result.se, result.target)])
    return 0


def cmd_paths(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write the overlap windows of paths from the origin"""
    domain = config.domain_spec()
    timeline = build_timeline(domain, config.lam, config.horizon, rng.child('paths'))
    found = analysis.extract_paths(timeline, (domain.origin, 0.0), config.horizon, cap=config.cap)
    if found.truncated:
        logger.warning(f"Path enumeration truncated at {len(found)} paths")
    path = output_path(config)
    with atomic_output(path) as tmp:
        analysis.write_paths_csv(found.paths, tmp, timeline, header=config.header())
    written.append(path)
    logger.info(f"Wrote {len(found)} paths to {path}")
    return 0


def cmd_perc(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write wet counts per level of the oriented percolation field"""
    origin = (0,) * config.dim
    field = experiments.oriented_percolation(config.p, config.depth, [origin], rng.child('perc'), d=config.dim)
    _emit_csv(config, written, ['level', 'wet_count'], list(enumerate(field.counts)))
    return 0


def cmd_snapshot(config: RunConfig, rng: RngStream, written: List[Path]) -> int:
    """Write one configuration as a PGM or ASCII picture"""
    domain = config.domain_spec()
    kind = config.process_kind
    if kind is ProcessKind.STAR_RESTRICTED:
        raise UsageError('kind', "snapshots render the full lattice; star kind is not supported")
    # start from a fully informed lattice, as in a picture of the bulk
    initial = LatticeState(kind, {site: 1.0 for site in domain.sites()})
    at = config.snapshot_time if config.snapshot_time is not None else config.horizon
    traj = evolve(kind, initial, config.params(domain=domain), rng.child('snapshot'), [at])
    image = render_snapshot(traj.samples[-1].values, domain, config.format)
    comment = config.header().encode('ascii', 'replace')
    if config.format == 'pgm':
        magic, rest = image.split(b'\n', 1)
        data = magic + b'\n' + comment + rest
    else:
        data = comment + image
    path = output_path(config)
    with atomic_output(path) as tmp:
        tmp.write_bytes(data)
    written.append(path)
    logger.info(f"Wrote snapshot at t={at} to {path}")
    return 0


HANDLERS: Dict[str, Callable[[RunConfig, RngStream, List[Path]], int]] = {
    'simulate': cmd_simulate,
    'decay': cmd_decay,
    'sweep': cmd_sweep,
    'critical': cmd_critical,
    'couple-check': cmd_couple_check,
    'invade': cmd_invade,
    'paths': cmd_paths,
    'perc': cmd_perc,
    'snapshot': cmd_snapshot,
}


def _remove(paths: List[Path]):
    for path in paths:
        try:
            path.unlink()
        except FileNotFoundError:
            pass
        except OSError as e:
            logger.error(f"Failed to remove partial output {path}: {e}")


def run(config: RunConfig) -> int:
    """Dispatch config.command; 0 on success, 2 on usage errors, 1 on any other failure"""
    rng = RngStream(config.seed)
    written: List[Path] = []
    logger.info(f"Running {config.command} with seed {config.seed}")
    try:
        return HANDLERS[config.command](config, rng, written)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        _remove(written)
        return 2
    except CouplingViolation as e:
        # the report is complete; keep it for inspection
        logger.error(f"{config.command} failed: {e}")
        return 1
    except (SimulationError, OSError) as e:
        logger.error(f"{config.command} failed: {e}")
        _remove(written)
        return 1
