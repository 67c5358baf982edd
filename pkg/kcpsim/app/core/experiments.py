"""Replicated experiments built on the dynamics.

Every replica draws its randomness from ``rng.child(<experiment>, <replica>)``
so results are reproducible from the master seed alone, whatever the number of
workers. Survival probabilities here are finite-horizon, finite-domain proxies
and every result carries a label saying so.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.stats import norm

from kcpsim.config.settings import CONFIDENCE, EVENT_BUDGET, SURVIVAL_LEVEL
from kcpsim.app.utils.helpers import memory_usage_mb, run_replicas
from .analysis import (
    MarkIndex,
    double_interaction_probability,
    double_interactions,
    extract_paths,
    forward_overlaps,
    invade_time,
    invasion_lambda,
    min_interactions,
    overlap_windows,
)
from .dynamics import (
    LatticeState,
    Params,
    ProcessKind,
    evolve,
    evolve_coupled,
)
from .event_engine import (
    DomainSpec,
    RngStream,
    Site,
    build_star_timeline,
    build_timeline,
)
from .exceptions import (
    BracketError,
    CouplingViolation,
    DomainError,
    ParameterError,
    UnsupportedModeError,
)
from .observables import support, survival_proxy, total_knowledge

logger = logging.getLogger('experiments')


def proxy_label(horizon: float, delta: float, domain: DomainSpec) -> str:
    """Describe the finite-horizon survival proxy behind a result"""
    return f"finite-horizon proxy: T={horizon:g}, delta={delta:g}, domain={domain.describe()}"


def wilson_interval(successes: int, trials: int, confidence: float = CONFIDENCE) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion"""
    if trials < 1:
        raise ParameterError("need at least one trial")
    z = norm.ppf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, min(center - half, p)), min(1.0, max(center + half, p))


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, se


# --- decay law ---------------------------------------------------------------

@dataclass(frozen=True)
class DecayRow:
    t: float
    mean: float
    se: float
    closed_form: float


@dataclass
class DecayTable:
    rows: List[DecayRow]
    d: int
    lam: float
    mu: float
    replicas: int
    censored: int
    label: str

    def within(self, k: float) -> bool:
        """Every empirical mean within k standard errors of the closed form"""
        return all(abs(r.mean - r.closed_form) <= k * r.se + 1e-12 for r in self.rows)


@dataclass(frozen=True)
class _DecayTask:
    params: Params
    times: Tuple[float, ...]
    stream: RngStream
    event_budget: int


def _decay_replica(task: _DecayTask) -> Tuple[List[float], bool]:
    origin = task.params.domain.origin
    initial = LatticeState.point(ProcessKind.UNBOUNDED, origin)
    traj = evolve(ProcessKind.UNBOUNDED, initial, task.params, task.stream, task.times,
                  event_budget=task.event_budget)
    if traj.censored:
        return [], True
    return [total_knowledge(s.values) for s in traj.samples], False


def verify_decay(d: int, lam: float, mu: float, t_grid: Sequence[float], replicas: int,
                 rng: RngStream, domain: Optional[DomainSpec] = None, jobs: int = 1,
                 event_budget: int = EVENT_BUDGET,
                 logger: logging.Logger = logger) -> DecayTable:
    """Empirical mean of the unbounded total knowledge against exp((2d lam mu - 1) t)"""
    domain = domain or DomainSpec.lazy(d)
    if domain.is_finite:
        logger.warning(f"verify_decay on {domain.describe()}: boundary effects break the closed form")
    times = tuple(sorted(float(t) for t in t_grid))
    if not times or times[0] < 0:
        raise ParameterError(f"time grid must be nonempty and nonnegative, got {list(t_grid)}")
    horizon = times[-1] if times[-1] > 0 else 1.0
    params = Params(d, lam, mu, domain, horizon)
    params.validate(ProcessKind.UNBOUNDED)

    logger.info(f"verify_decay d={d} lambda={lam} mu={mu} on {domain.describe()}, {replicas} replicas")
    tasks = [_DecayTask(params, times, rng.child('decay', r), event_budget) for r in range(replicas)]
    results = run_replicas(_decay_replica, tasks, jobs, logger=logger)

    kept = np.array([values for values, censored in results if not censored], dtype=float)
    censored = sum(1 for _, c in results if c)
    if censored:
        logger.warning(f"{censored} of {replicas} decay replicas exceeded the event budget")
    drift = 2 * d * lam * mu - 1
    rows = []
    for k, t in enumerate(times):
        column = kept[:, k] if kept.size else np.empty(0)
        mean, se = _mean_se(column)
        rows.append(DecayRow(t, mean, se, math.exp(drift * t)))
    logger.info(f"verify_decay finished, resident memory {memory_usage_mb():.1f} MB")
    return DecayTable(rows, d, lam, mu, replicas, censored,
                      f"exact infinite-lattice semantics on {domain.describe()}"
                      if not domain.is_finite else proxy_label(horizon, 0.0, domain))


# --- survival ---------------------------------------------------------------

@dataclass
class SurvivalEstimate:
    frequency: float
    ci_lo: float
    ci_hi: float
    replicas: int
    mean_xi: float
    se_xi: float
    indicators: np.ndarray
    label: str

    @property
    def se(self) -> float:
        p = self.frequency
        return math.sqrt(p * (1 - p) / self.replicas)


@dataclass(frozen=True)
class _SurvivalTask:
    kind: ProcessKind
    params: Tuple[Params, ...]
    initial: Dict[Site, float]
    delta: float
    stream: RngStream
    crn_rate: Optional[float]


def _survival_replica(task: _SurvivalTask) -> List[Tuple[bool, float]]:
    """Indicators and final totals of one replica for each parameter set"""
    horizon = task.params[0].horizon
    timeline = None
    if task.crn_rate is not None:
        timeline = build_timeline(task.params[0].domain, task.crn_rate, horizon, task.stream)
    out = []
    for params in task.params:
        initial = LatticeState(task.kind, task.initial)
        traj = evolve(task.kind, initial, params, task.stream, (horizon,), timeline=timeline)
        xi = total_knowledge(traj.samples[-1].values) if traj.samples else math.nan
        out.append((survival_proxy(traj, horizon, task.delta), xi))
    return out


def _default_initial(domain: DomainSpec) -> Dict[Site, float]:
    return {domain.origin: 1.0}


def _summarize(indicators: np.ndarray, totals: np.ndarray, label: str) -> SurvivalEstimate:
    n = indicators.size
    survivors = int(indicators.sum())
    lo, hi = wilson_interval(survivors, n)
    mean, se = _mean_se(totals)
    return SurvivalEstimate(survivors / n, lo, hi, n, mean, se, indicators, label)


def estimate_survival(params: Params, delta: float, replicas: int, rng: RngStream,
                      kind: ProcessKind = ProcessKind.BOUNDED,
                      initial: Optional[Dict[Site, float]] = None,
                      crn_rate: Optional[float] = None, jobs: int = 1,
                      logger: logging.Logger = logger) -> SurvivalEstimate:
    """Fraction of replicas with total knowledge above delta at the horizon.

    With ``crn_rate`` every replica builds one timeline at that rate and thins
    it to ``params.lam``, so estimates at different rates (and fractions)
    share their randomness replica by replica.
    """
    if not params.domain.is_finite:
        raise UnsupportedModeError("survival estimates need a finite domain")
    if replicas < 1:
        raise ParameterError(f"replicas must be >= 1, got {replicas}")
    kind = ProcessKind(kind)
    params.validate(kind)
    initial = dict(initial or _default_initial(params.domain))
    tasks = [_SurvivalTask(kind, (params,), initial, delta, rng.child('survival', r), crn_rate)
             for r in range(replicas)]
    results = run_replicas(_survival_replica, tasks, jobs, logger=logger)
    indicators = np.array([r[0][0] for r in results], dtype=bool)
    totals = np.array([r[0][1] for r in results], dtype=float)
    estimate = _summarize(indicators, totals, proxy_label(params.horizon, delta, params.domain))
    logger.debug(f"survival at lambda={params.lam}, mu={params.mu}: {estimate.frequency:.4f}")
    return estimate


# --- phase grid ---------------------------------------------------------------

SWEEP_COLUMNS = ['lambda', 'mu', 'dim', 'size', 'horizon', 'delta', 'replicas',
                 'survival_freq', 'ci_lo', 'ci_hi', 'mean_xi', 'se_xi']


@dataclass(frozen=True)
class SweepRow:
    lam: float
    mu: float
    dim: int
    size: str
    horizon: float
    delta: float
    replicas: int
    survival_freq: float
    ci_lo: float
    ci_hi: float
    mean_xi: float
    se_xi: float

    def as_tuple(self) -> tuple:
        return (self.lam, self.mu, self.dim, self.size, self.horizon, self.delta, self.replicas,
                self.survival_freq, self.ci_lo, self.ci_hi, self.mean_xi, self.se_xi)


@dataclass
class SweepTable:
    rows: List[SweepRow]
    lambdas: List[float]
    mus: List[float]
    indicators: np.ndarray  # (len(lambdas), len(mus), replicas)
    label: str

    def cell(self, lam: float, mu: float) -> SweepRow:
        return self.rows[self.lambdas.index(lam) * len(self.mus) + self.mus.index(mu)]

    def monotonicity_violations(self) -> int:
        """Replica indicators that drop when lambda or mu increases"""
        ind = self.indicators.astype(np.int8)
        along_lambda = int((np.diff(ind, axis=0) < 0).sum())
        along_mu = int((np.diff(ind, axis=1) < 0).sum())
        return along_lambda + along_mu


def sweep_phase_grid(lambda_grid: Sequence[float], mu_grid: Sequence[float], domain: DomainSpec,
                     horizon: float, delta: float, replicas: int, rng: RngStream,
                     kind: ProcessKind = ProcessKind.BOUNDED, crn: bool = True, jobs: int = 1,
                     logger: logging.Logger = logger) -> SweepTable:
    """Survival frequency on every (lambda, mu) cell.

    With common random numbers each replica builds one timeline at the largest
    lambda, thins it per lambda and reuses it for every mu, so indicators are
    monotone replica by replica. Without them each cell draws its own streams
    from (master seed, cell index, replica).
    """
    lambdas = sorted(set(float(v) for v in lambda_grid))
    mus = sorted(set(float(v) for v in mu_grid))
    if not lambdas or not mus:
        raise ParameterError("lambda and mu grids must be nonempty")
    if not domain.is_finite:
        raise UnsupportedModeError("phase sweeps need a finite domain")
    if replicas < 1:
        raise ParameterError(f"replicas must be >= 1, got {replicas}")
    kind = ProcessKind(kind)
    d = domain.dimension
    grid = [Params(d, lam, mu, domain, horizon) for lam in lambdas for mu in mus]
    for params in grid:
        params.validate(kind)
    initial = _default_initial(domain)
    logger.info(f"Sweeping {len(lambdas)}x{len(mus)} cells on {domain.describe()}, "
                f"{replicas} replicas, crn={crn}")

    cells = len(grid)
    indicators = np.zeros((cells, replicas), dtype=bool)
    totals = np.zeros((cells, replicas), dtype=float)
    if crn:
        tasks = [_SurvivalTask(kind, tuple(grid), initial, delta, rng.child('sweep', r), lambdas[-1])
                 for r in range(replicas)]
        for r, result in enumerate(run_replicas(_survival_replica, tasks, jobs, logger=logger)):
            for c, (alive, xi) in enumerate(result):
                indicators[c, r] = alive
                totals[c, r] = xi
    else:
        for c, params in enumerate(grid):
            tasks = [_SurvivalTask(kind, (params,), initial, delta, rng.child('sweep', c, r), None)
                     for r in range(replicas)]
            for r, result in enumerate(run_replicas(_survival_replica, tasks, jobs, logger=logger)):
                indicators[c, r], totals[c, r] = result[0]

    label = proxy_label(horizon, delta, domain)
    size = str(domain.linear_size)
    rows = []
    for c, params in enumerate(grid):
        est = _summarize(indicators[c], totals[c], label)
        rows.append(SweepRow(params.lam, params.mu, d, size, horizon, delta, replicas,
                             est.frequency, est.ci_lo, est.ci_hi, est.mean_xi, est.se_xi))
    logger.info(f"Sweep finished, resident memory {memory_usage_mb():.1f} MB")
    return SweepTable(rows, lambdas, mus, indicators.reshape(len(lambdas), len(mus), replicas), label)


# --- critical values ---------------------------------------------------------

@dataclass
class CriticalEstimate:
    direction: str
    fixed: float
    estimate: Optional[float]
    tolerance: float
    lo: float
    hi: float
    transition_found: bool
    probes: List[Tuple[float, float]] = field(default_factory=list)
    label: str = ''


def bisect_critical(direction: str, fixed: float, bracket: Tuple[float, float], tolerance: float,
                    replicas: int, rng: RngStream, domain: DomainSpec, horizon: float,
                    delta: float = 0.0, level: float = SURVIVAL_LEVEL,
                    kind: ProcessKind = ProcessKind.BOUNDED, jobs: int = 1,
                    logger: logging.Logger = logger) -> CriticalEstimate:
    """Bisection on survival frequency against level, with shared replica streams across probes"""
    if direction not in ('lambda', 'mu'):
        raise ParameterError(f"direction must be 'lambda' or 'mu', got {direction!r}")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 <= lo < hi:
        raise BracketError(f"bracket must satisfy 0 <= lo < hi, got ({lo}, {hi})")
    if tolerance <= 0:
        raise ParameterError(f"tolerance must be positive, got {tolerance}")
    d = domain.dimension
    # one timeline rate for every probe keeps the decision monotone
    crn_rate = hi if direction == 'lambda' else fixed
    stream = rng.child('critical')
    probes: List[Tuple[float, float]] = []

    def frequency(value: float) -> float:
        lam, mu = (value, fixed) if direction == 'lambda' else (fixed, value)
        est = estimate_survival(Params(d, lam, mu, domain, horizon), delta, replicas, stream,
                                kind=kind, crn_rate=crn_rate, jobs=jobs, logger=logger)
        probes.append((value, est.frequency))
        logger.info(f"probe {direction}={value:.6g}: survival {est.frequency:.4f}")
        return est.frequency

    label = proxy_label(horizon, delta, domain) + f", level={level:g}"
    if frequency(hi) < level:
        logger.info(f"No transition detected in [{lo}, {hi}]")
        return CriticalEstimate(direction, fixed, None, tolerance, lo, hi, False, probes, label)
    if frequency(lo) >= level:
        raise BracketError(f"survival already reaches {level} at the lower end {lo}")
    while hi - lo > 2 * tolerance:
        mid = (lo + hi) / 2
        if frequency(mid) >= level:
            hi = mid
        else:
            lo = mid
    estimate = (lo + hi) / 2
    logger.info(f"Critical {direction} estimate {estimate:.6g} +- {tolerance:g} ({label})")
    return CriticalEstimate(direction, fixed, estimate, tolerance, lo, hi, True, probes, label)


# --- star-graph invasion -----------------------------------------------------

@dataclass
class InvasionResult:
    frequency: float
    se: float
    target: float
    lam: float
    horizon: float
    interactions: int
    replicas: int
    label: str


@dataclass(frozen=True)
class _InvasionTask:
    params: Params
    stream: RngStream
    crn_rate: Optional[float]


def _invasion_replica(task: _InvasionTask) -> bool:
    params = task.params
    center = params.domain.origin
    initial = LatticeState(ProcessKind.STAR_RESTRICTED, {center: 0.5}, center=center)
    timeline = None
    if task.crn_rate is not None:
        timeline = build_star_timeline(params.domain, center, task.crn_rate, params.horizon, task.stream)
    traj = evolve(ProcessKind.STAR_RESTRICTED, initial, params, task.stream, (params.horizon,),
                  timeline=timeline)
    final = traj.samples[-1].values
    return all(final.get(y, 0.0) >= 0.5 for y in params.domain.neighbors(center))


def check_invasion(epsilon: float, mu: float, d: int, replicas: int, rng: RngStream,
                   lam: Optional[float] = None, crn_rate: Optional[float] = None, jobs: int = 1,
                   logger: logging.Logger = logger) -> InvasionResult:
    """Frequency with which a site holding 1/2 lifts every neighbor to 1/2 on its star"""
    horizon = invade_time(epsilon, d)
    n = min_interactions(mu)
    if lam is None:
        lam = invasion_lambda(epsilon, mu, d)
    if crn_rate is not None and crn_rate < lam:
        raise ParameterError(f"common timeline rate {crn_rate} is below lambda={lam}")
    domain = DomainSpec.lazy(d)
    params = Params(d, lam, mu, domain, horizon)
    params.validate(ProcessKind.STAR_RESTRICTED)
    logger.info(f"check_invasion epsilon={epsilon} mu={mu} d={d}: T={horizon:.6g}, n={n}, lambda={lam:.6g}")
    tasks = [_InvasionTask(params, rng.child('invade', r), crn_rate) for r in range(replicas)]
    hits = np.array(run_replicas(_invasion_replica, tasks, jobs, logger=logger), dtype=bool)
    freq = float(hits.mean())
    se = math.sqrt(freq * (1 - freq) / replicas)
    return InvasionResult(freq, se, 1 - epsilon, lam, horizon, n, replicas,
                          f"star graph around the origin, T={horizon:.6g}")


# --- oriented site percolation ---------------------------------------------

@dataclass
class PercolationField:
    wet: Set[Tuple[Site, int]]
    levels: int
    p: float
    counts: List[int]
    reachable: List[int]

    def wet_fraction(self, level: int) -> float:
        """Wet share of the level-n sites reachable from the initial set"""
        if not 0 <= level <= self.levels or self.reachable[level] == 0:
            return 0.0
        return self.counts[level] / self.reachable[level]


def oriented_percolation(p: float, depth: int, initial_wet: Iterable[Site], rng: RngStream,
                         d: int = 1) -> PercolationField:
    """Level-by-level wet set; a site is open when its keyed uniform falls below p"""
    if not 0 <= p <= 1:
        raise DomainError(f"open probability must lie in [0, 1], got {p}")
    if depth < 0:
        raise DomainError(f"depth must be >= 0, got {depth}")
    level_sites = set()
    for z in initial_wet:
        z = tuple(z)
        if len(z) != d or sum(z) % 2:
            raise DomainError(f"initial site {z} is not on the even sublattice of dimension {d}")
        level_sites.add(z)
    wet = {(z, 0) for z in level_sites}
    counts = [len(level_sites)]
    reach = set(level_sites)
    reachable = [len(reach)]
    probe = DomainSpec.lazy(d)
    for n in range(1, depth + 1):
        candidates = {y for z in level_sites for y in probe.neighbors(z)}
        # the uniform is keyed by (site, level) alone, so fields at different p are coupled
        level_sites = {y for y in candidates if rng.uniform('perc', y, n) < p}
        wet.update((y, n) for y in level_sites)
        counts.append(len(level_sites))
        reach = {y for z in reach for y in probe.neighbors(z)}
        reachable.append(len(reach))
    return PercolationField(wet, depth, p, counts, reachable)


# --- coupling and equivalence checks -----------------------------------------

@dataclass
class CouplingReport:
    trials: int
    violations: int
    events_checked: int
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class _CoupleTask:
    stream: RngStream
    size: int
    horizon: float
    max_lambda: float
    kinds: Tuple[ProcessKind, ProcessKind]


def _random_ordered_initials(gen: np.random.Generator, domain: DomainSpec,
                             kinds: Tuple[ProcessKind, ProcessKind]):
    upper, lower = {}, {}
    for site in domain.sites():
        if gen.random() < 0.3:
            high = 1.0 if kinds[1] is ProcessKind.CONTACT else float(1.0 - gen.random())
            upper[site] = high
            low = high * float(gen.random())
            if kinds[0] is ProcessKind.CONTACT:
                low = 1.0 if low > 0.5 else 0.0
            lower[site] = low
    if not upper:
        upper[domain.origin] = 1.0
        lower[domain.origin] = 1.0
    return lower, upper


def _couple_trial(task: _CoupleTask) -> Tuple[int, str]:
    gen = task.stream.generator
    lam1, lam2 = sorted(gen.uniform(0, task.max_lambda, 2).tolist())
    mu1, mu2 = sorted(gen.uniform(0, 1, 2).tolist())
    domain = DomainSpec.torus(task.size, 1)
    lower, upper = _random_ordered_initials(gen, domain, task.kinds)
    p1 = Params(1, lam1, mu1, domain, task.horizon)
    p2 = Params(1, lam2, mu2, domain, task.horizon)
    try:
        result = evolve_coupled(p1, p2, LatticeState(task.kinds[0], lower),
                                LatticeState(task.kinds[1], upper), task.stream.child('marks'),
                                (task.horizon,), kinds=task.kinds)
    except CouplingViolation as e:
        return -1, f"lambda=({lam1:.4f}, {lam2:.4f}) mu=({mu1:.4f}, {mu2:.4f}): {e}"
    return result.events_checked, ''


def couple_check(trials: int, rng: RngStream, size: int = 21, horizon: float = 10.0,
                 max_lambda: float = 4.0,
                 kinds: Tuple[ProcessKind, ProcessKind] = (ProcessKind.BOUNDED, ProcessKind.BOUNDED),
                 jobs: int = 1, logger: logging.Logger = logger) -> CouplingReport:
    """Random coupled trials; counts the ones whose pointwise ordering broke"""
    tasks = [_CoupleTask(rng.child('couple', k), size, horizon, max_lambda, kinds) for k in range(trials)]
    report = CouplingReport(trials, 0, 0)
    for events, failure in run_replicas(_couple_trial, tasks, jobs, logger=logger):
        if events < 0:
            report.violations += 1
            report.failures.append(failure)
            logger.error(f"Coupling violation: {failure}")
        else:
            report.events_checked += events
    logger.info(f"couple_check: {report.violations} violations in {trials} trials, "
                f"{report.events_checked} events checked")
    return report


@dataclass
class EquivalenceReport:
    runs: int
    mismatched_runs: int
    events_compared: int

    @property
    def ok(self) -> bool:
        return self.mismatched_runs == 0


@dataclass(frozen=True)
class _EquivalenceTask:
    stream: RngStream
    lam: float
    mu: Optional[float]
    size: int
    horizon: float


def _equivalence_run(task: _EquivalenceTask) -> Tuple[int, int]:
    gen = task.stream.generator
    mu = task.mu if task.mu is not None else float(1.0 - gen.random())
    domain = DomainSpec.torus(task.size, 1)
    initial = {s: 1.0 for s in domain.sites() if gen.random() < 0.3} or {domain.origin: 1.0}
    # no knowledge floor: positivity must match the contact process exactly
    bounded = Params(1, task.lam, mu, domain, task.horizon, floor=0.0)
    contact = Params(1, task.lam, 1.0, domain, task.horizon, floor=0.0)
    mismatches = [0]
    compared = [0]
    exact = mu == 1.0

    def compare(event, states):
        knowledge, infected = states
        compared[0] += 1
        if support(knowledge) != support(infected) or (exact and knowledge.values != infected.values):
            mismatches[0] += 1

    evolve_coupled(bounded, contact, LatticeState(ProcessKind.BOUNDED, initial),
                   LatticeState(ProcessKind.CONTACT, initial), task.stream.child('marks'),
                   (task.horizon,), kinds=(ProcessKind.BOUNDED, ProcessKind.CONTACT), observer=compare)
    return mismatches[0], compared[0]


def contact_equivalence(runs: int, rng: RngStream, mu: Optional[float] = 1.0, lam: float = 2.0,
                        size: int = 21, horizon: float = 10.0, jobs: int = 1,
                        logger: logging.Logger = logger) -> EquivalenceReport:
    """Compare the bounded process with the contact process event by event.

    ``mu=1`` demands identical states; ``mu=None`` draws mu in (0, 1] per run
    and compares supports only.
    """
    tasks = [_EquivalenceTask(rng.child('equivalence', k), lam, mu, size, horizon) for k in range(runs)]
    report = EquivalenceReport(runs, 0, 0)
    for mismatches, compared in run_replicas(_equivalence_run, tasks, jobs, logger=logger):
        report.events_compared += compared
        if mismatches:
            report.mismatched_runs += 1
    logger.info(f"contact_equivalence: {report.mismatched_runs} of {runs} runs mismatched")
    return report


# --- double interactions -------------------------------------------------------

@dataclass
class HarvestResult:
    overlaps: int
    with_double: int
    timelines: int
    expected: float
    label: str

    @property
    def frequency(self) -> float:
        return self.with_double / self.overlaps if self.overlaps else math.nan

    @property
    def se(self) -> float:
        p = self.frequency
        return math.sqrt(p * (1 - p) / self.overlaps) if self.overlaps else math.nan


def harvest_double_interactions(d: int, lam: float, target_time: float, overlaps_wanted: int,
                                rng: RngStream, size: int = 21, paths_per_timeline: int = 20,
                                cap: int = 2000, logger: logging.Logger = logger) -> HarvestResult:
    """Collect forward path overlaps from random timelines and count those holding a double interaction

    An overlap whose next step returns across the same edge ends at that
    very mark, so it is left out of the count.
    """
    if lam <= 0:
        raise ParameterError(f"paths need interactions: lambda must be positive, got {lam}")
    domain = DomainSpec.torus(size, d)
    overlaps = with_double = timelines = 0
    k = 0
    while overlaps < overlaps_wanted:
        stream = rng.child('harvest', k)
        k += 1
        timeline = build_timeline(domain, lam, target_time, stream)
        index = MarkIndex(timeline)
        found = extract_paths(index, (domain.origin, 0.0), target_time, cap=cap)
        paths = [p for p in found if p.length > 0]
        if not paths:
            continue
        timelines += 1
        if len(paths) > paths_per_timeline:
            picks = stream.generator.choice(len(paths), size=paths_per_timeline, replace=False)
            paths = [paths[i] for i in sorted(picks.tolist())]
        for path in paths:
            windows = forward_overlaps(path, overlap_windows(path, index))
            doubled = {di.i for di in double_interactions(path, index, windows)}
            overlaps += len(windows)
            with_double += len(doubled)
    result = HarvestResult(overlaps, with_double, timelines, double_interaction_probability(d, lam),
                           f"paths from the origin to t={target_time:g} on {domain.describe()}")
    logger.info(f"Harvested {overlaps} overlaps from {timelines} timelines, "
                f"double-interaction frequency {result.frequency:.4f} (bound {result.expected:.4f})")
    return result
