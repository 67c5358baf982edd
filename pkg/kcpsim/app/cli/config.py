import argparse
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from kcpsim.config.settings import DEFAULTS
from kcpsim.app.core.dynamics import Params, ProcessKind
from kcpsim.app.core.event_engine import DomainMode, DomainSpec
from kcpsim.app.core.exceptions import DomainError, UsageError
from kcpsim.app.utils.helpers import format_header, read_properties

logger = logging.getLogger('cli')

COMMANDS = ('simulate', 'decay', 'sweep', 'critical', 'couple-check', 'invade', 'paths', 'perc', 'snapshot')
FINITE_ONLY = ('sweep', 'critical', 'couple-check', 'paths', 'snapshot')


def _float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise UsageError(key, f"expected a number, got {raw!r}")


def _int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise UsageError(key, f"expected an integer, got {raw!r}")


def _floats(key: str, raw: str) -> List[float]:
    items = [item.strip() for item in raw.split(',') if item.strip()]
    return [_float(key, item) for item in items]


def _pair(key: str, raw: str) -> Tuple[float, float]:
    values = _floats(key, raw)
    if len(values) != 2:
        raise UsageError(key, f"expected two comma-separated numbers, got {raw!r}")
    return values[0], values[1]


def _choice(options: Sequence[str]) -> Callable[[str, str], str]:
    def convert(key: str, raw: str) -> str:
        if raw not in options:
            raise UsageError(key, f"expected one of {', '.join(options)}, got {raw!r}")
        return raw
    return convert


def _text(key: str, raw: str) -> str:
    return raw


CONVERTERS: Dict[str, Callable[[str, str], Any]] = {
    'command': _choice(COMMANDS),
    'dim': _int,
    'lam': _float,
    'mu': _float,
    'lambda_grid': _floats,
    'mu_grid': _floats,
    'domain': _choice(('torus', 'box', 'lazy')),
    'size': _int,
    'horizon': _float,
    'replicas': _int,
    'seed': _int,
    'delta': _float,
    'output': _text,
    'kind': _choice(tuple(k.value for k in ProcessKind)),
    'sample_times': _floats,
    'snapshot_time': _float,
    'jobs': _int,
    'format': _choice(('pgm', 'ascii')),
    'direction': _choice(('lambda', 'mu')),
    'bracket': _pair,
    'tolerance': _float,
    'level': _float,
    'epsilon': _float,
    'p': _float,
    'depth': _int,
    'trials': _int,
    'cap': _int,
}


@dataclass
class RunConfig:
    command: str
    dim: int
    lam: float
    mu: float
    lambda_grid: Optional[List[float]]
    mu_grid: Optional[List[float]]
    domain: str
    size: int
    horizon: float
    replicas: int
    seed: int
    delta: float
    output: Optional[str]
    kind: str
    sample_times: Optional[List[float]]
    snapshot_time: Optional[float]
    jobs: int
    format: str
    direction: str
    bracket: Optional[Tuple[float, float]]
    tolerance: float
    level: float
    epsilon: float
    p: float
    depth: int
    trials: int
    cap: int
    explicit: FrozenSet[str] = field(default_factory=frozenset, compare=False)
    log_level: Optional[str] = field(default=None, compare=False)

    def domain_spec(self) -> DomainSpec:
        if self.domain == 'lazy':
            return DomainSpec.lazy(self.dim)
        if self.domain == 'box':
            return DomainSpec.box(self.size, self.dim)
        return DomainSpec.torus(self.size, self.dim)

    def params(self, lam: Optional[float] = None, mu: Optional[float] = None,
               domain: Optional[DomainSpec] = None) -> Params:
        return Params(self.dim, self.lam if lam is None else lam, self.mu if mu is None else mu,
                      domain or self.domain_spec(), self.horizon)

    @property
    def process_kind(self) -> ProcessKind:
        return ProcessKind(self.kind)

    def settings(self) -> Dict[str, Any]:
        """Resolved values in declaration order, as echoed into output headers"""
        skip = {'explicit', 'log_level'}
        result = {}
        for f in fields(self):
            if f.name in skip:
                continue
            value = getattr(self, f.name)
            if isinstance(value, (list, tuple)):
                value = ','.join(repr(v) for v in value)
            result[f.name] = value
        return result

    def header(self) -> str:
        return format_header({'kcpsim': self.command, **self.settings()})


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError('argv', message)


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser; values stay raw strings until converted"""
    parser = _Parser(prog='kcpsim', description='Knowledge contact process simulator')
    parser.add_argument('command', nargs='?', choices=COMMANDS)
    parser.add_argument('--config', help='key = value file; flags take precedence')
    parser.add_argument('--dim')
    parser.add_argument('--lambda', dest='lam')
    parser.add_argument('--mu')
    parser.add_argument('--lambda-grid', dest='lambda_grid')
    parser.add_argument('--mu-grid', dest='mu_grid')
    parser.add_argument('--domain')
    parser.add_argument('--size')
    parser.add_argument('--horizon')
    parser.add_argument('--replicas')
    parser.add_argument('--seed')
    parser.add_argument('--delta')
    parser.add_argument('--output')
    parser.add_argument('--kind')
    parser.add_argument('--sample-times', dest='sample_times')
    parser.add_argument('--snapshot-time', dest='snapshot_time')
    parser.add_argument('--jobs', help='worker processes; 0 means one per physical core')
    parser.add_argument('--format')
    parser.add_argument('--direction')
    parser.add_argument('--bracket')
    parser.add_argument('--tolerance')
    parser.add_argument('--level')
    parser.add_argument('--epsilon')
    parser.add_argument('--p')
    parser.add_argument('--depth')
    parser.add_argument('--trials')
    parser.add_argument('--cap')
    parser.add_argument('--log-level', dest='log_level')
    return parser


def _normalize_key(key: str) -> str:
    key = key.strip().lower().replace('-', '_')
    return 'lam' if key == 'lambda' else key


def _read_config_file(path: Path) -> Dict[str, str]:
    try:
        raw = read_properties(Path(path))
    except OSError as e:
        raise UsageError('config', f"cannot read {path}: {e}")
    except ValueError as e:
        raise UsageError('config', str(e))
    result = {}
    for key, value in raw.items():
        name = _normalize_key(key)
        if name not in CONVERTERS:
            raise UsageError(key, "unknown configuration key")
        result[name] = value
    return result


def _validate(values: Dict[str, Any]):
    def require(key: str, ok: bool, message: str):
        if not ok:
            raise UsageError(key, message)

    if values['command'] is None:
        raise UsageError('command', f"missing subcommand, expected one of {', '.join(COMMANDS)}")
    command = values['command']
    require('dim', values['dim'] >= 1, "must be >= 1")
    require('lam', values['lam'] >= 0, "must be >= 0")
    # decay always runs the unbounded process
    kind = ProcessKind.UNBOUNDED.value if command == 'decay' else values['kind']
    saturating = ProcessKind(kind).saturates
    mus = [values['mu']] + list(values['mu_grid'] or [])
    for mu in mus:
        require('mu', mu >= 0, "must be >= 0")
        require('mu', mu <= 1 or not saturating, f"must lie in [0, 1] for {kind} kind, got {mu}")
    for key in ('lambda_grid', 'mu_grid', 'sample_times'):
        if values[key] is not None:
            require(key, len(values[key]) > 0, "must not be empty")
    for lam in values['lambda_grid'] or []:
        require('lambda_grid', lam >= 0, "must be >= 0")
    try:
        if values['domain'] != 'lazy':
            DomainSpec(DomainMode(values['domain']), values['dim'], values['size'])
    except DomainError as e:
        raise UsageError('size', str(e))
    require('domain', values['domain'] != 'lazy' or command not in FINITE_ONLY,
            f"{command} needs a finite domain")
    require('horizon', values['horizon'] > 0, "must be positive")
    horizon = values['horizon']
    for t in values['sample_times'] or []:
        require('sample_times', 0 <= t <= horizon, f"{t} lies outside [0, {horizon}]")
    if values['snapshot_time'] is not None:
        require('snapshot_time', 0 <= values['snapshot_time'] <= horizon, f"must lie in [0, {horizon}]")
    require('replicas', values['replicas'] >= 1, "must be >= 1")
    require('delta', values['delta'] >= 0, "must be >= 0")
    require('jobs', values['jobs'] >= 0, "must be >= 0")
    require('tolerance', values['tolerance'] > 0, "must be positive")
    require('level', 0 < values['level'] <= 1, "must lie in (0, 1]")
    require('epsilon', 0 < values['epsilon'] < 2, "must lie in (0, 2)")
    require('p', 0 <= values['p'] <= 1, "must lie in [0, 1]")
    require('depth', values['depth'] >= 0, "must be >= 0")
    require('trials', values['trials'] >= 1, "must be >= 1")
    require('cap', values['cap'] >= 1, "must be >= 1")
    if command == 'critical':
        require('bracket', values['bracket'] is not None, "required for critical")
        lo, hi = values['bracket']
        require('bracket', 0 <= lo < hi, f"must satisfy 0 <= lo < hi, got {lo}, {hi}")
        if values['direction'] == 'mu':
            require('bracket', hi <= 1 or not saturating, "mu bracket must lie in [0, 1]")
    if command == 'snapshot' and values['format'] == 'pgm':
        require('format', values['dim'] == 2, "pgm snapshots need dim = 2")


def parse_config(argv: Optional[Sequence[str]] = None, config_file: Optional[Path] = None) -> RunConfig:
    """Resolve defaults < config file < flags into a validated RunConfig"""
    args = vars(build_parser().parse_args(list(argv) if argv is not None else None))
    values: Dict[str, Any] = {'command': None, **DEFAULTS}
    explicit = set()

    config_path = args.pop('config') or config_file
    if config_path is not None:
        for key, raw in _read_config_file(config_path).items():
            values[key] = CONVERTERS[key](key, raw)
            explicit.add(key)
    log_level = args.pop('log_level')
    for key, raw in args.items():
        if raw is None:
            continue
        values[key] = CONVERTERS[key](key, raw)
        explicit.add(key)

    _validate(values)
    if values['seed'] is None:
        values['seed'] = int(np.random.SeedSequence().entropy) & ((1 << 63) - 1)
        logger.info(f"No seed given, drew seed {values['seed']} from system entropy")
    return RunConfig(**values, explicit=frozenset(explicit), log_level=log_level)
