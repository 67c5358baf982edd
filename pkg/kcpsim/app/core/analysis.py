"""Closed-form bounds and space-time path machinery.

The formulas here are pure functions. Path extraction works on a frozen
timeline through a MarkIndex that keeps, for every site, its sorted death
times and its sorted interaction marks.
"""
import bisect
import csv
import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path as FilePath
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from scipy.optimize import brentq

from kcpsim.config.settings import (
    CLAMP_TOLERANCE,
    DEFAULT_PATH_CAP,
    LAMBDA_SEARCH_CAP,
    PATH_EXPANSION_FACTOR,
)
from .event_engine import Edge, EventKind, Site, Timeline, canonical_edge
from .exceptions import DomainError, HorizonError, SearchCapError

logger = logging.getLogger('analysis')


# --- two-site interactions -------------------------------------------------

def pair_recursion(x0: float, y0: float, mu: float, k: int) -> Tuple[float, float]:
    """k repeated interactions between two sites starting from (x0, y0)"""
    if not (0 <= x0 <= 1 and 0 <= y0 <= 1):
        raise DomainError(f"pair values must lie in [0, 1], got ({x0}, {y0})")
    if k < 0:
        raise DomainError(f"step count must be >= 0, got {k}")
    x, y = x0, y0
    for _ in range(k):
        x, y = x + mu * y * (1 - x), y + mu * x * (1 - y)
    return x, y


def lemma1_lower_bound(mu: float, n: int) -> float:
    """1 - (1 - mu/2)^n, the knowledge guaranteed after n interactions with a site holding 1/2"""
    if n < 0:
        raise DomainError(f"interaction count must be >= 0, got {n}")
    if mu <= 0 or n == 0:
        return 0.0
    return -math.expm1(n * math.log1p(-mu / 2))


def min_interactions(mu: float) -> int:
    """Smallest n with (1 - mu/2)^n <= 1/2"""
    if not 0 < mu <= 1:
        raise DomainError(f"no finite interaction count for mu={mu}")
    base = 1 - mu / 2
    n = max(1, math.ceil(math.log(0.5) / math.log(base)))
    # settle rounding of the logarithm ratio
    while base ** n > 0.5:
        n += 1
    while n > 1 and base ** (n - 1) <= 0.5:
        n -= 1
    return n


def invade_time(epsilon: float, d: int) -> float:
    """Largest T with exp(-(2d+1)T) >= 1 - epsilon/2"""
    if not 0 < epsilon < 2:
        raise DomainError(f"epsilon must lie in (0, 2), got {epsilon}")
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    return -math.log1p(-epsilon / 2) / (2 * d + 1)


# --- Poisson tails -------------------------------------------------------------

def _check_tail_args(m: float, n: float, side: str):
    if m <= 0:
        raise DomainError(f"Poisson mean must be positive, got {m}")
    if n < 0:
        raise DomainError(f"tail threshold must be >= 0, got {n}")
    if side not in ('lower', 'upper'):
        raise DomainError(f"side must be 'lower' or 'upper', got {side!r}")


def poisson_tail_bound(m: float, n: float, side: str) -> float:
    """Chernoff bound (e m / n)^n e^(-m) on P(X <= n) (lower) or P(X >= n) (upper)"""
    _check_tail_args(m, n, side)
    if n == m:
        return 1.0
    if side == 'lower' and n > m:
        raise DomainError(f"lower tail needs n < m, got n={n}, m={m}")
    if side == 'upper' and n < m:
        raise DomainError(f"upper tail needs n > m, got n={n}, m={m}")
    if n == 0:
        return math.exp(-m)
    return math.exp(n * (1 + math.log(m) - math.log(n)) - m)


def poisson_tail_exact(m: float, n: int, side: str) -> float:
    """Exact Poisson tail by direct summation of log-space terms"""
    _check_tail_args(m, n, side)
    n = int(n)

    def term(k: int) -> float:
        return math.exp(k * math.log(m) - m - math.lgamma(k + 1))

    if side == 'lower':
        return min(1.0, math.fsum(term(k) for k in range(n + 1)))
    terms = []
    k = n
    while True:
        t = term(k)
        terms.append(t)
        if k > m and (t == 0 or t < 1e-20 * math.fsum(terms)):
            break
        k += 1
    return min(1.0, math.fsum(terms))


def _invasion_failure_target(epsilon: float, d: int) -> float:
    # per-edge failure b with (1 - b)^(2d) = 1 - epsilon/2
    return -math.expm1(math.log1p(-epsilon / 2) / (2 * d))


def invasion_lambda(epsilon: float, mu: float, d: int, cap: float = LAMBDA_SEARCH_CAP) -> float:
    """Interaction rate making every star edge fire at least n(mu) times with probability 1 - epsilon/2"""
    horizon = invade_time(epsilon, d)
    n = min_interactions(mu)
    log_target = math.log(_invasion_failure_target(epsilon, d))

    def excess(lam: float) -> float:
        mean = lam * horizon
        return n * (1 + math.log(mean) - math.log(n)) - mean - log_target

    lo = n / horizon
    hi = 2 * lo
    while excess(hi) > 0:
        hi *= 2
        if hi > cap:
            raise SearchCapError(f"no interaction rate below {cap} satisfies the invasion bound")
    lam = brentq(excess, lo, hi, xtol=1e-12, rtol=1e-12)
    while excess(lam) > 0:
        lam = math.nextafter(lam, math.inf)
    logger.debug(f"invasion_lambda(epsilon={epsilon}, mu={mu}, d={d}) = {lam}")
    return lam


def drift_coefficient(d: int, lam: float, mu: float) -> float:
    """Growth rate 2d lambda mu - 1 of the mean unbounded total knowledge"""
    return 2 * d * lam * mu - 1


def mu_threshold(L: int) -> float:
    """Smallest mu with mu^(L^3) >= 5/6 and (2mu/5)(2 - 2mu/5) >= 3/5"""
    if L < 1 or int(L) != L:
        raise DomainError(f"block scale must be a positive integer, got {L}")
    return max((5 / 6) ** (1 / L ** 3), 2.5 * (1 - math.sqrt(0.4)))


@dataclass(frozen=True)
class PathLengthBounds:
    paths: int
    short_tail: float
    long_tail: float
    short_union: float
    long_union: float


def path_length_bounds(L: int, d: int, lam: float) -> PathLengthBounds:
    """Tail bounds on the number of path interactions over a time L^2"""
    if L < 1 or d < 1 or lam < 0:
        raise DomainError(f"need L >= 1, d >= 1, lambda >= 0, got {L}, {d}, {lam}")
    horizon = L ** 2
    paths = 2 * d * (2 * L + 1) ** d
    short = poisson_tail_bound(horizon, L, 'lower') if L < horizon else 1.0
    mean = 2 * d * lam * horizon
    long_ = poisson_tail_bound(mean, L ** 3, 'upper') if mean > 0 and L ** 3 > mean else 1.0
    if mean == 0:
        long_ = 0.0
    return PathLengthBounds(paths, short, long_, min(1.0, paths * short), min(1.0, paths * long_))


def double_interaction_probability(d: int, lam: float) -> float:
    """Chance that an overlap contains a second mark on its edge"""
    return lam / (2 * d * lam + 1)


def double_interaction_failure_bound(d: int, lam: float, L: int) -> float:
    """Union bound on some path of length L missing every double interaction"""
    p = double_interaction_probability(d, lam)
    return min(1.0, 2 * d * (2 * L + 1) ** d * (1 - p) ** L)


# --- space-time paths ---------------------------------------------------------

@dataclass(frozen=True)
class Path:
    sites: Tuple[Site, ...]
    times: Tuple[float, ...]

    @property
    def length(self) -> int:
        return len(self.sites) - 1

    @property
    def source(self) -> Tuple[Site, float]:
        return self.sites[0], self.times[0]

    @property
    def endpoint(self) -> Site:
        return self.sites[-1]

    @property
    def target_time(self) -> float:
        return self.times[-1]


@dataclass(frozen=True)
class Overlap:
    i: int
    sigma: float
    tau: float

    @property
    def width(self) -> float:
        return self.tau - self.sigma


@dataclass(frozen=True)
class DoubleInteraction:
    i: int
    time: float


@dataclass
class PathSet:
    paths: List[Path]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self) -> Iterator[Path]:
        return iter(self.paths)


class MarkIndex:
    """Per-site death times and per-site interaction marks of a timeline"""

    def __init__(self, timeline: Timeline):
        self.horizon = timeline.horizon
        self.deaths: Dict[Site, List[float]] = defaultdict(list)
        self.marks: Dict[Site, List[Tuple[float, Site]]] = defaultdict(list)
        self.edge_marks: Dict[Edge, List[float]] = defaultdict(list)
        for e in timeline.events:
            if e.kind is EventKind.DEATH:
                self.deaths[e.a].append(e.time)
            elif e.kind is EventKind.INTERACTION:
                self.marks[e.a].append((e.time, e.b))
                self.marks[e.b].append((e.time, e.a))
                self.edge_marks[canonical_edge(e.a, e.b)].append(e.time)

    def first_death_after(self, site: Site, t: float) -> float:
        """First death at site strictly after t, or inf"""
        deaths = self.deaths.get(site, ())
        k = bisect.bisect_right(deaths, t)
        return deaths[k] if k < len(deaths) else math.inf

    def last_death_before(self, site: Site, t: float) -> float:
        """Last death at site strictly before t, or -inf"""
        deaths = self.deaths.get(site, ())
        k = bisect.bisect_left(deaths, t)
        return deaths[k - 1] if k > 0 else -math.inf

    def marks_between(self, site: Site, start: float, stop: float) -> List[Tuple[float, Site]]:
        """Marks at site with start < time <= stop"""
        marks = self.marks.get(site, ())
        k = bisect.bisect_right(marks, (start, (math.inf,)))
        result = []
        while k < len(marks) and marks[k][0] <= stop:
            result.append(marks[k])
            k += 1
        return result


TimelineLike = Union[Timeline, MarkIndex]


def _index(timeline: TimelineLike) -> MarkIndex:
    return timeline if isinstance(timeline, MarkIndex) else MarkIndex(timeline)


def extract_paths(timeline: TimelineLike, source: Tuple[Site, float], target_time: float,
                  cap: int = DEFAULT_PATH_CAP) -> PathSet:
    """Breadth-first enumeration of death-free paths from source up to target_time"""
    index = _index(timeline)
    start_site, start_time = tuple(source[0]), float(source[1])
    if not 0 <= start_time <= target_time <= index.horizon:
        raise HorizonError(f"need 0 <= {start_time} <= {target_time} <= {index.horizon}")

    paths: List[Path] = []
    queue = deque([((start_site,), (start_time,))])
    expansions = 0
    budget = cap * PATH_EXPANSION_FACTOR
    truncated = False
    while queue:
        sites, times = queue.popleft()
        here, now = sites[-1], times[-1]
        alive_until = index.first_death_after(here, now)
        if alive_until > target_time:
            if len(paths) >= cap:
                truncated = True
                break
            paths.append(Path(sites, times + (target_time,)))
        for t, other in index.marks_between(here, now, min(alive_until, target_time)):
            if t >= alive_until:
                break
            queue.append((sites + (other,), times + (t,)))
            expansions += 1
        if expansions > budget:
            truncated = True
            break
    if truncated:
        logger.debug(f"path enumeration from {start_site} truncated at {len(paths)} paths")
    return PathSet(paths, truncated)


def overlap_windows(path: Path, timeline: TimelineLike) -> List[Overlap]:
    """(sigma_i, tau_i) around each interaction of the path"""
    index = _index(timeline)
    result = []
    for i in range(1, path.length + 1):
        prev_site, site = path.sites[i - 1], path.sites[i]
        s_prev, s_i, s_next = path.times[i - 1], path.times[i], path.times[i + 1]
        sigma = max(s_prev, index.last_death_before(site, s_i))
        tau = min(s_next, index.first_death_after(prev_site, s_i))
        result.append(Overlap(i, sigma, tau))
    return result


def double_interactions(path: Path, timeline: TimelineLike,
                        overlaps: Optional[Sequence[Overlap]] = None) -> List[DoubleInteraction]:
    """Repeat marks on each path edge inside its overlap window, sorted by time"""
    index = _index(timeline)
    if overlaps is None:
        overlaps = overlap_windows(path, index)
    found = []
    for overlap in overlaps:
        i = overlap.i
        times = index.edge_marks.get(canonical_edge(path.sites[i - 1], path.sites[i]), [])
        k = bisect.bisect_right(times, overlap.sigma)
        while k < len(times) and times[k] < overlap.tau:
            if times[k] != path.times[i]:
                found.append(DoubleInteraction(i, times[k]))
            k += 1
    found.sort(key=lambda di: (di.time, di.i))
    return found


def forward_overlaps(path: Path, overlaps: Sequence[Overlap]) -> List[Overlap]:
    """Drop the overlaps whose next step crosses the same edge straight back"""
    return [o for o in overlaps
            if o.i == path.length or path.sites[o.i + 1] != path.sites[o.i - 1]]


def path_overlap(overlaps: Sequence[Overlap]) -> float:
    """Total width of the overlap windows of a path"""
    return math.fsum(o.width for o in overlaps)


def replay_path_knowledge(path: Union[Path, int], mu: float, initial: float,
                          first_double: Optional[Union[DoubleInteraction, Tuple[int, float], int]] = None
                          ) -> List[float]:
    """Worst-case knowledge carried along a path.

    Each receiver is ignorant before its first contact, so a single
    interaction passes mu times the sender's value; at the double interaction
    the receiver meets the sender again.
    """
    if not 0 <= initial <= 1:
        raise DomainError(f"initial knowledge must lie in [0, 1], got {initial}")
    length = path.length if isinstance(path, Path) else int(path)
    if isinstance(first_double, DoubleInteraction):
        double_at = first_double.i
    elif isinstance(first_double, tuple):
        double_at = first_double[0]
    else:
        double_at = first_double
    values = [initial]
    for i in range(1, length + 1):
        sender = values[-1]
        value = mu * sender
        if i == double_at:
            value = value + mu * sender * (1 - value)
        values.append(value)
    return values


def knowledge_chain_holds(values: Sequence[float], i: int, tol: float = CLAMP_TOLERANCE) -> bool:
    """Above 2/5 before the double interaction, 3/5 at it, 1/2 from it on"""
    if not 1 <= i < len(values):
        raise DomainError(f"double interaction index {i} outside 1..{len(values) - 1}")
    before = all(v >= 0.4 - tol for v in values[:i])
    jump = values[i] >= 0.6 - tol
    after = all(v >= 0.5 - tol for v in values[i:])
    return before and jump and after


def _format_site(site: Site) -> str:
    return ' '.join(str(c) for c in site)


def write_paths_csv(paths: Sequence[Path], path: FilePath, timeline: TimelineLike, header: str = ''):
    """One row per path interaction: windows and the double-interaction times inside them"""
    index = _index(timeline)
    with open(path, 'w', newline='') as handle:
        handle.write(header)
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['path_id', 'i', 'x_prev', 'x_i', 's_i', 'sigma_i', 'tau_i', 'double_times'])
        for path_id, p in enumerate(paths):
            overlaps = overlap_windows(p, index)
            doubles = double_interactions(p, index, overlaps)
            for o in overlaps:
                times = ';'.join(repr(di.time) for di in doubles if di.i == o.i)
                writer.writerow([path_id, o.i, _format_site(p.sites[o.i - 1]), _format_site(p.sites[o.i]),
                                 repr(p.times[o.i]), repr(o.sigma), repr(o.tau), times])
