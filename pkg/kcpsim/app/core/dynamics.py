"""Process variants driven by a graphical representation.

Bounded (knowledge in [0, 1]), unbounded (no saturation), contact (binary) and
star-restricted processes share one driver. Finite domains replay an eager
timeline; lazy domains pull events from a LazyTimeline that only arms clocks
around sites holding knowledge.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from kcpsim.config.settings import CHECK_INVARIANTS, CLAMP_TOLERANCE, EVENT_BUDGET
from .event_engine import (
    DomainSpec,
    Event,
    EventKind,
    LazyTimeline,
    RngStream,
    Site,
    Timeline,
    augment_for_coupling,
    build_star_timeline,
    build_timeline,
    star_sites,
    thin,
)
from .exceptions import (
    CouplingViolation,
    HorizonError,
    InconsistentStateError,
    OrderingError,
    ParameterError,
    TopologyError,
)

logger = logging.getLogger('dynamics')


class ProcessKind(str, Enum):
    BOUNDED = 'bounded'
    UNBOUNDED = 'unbounded'
    CONTACT = 'contact'
    STAR_RESTRICTED = 'star'

    @property
    def saturates(self) -> bool:
        return self is not ProcessKind.UNBOUNDED


def saturating_update(value: float, transfer: float) -> float:
    """value + transfer * (1 - value), evaluated so that rounding never breaks order.

    Every branch is nondecreasing in both arguments under IEEE rounding, the
    result never drops below either input and never exceeds value + transfer
    (the unbounded update of the same inputs).
    """
    return max(value, transfer, min(1.0 - (1.0 - value) * (1.0 - transfer), value + transfer))


def snap(value: float, floor: float) -> float:
    """Snap values within tolerance of 0 or 1 onto the boundary (monotone map)"""
    if value < floor:
        return 0.0
    if 1.0 - CLAMP_TOLERANCE <= value < 1.0:
        return 1.0
    return value


class LatticeState:
    """Sparse configuration: sites absent from values hold 0"""

    __slots__ = ('kind', 'values', 'center')

    def __init__(self, kind: ProcessKind, values: Optional[Dict[Site, float]] = None,
                 center: Optional[Site] = None):
        self.kind = ProcessKind(kind)
        self.center = center
        self.values: Dict[Site, float] = {}
        if self.kind is ProcessKind.STAR_RESTRICTED and center is None:
            raise InconsistentStateError("star-restricted state needs a center site")
        for site, value in (values or {}).items():
            self._check_value(site, value)
            if value > 0:
                self.values[tuple(site)] = float(value)

    @classmethod
    def point(cls, kind: ProcessKind, site: Site, value: float = 1.0,
              center: Optional[Site] = None) -> 'LatticeState':
        """Configuration holding value at a single site"""
        return cls(kind, {site: value}, center)

    def _check_value(self, site: Site, value: float):
        if value < 0:
            raise InconsistentStateError(f"negative knowledge {value} at {site}")
        if self.kind is ProcessKind.CONTACT and value not in (0, 1):
            raise InconsistentStateError(f"contact state must be binary, got {value} at {site}")
        if self.kind.saturates and value > 1:
            raise InconsistentStateError(f"{self.kind.value} state must lie in [0, 1], got {value} at {site}")

    def get(self, site: Site) -> float:
        return self.values.get(site, 0.0)

    def support(self) -> FrozenSet[Site]:
        return frozenset(self.values)

    def copy(self) -> 'LatticeState':
        clone = LatticeState(self.kind, center=self.center)
        clone.values = dict(self.values)
        return clone

    def snapshot(self) -> Dict[Site, float]:
        return dict(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __bool__(self) -> bool:
        return bool(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticeState):
            return NotImplemented
        return self.kind is other.kind and self.values == other.values

    def __repr__(self) -> str:
        return f"LatticeState({self.kind.value}, {len(self.values)} sites)"

    def _store(self, site: Site, value: float):
        if value > 0:
            self.values[site] = value
        else:
            self.values.pop(site, None)

    def interact(self, x: Site, y: Site, mu: float, floor: float = CLAMP_TOLERANCE):
        """Apply one interaction mark between x and y in place"""
        vx = self.values.get(x, 0.0)
        vy = self.values.get(y, 0.0)
        if vx == 0.0 and vy == 0.0:
            return
        if self.kind is ProcessKind.CONTACT:
            self.values[x] = 1.0
            self.values[y] = 1.0
            return
        cx = mu * vy
        cy = mu * vx
        if self.kind is ProcessKind.UNBOUNDED:
            nx = vx + cx
            ny = vy + cy
        else:
            nx = saturating_update(vx, cx)
            ny = saturating_update(vy, cy)
            if CHECK_INVARIANTS:
                _check_identity(vx, cx, nx, x)
                _check_identity(vy, cy, ny, y)
        self._store(x, snap(nx, floor))
        self._store(y, snap(ny, floor))

    def kill(self, x: Site):
        self.values.pop(x, None)


def _check_identity(before: float, transfer: float, after: float, site: Site):
    if abs((1.0 - after) - (1.0 - before) * (1.0 - transfer)) > CLAMP_TOLERANCE:
        raise InconsistentStateError(
            f"saturation identity broken at {site}: {before} -> {after} (transfer {transfer})")


def _check_pair(x: Site, y: Site, domain: Optional[DomainSpec]):
    if x == y:
        raise TopologyError(f"interaction needs two distinct sites, got {x} twice")
    if domain is not None:
        if not (domain.contains(x) and domain.contains(y)) or not domain.are_neighbors(x, y):
            raise TopologyError(f"{x} and {y} are not neighbors in {domain.describe()}")
    elif len(x) != len(y) or sum(abs(a - b) for a, b in zip(x, y)) != 1:
        raise TopologyError(f"{x} and {y} are not nearest neighbors")


def apply_interaction(state: LatticeState, x: Site, y: Site, mu: float,
                      domain: Optional[DomainSpec] = None,
                      floor: float = CLAMP_TOLERANCE) -> LatticeState:
    """Saturating (or contact) interaction between neighbors x and y"""
    if state.kind is ProcessKind.UNBOUNDED:
        raise InconsistentStateError("use apply_interaction_unbounded for unbounded states")
    _check_pair(x, y, domain)
    result = state.copy()
    result.interact(x, y, mu, floor)
    return result


def apply_interaction_unbounded(state: LatticeState, x: Site, y: Site, mu: float,
                                domain: Optional[DomainSpec] = None,
                                floor: float = CLAMP_TOLERANCE) -> LatticeState:
    """Unbounded interaction between neighbors x and y"""
    if state.kind is not ProcessKind.UNBOUNDED:
        raise InconsistentStateError(f"expected an unbounded state, got {state.kind.value}")
    _check_pair(x, y, domain)
    result = state.copy()
    result.interact(x, y, mu, floor)
    return result


def apply_death(state: LatticeState, x: Site) -> LatticeState:
    """Reset site x to zero knowledge"""
    result = state.copy()
    result.kill(x)
    return result


@dataclass(frozen=True)
class Params:
    d: int
    lam: float
    mu: float
    domain: DomainSpec
    horizon: float
    floor: float = CLAMP_TOLERANCE

    def validate(self, kind: ProcessKind):
        """Check the parameters against the process kind"""
        if self.d < 1:
            raise ParameterError(f"dimension must be >= 1, got {self.d}")
        if self.d != self.domain.dimension:
            raise ParameterError(f"dimension {self.d} does not match domain {self.domain.describe()}")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if self.mu < 0:
            raise ParameterError(f"mu must be >= 0, got {self.mu}")
        if self.mu > 1:
            if kind.saturates:
                raise ParameterError(f"mu must lie in [0, 1] for {kind.value} kind, got {self.mu}")
            logger.warning(f"mu={self.mu} > 1 for the unbounded process is outside the studied range")
        if self.horizon <= 0:
            raise HorizonError(f"horizon must be positive, got {self.horizon}")
        if not 0 <= self.floor < 0.5:
            raise ParameterError(f"knowledge floor must lie in [0, 0.5), got {self.floor}")


@dataclass
class Sample:
    time: float
    values: Dict[Site, float]


@dataclass
class Trajectory:
    kind: ProcessKind
    params: Params
    samples: List[Sample] = field(default_factory=list)
    events_applied: int = 0
    censored: bool = False
    final: Optional[LatticeState] = None

    @property
    def times(self) -> List[float]:
        return [s.time for s in self.samples]

    def at(self, time: float) -> Sample:
        """Sample taken at exactly time"""
        for sample in self.samples:
            if sample.time == time:
                return sample
        raise HorizonError(f"trajectory was not sampled at t={time}")


@dataclass
class CoupledTrajectory:
    first: Trajectory
    second: Trajectory
    events_checked: int = 0


# called with the state (or the pair of states of a coupled run) after each applied event
Observer = Callable[[Event, object], None]


@dataclass
class _Lane:
    state: LatticeState
    mu: float
    floor: float
    secondary: bool
    samples: List[Sample] = field(default_factory=list)

    def apply(self, event: Event) -> bool:
        kind = event.kind
        if kind is EventKind.DEATH:
            self.state.kill(event.a)
            return True
        if kind is EventKind.SECONDARY and not self.secondary:
            return False
        self.state.interact(event.a, event.b, self.mu, self.floor)
        return True


def _check_sample_times(sample_times: Iterable[float], horizon: float) -> List[float]:
    times = sorted(float(t) for t in sample_times)
    for t in times:
        if t < 0 or t > horizon:
            raise HorizonError(f"sample time {t} outside [0, {horizon}]")
    return times


def _check_initial(kind: ProcessKind, initial: LatticeState, params: Params):
    if initial.kind is not kind:
        raise InconsistentStateError(f"initial state is {initial.kind.value}, expected {kind.value}")
    domain = params.domain
    for site, value in initial.values.items():
        if not domain.contains(site):
            raise InconsistentStateError(f"site {site} lies outside {domain.describe()}")
        initial._check_value(site, value)
    if kind is ProcessKind.STAR_RESTRICTED:
        star = set(star_sites(domain, initial.center))
        outside = [s for s in initial.values if s not in star]
        if outside:
            raise InconsistentStateError(f"sites {outside} lie outside the star around {initial.center}")


class _Driver:
    """Feeds one event stream to one or two lanes and records samples"""

    def __init__(self, lanes: List[_Lane], times: List[float], observer: Optional[Observer],
                 event_budget: int, check_order: bool):
        self.lanes = lanes
        self.times = times
        self.observer = observer
        self.event_budget = event_budget
        self.check_order = check_order
        self.cursor = 0
        self.applied = 0
        self.censored = False

    def _record_until(self, time: float, inclusive: bool = False):
        times = self.times
        while self.cursor < len(times) and (times[self.cursor] < time
                                            or (inclusive and times[self.cursor] <= time)):
            t = times[self.cursor]
            for lane in self.lanes:
                lane.samples.append(Sample(t, lane.state.snapshot()))
            self.cursor += 1

    def _check_order(self, event: Event):
        low, high = self.lanes[0].state, self.lanes[1].state
        for site in (event.a, event.b):
            if site is None:
                continue
            if low.get(site) > high.get(site):
                raise CouplingViolation(
                    f"ordering broken at {site} by {event.kind.value} mark at t={event.time}: "
                    f"{low.get(site)} > {high.get(site)}")

    def step(self, event: Event) -> bool:
        """Apply event; False once the run must stop"""
        self._record_until(event.time)
        touched = False
        for lane in self.lanes:
            touched = lane.apply(event) or touched
        if not touched:
            return True
        self.applied += 1
        if self.check_order:
            self._check_order(event)
        if self.observer is not None:
            if len(self.lanes) == 1:
                self.observer(event, self.lanes[0].state)
            else:
                self.observer(event, tuple(lane.state for lane in self.lanes))
        if self.applied >= self.event_budget:
            self.censored = True
            return False
        # the empty configuration is absorbing
        return self.observer is not None or any(lane.state for lane in self.lanes)

    def finish(self, horizon: float):
        if self.censored:
            return
        self._record_until(horizon, inclusive=True)

    def run_eager(self, events: Iterable[Event], horizon: float):
        for event in events:
            if not self.step(event):
                break
        self.finish(horizon)

    def run_lazy(self, source: LazyTimeline, horizon: float):
        guide = self.lanes[-1].state
        for site in list(guide.values):
            source.arm_site(site, 0.0)
        while True:
            event = source.pop()
            if event is None:
                break
            if event.kind is EventKind.DEATH:
                # a dead site stays irrelevant until knowledge reaches it again
                if not self.step(event):
                    break
                continue
            relevant = guide.get(event.a) > 0 or guide.get(event.b) > 0
            if not relevant:
                continue
            was_a, was_b = guide.get(event.a) > 0, guide.get(event.b) > 0
            if not self.step(event):
                break
            source.rearm(event)
            if not was_a and guide.get(event.a) > 0:
                source.arm_site(event.a, event.time)
            if not was_b and guide.get(event.b) > 0:
                source.arm_site(event.b, event.time)
        self.finish(horizon)


def _event_source(kind: ProcessKind, initial: LatticeState, params: Params, rng: RngStream,
                  timeline: Optional[Timeline], lazy: bool):
    domain = params.domain
    if lazy and kind is not ProcessKind.STAR_RESTRICTED and timeline is None:
        return LazyTimeline(domain, params.lam, params.horizon, rng)
    if kind is ProcessKind.STAR_RESTRICTED:
        if timeline is not None:
            star = set(star_sites(domain, initial.center))
            return [e for e in thin(timeline, params.lam).events
                    if e.a in star and (e.b is None or initial.center in (e.a, e.b))]
        return build_star_timeline(domain, initial.center, params.lam, params.horizon, rng).events
    if timeline is not None:
        if timeline.domain != domain or timeline.horizon < params.horizon:
            raise InconsistentStateError("supplied timeline does not cover the run's domain and horizon")
        return [e for e in thin(timeline, params.lam).events if e.time <= params.horizon]
    if domain.is_finite:
        return build_timeline(domain, params.lam, params.horizon, rng).events
    return LazyTimeline(domain, params.lam, params.horizon, rng)


def evolve(kind: ProcessKind, initial: LatticeState, params: Params, rng: RngStream,
           sample_times: Sequence[float], timeline: Optional[Timeline] = None,
           observer: Optional[Observer] = None, event_budget: int = EVENT_BUDGET,
           lazy: Optional[bool] = None) -> Trajectory:
    """Run one process from initial and sample it at sample_times (right-continuous).

    Lazy domains always use on-demand clocks; ``lazy=True`` forces them on a
    finite domain as well, which yields the same trajectory as the eager
    timeline.
    """
    kind = ProcessKind(kind)
    if lazy is None:
        lazy = not params.domain.is_finite
    params.validate(kind)
    _check_initial(kind, initial, params)
    times = _check_sample_times(sample_times, params.horizon)

    lane = _Lane(initial.copy(), params.mu, params.floor, secondary=False)
    driver = _Driver([lane], times, observer, event_budget, check_order=False)
    source = _event_source(kind, initial, params, rng, timeline, lazy)
    if isinstance(source, LazyTimeline):
        driver.run_lazy(source, params.horizon)
    else:
        driver.run_eager(source, params.horizon)

    if driver.censored:
        logger.warning(f"{kind.value} run censored after {driver.applied} events")
    return Trajectory(kind, params, lane.samples, driver.applied, driver.censored, lane.state)


COUPLED_KINDS = {
    (ProcessKind.BOUNDED, ProcessKind.BOUNDED),
    (ProcessKind.UNBOUNDED, ProcessKind.UNBOUNDED),
    (ProcessKind.CONTACT, ProcessKind.CONTACT),
    (ProcessKind.BOUNDED, ProcessKind.UNBOUNDED),
    (ProcessKind.BOUNDED, ProcessKind.CONTACT),
}


def _check_coupling(params1: Params, params2: Params, initial1: LatticeState,
                    initial2: LatticeState, kinds: Tuple[ProcessKind, ProcessKind]):
    if kinds not in COUPLED_KINDS:
        raise OrderingError(f"no monotone coupling for kinds {kinds[0].value}, {kinds[1].value}")
    if params1.domain != params2.domain or params1.horizon != params2.horizon:
        raise OrderingError("coupled processes must share domain and horizon")
    if params1.floor != params2.floor:
        raise OrderingError("coupled processes must share the knowledge floor")
    if params1.lam > params2.lam:
        raise OrderingError(f"lambda1={params1.lam} exceeds lambda2={params2.lam}")
    if kinds[1] is not ProcessKind.CONTACT and params1.mu > params2.mu:
        raise OrderingError(f"mu1={params1.mu} exceeds mu2={params2.mu}")
    for site, value in initial1.values.items():
        if value > initial2.get(site):
            raise OrderingError(f"initial states are not ordered at {site}: {value} > {initial2.get(site)}")


def evolve_coupled(params1: Params, params2: Params, initial1: LatticeState,
                   initial2: LatticeState, rng: RngStream, sample_times: Sequence[float],
                   kinds: Tuple[ProcessKind, ProcessKind] = (ProcessKind.BOUNDED, ProcessKind.BOUNDED),
                   observer: Optional[Observer] = None,
                   event_budget: int = EVENT_BUDGET) -> CoupledTrajectory:
    """Evolve two processes on shared marks, asserting pointwise order after every event"""
    kinds = (ProcessKind(kinds[0]), ProcessKind(kinds[1]))
    params1.validate(kinds[0])
    params2.validate(kinds[1])
    _check_initial(kinds[0], initial1, params1)
    _check_initial(kinds[1], initial2, params2)
    _check_coupling(params1, params2, initial1, initial2, kinds)
    times = _check_sample_times(sample_times, params1.horizon)

    first = _Lane(initial1.copy(), params1.mu, params1.floor, secondary=False)
    second = _Lane(initial2.copy(), params2.mu, params2.floor, secondary=True)
    driver = _Driver([first, second], times, observer, event_budget, check_order=True)
    domain = params1.domain
    if domain.is_finite:
        timeline = augment_for_coupling(domain, params1.lam, params2.lam, params1.horizon, rng)
        driver.run_eager(timeline.events, params1.horizon)
    else:
        source = LazyTimeline(domain, params1.lam, params1.horizon, rng,
                              secondary_rate=params2.lam - params1.lam)
        driver.run_lazy(source, params1.horizon)

    logger.debug(f"Coupled run checked {driver.applied} events")
    return CoupledTrajectory(
        Trajectory(kinds[0], params1, first.samples, driver.applied, driver.censored, first.state),
        Trajectory(kinds[1], params2, second.samples, driver.applied, driver.censored, second.state),
        driver.applied,
    )
