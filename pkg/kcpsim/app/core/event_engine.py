"""Harris graphical representation: exponential clocks on edges and sites.

Every entity (an edge interaction channel, an edge secondary channel, a site
death clock) owns an independent random stream seeded from the master seed and
the entity's canonical key, so a timeline does not depend on the order in which
entities are visited. The eager builders and the lazy event source share the
same per-entity clocks, which is what makes lazy and eager runs identical.
"""
import heapq
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from kcpsim.config.settings import CLOCK_BATCH
from .exceptions import (
    DomainError,
    HorizonError,
    InvalidRateError,
    OrderingError,
    UnsupportedModeError,
)

logger = logging.getLogger('event_engine')

Site = Tuple[int, ...]
Edge = Tuple[Site, Site]

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15


def mix64(value: int) -> int:
    """64-bit avalanche mix (splitmix64 finalizer)"""
    z = (value + GOLDEN64) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_key(seed: int, *parts) -> int:
    """Fold a canonical key (ints, strings, nested tuples) into a seed"""
    h = mix64(seed & MASK64)
    for part in parts:
        if isinstance(part, tuple):
            h = mix64(h ^ (0xA5A5 + len(part)))
            h = mix_key(h, *part)
        elif isinstance(part, str):
            for byte in part.encode('utf-8'):
                h = mix64(h ^ byte)
            h = mix64(h ^ 0xFF)
        else:
            h = mix64(h ^ (int(part) & MASK64))
    return h


def canonical_edge(x: Site, y: Site) -> Edge:
    """Order the endpoints so each undirected edge has one key"""
    return (x, y) if x < y else (y, x)


class RngStream:
    """Random stream identified by (master seed, stream id)"""

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self._generator: Optional[np.random.Generator] = None

    @property
    def seed(self) -> int:
        return mix_key(self.master_seed, self.stream_id)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            self._generator = np.random.Generator(np.random.PCG64(self.seed))
        return self._generator

    def child(self, *parts) -> 'RngStream':
        """Independent sub-stream keyed by parts (experiment id, replica index, ...)"""
        return RngStream(self.master_seed, mix_key(self.stream_id, *parts))

    def entity_generator(self, *parts) -> np.random.Generator:
        """Generator for one entity, keyed off this stream"""
        return np.random.Generator(np.random.PCG64(mix_key(self.seed, *parts)))

    def uniform(self, *parts) -> float:
        """Counter-based uniform in [0, 1) for the given key"""
        return (mix_key(self.seed, *parts) >> 11) * (1.0 / (1 << 53))

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


class EventKind(str, Enum):
    INTERACTION = 'I'
    SECONDARY = 'S'
    DEATH = 'D'


@dataclass(slots=True)
class Event:
    time: float
    seq: int
    kind: EventKind
    a: Site
    b: Optional[Site] = None
    label: float = 0.0

    @property
    def edge(self) -> Edge:
        return (self.a, self.b)

    @property
    def site(self) -> Site:
        return self.a


def event_order(event: Event) -> Tuple[float, int]:
    """Sort key: time, then sequence number"""
    return (event.time, event.seq)


class DomainMode(str, Enum):
    TORUS = 'torus'
    FREE_BOX = 'box'
    LAZY = 'lazy'


@dataclass(frozen=True)
class DomainSpec:
    mode: DomainMode
    dimension: int = 1
    size: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise DomainError(f"dimension must be >= 1, got {self.dimension}")
        if self.mode is DomainMode.TORUS and (self.size < 3 or self.size % 2 == 0):
            raise DomainError(f"torus linear size must be odd and >= 3, got {self.size}")
        if self.mode is DomainMode.FREE_BOX and self.size < 1:
            raise DomainError(f"box half-width must be >= 1, got {self.size}")

    @classmethod
    def torus(cls, size: int, dimension: int = 1) -> 'DomainSpec':
        return cls(DomainMode.TORUS, dimension, size)

    @classmethod
    def box(cls, half_width: int, dimension: int = 1) -> 'DomainSpec':
        return cls(DomainMode.FREE_BOX, dimension, half_width)

    @classmethod
    def lazy(cls, dimension: int = 1) -> 'DomainSpec':
        return cls(DomainMode.LAZY, dimension, 0)

    @property
    def is_finite(self) -> bool:
        return self.mode is not DomainMode.LAZY

    @property
    def radius(self) -> int:
        if self.mode is DomainMode.TORUS:
            return (self.size - 1) // 2
        return self.size

    @property
    def linear_size(self) -> int:
        if not self.is_finite:
            raise UnsupportedModeError("lazy domains have no linear size")
        return 2 * self.radius + 1

    @property
    def num_sites(self) -> int:
        return self.linear_size ** self.dimension

    @property
    def origin(self) -> Site:
        return (0,) * self.dimension

    def describe(self) -> str:
        if self.mode is DomainMode.LAZY:
            return f"lazy(d={self.dimension})"
        return f"{self.mode.value}(d={self.dimension},n={self.linear_size})"

    def contains(self, site: Site) -> bool:
        if len(site) != self.dimension:
            return False
        if not self.is_finite:
            return True
        r = self.radius
        return all(-r <= c <= r for c in site)

    def sites(self) -> List[Site]:
        """All sites in lexicographic order"""
        if not self.is_finite:
            raise UnsupportedModeError("cannot enumerate the sites of a lazy domain")
        r = self.radius
        return list(itertools.product(range(-r, r + 1), repeat=self.dimension))

    def _wrap(self, c: int) -> int:
        r = self.radius
        if c > r:
            return c - self.size
        if c < -r:
            return c + self.size
        return c

    def neighbors(self, site: Site) -> List[Site]:
        """Nearest neighbors of site inside the domain"""
        result = []
        for k in range(self.dimension):
            for step in (-1, 1):
                c = site[k] + step
                if self.mode is DomainMode.TORUS:
                    c = self._wrap(c)
                elif self.mode is DomainMode.FREE_BOX and abs(c) > self.size:
                    continue
                result.append(site[:k] + (c,) + site[k + 1:])
        return result

    def are_neighbors(self, x: Site, y: Site) -> bool:
        if len(x) != self.dimension or len(y) != self.dimension or x == y:
            return False
        return y in self.neighbors(x)

    def incident_edges(self, site: Site) -> List[Edge]:
        return [canonical_edge(site, y) for y in self.neighbors(site)]

    def edges(self) -> List[Edge]:
        """All undirected nearest-neighbor edges in canonical order"""
        found = set()
        for site in self.sites():
            found.update(self.incident_edges(site))
        return sorted(found)


class EntityClock:
    """Successive rings of one exponential clock, each with a uniform label"""

    __slots__ = ('rate', 'time', 'label', '_generator', '_gaps', '_labels', '_pos')

    def __init__(self, generator: np.random.Generator, rate: float):
        if rate <= 0:
            raise InvalidRateError(f"clock rate must be positive, got {rate}")
        self.rate = rate
        self.time = 0.0
        self.label = 0.0
        self._generator = generator
        self._gaps: List[float] = []
        self._labels: List[float] = []
        self._pos = 0

    def advance(self) -> float:
        """Move to the next ring and draw its label"""
        if self._pos == len(self._gaps):
            self._gaps = self._generator.standard_exponential(CLOCK_BATCH).tolist()
            self._labels = self._generator.random(CLOCK_BATCH).tolist()
            self._pos = 0
        self.time += self._gaps[self._pos] / self.rate
        self.label = self._labels[self._pos]
        self._pos += 1
        return self.time

    def advance_past(self, t: float) -> float:
        """Ring until the clock lies beyond t"""
        while self.time <= t:
            self.advance()
        return self.time


def entity_clock(rng: RngStream, kind: EventKind, entity: tuple, rate: float) -> EntityClock:
    """Clock for one site or edge, on its own keyed stream"""
    return EntityClock(rng.entity_generator(kind.value, entity), rate)


def next_clock_time(current: float, rate: float, rng: RngStream) -> float:
    """Next ring of a rate-`rate` exponential clock after `current`"""
    if rate <= 0:
        raise InvalidRateError(f"clock rate must be positive, got {rate}")
    if current < 0:
        raise HorizonError(f"current time must be nonnegative, got {current}")
    while True:
        t = current + rng.generator.standard_exponential() / rate
        if t > current:
            return t


@dataclass
class Timeline:
    events: List[Event]
    domain: DomainSpec
    rate: float
    horizon: float
    secondary_rate: Optional[float] = None

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def count(self, kind: EventKind) -> int:
        return sum(1 for e in self.events if e.kind is kind)

    def primary(self) -> 'Timeline':
        """Drop secondary marks, leaving the rate-λ1 timeline"""
        events = [e for e in self.events if e.kind is not EventKind.SECONDARY]
        return Timeline(events, self.domain, self.rate, self.horizon)


def _check_build_args(domain: DomainSpec, lam: float, horizon: float):
    if not domain.is_finite:
        raise UnsupportedModeError("lazy domains are generated on demand by the dynamics")
    if lam < 0:
        raise InvalidRateError(f"interaction rate must be nonnegative, got {lam}")
    if horizon <= 0:
        raise HorizonError(f"horizon must be positive, got {horizon}")


def _append_rings(events: List[Event], seq: Iterator[int], rng: RngStream, kind: EventKind,
                  entity: tuple, rate: float, horizon: float):
    if rate <= 0:
        return
    clock = entity_clock(rng, kind, entity, rate)
    b = entity[1] if len(entity) == 2 else None
    while clock.advance() <= horizon:
        events.append(Event(clock.time, next(seq), kind, entity[0], b, clock.label))


def _append_deaths(events, seq, rng, sites: Sequence[Site], horizon: float):
    for site in sites:
        _append_rings(events, seq, rng, EventKind.DEATH, (site,), 1.0, horizon)


def _append_interactions(events, seq, rng, kind: EventKind, edges: Sequence[Edge],
                         rate: float, horizon: float):
    for edge in edges:
        _append_rings(events, seq, rng, kind, edge, rate, horizon)


def build_timeline(domain: DomainSpec, lam: float, horizon: float, rng: RngStream) -> Timeline:
    """Eager graphical representation of a finite domain on [0, horizon]"""
    _check_build_args(domain, lam, horizon)
    events: List[Event] = []
    seq = itertools.count()
    _append_deaths(events, seq, rng, domain.sites(), horizon)
    _append_interactions(events, seq, rng, EventKind.INTERACTION, domain.edges(), lam, horizon)
    events.sort(key=event_order)
    logger.debug(f"Built timeline on {domain.describe()} with {len(events)} events")
    return Timeline(events, domain, lam, horizon)


def augment_for_coupling(domain: DomainSpec, lam1: float, lam2: float, horizon: float,
                         rng: RngStream) -> Timeline:
    """Rate-λ1 interaction marks plus rate-(λ2 − λ1) secondary marks on every edge"""
    if lam1 > lam2:
        raise OrderingError(f"coupling requires lambda1 <= lambda2, got {lam1} > {lam2}")
    _check_build_args(domain, lam1, horizon)
    events: List[Event] = []
    seq = itertools.count()
    edges = domain.edges()
    # deaths and primary marks first so their seq match build_timeline
    _append_deaths(events, seq, rng, domain.sites(), horizon)
    _append_interactions(events, seq, rng, EventKind.INTERACTION, edges, lam1, horizon)
    _append_interactions(events, seq, rng, EventKind.SECONDARY, edges, lam2 - lam1, horizon)
    events.sort(key=event_order)
    return Timeline(events, domain, lam1, horizon, secondary_rate=lam2 - lam1)


def thin(timeline: Timeline, lam: float) -> Timeline:
    """Keep the interaction marks whose label falls below lam / rate"""
    if timeline.secondary_rate:
        raise OrderingError("cannot thin a coupling timeline")
    if lam < 0 or lam > timeline.rate:
        raise OrderingError(f"thinning needs 0 <= lambda <= {timeline.rate}, got {lam}")
    if lam == timeline.rate:
        return timeline
    ratio = lam / timeline.rate
    events = []
    for e in timeline.events:
        if e.kind is EventKind.DEATH:
            events.append(e)
        elif e.label < ratio:
            events.append(Event(e.time, e.seq, e.kind, e.a, e.b, e.label / ratio))
    return Timeline(events, timeline.domain, lam, timeline.horizon)


def star_sites(domain: DomainSpec, center: Site) -> List[Site]:
    """Center first, then its distinct neighbors"""
    return [center] + [y for y in domain.neighbors(center) if y != center]


def build_star_timeline(domain: DomainSpec, center: Site, lam: float, horizon: float,
                        rng: RngStream) -> Timeline:
    """Timeline restricted to the star graph around center"""
    if lam < 0:
        raise InvalidRateError(f"interaction rate must be nonnegative, got {lam}")
    if horizon <= 0:
        raise HorizonError(f"horizon must be positive, got {horizon}")
    sites = star_sites(domain, center)
    edges = sorted({canonical_edge(center, y) for y in sites[1:]})
    events: List[Event] = []
    seq = itertools.count()
    _append_deaths(events, seq, rng, sites, horizon)
    _append_interactions(events, seq, rng, EventKind.INTERACTION, edges, lam, horizon)
    events.sort(key=event_order)
    return Timeline(events, domain, lam, horizon)


class LazyTimeline:
    """On-demand event source: clocks are armed for entities near the active region"""

    def __init__(self, domain: DomainSpec, lam: float, horizon: float, rng: RngStream,
                 secondary_rate: float = 0.0):
        if lam < 0 or secondary_rate < 0:
            raise InvalidRateError(f"interaction rates must be nonnegative, got {lam}, {secondary_rate}")
        if horizon <= 0:
            raise HorizonError(f"horizon must be positive, got {horizon}")
        self.domain = domain
        self.rate = lam
        self.secondary_rate = secondary_rate
        self.horizon = horizon
        self.rng = rng
        self._clocks: Dict[tuple, EntityClock] = {}
        self._armed: Set[tuple] = set()
        self._heap: List[Tuple[float, int, tuple]] = []
        self._seq = itertools.count()

    @property
    def clocks_created(self) -> int:
        return len(self._clocks)

    def _push(self, key: tuple, clock: EntityClock):
        if clock.time <= self.horizon:
            heapq.heappush(self._heap, (clock.time, next(self._seq), key))
            self._armed.add(key)

    def _arm(self, kind: EventKind, entity: tuple, rate: float, now: float):
        key = (kind, entity)
        if rate <= 0 or key in self._armed:
            return
        clock = self._clocks.get(key)
        if clock is None:
            clock = entity_clock(self.rng, kind, entity, rate)
            self._clocks[key] = clock
        # rings before now would have been no-ops
        clock.advance_past(now)
        self._push(key, clock)

    def arm_site(self, site: Site, now: float):
        """Arm the death clock of site and the clocks of its incident edges"""
        self._arm(EventKind.DEATH, (site,), 1.0, now)
        for edge in self.domain.incident_edges(site):
            self._arm(EventKind.INTERACTION, edge, self.rate, now)
            self._arm(EventKind.SECONDARY, edge, self.secondary_rate, now)

    def pop(self) -> Optional[Event]:
        """Next event within the horizon; its entity is disarmed until rearm()"""
        if not self._heap:
            return None
        time, seq, key = heapq.heappop(self._heap)
        self._armed.discard(key)
        kind, entity = key
        b = entity[1] if len(entity) == 2 else None
        return Event(time, seq, kind, entity[0], b, self._clocks[key].label)

    def rearm(self, event: Event):
        """Schedule the next ring of the clock that produced event"""
        key = (event.kind, (event.a,) if event.b is None else (event.a, event.b))
        clock = self._clocks[key]
        clock.advance()
        self._push(key, clock)


def _format_site(site: Site) -> str:
    return ','.join(str(c) for c in site)


def dump_timeline(timeline: Timeline) -> str:
    """Tab-separated dump: time, kind tag, site or edge endpoints"""
    lines = []
    for e in timeline.events:
        fields = [f"{e.time:.17g}", e.kind.value, _format_site(e.a)]
        if e.b is not None:
            fields.append(_format_site(e.b))
        lines.append('\t'.join(fields))
    return '\n'.join(lines) + ('\n' if lines else '')


def write_timeline(timeline: Timeline, path: Path):
    """Write the tab-separated dump of a timeline to path"""
    Path(path).write_text(dump_timeline(timeline))
