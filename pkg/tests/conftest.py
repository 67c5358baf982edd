import pytest

from kcpsim.app.core.dynamics import Params
from kcpsim.app.core.event_engine import DomainSpec, Event, EventKind, RngStream, Timeline


@pytest.fixture
def rng():
    return RngStream(20240601)


@pytest.fixture
def torus21():
    return DomainSpec.torus(21, 1)


@pytest.fixture
def line():
    """Handmade timelines on a small 1-d torus: sites -3..3"""
    domain = DomainSpec.torus(7, 1)

    def build(marks, horizon=2.0, rate=1.0):
        events = []
        for seq, mark in enumerate(sorted(marks, key=lambda m: m[0])):
            time, kind, *where = mark
            if kind == 'D':
                events.append(Event(time, seq, EventKind.DEATH, (where[0],)))
            else:
                a, b = sorted((where[0], where[1]))
                events.append(Event(time, seq, EventKind(kind), (a,), (b,), 0.0))
        return Timeline(events, domain, rate, horizon)

    build.domain = domain
    return build


@pytest.fixture
def make_params():
    def make(domain, lam=1.0, mu=0.5, horizon=5.0, **kwargs):
        return Params(domain.dimension, lam, mu, domain, horizon, **kwargs)
    return make
