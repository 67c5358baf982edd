import csv
import math

import pytest
from hypothesis import given, strategies as st

from kcpsim.app.core.dynamics import LatticeState, Params, ProcessKind, evolve
from kcpsim.app.core.event_engine import DomainSpec, RngStream
from kcpsim.app.core.exceptions import HorizonError
from kcpsim.app.core.observables import (
    ObservableRecord,
    density_above,
    record,
    support,
    survival_proxy,
    total_knowledge,
    write_trajectory_csv,
)


def test_total_knowledge_examples():
    assert total_knowledge(LatticeState(ProcessKind.BOUNDED)) == 0
    assert total_knowledge(LatticeState.point(ProcessKind.BOUNDED, (0,))) == 1
    assert total_knowledge({(0,): 0.5, (1,): 0.25}) == 0.75


@given(st.dictionaries(st.integers(-50, 50), st.floats(0.0, 1.0), max_size=20),
       st.dictionaries(st.integers(51, 100), st.floats(0.0, 1.0), max_size=20))
def test_total_knowledge_is_additive_over_disjoint_supports(left, right):
    a = {(k,): v for k, v in left.items()}
    b = {(k,): v for k, v in right.items()}
    assert total_knowledge({**a, **b}) == pytest.approx(total_knowledge(a) + total_knowledge(b))


def test_density_above_examples():
    domain = DomainSpec.torus(5, 1)
    assert density_above({}, 0.5, domain) == 0
    assert density_above({s: 1.0 for s in domain.sites()}, 0.5, domain) == 1
    assert density_above({(0,): 0.6, (1,): 0.6, (2,): 0.2}, 0.5, domain) == pytest.approx(0.4)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=25), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_density_above_is_nonincreasing_in_threshold(values, t1, t2):
    domain = DomainSpec.torus(5, 1)
    state = {(k - 12,): v for k, v in enumerate(values)}
    lo, hi = sorted((t1, t2))
    assert density_above(state, hi, domain) <= density_above(state, lo, domain)


def test_density_on_lazy_domain_is_a_count(caplog):
    with caplog.at_level('WARNING'):
        assert density_above({(0,): 0.9, (7,): 0.8}, 0.5, DomainSpec.lazy(1)) == 2
    assert 'count' in caplog.text


def test_record_fields():
    domain = DomainSpec.torus(5, 1)
    rec = record({(0,): 0.6, (1,): 0.3}, 2.0, domain)
    assert isinstance(rec, ObservableRecord)
    assert rec.time == 2.0
    assert rec.total_knowledge == pytest.approx(0.9)
    assert rec.density_above_half == pytest.approx(0.2)
    assert rec.support_size == 2
    assert rec.max_value == 0.6
    assert rec.total_knowledge <= rec.support_size


def test_support_ignores_zero_entries():
    assert support({(0,): 0.0, (1,): 0.2}) == frozenset({(1,)})


class TestSurvivalProxy:
    def test_empty_final_state_dies(self, line, make_params):
        timeline = line([(0.4, 'D', 0)])
        traj = evolve(ProcessKind.BOUNDED, LatticeState.point(ProcessKind.BOUNDED, (0,)),
                      make_params(line.domain, horizon=2.0), RngStream(0), [2.0], timeline=timeline)
        assert not survival_proxy(traj, 2.0)

    def test_delta_threshold(self, line, make_params):
        timeline = line([])
        traj = evolve(ProcessKind.BOUNDED, LatticeState.point(ProcessKind.BOUNDED, (0,), 0.3),
                      make_params(line.domain, horizon=2.0), RngStream(0), [2.0], timeline=timeline)
        assert survival_proxy(traj, 2.0, 0.0)
        assert survival_proxy(traj, 2.0, 0.2)
        assert not survival_proxy(traj, 2.0, 0.3)

    def test_needs_a_sample_at_the_horizon(self, line, make_params):
        traj = evolve(ProcessKind.BOUNDED, LatticeState.point(ProcessKind.BOUNDED, (0,)),
                      make_params(line.domain, horizon=2.0), RngStream(0), [1.0], timeline=line([]))
        with pytest.raises(HorizonError):
            survival_proxy(traj, 2.0)

    def test_no_interactions_long_horizon(self):
        domain = DomainSpec.lazy(1)
        params = Params(1, 0.0, 0.5, domain, 20.0)
        root = RngStream(11)
        n = 10_000
        survived = sum(survival_proxy(evolve(ProcessKind.BOUNDED, LatticeState.point(ProcessKind.BOUNDED, (0,)),
                                             params, root.child('long', r), [20.0]), 20.0)
                       for r in range(n))
        p = math.exp(-20)
        assert abs(survived / n - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1 / n


def test_write_trajectory_csv(tmp_path, torus21, make_params):
    trajectories = [evolve(ProcessKind.BOUNDED, LatticeState.point(ProcessKind.BOUNDED, (0,)),
                           make_params(torus21, lam=1.0, horizon=2.0), RngStream(r), [1.0, 2.0])
                    for r in range(3)]
    out = tmp_path / "traj.csv"
    write_trajectory_csv(trajectories, out, header="# seed = 1\n")
    lines = out.read_text().splitlines()
    assert lines[0] == "# seed = 1"
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == ['replica', 'time', 'observable', 'value']
    # four observables per sample, two samples per replica
    assert len(rows) == 3 * 2 * 4
    assert {r['observable'] for r in rows} == {'total_knowledge', 'support_size', 'density_above_half', 'max_value'}
