import math

import numpy as np
import pytest

from kcpsim.app.core.dynamics import Params, ProcessKind
from kcpsim.app.core.event_engine import DomainSpec, RngStream
from kcpsim.app.core.exceptions import (
    BracketError,
    DomainError,
    ParameterError,
    UnsupportedModeError,
)
from kcpsim.app.core.experiments import (
    SWEEP_COLUMNS,
    bisect_critical,
    check_invasion,
    contact_equivalence,
    couple_check,
    estimate_survival,
    harvest_double_interactions,
    oriented_percolation,
    proxy_label,
    sweep_phase_grid,
    verify_decay,
    wilson_interval,
)
from kcpsim.app.utils.helpers import resolve_jobs, run_replicas


class TestWilsonInterval:
    def test_symmetric_at_one_half(self):
        lo, hi = wilson_interval(5, 10)
        assert lo == pytest.approx(0.2366, abs=1e-3)
        assert hi == pytest.approx(0.7634, abs=1e-3)

    def test_extremes_stay_in_unit_interval(self):
        assert wilson_interval(0, 10)[0] == 0.0
        assert wilson_interval(10, 10)[1] == 1.0

    def test_contains_the_point_estimate(self):
        for k in range(0, 21):
            lo, hi = wilson_interval(k, 20)
            assert lo <= k / 20 <= hi

    def test_needs_trials(self):
        with pytest.raises(ParameterError):
            wilson_interval(0, 0)


def test_proxy_label_names_the_domain():
    label = proxy_label(2.0, 0.1, DomainSpec.torus(11, 1))
    assert 'T=2' in label and 'delta=0.1' in label and 'torus' in label


def test_decay_matches_closed_form(rng):
    table = verify_decay(1, 1.0, 0.25, (0.0, 0.5, 1.0, 2.0), 400, rng)
    assert table.censored == 0
    assert [r.t for r in table.rows] == [0.0, 0.5, 1.0, 2.0]
    assert table.rows[0].mean == 1.0
    assert table.rows[-1].closed_form == pytest.approx(math.exp(-1.0))
    assert table.within(4)
    assert 'infinite' in table.label


def test_decay_rejects_bad_grid(rng):
    with pytest.raises(ParameterError):
        verify_decay(1, 1.0, 0.25, (), 10, rng)


class TestSurvival:
    def test_no_interactions_follow_the_death_clock(self, rng):
        params = Params(1, 0.0, 0.5, DomainSpec.torus(5, 1), 1.0)
        est = estimate_survival(params, 0.0, 2000, rng)
        assert abs(est.frequency - math.exp(-1)) <= 4 * math.sqrt(math.exp(-1) * (1 - math.exp(-1)) / 2000)
        assert est.ci_lo <= est.frequency <= est.ci_hi
        assert est.indicators.shape == (2000,)
        assert 'proxy' in est.label

    def test_same_seed_same_estimate(self):
        params = Params(1, 1.0, 0.5, DomainSpec.torus(7, 1), 2.0)
        first = estimate_survival(params, 0.0, 50, RngStream(4))
        second = estimate_survival(params, 0.0, 50, RngStream(4))
        assert np.array_equal(first.indicators, second.indicators)

    def test_full_rate_matches_contact_process(self):
        params = Params(1, 1.5, 1.0, DomainSpec.torus(11, 1), 2.0)
        bounded = estimate_survival(params, 0.0, 100, RngStream(12))
        contact = estimate_survival(params, 0.0, 100, RngStream(12), kind=ProcessKind.CONTACT)
        assert np.array_equal(bounded.indicators, contact.indicators)

    def test_lazy_domain_rejected(self, rng):
        with pytest.raises(UnsupportedModeError):
            estimate_survival(Params(1, 1.0, 0.5, DomainSpec.lazy(1), 1.0), 0.0, 10, rng)


class TestSweep:
    def test_common_random_numbers_keep_indicators_monotone(self, rng):
        table = sweep_phase_grid([2.0, 0.5], [0.3, 1.0], DomainSpec.torus(11, 1), 2.0, 0.0, 50, rng)
        assert table.lambdas == [0.5, 2.0]
        assert len(table.rows) == 4
        assert len(table.rows[0].as_tuple()) == len(SWEEP_COLUMNS)
        assert table.indicators.shape == (2, 2, 50)
        assert table.monotonicity_violations() == 0
        low, high = table.cell(0.5, 0.3), table.cell(2.0, 1.0)
        assert low.survival_freq <= high.survival_freq
        assert high.size == '11'

    def test_zero_rate_row_follows_the_death_clock(self, rng):
        replicas = 1000
        table = sweep_phase_grid([0.5, 2.0], [0.0, 0.5], DomainSpec.torus(7, 1), 1.0, 0.0, replicas, rng)
        p = math.exp(-1.0)
        for lam in table.lambdas:
            assert abs(table.cell(lam, 0.0).survival_freq - p) <= 4 * math.sqrt(p * (1 - p) / replicas)

    def test_independent_cells(self, rng):
        table = sweep_phase_grid([1.0], [0.5, 1.0], DomainSpec.torus(7, 1), 1.0, 0.0, 20, rng, crn=False)
        assert [(r.lam, r.mu) for r in table.rows] == [(1.0, 0.5), (1.0, 1.0)]
        assert all(0 <= r.survival_freq <= 1 for r in table.rows)

    def test_empty_grid(self, rng):
        with pytest.raises(ParameterError):
            sweep_phase_grid([], [0.5], DomainSpec.torus(7, 1), 1.0, 0.0, 5, rng)


class TestCritical:
    domain = DomainSpec.torus(11, 1)

    def test_no_transition_in_subcritical_bracket(self, rng):
        est = bisect_critical('lambda', 0.01, (0.0, 0.2), 0.05, 40, rng, self.domain, 3.0)
        assert not est.transition_found
        assert est.estimate is None
        assert len(est.probes) == 1

    def test_no_transition_without_transfer(self, rng):
        est = bisect_critical('lambda', 0.0, (0.0, 8.0), 0.5, 40, rng, self.domain, 3.0)
        assert not est.transition_found
        assert est.probes[0][1] < 0.5

    def test_full_rate_agrees_with_contact_process(self):
        args = ('lambda', 1.0, (0.0, 8.0), 0.5, 60)
        bounded = bisect_critical(*args, RngStream(13), self.domain, 3.0)
        contact = bisect_critical(*args, RngStream(13), self.domain, 3.0, kind=ProcessKind.CONTACT)
        assert bounded.transition_found
        assert bounded.estimate == contact.estimate
        assert bounded.probes == contact.probes

    def test_survival_at_lower_end_is_an_error(self, rng):
        with pytest.raises(BracketError):
            bisect_critical('lambda', 1.0, (1.0, 6.0), 0.5, 200, rng, self.domain, 3.0, level=0.01)

    def test_bisection_brackets_the_transition(self, rng):
        est = bisect_critical('lambda', 1.0, (0.0, 8.0), 0.5, 60, rng, self.domain, 3.0)
        assert est.transition_found
        assert 0 < est.estimate < 8
        assert est.hi - est.lo <= 1.0
        # shared replica streams make survival monotone across probes
        freqs = [f for _, f in sorted(est.probes)]
        assert freqs == sorted(freqs)

    def test_bad_bracket(self, rng):
        with pytest.raises(BracketError):
            bisect_critical('lambda', 1.0, (3.0, 1.0), 0.5, 10, rng, self.domain, 3.0)
        with pytest.raises(ParameterError):
            bisect_critical('delta', 1.0, (0.0, 1.0), 0.5, 10, rng, self.domain, 3.0)


class TestInvasion:
    def test_frequency_reaches_target(self, rng):
        result = check_invasion(0.5, 1.0, 1, 300, rng)
        assert result.target == 0.5
        assert result.interactions == 1
        assert result.frequency >= result.target - 4 * math.sqrt(0.25 / 300)

    def test_no_interactions_no_invasion(self, rng):
        assert check_invasion(0.5, 1.0, 1, 20, rng, lam=0.0).frequency == 0.0

    def test_frequency_grows_with_lambda_under_common_timelines(self):
        rates = [0.5, 1.0, 2.0, 4.0]
        freqs = [check_invasion(0.5, 1.0, 1, 50, RngStream(14), lam=lam, crn_rate=rates[-1]).frequency
                 for lam in rates]
        assert freqs == sorted(freqs)

    def test_shared_timeline_rate_must_dominate(self, rng):
        with pytest.raises(ParameterError):
            check_invasion(0.5, 1.0, 1, 5, rng, lam=10.0, crn_rate=5.0)


class TestPercolation:
    def test_all_open(self, rng):
        field = oriented_percolation(1.0, 5, [(0,)], rng)
        assert field.counts == [1, 2, 3, 4, 5, 6]
        assert field.wet_fraction(5) == 1.0

    def test_all_closed(self, rng):
        field = oriented_percolation(0.0, 5, [(0,)], rng)
        assert field.counts == [1, 0, 0, 0, 0, 0]
        assert field.wet_fraction(3) == 0.0

    def test_wet_sets_grow_with_p(self, rng):
        low = oriented_percolation(0.4, 30, [(0,)], rng)
        high = oriented_percolation(0.7, 30, [(0,)], rng)
        assert low.wet <= high.wet

    def test_initial_sites_on_even_sublattice(self, rng):
        with pytest.raises(DomainError):
            oriented_percolation(0.5, 3, [(1,)], rng)

    def test_two_dimensions(self, rng):
        field = oriented_percolation(1.0, 2, [(0, 0)], rng, d=2)
        assert field.counts[1] == 4


@pytest.mark.parametrize("kinds", [
    (ProcessKind.BOUNDED, ProcessKind.BOUNDED),
    (ProcessKind.BOUNDED, ProcessKind.UNBOUNDED),
    (ProcessKind.BOUNDED, ProcessKind.CONTACT),
])
def test_couple_check_finds_no_violations(rng, kinds):
    report = couple_check(20, rng, size=11, horizon=3.0, kinds=kinds)
    assert report.ok
    assert report.failures == []
    assert report.events_checked > 0


@pytest.mark.parametrize("mu", [1.0, None])
def test_contact_equivalence(rng, mu):
    report = contact_equivalence(10, rng, mu=mu, size=11, horizon=3.0)
    assert report.ok
    assert report.events_compared > 0


class TestHarvest:
    def test_counts_are_consistent(self, rng):
        result = harvest_double_interactions(1, 1.0, 2.0, 30, rng, size=11, cap=200)
        assert result.overlaps >= 30
        assert 0 <= result.with_double <= result.overlaps
        assert result.timelines >= 1
        assert result.expected == pytest.approx(1 / 3)
        assert 0 <= result.frequency <= 1

    def test_forward_frequency_clears_the_bound(self, rng):
        result = harvest_double_interactions(1, 1.0, 10.0, 3000, rng)
        assert result.frequency >= 1 / 3 - 3 * result.se

    def test_needs_interactions(self, rng):
        with pytest.raises(ParameterError):
            harvest_double_interactions(1, 0.0, 2.0, 5, rng)


def test_run_replicas_keeps_item_order():
    assert run_replicas(math.sqrt, [1.0, 4.0, 9.0, 16.0], jobs=2) == [1.0, 2.0, 3.0, 4.0]
    assert run_replicas(abs, [-1, 2], jobs=1) == [1, 2]


def test_resolve_jobs():
    assert resolve_jobs(3) == 3
    assert resolve_jobs(-2) == 1
    assert resolve_jobs(0) >= 1
