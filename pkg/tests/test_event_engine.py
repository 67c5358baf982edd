import math

import numpy as np
import pytest
from scipy.stats import chisquare, poisson

from kcpsim.app.core.event_engine import (
    DomainSpec,
    EventKind,
    LazyTimeline,
    RngStream,
    augment_for_coupling,
    build_star_timeline,
    build_timeline,
    canonical_edge,
    dump_timeline,
    next_clock_time,
    star_sites,
    thin,
    write_timeline,
)
from kcpsim.app.core.exceptions import (
    DomainError,
    InvalidRateError,
    OrderingError,
    UnsupportedModeError,
)


def marks(timeline):
    return [(e.time, e.seq, e.kind, e.a, e.b, e.label) for e in timeline.events]


class TestDomainSpec:
    def test_torus_is_origin_centered_and_wraps(self):
        domain = DomainSpec.torus(5, 1)
        assert domain.sites() == [(-2,), (-1,), (0,), (1,), (2,)]
        assert sorted(domain.neighbors((2,))) == [(-2,), (1,)]
        assert domain.are_neighbors((2,), (-2,))

    def test_edge_counts(self):
        assert len(DomainSpec.torus(11, 1).edges()) == 11
        assert len(DomainSpec.torus(5, 2).edges()) == 2 * 25
        # free box of half-width 2 in d=1: 5 sites in a path
        assert len(DomainSpec.box(2, 1).edges()) == 4

    def test_box_has_no_wraparound(self):
        domain = DomainSpec.box(2, 1)
        assert domain.neighbors((2,)) == [(1,)]
        assert not domain.are_neighbors((2,), (-2,))

    @pytest.mark.parametrize("size", [2, 4, 1])
    def test_torus_needs_odd_size(self, size):
        with pytest.raises(DomainError):
            DomainSpec.torus(size, 1)

    def test_lazy_domain_cannot_enumerate(self):
        domain = DomainSpec.lazy(2)
        assert not domain.is_finite
        assert domain.contains((100, -7))
        with pytest.raises(UnsupportedModeError):
            domain.sites()


class TestRngStream:
    def test_children_are_reproducible_and_distinct(self):
        a = RngStream(7).child('sweep', 3)
        b = RngStream(7).child('sweep', 3)
        c = RngStream(7).child('sweep', 4)
        assert a.seed == b.seed
        assert a.seed != c.seed
        assert a.generator.random() == b.generator.random()

    def test_uniform_is_counter_based(self, rng):
        u = rng.uniform('perc', (0,), 3)
        assert 0 <= u < 1
        assert rng.uniform('perc', (0,), 3) == u
        assert rng.uniform('perc', (0,), 4) != u

    def test_next_clock_time_moves_forward(self, rng):
        assert next_clock_time(2.5, 3.0, rng) > 2.5
        with pytest.raises(InvalidRateError):
            next_clock_time(0.0, 0.0, rng)

    def test_next_clock_time_has_mean_one_over_rate(self, rng):
        gaps = np.array([next_clock_time(0.0, 2.0, rng) for _ in range(100_000)])
        se = gaps.std(ddof=1) / math.sqrt(gaps.size)
        assert abs(gaps.mean() - 0.5) <= 3 * se


class TestBuildTimeline:
    def test_zero_rate_gives_only_deaths(self, rng):
        timeline = build_timeline(DomainSpec.torus(11, 1), 0.0, 5.0, rng)
        assert len(timeline) > 0
        assert all(e.kind is EventKind.DEATH for e in timeline.events)

    def test_events_strictly_ordered(self, rng):
        timeline = build_timeline(DomainSpec.torus(5, 2), 2.0, 3.0, rng)
        keys = [(e.time, e.seq) for e in timeline.events]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)
        assert all(0 < e.time <= 3.0 for e in timeline.events)

    def test_same_seed_same_timeline(self):
        domain = DomainSpec.torus(9, 1)
        first = build_timeline(domain, 1.5, 4.0, RngStream(99))
        second = build_timeline(domain, 1.5, 4.0, RngStream(99))
        assert dump_timeline(first) == dump_timeline(second)
        assert marks(first) == marks(second)

    def test_interactions_join_neighbors(self, rng):
        domain = DomainSpec.torus(7, 1)
        timeline = build_timeline(domain, 2.0, 3.0, rng)
        for e in timeline.events:
            if e.kind is EventKind.INTERACTION:
                assert domain.are_neighbors(e.a, e.b)
                assert (e.a, e.b) == canonical_edge(e.a, e.b)

    def test_mean_interaction_count(self):
        domain = DomainSpec.torus(11, 1)
        root = RngStream(2024)
        counts = np.array([build_timeline(domain, 2.0, 5.0, root.child('count', k)).count(EventKind.INTERACTION)
                           for k in range(1000)])
        se = counts.std(ddof=1) / math.sqrt(counts.size)
        assert abs(counts.mean() - 110) <= 4 * se

    def test_edge_counts_are_poisson(self):
        domain = DomainSpec.torus(5, 1)
        edge = ((0,), (1,))
        root = RngStream(77)
        counts = []
        for k in range(1000):
            timeline = build_timeline(domain, 1.0, 5.0, root.child('chi', k))
            counts.append(sum(1 for e in timeline.events
                              if e.kind is EventKind.INTERACTION and (e.a, e.b) == edge and 2.0 < e.time <= 5.0))
        counts = np.array(counts)
        bins = 8
        observed = np.array([np.sum(counts == k) for k in range(bins - 1)] + [np.sum(counts >= bins - 1)])
        probs = np.array([poisson.pmf(k, 3.0) for k in range(bins - 1)] + [poisson.sf(bins - 2, 3.0)])
        _, p_value = chisquare(observed, probs * counts.size)
        assert p_value > 1e-3

    def test_lazy_domain_rejected(self, rng):
        with pytest.raises(UnsupportedModeError):
            build_timeline(DomainSpec.lazy(1), 1.0, 1.0, rng)

    def test_negative_rate_rejected(self, rng):
        with pytest.raises(InvalidRateError):
            build_timeline(DomainSpec.torus(5, 1), -1.0, 1.0, rng)


class TestCouplingTimeline:
    def test_equal_rates_have_no_secondary_marks(self, rng):
        timeline = augment_for_coupling(DomainSpec.torus(7, 1), 1.5, 1.5, 5.0, rng)
        assert timeline.count(EventKind.SECONDARY) == 0

    def test_primary_projection_matches_build_timeline(self):
        domain = DomainSpec.torus(7, 1)
        coupled = augment_for_coupling(domain, 1.0, 3.0, 5.0, RngStream(5))
        plain = build_timeline(domain, 1.0, 5.0, RngStream(5))
        assert marks(coupled.primary()) == marks(plain)

    def test_superposed_rate(self):
        domain = DomainSpec.torus(3, 1)
        edge = ((0,), (1,))
        root = RngStream(31)
        counts = []
        for k in range(1000):
            timeline = augment_for_coupling(domain, 1.0, 3.0, 10.0, root.child('aug', k))
            counts.append(sum(1 for e in timeline.events if e.kind is not EventKind.DEATH and (e.a, e.b) == edge))
        counts = np.array(counts)
        se = counts.std(ddof=1) / math.sqrt(counts.size)
        assert abs(counts.mean() - 30) <= 4 * se

    def test_ordering_required(self, rng):
        with pytest.raises(OrderingError):
            augment_for_coupling(DomainSpec.torus(5, 1), 2.0, 1.0, 1.0, rng)


class TestThinning:
    def test_thinned_marks_are_a_subset(self, rng):
        timeline = build_timeline(DomainSpec.torus(9, 1), 4.0, 5.0, rng)
        low = thin(timeline, 1.0)
        mid = thin(timeline, 2.5)
        low_keys = {(e.time, e.a, e.b) for e in low.events if e.kind is EventKind.INTERACTION}
        mid_keys = {(e.time, e.a, e.b) for e in mid.events if e.kind is EventKind.INTERACTION}
        assert low_keys <= mid_keys
        assert low.count(EventKind.DEATH) == timeline.count(EventKind.DEATH)
        assert all(0 <= e.label < 1 for e in low.events)

    def test_thinning_to_the_full_rate_is_identity(self, rng):
        timeline = build_timeline(DomainSpec.torus(5, 1), 2.0, 2.0, rng)
        assert thin(timeline, 2.0) is timeline

    def test_cannot_thin_upwards(self, rng):
        timeline = build_timeline(DomainSpec.torus(5, 1), 1.0, 2.0, rng)
        with pytest.raises(OrderingError):
            thin(timeline, 1.5)


class TestStarAndLazy:
    def test_star_timeline_is_restriction_of_full_timeline(self):
        domain = DomainSpec.torus(9, 1)
        center = (0,)
        star = set(star_sites(domain, center))
        full = build_timeline(domain, 2.0, 4.0, RngStream(8))
        restricted = {(e.time, e.kind, e.a, e.b) for e in full.events
                      if e.a in star and (e.b is None or center in (e.a, e.b))}
        built = build_star_timeline(domain, center, 2.0, 4.0, RngStream(8))
        assert {(e.time, e.kind, e.a, e.b) for e in built.events} == restricted

    def test_lazy_source_pops_in_time_order(self, rng):
        source = LazyTimeline(DomainSpec.lazy(1), 1.0, 5.0, rng)
        source.arm_site((0,), 0.0)
        assert source.clocks_created == 3
        times = []
        while True:
            event = source.pop()
            if event is None:
                break
            times.append(event.time)
            source.rearm(event)
        assert times == sorted(times)
        assert all(t <= 5.0 for t in times)

    def test_lazy_clocks_replay_eager_rings(self):
        domain = DomainSpec.torus(5, 1)
        eager = build_timeline(domain, 1.0, 3.0, RngStream(3))
        source = LazyTimeline(domain, 1.0, 3.0, RngStream(3))
        source.arm_site((0,), 0.0)
        first = source.pop()
        expected = min(e.time for e in eager.events
                       if (e.kind is EventKind.DEATH and e.a == (0,))
                       or (e.kind is EventKind.INTERACTION and (0,) in (e.a, e.b)))
        assert first.time == expected


class TestDump:
    def test_dump_format(self, line, tmp_path):
        timeline = line([(0.5, 'D', 1), (1.25, 'I', 0, 1)])
        text = dump_timeline(timeline)
        assert text.splitlines() == ["0.5\tD\t1", "1.25\tI\t0\t1"]
        out = tmp_path / "timeline.tsv"
        write_timeline(timeline, out)
        assert out.read_text() == text

    def test_seventeen_significant_digits(self, rng):
        timeline = build_timeline(DomainSpec.torus(3, 1), 1.0, 2.0, rng)
        for row, event in zip(dump_timeline(timeline).splitlines(), timeline.events):
            assert float(row.split('\t')[0]) == event.time
