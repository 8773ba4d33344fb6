import math

import numpy as np
import pytest

from zfdelay.config import CsiMode, SystemParams, derive_budget, superframe_partition
from zfdelay.errors import DomainError
from zfdelay.queue_sim import (
    AnalyticCellService,
    FullChannelService,
    IdealService,
    _count_violations,
    _service_events,
    reference_violations,
    simulate_queue,
)
from zfdelay.rate_policy import PolicyFamily, policy_service_mellin, throughput_policy
from zfdelay.service import build_mu_grid, mean_rate_ideal


class ScriptedService:
    """Feeds a fixed per-frame bit sequence; slot offset always zero."""

    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=float)

    def draw_frames(self, n_frames, rng):
        assert n_frames <= len(self.bits)
        return self.bits[:n_frames].copy(), np.zeros(n_frames, dtype=np.int64)


class TestEventRecursion:
    def test_departures_increase_and_respect_arrivals(self):
        svc = ScriptedService(np.r_[np.zeros(3), 50.0, np.zeros(4), 7.0, 3.0])
        ev_slot, ev_d = _service_events(svc, 2.0, 1, 10, None)
        assert np.all(np.diff(ev_slot) > 0)
        assert np.all(np.diff(ev_d) > 0)
        # a queue never ships more than has arrived by the serving slot
        assert np.all(ev_d <= 2.0 * (ev_slot + 1) + 1e-12)

    def test_hand_counted_example(self):
        # alpha=1, deadline=2: service lands 3 bits at slot 2, 2 at slot 6,
        # 4 at slot 8; slots 4 and 6 then miss their lookahead
        svc = ScriptedService([0, 0, 10, 0, 0, 0, 2, 0, 100, 0])
        trace = simulate_queue(
            svc, alpha=1.0, superframe_len=1, deadline=2,
            n_slots=10, seed=0, warmup=0,
        )
        assert trace.violations == 2
        assert trace.n_measured == 9
        assert trace.pv_hat == pytest.approx(2 / 9)
        assert trace.max_delay_seen == 3

    def test_interval_count_matches_slotwise_reference(self):
        rng = np.random.Generator(np.random.Philox(42))
        for _ in range(40):
            n_slots = int(rng.integers(40, 400))
            n_ev = int(rng.integers(0, 30))
            ev_slot = np.sort(rng.choice(n_slots, size=n_ev, replace=False)).astype(np.int64)
            ev_d = np.cumsum(rng.exponential(5.0, size=n_ev))
            alpha = float(rng.uniform(0.05, 4.0))
            deadline = int(rng.integers(1, 12))
            t_first = int(rng.integers(0, 10))
            t_last = n_slots - deadline
            if t_last < t_first:
                continue
            fast = _count_violations(ev_slot, ev_d, alpha, deadline, t_first, t_last, n_slots)
            slow = reference_violations(ev_slot, ev_d, alpha, deadline, t_first, t_last)
            assert fast == slow

    def test_tie_at_breakpoint_is_not_a_violation(self):
        # arrivals exactly equal to departures must never count
        ev_slot = np.array([4], dtype=np.int64)
        ev_d = np.array([5.0])
        n = _count_violations(ev_slot, ev_d, 1.0, 0, 5, 5, 10)
        assert n == reference_violations(ev_slot, ev_d, 1.0, 0, 5, 5) == 0


class TestSimulateQueue:
    def test_zero_load_never_violates(self):
        svc = ScriptedService(np.zeros(50))
        trace = simulate_queue(svc, alpha=0.0, superframe_len=1, deadline=4,
                               n_slots=50, seed=3, warmup=0)
        assert trace.violations == 0
        assert trace.pv_hat == 0.0
        assert trace.max_delay_seen == 0

    def test_dead_service_always_violates(self):
        svc = ScriptedService(np.zeros(60))
        trace = simulate_queue(svc, alpha=1.0, superframe_len=1, deadline=4,
                               n_slots=60, seed=3, warmup=0)
        # every measured slot with arrivals misses its deadline (t=0 has none)
        assert trace.violations == trace.n_measured - 1
        assert trace.max_delay_seen == 60 - 1  # censored at the horizon
        warm = simulate_queue(svc, alpha=1.0, superframe_len=1, deadline=4,
                              n_slots=60, seed=3, warmup=5)
        assert warm.pv_hat == 1.0

    def test_ample_service_never_violates(self):
        svc = ScriptedService(np.full(80, 1e6))
        trace = simulate_queue(svc, alpha=5.0, superframe_len=1, deadline=1,
                               n_slots=80, seed=3, warmup=0)
        assert trace.violations == 0
        assert trace.max_delay_seen == 0

    def test_measurement_window_arithmetic(self):
        svc = ScriptedService(np.zeros(100))
        trace = simulate_queue(svc, alpha=1.0, superframe_len=1, deadline=5,
                               n_slots=100, seed=3, warmup=20)
        assert trace.n_measured == (100 - 5) - 20 + 1
        assert trace.n_slots == 100
        assert trace.seed == 3

    def test_rejects_bad_arguments(self):
        svc = ScriptedService(np.zeros(10))
        with pytest.raises(DomainError):
            simulate_queue(svc, alpha=-1.0, superframe_len=1, deadline=4,
                           n_slots=10, seed=0)
        with pytest.raises(DomainError):
            simulate_queue(svc, alpha=1.0, superframe_len=4, deadline=2,
                           n_slots=10, seed=0)
        with pytest.raises(ValueError):
            simulate_queue(svc, alpha=1.0, superframe_len=1, deadline=4,
                           n_slots=10, seed=0, warmup=50)


@pytest.fixture(scope="module")
def fbl_params():
    return SystemParams(
        n_antennas=8, n_users_total=5, superframe_len=1, n_slot_symbols=400,
        n_ul_train=10, n_dl_train=10, p_total=100.0, p_uplink=10**1.5,
        arrival_rate=0.0, deadline=12, csi_mode=CsiMode.IMPERFECT_FBL,
    )


class TestServiceSamplers:
    def test_analytic_cells_deterministic_when_error_free(self, fig_params, fig_budget, fig_split):
        grid = build_mu_grid(fig_budget, 8)
        from zfdelay.rate_policy import RatePolicy

        pol = RatePolicy(grid=grid, rates=np.full(8, 3.0), errors=np.zeros(8),
                         s_used=None, bound_kind="upper_correlated")
        svc = AnalyticCellService(fig_split, [(1.0, fig_budget, pol)])
        bits, offsets = svc.draw_frames(200, np.random.Generator(np.random.Philox(1)))
        np.testing.assert_allclose(bits, fig_budget.n_data * 3.0)
        np.testing.assert_array_equal(offsets, 0)

    def test_analytic_cells_error_rate(self, fig_params, fig_budget, fig_split):
        grid = build_mu_grid(fig_budget, 8)
        from zfdelay.rate_policy import RatePolicy

        pol = RatePolicy(grid=grid, rates=np.full(8, 3.0), errors=np.full(8, 0.25),
                         s_used=None, bound_kind="upper_correlated")
        svc = AnalyticCellService(fig_split, [(1.0, fig_budget, pol)])
        bits, _ = svc.draw_frames(40_000, np.random.Generator(np.random.Philox(1)))
        fail = np.mean(bits == 0.0)
        assert fail == pytest.approx(0.25, abs=0.01)

    def test_needs_a_group(self, fig_split):
        with pytest.raises(ValueError):
            AnalyticCellService(fig_split, [])

    def test_ideal_service_mean_matches_transform_mean(self, fig_params):
        ideal = SystemParams(
            n_antennas=8, n_users_total=5, superframe_len=1, n_slot_symbols=400,
            n_ul_train=0, n_dl_train=0, p_total=100.0, p_uplink=0.0,
            arrival_rate=0.0, deadline=16, csi_mode=CsiMode.IDEAL,
        )
        budget = derive_budget(ideal, 5)
        split = superframe_partition(ideal)
        svc = IdealService(split, [(1.0, budget)])
        bits, _ = svc.draw_frames(60_000, np.random.Generator(np.random.Philox(9)))
        want = budget.n_data * mean_rate_ideal(budget)
        assert np.mean(bits) == pytest.approx(want, rel=0.01)

    def test_full_channel_safe_rate_always_delivers(self, fig_params, fig_budget, fig_split):
        # a rate far below any plausible capacity never fails the outage coin
        grid = build_mu_grid(fig_budget, 8)
        from zfdelay.rate_policy import RatePolicy

        pol = RatePolicy(grid=grid, rates=np.full(8, 1e-3), errors=np.zeros(8),
                         s_used=None, bound_kind="upper_correlated")
        svc = FullChannelService(fig_split, [(1.0, fig_budget, pol)], 8)
        bits, _ = svc.draw_frames(2000, np.random.Generator(np.random.Philox(2)))
        np.testing.assert_allclose(bits, fig_budget.n_data * 1e-3)

    def test_seed_determinism(self, fig_params, fig_budget, fig_split):
        pol = throughput_policy(build_mu_grid(fig_budget, 32), fig_budget,
                                "upper_correlated", n_rates=64)
        svc = AnalyticCellService(fig_split, [(1.0, fig_budget, pol)])
        kw = dict(alpha=900.0, superframe_len=1, deadline=12, n_slots=20_000)
        a = simulate_queue(svc, seed=7, **kw)
        b = simulate_queue(svc, seed=7, **kw)
        c = simulate_queue(svc, seed=8, **kw)
        assert a == b
        assert (a.violations, a.max_delay_seen) != (c.violations, c.max_delay_seen)


class TestBoundCoinDominatesTrueChannel:
    def test_near_critical_load_anchor(self, fbl_params):
        # the analytic sampler fails frames with the *bound* error, so its
        # violation count sits above the full channel simulation's
        split = superframe_partition(fbl_params)
        fam = PolicyFamily(fbl_params, "fbl_upper_correlated")
        groups = fam.group_policies(split, 0.01)
        _, budget, pol = groups[0]
        mean_bits = policy_service_mellin(pol, budget.n_data).bits_per_frame
        assert mean_bits == pytest.approx(1197.3248031339049, rel=1e-9)
        alpha = 0.995 * mean_bits
        kw = dict(alpha=alpha, superframe_len=1, deadline=12, n_slots=400_000)
        tr_a = simulate_queue(AnalyticCellService(split, groups), seed=11, **kw)
        tr_f = simulate_queue(
            FullChannelService(split, groups, 8, finite_blocklength=True), seed=12, **kw
        )
        assert (tr_a.violations, tr_f.violations) == (457, 432)
        assert tr_a.violations >= 10 and tr_f.violations >= 10
        se = math.hypot(
            math.sqrt(tr_a.pv_hat * (1 - tr_a.pv_hat) / tr_a.n_measured),
            math.sqrt(tr_f.pv_hat * (1 - tr_f.pv_hat) / tr_f.n_measured),
        )
        assert tr_a.pv_hat >= tr_f.pv_hat - 3 * se
