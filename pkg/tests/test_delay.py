import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest

from zfdelay.config import CsiMode, SystemParams
from zfdelay.delay import (
    default_s_grid,
    kernel,
    log_kernel,
    optimize_s,
    optimize_schedule,
    pv_bound,
    scan_expected_service,
)
from zfdelay.errors import NoFeasibleSchedule
from zfdelay.service import build_mu_grid, quantized_service_mellin


@pytest.fixture(scope="module")
def two_cells(fig_budget):
    return build_mu_grid(fig_budget, 2)


def constant_service(grid, bits, error=0.0):
    """Service model delivering exactly ``bits`` per frame w.p. 1 - error.

    With a flat rate table the cell mixture collapses, so the transform is
    (1 - error) * exp(-s * bits) + error in closed form.
    """
    n = grid.count
    return quantized_service_mellin(
        grid, np.full(n, float(bits)), np.full(n, float(error)), 1
    )


class TestKernel:
    def test_closed_form(self):
        # f * ln M - ln(1 - e^{s a T} M) with M = e^{-s B}
        s, b, alpha, t, f = 0.02, 100.0, 10.0, 3, 5
        lm = -s * b
        want = f * lm - math.log1p(-math.exp(s * alpha * t + lm))
        assert log_kernel(lm, s, f, alpha, t) == pytest.approx(want, rel=1e-15)

    def test_divergence_is_inf(self):
        # growth term >= 0: arrivals outrun the service decay
        assert log_kernel(-0.1, 0.05, 4, 10.0, 3) == math.inf  # 0.05*30 > 0.1
        assert log_kernel(-1.5, 0.05, 4, 10.0, 3) == math.inf  # boundary: exactly 0
        assert log_kernel(-2.0, 0.05, 4, 10.0, 3) == pytest.approx(
            4 * -2.0 - math.log1p(-math.exp(0.05 * 30 - 2.0))
        )

    def test_zero_frames(self):
        lm = -2.0
        assert log_kernel(lm, 0.01, 0, 1.0, 1) == pytest.approx(
            -math.log1p(-math.exp(0.01 - 2.0))
        )

    def test_rejects_negative_frames(self):
        with pytest.raises(ValueError):
            log_kernel(-1.0, 0.01, -1, 1.0, 1)

    def test_wrapper_exponentiates(self, two_cells):
        sm = constant_service(two_cells, 100.0)
        lk = log_kernel(sm.log_value(0.02), 0.02, 5, 10.0, 3)
        assert kernel(sm, 0.02, 5, 10.0, 3) == pytest.approx(math.exp(lk), rel=1e-15)
        assert kernel(sm, 0.5, 5, 40.0, 3) == math.inf


class TestViolationBound:
    @pytest.mark.parametrize("s", [0.005, 0.01, 0.05])
    def test_split_window_mixture(self, two_cells, s):
        # w=16, T=3: five opportunities for two of three phases, six for the
        # third, so the ceil term carries weight 1/3
        b, alpha, t, w = 100.0, 10.0, 3, 16
        sm = constant_service(two_cells, b)
        num = (2.0 / 3.0) * math.exp(-5 * s * b) + (1.0 / 3.0) * math.exp(-6 * s * b)
        den = -math.expm1(s * (alpha * t - b))
        assert pv_bound(sm, alpha, t, w, s) == pytest.approx(num / den, rel=1e-12)

    def test_divisible_window_single_term(self, two_cells):
        b, alpha, s = 100.0, 10.0, 0.01
        sm = constant_service(two_cells, b)
        want = math.exp(-4 * s * b) / -math.expm1(s * (3 * alpha - b))
        assert pv_bound(sm, alpha, 3, 12, s) == pytest.approx(want, rel=1e-12)

    def test_clipped_to_one(self, two_cells):
        sm = constant_service(two_cells, 100.0)
        assert pv_bound(sm, 99.0, 1, 1, 1e-6) == 1.0
        assert pv_bound(sm, 200.0, 1, 16, 0.01) == 1.0  # divergent kernel

    def test_monotone_in_load(self, two_cells):
        sm = constant_service(two_cells, 100.0, error=0.1)
        alphas = np.linspace(5.0, 85.0, 17)
        vals = [pv_bound(sm, float(a), 1, 8, 0.02) for a in alphas]
        assert all(x <= y + 1e-15 for x, y in zip(vals, vals[1:]))


class TestOptimizeS:
    def test_overload_reports_unstable(self, two_cells):
        sm = constant_service(two_cells, 100.0)
        res = optimize_s(sm, 100.0, 1, 16)
        assert (res.pv_bound, res.stable) == (1.0, False)
        assert math.isnan(res.s_star)
        res = optimize_s(sm, 51.0, 2, 16)  # alpha*T = 102 > 100
        assert not res.stable

    def test_rejects_negative_load(self, two_cells):
        sm = constant_service(two_cells, 100.0)
        with pytest.raises(ValueError):
            optimize_s(sm, -1.0, 1, 16)

    def test_beats_dense_grid(self, two_cells):
        sm = constant_service(two_cells, 100.0, error=0.2)
        for alpha in (20.0, 50.0, 70.0):
            res = optimize_s(sm, alpha, 1, 16)
            dense = min(
                pv_bound(sm, alpha, 1, 16, float(s))
                for s in np.geomspace(1e-4, 1.0, 400)
            )
            assert res.stable
            assert res.pv_bound <= dense * (1 + 1e-9)

    def test_optimum_monotone_in_load(self, two_cells):
        sm = constant_service(two_cells, 100.0, error=0.1)
        vals = [optimize_s(sm, a, 1, 12).pv_bound for a in (10.0, 30.0, 60.0, 80.0)]
        assert all(x <= y + 1e-15 for x, y in zip(vals, vals[1:]))

    def test_reported_terms_match_window_split(self, two_cells):
        sm = constant_service(two_cells, 100.0, error=0.05)
        res = optimize_s(sm, 20.0, 3, 16)
        assert [t.frames for t in res.kernel_terms] == [5, 6]
        assert [t.weight for t in res.kernel_terms] == pytest.approx([2 / 3, 1 / 3])

    def test_grid_below_convergence_window_extends(self, two_cells):
        # every grid point sits past the divergence knee; the optimizer must
        # stretch the scan downward instead of declaring the load hopeless
        sm = constant_service(two_cells, 10.0, error=0.5)  # mean 5 bits/frame
        res = optimize_s(sm, 2.0, 1, 4, s_grid=[0.5, 1.0])
        assert res.stable
        assert res.s_star < 0.5


def _schedule_params(k_tot, deadline, n_antennas=8):
    return SystemParams(
        n_antennas=n_antennas, n_users_total=k_tot, superframe_len=1,
        n_slot_symbols=400, n_ul_train=10, n_dl_train=10, p_total=100.0,
        p_uplink=10**1.5, arrival_rate=0.0, deadline=deadline,
        csi_mode=CsiMode.IMPERFECT,
    )


class TestOptimizeSchedule:
    def test_picks_smallest_bound(self, two_cells):
        # T=1 serves every slot, T=2 every other slot with the same per-frame
        # bits: more opportunities in the window always wins
        params = dataclasses.replace(_schedule_params(2, 8), arrival_rate=20.0)

        def builder(t, split):
            return [constant_service(two_cells, 100.0, error=0.1)]

        res = optimize_schedule(params, builder)
        assert res.k_avg_used == Fraction(2, 1)
        assert res.stable

    def test_stable_clamp_beats_unstable_clamp(self, two_cells):
        # both schedules clamp to pv=1, but only T=1 can carry the load;
        # the tie must break toward the workable schedule, not the lighter one
        params = dataclasses.replace(_schedule_params(2, 8), arrival_rate=4.9)

        def builder(t, split):
            if t == 1:
                return [constant_service(two_cells, 10.0, error=0.5)]  # mean 5.0
            return [constant_service(two_cells, 8.0)]  # mean 8 < 4.9 * 2

        res = optimize_schedule(params, builder)
        assert res.pv_bound == 1.0
        assert res.stable
        assert res.k_avg_used == Fraction(2, 1)

    def test_no_feasible_superframe(self, two_cells):
        params = _schedule_params(16, 4, n_antennas=2)  # needs T >= 8, window caps at 4

        def builder(t, split):
            return [constant_service(two_cells, 100.0)]

        with pytest.raises(NoFeasibleSchedule):
            optimize_schedule(params, builder)

    def test_empty_builder(self):
        params = _schedule_params(2, 8)
        with pytest.raises(NoFeasibleSchedule):
            optimize_schedule(params, lambda t, split: [])


class TestExpectedServiceScan:
    def test_reports_best_model_per_loading(self, two_cells):
        params = _schedule_params(4, 8)

        def builder(t, split):
            return [
                constant_service(two_cells, 60.0 * t),
                constant_service(two_cells, 100.0, error=0.5),
            ]

        rows = scan_expected_service(params, builder)
        loadings = [k for k, _ in rows]
        assert loadings == [Fraction(4, t) for t in range(1, 5)]
        for (k, rate), t in zip(rows, range(1, 5)):
            assert rate == pytest.approx(max(60.0, 50.0 / t), rel=1e-12)


class TestDefaultGrid:
    def test_positive_and_increasing(self):
        g = default_s_grid()
        assert np.all(g > 0)
        assert np.all(np.diff(g) > 0)
