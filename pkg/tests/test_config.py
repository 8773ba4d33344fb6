from fractions import Fraction

import pytest

from zfdelay.config import (
    CsiMode,
    SystemParams,
    deadline_partition,
    derive_budget,
    superframe_partition,
)
from zfdelay.errors import (
    DeadlineShorterThanSuperframe,
    InfeasibleSchedule,
    KExceedsAntennas,
    TrainingOverheadExceedsSlot,
)


def make_params(**over):
    base = dict(
        n_antennas=8,
        n_users_total=5,
        superframe_len=1,
        n_slot_symbols=400,
        n_ul_train=10,
        n_dl_train=10,
        p_total=100.0,
        p_uplink=10**1.5,
        arrival_rate=0.0,
        deadline=16,
        csi_mode=CsiMode.IMPERFECT,
    )
    base.update(over)
    return SystemParams(**base)


class TestModes:
    def test_estimation_flags(self):
        assert not CsiMode.IDEAL.uses_estimation
        assert CsiMode.IMPERFECT.uses_estimation
        assert CsiMode.IMPERFECT_FBL.uses_estimation

    def test_fbl_flags(self):
        assert not CsiMode.IDEAL.finite_blocklength
        assert not CsiMode.IMPERFECT.finite_blocklength
        assert CsiMode.IMPERFECT_FBL.finite_blocklength


class TestDeriveBudget:
    def test_training_overhead_carved_out(self):
        b = derive_budget(make_params(), 5)
        assert b.n_data == 400 - 5 * 20 == 300
        assert b.m == 8 - 5 + 1 == 4
        assert b.p_per_user == pytest.approx(20.0)

    def test_single_user_overhead(self):
        assert derive_budget(make_params(), 1).n_data == 380

    def test_estimation_error_variance(self):
        b = derive_budget(make_params(), 5)
        assert b.sigma_e_sq == pytest.approx(1.0 / (1.0 + 10**1.5 * 10), rel=1e-12)

    def test_ideal_mode_has_no_overhead(self):
        b = derive_budget(make_params(csi_mode=CsiMode.IDEAL), 5)
        assert b.n_data == 400
        assert b.sigma_e_sq == 0.0

    def test_n_data_strictly_decreasing_in_k(self):
        p = make_params()
        sizes = [derive_budget(p, k).n_data for k in range(1, 9)]
        assert all(a > b for a, b in zip(sizes, sizes[1:]))

    def test_too_many_users_for_zero_forcing(self):
        with pytest.raises(KExceedsAntennas):
            derive_budget(make_params(), 9)

    def test_overhead_eats_whole_slot(self):
        with pytest.raises(TrainingOverheadExceedsSlot):
            derive_budget(make_params(n_slot_symbols=100), 5)


class TestSuperframePartition:
    def test_divisible_load_degenerates(self):
        split = superframe_partition(make_params(n_users_total=120, superframe_len=40))
        assert (split.k_a, split.k_b) == (3, 3)
        assert split.t_b == 0
        assert split.p_a == 1
        assert split.k_avg == 3

    def test_fractional_load_two_groups(self):
        split = superframe_partition(make_params(n_users_total=120, superframe_len=36))
        assert (split.k_a, split.k_b) == (4, 3)
        assert (split.t_a, split.t_b) == (12, 24)
        assert split.p_a == Fraction(2, 5)
        assert split.p_b == Fraction(3, 5)

    def test_lone_heavy_slot(self):
        split = superframe_partition(make_params(n_users_total=121, superframe_len=40))
        assert (split.k_a, split.k_b) == (4, 3)
        assert (split.t_a, split.t_b) == (1, 39)

    @pytest.mark.parametrize("k_tot,t", [(120, 36), (121, 40), (7, 3), (5, 4), (97, 13)])
    def test_user_count_is_exact(self, k_tot, t):
        split = superframe_partition(
            make_params(n_antennas=16, n_users_total=k_tot, superframe_len=t)
        )
        assert split.t_a * split.k_a + split.t_b * split.k_b == k_tot
        assert split.p_a + split.p_b == 1
        assert split.k_avg == Fraction(k_tot, t)
        # p_a is the chance that a uniformly chosen user sits in a heavy slot
        assert split.p_a == Fraction(split.t_a * split.k_a, k_tot)

    def test_spatial_limit(self):
        with pytest.raises(InfeasibleSchedule):
            superframe_partition(make_params(n_users_total=30, superframe_len=3))

    def test_more_slots_than_users(self):
        with pytest.raises(InfeasibleSchedule):
            superframe_partition(make_params(n_users_total=3, superframe_len=4))


class TestDeadlinePartition:
    def test_divisible_window(self):
        ds = deadline_partition(120, 40)
        assert (ds.n_frames_hi, ds.n_frames_lo) == (3, 3)
        assert ds.p_group2 == 0

    def test_fractional_window(self):
        ds = deadline_partition(120, 36)
        assert (ds.n_frames_hi, ds.n_frames_lo) == (4, 3)
        assert ds.p_group2 == Fraction(1, 3)
        assert ds.p_group1 == Fraction(2, 3)

    def test_window_below_one_superframe(self):
        with pytest.raises(DeadlineShorterThanSuperframe):
            deadline_partition(30, 40)

    @pytest.mark.parametrize("w,t", [(16, 3), (16, 5), (7, 2), (23, 4), (9, 9), (10, 1)])
    def test_matches_phase_count_law(self, w, t):
        """mod(w,t) of the t slot phases catch the extra opportunity."""
        ds = deadline_partition(w, t)
        counts = [len(range(phase, w, t)) for phase in range(t)]
        assert max(counts) == ds.n_frames_hi or ds.p_group2 == 0
        assert min(counts) == ds.n_frames_lo
        lucky = sum(1 for c in counts if c == ds.n_frames_hi)
        if ds.p_group2 > 0:
            assert Fraction(lucky, t) == ds.p_group2


class TestSystemParams:
    def test_rejects_nonpositive_counts(self):
        with pytest.raises(ValueError):
            make_params(n_antennas=0)
        with pytest.raises(ValueError):
            make_params(n_slot_symbols=-1)

    def test_rejects_bad_powers(self):
        with pytest.raises(ValueError):
            make_params(p_total=0.0)
        with pytest.raises(ValueError):
            make_params(p_uplink=-1.0)

    def test_with_superframe(self):
        p = make_params().with_superframe(5)
        assert p.superframe_len == 5
        assert p.n_users_total == 5
