import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_problem
from test_adiabatic import fold_onset
from tristate_prop.adiabatic import solve_grid
from tristate_prop.core import FieldState, SystemKind
from tristate_prop.diagnostics import (breakdown_length, conservation_residual, conserved_density,
                                       efficiency_curve, fold_sign_condition, run_diagnostics,
                                       transfer_efficiency, z_pump_estimate, z_pump_measured,
                                       z_stirap_estimate)
from tristate_prop.errors import FoldError, InvalidParameterError


class TestBreakdown:
    @pytest.mark.parametrize("q", [0.5, 1.0])
    def test_none_for_weak_pump(self, q):
        b = breakdown_length(make_problem(q), 10.0, 64)
        assert b.z_break is None and not b.sign_condition

    def test_finite_and_decreasing(self):
        zs = [breakdown_length(make_problem(q)).z_break for q in (1.5, 2.0, 3.0)]
        assert all(z is not None for z in zs)
        assert zs[0] > zs[1] > zs[2]

    @pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
    def test_matches_slope_estimate(self, q):
        b = breakdown_length(make_problem(q))
        assert b.sign_condition
        assert b.z_break == pytest.approx(fold_onset(q), rel=2e-3)

    def test_rejects_bad_scan(self):
        with pytest.raises(InvalidParameterError):
            breakdown_length(make_problem(2.0), 0.0)

    def test_beyond_scan_is_absent(self):
        assert breakdown_length(make_problem(2.0), z_scan_max=0.2).z_break is None

    @given(q=st.floats(0.1, 1.0), a=st.floats(5.0, 20.0), t_d=st.floats(1.0, 5.0))
    @settings(max_examples=12, deadline=None)
    def test_weak_pump_never_breaks(self, q, a, t_d):
        assert breakdown_length(make_problem(q, a=a, t_d=t_d), 10.0).z_break is None

    def test_ladder_breaks_for_counter_intuitive_order(self):
        # the Stokes coupling enters with flipped sign, so f' carries (q + 1)
        # and the arrival map reverses whenever theta0 rises
        counter = breakdown_length(make_problem(1.0, SystemKind.XI, t_d=2.5))
        intuitive = breakdown_length(make_problem(1.0, SystemKind.XI, t_d=-2.5))
        assert counter.z_break is not None and counter.sign_condition
        assert intuitive.z_break is None and not intuitive.sign_condition

    def test_ladder_onset_equals_lambda_with_shifted_ratio(self):
        # (q_p + q_s) plays the role of (q_p - q_s): ladder q = 1 ~ Lambda q = 3
        xi = breakdown_length(make_problem(1.0, SystemKind.XI)).z_break
        lam = breakdown_length(make_problem(3.0)).z_break
        assert xi == pytest.approx(lam, rel=1e-3)

    def test_vee_is_mirror_of_lambda(self):
        assert breakdown_length(make_problem(0.5, SystemKind.VEE)).z_break == pytest.approx(
            breakdown_length(make_problem(1.5)).z_break, rel=1e-3)
        assert breakdown_length(make_problem(2.0, SystemKind.VEE)).z_break is None
        assert breakdown_length(make_problem(2.0, SystemKind.VEE, t_d=-2.5)).z_break is not None

    def test_sign_condition_tracks_ordering(self):
        assert fold_sign_condition(make_problem(2.0))
        assert not fold_sign_condition(make_problem(2.0, t_d=-2.5))
        assert fold_sign_condition(make_problem(0.5, t_d=-2.5))


class TestPumpLength:
    @pytest.mark.parametrize("q,expect", [(1.0, 3.0), (0.5, 10.0), (2.0, 1.0)])
    def test_estimate(self, q, expect):
        assert z_pump_estimate(q) == expect

    @pytest.mark.parametrize("q", [0.0, -1.0])
    def test_estimate_rejects(self, q):
        with pytest.raises(InvalidParameterError):
            z_pump_estimate(q)

    def test_measured_equal_couplings(self):
        z = z_pump_measured(make_problem(1.0), 0.1)
        assert 2.4 <= z <= 3.6

    def test_measured_half_coupling_beyond_five(self):
        # the leading-tail plateau (fixed angle theta0(-inf)) keeps the pump
        # peak above 10% for every length, so the scan ends without a hit
        prob = make_problem(0.5)
        assert z_pump_measured(prob, 0.1) is None
        peak5 = solve_grid(prob, [5.0]).omega_p.max()
        assert peak5 > 0.1 * prob.omega0

    def test_empty_scan(self):
        assert z_pump_measured(make_problem(1.0), 0.1, []) is None

    @pytest.mark.parametrize("thr", [0.0, 1.0, -0.5])
    def test_bad_threshold(self, thr):
        with pytest.raises(InvalidParameterError):
            z_pump_measured(make_problem(1.0), thr)

    def test_scan_stops_at_fold(self):
        assert z_pump_measured(make_problem(2.0), 0.1) is None


class TestStirap:
    @pytest.mark.parametrize("t_d,q,expect", [(5.0, 1.0, 2.5), (2.5, 1.0, 1.25), (0.0, 1.0, 0.0),
                                              (5.0, 2.0, 1.0), (2.5, None, 1.25)])
    def test_estimate(self, t_d, q, expect):
        assert z_stirap_estimate(t_d, 1.0, q) == expect

    def test_independent_of_q(self):
        assert z_stirap_estimate(2.5, 1.0, 0.5) == z_stirap_estimate(2.5, 1.0, 1.0)

    def test_rejects(self):
        with pytest.raises(InvalidParameterError):
            z_stirap_estimate(-1.0)
        with pytest.raises(InvalidParameterError):
            z_stirap_estimate(1.0, 0.0)

    def test_entrance_efficiency(self):
        assert transfer_efficiency(make_problem(1.0), 0.0) == pytest.approx(0.9933, abs=1e-4)

    def test_longer_delay_transfers_better(self):
        long_ = transfer_efficiency(make_problem(1.0, t_d=5.0), 1.6)
        short = transfer_efficiency(make_problem(1.0, t_d=2.5), 1.6)
        assert long_ >= 0.9
        assert short < long_

    def test_undefined_after_fold(self):
        with pytest.raises(FoldError):
            transfer_efficiency(make_problem(2.0), 0.5)

    def test_curve_marks_folds(self):
        curve = efficiency_curve(make_problem(2.0), [0.0, 0.1, 0.5])
        assert curve[-1] == (0.5, None)
        assert all(0 <= e <= 1 for _, e in curve[:2])


class TestConservation:
    def test_adiabatic_residual(self):
        prob = make_problem(0.5)
        sol = solve_grid(prob, np.linspace(0, 3, 7))
        assert conservation_residual(sol.fields, prob) < 1e-10
        assert conservation_residual(sol.fields, prob, pointwise=True) < 1e-10

    def test_ladder_uses_difference(self):
        prob = make_problem(1.0, SystemKind.XI)
        f = FieldState(np.array([0.0]), np.zeros(1), np.array([[3.0]]), np.array([[2.0]]))
        assert conserved_density(f, prob)[0, 0] == pytest.approx(9.0 - 4.0)

    def test_detects_drift(self):
        prob = make_problem(1.0)
        tau = prob.tau
        p0, s0 = prob.pulses.omega_p(tau), prob.pulses.omega_s(tau)
        f = FieldState(np.array([0.0, 1.0]), tau, np.stack([p0, 0.9 * p0]), np.stack([s0, s0]))
        res = conservation_residual(f, prob)
        assert 0.05 < res < 0.2

    def test_needs_two_slices(self):
        prob = make_problem(1.0)
        with pytest.raises(InvalidParameterError):
            conservation_residual(solve_grid(prob, [0.0]).fields, prob)


class TestReport:
    def test_json_fields(self):
        prob = make_problem(1.0, z=(0.0, 0.8, 1.6))
        rep = run_diagnostics(prob)
        d = json.loads(rep.to_json())
        for key in ("z_break", "z_pump_est", "z_pump_measured", "z_stirap_est", "efficiency_curve",
                    "conservation_residual"):
            assert key in d
        assert d["z_break"] is None
        assert d["z_pump_est"] == 3.0
        assert d["z_stirap_est"] == 1.25
        assert all(0 <= e <= 1 for _, e in d["efficiency_curve"])
        assert d["conservation_residual"] < 1e-10
        assert d["z_pump_measured"] > 0

    def test_breaking_case(self):
        rep = run_diagnostics(make_problem(2.0, z=(0.0, 0.1)))
        assert rep.z_break is not None and rep.sign_condition
