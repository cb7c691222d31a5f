import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from conftest import make_problem
from tristate_prop.adiabatic import solve_grid
from tristate_prop.core import AmplitudeState, SystemKind
from tristate_prop.diagnostics import conservation_residual
from tristate_prop.errors import AlignmentError, DivergenceError, StepSizeError
from tristate_prop.oracle import (COMPARED, OracleConfig, compare, integrate_slice, polarization_sources,
                                  propagate, trapped_state)


def entrance(problem, cfg):
    tau = cfg.tau_grid(problem)
    return tau, problem.pulses.omega_p(tau).astype(complex), problem.pulses.omega_s(tau).astype(complex)


def final_pump(problem, dz, dt, z_max=1.0):
    h = propagate(problem, OracleConfig(dz=dz, dt=dt), z_max, z_out=[z_max], keep_all=False)
    return h.e_p[-1]


def observed_order(coarse, mid, fine):
    return np.log2(np.linalg.norm(coarse - mid) / np.linalg.norm(mid - fine))


class TestTrappedState:
    def test_no_field_is_ground(self):
        assert np.array_equal(trapped_state(0.0, 0.0), [1, 0, 0])

    @given(ep=st.floats(0.0, 50.0), es=st.floats(1e-3, 50.0), ph=st.floats(-np.pi, np.pi))
    @settings(max_examples=40, deadline=None)
    def test_dark_and_normalized(self, ep, es, ph):
        e_p, e_s = ep * np.exp(1j * ph), complex(es)
        b = trapped_state(e_p, e_s)
        assert np.linalg.norm(b) == pytest.approx(1.0, abs=1e-12)
        # the intermediate-level drive vanishes in the trapped state
        assert abs(e_p * b[0] + e_s * b[2]) < 1e-12 * max(ep, es)


class TestSlice:
    def test_zero_fields_hold_state(self):
        tau = np.linspace(-5, 5, 101)
        z = np.zeros(tau.size, complex)
        amps = integrate_slice(z, z, tau, OracleConfig())
        assert np.all(amps.b1 == 1) and np.all(amps.b2 == 0) and np.all(amps.b3 == 0)

    def test_stokes_only_leaves_ground_untouched(self):
        p = make_problem(1.0)
        cfg = OracleConfig(dt=0.005)
        tau, _, e_s = entrance(p, cfg)
        amps = integrate_slice(np.zeros_like(e_s), e_s, tau, cfg)
        assert np.max(abs(abs(amps.b1) - 1)) < 1e-12

    def test_norm_preserved(self):
        p = make_problem(1.0)
        cfg = OracleConfig(dt=0.005)
        tau, e_p, e_s = entrance(p, cfg)
        assert np.max(abs(integrate_slice(e_p, e_s, tau, cfg).norm - 1)) < 1e-8

    def test_decay_drains_norm(self):
        p = make_problem(1.0, a=5.0)
        cfg = OracleConfig(dt=0.005, gamma=0.5)
        tau, e_p, e_s = entrance(p, cfg)
        norm = integrate_slice(e_p, e_s, tau, cfg).norm
        assert np.all(np.diff(norm) <= 1e-14) and norm[-1] < 1 - 1e-4

    def test_intermediate_population_tracks_angle_rate(self):
        # adiabatic leakage: |b2| ~ |dtheta/dtau| / W near the overlap
        p = make_problem(1.0)
        cfg = OracleConfig(dt=0.005)
        tau, e_p, e_s = entrance(p, cfg)
        amps = integrate_slice(e_p, e_s, tau, cfg)
        theta = np.arctan2(e_p.real, e_s.real)
        est = (np.gradient(theta, tau) / np.hypot(e_p.real, e_s.real))**2
        ratio = np.max(abs(amps.b2)**2) / np.max(est)
        assert 0.5 < ratio < 2.0

    def test_counter_intuitive_transfer(self):
        p = make_problem(1.0)
        cfg = OracleConfig(dt=0.005)
        tau, e_p, e_s = entrance(p, cfg)
        assert abs(integrate_slice(e_p, e_s, tau, cfg).b3[-1])**2 > 0.99

    def test_step_guard(self):
        p = make_problem(1.0)
        cfg = OracleConfig(dt=0.02)
        tau, e_p, e_s = entrance(p, cfg)
        with pytest.raises(StepSizeError):
            integrate_slice(e_p, e_s, tau, cfg)

    def test_rejects_nonpositive_steps(self):
        with pytest.raises(StepSizeError):
            OracleConfig(dz=0.0)
        with pytest.raises(StepSizeError):
            OracleConfig(dt=-1e-3)

    def test_fourth_order_in_tau(self):
        # window length 20 makes the three grids nest exactly
        p = make_problem(1.0, a=5.0, t_d=4.0)
        finals = []
        for dt in (0.016, 0.008, 0.004):
            cfg = OracleConfig(dt=dt)
            tau, e_p, e_s = entrance(p, cfg)
            finals.append(integrate_slice(e_p, e_s, tau, cfg).b3[-1])
        order = np.log2(abs(finals[0] - finals[1]) / abs(finals[1] - finals[2]))
        assert order == pytest.approx(4.0, abs=0.5)


class TestSources:
    def setup_method(self):
        self.p = make_problem(2.0)
        self.e = np.array([3.0 + 1.0j, 2.0, 0.5j])

    def test_no_coherence_no_source(self):
        amps = AmplitudeState(np.ones(3, complex), np.zeros(3, complex), np.zeros(3, complex))
        r = polarization_sources(amps, self.e, self.e, self.p)
        assert np.all(r.d_e_p == 0) and np.all(r.d_e_s == 0)
        assert np.all(r.d_omega_p == 0) and np.all(r.d_phi_s == 0)

    def test_resonant_following_is_phase_free(self):
        e = np.array([3.0, 2.0, 1.0], complex)
        amps = AmplitudeState(np.full(3, 0.8 + 0j), np.full(3, 0.1j), np.full(3, -0.59 + 0j))
        r = polarization_sources(amps, e, e, self.p)
        assert np.all(r.d_phi_p == 0) and np.all(r.d_phi_s == 0)
        assert np.all(r.d_omega_p != 0)

    @pytest.mark.parametrize("kind", list(SystemKind))
    def test_manufactured_values(self, kind):
        p = make_problem(2.0, kind)
        b1, b2, b3 = 0.6 + 0.2j, 0.1 - 0.3j, -0.5 + 0.4j
        amps = AmplitudeState(np.array([b1]), np.array([b2]), np.array([b3]))
        s_p, s_s = p.signs
        r = polarization_sources(amps, np.array([1.0 + 0j]), np.array([2.0j]), p)
        scale = p.omega0**2 / abs(p.q_s)
        assert r.d_e_p[0] == pytest.approx(-1j * scale * s_p * p.q_p * np.conj(b1) * b2)
        assert r.d_e_s[0] == pytest.approx(-1j * scale * s_s * p.q_s * np.conj(b3) * b2)
        # magnitude/phase split for E_s = 2i
        rot = np.exp(-0.5j * np.pi) * r.d_e_s[0]
        assert r.d_omega_s[0] == pytest.approx(rot.real)
        assert r.d_phi_s[0] == pytest.approx(rot.imag / 2.0)

    def test_phase_rate_zeroed_in_tail(self):
        amps = AmplitudeState(np.array([1.0 + 0j]), np.array([0.5j]), np.array([0.0j]))
        r = polarization_sources(amps, np.array([1e-30 + 0j]), np.array([1e-30 + 0j]), self.p)
        assert r.d_phi_p[0] == 0

    @pytest.mark.parametrize("kind", list(SystemKind))
    def test_photon_balance_per_slice(self, kind):
        # the tau-integrated photon flux of each field equals the change of
        # its end-state population across the slice
        p = make_problem(1.0, kind)
        cfg = OracleConfig(dt=0.002).resolved(p)
        tau, e_p, e_s = entrance(p, cfg)
        amps = integrate_slice(e_p, e_s, tau, cfg)
        r = polarization_sources(amps, e_p, e_s, p)
        s_p, s_s = p.signs
        scale = p.omega0**2 / abs(p.q_s)
        flux_p = trapezoid(2 * np.real(np.conj(e_p) * r.d_e_p), tau) / p.q_p
        flux_s = trapezoid(2 * np.real(np.conj(e_s) * r.d_e_s), tau) / p.q_s
        pops = amps.populations
        assert flux_p == pytest.approx(scale * s_p * (pops[0][-1] - pops[0][0]), rel=1e-8)
        assert flux_s == pytest.approx(scale * s_s * (pops[2][-1] - pops[2][0]), rel=1e-8)


class TestPropagate:
    def test_zero_length(self):
        h = propagate(make_problem(1.0), OracleConfig(), 0.0)
        assert h.z.tolist() == [0.0] and h.stats["n_steps"] == 0

    def test_slice_count(self):
        h = propagate(make_problem(1.0), OracleConfig(dz=0.01), 0.1)
        assert h.z.size == 11 and np.allclose(np.diff(h.z), 0.01)

    def test_lands_on_requested_lengths(self):
        h = propagate(make_problem(1.0), OracleConfig(dz=0.01), 0.1, z_out=[0.033, 0.0705], keep_all=False)
        assert h.z.tolist() == [0.0, 0.033, 0.0705, 0.1]
        assert h.index_of(0.033) == 1
        with pytest.raises(AlignmentError):
            h.index_of(0.05)

    def test_steps_never_exceed_dz(self):
        h = propagate(make_problem(1.0), OracleConfig(dz=0.01), 0.1, z_out=[0.033])
        assert np.max(np.diff(h.z)) <= 0.01 + 1e-15

    def test_negative_length(self):
        with pytest.raises(StepSizeError):
            propagate(make_problem(1.0), OracleConfig(), -0.1)

    def test_entrance_slice_is_input(self):
        p = make_problem(1.0)
        h = propagate(p, OracleConfig(), 0.02)
        assert np.allclose(h.fields.omega_p[0], p.pulses.omega_p(h.tau))
        assert np.allclose(h.fields.omega_s[0], p.pulses.omega_s(h.tau))

    def test_pump_depleted_at_three(self):
        p = make_problem(1.0)
        h = propagate(p, OracleConfig(dz=0.01, dt=0.005), 3.0, z_out=[3.0], keep_all=False)
        assert h.fields.omega_p[-1].max() < 0.15 * p.omega0
        assert h.stats["max_norm_error"] < 1e-8

    def test_lambda_photon_number_conserved(self):
        p = make_problem(1.0)
        h = propagate(p, OracleConfig(dz=0.01, dt=0.005), 3.0, z_out=[1.0, 2.0, 3.0], keep_all=False)
        assert conservation_residual(h.fields, p) < 1e-5

    @pytest.mark.parametrize("kind", [SystemKind.XI, SystemKind.VEE])
    def test_inverted_kinds_conserve_before_tail_gain(self, kind):
        p = make_problem(1.0, kind)
        h = propagate(p, OracleConfig(dz=0.001, dt=0.002), 0.004, z_out=[0.002, 0.004], keep_all=False)
        assert conservation_residual(h.fields, p) < 1e-4

    def test_inverted_kind_amplifies_trailing_tail(self):
        # after transfer the end state is inverted on the Stokes transition for
        # the V system, so the weak trailing Stokes tail grows along z and drives
        # atoms out of the dark state; Lambda has no such gain
        zs = [0.004, 0.016]
        pops = {}
        for kind in (SystemKind.VEE, SystemKind.LAMBDA):
            h = propagate(make_problem(2.0, kind), OracleConfig(dz=0.0005, dt=0.002), 0.016, z_out=zs,
                          keep_all=False)
            pops[kind] = [abs(h.b2[h.index_of(z), -1])**2 for z in zs]
        assert pops[SystemKind.VEE][1] > 0.3 > 10 * pops[SystemKind.VEE][0]
        assert max(pops[SystemKind.LAMBDA]) < 1e-3

    def test_decay_loses_photons(self):
        p = make_problem(1.0, gamma=0.5)
        h = propagate(p, OracleConfig(dz=0.01, dt=0.005), 1.0, z_out=[0.5, 1.0], keep_all=False)
        f = h.fields
        r1 = conservation_residual(f.slice_many([0, 1]), p)
        r2 = conservation_residual(f, p)
        assert 0 < r1 < r2
        n = trapezoid(f.omega_p**2 / p.q_p + f.omega_s**2 / p.q_s, h.tau, axis=1)
        assert np.all(np.diff(n) < 0)

    def test_divergence_guard(self):
        with pytest.raises(DivergenceError) as err:
            propagate(make_problem(1.0), OracleConfig(dz=0.5, dt=0.005), 3.0)
        assert err.value.z >= 0

    def test_second_order_in_z(self):
        p = make_problem(1.0, a=5.0, t_d=4.0)
        e = [final_pump(p, dz, 0.004) for dz in (0.04, 0.02, 0.01)]
        assert observed_order(*e) == pytest.approx(2.0, abs=0.5)

    def test_halving_steps_changes_little(self):
        p = make_problem(1.0)
        coarse = final_pump(p, 0.005, 0.004)
        fine = final_pump(p, 0.0025, 0.002)
        assert np.linalg.norm(coarse[::1] - fine[::2]) / np.linalg.norm(fine) < 1e-3

    def test_deterministic(self):
        p = make_problem(1.0)
        a = propagate(p, OracleConfig(dz=0.01), 0.1)
        b = propagate(p, OracleConfig(dz=0.01), 0.1)
        assert np.array_equal(a.e_p, b.e_p) and np.array_equal(a.b2, b.b2)


class TestCompare:
    def test_self_comparison_is_exact(self):
        h = propagate(make_problem(1.0), OracleConfig(dz=0.01), 0.05)
        errs = compare((h.fields, h.amplitudes), h)
        assert len(errs) == h.z.size
        assert all(e.l2[q] == 0 and e.linf[q] == 0 for e in errs for q in COMPARED)

    def test_entrance_agrees_with_adiabatic(self):
        p = make_problem(1.0)
        h = propagate(p, OracleConfig(), 0.0)
        (e,) = compare(solve_grid(p, [0.0], tau=h.tau), h)
        assert e.l2["omega_p"] < 1e-12 and e.l2["theta"] < 1e-12
        assert e.l2["pop3"] < 0.05

    def test_misaligned_tau(self):
        p = make_problem(1.0)
        h = propagate(p, OracleConfig(), 0.0)
        with pytest.raises(AlignmentError):
            compare(solve_grid(p, [0.0]), h)

    def test_unrecorded_length(self):
        p = make_problem(1.0)
        h = propagate(p, OracleConfig(dz=0.01), 0.02)
        with pytest.raises(AlignmentError):
            compare(solve_grid(p, [0.015], tau=h.tau), h)


@pytest.mark.slow
def test_adiabatic_limit_is_approached():
    # the field discrepancy at fixed z shrinks as the pulse area grows
    errs = []
    for a, dz, dt in ((10.0, 0.005, 0.004), (20.0, 0.004, 0.002), (40.0, 0.0015, 0.001)):
        p = make_problem(1.0, a=a)
        h = propagate(p, OracleConfig(dz=dz, dt=dt), 1.0, z_out=[1.0], keep_all=False)
        (e,) = compare(solve_grid(p, [1.0], tau=h.tau), h)
        errs.append(e.l2["omega_p"])
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01
    assert np.log2(errs[0] / errs[2]) / 2 > 1.0
