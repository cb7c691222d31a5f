"""Adiabatic-following solution by the method of characteristics.

The mixing angle is transported unchanged along characteristics,
``theta(z, tau) = theta0(xi)``, where the launch time ``xi`` solves

    G(tau) - G(xi) = z a^2 f(theta0(xi))^2,

with ``G`` the running integral of ``q_s Omega_p0^2 + q_p Omega_s0^2`` and
``f(theta) = q_s sin^2 theta + q_p cos^2 theta`` (signed couplings). The total
Rabi frequency follows from photon-number conservation, ``W^2 = F(tau)/f(theta)``
with ``F = dG/dtau``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import AmplitudeState, FieldState, Problem, TAIL_FLOOR
from .errors import (AdiabaticityError, BracketError, DomainError, FoldError, NearFoldError,
                     SingularityError)

N_SCAN = 4096
ROOT_TOL = 1e-14
NEAR_FOLD = 1e-9
_CHUNK = 512


def entrance_mixing_angle(pulses, tau):
    """``atan2(Omega_p0, Omega_s0)``; tails are handled by the pulse family."""
    return pulses.mixing_angle(tau)


def f_theta(theta, q_p, q_s):
    return q_s * np.sin(theta) ** 2 + q_p * np.cos(theta) ** 2


def df_theta(theta, q_p, q_s):
    return (q_s - q_p) * np.sin(2.0 * theta)


def photon_fluence(pulses, xi, tau, q_p=1.0, q_s=1.0):
    """``integral_xi^tau (q_s Omega_p0^2 + q_p Omega_s0^2) dt'``.

    The normalizing prefactor ``2 pi N / c`` is dropped on both sides of the
    characteristic equation.
    """
    xi = np.asarray(xi, float)
    tau = np.asarray(tau, float)
    if np.any(xi > tau):
        raise DomainError("photon_fluence needs xi <= tau")
    return (q_s * (pulses.cumulative_p(tau) - pulses.cumulative_p(xi))
            + q_p * (pulses.cumulative_s(tau) - pulses.cumulative_s(xi)))


# -- problem-bound helpers -------------------------------------------------

def _f(problem: Problem, theta):
    return f_theta(theta, problem.qp_eff, problem.qs_eff)


def _G(problem: Problem, t):
    p = problem.pulses
    return problem.qs_eff * p.cumulative_p(t) + problem.qp_eff * p.cumulative_s(t)


def _F(problem: Problem, t):
    p = problem.pulses
    return problem.qs_eff * p.omega_p(t) ** 2 + problem.qp_eff * p.omega_s(t) ** 2


def _length_scale(problem: Problem) -> float:
    """Factor turning ``z`` into the coupling-weighted fluence ``x``."""
    return problem.omega0**2 / abs(problem.q_s)


def fluence_sign_changes(problem: Problem, n_scan: int = N_SCAN) -> np.ndarray:
    """Interior times where ``F`` changes sign (ladder systems only)."""
    lo, hi = problem.grid.tau_min, problem.grid.tau_max
    s = np.linspace(lo, hi, n_scan)
    F = _F(problem, s)
    k = np.flatnonzero(np.sign(F[1:]) * np.sign(F[:-1]) < 0)
    return np.array([brentq(lambda t: float(_F(problem, t)), s[i], s[i + 1], xtol=1e-15)
                     for i in k])


@dataclass
class CharacteristicResult:
    xi: float
    fold_flag: bool
    denom: float
    n_roots: int = 1
    clipped: bool = False


class _Characteristics:
    """Root solver for the launch times at one propagation length."""

    def __init__(self, problem: Problem, z: float, n_scan: int = N_SCAN):
        if z < 0:
            raise DomainError(f"z must be nonnegative, got {z}")
        self.problem = problem
        self.z = float(z)
        self.zA = self.z * _length_scale(problem)
        self.tol = ROOT_TOL * problem.omega0**2
        lo, hi = problem.grid.tau_min, problem.grid.tau_max
        self.window = (lo, hi)
        self.zeros = fluence_sign_changes(problem, n_scan)
        self.bounds = np.concatenate([[lo], self.zeros, [hi]])
        self.s = np.linspace(lo, hi, n_scan)
        self.h = _G(problem, self.s) + self.zA * _f(problem, problem.pulses.mixing_angle(self.s)) ** 2
        self._folded = self.has_fold()

    def g(self, xi, G_tau):
        th = self.problem.pulses.mixing_angle(xi)
        return G_tau - _G(self.problem, xi) - self.zA * _f(self.problem, th) ** 2

    def solve(self, tau):
        """Vectorized solve; returns a dict of per-point arrays."""
        tau = np.atleast_1d(np.asarray(tau, float))
        out = {k: np.empty(tau.shape) for k in ("xi", "denom", "theta_dot")}
        out["n_roots"] = np.zeros(tau.shape, int)
        out["clipped"] = np.zeros(tau.shape, bool)
        out["singular"] = np.zeros(tau.shape, bool)
        for start in range(0, tau.size, _CHUNK):
            sl = slice(start, start + _CHUNK)
            res = self._solve_chunk(tau[sl])
            for k in out:
                out[k][sl] = res[k]
        return out

    def _solve_chunk(self, tau):
        p = self.problem
        pulses = p.pulses
        G_tau = _G(p, tau)
        F_tau = _F(p, tau)
        n = tau.size
        if self.z == 0.0:
            return dict(xi=tau.copy(), denom=np.ones(n), theta_dot=pulses.mixing_rate(tau),
                        n_roots=np.ones(n, int), clipped=np.zeros(n, bool),
                        singular=(F_tau == 0))

        if self.zeros.size == 0 and not self._folded:
            return self._solve_monotone(tau, G_tau, F_tau)
        return self._solve_dense(tau, G_tau, F_tau)

    def _solve_dense(self, tau, G_tau, F_tau):
        p = self.problem
        pulses = p.pulses
        n = tau.size
        forward = F_tau >= 0
        idx = np.clip(np.searchsorted(self.bounds, tau, side="right"), 1, self.bounds.size - 1)
        seg_lo = self.bounds[idx - 1]
        seg_hi = self.bounds[idx]
        seg_lo = np.minimum(seg_lo, tau)
        seg_hi = np.maximum(seg_hi, tau)
        left = np.where(forward, seg_lo, tau)
        right = np.where(forward, tau, seg_hi)
        edge = np.where(forward, left, right)
        g_tau = -self.zA * _f(p, pulses.mixing_angle(tau)) ** 2
        g_edge = self.g(edge, G_tau)
        gL = np.where(forward, g_edge, g_tau)
        gR = np.where(forward, g_tau, g_edge)

        s = self.s[None, :]
        g_scan = G_tau[:, None] - self.h[None, :]
        vals = np.where(s <= left[:, None], gL[:, None],
                        np.where(s >= right[:, None], gR[:, None], g_scan))
        vals = np.concatenate([gL[:, None], vals, gR[:, None]], axis=1)
        xs = np.concatenate([left[:, None], np.clip(s, left[:, None], right[:, None]),
                             right[:, None]], axis=1)
        pos = vals > 0
        change = pos[:, 1:] != pos[:, :-1]
        n_roots = change.sum(axis=1)

        # root closest to tau: last bracket going forward, first going backward
        last = change.shape[1] - 1 - np.argmax(change[:, ::-1], axis=1)
        first = np.argmax(change, axis=1)
        k = np.where(forward, last, first)
        rows = np.arange(n)
        a, b = xs[rows, k], xs[rows, k + 1]
        fa, fb = vals[rows, k], vals[rows, k + 1]

        has_root = n_roots > 0
        xi = np.where(forward, left, right)
        if np.any(has_root):
            xi[has_root] = self._refine(a[has_root], b[has_root], fa[has_root], fb[has_root],
                                        G_tau[has_root])
        edge_is_window = np.where(forward, np.isclose(edge, self.window[0]),
                                  np.isclose(edge, self.window[1]))
        clipped = ~has_root & edge_is_window
        singular = ~has_root & ~edge_is_window

        return self._finish(tau, xi, F_tau, n_roots, clipped, singular)

    def _solve_monotone(self, tau, G_tau, F_tau):
        # without folds or sign changes of F, h is monotone in the direction of
        # F and every tau has at most one root, located by bisection on h
        sign = 1.0 if F_tau[np.argmax(abs(F_tau))] >= 0 else -1.0
        lo, hi = self.window
        key = sign * self.h
        k = np.searchsorted(key, sign * G_tau, side="left")
        k = np.clip(k, 1, self.s.size - 1)
        if sign > 0:
            a = self.s[k - 1]
            b = np.minimum(self.s[k], tau)
            has_root = self.g(np.full_like(tau, lo), G_tau) > 0
        else:
            a = np.maximum(self.s[k - 1], tau)
            b = self.s[k]
            has_root = self.g(np.full_like(tau, hi), G_tau) > 0
        a = np.minimum(a, b)
        xi = np.full_like(tau, lo if sign > 0 else hi)
        fa = self.g(a, G_tau)
        fb = self.g(b, G_tau)
        unbracketed = has_root & ((fa > 0) == (fb > 0))
        if np.any(unbracketed):
            # rounding noise in h broke the bracket; use the dense scan
            return self._solve_dense(tau, G_tau, F_tau)
        if np.any(has_root):
            xi[has_root] = self._refine(a[has_root], b[has_root], fa[has_root], fb[has_root],
                                        G_tau[has_root])
        n_roots = has_root.astype(int)
        return self._finish(tau, xi, F_tau, n_roots, ~has_root, np.zeros(tau.shape, bool))

    def _finish(self, tau, xi, F_tau, n_roots, clipped, singular):
        p = self.problem
        pulses = p.pulses
        th = pulses.mixing_angle(xi)
        dth = pulses.mixing_rate(xi)
        F_xi = _F(p, xi)
        fx = _f(p, th)
        slope_term = 2.0 * self.zA * fx * df_theta(th, p.qp_eff, p.qs_eff) * dth
        denom_raw = F_xi + slope_term
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = np.where(F_xi != 0, denom_raw / F_xi, np.inf)
            theta_dot = np.where(denom_raw != 0, dth * F_tau / denom_raw, np.inf)
        theta_dot = np.where(clipped, 0.0, theta_dot)
        denom = np.where(clipped, 1.0, denom)
        return dict(xi=xi, denom=denom, theta_dot=theta_dot, n_roots=n_roots,
                    clipped=clipped, singular=singular)

    def _refine(self, a, b, fa, fb, G_tau, maxiter=200):
        """Bracketed false position (Illinois) with forced bisection on stalls."""
        a, b, fa, fb = a.copy(), b.copy(), fa.copy(), fb.copy()
        best = np.where(abs(fa) < abs(fb), a, b)
        fbest = np.minimum(abs(fa), abs(fb))
        active = fbest >= self.tol
        width = abs(b - a)
        for _ in range(maxiter):
            if not active.any():
                break
            i = np.flatnonzero(active)
            ai, bi, fai, fbi = a[i], b[i], fa[i], fb[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                c = bi - fbi * (bi - ai) / (fbi - fai)
            lo, hi = np.minimum(ai, bi), np.maximum(ai, bi)
            stalled = abs(bi - ai) > 0.5 * width[i]
            bad = ~np.isfinite(c) | (c <= lo) | (c >= hi) | stalled
            c = np.where(bad, 0.5 * (ai + bi), c)
            fc = self.g(c, G_tau[i])
            width[i] = abs(bi - ai)
            # keep the bracket: replace the endpoint whose sign matches fc
            same_as_b = (fc > 0) == (fbi > 0)
            new_a = np.where(same_as_b, ai, bi)
            new_fa = np.where(same_as_b, np.where(bad, fai, 0.5 * fai), fbi)
            a[i], fa[i], b[i], fb[i] = new_a, new_fa, c, fc
            better = abs(fc) < fbest[i]
            best[i] = np.where(better, c, best[i])
            fbest[i] = np.where(better, abs(fc), fbest[i])
            tiny = abs(b[i] - a[i]) <= 4 * np.finfo(float).eps * np.maximum(1.0, abs(c))
            active[i] = (fbest[i] >= self.tol) & ~tiny
        return best

    def has_fold(self) -> bool:
        """True when ``xi -> tau`` is not one-to-one somewhere in the window.

        Within each segment of constant sign of ``F`` the launch-time map is
        monotone exactly when ``h = G + z a^2 f^2`` moves in the direction of
        ``F``; a reversal anywhere means crossing characteristics.
        """
        if self.z == 0.0:
            return False
        s = np.sort(np.concatenate([self.s, self.zeros]))
        th = self.problem.pulses.mixing_angle(s)
        h = _G(self.problem, s) + self.zA * _f(self.problem, th) ** 2
        F_mid = _F(self.problem, 0.5 * (s[1:] + s[:-1]))
        dh = np.diff(h)
        noise = 64 * np.finfo(float).eps * max(1.0, float(np.max(abs(h))))
        return bool(np.any(dh * np.sign(F_mid) < -noise))


def solve_characteristic(problem: Problem, z: float, tau: float, n_scan: int = N_SCAN,
                         clip_tail: bool = True) -> CharacteristicResult:
    """Launch time of the characteristic reaching ``(z, tau)``.

    When no root exists because the characteristic was launched before the
    grid window (the entrance mixing angle is flat there) the window edge is
    returned with ``clipped=True``; pass ``clip_tail=False`` to raise instead.
    """
    solver = _Characteristics(problem, z, n_scan)
    r = solver.solve([tau])
    if r["singular"][0] or (r["clipped"][0] and not clip_tail):
        G_tau = float(_G(problem, tau))
        lo, hi = solver.window
        raise BracketError(tau, (lo, tau) if _F(problem, tau) >= 0 else (tau, hi),
                           (float(solver.g(lo, G_tau)), float(solver.g(tau, G_tau))))
    n_roots = int(r["n_roots"][0])
    return CharacteristicResult(xi=float(r["xi"][0]), fold_flag=n_roots >= 2,
                                denom=float(r["denom"][0]), n_roots=n_roots,
                                clipped=bool(r["clipped"][0]))


@dataclass
class AdiabaticSolution:
    """Adiabatic fields on the ``(z, tau)`` grid plus root diagnostics."""

    problem: Problem
    z: np.ndarray
    tau: np.ndarray
    xi: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    w_total: np.ndarray
    denom: np.ndarray
    n_roots: np.ndarray
    clipped: np.ndarray
    singular: np.ndarray
    folded: np.ndarray = None

    @property
    def fold(self) -> np.ndarray:
        return (self.n_roots >= 2) | self.singular

    @property
    def omega_p(self) -> np.ndarray:
        return self.w_total * np.sin(self.theta)

    @property
    def omega_s(self) -> np.ndarray:
        return self.w_total * np.cos(self.theta)

    @property
    def fields(self) -> FieldState:
        return FieldState(self.z, self.tau, self.omega_p, self.omega_s)

    @property
    def amplitudes(self) -> AmplitudeState:
        return _amplitudes(self.theta, self.theta_dot, self.w_total, self.problem.delta_p)

    def fold_positions(self, k: int) -> np.ndarray:
        return self.tau[self.fold[k]]


def solve_grid(problem: Problem, z_values=None, tau=None, n_scan: int = N_SCAN) -> AdiabaticSolution:
    z = problem.grid.z if z_values is None else np.atleast_1d(np.asarray(z_values, float))
    tau = problem.tau if tau is None else np.asarray(tau, float)
    shape = (z.size, tau.size)
    keys = ("xi", "denom", "theta_dot", "n_roots", "clipped", "singular")
    acc = {k: [] for k in keys}
    folded = []
    for zk in z:
        ch = _Characteristics(problem, zk, n_scan)
        folded.append(ch._folded)
        r = ch.solve(tau)
        for k in keys:
            acc[k].append(r[k])
    arr = {k: np.array(v).reshape(shape) for k, v in acc.items()}
    theta = problem.pulses.mixing_angle(arr["xi"])
    with np.errstate(divide="ignore", invalid="ignore"):
        w2 = _F(problem, tau)[None, :] / _f(problem, theta)
    w2 = np.where(arr["singular"], np.nan, w2)
    return AdiabaticSolution(problem, z, tau, arr["xi"], theta, arr["theta_dot"],
                             np.sqrt(np.maximum(w2, 0.0)), arr["denom"], arr["n_roots"],
                             arr["clipped"], arr["singular"], np.array(folded, bool))


def has_fold(problem: Problem, z: float, n_scan: int = N_SCAN) -> bool:
    return _Characteristics(problem, z, n_scan).has_fold()


# -- pointwise operations ------------------------------------------------

def _point(problem, z, tau, n_scan=N_SCAN):
    tau_arr = np.atleast_1d(np.asarray(tau, float))
    r = _Characteristics(problem, z, n_scan).solve(tau_arr)
    bad = (r["n_roots"] >= 2) | r["singular"]
    if np.any(bad):
        raise FoldError(z, float(tau_arr[np.argmax(bad)]))
    return tau_arr, r


def _unwrap(x, like):
    return float(x[0]) if np.ndim(like) == 0 else x


def theta_field(problem: Problem, z: float, tau):
    tau_arr, r = _point(problem, z, tau)
    return _unwrap(problem.pulses.mixing_angle(r["xi"]), tau)


def total_rabi(problem: Problem, z: float, tau):
    tau_arr, r = _point(problem, z, tau)
    f = _f(problem, problem.pulses.mixing_angle(r["xi"]))
    if np.any(f == 0):
        raise SingularityError(f"f(theta) vanishes at z={z}")
    w2 = _F(problem, tau_arr) / f
    return _unwrap(np.sqrt(np.maximum(w2, 0.0)), tau)


def envelopes(problem: Problem, z: float, tau):
    th = np.atleast_1d(theta_field(problem, z, tau))
    w = np.atleast_1d(total_rabi(problem, z, tau))
    return _unwrap(w * np.sin(th), tau), _unwrap(w * np.cos(th), tau)


def theta_dot(problem: Problem, z: float, tau):
    """Time derivative of the mixing angle by implicit differentiation.

    ``d xi / d tau = F(tau) / (F(xi) + 2 z a^2 f f' theta0'(xi))``; the
    normalized denominator is the quantity that vanishes at a fold.
    """
    tau_arr, r = _point(problem, z, tau)
    if np.any(abs(r["denom"]) < NEAR_FOLD):
        raise NearFoldError(z, float(tau_arr[np.argmin(abs(r["denom"]))]))
    return _unwrap(r["theta_dot"], tau)


def _amplitudes(theta, th_dot, w, delta_p):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w > 0, th_dot / w, 0.0)
        detune = np.where(w > 0, delta_p / w, 0.0)
    corr = 1j * ratio * detune
    return AmplitudeState(b1=np.cos(theta) + corr * np.sin(theta),
                          b2=-1j * ratio,
                          b3=-np.sin(theta) + corr * np.cos(theta))


def amplitudes(problem: Problem, z: float, tau) -> AmplitudeState:
    """Level amplitudes of the trapped state with the first non-adiabatic term."""
    th = np.atleast_1d(theta_field(problem, z, tau))
    td = np.atleast_1d(theta_dot(problem, z, tau))
    w = np.atleast_1d(total_rabi(problem, z, tau))
    if np.any(abs(td) >= w):
        raise AdiabaticityError(f"|theta_dot / W| >= 1 at z={z}")
    amp = _amplitudes(th, td, w, problem.delta_p)
    if np.ndim(tau) == 0:
        return AmplitudeState(amp.b1[0], amp.b2[0], amp.b3[0])
    return amp


def group_velocity(problem: Problem, z: float, tau):
    """Characteristic slope ``d tau / d z = a^2 f(theta) / W^2``."""
    th = np.atleast_1d(theta_field(problem, z, tau))
    w = np.atleast_1d(total_rabi(problem, z, tau))
    if np.any(w < TAIL_FLOOR * problem.omega0):
        raise SingularityError("total Rabi frequency below the tail floor; velocity undefined")
    return _unwrap(_length_scale(problem) * _f(problem, th) / w**2, tau)
