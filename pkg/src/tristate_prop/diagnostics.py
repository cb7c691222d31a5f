"""Adiabaticity breakdown, critical lengths, transfer efficiency, conservation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .adiabatic import _F, _f, df_theta, has_fold, solve_grid
from .core import FieldState, Problem, SechPulses
from .errors import FoldError, InvalidParameterError

PUMP_SCAN_CAP = 20.0


@dataclass
class Breakdown:
    z_break: float | None
    sign_condition: bool


@dataclass
class DiagnosticsReport:
    z_break: float | None
    z_pump_est: float
    z_pump_measured: float | None
    z_stirap_est: float | None
    efficiency_curve: list = field(default_factory=list)
    conservation_residual: float = 0.0
    sign_condition: bool = False
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["efficiency_curve"] = [[float(z), None if e is None else float(e)]
                                 for z, e in self.efficiency_curve]
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, **kw)


def fold_sign_condition(problem: Problem, n_scan: int = 4096) -> bool:
    """Whether characteristics can converge anywhere in the window.

    For the Lambda system this is ``(q_p - q_s) dtheta0/dxi > 0``; in general
    the launch-time map loses monotonicity only where ``f f' theta0' / F < 0``.
    """
    s = np.linspace(problem.grid.tau_min, problem.grid.tau_max, n_scan)
    th = problem.pulses.mixing_angle(s)
    F = _F(problem, s)
    term = _f(problem, th) * df_theta(th, problem.qp_eff, problem.qs_eff) * problem.pulses.mixing_rate(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(F != 0, term / F, 0.0)
    return bool(np.any(ratio < -1e-14 * np.max(abs(ratio), initial=0.0)))


def breakdown_length(problem: Problem, z_scan_max: float = 10.0, n_z: int = 64,
                     refinements: int = 2) -> Breakdown:
    """Smallest scanned length at which the launch-time map folds.

    A log-spaced scan locates the first fold; the bracket around it is then
    rescanned ``refinements`` times at the same density.
    """
    if not z_scan_max > 0:
        raise InvalidParameterError("z_scan_max must be positive")
    sign = fold_sign_condition(problem)
    zs = np.geomspace(z_scan_max * 1e-3, z_scan_max, n_z)
    prev = 0.0
    hit = None
    for z in zs:
        if has_fold(problem, z):
            hit = z
            break
        prev = z
    if hit is None:
        return Breakdown(None, sign)
    for _ in range(refinements):
        for z in np.linspace(prev, hit, n_z)[1:]:
            if has_fold(problem, z):
                hit = z
                break
            prev = z
    return Breakdown(float(hit), sign)


def z_pump_estimate(q: float) -> float:
    if not q > 0:
        raise InvalidParameterError(f"q must be positive, got {q}")
    return (2.0 + q) / q**2


def z_pump_measured(problem: Problem, threshold: float = 0.1, z_scan=None) -> float | None:
    """First scanned length where the pump peak drops below ``threshold`` of its entrance peak.

    The scan stops at the first length where characteristics have crossed,
    since the adiabatic fields are undefined from there on.
    """
    if not 0 < threshold < 1:
        raise InvalidParameterError("threshold must lie in (0, 1)")
    if z_scan is None:
        z_max = min(max(2.0 * z_pump_estimate(problem.q_ratio), 1.0), PUMP_SCAN_CAP)
        z_scan = np.arange(0.0, z_max + 1e-9, 0.05)
    z_scan = np.sort(np.asarray(z_scan, float))
    ref = float(np.max(problem.pulses.omega_p(problem.tau)))
    for z in z_scan:
        sol = solve_grid(problem, [z])
        if sol.folded[0] or sol.fold[0].any():
            return None
        if np.max(sol.omega_p[0]) < threshold * ref:
            return float(z) if z > 0 else None
    return None


def z_stirap_estimate(t_d: float, T: float = 1.0, q: float | None = None) -> float:
    """``t_d / 2T``, capped by the pump-depletion length when ``q`` is given."""
    if t_d < 0 or not T > 0:
        raise InvalidParameterError("need t_d >= 0 and T > 0")
    z = t_d / (2.0 * T)
    if q is not None:
        z = min(z, z_pump_estimate(q))
    return z


def transfer_efficiency(problem: Problem, z: float) -> float:
    """Final-state population ``sin^2 theta`` at the trailing grid edge.

    The grid edge stands in for ``tau -> +inf``. Once characteristics launched
    inside the window have crossed, the trailing value is no longer defined
    even if the multivalued region has already left the window.
    """
    sol = solve_grid(problem, [z])
    if sol.folded[0] or sol.fold[0].any():
        where = sol.fold_positions(0)
        tau = float(where[0]) if where.size else float("nan")
        raise FoldError(z, tau, f"efficiency undefined: characteristics cross by z={z:.6g}")
    return float(np.sin(sol.theta[0, -1]) ** 2)


def efficiency_curve(problem: Problem, z_values) -> list:
    out = []
    for z in z_values:
        try:
            out.append((float(z), transfer_efficiency(problem, z)))
        except FoldError:
            out.append((float(z), None))
    return out


def conserved_density(fields: FieldState, problem: Problem) -> np.ndarray:
    """Photon-number combination preserved by propagation, per grid cell.

    ``n_p + n_s`` for Lambda and V systems, ``n_p - n_s`` for the ladder.
    """
    s_p, s_s = problem.signs
    return fields.omega_p**2 / problem.q_p + s_p * s_s * fields.omega_s**2 / problem.q_s


def conservation_residual(history: FieldState, problem: Problem, pointwise: bool = False) -> float:
    """Largest drift of the conserved combination from the entrance slice.

    The integrated drift is scaled by the entrance photon number
    ``n_p + n_s``, which stays positive even when the ladder difference
    integrates to zero.
    """
    c = conserved_density(history, problem)
    if c.shape[0] < 2:
        raise InvalidParameterError("need at least two z slices")
    if pointwise:
        ref = c[0]
        ok = ref != 0
        return float(np.max(abs(c[1:, ok] - ref[ok]) / abs(ref[ok]), initial=0.0))
    total = trapezoid(c, history.tau, axis=1)
    scale = trapezoid(history.omega_p[0]**2 / abs(problem.q_p) + history.omega_s[0]**2 / abs(problem.q_s),
                      history.tau)
    return float(np.max(abs(total[1:] - total[0])) / scale)


def run_diagnostics(problem: Problem, z_scan_max: float = 10.0, n_z: int = 64,
                    threshold: float = 0.1, efficiency_z=None, pump_z=None) -> DiagnosticsReport:
    bd = breakdown_length(problem, z_scan_max, n_z)
    q = problem.q_ratio
    pulses = problem.pulses
    t_d = pulses.t_d if isinstance(pulses, SechPulses) else None
    z_stirap = z_stirap_estimate(t_d, 1.0, q) if t_d is not None and t_d >= 0 else None
    if efficiency_z is None:
        efficiency_z = problem.grid.z
    curve = efficiency_curve(problem, efficiency_z)
    z_grid = problem.grid.z if problem.grid.z.size >= 2 else np.array([0.0, 1.0])
    sol = solve_grid(problem, z_grid)
    fold_free = ~(sol.folded | sol.fold.any(axis=1))
    residual = (conservation_residual(sol.fields.slice_many(np.flatnonzero(fold_free)), problem)
                if fold_free.sum() >= 2 else float("nan"))
    return DiagnosticsReport(
        z_break=bd.z_break,
        z_pump_est=z_pump_estimate(q),
        z_pump_measured=z_pump_measured(problem, threshold, pump_z),
        z_stirap_est=z_stirap,
        efficiency_curve=curve,
        conservation_residual=residual,
        sign_condition=bd.sign_condition,
        params={"kind": problem.kind.value, "q_ratio": q, "a": problem.omega0,
                "t_d": t_d, "z_scan_max": z_scan_max, "threshold": threshold},
    )
