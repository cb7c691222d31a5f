"""Domain types, pulse families and the dimensionless problem description.

Units after :func:`normalize`: time in units of the pulse width ``T``, Rabi
frequencies in ``1/T``, couplings with ``q_s = 1`` and propagation length as
``z = x q_s / (a^2 T)`` where ``a`` is the common peak Rabi frequency.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InvalidParameterError

TAIL_FLOOR = 1e-12


class SystemKind(enum.Enum):
    LAMBDA = "lambda"
    XI = "xi"
    VEE = "vee"

    @classmethod
    def parse(cls, value: "str | SystemKind") -> "SystemKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "lambda": cls.LAMBDA, "l": cls.LAMBDA, "Λ".lower(): cls.LAMBDA,
            "xi": cls.XI, "ladder": cls.XI, "Ξ".lower(): cls.XI,
            "vee": cls.VEE, "v": cls.VEE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidParameterError(f"unknown system kind {value!r}") from None


_SIGNS = {
    SystemKind.LAMBDA: (1, 1),
    SystemKind.XI: (1, -1),
    SystemKind.VEE: (-1, -1),
}


def system_signs(kind: SystemKind) -> tuple[int, int]:
    """Return the ``(s_p, s_s)`` multipliers applied to ``q_p`` and ``q_s``.

    The propagation equations are written for the Lambda system; the ladder
    system flips the sign of the Stokes coupling and the V system flips both.
    """
    return _SIGNS[SystemKind.parse(kind)]


@dataclass(frozen=True)
class MediumParams:
    kind: SystemKind = SystemKind.LAMBDA
    q_ratio: float = 1.0
    delta_p: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SystemKind.parse(self.kind))
        if not self.q_ratio > 0:
            raise InvalidParameterError(f"q_ratio must be positive, got {self.q_ratio}")
        if not self.gamma >= 0:
            raise InvalidParameterError(f"gamma must be nonnegative, got {self.gamma}")


def _sech(x):
    e = np.exp(-np.abs(x))
    return 2.0 * e / (1.0 + e * e)


def _logcosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x)) - np.log(2.0)


@dataclass(frozen=True)
class SechPulses:
    """Sech pulse pair with the pump delayed by ``t_d`` after the Stokes pulse.

    A negative ``t_d`` puts the pump first (intuitive order).
    """

    a: float
    T: float = 1.0
    t_d: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.T > 0):
            raise InvalidParameterError(f"sech pulses need a > 0 and T > 0, got a={self.a}, T={self.T}")

    @property
    def peak(self) -> float:
        return self.a

    @property
    def support(self) -> tuple[float, float]:
        return -np.inf, np.inf

    def omega_p(self, tau):
        return self.a * _sech((np.asarray(tau, float) - self.t_d) / self.T)

    def omega_s(self, tau):
        return self.a * _sech(np.asarray(tau, float) / self.T)

    def cumulative_p(self, tau):
        """Integral of the squared pump envelope from minus infinity to ``tau``."""
        x = (np.asarray(tau, float) - self.t_d) / self.T
        return self.a**2 * self.T * (1.0 + np.tanh(x))

    def cumulative_s(self, tau):
        x = np.asarray(tau, float) / self.T
        return self.a**2 * self.T * (1.0 + np.tanh(x))

    def mixing_angle(self, tau):
        # tan(theta) = cosh(tau/T) / cosh((tau - t_d)/T), evaluated in log space
        tau = np.asarray(tau, float)
        log_ratio = _logcosh(tau / self.T) - _logcosh((tau - self.t_d) / self.T)
        return np.arctan(np.exp(log_ratio))

    def mixing_rate(self, tau):
        tau = np.asarray(tau, float)
        theta = self.mixing_angle(tau)
        dlog = np.tanh(tau / self.T) - np.tanh((tau - self.t_d) / self.T)
        return 0.5 * np.sin(2.0 * theta) * dlog / self.T

    def theta_limits(self) -> tuple[float, float]:
        """Mixing angle at tau -> -inf and tau -> +inf."""
        r = self.t_d / self.T
        return float(np.arctan(np.exp(-r))), float(np.arctan(np.exp(r)))

    def scaled(self, T_unit: float) -> "SechPulses":
        return SechPulses(a=self.a * T_unit, T=self.T / T_unit, t_d=self.t_d / T_unit)


class SampledPulses:
    """Envelopes given on a time grid, interpolated shape-preservingly.

    Outside the sampled interval both envelopes are zero. Where both
    envelopes fall below ``tail_floor * peak`` the mixing angle is held at the
    nearest value inside the resolved region.
    """

    def __init__(self, times: Sequence[float], omega_p: Sequence[float], omega_s: Sequence[float],
                 tail_floor: float = TAIL_FLOOR):
        t = np.asarray(times, float)
        p = np.asarray(omega_p, float)
        s = np.asarray(omega_s, float)
        if t.ndim != 1 or t.size < 2 or p.shape != t.shape or s.shape != t.shape:
            raise InvalidParameterError("sampled pulses need matching 1-D arrays of length >= 2")
        if np.any(np.diff(t) <= 0):
            raise InvalidParameterError("sample times must be strictly increasing")
        if np.any(p < 0) or np.any(s < 0):
            raise InvalidParameterError("sampled envelopes must be nonnegative")
        self.times, self.p_values, self.s_values = t, p, s
        self.tail_floor = tail_floor
        self._p = PchipInterpolator(t, p, extrapolate=False)
        self._s = PchipInterpolator(t, s, extrapolate=False)
        self._dp = self._p.derivative()
        self._ds = self._s.derivative()
        self._cum_p = self._trapezoid_nodes(p**2)
        self._cum_s = self._trapezoid_nodes(s**2)
        floor = tail_floor * self.peak
        live = np.flatnonzero(np.maximum(p, s) > floor)
        if live.size == 0:
            raise InvalidParameterError("sampled envelopes vanish everywhere")
        self._live = (t[live[0]], t[live[-1]])

    @property
    def peak(self) -> float:
        return float(max(self.p_values.max(), self.s_values.max()))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def _trapezoid_nodes(self, y):
        dt = np.diff(self.times)
        return np.concatenate([[0.0], np.cumsum(0.5 * dt * (y[1:] + y[:-1]))])

    def _eval(self, spline, tau):
        out = spline(np.asarray(tau, float))
        return np.nan_to_num(out, nan=0.0)

    def omega_p(self, tau):
        return np.maximum(self._eval(self._p, tau), 0.0)

    def omega_s(self, tau):
        return np.maximum(self._eval(self._s, tau), 0.0)

    def _cumulative(self, y, nodes, tau):
        # exact integral of the piecewise-linear interpolant of y; equals the
        # trapezoid sum at the nodes
        t = self.times
        tau = np.asarray(tau, float)
        tc = np.clip(tau, t[0], t[-1])
        k = np.clip(np.searchsorted(t, tc, side="right") - 1, 0, t.size - 2)
        h = t[k + 1] - t[k]
        u = tc - t[k]
        slope = (y[k + 1] - y[k]) / h
        return nodes[k] + y[k] * u + 0.5 * slope * u**2

    def cumulative_p(self, tau):
        return self._cumulative(self.p_values**2, self._cum_p, tau)

    def cumulative_s(self, tau):
        return self._cumulative(self.s_values**2, self._cum_s, tau)

    def mixing_angle(self, tau):
        tc = np.clip(np.asarray(tau, float), *self._live)
        return np.arctan2(self.omega_p(tc), self.omega_s(tc))

    def mixing_rate(self, tau):
        tau = np.asarray(tau, float)
        p, s = self.omega_p(tau), self.omega_s(tau)
        dp, ds = self._eval(self._dp, tau), self._eval(self._ds, tau)
        w2 = p**2 + s**2
        inside = (tau >= self._live[0]) & (tau <= self._live[1]) & (w2 > 0)
        return np.where(inside, (s * dp - p * ds) / np.where(inside, w2, 1.0), 0.0)

    def theta_limits(self) -> tuple[float, float]:
        return float(self.mixing_angle(self.times[0])), float(self.mixing_angle(self.times[-1]))

    def scaled(self, T_unit: float) -> "SampledPulses":
        return SampledPulses(self.times / T_unit, self.p_values * T_unit, self.s_values * T_unit,
                             self.tail_floor)


EntrancePulses = SechPulses | SampledPulses


def make_sech_pulses(a: float, T: float = 1.0, t_d: float = 0.0) -> SechPulses:
    return SechPulses(a=float(a), T=float(T), t_d=float(t_d))


@dataclass(frozen=True)
class Grid:
    tau_min: float
    tau_max: float
    n_tau: int = 2048
    z_values: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "z_values", tuple(float(z) for z in self.z_values))
        if not self.tau_min < self.tau_max:
            raise InvalidParameterError("tau_min must be below tau_max")
        if self.n_tau < 2:
            raise InvalidParameterError("n_tau must be at least 2")
        z = np.asarray(self.z_values)
        if z.size and (np.any(z < 0) or np.any(np.diff(z) <= 0)):
            raise InvalidParameterError("z_values must be nonnegative and strictly increasing")

    @property
    def tau(self) -> np.ndarray:
        return np.linspace(self.tau_min, self.tau_max, self.n_tau)

    @property
    def dtau(self) -> float:
        return (self.tau_max - self.tau_min) / (self.n_tau - 1)

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.z_values, float)

    def with_z(self, z_values) -> "Grid":
        return Grid(self.tau_min, self.tau_max, self.n_tau, tuple(z_values))

    @classmethod
    def default_for(cls, pulses, z_values=(0.0,), n_tau: int = 2048, pad: float = 8.0) -> "Grid":
        """Window of ``pad`` widths either side of the two pulse centres."""
        if isinstance(pulses, SechPulses):
            lo = min(0.0, pulses.t_d) - pad * pulses.T
            hi = max(0.0, pulses.t_d) + pad * pulses.T
        else:
            lo, hi = pulses.support
        return cls(lo, hi, n_tau, tuple(z_values))


@dataclass
class FieldState:
    """Field quantities on a ``(n_z, n_tau)`` grid."""

    z: np.ndarray
    tau: np.ndarray
    omega_p: np.ndarray
    omega_s: np.ndarray
    phi_p: np.ndarray = None
    phi_s: np.ndarray = None

    def __post_init__(self):
        self.omega_p = np.atleast_2d(self.omega_p)
        self.omega_s = np.atleast_2d(self.omega_s)
        if self.phi_p is None:
            self.phi_p = np.zeros_like(self.omega_p)
        if self.phi_s is None:
            self.phi_s = np.zeros_like(self.omega_s)

    @property
    def w_total(self) -> np.ndarray:
        return np.hypot(self.omega_p, self.omega_s)

    @property
    def theta(self) -> np.ndarray:
        return np.arctan2(self.omega_p, self.omega_s)

    def slice(self, k: int) -> "FieldState":
        return self.slice_many([k])

    def slice_many(self, idx) -> "FieldState":
        idx = np.asarray(idx, dtype=int)
        return FieldState(np.atleast_1d(self.z)[idx], self.tau, self.omega_p[idx], self.omega_s[idx],
                          self.phi_p[idx], self.phi_s[idx])


@dataclass
class AmplitudeState:
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray

    @property
    def populations(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return abs(self.b1) ** 2, abs(self.b2) ** 2, abs(self.b3) ** 2

    @property
    def norm(self) -> np.ndarray:
        return sum(self.populations)


@dataclass(frozen=True)
class Problem:
    """Self-contained dimensionless problem consumed by every solver.

    ``q_s`` is normalized to one, so ``q_p`` equals the coupling ratio. The
    signed couplings ``qp_eff``/``qs_eff`` carry the system's sign map.
    """

    kind: SystemKind
    q_p: float
    pulses: EntrancePulses
    grid: Grid
    delta_p: float = 0.0
    gamma: float = 0.0
    q_s: float = 1.0
    T_unit: float = 1.0
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def signs(self) -> tuple[int, int]:
        return system_signs(self.kind)

    @property
    def qp_eff(self) -> float:
        return self.signs[0] * self.q_p

    @property
    def qs_eff(self) -> float:
        return self.signs[1] * self.q_s

    @property
    def q_ratio(self) -> float:
        return self.q_p / self.q_s

    @property
    def omega0(self) -> float:
        """Peak Rabi frequency ``a`` used in the length scale."""
        return float(self.pulses.peak)

    @property
    def tau(self) -> np.ndarray:
        return self.grid.tau

    def replace(self, **changes) -> "Problem":
        from dataclasses import replace
        return replace(self, **changes)


def normalize(medium: MediumParams, pulses: EntrancePulses, grid: Grid | None = None,
              z_values=(0.0,)) -> Problem:
    """Rescale to ``T = 1`` and fold the coupling ratio into ``q_p``.

    ``medium.delta_p`` and ``medium.gamma`` are already expressed in ``1/T``.
    A supplied grid is in the same time unit as the pulses and is rescaled too.
    """
    T_unit = pulses.T if isinstance(pulses, SechPulses) else 1.0
    scaled = pulses.scaled(T_unit) if T_unit != 1.0 else pulses
    if grid is None:
        grid = Grid.default_for(scaled, z_values)
    elif T_unit != 1.0:
        grid = Grid(grid.tau_min / T_unit, grid.tau_max / T_unit, grid.n_tau, grid.z_values)
    return Problem(kind=medium.kind, q_p=float(medium.q_ratio), pulses=scaled, grid=grid,
                   delta_p=float(medium.delta_p), gamma=float(medium.gamma), T_unit=T_unit)


def z_from_physical(x: float, q_s: float, a: float, T: float) -> float:
    """Dimensionless length ``x q_s / (a^2 T)``."""
    return x * q_s / (a**2 * T)
