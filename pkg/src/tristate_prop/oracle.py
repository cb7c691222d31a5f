"""Direct integration of the coupled amplitude and field equations.

Each z slice integrates the three-level Schroedinger equation in tau with
classical RK4; the fields are then advanced in z by Heun's predictor-corrector.
Fields are carried as complex envelopes ``E = Omega exp(i phi)``:

    i db1/dt = E_p* b2
    i db2/dt = E_p b1 + E_s b3 + (delta_p - i gamma) b2
    i db3/dt = E_s* b2
    dE_p/dz = -i a^2 s_p q b1* b2,    dE_s/dz = -i a^2 s_s b3* b2
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import AmplitudeState, FieldState, Problem, TAIL_FLOOR
from .errors import AlignmentError, DivergenceError, StepSizeError

log = logging.getLogger(__name__)

STABILITY = 0.1


@dataclass(frozen=True)
class OracleConfig:
    dz: float = 0.01
    dt: float = 0.005
    delta_p: float | None = None
    gamma: float | None = None
    tail_start: float | None = None

    def __post_init__(self):
        if not (self.dz > 0 and self.dt > 0):
            raise StepSizeError("dz and dt must be positive")

    def resolved(self, problem: Problem) -> "OracleConfig":
        return OracleConfig(
            dz=self.dz, dt=self.dt,
            delta_p=problem.delta_p if self.delta_p is None else self.delta_p,
            gamma=problem.gamma if self.gamma is None else self.gamma,
            tail_start=problem.grid.tau_min if self.tail_start is None else self.tail_start,
        )

    def tau_grid(self, problem: Problem) -> np.ndarray:
        start = problem.grid.tau_min if self.tail_start is None else self.tail_start
        n = int(round((problem.grid.tau_max - start) / self.dt)) + 1
        return np.linspace(start, problem.grid.tau_max, max(n, 2))


@dataclass
class FieldHistory:
    z: np.ndarray
    tau: np.ndarray
    e_p: np.ndarray
    e_s: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    config: OracleConfig = None
    stats: dict = field(default_factory=dict)

    @property
    def fields(self) -> FieldState:
        return FieldState(self.z, self.tau, abs(self.e_p), abs(self.e_s),
                          np.angle(self.e_p), np.angle(self.e_s))

    @property
    def amplitudes(self) -> AmplitudeState:
        return AmplitudeState(self.b1, self.b2, self.b3)

    def index_of(self, z: float, atol: float = 1e-9) -> int:
        k = int(np.argmin(abs(self.z - z)))
        if abs(self.z[k] - z) > atol:
            raise AlignmentError(f"z={z} is not a recorded slice")
        return k


@numba.njit(cache=True)
def _rhs(b1, b2, b3, ep, es, diag):
    d1 = -1j * np.conj(ep) * b2
    d2 = -1j * (ep * b1 + es * b3 + diag * b2)
    d3 = -1j * np.conj(es) * b2
    return d1, d2, d3


@numba.njit(cache=True)
def _midpoint(e, i):
    n = e.size
    if n < 4:
        return 0.5 * (e[i] + e[i + 1])
    if i == 0:
        return (3.0 * e[0] + 6.0 * e[1] - e[2]) / 8.0
    if i == n - 2:
        return (-e[n - 3] + 6.0 * e[n - 2] + 3.0 * e[n - 1]) / 8.0
    return (-e[i - 1] + 9.0 * e[i] + 9.0 * e[i + 1] - e[i + 2]) / 16.0


@numba.njit(cache=True)
def _rk4_slice(e_p, e_s, dt, delta, gamma, b0):
    n = e_p.size
    out = np.empty((3, n), dtype=np.complex128)
    diag = delta - 1j * gamma
    b1, b2, b3 = b0[0], b0[1], b0[2]
    out[0, 0], out[1, 0], out[2, 0] = b1, b2, b3
    h = dt
    for i in range(n - 1):
        pm = _midpoint(e_p, i)
        sm = _midpoint(e_s, i)
        k11, k12, k13 = _rhs(b1, b2, b3, e_p[i], e_s[i], diag)
        k21, k22, k23 = _rhs(b1 + 0.5 * h * k11, b2 + 0.5 * h * k12, b3 + 0.5 * h * k13, pm, sm, diag)
        k31, k32, k33 = _rhs(b1 + 0.5 * h * k21, b2 + 0.5 * h * k22, b3 + 0.5 * h * k23, pm, sm, diag)
        k41, k42, k43 = _rhs(b1 + h * k31, b2 + h * k32, b3 + h * k33, e_p[i + 1], e_s[i + 1], diag)
        b1 = b1 + h / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
        b2 = b2 + h / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
        b3 = b3 + h / 6.0 * (k13 + 2.0 * k23 + 2.0 * k33 + k43)
        out[0, i + 1], out[1, i + 1], out[2, i + 1] = b1, b2, b3
    return out


def trapped_state(e_p: complex, e_s: complex) -> np.ndarray:
    """Zero-eigenvalue state ``(E_s, 0, -E_p) / W``; ground state if both vanish."""
    w = np.hypot(abs(e_p), abs(e_s))
    if w == 0:
        return np.array([1.0, 0.0, 0.0], dtype=complex)
    return np.array([e_s / w, 0.0, -e_p / w], dtype=complex)


def integrate_slice(e_p, e_s, tau, config: OracleConfig, b0=None) -> AmplitudeState:
    """Integrate the amplitudes across one slice of (complex) fields.

    The atom starts at ``tau[0]`` in the trapped state of the local fields,
    which for counter-intuitive ordering is the ground state up to the
    entrance tail ratio.
    """
    e_p = np.ascontiguousarray(e_p, dtype=complex)
    e_s = np.ascontiguousarray(e_s, dtype=complex)
    dt = float(tau[1] - tau[0])
    delta = 0.0 if config.delta_p is None else config.delta_p
    gamma = 0.0 if config.gamma is None else config.gamma
    peak = max(float(np.max(abs(e_p))), float(np.max(abs(e_s))), abs(delta), gamma)
    if dt * peak >= STABILITY:
        raise StepSizeError(f"dt*max(W, |delta|, gamma) = {dt * peak:.3g} exceeds {STABILITY}")
    if b0 is None:
        b0 = trapped_state(e_p[0], e_s[0])
    out = _rk4_slice(e_p, e_s, dt, float(delta), float(gamma), np.asarray(b0, dtype=complex))
    return AmplitudeState(out[0], out[1], out[2])


@dataclass
class SourceRates:
    d_omega_p: np.ndarray
    d_omega_s: np.ndarray
    d_phi_p: np.ndarray
    d_phi_s: np.ndarray
    d_e_p: np.ndarray
    d_e_s: np.ndarray


def polarization_sources(amps: AmplitudeState, e_p, e_s, problem: Problem) -> SourceRates:
    """Field rates per unit z from the induced coherences.

    Magnitude and phase rates are the real and imaginary parts of
    ``exp(-i phi) dE/dz``; phase rates are zeroed where the envelope sits
    below the tail floor.
    """
    s_p, s_s = problem.signs
    scale = problem.omega0**2 / abs(problem.q_s)
    d_ep = -1j * scale * s_p * problem.q_p * np.conj(amps.b1) * amps.b2
    d_es = -1j * scale * s_s * problem.q_s * np.conj(amps.b3) * amps.b2
    e_p = np.asarray(e_p, dtype=complex)
    e_s = np.asarray(e_s, dtype=complex)
    floor = TAIL_FLOOR * problem.omega0

    def split(e, de):
        mag = abs(e)
        rot = np.exp(-1j * np.angle(e)) * de
        with np.errstate(divide="ignore", invalid="ignore"):
            dphi = np.where(mag > floor, rot.imag / mag, 0.0)
        return rot.real, dphi

    dp, dphp = split(e_p, d_ep)
    ds, dphs = split(e_s, d_es)
    return SourceRates(dp, ds, dphp, dphs, d_ep, d_es)


def _z_schedule(z_max: float, dz: float, z_out) -> np.ndarray:
    """Step positions that land exactly on every requested output length."""
    marks = [0.0, float(z_max)]
    if z_out is not None:
        marks += [float(z) for z in np.atleast_1d(z_out) if 0.0 <= z <= z_max]
    marks = np.unique(marks)
    pieces = [np.zeros(1)]
    for lo, hi in zip(marks[:-1], marks[1:]):
        n = max(int(np.ceil((hi - lo) / dz - 1e-9)), 1)
        pieces.append(np.linspace(lo, hi, n + 1)[1:])
    return np.concatenate(pieces)


def propagate(problem: Problem, config: OracleConfig, z_max: float, z_out=None,
              keep_all: bool = True) -> FieldHistory:
    """March the fields from the entrance to ``z_max`` with Heun steps.

    Steps never exceed ``config.dz`` and are shortened where needed to land on
    each length in ``z_out``. With ``keep_all=False`` only the entrance, the
    ``z_out`` slices and ``z_max`` are stored.
    """
    if z_max < 0:
        raise StepSizeError("z_max must be non-negative")
    cfg = config.resolved(problem)
    tau = config.tau_grid(problem)
    z_all = _z_schedule(z_max, cfg.dz, z_out)
    if keep_all or z_out is None:
        keep = np.ones(z_all.size, dtype=bool)
    else:
        wanted = np.concatenate([[0.0, z_max], np.atleast_1d(z_out)])
        keep = np.isin(z_all, wanted)
    z = z_all[keep]
    slot = np.cumsum(keep) - 1
    e_p = problem.pulses.omega_p(tau).astype(complex)
    e_s = problem.pulses.omega_s(tau).astype(complex)
    shape = (z.size, tau.size)
    hist = {k: np.empty(shape, dtype=complex) for k in ("e_p", "e_s", "b1", "b2", "b3")}
    limit = 1e3 * problem.omega0

    def record(k, ep, es, amps):
        if not keep[k]:
            return
        j = slot[k]
        hist["e_p"][j], hist["e_s"][j] = ep, es
        hist["b1"][j], hist["b2"][j], hist["b3"][j] = amps.b1, amps.b2, amps.b3

    amps = integrate_slice(e_p, e_s, tau, cfg)
    record(0, e_p, e_s, amps)
    max_norm_err = float(np.max(abs(amps.norm - 1.0)))
    n_steps = z_all.size - 1
    for k in range(n_steps):
        h = z_all[k + 1] - z_all[k]
        r0 = polarization_sources(amps, e_p, e_s, problem)
        ep_pred = e_p + h * r0.d_e_p
        es_pred = e_s + h * r0.d_e_s
        try:
            # a field that outgrows the tau step is runaway growth, not a bad config
            amps_pred = integrate_slice(ep_pred, es_pred, tau, cfg)
            r1 = polarization_sources(amps_pred, ep_pred, es_pred, problem)
            e_p = e_p + 0.5 * h * (r0.d_e_p + r1.d_e_p)
            e_s = e_s + 0.5 * h * (r0.d_e_s + r1.d_e_s)
            if not (np.all(np.isfinite(e_p)) and np.all(np.isfinite(e_s))
                    and max(np.max(abs(e_p)), np.max(abs(e_s))) < limit):
                raise DivergenceError(k, float(z_all[k]))
            amps = integrate_slice(e_p, e_s, tau, cfg)
        except StepSizeError as err:
            raise DivergenceError(k, float(z_all[k])) from err
        record(k + 1, e_p, e_s, amps)
        max_norm_err = max(max_norm_err, float(np.max(abs(amps.norm - 1.0))))
    log.info("oracle: %d steps, %d tau points, max norm error %.2e", n_steps, tau.size, max_norm_err)
    return FieldHistory(z, tau, config=cfg, stats={"max_norm_error": max_norm_err,
                                                   "n_steps": n_steps, "n_tau": tau.size},
                        **hist)


@dataclass
class SliceErrors:
    z: float
    l2: dict
    linf: dict


def _rel(a, b):
    ref = np.linalg.norm(b)
    diff = a - b
    l2 = np.linalg.norm(diff) / ref if ref > 0 else float(np.linalg.norm(diff))
    mref = np.max(abs(b))
    linf = np.max(abs(diff)) / mref if mref > 0 else float(np.max(abs(diff)))
    return float(l2), float(linf)


COMPARED = ("omega_p", "omega_s", "theta", "pop1", "pop2", "pop3")


def _quantities(fields: FieldState, amps: AmplitudeState, k: int) -> dict:
    pops = amps.populations
    return {
        "omega_p": fields.omega_p[k], "omega_s": fields.omega_s[k], "theta": fields.theta[k],
        "pop1": pops[0][k], "pop2": pops[1][k], "pop3": pops[2][k],
    }


def compare(adiabatic, history: FieldHistory) -> list[SliceErrors]:
    """Relative L2 and L-infinity errors of the adiabatic solution per z slice.

    ``adiabatic`` may be an :class:`AdiabaticSolution` or a ``(FieldState,
    AmplitudeState)`` pair; its tau grid must equal the history's and each of
    its z values must be a recorded slice.
    """
    if isinstance(adiabatic, tuple):
        fields, amps = adiabatic
    else:
        fields, amps = adiabatic.fields, adiabatic.amplitudes
    if fields.tau.shape != history.tau.shape or not np.allclose(fields.tau, history.tau,
                                                                 rtol=0, atol=1e-12):
        raise AlignmentError("tau grids differ between adiabatic solution and oracle history")
    hf, ha = history.fields, history.amplitudes
    out = []
    for k, z in enumerate(np.atleast_1d(fields.z)):
        j = history.index_of(z)
        mine = _quantities(fields, amps, k)
        ref = _quantities(hf, ha, j)
        l2, linf = {}, {}
        for name in COMPARED:
            l2[name], linf[name] = _rel(mine[name], ref[name])
        out.append(SliceErrors(float(z), l2, linf))
    return out
