"""Run configuration: a YAML (or JSON) tree turned into solver inputs.

Layout::

    medium:      {kind, q_ratio, delta_p, gamma}
    pulses:      {a, T, t_d}  or  {file, tail_floor}
    grid:        {tau_min, tau_max, n_tau, z}  or  {..., z_max, n_z}
    oracle:      {dz, dt, tail_start}
    diagnostics: {z_scan_max, n_z, threshold, efficiency_z, pump_z}
    compare:     {tolerance}
    sweep:       {q_ratio: [...], t_d: [...], a: [...]}
    output:      {plot}

Sampled pulse files are CSV with columns ``tau, omega_p, omega_s``; relative
paths resolve against the config file.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .core import Grid, MediumParams, Problem, SampledPulses, TAIL_FLOOR, make_sech_pulses, normalize
from .errors import ConfigError, InvalidParameterError, StepSizeError
from .oracle import OracleConfig

SWEEP_LIMIT = 10_000
PRESETS = ("fig2", "fig3", "fig4", "fig5", "fig6")

_SECTIONS = {
    "medium": {"kind", "q_ratio", "delta_p", "gamma"},
    "pulses": {"a", "T", "t_d", "file", "tail_floor"},
    "grid": {"tau_min", "tau_max", "n_tau", "z", "z_max", "n_z"},
    "oracle": {"dz", "dt", "tail_start"},
    "diagnostics": {"z_scan_max", "n_z", "threshold", "efficiency_z", "pump_z"},
    "compare": {"tolerance"},
    "sweep": {"q_ratio", "t_d", "a"},
    "output": {"plot"},
    "description": None,
}


@dataclass
class DiagnosticsSettings:
    z_scan_max: float = 10.0
    n_z: int = 64
    threshold: float = 0.1
    efficiency_z: tuple | None = None
    pump_z: tuple | None = None


@dataclass
class RunConfig:
    problem: Problem
    oracle: OracleConfig
    diagnostics: DiagnosticsSettings
    tolerance: float = 0.05
    sweep: dict = field(default_factory=dict)
    plot: bool = True
    source: str = "<memory>"
    raw: dict = field(default_factory=dict)

    def sweep_cells(self) -> list[dict]:
        """Cartesian product of the sweep axes in ``q_ratio, t_d, a`` order."""
        axes = [(k, self.sweep[k]) for k in ("q_ratio", "t_d", "a") if k in self.sweep]
        if not axes:
            return []
        n = int(np.prod([len(v) for _, v in axes]))
        if n > SWEEP_LIMIT:
            raise ConfigError(f"sweep has {n} cells, limit is {SWEEP_LIMIT}")
        names = [k for k, _ in axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in axes))]

    def with_overrides(self, q_ratio=None, t_d=None, a=None) -> "RunConfig":
        """Copy with one sweep cell applied; sech pulses only for ``t_d``/``a``."""
        raw = {k: dict(v) if isinstance(v, dict) else v for k, v in self.raw.items()}
        if q_ratio is not None:
            raw.setdefault("medium", {})["q_ratio"] = q_ratio
        if t_d is not None or a is not None:
            pulses = raw.setdefault("pulses", {})
            if "file" in pulses:
                raise ConfigError("t_d and a sweeps need analytic sech pulses")
            if t_d is not None:
                pulses["t_d"] = t_d
            if a is not None:
                pulses["a"] = a
        return from_dict(raw, self.source)


def _section(tree: dict, name: str) -> dict:
    sec = tree.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    unknown = set(sec) - _SECTIONS[name]
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {', '.join(sorted(unknown))}")
    return sec


def _float_list(value, name: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        value = [value]
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must be a number or a list of numbers") from None


def _load_sampled(path: Path, tail_floor: float) -> SampledPulses:
    data = None
    for skip in (0, 1):  # optional header line
        try:
            data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, skiprows=skip)
            break
        except OSError as exc:
            raise ConfigError(f"cannot read pulse file {path}: {exc}") from exc
        except ValueError as exc:
            err = exc
    if data is None:
        raise ConfigError(f"malformed pulse file {path}: {err}")
    if data.shape[1] != 3:
        raise ConfigError(f"pulse file {path} needs columns tau, omega_p, omega_s")
    return SampledPulses(data[:, 0], data[:, 1], data[:, 2], tail_floor)


def from_dict(tree: dict, source: str = "<memory>") -> RunConfig:
    """Build a :class:`RunConfig`, raising :class:`ConfigError` on any problem."""
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(tree) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    base = Path(source).parent if source != "<memory>" else Path(".")
    try:
        med = _section(tree, "medium")
        medium = MediumParams(kind=med.get("kind", "lambda"), q_ratio=float(med.get("q_ratio", 1.0)),
                              delta_p=float(med.get("delta_p", 0.0)), gamma=float(med.get("gamma", 0.0)))

        pul = _section(tree, "pulses")
        if "file" in pul:
            if {"a", "T", "t_d"} & set(pul):
                raise ConfigError("pulses: give either 'file' or sech parameters, not both")
            pulses = _load_sampled(base / pul["file"], float(pul.get("tail_floor", TAIL_FLOOR)))
        else:
            if "a" not in pul:
                raise ConfigError("pulses: 'a' (peak Rabi frequency) is required")
            pulses = make_sech_pulses(float(pul["a"]), float(pul.get("T", 1.0)), float(pul.get("t_d", 0.0)))

        gr = _section(tree, "grid")
        if "z" in gr and ("z_max" in gr or "n_z" in gr):
            raise ConfigError("grid: give either 'z' or 'z_max'/'n_z'")
        if "z" in gr:
            z_values = _float_list(gr["z"], "grid.z")
        elif "z_max" in gr:
            z_values = tuple(np.linspace(0.0, float(gr["z_max"]), int(gr.get("n_z", 11))))
        else:
            z_values = (0.0,)
        n_tau = int(gr.get("n_tau", 2048))
        if "tau_min" in gr or "tau_max" in gr:
            default = Grid.default_for(pulses, z_values, n_tau)
            grid = Grid(float(gr.get("tau_min", default.tau_min)), float(gr.get("tau_max", default.tau_max)),
                        n_tau, z_values)
        else:
            grid = Grid.default_for(pulses, z_values, n_tau)
        problem = normalize(medium, pulses, grid)

        orc = _section(tree, "oracle")
        oracle = OracleConfig(dz=float(orc.get("dz", 0.01)), dt=float(orc.get("dt", 0.005)),
                              tail_start=None if orc.get("tail_start") is None else float(orc["tail_start"]))

        dg = _section(tree, "diagnostics")
        diag = DiagnosticsSettings(
            z_scan_max=float(dg.get("z_scan_max", 10.0)), n_z=int(dg.get("n_z", 64)),
            threshold=float(dg.get("threshold", 0.1)),
            efficiency_z=_float_list(dg["efficiency_z"], "diagnostics.efficiency_z") if "efficiency_z" in dg else None,
            pump_z=_float_list(dg["pump_z"], "diagnostics.pump_z") if "pump_z" in dg else None,
        )

        cmp_ = _section(tree, "compare")
        tolerance = float(cmp_.get("tolerance", 0.05))
        if not tolerance > 0:
            raise ConfigError("compare.tolerance must be positive")

        sw = _section(tree, "sweep")
        sweep = {k: _float_list(v, f"sweep.{k}") for k, v in sw.items()}
        plot = bool(_section(tree, "output").get("plot", True))
    except ConfigError:
        raise
    except (InvalidParameterError, StepSizeError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(problem, oracle, diag, tolerance, sweep, plot, source, tree)


def read_tree(path) -> dict:
    """Parse a YAML or JSON config file without validating it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    tree = tree or {}
    if not isinstance(tree, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return tree


def load_config(path) -> RunConfig:
    return from_dict(read_tree(path), str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("tristate_prop").joinpath("presets", f"{name}.yaml").read_text()


def load_preset(name: str) -> RunConfig:
    return from_dict(yaml.safe_load(preset_text(name)), f"preset:{name}")


def merge_tree(base: dict, override: dict) -> dict:
    """Section-wise merge; keys in ``override`` win.

    A z specification in the override replaces the base one whichever form
    (explicit list or ``z_max``/``n_z``) either uses.
    """
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    if {"z", "z_max", "n_z"} & set(override.get("grid") or {}) and isinstance(out.get("grid"), dict):
        for key in ("z", "z_max", "n_z"):
            out["grid"].pop(key, None)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


__all__ = ["RunConfig", "DiagnosticsSettings", "from_dict", "load_config", "load_preset", "read_tree",
           "preset_text", "merge_tree", "PRESETS", "SWEEP_LIMIT"]
