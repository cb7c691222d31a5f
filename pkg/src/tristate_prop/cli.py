"""Command-line front end.

    tristate-prop <simulate|diagnose|compare|sweep> --config PATH --out DIR
                  [--solver adiabatic|oracle|both] [--jobs N] [--preset figN] [--no-plot]

Exit codes: 0 ok, 1 compare verdict failed, 2 config error, 3 fold abort,
4 oracle divergence, 5 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import yaml

from . import __version__
from .adiabatic import solve_grid
from .core import AmplitudeState
from .config import PRESETS, RunConfig, from_dict, load_config, merge_tree, preset_text, read_tree
from .diagnostics import run_diagnostics
from .errors import (AdiabaticityError, BracketError, ConfigError, DivergenceError, DomainError,
                     FoldError, InvalidParameterError, SingularityError, StepSizeError, TristateError)
from .export import write_fields_csv, write_json, write_table_csv
from .oracle import COMPARED, compare, propagate

log = logging.getLogger("tristate_prop")

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_FOLD, EXIT_DIVERGENCE, EXIT_IO = 0, 1, 2, 3, 4, 5

COMPARE_COLUMNS = ["z"] + [f"{m}_{q}" for q in COMPARED for m in ("l2", "linf")] + ["fold", "pass"]
SWEEP_COLUMNS = ["cell", "q_ratio", "t_d", "a", "z_break", "sign_condition", "z_pump_est",
                 "z_pump_measured", "z_stirap_est", "efficiency_final", "conservation_residual",
                 "status", "error"]


class Run:
    """Per-invocation bookkeeping that ends up in ``manifest.json``."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, plot: bool):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.plot = plot
        self.stages: dict[str, float] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self.t0 = time.perf_counter()

    @contextmanager
    def stage(self, name: str):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = round(time.perf_counter() - t, 6)
            log.info("stage %s: %.3f s", name, self.stages[name])

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def meta(self, **kw) -> dict:
        d = {"command": self.command}
        d.update(kw)
        return d

    def manifest(self, exit_code: int) -> None:
        write_json(self.out / "manifest.json", {
            "command": self.command,
            "config": self.cfg.source,
            "out": str(self.out),
            "version": __version__,
            "duration_s": round(time.perf_counter() - self.t0, 6),
            "stages": self.stages,
            "outputs": self.outputs,
            "exit_code": exit_code,
            **self.extra,
        })


def _fold_message(sol) -> FoldError:
    for k, z in enumerate(sol.z):
        if sol.fold[k].any():
            tau = sol.fold_positions(k)
            return FoldError(z, float(tau[0]),
                             f"characteristic fold at z={z:.6g} for tau in [{tau[0]:.6g}, {tau[-1]:.6g}]")
        if sol.folded[k]:
            return FoldError(z, float("nan"),
                             f"characteristics launched inside the window have crossed by z={z:.6g}")
    return None


def _oracle_run(cfg: RunConfig):
    z = cfg.problem.grid.z
    hist = propagate(cfg.problem, cfg.oracle, float(z.max()), z_out=z, keep_all=False)
    idx = [hist.index_of(zk) for zk in z]
    return hist, idx


def cmd_simulate(run: Run, solver: str) -> int:
    cfg = run.cfg
    problem = cfg.problem
    if solver in ("adiabatic", "both"):
        with run.stage("adiabatic"):
            sol = solve_grid(problem)
            err = _fold_message(sol)
            if err is not None:
                raise err
        fields, amps = sol.fields, sol.amplitudes
        with run.stage("write_adiabatic"):
            write_fields_csv(run.path("fields.csv"), fields, amps, run.meta(solver="adiabatic"))
            if run.plot:
                from .plotting import plot_fields
                plot_fields(fields, run.path("fields.png"), amps, title="adiabatic")
    if solver in ("oracle", "both"):
        with run.stage("oracle"):
            hist, idx = _oracle_run(cfg)
        fields = hist.fields.slice_many(idx)
        amp = hist.amplitudes
        amps = AmplitudeState(amp.b1[idx], amp.b2[idx], amp.b3[idx])
        name = "fields.csv" if solver == "oracle" else "fields_oracle.csv"
        with run.stage("write_oracle"):
            write_fields_csv(run.path(name), fields, amps, run.meta(solver="oracle"))
            if run.plot:
                from .plotting import plot_fields
                plot_fields(fields, run.path(name.replace(".csv", ".png")), amps, title="oracle")
        run.extra["oracle_stats"] = hist.stats
    run.extra["solver"] = solver
    return EXIT_OK


def cmd_diagnose(run: Run) -> int:
    cfg = run.cfg
    d = cfg.diagnostics
    with run.stage("diagnostics"):
        report = run_diagnostics(cfg.problem, d.z_scan_max, d.n_z, d.threshold,
                                 efficiency_z=d.efficiency_z, pump_z=d.pump_z)
    with run.stage("write"):
        write_json(run.path("diagnostics.json"), report.to_dict())
        if run.plot:
            from .plotting import plot_efficiency
            plot_efficiency(report.efficiency_curve, run.path("efficiency.png"),
                            z_stirap=report.z_stirap_est)
    return EXIT_OK


def cmd_compare(run: Run) -> int:
    cfg = run.cfg
    with run.stage("oracle"):
        hist, idx = _oracle_run(cfg)
    with run.stage("adiabatic"):
        sol = solve_grid(cfg.problem, cfg.problem.grid.z, tau=hist.tau)
    errors = compare(sol, hist)
    rows = []
    for k, e in enumerate(errors):
        fold = bool(sol.fold[k].any() or sol.folded[k])
        row = {"z": e.z, "fold": fold}
        for q in COMPARED:
            row[f"l2_{q}"] = e.l2[q]
            row[f"linf_{q}"] = e.linf[q]
        row["pass"] = (not fold and row["l2_omega_p"] <= cfg.tolerance
                       and row["l2_omega_s"] <= cfg.tolerance)
        rows.append(row)
    verdict = all(r["pass"] for r in rows)
    folds = [r["z"] for r in rows if r["fold"]]
    with run.stage("write"):
        write_table_csv(run.path("compare.csv"), COMPARE_COLUMNS, rows,
                        run.meta(tolerance=cfg.tolerance), kind="compare")
        write_json(run.path("verdict.json"), {
            "verdict": "pass" if verdict else "fail",
            "tolerance": cfg.tolerance,
            "metric": "relative L2 of omega_p and omega_s per z slice",
            "max_l2_omega_p": max(r["l2_omega_p"] for r in rows),
            "max_l2_omega_s": max(r["l2_omega_s"] for r in rows),
            "fold_z": folds,
        })
        if run.plot:
            from .plotting import plot_errors
            plot_errors(rows, run.path("compare.png"), cfg.tolerance)
    run.extra["verdict"] = "pass" if verdict else "fail"
    run.extra["oracle_stats"] = hist.stats
    print(f"verdict: {'pass' if verdict else 'fail'}"
          + (f" (fold at z={', '.join(f'{z:.6g}' for z in folds)})" if folds else ""))
    return EXIT_OK if verdict else EXIT_VERDICT


def _sweep_cell(args) -> dict:
    raw, source, index, cell = args
    row = {"cell": index, **{k: cell.get(k) for k in ("q_ratio", "t_d", "a")}}
    try:
        cfg = from_dict(raw, source).with_overrides(**cell)
        pulses = cfg.problem.pulses
        row["t_d"] = getattr(pulses, "t_d", None)
        row["a"] = cfg.problem.omega0
        row["q_ratio"] = cfg.problem.q_ratio
        d = cfg.diagnostics
        rep = run_diagnostics(cfg.problem, d.z_scan_max, d.n_z, d.threshold,
                              efficiency_z=d.efficiency_z, pump_z=d.pump_z)
        eff = [e for _, e in rep.efficiency_curve]
        row.update(z_break=rep.z_break, sign_condition=rep.sign_condition,
                   z_pump_est=rep.z_pump_est, z_pump_measured=rep.z_pump_measured,
                   z_stirap_est=rep.z_stirap_est, efficiency_final=eff[-1] if eff else None,
                   conservation_residual=rep.conservation_residual, status="ok", error="")
    except TristateError as exc:
        row.update(status="error", error=f"{type(exc).__name__}: {exc}".replace(",", ";"))
    return row


def cmd_sweep(run: Run, jobs: int) -> int:
    cfg = run.cfg
    cells = cfg.sweep_cells()
    tasks = [(cfg.raw, cfg.source, i, c) for i, c in enumerate(cells)]
    with run.stage("sweep"):
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_sweep_cell, tasks))
        else:
            rows = [_sweep_cell(t) for t in tasks]
    rows.sort(key=lambda r: r["cell"])
    with run.stage("write"):
        write_table_csv(run.path("sweep.csv"), SWEEP_COLUMNS, rows, run.meta(), kind="sweep")
        if run.plot and rows:
            from .plotting import plot_sweep
            plot_sweep(rows, run.path("sweep.png"))
    run.extra["cells"] = len(rows)
    run.extra["failed_cells"] = sum(r["status"] != "ok" for r in rows)
    return EXIT_OK


def _configure_logging() -> None:
    level = os.environ.get("TRISTATE_LOG", "WARNING").strip().upper()
    value = int(level) if level.isdigit() else getattr(logging, level, logging.WARNING)
    logging.basicConfig(level=value, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tristate-prop",
                                description="Pulse-pair propagation in three-level media.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=("simulate", "diagnose", "compare", "sweep"))
    p.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--solver", choices=("adiabatic", "oracle", "both"), default="adiabatic")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep")
    p.add_argument("--preset", choices=PRESETS, help="start from a packaged figure preset")
    p.add_argument("--no-plot", action="store_true", help="skip PNG figures")
    return p


def _load(args) -> RunConfig:
    if args.config is None and args.preset is None:
        raise ConfigError("give --config, --preset or both")
    if args.preset is None:
        return load_config(args.config)
    tree = yaml.safe_load(preset_text(args.preset))
    source = f"preset:{args.preset}"
    if args.config is not None:
        # a partial override only has to be valid once merged
        tree = merge_tree(tree, read_tree(args.config))
        source = str(args.config)
    return from_dict(tree, source)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    run = None
    try:
        cfg = _load(args)
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"error: cannot create output directory: {exc}", file=sys.stderr)
            return EXIT_IO
        run = Run(args.command, cfg, args.out, cfg.plot and not args.no_plot)
        if args.command == "simulate":
            code = cmd_simulate(run, args.solver)
        elif args.command == "diagnose":
            code = cmd_diagnose(run)
        elif args.command == "compare":
            code = cmd_compare(run)
        else:
            code = cmd_sweep(run, args.jobs)
    except (ConfigError, InvalidParameterError, DomainError, StepSizeError) as exc:
        code = EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
    except (FoldError, SingularityError, BracketError, AdiabaticityError) as exc:
        code = EXIT_FOLD
        print(f"error: {exc}", file=sys.stderr)
    except DivergenceError as exc:
        code = EXIT_DIVERGENCE
        print(f"error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if run is not None:
        try:
            run.manifest(code)
        except OSError as exc:
            print(f"error: cannot write manifest: {exc}", file=sys.stderr)
            return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
