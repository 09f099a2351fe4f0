"""Command-line entry point: ``blowup {synth,solve,analyze,verify}``.

Exit status: 0 when every hard check passes, 1 when a hard check fails,
2 for configuration or usage errors, 3 when the linear solver fails.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import OUTPUT_ENV, RunConfig, parse_config_text, read_config_text
from .dynamics import analyze, report_dict, run_series, series_csv
from .errors import BlowupError, ConfigurationError, SolverFailure
from .fields import PatchConfig, build_synthetic
from .integration import IntegrationSpec
from .solver import (
    Grid,
    SolverConfig,
    boundary_from_spec,
    export_snapshot,
    field_of,
    fixed_point_solve,
    import_snapshot,
)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
RUN_SCHEMA = "blowup-run/1"


@dataclass
class RunReport:
    config: RunConfig
    analysis: object
    csv_path: Path
    report_path: Path
    solver_metrics: dict | None = None
    snapshot_path: Path | None = None
    timings: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.analysis.passed

    def to_dict(self):
        out = {
            "schema": RUN_SCHEMA,
            "config": self.config.echo(),
            "csv": self.csv_path.name,
            "report": report_dict(self.analysis),
        }
        if self.solver_metrics is not None:
            out["solver"] = self.solver_metrics
            out["snapshot"] = self.snapshot_path.name
        return out


def _integration_spec(cfg):
    i = cfg.data["integration"]
    return IntegrationSpec(i["method"], i["samples"], i["seed"])


def _solver_config(cfg):
    s = cfg.data["solver"]
    extra = {k: s[k] for k in (
        "threshold_factor", "release_factor", "damping", "max_outer_iterations", "linear_solver_tolerance"
    ) if k in s}
    return SolverConfig(boundary_data=boundary_from_spec(s["boundary"], cfg.dimension),
                        label=s["boundary"]["kind"], **extra)


def build_field(cfg, timings):
    """Return ``(field, solution_or_None)`` for a resolved configuration."""
    start = time.perf_counter()
    if cfg.mode == "synth":
        patch = PatchConfig.from_dict(cfg.data["patch_config"])
        result = build_synthetic(patch), None
    else:
        grid = Grid(cfg.dimension, cfg.data["solver"]["cells"])
        solution = fixed_point_solve(grid, _solver_config(cfg))
        result = field_of(solution), solution
    timings["build"] = time.perf_counter() - start
    return result


def analyze_field(field, cfg, timings):
    start = time.perf_counter()
    series = run_series(
        field,
        cfg.t_values(),
        _integration_spec(cfg),
        cfg.data["k_max"],
        cfg.data["quadrature"]["resolution"],
    )
    timings["scales"] = time.perf_counter() - start
    start = time.perf_counter()
    analysis = analyze(series, cfg.data["T"])
    timings["checks"] = time.perf_counter() - start
    return analysis


def write_outputs(cfg, analysis, solution=None, timings=None):
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{cfg.prefix}.csv"
    report_path = out / f"{cfg.prefix}.json"
    snapshot = None
    metrics = None
    if solution is not None:
        snapshot = export_snapshot(solution, out / f"{cfg.prefix}.grid")
        metrics = solution.metrics()
    csv_path.write_text(series_csv(analysis))
    report = RunReport(cfg, analysis, csv_path, report_path, metrics, snapshot, dict(timings or {}))
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / f"{cfg.prefix}.timings.json").write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    return report


def run(cfg):
    """Build the field, sweep the scales, run the checks and write the reports."""
    timings = {}
    field_, solution = build_field(cfg, timings)
    analysis = analyze_field(field_, cfg, timings)
    return write_outputs(cfg, analysis, solution, timings)


def check_table(analysis):
    rows = [c.row() for c in analysis.checks]
    width = max(len(r["check"]) for r in rows)
    lines = []
    for r in rows:
        status = "PASS" if r["passed"] else ("FAIL" if r["kind"] == "hard" else "warn")
        lines.append(f"{status:4}  {r['check']:<{width}}  {r['kind']:4}  value={r['value']}  threshold={r['threshold']}")
    return "\n".join(lines)


# ---------------------------------------------------------------- argument parsing


def _add_run_flags(p):
    p.add_argument("--output-dir", dest="output.directory", help=f"output directory (overrides ${OUTPUT_ENV})")
    p.add_argument("--prefix", dest="output.prefix")
    p.add_argument("--t-start", dest="scales.t_start", type=float)
    p.add_argument("--t-end", dest="scales.t_end", type=float)
    p.add_argument("--steps", dest="scales.steps", type=int)
    p.add_argument("--octaves", dest="scales.octaves", type=float)
    p.add_argument("--steps-per-octave", dest="scales.steps_per_octave", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--method", dest="integration.method", choices=["closed", "sampled"])
    p.add_argument("--samples", dest="integration.samples", type=int)
    p.add_argument("--seed", dest="integration.seed", type=int)
    p.add_argument("--resolution", dest="quadrature.resolution", type=int)
    p.add_argument("--T", dest="T", type=float, help="start of the tail window")


def build_parser():
    parser = argparse.ArgumentParser(prog="blowup", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("synth", "analyse a synthetic ball-patch field"), ("solve", "solve on a grid and analyse")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="configuration file or bundled configuration name")
        _add_run_flags(p)
        if name == "solve":
            p.add_argument("--cells", dest="solver.cells", type=int)
    p = sub.add_parser("analyze", help="analyse a stored grid snapshot")
    p.add_argument("snapshot")
    p.add_argument("--config", help="configuration supplying scales and integration settings")
    _add_run_flags(p)
    p = sub.add_parser("verify", help="run the acceptance matrix")
    p.add_argument("--output-dir", default=None)
    return parser


def _overrides(ns):
    return {k: v for k, v in vars(ns).items() if "." in k or k in ("k_max", "T")}


def _load(ns, mode):
    text, source = read_config_text(ns.config)
    data = parse_config_text(text, source)
    if data["mode"] != mode:
        raise ConfigurationError(f"{source}: field mode: is {data['mode']!r}, expected {mode!r} for this subcommand")
    return RunConfig.build(data, _overrides(ns))


def _analyze_snapshot(ns):
    if ns.config:
        text, source = read_config_text(ns.config)
        data = parse_config_text(text, source)
    else:
        data = {
            "version": 1,
            "mode": "solve",
            "solver": {"cells": 4, "boundary": {"kind": "hyperplane"}},
            "scales": {"t_start": 0.0, "octaves": 2, "steps_per_octave": 8},
            "k_max": 2,
        }
    cfg = RunConfig.build(data, _overrides(ns))
    timings = {}
    start = time.perf_counter()
    solution = import_snapshot(ns.snapshot)
    timings["load"] = time.perf_counter() - start
    analysis = analyze_field(field_of(solution), cfg, timings)
    return write_outputs(cfg, analysis, None, timings)


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "verify":
            from .verify import verify

            result = verify(ns.output_dir)
            print(result.table())
            return EXIT_OK if result.passed else EXIT_CHECK_FAILED
        if ns.command == "analyze":
            report = _analyze_snapshot(ns)
        else:
            report = run(_load(ns, ns.command))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (BlowupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(check_table(report.analysis))
    if report.solver_metrics is not None and not report.solver_metrics["converged"]:
        print("note: fixed-point iteration did not converge; best iterate analysed", file=sys.stderr)
    print(f"wrote {report.csv_path} and {report.report_path}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
