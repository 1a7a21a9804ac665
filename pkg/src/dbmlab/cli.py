"""Command line runner: `dbm-lab run | replay | list-experiments`.

Exit codes: 0 every check passed, 2 a check failed, 3 invalid config,
4 runtime or integrity failure.
"""

import argparse
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__, experiments, io
from .errors import ConfigValidationError, DbmLabError, IntegrityError
from .report import DiagnosticsReport

EXIT_PASS, EXIT_CHECK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4
ENV_OUT = "DBMLAB_OUT"
ENV_WORKERS = "DBMLAB_WORKERS"

ExperimentName = Literal[
    "semicircle-invariance", "flow-from-atoms", "quantile-consistency", "dbm-rigidity",
    "ou-crosscheck", "gap-universality", "level-repulsion", "local-gibbs-sample",
    "coupling-flatten", "finite-speed", "persistent-trailing",
]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentName
    N: int = Field(ge=2)
    beta: float = Field(ge=1)
    seeds: list[int] = [0]
    t_window: Optional[tuple[float, float]] = None
    params: dict = {}
    thresholds: dict[str, float] = {}
    output_dir: str = "dbm-lab-out"

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in v):
            raise ValueError("seeds must be nonnegative")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v

    @field_validator("t_window")
    @classmethod
    def _window(cls, v):
        if v is not None and not (0 <= v[0] < v[1]):
            raise ValueError("t_window must satisfy 0 <= t0 < t1")
        return v


def validate_config(raw):
    """Parse a dict into (ExperimentConfig, params model) or raise ConfigValidationError."""
    errors = []
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigValidationError([(".".join(map(str, err["loc"])), err["msg"]) for err in e.errors()])
    exp = experiments.REGISTRY[cfg.experiment]
    try:
        p = exp.params.model_validate(cfg.params)
    except ValidationError as e:
        errors = [(".".join(["params", *map(str, err["loc"])]), err["msg"]) for err in e.errors()]
        raise ConfigValidationError(errors)
    if cfg.experiment in ("ou-crosscheck", "gap-universality", "level-repulsion", "dbm-rigidity",
                          "coupling-flatten", "finite-speed", "persistent-trailing") \
            and cfg.beta not in (1.0, 2.0):
        raise ConfigValidationError([("beta", "matrix-started experiments need beta 1 or 2")])
    return cfg, p


def load_config(path):
    with open(path) as fh:
        raw = json.load(fh)
    return validate_config(raw)


def _simulate_one(args):
    cfg_dict, seed = args
    cfg, p = validate_config(cfg_dict)
    return seed, experiments.REGISTRY[cfg.experiment].simulate(cfg, p, seed)


def simulate(cfg, p, workers=1):
    """{seed: {name: Frames}}, aggregated in seed order."""
    exp = experiments.REGISTRY[cfg.experiment]
    seeds = cfg.seeds[:1] if exp.deterministic else cfg.seeds
    jobs = [(cfg.model_dump(mode="json"), s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    return {s: d for s, d in sorted(results, key=lambda r: r[0])}


def analyze(cfg, p, data, overrides=None):
    reports = experiments.REGISTRY[cfg.experiment].analyze(cfg, p, data)
    overrides = {**cfg.thresholds, **(overrides or {})}
    out = []
    for r in reports:
        mine = {k: v for k, v in overrides.items() if k in r.thresholds}
        out.append(r.with_thresholds(**mine) if mine else r)
    return out


def execute(raw, workers=1):
    """Validate, simulate and analyze in memory. Returns (cfg, params, data, reports)."""
    cfg, p = raw if isinstance(raw, tuple) else validate_config(raw)
    data = simulate(cfg, p, workers)
    return cfg, p, data, analyze(cfg, p, data)


def report_document(cfg, reports):
    return {"experiment": cfg.experiment, "all_passed": all(r.all_passed for r in reports),
            "reports": [r.to_dict() for r in reports]}


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_summary(path, reports):
    rows = []
    for r in reports:
        for k, v in sorted(r.statistics.items()):
            rows.append([r.name, "statistic", k, repr(float(v))])
        for k, v in sorted(r.thresholds.items()):
            rows.append([r.name, "threshold", k, repr(float(v))])
        for k, v in sorted(r.passed.items()):
            rows.append([r.name, "passed", k, str(bool(v)).lower()])
    io.write_csv(path, ["report", "kind", "name", "value"], rows)


def plot_figure_csv(csv_path, svg_path, title=""):
    """Line plot of every series in a (series, x, y) CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    header, rows = io.read_csv(csv_path)
    series = {}
    for name, x, y in rows:
        series.setdefault(name, ([], []))
        series[name][0].append(float(x))
        series[name][1].append(float(y))
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (x, y) in series.items():
        ax.plot(x, y, lw=1, label=name if len(series) <= 12 else None)
    if 0 < len(series) <= 12:
        ax.legend(fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_bundle(out, cfg, p, data, reports):
    """Persist data, manifest, reports, summary and figures under `out`."""
    os.makedirs(os.path.join(out, "data"), exist_ok=True)
    os.makedirs(os.path.join(out, "figures"), exist_ok=True)
    hashes = {}
    for seed, named in data.items():
        for name, fr in sorted(named.items()):
            rel = os.path.join("data", f"{name}_seed{seed}.bin")
            io.write_frames(os.path.join(out, rel), fr.times, fr.values, fr.labels, fr.beta, fr.dt, fr.seed)
            hashes[rel] = io.sha256_file(os.path.join(out, rel))
    rel_fig = os.path.join("figures", f"{cfg.experiment}.csv")
    rows = experiments.REGISTRY[cfg.experiment].figure(cfg, p, data)
    io.write_csv(os.path.join(out, rel_fig), ["series", "x", "y"], rows)
    plot_figure_csv(os.path.join(out, rel_fig), os.path.join(out, "figures", f"{cfg.experiment}.svg"),
                    cfg.experiment)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(_dump(report_document(cfg, reports)))
    _write_summary(os.path.join(out, "summary.csv"), reports)
    cfg_dict = cfg.model_dump(mode="json")
    manifest = {
        "config": cfg_dict,
        "config_hash": io.sha256_json(cfg_dict),
        "seeds": sorted(data),
        "versions": {"dbmlab": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "scipy": __import__("scipy").__version__},
        "data": hashes,
        "report_hash": io.sha256_file(os.path.join(out, "report.json")),
    }
    io.write_json(os.path.join(out, "manifest.json"), manifest)
    return manifest


def run_experiment(raw, out=None, workers=1):
    """Full run. Returns the exit code."""
    try:
        cfg, p = validate_config(raw)
    except ConfigValidationError as e:
        print(str(e), file=sys.stderr)
        return EXIT_VALIDATION
    out = out or os.environ.get(ENV_OUT) or cfg.output_dir
    try:
        cfg, p, data, reports = execute((cfg, p), workers)
        write_bundle(out, cfg, p, data, reports)
    except (DbmLabError, ValueError, ArithmeticError) as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for r in reports:
        print(r.summary_line())
    return EXIT_PASS if all(r.all_passed for r in reports) else EXIT_CHECK


def load_bundle(manifest_path):
    """Verify hashes and reload (cfg, params, data)."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    man = io.read_json(manifest_path)
    if io.sha256_json(man["config"]) != man["config_hash"]:
        raise IntegrityError("config hash mismatch")
    io.verify_files(root, man["data"])
    cfg, p = validate_config(man["config"])
    data = {}
    for rel in sorted(man["data"]):
        base = os.path.basename(rel)[:-len(".bin")]
        name, seed = base.rsplit("_seed", 1)
        d = io.read_frames(os.path.join(root, rel))
        data.setdefault(int(seed), {})[name] = experiments.Frames(
            d["times"], d["values"], d["labels"], d["beta"], d["dt"], d["seed"])
    return cfg, p, {s: data[s] for s in sorted(data)}, man, root


def replay(manifest_path, overrides=None, write=True):
    """Recompute reports from stored data. Returns (exit code, reports)."""
    try:
        cfg, p, data, man, root = load_bundle(manifest_path)
        reports = analyze(cfg, p, data, overrides)
        doc = _dump(report_document(cfg, reports))
        if not overrides:
            with open(os.path.join(root, "report.json")) as fh:
                if fh.read() != doc:
                    raise IntegrityError("replayed report differs from the stored report.json")
        if write:
            with open(os.path.join(root, "replay_report.json"), "w") as fh:
                fh.write(doc)
    except ConfigValidationError as e:
        print(str(e), file=sys.stderr)
        return EXIT_VALIDATION, []
    except (DbmLabError, ValueError, OSError, KeyError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME, []
    for r in reports:
        print(r.summary_line())
    return (EXIT_PASS if all(r.all_passed for r in reports) else EXIT_CHECK), reports


def _overrides(items):
    out = {}
    for it in items or []:
        k, _, v = it.partition("=")
        out[k] = float(v)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(prog="dbm-lab")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--out", default=None)
    rp = sub.add_parser("replay", help="recompute reports from a finished run")
    rp.add_argument("manifest")
    rp.add_argument("--threshold", action="append", metavar="NAME=VALUE",
                    help="override a threshold before recomputing the pass flags")
    sub.add_parser("list-experiments", help="list experiment names")
    args = ap.parse_args(argv)
    if args.cmd == "list-experiments":
        for name in experiments.names():
            print(f"{name}\t{experiments.REGISTRY[name].description}")
        return EXIT_PASS
    if args.cmd == "run":
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            print(f"cannot read config: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        workers = args.workers or int(os.environ.get(ENV_WORKERS, "1"))
        return run_experiment(raw, args.out, workers)
    try:
        overrides = _overrides(args.threshold)
    except ValueError:
        print("threshold overrides must look like NAME=VALUE", file=sys.stderr)
        return EXIT_VALIDATION
    return replay(args.manifest, overrides)[0]


if __name__ == "__main__":
    sys.exit(main())
