"""Command-line entry point: generate | run | sweep | distortion | report | ingest.

Exit codes: 0 success, 2 config/usage, 3 IO, 4 runtime/numeric.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .continual import ExperimentConfig, derive_seed, model_inputs, run_continual, split_task
from .csbm import CsbmConfig, generate_stream
from .gnn import embeddings_for, load_checkpoint, save_checkpoint
from .graph import StreamFormatError, TaskStream, dumps_stream, induce_graph, read_stream
from .ingest import IngestError, to_stream
from .metrics import MetricsReport, distortion_profile

log = logging.getLogger("seaer")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _load_json(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def _strict(d: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{where}: missing key(s) {sorted(missing)}")


def _csbm_from(d) -> CsbmConfig:
    if not isinstance(d, dict):
        raise ConfigError("csbm: expected an object")
    try:
        return CsbmConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"csbm: {exc}") from None


def _experiment_from(d) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("experiment: expected an object")
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"experiment: {exc}") from None


def stream_hash(stream: TaskStream) -> str:
    return "sha256:" + hashlib.sha256(dumps_stream(stream).encode()).hexdigest()


def _write_new(path: Path, text: str) -> None:
    # outputs are append-only: never clobber an existing artifact
    with open(path, "x", encoding="utf-8") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# generate


def cmd_generate(config_path: str, out_path: str) -> int:
    try:
        d = _load_json(config_path)
        _strict(d, {"csbm"}, {"csbm"}, str(config_path))
        cfg = _csbm_from(d["csbm"])
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    stream = generate_stream(cfg)
    try:
        Path(out_path).write_text(dumps_stream(stream), encoding="utf-8")
    except OSError as exc:
        log.error("cannot write stream: %s", exc)
        return EXIT_IO
    return EXIT_OK


# ---------------------------------------------------------------------------
# run

RUN_KEYS = {"stream", "csbm", "experiment"}


def _parse_run_config(d: dict, base: Path) -> tuple[dict, ExperimentConfig]:
    _strict(d, RUN_KEYS, {"experiment"}, "run config")
    if ("stream" in d) == ("csbm" in d):
        raise ConfigError("run config: give exactly one of 'stream' or 'csbm'")
    source = {}
    if "stream" in d:
        p = Path(d["stream"])
        source["stream"] = str(p if p.is_absolute() else base / p)
    else:
        source["csbm"] = _csbm_from(d["csbm"])
    return source, _experiment_from(d["experiment"])


def _load_source(source: dict) -> TaskStream:
    if "stream" in source:
        return read_stream(source["stream"])
    return generate_stream(source["csbm"])


def execute_run(stream: TaskStream, exp: ExperimentConfig, out_dir: Path, config_echo: dict) -> dict:
    """Run one experiment and write its artifacts; returns the metrics dict."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    manifest = {
        "tool": "seaer",
        "version": __version__,
        "status": "running",
        "config": config_echo,
        "stream_hash": stream_hash(stream),
        "seeds": {
            "root": exp.seed,
            "backbone": derive_seed(exp.seed, "backbone"),
            "split": {t: derive_seed(exp.seed, "split", t) for t in range(1, stream.num_tasks + 1)},
        },
        "artifacts": {},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    _write_new(manifest_path, _dump(manifest))
    try:
        result = run_continual(stream, exp)
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest_path.write_text(_dump(manifest), encoding="utf-8")
        raise
    report = MetricsReport.from_matrix(result.matrix).to_dict()
    report["method"] = exp.label
    _write_new(out_dir / "performance.csv", result.matrix.to_csv())
    _write_new(out_dir / "metrics.json", _dump(report))
    _write_new(out_dir / "betas.json", _dump({str(k): v for k, v in result.betas.items()}))
    save_path = out_dir / "model.json"
    if save_path.exists():
        raise FileExistsError(save_path)
    save_checkpoint(result.params, save_path)
    manifest.update(
        status="ok",
        buffers={str(k): v for k, v in result.buffers.items()},
        valid_rows=result.valid_rows,
        timings=result.timings,
        artifacts={
            "performance": "performance.csv",
            "metrics": "metrics.json",
            "betas": "betas.json",
            "checkpoint": "model.json",
        },
        finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    manifest_path.write_text(_dump(manifest), encoding="utf-8")
    return report


def cmd_run(config_path: str, out_dir: str) -> int:
    config_path = Path(config_path)
    try:
        d = _load_json(config_path)
        source, exp = _parse_run_config(d, config_path.parent)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    out = Path(out_dir)
    if (out / "manifest.json").exists():
        log.error("%s already holds a run; outputs are never overwritten", out)
        return EXIT_IO
    try:
        stream = _load_source(source)
    except StreamFormatError as exc:
        log.error("invalid stream: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read stream: %s", exc)
        return EXIT_IO
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csbm" in source:
            _write_new(out / "stream.json", dumps_stream(stream))
        echo = {"experiment": exp.to_dict(), **({"stream": source["stream"]} if "stream" in source
                                                else {"csbm": source["csbm"].to_dict()})}
        report = execute_run(stream, exp, out, echo)
    except OSError as exc:
        log.error("IO failure: %s", exc)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - any numeric/runtime failure maps to exit 4
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    log.info("FAP=%.4f FAF=%s", report["FAP"], report["FAF"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

GRID_KEYS = {"deltas", "p_stages", "seeds", "methods", "csbm", "experiment"}


def _seed_list(value) -> list[int]:
    if isinstance(value, int):
        return list(range(value))
    if isinstance(value, list) and all(isinstance(s, int) for s in value):
        return value
    raise ConfigError("seeds: expected a count or a list of integers")


def _sweep_cell(args) -> dict:
    method, delta, p_stage, seed, csbm_base, exp_base, cell_dir = args
    row = {"method": method, "delta": delta, "p_stage": p_stage, "seed": seed, "FAP": "", "FAF": "", "status": "ok"}
    try:
        csbm = CsbmConfig.from_dict({**csbm_base, "delta": delta, "p_stage": p_stage, "seed": seed})
        exp_dict = {**exp_base, "method": method, "seed": seed}
        exp = ExperimentConfig.from_dict(exp_dict)
        stream = generate_stream(csbm)
        report = execute_run(stream, exp, Path(cell_dir), {"csbm": csbm.to_dict(), "experiment": exp_dict})
        row["FAP"] = repr(report["FAP"])
        row["FAF"] = "" if report["FAF"] is None else repr(report["FAF"])
    except Exception as exc:  # noqa: BLE001 - a failed cell is recorded, the sweep continues
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SEAER_THREADS", "1")))
    except ValueError:
        return 1


def cmd_sweep(grid_path: str, out_dir: str) -> int:
    try:
        d = _load_json(grid_path)
        _strict(d, GRID_KEYS, {"deltas", "p_stages", "seeds"}, str(grid_path))
        deltas, p_stages = d["deltas"], d["p_stages"]
        if not (isinstance(deltas, list) and deltas and isinstance(p_stages, list) and p_stages):
            raise ConfigError("deltas and p_stages must be nonempty lists")
        seeds = _seed_list(d["seeds"])
        methods = d.get("methods", ["BARE"])
        csbm_base = d.get("csbm", {})
        exp_base = d.get("experiment", {})
        # validate the base configs once so typos fail before any work
        _csbm_from({**csbm_base, "delta": deltas[0], "p_stage": p_stages[0]})
        for m in methods:
            _experiment_from({**exp_base, "method": m})
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read grid: %s", exc)
        return EXIT_IO
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if (out / "sweep.csv").exists():
            log.error("%s already holds a sweep", out)
            return EXIT_IO
    except OSError as exc:
        log.error("IO failure: %s", exc)
        return EXIT_IO
    jobs = []
    for method in methods:
        for delta in deltas:
            for p_stage in p_stages:
                for seed in seeds:
                    cell = out / f"{method}_delta{delta}_pstage{p_stage}_seed{seed}"
                    jobs.append((method, delta, p_stage, seed, csbm_base, exp_base, str(cell)))
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, jobs))
    else:
        rows = [_sweep_cell(j) for j in jobs]
    buf = io.StringIO()
    buf.write("# schema: seaer.sweep/v1\n")
    writer = csv.DictWriter(buf, fieldnames=["method", "delta", "p_stage", "seed", "FAP", "FAF", "status"],
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    try:
        _write_new(out / "sweep.csv", buf.getvalue())
    except OSError as exc:
        log.error("IO failure: %s", exc)
        return EXIT_IO
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d cells failed", failed, len(rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# distortion


def compute_distortion(params, stream: TaskStream, seed: int = 0, upto: int | None = None, max_hops: int = 5,
                       split_ratios=(0.6, 0.2, 0.2), standardize: bool = True):
    """Profile the model on the stage-``upto`` graph, anchored at the train splits of tasks 1..upto."""
    upto = stream.num_tasks if upto is None else upto
    g = induce_graph(stream, upto)
    splits = {t: split_task(b, split_ratios, derive_seed(seed, "split", t)) for t, b in enumerate(stream.batches, 1)}
    x = model_inputs(stream, splits, standardize)[g.vertex_ids]
    emb = embeddings_for(params, g, x)
    train = np.concatenate([splits[t].train for t in range(1, upto + 1)])
    return distortion_profile(emb, g, train, max_hops)


def cmd_distortion(checkpoint: str, stream_path: str, out_path: str, seed: int = 0, upto: int | None = None,
                   max_hops: int = 5, standardize: bool = True) -> int:
    try:
        params = load_checkpoint(checkpoint)
        stream = read_stream(stream_path)
    except (StreamFormatError, ValueError, KeyError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read input: %s", exc)
        return EXIT_IO
    if params.input_dim != stream.feature_dim:
        log.error("checkpoint expects %d features, stream has %d", params.input_dim, stream.feature_dim)
        return EXIT_CONFIG
    try:
        prof = compute_distortion(params, stream, seed, upto, max_hops, standardize=standardize)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.error("distortion failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    alpha = "degenerate" if prof.degenerate else repr(prof.alpha)
    text = prof.to_csv().replace("hop,count", f"# slope={prof.slope!r} alpha={alpha}\nhop,count", 1)
    try:
        Path(out_path).write_text(text, encoding="utf-8")
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_IO
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def aggregate(run_dirs: list[Path]) -> list[dict]:
    """Mean and std of FAP/FAF per method over every metrics.json found under ``run_dirs``."""
    by_method: dict[str, dict[str, list[float]]] = {}
    for root in run_dirs:
        for path in sorted(Path(root).rglob("metrics.json")):
            m = json.loads(path.read_text(encoding="utf-8"))
            rec = by_method.setdefault(m.get("method", "?"), {"FAP": [], "FAF": []})
            rec["FAP"].append(m["FAP"])
            if m.get("FAF") is not None:
                rec["FAF"].append(m["FAF"])
    rows = []
    for method in sorted(by_method):
        rec = by_method[method]
        fap = np.asarray(rec["FAP"]) * 100
        faf = np.asarray(rec["FAF"]) * 100
        rows.append({
            "method": method,
            "runs": len(fap),
            "FAP_mean": round(float(fap.mean()), 2),
            "FAP_std": round(float(fap.std(ddof=1)) if len(fap) > 1 else 0.0, 2),
            "FAF_mean": round(float(faf.mean()), 2) if len(faf) else "n/a",
            "FAF_std": round(float(faf.std(ddof=1)) if len(faf) > 1 else 0.0, 2) if len(faf) else "n/a",
        })
    rows.append({"method": "ER-INFL", "runs": 0, "FAP_mean": "unavailable", "FAP_std": "", "FAF_mean": "unavailable",
                 "FAF_std": ""})
    return rows


def cmd_report(run_dirs: list[str], out_path: str | None) -> int:
    try:
        rows = aggregate([Path(p) for p in run_dirs])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        log.error("cannot aggregate: %s", exc)
        return EXIT_IO
    buf = io.StringIO()
    buf.write("# schema: seaer.report/v1 (percent; forgetting = r[i][j] - r[j][j])\n")
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if out_path is None:
        sys.stdout.write(buf.getvalue())
        return EXIT_OK
    try:
        Path(out_path).write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        log.error("cannot write report: %s", exc)
        return EXIT_IO
    return EXIT_OK


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(edges: str, features: str, labels: str, out_path: str, classes_per_task: int = 2) -> int:
    try:
        stream = to_stream(edges, features, labels, classes_per_task=classes_per_task)
    except (IngestError, StreamFormatError, ValueError) as exc:
        log.error("ingestion failed: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read input: %s", exc)
        return EXIT_IO
    try:
        Path(out_path).write_text(dumps_stream(stream), encoding="utf-8")
    except OSError as exc:
        log.error("cannot write stream: %s", exc)
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seaer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"seaer {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a cSBM stream")
    p.add_argument("config")
    p.add_argument("out")

    p = sub.add_parser("run", help="run one continual-learning experiment")
    p.add_argument("config")
    p.add_argument("out_dir")

    p = sub.add_parser("sweep", help="grid over delta x p_stage x seeds")
    p.add_argument("grid")
    p.add_argument("out_dir")

    p = sub.add_parser("distortion", help="hop-bucketed embedding distance profile")
    p.add_argument("checkpoint")
    p.add_argument("stream")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0, help="root seed used for the train/valid/test split")
    p.add_argument("--upto", type=int, default=None, help="stage whose graph is used (default: last)")
    p.add_argument("--max-hops", type=int, default=5)
    p.add_argument("--raw-features", action="store_true", help="skip input standardization (match a run with it off)")

    p = sub.add_parser("report", help="aggregate run directories into a summary table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None)

    p = sub.add_parser("ingest", help="convert edge/feature/label files into a stream")
    p.add_argument("edges")
    p.add_argument("features")
    p.add_argument("labels")
    p.add_argument("out")
    p.add_argument("--classes-per-task", type=int, default=2)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    if args.command == "generate":
        return cmd_generate(args.config, args.out)
    if args.command == "run":
        return cmd_run(args.config, args.out_dir)
    if args.command == "sweep":
        return cmd_sweep(args.grid, args.out_dir)
    if args.command == "distortion":
        return cmd_distortion(args.checkpoint, args.stream, args.out, args.seed, args.upto, args.max_hops,
                              standardize=not args.raw_features)
    if args.command == "report":
        return cmd_report(args.run_dirs, args.out)
    return cmd_ingest(args.edges, args.features, args.labels, args.out, args.classes_per_task)


if __name__ == "__main__":
    sys.exit(main())
