"""Command-line surface wiring configs to the engines and output files.

Commands: predict, simulate, analyze, sweep, multimode, check.  Every
command is deterministic given (config, seed): seeds default to a fixed
documented value, outputs carry a run manifest with the effective
configuration text and the digests of every data file, and ``check``
re-derives outputs from a manifest and compares them.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, analyze_stream
from .config import (
    ConfigError,
    LinkConfig,
    apply_overrides,
    config_digest,
    dumps_config,
    load_config,
    loads_config,
)
from .events import StreamFormatError, read_stream, write_csv, write_stream
from .link import predict_stats, signal_path_efficiency
from .multimode import MultimodeError, max_mode_count, rate_vs_modes
from .simulate import SimulationError, simulate

DEFAULT_SEED = 101

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load(config_path: str, set_args: list[str] | None) -> LinkConfig:
    try:
        cfg = load_config(config_path)
        if set_args:
            overrides = {}
            for item in set_args:
                if "=" not in item:
                    raise CliError(f"--set expects key=value, got {item!r}", EXIT_CONFIG)
                key, value = item.split("=", 1)
                overrides[key.strip()] = value.strip()
            cfg = apply_overrides(cfg, overrides)
        return cfg
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    except ConfigError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from exc


def _write_manifest(out_dir: Path, command: str, cfg: LinkConfig, seed, outputs, t0, t1):
    manifest = {
        "schema": "afclink.manifest/1",
        "command": command,
        "argv": sys.argv[1:],
        "tool_version": __version__,
        "seed": seed,
        "config_digest": config_digest(cfg),
        "config_text": dumps_config(cfg),
        "start_time": t0,
        "end_time": t1,
        "outputs": {name: _sha256(out_dir / name) for name in outputs},
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_predict(args) -> int:
    cfg = _load(args.config, args.set)
    t0 = time.time()
    stats = predict_stats(cfg)
    out = _out_dir(args)
    payload = stats.to_json_dict()
    payload["schema"] = "afclink.predicted_stats/1"
    payload["config_digest"] = config_digest(cfg)
    (out / "predicted_stats.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _write_manifest(out, "predict", cfg, None, ["predicted_stats.json"], t0, time.time())
    print(f"predict: V={stats.visibility:.4f} C={stats.concurrence:.4e} "
          f"h2c={stats.h2c:.4f} rate={stats.herald_rate_hz:.1f} Hz")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args.config, args.set)
    t0 = time.time()
    try:
        stream = simulate(cfg, args.seed, args.duration, workers=args.workers)
    except SimulationError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = _out_dir(args)
    write_stream(stream, out / "events.bin")
    outputs = ["events.bin"]
    if args.csv:
        write_csv(stream, out / "events.csv")
        outputs.append("events.csv")
    _write_manifest(out, "simulate", cfg, args.seed, outputs, t0, time.time())
    rate = len(stream.channel_times(0)) / stream.duration
    print(f"simulate: {len(stream)} events, herald rate {rate:.1f} Hz, "
          f"seed {args.seed}, {args.duration} s")
    return EXIT_OK


def _analyze_to_dir(stream, cfg, out: Path, backtrace_flag: bool, bootstrap: int):
    efficiencies = None
    if backtrace_flag:
        efficiencies = (
            signal_path_efficiency(cfg, "a"),
            signal_path_efficiency(cfg, "b"),
        )
    tomo = analyze_stream(
        stream, cfg, backtrace_efficiencies=efficiencies, bootstrap_resamples=bootstrap
    )
    tomo.save(out / "tomography.json")
    outputs = ["tomography.json"]
    if tomo.fringe_scan is not None:
        tomo.fringe_scan.write_csv(out / "fringe_scan.csv")
        outputs.append("fringe_scan.csv")
    return tomo, outputs


def cmd_analyze(args) -> int:
    cfg = _load(args.config, args.set)
    t0 = time.time()
    try:
        stream = read_stream(args.stream)
    except (OSError, StreamFormatError) as exc:
        raise CliError(f"cannot read stream: {exc}", EXIT_DATA) from exc
    out = _out_dir(args)
    try:
        tomo, outputs = _analyze_to_dir(stream, cfg, out, args.backtrace, args.bootstrap)
    except AnalysisError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    _write_manifest(out, "analyze", cfg, stream.seed, outputs, t0, time.time())
    v = "n/a" if tomo.visibility is None else f"{tomo.visibility:.4f}"
    c = "n/a" if tomo.concurrence is None else f"{tomo.concurrence:.4e}"
    print(f"analyze: {tomo.herald_count} heralds, V={v}, C={c}")
    return EXIT_OK


def _parse_axis(spec: str) -> tuple[str, list[float]]:
    if "=" not in spec:
        raise CliError("--axis expects name=v1,v2,...", EXIT_CONFIG)
    name, values = spec.split("=", 1)
    name = name.strip()
    if name not in ("idler_loss_db", "storage_time"):
        raise CliError(f"unknown sweep axis {name!r}", EXIT_CONFIG)
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"bad axis value: {exc}", EXIT_CONFIG) from exc
    if not vals:
        raise CliError("empty axis", EXIT_CONFIG)
    return name, vals


def _sweep_point_config(cfg: LinkConfig, axis: str, value: float) -> LinkConfig:
    if axis == "idler_loss_db":
        factor = 10.0 ** (-value / 10.0)
        return dataclasses.replace(
            cfg,
            idler_channel_a=dataclasses.replace(
                cfg.idler_channel_a, transmission=cfg.idler_channel_a.transmission * factor
            ),
            idler_channel_b=dataclasses.replace(
                cfg.idler_channel_b, transmission=cfg.idler_channel_b.transmission * factor
            ),
        )
    return dataclasses.replace(
        cfg,
        memory_a=dataclasses.replace(cfg.memory_a, storage_time=value),
        memory_b=dataclasses.replace(cfg.memory_b, storage_time=value),
    )


def cmd_sweep(args) -> int:
    cfg = _load(args.config, args.set)
    axis, values = _parse_axis(args.axis)
    t0 = time.time()
    out = _out_dir(args)
    rows = []
    for i, value in enumerate(values):
        status = "ok"
        fields = dict.fromkeys(
            (
                "rate_hz",
                "rate_err",
                "concurrence",
                "concurrence_err",
                "visibility",
                "visibility_err",
                "h2c",
                "h2c_err",
                "pred_rate_hz",
                "pred_concurrence",
                "pred_visibility",
                "pred_h2c",
            ),
            "",
        )
        try:
            point = _sweep_point_config(cfg, axis, value)
            pred = predict_stats(point)
            fields.update(
                pred_rate_hz=pred.herald_rate_hz,
                pred_concurrence=pred.concurrence,
                pred_visibility=pred.visibility,
                pred_h2c=pred.h2c,
            )
            stream = simulate(point, args.seed + i, args.duration, workers=args.workers)
            tomo = analyze_stream(stream, point)
            fields.update(rate_hz=tomo.herald_rate_hz, rate_err=tomo.herald_rate_err)
            if tomo.visibility is not None:
                fields.update(visibility=tomo.visibility, visibility_err=tomo.visibility_err)
            if tomo.concurrence is not None:
                fields.update(concurrence=tomo.concurrence, concurrence_err=tomo.concurrence_err)
            if tomo.h2c is not None:
                fields.update(h2c=tomo.h2c, h2c_err=tomo.h2c_err)
        except Exception as exc:  # per-point failures recorded, sweep continues
            status = f"error: {exc}"
        rows.append((value, fields, status))

    header = (
        "axis_value,rate_hz,rate_err,concurrence,concurrence_err,"
        "visibility,visibility_err,h2c,h2c_err,"
        "pred_rate_hz,pred_concurrence,pred_visibility,pred_h2c,status"
    )
    lines = [header]
    for value, fields, status in rows:
        cells = [repr(value)]
        for key in header.split(",")[1:-1]:
            v = fields[key]
            cells.append("" if v == "" else repr(v))
        cells.append(f"\"{status}\"" if "," in status else status)
        lines.append(",".join(cells))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "sweep", cfg, args.seed, ["sweep.csv"], t0, time.time())
    n_err = sum(1 for _, _, s in rows if s != "ok")
    print(f"sweep: {len(rows)} points on {axis}, {n_err} failures -> {out/'sweep.csv'}")
    return EXIT_OK


def cmd_multimode(args) -> int:
    cfg = _load(args.config, args.set)
    t0 = time.time()
    try:
        stream = read_stream(args.stream)
    except (OSError, StreamFormatError) as exc:
        raise CliError(f"cannot read stream: {exc}", EXIT_DATA) from exc
    out = _out_dir(args)
    try:
        report = rate_vs_modes(stream, cfg, policy=args.policy)
    except (MultimodeError, AnalysisError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    report.write_csv(out / "mode_report.csv")
    slope, intercept, r2 = report.linear_fit()
    summary = {
        "schema": "afclink.mode_report/1",
        "n_max": max_mode_count(cfg.timing),
        "policy": report.policy,
        "visibility": [report.visibility, report.visibility_err],
        "linear_fit": {"slope_hz": slope, "intercept_hz": intercept, "r_squared": r2},
        "rate_1_hz": report.rows[0].rate_hz,
    }
    (out / "mode_report_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_manifest(
        out, "multimode", cfg, stream.seed,
        ["mode_report.csv", "mode_report_summary.json"], t0, time.time(),
    )
    print(
        f"multimode: N_max={summary['n_max']}, slope {slope:.3f} Hz/mode, "
        f"R^2={r2:.5f}, rate(1)={report.rows[0].rate_hz:.3f} Hz"
    )
    return EXIT_OK


def cmd_check(args) -> int:
    out = Path(args.out)
    manifest_path = out / "run_manifest.json"
    if not manifest_path.exists():
        raise CliError(f"no run manifest in {out}", EXIT_DATA)
    manifest = json.loads(manifest_path.read_text())
    cfg = loads_config(manifest["config_text"])
    if config_digest(cfg) != manifest["config_digest"]:
        raise CliError("manifest config digest mismatch", EXIT_CHECK)
    failures = []
    for name, digest in manifest["outputs"].items():
        path = out / name
        if not path.exists():
            failures.append(f"{name}: missing")
            continue
        if _sha256(path) != digest:
            failures.append(f"{name}: digest mismatch")
    if manifest["command"] == "simulate" and not failures:
        stream = simulate(cfg, manifest["seed"], read_stream(out / "events.bin").duration)
        import io
        import tempfile

        with tempfile.NamedTemporaryFile(suffix=".bin", delete=True) as tmp:
            write_stream(stream, tmp.name)
            if _sha256(Path(tmp.name)) != manifest["outputs"]["events.bin"]:
                failures.append("events.bin: re-simulation differs")
    if manifest["command"] == "predict" and not failures:
        stats = predict_stats(cfg)
        recorded = json.loads((out / "predicted_stats.json").read_text())
        for key, value in stats.to_json_dict().items():
            if isinstance(value, float) and abs(value - recorded[key]) > 1e-9 * max(
                1.0, abs(value)
            ):
                failures.append(f"predicted_stats.{key}: drifted")
    if failures:
        for f in failures:
            print(f"check: FAIL {f}", file=sys.stderr)
        return EXIT_CHECK
    print(f"check: ok ({len(manifest['outputs'])} outputs verified)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, config=True, seed=False, duration=False):
    if config:
        p.add_argument("--config", required=True, help="configuration file (or fig2/fig3a/...)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")
    if seed:
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help=f"random seed (default {DEFAULT_SEED})")
    if duration:
        p.add_argument("--duration", type=float, required=True,
                       help="simulated wall time in seconds")
    p.add_argument("--out", default="afclink-out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afclink",
        description="heralded AFC memory link: prediction, simulation, analysis",
    )
    parser.add_argument("--version", action="version", version=f"afclink {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="analytic statistics for a configuration")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="generate a time-tagged event stream")
    _add_common(p, seed=True, duration=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", action="store_true", help="also export events.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="tomography of an event stream")
    _add_common(p)
    p.add_argument("--stream", required=True, help="events.bin produced by simulate")
    p.add_argument("--backtrace", action="store_true",
                   help="also back-trace probabilities to the crystals")
    p.add_argument("--bootstrap", type=int, default=0, metavar="N",
                   help="bootstrap resamples for the derived errors")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="predict+simulate+analyze along an axis")
    _add_common(p, seed=True, duration=True)
    p.add_argument("--axis", required=True,
                   help="idler_loss_db=0,1,... or storage_time=2e-6,...")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("multimode", help="rate/concurrence vs allowed temporal modes")
    _add_common(p)
    p.add_argument("--stream", required=True)
    p.add_argument("--policy", choices=("first", "all"), default="first")
    p.set_defaults(func=cmd_multimode)

    p = sub.add_parser("check", help="verify outputs in a run directory")
    p.add_argument("--out", required=True, help="run directory holding run_manifest.json")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"afclink: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"afclink: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StreamFormatError, AnalysisError, MultimodeError) as exc:
        print(f"afclink: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
