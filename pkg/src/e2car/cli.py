"""Command-line entry point: ``e2car synth|train|eval|convert2d|bench|plot|rerun``.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 verification failure.
Every command writes a ``<output>.manifest.json`` next to its main artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from . import autodiff_train as at
from . import dim_expand as de
from . import eeg_pipeline as ep
from . import metrics_bench as mb
from . import model_graph as mg
from .tensor_ops import GeometryError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

DATA_ERRORS = (
    mg.SpecError,
    mg.WeightsFileError,
    ep.PipelineError,
    ep.DatasetFormatError,
    mb.MetricError,
    ShapeError,
    GeometryError,
    ValueError,
    OSError,
)

log = logging.getLogger("e2car")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; this toolkit reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    flags: dict
    seeds: dict
    version: str
    cwd: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    started: float = 0.0
    finished: float = 0.0
    python: str = platform.python_version()
    numpy: str = np.__version__

    def write(self, artifact) -> Path:
        path = manifest_path(artifact)
        path.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + ".manifest.json")


def _sibling(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _load_model(spec_arg: str, weights, seed=None, dtype=np.float32) -> mg.Model:
    spec = mg.load_spec(spec_arg, seed)
    if weights is None:
        return mg.build(spec, dtype)
    if not Path(weights).is_file():
        raise FileNotFoundError(f"weights file not found: {weights}")
    return mg.load_weights(spec, weights, dtype)


# --- commands ------------------------------------------------------------------------


def cmd_synth(args, manifest: RunManifest) -> int:
    kind = "none" if args.kind == "clean" else args.kind
    pairs = []
    for k in range(args.recordings):
        cfg = ep.SynthConfig(args.seed + k, args.duration_s, kind, args.snr_db, args.native_fs)
        pairs.extend(ep.preprocess_pair(*ep.synthesize(cfg), args.trim_s, kind == "none"))
    ep.write_dataset(args.out, pairs)
    manifest.seeds["synth"] = args.seed
    manifest.outputs.append(str(args.out))
    print(f"wrote {len(pairs)} segment pairs to {args.out}")
    return EXIT_OK


def cmd_train(args, manifest: RunManifest) -> int:
    if args.epochs < 1:
        raise UsageError(f"--epochs must be >= 1, got {args.epochs}")
    spec = mg.load_spec(args.spec, args.seed)
    data = ep.read_dataset(args.data)
    config = at.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
        patience=args.patience, seed=args.seed,
    )
    model, history = at.train(spec, data, config)
    mg.save_weights(model, args.out)
    hist_path = _sibling(args.out, ".history.csv")
    history.to_csv(hist_path)
    spec_path = _sibling(args.out, ".spec.json")
    spec_path.write_text(spec.to_json())
    manifest.seeds.update(init=spec.seed, train=config.seed)
    manifest.inputs.append(str(args.data))
    manifest.outputs += [str(args.out), str(hist_path), str(spec_path)]
    print(f"trained {spec.name} for {len(history.val_loss)} epoch(s); best epoch {history.best_epoch + 1} "
          f"val loss {min(history.val_loss):.6g}; weights -> {args.out}")
    return EXIT_OK


def cmd_eval(args, manifest: RunManifest) -> int:
    model = _load_model(args.spec, args.weights)
    data = ep.read_dataset(args.data)
    outputs = mb.predict(model, [p for p in data if not p.degenerate]) if data else []
    usable = [p for p in data if not p.degenerate]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for denorm in (False, True):
        rep = mb.score_outputs(outputs, usable, denorm, model.spec.name, args.task)
        rep.n_skipped += len(data) - len(usable)
        reports[rep.mode] = rep
        rep.write_csv(out / f"segments_{rep.mode}.csv")
        (out / f"summary_{rep.mode}.json").write_text(rep.to_json() + "\n")
        manifest.outputs += [str(out / f"segments_{rep.mode}.csv"), str(out / f"summary_{rep.mode}.json")]
    if reports["normalized"].n_segments == 0:
        raise mb.MetricError("no usable segments to evaluate")
    shown = reports["denormalized" if args.denormalized else "normalized"]
    manifest.inputs += [str(args.data), str(args.weights)]
    print(f"[{shown.mode}] {shown.n_segments} segment(s), {shown.n_skipped} skipped")
    print(shown.table())
    return EXIT_OK


def cmd_convert2d(args, manifest: RunManifest) -> int:
    dtype = np.float64 if args.float64 else np.float32
    tol = args.tol if args.tol is not None else (1e-12 if args.float64 else 1e-5)
    model_1d = _load_model(args.spec, args.weights, args.seed, dtype)
    model_2d = de.expand_model(model_1d)
    report = de.verify_equivalence(model_1d, model_2d, args.verify, tol, seed=args.seed)
    mg.save_weights(model_2d, args.out)
    spec_path = _sibling(args.out, ".spec.json")
    spec_path.write_text(model_2d.spec.to_json())
    report_path = _sibling(args.out, ".report.json")
    report_path.write_text(report.to_json() + "\n")
    manifest.seeds.update(init=model_1d.spec.seed, verify=args.seed)
    if args.weights:
        manifest.inputs.append(str(args.weights))
    manifest.outputs += [str(args.out), str(spec_path), str(report_path)]
    print(report)
    if report.vacuous:
        log.warning("vacuous verification: --verify 0 tests no inputs")
    return EXIT_OK if report.passed else EXIT_VERIFY


def _bench_input(model: mg.Model, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, (1,) + model.spec.input_shape).astype(model.dtype)


def cmd_bench(args, manifest: RunManifest) -> int:
    power = None
    if args.power_log:
        plog = mb.PowerLog.from_csv(args.power_log)
        start = plog.timestamps_h[0] if args.power_start is None else args.power_start
        end = plog.timestamps_h[-1] if args.power_end is None else args.power_end
        power = mb.power_from_log(plog, start, end)
        manifest.inputs.append(str(args.power_log))

    model = _load_model(args.spec, args.weights, args.seed)
    models = [model]
    if args.weights_2d:
        models.append(_load_model_2d(model.spec, args.weights_2d))
    elif args.paired:
        models.append(de.expand_model(model))

    reports = []
    for m in models:
        rep = mb.time_inference(m, _bench_input(m, args.seed), args.warmup, args.iters)
        rep.power_mah_per_h = power
        reports.append(rep)
    rows = mb.comparison_rows(reports)
    mb.write_bench_csv(rows, args.out)
    manifest.seeds["input"] = args.seed
    manifest.outputs.append(str(args.out))
    for row in rows:
        ratio = row["latency_ratio_2d_over_1d"]
        extra = f"  2D/1D={ratio:.3f}" if ratio is not None else ""
        mah = f"  {row['power_mah_per_h']:.4g} mAh/h" if row["power_mah_per_h"] is not None else ""
        print(f"{row['model']:<12}{row['dimensionality']:<4}mean {row['mean_ms']:.3f} ms  median "
              f"{row['median_ms']:.3f}  std {row['std_ms']:.3f}  p95 {row['p95_ms']:.3f}{mah}{extra}")
    return EXIT_OK


def _load_model_2d(spec_1d: mg.ModelSpec, weights) -> mg.Model:
    spec_2d = de.expand_spec(spec_1d)
    if not Path(weights).is_file():
        raise FileNotFoundError(f"weights file not found: {weights}")
    return mg.load_weights(spec_2d, weights)


def render_svg(t, traces: dict[str, np.ndarray], width: int = 900, height: int = 360) -> str:
    """Static line chart with one polyline per trace and a legend."""
    colours = ("#888888", "#1f77b4", "#d62728", "#2ca02c")
    left, right, top, bottom = 60, 20, 30, 40
    lo = min(float(np.min(v)) for v in traces.values())
    hi = max(float(np.max(v)) for v in traces.values())
    if hi == lo:
        hi = lo + 1.0
    sx = (width - left - right) / (t[-1] - t[0])
    sy = (height - top - bottom) / (hi - lo)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<text x="{(width + left) / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">time (s)</text>',
    ]
    for tick in np.arange(np.ceil(t[0]), t[-1] + 1e-9):
        x = left + (tick - t[0]) * sx
        parts.append(f'<text x="{x:.1f}" y="{height - bottom + 15}" text-anchor="middle" '
                     f'font-size="10">{tick:g}</text>')
    for i, (name, v) in enumerate(traces.items()):
        pts = " ".join(f"{left + (a - t[0]) * sx:.2f},{height - bottom - (b - lo) * sy:.2f}" for a, b in zip(t, v))
        colour = colours[i % len(colours)]
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1" points="{pts}">'
                     f"<title>{escape(name)}</title></polyline>")
        parts.append(f'<text x="{left + 10 + 150 * i}" y="{top - 10}" fill="{colour}" '
                     f'font-size="12">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args, manifest: RunManifest) -> int:
    model = _load_model(args.spec, args.weights)
    data = ep.read_dataset(args.data)
    if not 0 <= args.segment < len(data):
        raise IndexError(f"segment {args.segment} out of range: dataset has {len(data)} segment(s)")
    pair = data[args.segment]
    output = mb.predict(model, [pair])[0]
    t = np.arange(ep.SEGMENT_LEN) / ep.TARGET_FS
    traces = {"contaminated": pair.contaminated, "clean": pair.clean, "output": output}
    Path(args.out).write_text(render_svg(t, traces))
    csv_path = _sibling(args.out, ".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", *traces])
        for i in range(ep.SEGMENT_LEN):
            w.writerow([f"{t[i]:.3f}", *(repr(float(v[i])) for v in traces.values())])
    manifest.inputs += [str(args.data), str(args.weights)]
    manifest.outputs += [str(args.out), str(csv_path)]
    print(f"segment {args.segment}: max |output - clean| = {np.max(np.abs(output - pair.clean)):.4f}; "
          f"wrote {args.out} and {csv_path}")
    return EXIT_OK


def cmd_rerun(args, manifest: RunManifest) -> int:
    source = RunManifest.read(args.manifest)
    if source.command == "rerun":
        raise UsageError("refusing to rerun a rerun manifest")
    here = os.getcwd()
    try:
        if source.cwd:
            os.chdir(source.cwd)
        return main(source.argv)
    finally:
        os.chdir(here)


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="e2car", description="EEG artifact removal toolkit with 1-D to 2-D conv rewriting.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize a preprocessed segment dataset")
    s.add_argument("--kind", choices=("eog", "emg", "motion", "clean"), required=True)
    s.add_argument("--snr-db", type=float, default=0.0)
    s.add_argument("--duration-s", type=float, default=60.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--recordings", type=_positive_int, default=1, help="recordings seeded seed, seed+1, ...")
    s.add_argument("--native-fs", type=float, default=256.0)
    s.add_argument("--trim-s", type=float, default=ep.DEFAULT_TRIM_S)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model on a dataset")
    s.add_argument("--spec", required=True, help=f"reference name ({', '.join(mg.REFERENCE_NAMES)}) or JSON path")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch-size", type=_positive_int, default=32)
    s.add_argument("--patience", type=_nonneg_int, default=10)
    s.add_argument("--out", type=Path, required=True, help="weights file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="RRMSE and CC of a model on a dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--weights", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--denormalized", action="store_true", help="print the denormalized aggregate")
    s.add_argument("--task", default="")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("convert2d", help="rewrite a 1-D model as 2-D and verify equivalence")
    s.add_argument("--spec", required=True)
    s.add_argument("--weights", type=Path, help="1-D weights (default: seeded random init)")
    s.add_argument("--out", type=Path, required=True, help="2-D weights file")
    s.add_argument("--verify", type=_nonneg_int, default=100, help="number of random test inputs")
    s.add_argument("--tol", type=float, help="max abs difference (default 1e-5, or 1e-12 with --float64)")
    s.add_argument("--float64", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_convert2d)

    s = sub.add_parser("bench", help="host-side inference latency (and optional power) report")
    s.add_argument("--spec", required=True)
    s.add_argument("--weights", type=Path, help="1-D weights (default: seeded random init)")
    pair = s.add_mutually_exclusive_group()
    pair.add_argument("--weights-2d", type=Path, help="2-D weights for a paired comparison")
    pair.add_argument("--paired", action="store_true", help="pair with the expanded 2-D model")
    s.add_argument("--iters", type=_positive_int, default=200)
    s.add_argument("--warmup", type=_nonneg_int, default=20)
    s.add_argument("--power-log", type=Path)
    s.add_argument("--power-start", type=float, help="window start in hours (default: first log sample)")
    s.add_argument("--power-end", type=float, help="window end in hours (default: last log sample)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True, help="CSV report")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plot", help="SVG + CSV overlay of one segment")
    s.add_argument("--spec", required=True)
    s.add_argument("--weights", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--segment", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("rerun", help="repeat a command from its manifest")
    s.add_argument("manifest", type=Path)
    s.set_defaults(func=cmd_rerun)
    return p


def _main_artifact(args) -> Path | None:
    if args.command == "rerun":
        return None
    return args.out / "eval" if args.command == "eval" else args.out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "command", "verbose")}
    manifest = RunManifest(args.command, argv, flags, {}, __version__, os.getcwd(), started=time.time())
    try:
        code = args.func(args, manifest)
    except UsageError as exc:
        print(f"e2car {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IndexError, *DATA_ERRORS) as exc:
        print(f"e2car {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    manifest.finished = time.time()
    artifact = _main_artifact(args)
    if artifact is not None:
        manifest.write(artifact)
    return code


if __name__ == "__main__":
    sys.exit(main())
