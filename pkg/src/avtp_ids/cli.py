"""Command-line pipeline: synthesize, ingest, window, train, calibrate,
evaluate, benchmark and merge reports.

Every stage reads and writes files so it can run on its own. Exit codes::

    0  success
    2  usage error (unknown subcommand or flag, bad flag value)
    3  input error (missing, unreadable or malformed input file)
    4  runtime error (failure while processing valid inputs)

Relative output paths resolve against ``--out-dir``, which defaults to
``$AVTP_IDS_OUTPUT_DIR`` or the working directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import ErrorStats, classify, sweep_and_select
from .detectors import ClassicalThreshold, classical_threshold, fit_detector, load_detector
from .evaluation import EvalReport, benchmark_inference, emit_report, read_report
from .models import (
    WINDOW_SIZES,
    TrainConfig,
    TrainedModel,
    build_model,
    reconstruction_errors,
    train,
)
from .nn.checkpoint import read_container, write_container
from .pcap import feature_matrix, ingest
from .synth import (
    StreamConfig,
    attacked_capture,
    config_from_kv,
    gen_stream,
    read_kv_config,
    write_capture,
    write_ground_truth,
)
from .windows import ReplaySet, WindowSet, split_train_val, window_labels

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4
OUTPUT_DIR_ENV = "AVTP_IDS_OUTPUT_DIR"
MODEL_KINDS = ("cae", "lstmae", "ocsvm", "lof", "iforest")
AE_KINDS = ("cae", "lstmae")

logger = logging.getLogger("avtp_ids")


class InputError(Exception):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# Paths and loading


def _out(args, path) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = Path(args.out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _need(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise InputError(f"input file not found: {p}")


def _load(fn, *a, **kw):
    """Run a loader, reporting malformed files as input errors."""
    try:
        return fn(*a, **kw)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(str(exc)) from exc


def _windows(args, w: int | None = None) -> WindowSet:
    """Windows from ``--windows`` or from ``--pcap`` (labeled by ``--replay-set``)."""
    if getattr(args, "windows", None):
        _need(args.windows)
        ws = _load(WindowSet.load, args.windows)
        if w is not None and ws.w != w:
            raise InputError(f"{args.windows} holds w={ws.w} windows, model needs w={w}")
        return ws
    if not getattr(args, "pcap", None):
        raise UsageError("one of --pcap or --windows is required")
    _need(args.pcap, getattr(args, "replay_set", None))
    w = w if w is not None else args.w
    packets, stats = _load(ingest, args.pcap)
    logger.info("%s: %d AVTP packets of %d frames", args.pcap, stats.avtp_frames, stats.total_frames)
    replay = _load(ReplaySet.load, args.replay_set) if getattr(args, "replay_set", None) else None
    feats = feature_matrix(packets)
    ws = _load(WindowSet, feats, w)
    if replay is not None:
        ws.labels = window_labels(replay.mask(feats), w)
    return ws


def _load_model(path):
    """(kind, w, object) for an autoencoder or classical checkpoint."""
    _need(path)
    kind, meta, arrays = _load(read_container, path)
    if kind == "model":
        tm = _load(TrainedModel.load, path)
        return tm.kind, tm.w, tm
    det = _load(load_detector, path)
    user = {"ocsvm": lambda: det.support_vectors.shape[1], "lof": lambda: det.train.shape[1],
            "iforest": lambda: det.n_features}[kind]()
    if user % 58:
        raise InputError(f"{path}: {user} features do not form 58-byte windows")
    return kind, user // 58, det


def _scores(kind, model, ws: WindowSet, idx=None) -> np.ndarray:
    """Anomaly scores, higher meaning more anomalous for every kind."""
    if kind in AE_KINDS:
        return reconstruction_errors(model.model, ws.encode(kind, idx))
    return model.anomaly_score(ws.flat(idx))


def _score_fn(kind, model):
    if kind in AE_KINDS:
        return lambda batch: reconstruction_errors(model.model, batch)
    return model.anomaly_score


def _params(kind, model) -> int:
    if kind in AE_KINDS:
        return model.model.param_count()
    if kind == "ocsvm":
        return int(model.support_vectors.size + model.alpha.size + 1)
    if kind == "lof":
        return int(model.train.size)
    return int(sum(t.feature.size for t in model.trees))


def _require_labels(ws: WindowSet, what: str) -> None:
    if len(np.unique(ws.labels)) < 2:
        raise InputError(f"{what} needs a capture with both normal and abnormal windows "
                         "(pass --replay-set)")


# Subcommands


def cmd_synth(args) -> int:
    kv = config_from_kv(read_kv_config(args.config)) if args.config else StreamConfig()
    fields = {k: getattr(kv, k) for k in kv.__dataclass_fields__}
    fields.update(seed=args.seed, n_frames=args.frames)
    if args.first_frame is not None:
        fields["first_frame"] = args.first_frame
    cfg = StreamConfig(**fields)
    out = _out(args, args.out)
    if args.inject == 0:
        frames = gen_stream(cfg)
        write_capture(frames, out)
        print(f"wrote {len(frames)} benign frames to {out}")
        return EXIT_OK
    # The recording period is cropped, so generate it on top of --frames.
    cfg = StreamConfig(**{**fields, "n_frames": args.frames + args.inject})
    bursts = args.bursts
    if bursts is None:
        bursts = max(1, round(0.1 * args.frames / args.inject))
    res = attacked_capture(cfg, bursts, args.inject, args.spacing, seed=args.seed)
    write_capture(res, out)
    truth = out.with_suffix(out.suffix + ".truth")
    replay = out.with_suffix(out.suffix + ".replay")
    write_ground_truth(res, truth)
    res.replay_set.save(replay)
    print(f"wrote {len(res.frames)} frames ({int(res.injected.sum())} injected in {bursts} bursts) "
          f"to {out}; ground truth {truth}; replay set {replay}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    _need(args.pcap)
    packets, stats = _load(ingest, args.pcap, strict=args.strict)
    summary = {"total_frames": stats.total_frames, "avtp_frames": stats.avtp_frames,
               "non_avtp_frames": stats.non_avtp_frames, "truncated_frames": stats.truncated_frames,
               "truncated_file": stats.truncated_file}
    print(json.dumps(summary))
    if args.out:
        write_container(_out(args, args.out), "features", summary, [("features", feature_matrix(packets))])
    return EXIT_OK


def cmd_windows(args) -> int:
    ws = _windows(args)
    out = _out(args, args.out)
    ws.save(out)
    print(f"wrote {len(ws)} windows (w={ws.w}, {int(ws.labels.sum())} abnormal) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    kind, w = args.model, args.w
    ws = _windows(args, w)
    if np.any(ws.labels):
        raise InputError("training capture contains abnormal windows")
    rng = np.random.default_rng(args.seed)
    idx = np.arange(len(ws))
    if args.max_windows and len(idx) > args.max_windows:
        idx = np.sort(rng.choice(idx, args.max_windows, replace=False))
    out = _out(args, args.out)
    if kind in AE_KINDS:
        tr, va = split_train_val(len(idx), 0.9, args.seed)
        model = build_model(kind, w, seed=args.seed)
        print(f"{kind} w={w}: {model.param_count():,} parameters")
        cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                          patience=args.patience, seed=args.seed)
        tm = train(model, ws.encode(kind, idx[tr]), ws.encode(kind, idx[va]), cfg, kind=kind, w=w)
        size = tm.save(out, dtype=args.dtype)
        hist = out.with_suffix(out.suffix + ".history.csv")
        tm.write_history(hist)
        print(f"best epoch {tm.best_epoch} of {len(tm.history)}; mu={tm.mu!r} sigma={tm.sigma!r}")
        print(f"wrote {size} bytes to {out}; history {hist}")
        return EXIT_OK
    opts = {}
    if kind == "ocsvm":
        opts = {"nu": args.nu, "gamma": args.gamma}
    elif kind == "lof":
        opts = {"k": args.k}
    elif kind == "iforest":
        opts = {"n_trees": args.trees, "psi": args.psi}
    det = fit_detector(kind, ws.flat(idx), seed=args.seed, **opts)
    print(f"{kind} w={w}: {_params(kind, det):,} stored values")
    size = det.save(out)
    print(f"wrote {size} bytes to {out}")
    return EXIT_OK


def _calibrate(kind, model, ws: WindowSet, alpha=None) -> dict:
    scores = _scores(kind, model, ws)
    if kind in AE_KINDS:
        stats = ErrorStats(model.mu, model.sigma)
        if alpha is not None:
            return {"kind": kind, "beta": stats.mu + alpha * stats.sigma, "alpha": alpha,
                    "mu": stats.mu, "sigma": stats.sigma, "table": []}
        sweep = sweep_and_select(stats, scores, ws.labels)
        return {"kind": kind, "beta": sweep.beta, "alpha": sweep.alpha, "mu": stats.mu,
                "sigma": stats.sigma, "table": sweep.table()}
    # Classical scores are oriented so that higher is anomalous.
    th = classical_threshold(scores, ws.labels, higher_is_anomalous=True)
    return {"kind": kind, "beta": th.cut, "f1": th.f1, "degenerate": th.degenerate}


def cmd_calibrate(args) -> int:
    kind, w, model = _load_model(args.model)
    ws = _windows(args, w)
    if not (kind in AE_KINDS and args.alpha is not None):
        _require_labels(ws, "calibration")
    cal = _calibrate(kind, model, ws, args.alpha)
    out = _out(args, args.out)
    out.write_text(json.dumps(cal, indent=2))
    print(f"beta={cal['beta']!r} written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    kind, w, model = _load_model(args.model)
    _need(args.calibration)
    ws = _windows(args, w)
    if args.calibration:
        cal = _load(lambda p: json.loads(Path(p).read_text()), args.calibration)
        if cal.get("kind") != kind:
            raise InputError(f"{args.calibration} calibrates {cal.get('kind')!r}, not {kind!r}")
    else:
        if not (kind in AE_KINDS and args.alpha is not None):
            _require_labels(ws, "threshold selection")
        cal = _calibrate(kind, model, ws, args.alpha)
    scores = _scores(kind, model, ws)
    pred = classify(scores, cal["beta"]) if kind in AE_KINDS else \
        ClassicalThreshold(cal["beta"], True, 0.0).predict(scores)
    dataset = args.dataset or Path(args.pcap or args.windows).stem
    size = Path(args.model).stat().st_size
    rep = EvalReport.from_predictions(dataset, kind, w, cal["beta"], pred, ws.labels,
                                      params=_params(kind, model), model_bytes=size,
                                      extra={k: v for k, v in cal.items() if k != "beta"})
    out = _out(args, args.report)
    emit_report([rep], out)
    print(f"{kind} w={w} beta={rep.beta:.6g}: precision {rep.precision:.4f} "
          f"recall {rep.recall:.4f} F1 {rep.f1:.4f}; report {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    kind, w, model = _load_model(args.model)
    ws = _windows(args, w)
    idx = np.arange(min(len(ws), args.max_windows)) if args.max_windows else None
    x = ws.encode(kind, idx) if kind in AE_KINDS else ws.flat(idx)
    t = benchmark_inference(_score_fn(kind, model), x, args.repetitions, args.batch_size)
    doc = {"detector": kind, "w": w, **t.__dict__}
    print(json.dumps(doc))
    if args.out:
        _out(args, args.out).write_text(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    _need(*args.inputs)
    reports = []
    for p in args.inputs:
        reports.extend(_load(read_report, p))
    if args.sort:
        reports.sort(key=lambda r: (r.dataset, r.detector, r.w))
    print(f"{'dataset':<16}{'detector':<10}{'w':>4}{'precision':>11}{'recall':>9}{'F1':>9}")
    for r in reports:
        print(f"{r.dataset:<16}{r.detector:<10}{r.w:>4}{r.precision:>11.4f}{r.recall:>9.4f}{r.f1:>9.4f}")
    if args.out:
        emit_report(reports, _out(args, args.out))
    return EXIT_OK


# Parser


def _add_windows_source(p, labels: bool = True) -> None:
    p.add_argument("--pcap", help="capture file to ingest and window")
    p.add_argument("--windows", help="cached window set written by the windows subcommand")
    if labels:
        p.add_argument("--replay-set", help="replay set file (58-byte prefixes) used to label windows")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avtp-ids", description=__doc__.split("\n\n")[0],
                     epilog="exit codes: 0 success, 2 usage error, 3 input error, 4 runtime error. "
                            f"${OUTPUT_DIR_ENV} sets the default output directory.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("--out-dir", default=os.environ.get(OUTPUT_DIR_ENV, "."),
                        help=f"directory for relative output paths (default ${OUTPUT_DIR_ENV} or .)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic capture",
                       description="Write a synthetic AVTP capture, optionally with replay injections.")
    p.add_argument("--frames", type=int, default=20_000, help="legitimate frames in the capture (default 20000)")
    p.add_argument("--inject", type=int, default=0,
                   help="length of the replayed segment; 0 writes a benign capture (default 0)")
    p.add_argument("--bursts", type=int, help="replay bursts (default: about 10%% of frames injected)")
    p.add_argument("--spacing", type=int, default=1, help="legitimate frames between injected copies (default 1)")
    p.add_argument("--first-frame", type=int, help="stream ordinal of the first frame (sets the clock phase)")
    p.add_argument("--config", help="key = value stream configuration file")
    p.add_argument("--out", required=True, help="output pcap; .truth and .replay sidecars go next to it")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="parse a capture and report frame counts",
                       description="Parse a pcap and print frame statistics as JSON.")
    p.add_argument("--pcap", required=True, help="capture file")
    p.add_argument("--strict", action="store_true", help="fail on a truncated final record")
    p.add_argument("--out", help="optional container with the [N, 58] feature matrix")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("windows", parents=[common], help="build and cache sliding windows",
                       description="Build slide-1 windows of one capture and store them.")
    _add_windows_source(p)
    p.add_argument("--w", type=int, choices=WINDOW_SIZES, default=16, help="window length (default 16)")
    p.add_argument("--out", required=True, help="output window container")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("train", parents=[common], help="train an autoencoder or fit a classical detector",
                       description="Train on benign windows; autoencoders hold out 10%% for early stopping.")
    _add_windows_source(p)
    p.add_argument("--model", choices=MODEL_KINDS, required=True, help="detector kind")
    p.add_argument("--w", type=int, choices=WINDOW_SIZES, default=16, help="window length (default 16)")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--max-windows", type=int, help="train on a seeded random subset of this many windows")
    p.add_argument("--epochs", type=int, default=200, help="maximum epochs (default 200)")
    p.add_argument("--patience", type=int, default=10, help="early-stopping patience (default 10)")
    p.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate (default 1e-4)")
    p.add_argument("--batch-size", type=int, default=16, help="mini-batch size (default 16)")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64",
                   help="parameter precision in the checkpoint (default float64)")
    p.add_argument("--nu", type=float, default=0.05, help="ocsvm: outlier fraction bound (default 0.05)")
    p.add_argument("--gamma", type=float, help="ocsvm: RBF width (default 1/(d var))")
    p.add_argument("--k", type=int, default=20, help="lof: neighbours (default 20)")
    p.add_argument("--trees", type=int, default=100, help="iforest: trees (default 100)")
    p.add_argument("--psi", type=int, help="iforest: subsample size (default min(256, n))")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", parents=[common], help="choose a decision threshold",
                       description="Pick beta by F1 on a labeled capture (or fix alpha for an autoencoder).")
    _add_windows_source(p)
    p.add_argument("--model", required=True, help="checkpoint from train")
    p.add_argument("--alpha", type=float, help="autoencoders: use beta = mu + alpha sigma without a sweep")
    p.add_argument("--out", required=True, help="output calibration JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", parents=[common], help="score a labeled capture",
                       description="Classify every window and write precision, recall, F1 and beta.")
    _add_windows_source(p)
    p.add_argument("--model", required=True, help="checkpoint from train")
    p.add_argument("--calibration", help="calibration JSON; without it beta is chosen on this capture")
    p.add_argument("--alpha", type=float, help="autoencoders: use beta = mu + alpha sigma")
    p.add_argument("--dataset", help="dataset name in the report (default: input file stem)")
    p.add_argument("--report", required=True, help="output report (.json or .csv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", parents=[common], help="measure inference latency",
                       description="Time scoring in batches; prints per-batch and per-window statistics.")
    _add_windows_source(p, labels=False)
    p.add_argument("--model", required=True, help="checkpoint from train")
    p.add_argument("--repetitions", type=int, default=5, help="timed passes (default 5)")
    p.add_argument("--batch-size", type=int, default=16, help="windows per batch (default 16)")
    p.add_argument("--max-windows", type=int, default=1024, help="windows to time, 0 for all (default 1024)")
    p.add_argument("--out", help="optional timing JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", parents=[common], help="merge and print reports",
                       description="Concatenate evaluation reports and print a summary table.")
    p.add_argument("inputs", nargs="+", help="report files (.json or .csv)")
    p.add_argument("--sort", action="store_true", help="order rows by dataset, detector and w")
    p.add_argument("--out", help="merged report (.json or .csv)")
    p.set_defaults(func=cmd_report)
    return parser


def _input_paths(args) -> list:
    paths = [getattr(args, a, None) for a in ("pcap", "windows", "replay_set", "calibration", "config")]
    if args.command != "train":
        paths.append(getattr(args, "model", None))
    return paths + list(getattr(args, "inputs", []))


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _need(*_input_paths(args))
        return args.func(args)
    except UsageError as exc:
        print(f"avtp-ids {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"avtp-ids {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"avtp-ids {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
