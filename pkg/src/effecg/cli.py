"""Command-line entry point.

Subcommands: synth, preprocess, train, eval, infer, gradcheck, analyze.
Every command is deterministic given --seed; outputs stay inside the
requested output directory. Exit codes: 0 success, 1 usage, 2 data error,
3 divergence, 4 gradcheck failure. EFFECG_THREADS caps internal
parallelism (file loading).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, asdict

import numpy as np

from . import data as D
from . import gradcheck as G
from . import metrics as ME
from . import signal as S
from . import svg as SVG
from . import train as TR
from .model import Model, ModelConfig, load_checkpoint, predict, save_checkpoint
from .train import DivergenceError, EarlyStopper, LossConfig, NoamSchedule

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3
EXIT_GRADCHECK = 4


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("EFFECG_THREADS", "1")))
    except ValueError:
        return 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class RunConfig:
    """Fully resolved training run: model + loss + loop settings."""

    model: ModelConfig
    loss: LossConfig
    d_model: int = 0            # 0 -> bound to model.fc_hidden
    warmup_steps: int = 200
    epochs_max: int = 100
    batch_size: int = 16
    patience: int = 10
    min_delta: float = 0.0
    monitor: str = "val_loss"
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    oversample: str = "auto"    # auto | on | off
    seed: int = 0
    thresholds: list[float] | None = None

    def resolved_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        out["loss"] = asdict(self.loss)
        out["d_model"] = self.d_model or self.model.fc_hidden
        return out


def resolve_run_config(config_path: str | None, dataset: D.Dataset,
                       seed_override: int | None) -> RunConfig:
    """Merge config-file values with dataset-derived defaults."""
    raw = {}
    if config_path:
        with open(config_path) as fh:
            raw = json.load(fh)
    model_raw = dict(raw.get("model", {}))
    if dataset.records:
        model_raw.setdefault("leads", dataset.records[0].leads)
        model_raw.setdefault("input_length", dataset.records[0].length)
    model_raw.setdefault("class_count", dataset.class_count)
    model_raw.setdefault("head", "sigmoid" if dataset.label_mode == "multi" else "softmax")
    model = ModelConfig.from_dict(model_raw)
    if dataset.label_mode == "multi" and model.head != "sigmoid":
        raise ValueError("multi-label data requires head='sigmoid'")

    loss_raw = dict(raw.get("loss", {}))
    loss_raw.setdefault("kind", "bce" if model.head == "sigmoid" else "ce")
    loss_raw.setdefault("l2_lambda", model.l2_lambda)
    loss = LossConfig(**loss_raw)

    run_keys = ("d_model", "warmup_steps", "epochs_max", "batch_size", "patience",
                "min_delta", "monitor", "oversample", "seed", "thresholds")
    kwargs = {k: raw[k] for k in run_keys if k in raw}
    if "split_ratios" in raw:
        kwargs["split_ratios"] = tuple(raw["split_ratios"])
    cfg = RunConfig(model=model, loss=loss, **kwargs)
    if seed_override is not None:
        cfg.seed = seed_override
    return cfg


def _load_dataset(path: str, class_count: int | None = None,
                  label_mode: str | None = None,
                  sample_rate: float = 125.0) -> D.Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(f"data path does not exist: {path}")
    if path.endswith(".csv"):
        return D.load_beat_csv(path, sample_rate=sample_rate, class_count=class_count)
    ds = D.load_multilead(path, class_count=class_count, threads=max_threads())
    if label_mode is None:
        label_mode = "single" if all(len(r.labels) == 1 for r in ds.records) else "multi"
    ds.label_mode = label_mode
    return ds


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    bpms = [float(v) for v in args.bpm.split(",") if v]
    if not bpms:
        print("error: --bpm needs at least one value", file=sys.stderr)
        return EXIT_USAGE
    for b in bpms:
        if not (30.0 <= b <= 220.0):
            print(f"error: bpm {b} outside [30, 220]", file=sys.stderr)
            return EXIT_USAGE
    os.makedirs(args.out, exist_ok=True)
    sidecar = ["record,kind,index"]
    n_signal_classes = len(bpms)
    for i in range(args.count):
        cls = i % n_signal_classes
        if args.beats is not None:
            rec, truth = S.synth_ecg(
                args.beats, bpms[cls], args.fs, args.noise, args.p_amplitude,
                seed=args.seed * 1_000_003 + i, leads=args.leads,
            )
        else:
            rec, truth = S.synth_ecg_fixed(
                args.duration, bpms[cls], args.fs, args.noise, args.p_amplitude,
                seed=args.seed * 1_000_003 + i, leads=args.leads,
            )
        rec.labels = {cls}
        if args.demographics != "none":
            rng = np.random.default_rng(np.random.SeedSequence([args.seed, i, 77]))
            rec.age = int(rng.integers(18, 91))
            rec.gender = "M" if rng.random() < 0.5 else "F"
            if args.demographics == "correlated":
                if rec.gender == "M":
                    rec.labels.add(n_signal_classes)
                if rec.age >= 50:
                    rec.labels.add(n_signal_classes + 1)
        name = f"rec{i:05d}"
        D.write_multilead(rec, os.path.join(args.out, name + D.RECORD_SUFFIX))
        for kind in ("r", "p"):
            for idx in truth[kind]:
                sidecar.append(f"{name},{kind},{int(idx)}")
    with open(os.path.join(args.out, "fiducials.csv"), "w") as fh:
        fh.write("\n".join(sidecar) + "\n")
    print(f"wrote {args.count} records to {args.out} "
          f"({n_signal_classes} signal classes, demographics={args.demographics})")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    ds = _load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    fir = S.design_bandpass(args.low_hz, args.high_hz,
                            ds.records[0].sample_rate if ds.records else 500.0,
                            args.taps)
    sidecar = ["record,kind,index"]
    for i, rec in enumerate(ds.records):
        filtered = np.stack([S.standardize(S.apply_filter(lead, fir))
                             for lead in rec.samples])
        out_rec = S.EcgRecord(filtered, rec.sample_rate, rec.age, rec.gender,
                              set(rec.labels))
        name = f"rec{i:05d}"
        D.write_multilead(out_rec, os.path.join(args.out, name + D.RECORD_SUFFIX))
        r_peaks, p_peaks = S.extract_fiducials(rec, fir, args.lead)
        for kind, idxs in (("r", r_peaks), ("p", p_peaks)):
            for idx in idxs:
                sidecar.append(f"{name},{kind},{int(idx)}")
    with open(os.path.join(args.out, "fiducials.csv"), "w") as fh:
        fh.write("\n".join(sidecar) + "\n")
    print(f"preprocessed {len(ds.records)} records into {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = _load_dataset(args.data, sample_rate=args.sample_rate)
    if len(dataset) == 0:
        raise ValueError(f"no records found under {args.data}")
    cfg = resolve_run_config(args.config, dataset, args.seed)
    os.makedirs(args.outdir, exist_ok=True)

    D.ensure_fiducials(dataset)
    train_ds, val_ds, test_ds = D.split(dataset, D.SplitSpec(cfg.split_ratios, cfg.seed))
    do_oversample = cfg.oversample == "on" or (
        cfg.oversample == "auto" and dataset.label_mode == "single")
    if do_oversample:
        train_ds = TR.oversample(train_ds, seed=cfg.seed)

    model = Model(cfg.model, seed=cfg.seed)
    schedule = NoamSchedule(cfg.d_model or cfg.model.fc_hidden, cfg.warmup_steps)
    stopper = EarlyStopper(metric=cfg.monitor, patience=cfg.patience,
                           min_delta=cfg.min_delta)
    thresholds = None if cfg.thresholds is None else np.asarray(cfg.thresholds)
    model, history = TR.train_loop(
        model, train_ds, val_ds, cfg.loss, schedule, stopper,
        epochs_max=cfg.epochs_max, batch_size=cfg.batch_size, seed=cfg.seed,
        thresholds=thresholds,
    )

    save_checkpoint(model, os.path.join(args.outdir, "checkpoint.eck"))
    with open(os.path.join(args.outdir, "history.csv"), "w") as fh:
        fh.write(TR.history_csv(history))
    with open(os.path.join(args.outdir, "config.resolved.json"), "w") as fh:
        json.dump(cfg.resolved_dict(), fh, indent=2)
        fh.write("\n")
    if args.svg and history:
        epochs = np.array([h["epoch"] for h in history], dtype=float)
        with open(os.path.join(args.outdir, "loss.svg"), "w") as fh:
            fh.write(SVG.line_plot(
                [("train", epochs, np.array([h["train_loss"] for h in history])),
                 ("val", epochs, np.array([h["val_loss"] for h in history]))],
                title="loss", x_label="epoch", y_label="loss"))
        with open(os.path.join(args.outdir, "micro_f1.svg"), "w") as fh:
            fh.write(SVG.line_plot(
                [("val", epochs, np.array([h["val_micro_f1"] for h in history]))],
                title="validation micro-F1", x_label="epoch", y_label="micro-F1"))

    last = history[-1] if history else {}
    if test_ds.records:
        test_loss, test_micro, _, _ = TR.evaluate(model, test_ds, cfg.loss, thresholds,
                                                  cfg.batch_size)
        print(f"test: loss={test_loss:.6g} micro_f1={test_micro:.6g}")
    print(f"trained {last.get('epoch', 0)} epochs; "
          f"best {cfg.monitor}={stopper.best_value}; artifacts in {args.outdir}")
    return EXIT_OK


def _per_class_auc(scores: np.ndarray, label_sets: list[set[int]],
                   class_count: int) -> tuple[dict, dict]:
    aucs, curves = {}, {}
    for c in range(class_count):
        truth = np.array([1 if c in ls else 0 for ls in label_sets])
        if truth.min() == truth.max():
            continue  # degenerate class on this split
        curve, auc = ME.roc_auc(scores[:, c], truth)
        aucs[c] = auc
        curves[c] = curve
    return aucs, curves


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    label_mode = "multi" if cfg.head == "sigmoid" else "single"
    dataset = _load_dataset(args.data, class_count=cfg.class_count,
                            label_mode=label_mode, sample_rate=args.sample_rate)
    thresholds = None
    if args.thresholds:
        vals = [float(v) for v in args.thresholds.split(",")]
        thresholds = np.full(cfg.class_count, vals[0]) if len(vals) == 1 else np.asarray(vals)
        if thresholds.shape != (cfg.class_count,):
            raise ValueError(
                f"threshold vector length {len(vals)} does not match "
                f"class count {cfg.class_count}"
            )
    loss_cfg = LossConfig(kind="bce" if cfg.head == "sigmoid" else "ce")
    loss, micro, scores, label_sets = TR.evaluate(model, dataset, loss_cfg, thresholds)
    if args.tune_thresholds and cfg.head == "sigmoid":
        thresholds = ME.tune_thresholds(scores, label_sets)
        _, micro, _, _ = TR.evaluate(model, dataset, loss_cfg, thresholds)

    if cfg.head == "softmax":
        preds = predict(scores, None, "softmax")
        truth = [min(ls) for ls in label_sets]
        cm = ME.confusion_matrix(truth, preds, cfg.class_count)
        f1 = ME.f1_scores(cm)
        confusion = cm.tolist()
    else:
        pred_sets = predict(scores, thresholds, "sigmoid")
        counts = ME.multilabel_counts(label_sets, pred_sets, cfg.class_count)
        f1 = ME.multilabel_f1(counts)
        confusion = counts.tolist()
    aucs, curves = _per_class_auc(scores, label_sets, cfg.class_count)
    report = ME.EvalReport(
        parameter_count=model.parameter_count(),
        label_mode=label_mode,
        confusion=confusion,
        per_class_f1=f1.per_class.tolist(),
        precision=f1.precision.tolist(),
        recall=f1.recall.tolist(),
        macro_f1=f1.macro,
        micro_f1=f1.micro,
        cinc=ME.cinc_score(f1.per_class),
        auc_per_class={str(k): v for k, v in aucs.items()},
        thresholds=None if thresholds is None else np.asarray(thresholds).tolist(),
    )
    os.makedirs(args.report, exist_ok=True)
    with open(os.path.join(args.report, "report.json"), "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    with open(os.path.join(args.report, "roc.csv"), "w") as fh:
        fh.write(ME.roc_points_csv(curves))
    if args.svg:
        series = [(f"class {c} (AUC {aucs[c]:.3f})", curves[c].fpr, curves[c].tpr)
                  for c in sorted(curves)]
        if series:
            with open(os.path.join(args.report, "roc.svg"), "w") as fh:
                fh.write(SVG.line_plot(series, title="ROC",
                                       x_label="false positive rate",
                                       y_label="true positive rate"))
        with open(os.path.join(args.report, "confusion.svg"), "w") as fh:
            title = "confusion matrix" if label_mode == "single" \
                else "per-class tp/fp/fn/tn"
            fh.write(SVG.heatmap(np.asarray(confusion), title=title))
    print(f"eval loss={loss:.6g} micro_f1={f1.micro:.6g} macro_f1={f1.macro:.6g} "
          f"cinc={report.cinc:.6g} params={report.parameter_count}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    label_mode = "multi" if cfg.head == "sigmoid" else "single"
    dataset = _load_dataset(args.data, class_count=cfg.class_count,
                            label_mode=label_mode, sample_rate=args.sample_rate)
    loss_cfg = LossConfig(kind="bce" if cfg.head == "sigmoid" else "ce")
    _, _, scores, _ = TR.evaluate(model, dataset, loss_cfg)
    lines = ["record," + ",".join(f"score_{c}" for c in range(cfg.class_count)) + ",predicted"]
    if cfg.head == "softmax":
        preds = predict(scores, None, "softmax")
        pred_strs = [str(p) for p in preds]
    else:
        pred_sets = predict(scores, None, "sigmoid")
        pred_strs = ["|".join(str(c) for c in sorted(s)) for s in pred_sets]
    for i, (row, p) in enumerate(zip(scores, pred_strs)):
        lines.append(f"{i}," + ",".join(f"{v:.8g}" for v in row) + f",{p}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = G.run_suite(seed=args.seed, trials=args.trials)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}s}  {r.max_rel_error:.3e}  < {r.tolerance:g}  {status}")
    failed = any(not r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} blocks passed")
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_analyze(args) -> int:
    dataset = _load_dataset(args.data)
    table = D.analyze_distribution(dataset, args.label, args.age_bins)
    csv_text = D.distribution_csv(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
        print(f"wrote {args.out}")
    else:
        print(csv_text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="effecg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic records with ground truth")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--duration", type=float, default=10.0, help="seconds per record")
    p.add_argument("--beats", type=int, default=None,
                   help="exact beat count per record (overrides --duration)")
    p.add_argument("--bpm", default="75", help="comma list; one signal class per value")
    p.add_argument("--fs", type=float, default=500.0)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--p-amplitude", type=float, default=0.15)
    p.add_argument("--leads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--demographics", choices=("none", "random", "correlated"),
                   default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="bandpass+standardize records, detect fiducials")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--low-hz", type=float, default=3.0)
    p.add_argument("--high-hz", type=float, default=45.0)
    p.add_argument("--taps", type=int, default=201)
    p.add_argument("--lead", type=int, default=0, help="reference lead for fiducials")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sample-rate", type=float, default=125.0,
                   help="sample rate for beat CSV data")
    p.add_argument("--svg", action="store_true", help="emit loss/F1 curves")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds", default=None,
                   help="single value or comma list per class (sigmoid head)")
    p.add_argument("--tune-thresholds", action="store_true",
                   help="per-class threshold sweep on this data")
    p.add_argument("--report", default=".")
    p.add_argument("--sample-rate", type=float, default=125.0,
                   help="sample rate for beat CSV data")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="score records with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample-rate", type=float, default=125.0,
                   help="sample rate for beat CSV data")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze", help="age/gender distribution of a label")
    p.add_argument("--data", required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--age-bins", type=int, default=10)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ValueError, OSError, json.JSONDecodeError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
