"""``fdms`` command-line tool.

Exit codes: 0 ok, 1 I/O or unreadable data, 2 usage, 3 insufficient data.
``FDMS_SEED`` replaces the default seed of every seeded command; an explicit
``--seed`` still wins.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import cnn, dsp, fusion
from .datasets import read_accel_csv, read_manifest, read_pgm, read_wav, write_pgm
from .errors import FormatError, InvalidArgument
from .features import INPUT_SHAPES, class_indices, load_features, stratified_split
from .monitor import PRESETS, Sources, run_monitor
from .signal_core import AudioWindow, FaultClass, Modality, ThermalFrame, VibrationWindow
from .simulator import file_sha256, generate_corpus

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get("FDMS_SEED")
    if raw is None:
        return 0
    try:
        return int(raw, 0)
    except ValueError:
        raise UsageError(f"FDMS_SEED must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else default_seed()


def parse_classes(text: str) -> list[FaultClass]:
    if text.strip().lower() == "all":
        return list(FaultClass)
    names = [t for t in (s.strip() for s in text.split(",")) if t]
    if not names:
        raise UsageError("no classes given")
    try:
        return [FaultClass.from_label(n) for n in names]
    except InvalidArgument as e:
        raise UsageError(str(e)) from None


def parse_model_args(items, default_modality: str | None) -> dict[Modality, Path]:
    """``MODALITY=PATH`` pairs; a bare path takes ``--modality``."""
    out = {}
    for item in items or []:
        if "=" in item:
            name, path = item.split("=", 1)
        elif default_modality:
            name, path = default_modality, item
        else:
            raise UsageError(f"model {item!r} needs a MODALITY=PATH form or --modality")
        try:
            m = Modality(name.strip().lower())
        except ValueError:
            raise UsageError(f"unknown modality {name!r}; valid: {', '.join(x.value for x in Modality)}") from None
        if m in out:
            raise UsageError(f"two models given for {m.value}")
        out[m] = Path(path)
    return out


def _load_run_config(args) -> fusion.RunConfig:
    return fusion.load_config(args.config) if args.config else fusion.default_run_config()


# -- commands --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    classes = parse_classes(args.classes)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.duration <= 0:
        raise UsageError("--duration must be positive")
    manifest = generate_corpus(args.count, classes, _seed(args), args.out, args.duration,
                               ambient_noise_snr_db=args.snr_db, stereo_bias_db=args.stereo_bias_db)
    counts = Counter(e.label.label for e in manifest.entries)
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    digest = file_sha256(Path(args.out) / "manifest.json")
    print(f"wrote {len(manifest.entries)} scenes ({summary}) to {args.out}; manifest sha256 {digest}")
    return EXIT_OK


def _split(labels, args):
    try:
        return stratified_split(labels, args.val_split, _seed(args))
    except InvalidArgument as e:
        raise DataError(str(e)) from None


def cmd_train(args) -> int:
    modality = Modality(args.modality)
    manifest = read_manifest(args.manifest)
    if not manifest.entries:
        raise DataError("manifest has no entries")
    counts = Counter(e.label for e in manifest.entries)
    thin = sorted(c.label for c, n in counts.items() if n < 2)
    if thin:
        raise DataError(f"classes with fewer than 2 samples: {', '.join(thin)}")
    if len(counts) < 2:
        raise DataError("training needs at least two classes")
    feats = load_features(manifest, [modality])
    classes = tuple(sorted(counts))
    tr, va = _split(feats.labels, args)
    x = feats.inputs[modality]
    y = class_indices(feats.labels, classes)
    seed = _seed(args)
    model = cnn.init_model(cnn.ModelSpec(INPUT_SHAPES[modality], len(classes)), seed, classes)
    config = cnn.TrainConfig(args.lr, args.momentum, args.batch_size, args.epochs, seed)

    def log(s: cnn.EpochStats):
        if not args.quiet:
            print(f"epoch {s.epoch:3d}  train_loss {s.train_loss:.4f}  train_acc {s.train_acc:.4f}  "
                  f"val_loss {s.val_loss:.4f}  val_acc {s.val_acc:.4f}", file=sys.stderr)

    best, history = cnn.train(model, (x[tr], y[tr]), (x[va], y[va]), config, log)
    out = Path(args.model_out)
    cnn.save_model(best, out)
    hist_path = Path(args.history_out) if args.history_out else out.with_suffix(out.suffix + ".history.csv")
    with open(hist_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for s in history:
            w.writerow([s.epoch, repr(s.train_loss), repr(s.train_acc), repr(s.val_loss), repr(s.val_acc)])
    report = cnn.evaluate(best, x[va], y[va])
    print(f"final validation accuracy: {report.accuracy:.4f}")
    return EXIT_OK


def fused_predictions(models: dict[Modality, cnn.Model], inputs: dict[Modality, np.ndarray],
                      run_config: fusion.RunConfig) -> np.ndarray:
    """Index of the highest fused score per sample."""
    classes = next(iter(models.values())).classes
    probs = {m: cnn.predict_proba(models[m], inputs[m]) for m in models}
    n = len(next(iter(probs.values())))
    pred = np.empty(n, dtype=np.int64)
    for i in range(n):
        scores = {m: cnn.ClassScores(probs[m][i], classes, m) for m in models}
        fused = fusion.fuse(scores, run_config.matrix, run_config.fusion)
        pred[i] = classes.index(max(classes, key=lambda c: (fused[c], -int(c))))
    return pred


def cmd_evaluate(args) -> int:
    paths = parse_model_args(args.model, args.modality)
    if not paths:
        raise UsageError("at least one --model is required")
    models = {m: cnn.load_model(p) for m, p in paths.items()}
    class_sets = {m: tuple(md.classes) for m, md in models.items()}
    if len(set(class_sets.values())) != 1:
        raise UsageError("models disagree on classes: " + "; ".join(
            f"{m.value}: {','.join(c.label for c in cs)}" for m, cs in class_sets.items()))
    classes = next(iter(class_sets.values()))
    manifest = read_manifest(args.manifest)
    if not manifest.entries:
        raise UsageError("manifest has no entries")
    labels = set(manifest.labels())
    if not labels <= set(classes):
        raise UsageError(
            f"class sets differ: manifest has {','.join(c.label for c in sorted(labels))}; "
            f"model has {','.join(c.label for c in classes)}")
    feats = load_features(manifest, list(models))
    if args.split != "all":
        tr, va = _split(feats.labels, args)
        feats = feats.subset(va if args.split == "val" else tr)
    y = class_indices(feats.labels, classes)
    reports = {m.value: cnn.evaluate(md, feats.inputs[m], y).to_dict() for m, md in models.items()}
    if len(models) == 1:
        doc = next(iter(reports.values()))
    else:
        pred = fused_predictions(models, feats.inputs, _load_run_config(args))
        doc = {"per_modality": reports, "fused": cnn.report_from_predictions(y, pred, classes).to_dict()}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_monitor(args) -> int:
    paths = parse_model_args(args.model, None)
    enabled = PRESETS[args.preset]
    missing = [m.value for m in enabled if m not in paths]
    if missing:
        raise UsageError(f"preset {args.preset} needs --model for: {', '.join(missing)}")
    if args.scene:
        sources = Sources.from_scene_dir(args.scene)
    else:
        sources = Sources(*(Path(p) if p else None for p in (args.audio, args.vibration, args.thermal)))
    for m in enabled:
        if sources.for_modality(m) is None:
            raise UsageError(f"no input for {m.value}; pass --scene or --{'audio' if m is Modality.ACOUSTIC else m.value}")
    for m in enabled:
        if not sources.for_modality(m).exists():
            raise FileNotFoundError(f"input not found: {sources.for_modality(m)}")
    models = {m: cnn.load_model(paths[m]) for m in enabled}
    run_config = _load_run_config(args)
    try:
        if args.out in (None, "-"):
            run_monitor(sources, args.preset, models, run_config, sys.stdout)
        else:
            with open(args.out, "w", encoding="utf-8") as out:
                run_monitor(sources, args.preset, models, run_config, out)
    except InvalidArgument as e:
        raise UsageError(str(e)) from None
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def write_spectrogram_dump(spec: dsp.Spectrogram, pgm_path, csv_path) -> None:
    """8-bit image (rows = frequency bins, low first) plus exact magnitudes."""
    write_pgm(pgm_path, dsp.mags_to_unit(spec.mags).T)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_s"] + [repr(k * spec.bin_hz) for k in range(spec.mags.shape[1])])
        for i, row in enumerate(spec.mags):
            w.writerow([repr(i * spec.hop_s)] + [repr(float(v)) for v in row])


def read_spectrogram_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(frame times, bin frequencies, magnitudes) from ``write_spectrogram_dump``."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    freqs = np.array([float(v) for v in rows[0][1:]])
    body = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, freqs.size + 1)
    return body[:, 0], freqs, body[:, 1:]


def cmd_inspect(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"input not found: {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = src.suffix.lower()
    written = []
    if suffix == ".wav":
        samples, rate = read_wav(src)
        left = samples[:, 0]
        right = samples[:, 1] if samples.shape[1] > 1 else left
        pre, post = dsp.prepost_spectrograms(AudioWindow(left, right, rate))
        for tag, spec in (("prefilter", pre), ("postfilter", post)):
            pgm, table = out / f"spectrogram_{tag}.pgm", out / f"magnitudes_{tag}.csv"
            write_spectrogram_dump(spec, pgm, table)
            written += [pgm, table]
    elif suffix == ".csv":
        accel = read_accel_csv(src)
        if len(accel) < dsp.VIB_FFT_SIZE:
            raise DataError(f"need at least {dsp.VIB_FFT_SIZE} samples for a vibration FFT")
        rate = args.vibration_hz
        mags = dsp.vibration_fft(VibrationWindow(accel.x, accel.y, accel.z, rate))
        path = out / "vibration_fft.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["freq_hz", "x", "y", "z"])
            for k in range(mags.shape[1]):
                w.writerow([repr(k * rate / dsp.VIB_FFT_SIZE)] + [repr(float(v)) for v in mags[:, k]])
        written.append(path)
    elif suffix == ".pgm":
        px = read_pgm(src)
        tensor = dsp.thermal_to_tensor(ThermalFrame(px, px.shape[1], px.shape[0]))
        path = out / "thermal_tensor.pgm"
        write_pgm(path, tensor[0])
        written.append(path)
    else:
        raise UsageError(f"cannot inspect {src.name}: expected .wav, .csv or .pgm")
    for p in written:
        print(p)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdms", description="Multimodal FDM printer fault monitoring.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a labeled synthetic corpus")
    s.add_argument("--classes", required=True, help="comma-separated fault classes, or 'all'")
    s.add_argument("--count", type=int, required=True, help="scenes per class")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--duration", type=float, default=2.0, help="scene length in seconds")
    s.add_argument("--snr-db", type=float, default=None, help="ambient noise SNR for the audio")
    s.add_argument("--stereo-bias-db", type=float, default=0.0)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train one modality's classifier")
    t.add_argument("--manifest", required=True)
    t.add_argument("--modality", required=True, choices=[m.value for m in Modality])
    t.add_argument("--model-out", required=True)
    t.add_argument("--history-out")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--seed", type=int)
    t.add_argument("--val-split", type=float, default=0.2)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score models on a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--model", action="append", help="MODALITY=PATH (repeatable) or PATH with --modality")
    e.add_argument("--modality", choices=[m.value for m in Modality])
    e.add_argument("--split", choices=["all", "train", "val"], default="all")
    e.add_argument("--seed", type=int, help="split seed; must match the one used for training")
    e.add_argument("--val-split", type=float, default=0.2)
    e.add_argument("--config")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("monitor", help="stream inputs through the fusion pipeline")
    m.add_argument("--scene", help="scene directory with audio.wav, vibration.csv and thermal/")
    m.add_argument("--audio", help="WAV file or pipe")
    m.add_argument("--vibration", help="accelerometer CSV file or pipe")
    m.add_argument("--thermal", help="frame directory, or a file/pipe of back-to-back PGM frames")
    m.add_argument("--preset", choices=sorted(PRESETS), default="hybrid")
    m.add_argument("--model", action="append", help="MODALITY=PATH, repeatable")
    m.add_argument("--config")
    m.add_argument("--out", default="-", help="JSONL output path, '-' for stdout")
    m.set_defaults(func=cmd_monitor)

    i = sub.add_parser("inspect", help="dump spectrograms or FFTs for one input file")
    i.add_argument("input")
    i.add_argument("--out", required=True)
    i.add_argument("--vibration-hz", type=int, default=200)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, InvalidArgument) as e:
        print(f"fdms: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"fdms: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, FormatError) as e:
        print(f"fdms: error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
