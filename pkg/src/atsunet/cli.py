"""Command line entry point: synth, train, finetune, infer, quantize, eval, bench."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import audio_io, model_zoo, pipeline, quantization, training
from .metrics import EvalReport

log = logging.getLogger("atsunet")

TRAIN_KEYS = ("epochs", "batch", "lr", "seed", "snr_mean_db", "snr_std_db", "bcm_cutoff_hz")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


# manifests


def read_manifest(path):
    """``[(input_path, reference_path or None)]``; paths relative to the manifest."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"manifest not found: {path}")
    entries = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) > 2:
            raise CliError(f"{path}: bad manifest line {line!r}")
        resolved = [p if Path(p).is_absolute() else str(path.parent / p) for p in parts]
        entries.append((resolved[0], resolved[1] if len(resolved) == 2 else None))
    if not entries:
        raise CliError(f"{path}: manifest is empty")
    return entries


def load_pairs(manifest, cutoff):
    """Audio pairs ``(band_limited, clean)``; clean-only entries are band-limited here."""
    pairs = []
    for a, b in read_manifest(manifest):
        if b is None:
            clean = audio_io.read_wav(a)
            pairs.append((training.simulate_bcm(clean, cutoff), clean))
        else:
            pairs.append((audio_io.read_wav(a), audio_io.read_wav(b)))
    return pairs


# config resolution: flags > config file > packaged defaults


def resolve(args):
    cfg = model_zoo.read_config(getattr(args, "config", None))
    for key in TRAIN_KEYS:
        if getattr(args, key, "absent") is None:
            raw = cfg.get("training", key)
            setattr(args, key, int(raw) if key in ("epochs", "batch", "seed") else float(raw))
    if getattr(args, "shift_fraction", "absent") is None:
        args.shift_fraction = cfg.getfloat("model", "shift_fraction")
    return args


def model_config(args):
    cfg = model_zoo.default_config(args.variant, args.config)
    cfg.shift_fraction = args.shift_fraction
    return model_zoo.ModelConfig(**cfg.to_dict())


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for k, v in enumerate(history, 1):
            w.writerow([k, f"{v:.6f}"])


def load_any_model(path):
    try:
        return model_zoo.load_model(path)
    except model_zoo.ModelFileError as exc:
        if "payload kind" not in str(exc):
            raise
        return quantization.load_quantized(path)


# subcommands


def cmd_synth(args):
    out = Path(args.out)
    for sub in ("clean", "bcm", "noise"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    def write_split(name, count):
        lines = []
        for k in range(count):
            clean = training.synth_utterance(rng, args.duration)
            bcm = training.simulate_bcm(clean, args.cutoff)
            stem = f"{name}_{k:04d}.wav"
            audio_io.write_wav(out / "clean" / stem, clean)
            audio_io.write_wav(out / "bcm" / stem, bcm)
            lines.append(f"bcm/{stem} clean/{stem}")
        (out / f"{name}.txt").write_text("\n".join(lines) + "\n")

    write_split("train", args.count)
    if args.test_count:
        write_split("test", args.test_count)
    noise_lines = []
    for k in range(args.noise_count):
        noise = training.simulate_bcm(training.colored_noise(rng, args.duration * 2), args.cutoff)
        stem = f"noise/noise_{k:04d}.wav"
        audio_io.write_wav(out / stem, noise)
        noise_lines.append(stem)
    if noise_lines:
        (out / "noise.txt").write_text("\n".join(noise_lines) + "\n")
    print(f"wrote {args.count} train, {args.test_count} test, {args.noise_count} noise files to {out}")


def _train_common(args, model, pairs, norm):
    dataset = training.build_dataset(pairs, norm)
    t0 = time.perf_counter()
    trained, history = training.train(
        model, dataset, epochs=args.epochs, batch=args.batch, seed=args.seed, lr=args.lr,
        callback=lambda e, l: log.info("epoch %d loss %.5f", e + 1, l),
    )
    model_zoo.save_model(trained, args.out)
    if args.history:
        write_history(args.history, history)
    print(f"saved {args.out}: {len(history)} epochs, final loss {history[-1]:.5f}, {time.perf_counter() - t0:.1f}s")


def cmd_train(args):
    resolve(args)
    pairs = load_pairs(args.manifest, args.bcm_cutoff_hz)
    model = model_zoo.build(model_config(args), seed=args.seed)
    _train_common(args, model, pairs, None)


def cmd_finetune(args):
    resolve(args)
    if not args.init_model:
        raise CliError("finetune requires --init-model")
    model = model_zoo.load_model(args.init_model)
    pairs = load_pairs(args.manifest, args.bcm_cutoff_hz)
    rng = np.random.default_rng(args.seed)
    if args.noise_manifest:
        noises = [audio_io.read_wav(a) for a, _ in read_manifest(args.noise_manifest)]
    else:
        noises = [training.simulate_bcm(training.colored_noise(rng, 4.0), args.bcm_cutoff_hz) for _ in range(4)]
    noisy = []
    for bcm, clean in pairs:
        noise = noises[rng.integers(len(noises))]
        snr = training.sample_snr(rng, mean=args.snr_mean_db, std=args.snr_std_db)
        noisy.append((training.augment_noise(bcm, noise, rng, snr), clean))
    _train_common(args, model, noisy, (model.norm_mean, model.norm_std))


def cmd_infer(args):
    model = load_any_model(args.model)
    report = pipeline.process_file(model, args.input, args.output, isinstance(model, quantization.QuantizedModel))
    if args.latency_csv:
        report.write_csv(args.latency_csv)
    print(report.summary())


def cmd_quantize(args):
    model = model_zoo.load_model(args.model)
    calib = []
    for bcm, _ in load_pairs(args.manifest, 2000.0):
        grids = training.utterance_logpower(bcm)
        calib += list(((grids - model.norm_mean) / model.norm_std)[:, 1:, :])
    rng = np.random.default_rng(0)
    if len(calib) > args.max_frames:
        calib = [calib[i] for i in sorted(rng.choice(len(calib), args.max_frames, replace=False))]
    qm = quantization.quantize_model(model, calib)
    quantization.save_quantized(qm, args.out)
    print(f"saved {args.out}: input exponent {qm.e_in}, head exponent {qm.e_head}")


def cmd_eval(args):
    model = load_any_model(args.model)
    base, enhanced = EvalReport(), EvalReport()
    for k, (a, b) in enumerate(read_manifest(args.manifest)):
        if b is None:
            raise CliError("eval manifest needs input/reference pairs")
        x, ref = audio_io.read_wav(a), audio_io.read_wav(b)
        y, _ = pipeline.enhance(model, x)
        base.add(Path(a).name, ref, x)
        enhanced.add(Path(a).name, ref, y)
    if args.report:
        enhanced.write_csv(args.report)
    print(f"lsd_input={base.mean_lsd:.4f} lsd_enhanced={enhanced.mean_lsd:.4f} utterances={len(base.ids)}")


def cmd_bench(args):
    rng = np.random.default_rng(args.seed)
    signal = audio_io.AudioBuffer(0.1 * rng.standard_normal(audio_io.HOP * (args.frames + 1)))
    rows = []
    for variant in model_zoo.VARIANTS:
        m = model_zoo.build(model_zoo.default_config(variant), seed=args.seed)
        _, report = pipeline.enhance(m, signal)
        rows.append((variant, model_zoo.count_params(m), model_zoo.count_flops(m), report))
    rows.sort(key=lambda r: (r[2], r[0] != "ats"))
    print(f"{'variant':8s} {'params':>8s} {'flops':>12s} {'mean_ms':>8s} {'p95_ms':>8s} {'rtf':>7s}")
    for v, p, f, r in rows:
        print(f"{v:8s} {p:8d} {f:12d} {r.mean_ms:8.3f} {r.p95_ms:8.3f} {r.real_time_factor:7.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "params", "flops", "mean_ms", "p95_ms", "rtf"])
            for v, p, f, r in rows:
                w.writerow([v, p, f, f"{r.mean_ms:.3f}", f"{r.p95_ms:.3f}", f"{r.real_time_factor:.4f}"])


def build_parser():
    p = _Parser(prog="atsunet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic paired corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--test-count", type=int, default=5)
    s.add_argument("--noise-count", type=int, default=4)
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--cutoff", type=float, default=2000.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        t = sub.add_parser(name)
        t.add_argument("--manifest", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--history")
        t.add_argument("--config")
        t.add_argument("--variant", choices=model_zoo.VARIANTS)
        t.add_argument("--epochs", type=int)
        t.add_argument("--batch", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--seed", type=int)
        t.add_argument("--shift-fraction", type=float)
        t.add_argument("--bcm-cutoff-hz", type=float)
        if name == "finetune":
            t.add_argument("--init-model")
            t.add_argument("--noise-manifest")
            t.add_argument("--snr-mean-db", type=float)
            t.add_argument("--snr-std-db", type=float)
        t.set_defaults(func=func)

    i = sub.add_parser("infer")
    i.add_argument("--model", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--latency-csv")
    i.set_defaults(func=cmd_infer)

    q = sub.add_parser("quantize")
    q.add_argument("--model", required=True)
    q.add_argument("--manifest", required=True, help="calibration audio")
    q.add_argument("--out", required=True)
    q.add_argument("--max-frames", type=int, default=512)
    q.set_defaults(func=cmd_quantize)

    e = sub.add_parser("eval")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench")
    b.add_argument("--frames", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line error contract
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
