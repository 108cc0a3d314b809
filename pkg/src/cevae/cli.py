"""Command-line entry point: ``cevae <command> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Any flag may also
be given in a ``--config`` file of ``key=value`` lines (keys use the flag
name without dashes, e.g. ``batch_size=4``); command-line flags win.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import codec
from .data import (
    IMAGE_SUFFIXES,
    PairedDataset,
    load_image,
    load_manifest,
    preprocess,
    resize,
    save_image,
)
from .encoder import EncoderConfig
from .errors import CEVAEError, ConfigurationError
from .metrics import evaluate_dataset, write_metrics_tsv
from .model import CEVAE, ModelConfig, reference_config, small_config
from .objectives import LossToggles
from .trainer import (
    TrainConfig,
    Trainer,
    ablate_losses,
    load_model,
    write_ablation_tsv,
    write_quartiles_tsv,
)

log = logging.getLogger("cevae")

DEFAULTS = {
    "dtype": "f16",
    "seed": 0,
    "preset": "reference",
    "image_size": None,
    "layout": "paired_dirs",
    "mode": "finetune",
    "steps": 100,
    "lr": 4.5e-6,
    "batch_size": 6,
    "toggles": "rec,lpips,gan,ssim",
    "disc_start": 1000,
    "raw_shape": (3, 256, 256),
    "latent_shape": (256, 16, 16),
    "bytes_per_value": 8,
    "bandwidth": 1e9,
    "capacity": None,
    "rate": None,
    "batch": 30,
    "repeats": 3,
}


class UsageError(CEVAEError):
    pass


def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _merge(args, parser):
    """flags > config file > DEFAULTS, coercing config strings with the flag's type."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    types = {a.dest: a.type for a in parser._actions}
    for key, default in DEFAULTS.items():
        if not hasattr(args, key) or getattr(args, key) is not None:
            continue
        if key in file_cfg:
            t = types.get(key) or str
            setattr(args, key, t(file_cfg[key]))
        else:
            setattr(args, key, default)
    for key, val in file_cfg.items():
        if hasattr(args, key) and getattr(args, key) is None:
            t = types.get(key) or str
            setattr(args, key, t(val))
    return args


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.replace("x", ",").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use e.g. 3,256,256")
    if not dims or any(d <= 0 for d in dims):
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def _model_config(args) -> ModelConfig:
    if args.preset == "small":
        return small_config(args.image_size or 32)
    if args.image_size not in (None, 256):
        return ModelConfig(image_size=args.image_size, encoder=EncoderConfig(resolution=args.image_size))
    return reference_config()


def _images(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [path]


def _load_model(args) -> CEVAE:
    if getattr(args, "checkpoint", None):
        return load_model(args.checkpoint)
    log.warning("no --checkpoint given; using a freshly initialised %s model (seed %d)",
                args.preset, args.seed)
    torch.manual_seed(args.seed)
    return CEVAE(_model_config(args)).eval()


def _dtype(model) -> torch.dtype:
    return next(model.parameters()).dtype


# -- commands -----------------------------------------------------------------


def cmd_encode(args) -> int:
    model = _load_model(args)
    size = model.cfg.image_size
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    n_ok = 0
    payload_total = 0
    times = []
    for p in _images(Path(args.input)):
        try:
            img = resize(load_image(p), size).unsqueeze(0).to(_dtype(model))
            latent, secs = model.encoder.encode_timed(img, args.repeats)
            n_bytes = codec.write_latent(out / f"{p.stem}.cevl", latent[0], args.dtype)
        except CEVAEError as exc:
            print(f"error\t{p}\t{exc}", file=sys.stderr)
            failed += 1
            continue
        payload = n_bytes - codec.HEADER.size
        payload_total += payload
        times.append(secs)
        n_ok += 1
        print(f"{p.name}\t{payload} payload bytes\t{n_bytes} file bytes\t{secs:.4f} s")
    if n_ok:
        per_mb = round(payload_total / n_ok / 1e6, 2)
        times.sort()
        print(f"total\t{n_ok} files\t{payload_total} payload bytes\t{n_ok * per_mb:.1f} MB "
              f"({per_mb:.2f} MB/latent)\tmedian encode {times[len(times) // 2]:.4f} s")
    return 1 if failed else 0


def _decode_and_save(model, latent, dest):
    with torch.no_grad():
        img = model.enhance(latent.unsqueeze(0).to(_dtype(model)))[0]
    save_image(dest, img)


def cmd_decode(args) -> int:
    model = load_model(args.checkpoint)
    src = Path(args.latent)
    files = sorted(src.glob("*.cevl")) if src.is_dir() else [src]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for f in files:
        try:
            arr = codec.read_latent(f)
            expected = model.cfg.latent_shape
            if arr.shape != expected:
                raise ConfigurationError(f"latent shape {arr.shape} does not match checkpoint {expected}")
            _decode_and_save(model, torch.from_numpy(arr.astype("float64")), out / f"{f.stem}.png")
            print(f"{f.name}\t-> {f.stem}.png")
        except CEVAEError as exc:
            print(f"error\t{f}\t{exc}", file=sys.stderr)
            failed += 1
    return 1 if failed else 0


def cmd_enhance(args) -> int:
    model = load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for p in _images(Path(args.input)):
        try:
            img = resize(load_image(p), model.cfg.image_size).unsqueeze(0).to(_dtype(model))
            with torch.no_grad():
                latent = model.encode(img)
            _decode_and_save(model, latent[0], out / f"{p.stem}.png")
            print(f"{p.name}\t-> {p.stem}.png")
        except CEVAEError as exc:
            print(f"error\t{p}\t{exc}", file=sys.stderr)
            failed += 1
    return 1 if failed else 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.dataset, args.layout)
    if args.checkpoint == "identity":
        size = args.image_size or 256
        model_fn = lambda x: x  # noqa: E731  passthrough baseline
    else:
        model = load_model(args.checkpoint)
        size = model.cfg.image_size
        model_fn = lambda x: model(x.to(_dtype(model)))  # noqa: E731

    def loader(entry):
        return lambda: preprocess(entry, size)

    result = evaluate_dataset([loader(e) for e in manifest.entries], model_fn)
    write_metrics_tsv(args.out, result)
    s = result.summary.get("psnr")
    if s:
        print(f"records\t{len(result.records)}\tskipped\t{result.skipped}")
        print(f"psnr mean\t{s['mean']:.4f}\tssim mean\t{result.summary['ssim']['mean']:.4f}")
    return 0 if result.records else 1


def cmd_storage_report(args) -> int:
    rep = codec.compression_report(
        args.raw_shape, args.latent_shape, args.bytes_per_value, args.bandwidth,
        args.capacity, args.rate, args.batch,
    )
    if args.time_encoder:
        torch.manual_seed(args.seed)
        c, h, w = args.raw_shape
        enc = CEVAE(_model_config(args)).encoder.eval()
        _, rep.encode_seconds = enc.encode_timed(torch.randn(1, c, h, w), args.repeats)
    sys.stdout.write(rep.to_text())
    return 0


def _parse_toggle_sets(text: str) -> dict[str, LossToggles]:
    sets = {}
    for chunk in text.split(";"):
        if chunk.strip():
            t = LossToggles.parse(chunk)
            sets[t.label()] = t
    return sets


def _dataset(args, root, augment):
    if root is None:
        raise UsageError("--dataset is required")
    size = _model_config(args).image_size
    return PairedDataset(load_manifest(root, args.layout), size=size, augment=augment, seed=args.seed)


def _train_config(args, toggles) -> TrainConfig:
    return TrainConfig(
        mode=args.mode, lr=args.lr, batch_size=args.batch_size, steps=args.steps,
        disc_start_step=args.disc_start, toggles=toggles, seed=args.seed,
        augment=not args.no_augment,
    )


def cmd_train(args) -> int:
    toggles = LossToggles.parse(args.toggles)
    cfg = _train_config(args, toggles)
    ds = _dataset(args, args.dataset, cfg.augment)
    if args.layout == "identity" or args.mode == "pretrain":
        ds.samples = [type(s)(s.id, s.reference, s.reference) for s in ds.samples]
    if args.init:
        trainer = Trainer.load(args.init, model_config=_model_config(args), config=cfg)
    else:
        trainer = Trainer(_model_config(args), cfg)
    trainer.fit(ds, args.steps, log_path=args.log)
    trainer.save(args.out)
    last = trainer.history[-1] if trainer.history else {}
    print(f"step\t{trainer.step}\ttotal\t{last.get('total', float('nan')):.6f}\t-> {args.out}")
    return 0


def cmd_ablate(args) -> int:
    sets = _parse_toggle_sets(args.toggle_sets)
    if len(sets) < 2:
        raise UsageError("--toggle-sets needs at least two sets, e.g. 'rec;rec,ssim'")
    base = _train_config(args, LossToggles())
    ds = _dataset(args, args.dataset, base.augment)
    size = ds.size
    eval_root = args.eval or args.dataset
    eval_pairs = [preprocess(e, size) for e in load_manifest(eval_root, args.layout).entries]
    table = ablate_losses(_model_config(args), base, ds, eval_pairs, sets, steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_tsv(out / "psnr.tsv", table)
    write_quartiles_tsv(out / "quartiles.tsv", table)
    n = sum(len(v) for v in table.values())
    print(f"sets\t{len(table)}\trecords\t{n}\t-> {out}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cevae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        sp.add_argument("--config", help="key=value file with default flag values")
        sp.add_argument("--seed", type=int)
        if model:
            sp.add_argument("--preset", choices=["reference", "small"])
            sp.add_argument("--image-size", type=int)

    sp = sub.add_parser("encode", help="images -> .cevl latent files")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dtype", choices=sorted(codec.DTYPES))
    sp.add_argument("--checkpoint")
    sp.add_argument("--repeats", type=int)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help=".cevl latent files -> enhanced images")
    common(sp, model=False)
    sp.add_argument("--latent", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("enhance", help="images -> enhanced images (encode then decode)")
    common(sp, model=False)
    sp.add_argument("--input", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("evaluate", help="per-image PSNR/SSIM on a paired dataset")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--layout", choices=["paired_dirs", "identity"])
    sp.add_argument("--checkpoint", required=True, help="checkpoint path, or 'identity'")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("storage-report", help="storage / transmission budget of latents vs raw images")
    common(sp)
    sp.add_argument("--raw-shape", type=_shape)
    sp.add_argument("--latent-shape", type=_shape)
    sp.add_argument("--bytes-per-value", type=int)
    sp.add_argument("--bandwidth", type=float, help="bits per second")
    sp.add_argument("--capacity", type=float, help="device capacity in bytes")
    sp.add_argument("--rate", type=float, help="images per second")
    sp.add_argument("--batch", type=int)
    sp.add_argument("--time-encoder", action="store_true")
    sp.add_argument("--repeats", type=int)
    sp.set_defaults(func=cmd_storage_report)

    for name, func, helptext in (("train", cmd_train, "pretrain or fine-tune a model"),
                                 ("ablate", cmd_ablate, "loss-term ablation with PSNR distributions")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--dataset")
        sp.add_argument("--layout", choices=["paired_dirs", "identity"])
        sp.add_argument("--mode", choices=["pretrain", "finetune"])
        sp.add_argument("--steps", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--disc-start", type=int)
        sp.add_argument("--no-augment", action="store_true")
        sp.add_argument("--out", required=True)
        if name == "train":
            sp.add_argument("--toggles", help="comma-separated subset of rec,lpips,gan,ssim")
            sp.add_argument("--init", help="checkpoint to resume from")
            sp.add_argument("--log", help="per-step loss log (TSV)")
        else:
            sp.add_argument("--toggle-sets", required=True,
                            help="';'-separated toggle sets, e.g. 'rec;rec,ssim'")
            sp.add_argument("--eval", help="paired dataset for evaluation (default: --dataset)")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _merge(args, sub)
        if getattr(args, "toggles", None):
            LossToggles.parse(args.toggles)
        if args.command == "encode" and not Path(args.input).exists():
            raise UsageError(f"input {args.input} does not exist")
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        sub.print_usage(sys.stderr)
        print(f"cevae {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (CEVAEError, OSError) as exc:
        print(f"cevae {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
