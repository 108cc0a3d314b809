"""Training harness: generator/discriminator alternation, checkpoints, loss ablations."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .data import PairedDataset, PairedSample, batches
from .errors import CheckpointError, ConfigurationError, NonFiniteLossError
from .metrics import MetricRecord, evaluate_dataset, psnr
from .model import CEVAE, ModelConfig
from .objectives import (
    DEFAULT_DELTA,
    FeatureExtractor,
    LossBreakdown,
    LossToggles,
    PatchDiscriminator,
    combined_loss,
    discriminator_loss,
)

__all__ = [
    "TrainConfig",
    "PUBLISHED_PRETRAIN",
    "PUBLISHED_FINETUNE",
    "PUBLISHED_EPOCHS",
    "Trainer",
    "parameter_hash",
    "pretrain",
    "finetune",
    "ablate_losses",
    "write_ablation_tsv",
    "read_ablation_tsv",
    "quartiles",
    "write_quartiles_tsv",
    "LOG_HEADER",
]

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cevae-checkpoint"
CHECKPOINT_VERSION = 1
LOG_HEADER = "step\trec\tlpips\tgan\tssim\tlambda\ttotal"


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "finetune"
    lr: float = 4.5e-6
    batch_size: int = 6
    steps: int = 1000
    delta: float = DEFAULT_DELTA
    disc_start_step: int = 1000
    toggles: LossToggles = field(default_factory=LossToggles)
    seed: int = 0
    betas: tuple[float, float] = (0.5, 0.9)
    augment: bool = True
    eval_every: int = 0
    extractor_seed: int = 1234

    def __post_init__(self):
        if self.mode not in ("pretrain", "finetune"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.lr <= 0 or self.delta <= 0:
            raise ConfigurationError("lr and delta must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["toggles"] = LossToggles(**d["toggles"])
        d["betas"] = tuple(d["betas"])
        return cls(**d)


# Published schedules. Not runnable at desk scale: ImageNet / LSUI and days of GPU time.
PUBLISHED_PRETRAIN = TrainConfig(mode="pretrain", lr=4.5e-6, batch_size=6,
                             toggles=LossToggles(gan=False))
PUBLISHED_FINETUNE = TrainConfig(mode="finetune", lr=4.5e-6, batch_size=6)
PUBLISHED_EPOCHS = {"pretrain": 25, "finetune": 600}


def parameter_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class Trainer:
    def __init__(self, model_config: ModelConfig, config: TrainConfig,
                 model: CEVAE | None = None, discriminator=None, extractor=None,
                 dtype=torch.float32):
        self.model_config = model_config
        self.config = config
        torch.manual_seed(config.seed)
        self.model = (model or CEVAE(model_config)).to(dtype)
        self.discriminator = (discriminator or PatchDiscriminator()).to(dtype)
        self.extractor = (extractor or FeatureExtractor(seed=config.extractor_seed)).to(dtype)
        self.opt_g = torch.optim.Adam(self.model.parameters(), lr=config.lr, betas=config.betas)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr, betas=config.betas)
        self.step = 0
        self.history: list[dict[str, float]] = []
        self.eval_records: list[tuple[int, list[MetricRecord]]] = []

    def gan_active(self) -> bool:
        return self.config.toggles.gan and self.step >= self.config.disc_start_step

    def train_step(self, degraded, reference) -> LossBreakdown:
        """One generator update, then (when the GAN term is live) one discriminator update."""
        cfg = self.config
        self.model.train()
        self.discriminator.train()
        use_gan = self.gan_active()
        toggles = cfg.toggles
        pred = self.model(degraded)

        if toggles.gan and not use_gan and not (toggles.rec or toggles.lpips or toggles.ssim):
            # gan-only run still inside the discriminator warm-up: nothing to optimize yet
            zero = pred.new_zeros(())
            losses = LossBreakdown(zero, zero, zero, zero, zero, zero)
        else:
            if not use_gan:
                toggles = replace(toggles, gan=False)
            # generator half-step must leave the discriminator's parameters alone
            for p in self.discriminator.parameters():
                p.requires_grad_(False)
            try:
                losses = combined_loss(
                    reference, pred, toggles,
                    extractor=self.extractor,
                    discriminator=self.discriminator if use_gan else None,
                    last_layer=self.model.last_layer if use_gan else None,
                    delta=cfg.delta,
                )
            finally:
                for p in self.discriminator.parameters():
                    p.requires_grad_(True)

        terms = losses.as_floats()
        if not all(math.isfinite(v) for v in terms.values()):
            raise NonFiniteLossError(self.step, terms)

        self.opt_g.zero_grad(set_to_none=True)
        if losses.total.requires_grad:
            losses.total.backward()
            self.opt_g.step()

        if use_gan:
            self.opt_d.zero_grad(set_to_none=True)
            d_loss = discriminator_loss(self.discriminator(reference), self.discriminator(pred.detach()))
            if not torch.isfinite(d_loss):
                raise NonFiniteLossError(self.step, {**terms, "disc": float(d_loss)})
            d_loss.backward()
            self.opt_d.step()

        self.step += 1
        self.history.append({"step": self.step, **terms})
        return losses

    def fit(self, dataset: PairedDataset, steps: int, log_path=None,
            eval_pairs: list[PairedSample] | None = None, eval_every: int | None = None,
            callback: Callable | None = None):
        """Run ``steps`` generator updates, cycling epochs over ``dataset``."""
        eval_every = self.config.eval_every if eval_every is None else eval_every
        fh = None
        if log_path is not None:
            log_path = Path(log_path)
            new = not log_path.exists() or log_path.stat().st_size == 0
            fh = open(log_path, "a")
            if new:
                fh.write(LOG_HEADER + "\n")
        try:
            target = self.step + steps
            epoch = 0
            while self.step < target:
                for batch in batches(dataset, self.config.batch_size, self.config.seed, epoch):
                    losses = self.train_step(batch.degraded, batch.reference)
                    if fh is not None:
                        fh.write(losses.log_line(self.step) + "\n")
                    if callback is not None:
                        callback(self, losses)
                    if eval_pairs and eval_every and self.step % eval_every == 0:
                        self.eval_records.append((self.step, self.evaluate(eval_pairs).records))
                    if self.step >= target:
                        break
                epoch += 1
        finally:
            if fh is not None:
                fh.close()
        return self

    def predict(self, degraded):
        self.model.eval()
        with torch.no_grad():
            return self.model(degraded).clamp(-1, 1)

    def evaluate(self, pairs):
        return evaluate_dataset(pairs, self.predict)

    def train_psnr(self, dataset: PairedDataset) -> float:
        """Mean PSNR (in ``[0, 1]`` range) over the un-augmented dataset."""
        vals = []
        for s in dataset.samples:
            out = self.predict(s.degraded.unsqueeze(0).to(self.dtype))[0]
            vals.append(psnr((s.reference + 1) / 2, (out + 1) / 2))
        return float(np.mean(vals))

    @property
    def dtype(self):
        return next(self.model.parameters()).dtype

    # -- checkpoints -------------------------------------------------------

    def state_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config_hash": self.model_config.config_hash(),
            "model_config": self.model_config.to_dict(),
            "train_config": self.config.to_dict(),
            "variant": self.model.variant,
            "model": self.model.state_dict(),
            "discriminator_arch": dict(self.discriminator.arch),
            "discriminator": self.discriminator.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "step": self.step,
        }

    def save(self, path):
        torch.save(self.state_dict(), Path(path))
        return Path(path)

    @classmethod
    def load(cls, path, model_config: ModelConfig | None = None,
             config: TrainConfig | None = None) -> "Trainer":
        """Restore a trainer. A ``model_config`` that hashes differently from the saved one is refused."""
        ckpt = load_checkpoint(path, model_config)
        mcfg = ModelConfig.from_dict(ckpt["model_config"])
        tcfg = config or TrainConfig.from_dict(ckpt["train_config"])
        dtype = next(iter(ckpt["model"].values())).dtype
        model = CEVAE(mcfg, variant=ckpt.get("variant", "full"))
        disc = PatchDiscriminator(**ckpt.get("discriminator_arch", {}))
        trainer = cls(mcfg, tcfg, model=model, discriminator=disc, dtype=dtype)
        trainer.model.load_state_dict(ckpt["model"])
        trainer.discriminator.load_state_dict(ckpt["discriminator"])
        if config is None or config.lr == TrainConfig.from_dict(ckpt["train_config"]).lr:
            trainer.opt_g.load_state_dict(ckpt["opt_g"])
            trainer.opt_d.load_state_dict(ckpt["opt_d"])
        trainer.step = ckpt["step"]
        return trainer


def load_checkpoint(path, model_config: ModelConfig | None = None) -> dict:
    try:
        ckpt = torch.load(Path(path), map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises a zoo of types for corrupt files
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {ckpt.get('version')}")
    if model_config is not None and model_config.config_hash() != ckpt["config_hash"]:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {ckpt['config_hash'][:12]} vs "
            f"requested {model_config.config_hash()[:12]}; refusing to resume"
        )
    return ckpt


def load_model(path, model_config: ModelConfig | None = None) -> CEVAE:
    ckpt = load_checkpoint(path, model_config)
    model = CEVAE(ModelConfig.from_dict(ckpt["model_config"]), variant=ckpt.get("variant", "full"))
    dtype = next(iter(ckpt["model"].values())).dtype
    model.to(dtype).load_state_dict(ckpt["model"])
    return model.eval()


def pretrain(model_config: ModelConfig, config: TrainConfig, dataset: PairedDataset,
             steps: int | None = None, log_path=None) -> Trainer:
    """Reconstruction pretraining: every degraded input is replaced by its reference."""
    if config.mode != "pretrain":
        config = replace(config, mode="pretrain")
    ident = PairedDataset([], dataset.size, dataset.augment, dataset.seed)
    ident.samples = [replace(s, degraded=s.reference) for s in dataset.samples]
    trainer = Trainer(model_config, config)
    return trainer.fit(ident, config.steps if steps is None else steps, log_path=log_path)


def finetune(config: TrainConfig, dataset: PairedDataset, init, steps: int | None = None,
             log_path=None, eval_pairs=None) -> Trainer:
    """Paired training from ``init`` (checkpoint path or Trainer); the step counter carries over."""
    if config.mode != "finetune":
        config = replace(config, mode="finetune")
    if isinstance(init, Trainer):
        path_state = init.state_dict()
        disc = PatchDiscriminator(**path_state["discriminator_arch"])
        trainer = Trainer(init.model_config, config, discriminator=disc, dtype=init.dtype)
        trainer.model.load_state_dict(path_state["model"])
        trainer.discriminator.load_state_dict(path_state["discriminator"])
        trainer.step = init.step
    else:
        trainer = Trainer.load(init, config=config)
    return trainer.fit(dataset, config.steps if steps is None else steps,
                       log_path=log_path, eval_pairs=eval_pairs)


# -- loss ablations -----------------------------------------------------------


def ablate_losses(model_config: ModelConfig, config: TrainConfig, dataset: PairedDataset,
                  eval_pairs: list[PairedSample], toggle_sets: dict[str, LossToggles],
                  steps: int | None = None) -> dict[str, list[tuple[str, float]]]:
    """Train one model per toggle set from the same seed; return per-image PSNR for each."""
    if len(toggle_sets) < 2:
        raise ConfigurationError("loss ablation needs at least two toggle sets")
    table = {}
    for name, toggles in toggle_sets.items():
        trainer = Trainer(model_config, replace(config, toggles=toggles))
        trainer.fit(dataset, config.steps if steps is None else steps)
        res = trainer.evaluate(eval_pairs)
        table[name] = [(r.image_id, r.psnr) for r in res.records]
    return table


def write_ablation_tsv(path, table):
    lines = ["set\tid\tpsnr"]
    for name, rows in table.items():
        lines += [f"{name}\t{i}\t{p!r}" for i, p in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ablation_tsv(path) -> dict[str, list[tuple[str, float]]]:
    table: dict[str, list[tuple[str, float]]] = {}
    for line in Path(path).read_text().splitlines()[1:]:
        if line:
            name, i, p = line.split("\t")
            table.setdefault(name, []).append((i, float(p)))
    return table


def quartiles(values) -> tuple[float, float, float, float, float]:
    """(min, q1, median, q3, max) with midpoint interpolation between order statistics."""
    a = np.asarray(values, dtype=np.float64)
    q = np.percentile(a, [0, 25, 50, 75, 100], method="midpoint")
    return tuple(float(v) for v in q)


def write_quartiles_tsv(path, table):
    lines = ["set\tmin\tq1\tmedian\tq3\tmax"]
    for name, rows in table.items():
        lines.append("\t".join([name] + [repr(v) for v in quartiles([p for _, p in rows])]))
    Path(path).write_text("\n".join(lines) + "\n")
