"""Per-pixel BCE training with momentum SGD, pretrain and finetune phases."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import Sample
from .model import SegDenseNet, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

EPS = 1e-7
PHASES = ("pretrain", "finetune")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 500
    batch_size: int = 8
    seed: int = 0
    phase: str = "pretrain"
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    samples: int


def pixel_loss(confidence: torch.Tensor, target: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Mean binary cross-entropy over every pixel of the batch."""
    if confidence.shape != target.shape:
        raise ValueError(f"shape mismatch: confidence {tuple(confidence.shape)} vs target {tuple(target.shape)}")
    p = confidence.clamp(eps, 1.0 - eps)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p)).mean()


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def make_batch(model: SegDenseNet, samples: list[Sample], dtype=torch.float32):
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    x = model.preprocess(images, dtype=dtype)
    y = torch.as_tensor(masks, dtype=dtype)[:, None]
    return x, y


def make_optimizer(model: SegDenseNet, config: TrainConfig) -> torch.optim.Optimizer:
    # v <- mu*v + g; theta <- theta - lr*v  (same trajectory as v <- mu*v - lr*g; theta += v)
    return torch.optim.SGD(model.parameters(), lr=config.learning_rate, momentum=config.momentum)


def _check_samples(samples: list[Sample]) -> None:
    for i, s in enumerate(samples):
        if s.mask is None:
            raise ValueError(f"training sample {i} ({s.name or 'unnamed'}) has no mask")
        h, w = s.image.shape
        if h % 32 or w % 32:
            raise ValueError(f"training sample {i} is {w}x{h}; model input must be divisible by 32")


def train_epoch(model: SegDenseNet, samples: list[Sample], config: TrainConfig,
                optimizer: torch.optim.Optimizer | None = None, epoch: int = 0) -> EpochStats:
    _check_samples(samples)
    if optimizer is None:
        optimizer = make_optimizer(model, config)
    dtype = model.final_up.weight.dtype
    model.train()
    order = batch_order(len(samples), config.seed, epoch)
    total = 0.0
    for start in range(0, len(order), config.batch_size):
        batch = [samples[i] for i in order[start:start + config.batch_size]]
        x, y = make_batch(model, batch, dtype)
        optimizer.zero_grad(set_to_none=True)
        loss = pixel_loss(model(x), y)
        loss.backward()
        optimizer.step()
        total += loss.item() * len(batch)
    return EpochStats(epoch, total / max(len(samples), 1), len(samples))


def run_training(model: SegDenseNet, dataset: list[Sample], config: TrainConfig, checkpoint_dir,
                 init_checkpoint=None, callback=None) -> Path:
    """Run ``config.epochs`` epochs and return the final checkpoint path.

    Finetuning starts from ``init_checkpoint``; pretraining may optionally do
    so too. Writes ``<phase>_epochNNNN.safetensors`` every
    ``config.checkpoint_every`` epochs (0 disables), ``<phase>_final.safetensors``
    at the end and a ``<phase>_log.tsv`` with one line per epoch.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if config.phase == "finetune" and init_checkpoint is None:
        raise ValueError("finetune phase requires an initial checkpoint (--init-checkpoint)")
    _check_samples(dataset)
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    log_path = checkpoint_dir / f"{config.phase}_log.tsv"
    log_path.write_text("", encoding="utf-8")

    if init_checkpoint is not None:
        load_checkpoint(init_checkpoint, model)

    optimizer = make_optimizer(model, config)
    meta = {"phase": config.phase, "seed": config.seed}
    for epoch in range(config.epochs):
        stats = train_epoch(model, dataset, config, optimizer, epoch)
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(f"{epoch + 1}\t{stats.mean_loss:.8f}\t{stats.samples}\n")
        log.debug("%s epoch %d loss %.6f", config.phase, epoch + 1, stats.mean_loss)
        if callback is not None:
            callback(stats)
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0 and epoch + 1 < config.epochs:
            save_checkpoint(model, checkpoint_dir / f"{config.phase}_epoch{epoch + 1:04d}.safetensors",
                            {**meta, "epoch": epoch + 1})
    return save_checkpoint(model, checkpoint_dir / f"{config.phase}_final.safetensors",
                           {**meta, "epoch": config.epochs})
