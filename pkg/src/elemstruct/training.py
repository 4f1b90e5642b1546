"""Mini-batch training under either loss regime."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import ShapeDataset
from .errors import DataError, NumericalError
from .model import ReconstructionModel, loss_supervised, loss_unsupervised
from .tensor import Adam, step_decay_lr
from .tensor.checkpoint import save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    optimizer: Adam | None = None
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.history]


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing batch of one joins the previous batch.

    Batch statistics are undefined for a single shape, hence the merge.
    """
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def subsample(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return points[rng.choice(len(points), size=n, replace=len(points) < n)]


def _batch_loss(model: ReconstructionModel, dataset: ShapeDataset, ids, cfg: TrainConfig, rng, dtype):
    if model.config.supervised:
        # full ordered clouds are the targets; the encoder sees a random subset
        targets = np.stack([dataset[i].points for i in ids]).astype(dtype)
        m = min(cfg.input_points, targets.shape[1])
        enc = np.stack([subsample(t, m, rng) for t in targets]) if cfg.resample else targets[:, :m]
        return loss_supervised(model, targets, encoder_input=enc)
    if cfg.resample:
        targets = np.stack([subsample(dataset[i].points, cfg.input_points, rng) for i in ids])
    else:
        targets = np.stack([dataset[i].points[: cfg.input_points] for i in ids])
    samples = model.resample(rng) if model.resamples and cfg.resample else None
    return loss_unsupervised(model, targets.astype(dtype), samples)


def train(
    model: ReconstructionModel,
    dataset: ShapeDataset,
    cfg: TrainConfig,
    checkpoint_dir=None,
    metadata: dict | None = None,
    optimizer: Adam | None = None,
) -> TrainResult:
    """Train ``model`` in place and return the per-epoch loss history.

    Every random draw (shuffling, target subsampling, structure resampling)
    comes from one generator seeded with ``cfg.seed``.

    Raises:
        NumericalError: a batch loss is not finite; the message names the
            step, the batch's shape ids and the value.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if model.config.supervised and not dataset.ordered:
        raise DataError("supervised training needs an ordered dataset")
    rng = np.random.default_rng(cfg.seed)
    dtype = model.encoder.head.weight.dtype
    opt = optimizer or Adam(model.named_parameters(), lr=cfg.learning_rate)
    result = TrainResult(optimizer=opt)
    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        opt.lr = step_decay_lr(cfg.learning_rate, epoch, cfg.epochs, cfg.lr_milestones, cfg.lr_decay)
        total, count = 0.0, 0
        for ids in batches(len(dataset), cfg.batch_size, rng):
            model.zero_grad()
            loss = _batch_loss(model, dataset, ids, cfg, rng, dtype)
            value = float(loss.data)
            if not np.isfinite(value):
                names = [dataset[i].id for i in ids]
                raise NumericalError(f"non-finite loss {value} at step {step} (epoch {epoch}), batch {names}")
            loss.backward()
            opt.step()
            step += 1
            total += value * len(ids)
            count += len(ids)
        record = EpochRecord(epoch, total / count, opt.lr)
        result.history.append(record)
        log.info("epoch %d loss %.6g lr %.3g", epoch, record.mean_loss, record.lr)
        if checkpoint_dir is not None and cfg.checkpoint_interval and (epoch + 1) % cfg.checkpoint_interval == 0:
            path = Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.ckpt"
            save_checkpoint(path, model, opt, metadata)
            result.checkpoints.append(path)
    model.eval()
    return result


def write_history(path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for r in history:
            writer.writerow([r.epoch, repr(float(r.mean_loss)), repr(float(r.lr))])
