"""Seeded minibatch training for classifiers and autoencoders."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .nets import Autoencoder, Classifier

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes NaN/Inf; carries the offending step."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9          # 0 disables; plain SGD
    loss_kind: str | None = None   # AE only: overrides the model's loss
    seed: int = 0
    noise_sigma: float = 0.0       # AE only: Gaussian input noise, default off
    log_every: int = 0             # epochs between log lines; 0 = silent

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


class _SGD:
    def __init__(self, params, lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, grads):
        for p, v in zip(self.params, self.velocity):
            g = grads.wrt(p)
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= self.lr * g


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@dataclass
class TrainReport:
    epoch_losses: list[float]
    final_train_accuracy: float | None = None
    validation_accuracy: float | None = None
    validation_loss: float | None = None


def train_classifier(model: Classifier, xs: np.ndarray, ys: np.ndarray,
                     cfg: TrainConfig, val: tuple[np.ndarray, np.ndarray] | None = None
                     ) -> TrainReport:
    """Cross-entropy minibatch SGD; mutates the model's weights in place."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    if len(xs) == 0:
        raise ValueError("empty training set")
    if ys.min() < 0 or ys.max() >= model.k:
        raise ValueError(f"labels must lie in [0, {model.k})")
    rng = np.random.default_rng(cfg.seed)
    opt = _SGD(model.net.params(), cfg.lr, cfg.momentum)
    losses = []
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for idx in _batches(len(xs), cfg.batch_size, rng):
            tape = Tape()
            logits = model.logits_tensor(Tensor(xs[idx]), tape)
            loss = ad.cross_entropy_logits(logits, ys[idx], tape)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise TrainingDiverged(
                    f"classifier loss became {lval} at epoch {epoch}; "
                    f"lr={cfg.lr}, batch={len(idx)}"
                )
            epoch_loss += lval * len(idx)
            opt.step(tape.backward(loss))
        losses.append(epoch_loss / len(xs))
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("classifier epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, losses[-1])
    report = TrainReport(epoch_losses=losses,
                         final_train_accuracy=model.accuracy(xs, ys))
    if val is not None:
        report.validation_accuracy = model.accuracy(val[0], val[1])
    return report


def train_autoencoder(model: Autoencoder, xs: np.ndarray, cfg: TrainConfig,
                      val: np.ndarray | None = None) -> TrainReport:
    """Reconstruction training (per-pixel MSE or MAE) toward the clean input."""
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) == 0:
        raise ValueError("empty training set")
    loss_kind = cfg.loss_kind or model.loss_kind
    if loss_kind not in ("mse", "mae"):
        raise ValueError(f"unknown reconstruction loss {loss_kind!r}")
    loss_op = ad.mean_squared_error if loss_kind == "mse" else ad.mean_absolute_error
    rng = np.random.default_rng(cfg.seed)
    opt = _SGD(model.net.params(), cfg.lr, cfg.momentum)
    losses = []
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for idx in _batches(len(xs), cfg.batch_size, rng):
            batch = xs[idx]
            inp = batch
            if cfg.noise_sigma > 0:
                inp = np.clip(batch + rng.normal(scale=cfg.noise_sigma, size=batch.shape), 0.0, 1.0)
            tape = Tape()
            recon = model.reconstruct_tensor(Tensor(inp), tape)
            loss = loss_op(recon, batch, tape)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise TrainingDiverged(
                    f"autoencoder loss became {lval} at epoch {epoch}; "
                    f"lr={cfg.lr}, loss={loss_kind}"
                )
            epoch_loss += lval * len(idx)
            opt.step(tape.backward(loss))
        losses.append(epoch_loss / len(xs))
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("autoencoder epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, losses[-1])
    report = TrainReport(epoch_losses=losses)
    if val is not None:
        recon = model.reconstruct(val)
        d = recon - val
        report.validation_loss = float(np.mean(d * d) if loss_kind == "mse" else np.mean(np.abs(d)))
    return report
