"""Trajectory-matching training: L1 rollout loss, AdamW, cosine annealing.

The loss backpropagates through rollout_fixed, so every step of every chunk
contributes gradient signal through the model's dynamics (and, for the
constrained models, through the learned mass used to convert initial
velocities into momenta).  Losses and predictions always compare Cartesian
(x, xdot) states regardless of the model's internal coordinates.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ParameterDomainError, TrainingError
from .integrators import rollout_fixed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 200
    lr: float = 3e-3
    weight_decay: float = 1e-4
    substeps: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # 0: only the final checkpoint
    max_bad_steps: int = 10

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "substeps", "max_bad_steps"):
            if getattr(self, name) <= 0:
                raise ParameterDomainError(f"{name} must be positive")
        if self.weight_decay < 0 or self.checkpoint_every < 0:
            raise ParameterDomainError("weight_decay and checkpoint_every must be >= 0")


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Cosine annealing without restarts: lr at epoch 0, ~0 at the last epoch."""
    return config.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / config.epochs))


class AdamW:
    """Adam with decoupled weight decay applied to every parameter."""

    def __init__(self, store: ad.ParamStore, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(value) for name, value in store.items()}
        self._v = {name: np.zeros_like(value) for name, value in store.items()}

    def step(self, store: ad.ParamStore, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            store[name] = store[name] * (1.0 - lr * self.weight_decay) - lr * update


def trajectory_loss_node(model, leaves: dict, chunks: np.ndarray,
                         substeps: int = 1) -> ad.Node:
    """Mean L1 rollout error of a chunk batch, as a tape node.

    chunks is (B, T, 2dn) Cartesian ground truth at uniform dt spacing; the
    model is started from column 0 and compared against columns 1..T-1.
    """
    chunks = np.asarray(chunks, dtype=float)
    B, T = chunks.shape[:2]
    tape = next(iter(leaves.values())).tape
    times = model.system.dt * np.arange(T)
    w0 = model.to_state_node(leaves, tape.constant(model.encode(chunks[:, 0])))
    states = rollout_fixed(lambda w: model.dynamics_node(leaves, w), w0, times,
                           substeps=substeps)
    total = None
    for t in range(1, T):
        pred = model.decode_node(leaves, states[t])
        term = ad.reduce_sum(ad.absolute(ad.sub(pred, tape.constant(chunks[:, t]))))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / (B * (T - 1)))


def trajectory_loss(model, store: ad.ParamStore, chunks: np.ndarray,
                    substeps: int = 1) -> float:
    """Loss value only (no gradients tracked).

    Per-chunk errors are reduced with an exactly rounded sum, so the value is
    bit-identical under any permutation of the batch.
    """
    chunks = np.asarray(chunks, dtype=float)
    B, T = chunks.shape[:2]
    times = model.system.dt * np.arange(T)
    preds = model.rollout(store, chunks[:, 0], times, substeps=substeps)
    per_chunk = np.sum(np.abs(preds[:, 1:] - chunks[:, 1:]), axis=(1, 2))
    return math.fsum(per_chunk) / (B * (T - 1))


@dataclass(frozen=True)
class TrainResult:
    store: ad.ParamStore
    history: np.ndarray  # rows (epoch, mean loss, lr)
    bad_steps: int


def train(model, chunks: np.ndarray, config: TrainConfig,
          checkpoint_dir=None, log=None) -> TrainResult:
    """Minibatch AdamW over shuffled chunk batches with cosine annealing.

    Init and shuffle randomness derive from config.seed only, so a fixed seed
    reproduces the run bit for bit.  Non-finite losses skip the optimizer step;
    max_bad_steps consecutive ones abort with TrainingError.
    """
    chunks = np.asarray(chunks, dtype=float)
    if chunks.ndim != 3:
        raise ParameterDomainError(f"chunks must be (N, T, D), got {chunks.shape}")
    store = model.init_params(np.random.default_rng([config.seed, 0]))
    shuffle_rng = np.random.default_rng([config.seed, 1])
    optimizer = AdamW(store, weight_decay=config.weight_decay)
    names = store.names()
    history = []
    bad_total = 0
    bad_streak = 0
    for epoch in range(config.epochs):
        lr_t = cosine_lr(epoch, config)
        order = shuffle_rng.permutation(len(chunks))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = chunks[order[start:start + config.batch_size]]
            tape = ad.Tape()
            leaves = store.leaves(tape)
            try:
                loss = trajectory_loss_node(model, leaves, batch, config.substeps)
                value = float(loss.value)
            except np.linalg.LinAlgError:
                # a singular multiplier solve counts as a bad step, same as nan
                value = float("nan")
            if not np.isfinite(value):
                bad_total += 1
                bad_streak += 1
                if log is not None:
                    log(f"epoch {epoch}: non-finite loss, step skipped "
                        f"({bad_streak} consecutive)")
                if bad_streak >= config.max_bad_steps:
                    raise TrainingError(
                        f"aborting: {bad_streak} consecutive non-finite losses at epoch {epoch}")
                continue
            bad_streak = 0
            grad_nodes = ad.grad(loss, [leaves[name] for name in names])
            grads = {name: node.value for name, node in zip(names, grad_nodes)}
            optimizer.step(store, grads, lr_t)
            epoch_losses.append(value)
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        history.append((float(epoch), mean_loss, lr_t))
        if log is not None:
            log(f"epoch {epoch}: loss {mean_loss:.6g} lr {lr_t:.3g}")
        if checkpoint_dir and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            ad.save_checkpoint(store, os.path.join(checkpoint_dir, f"epoch_{epoch + 1:05d}.cmk"))
    if checkpoint_dir:
        ad.save_checkpoint(store, os.path.join(checkpoint_dir, "final.cmk"))
    return TrainResult(store=store, history=np.array(history), bad_steps=bad_total)


def write_history(history: np.ndarray, path) -> None:
    """Training history as CSV with full-precision floats."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,lr\n")
        for epoch, loss, lr in np.asarray(history):
            fh.write(f"{int(epoch)},{loss:.17g},{lr:.17g}\n")


def read_history(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
