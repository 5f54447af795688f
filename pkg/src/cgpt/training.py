"""Deterministic training loop: decoupled weight decay, cosine schedule,
early stopping on validation MSE with best-checkpoint restore."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import select_contexts
from .preprocessing import iter_window_batches, window_starts, gather_windows, WindowBatch
from .tensor import Tensor, backward, mean_axis, no_grad, square, zero_grads


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    revin: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError(f"invalid training configuration: {self}")


@dataclass
class RunResult:
    seed: int
    best_epoch: int
    epochs_run: int
    test_mae: float
    test_mse: float
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    wall_time: float = 0.0


def cosine_lr(epoch, cfg):
    """Annealed rate for a 0-based epoch index: 0.5*lr*(1+cos(pi*e/E))."""
    if not 0 <= epoch <= cfg.max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.max_epochs}]")
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.max_epochs))


class AdamW:
    """Adam with decoupled weight decay applied before the moment update."""

    def __init__(self, params, cfg):
        self.params = dict(params)
        self.cfg = cfg
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grads(self):
        zero_grads(self.params.values())

    def step(self, lr_t):
        b1, b2 = self.cfg.betas
        self.t += 1
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient in parameter {name!r}")
            p.data *= 1.0 - lr_t * self.cfg.weight_decay
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * g * g
            p.data -= lr_t * (m / bias1) / (np.sqrt(v / bias2) + self.cfg.adam_eps)


def mse_loss(forecast, target):
    return mean_axis(square(forecast - Tensor(np.asarray(target, dtype=np.float64))))


def evaluate(model, batches, revin=False):
    """Mean absolute / squared error over a stream of WindowBatch blocks."""
    abs_sum = sq_sum = 0.0
    count = 0
    with no_grad():
        for batch in batches:
            diff = model.forward(batch, revin=revin).data - batch.target_future
            abs_sum += np.abs(diff).sum()
            sq_sum += (diff * diff).sum()
            count += diff.size
    if count == 0:
        raise ValueError("evaluate: empty window stream")
    return float(abs_sum / count), float(sq_sum / count)


def _epoch_permutation(seed, epoch, n):
    rng = np.random.Generator(np.random.Philox(key=[seed, epoch]))
    return rng.permutation(n)


def train(model, dataset, cfg):
    """Fit ``model`` on a prepared dataset (borders attached, standardized).

    Returns a RunResult; the model is left holding the parameters of its
    best validation epoch, not the last one.
    """
    if dataset.borders is None:
        raise ValueError("dataset has no split borders; run prepare_dataset first")
    t0 = time.perf_counter()
    l_ctx, h_pred = model.l_ctx, model.h_pred
    contexts = select_contexts(dataset.graph, dataset.target, range(dataset.n_channels))
    train_split, val_split, test_split = dataset.borders

    train_starts = window_starts(train_split, l_ctx, h_pred)
    optimizer = AdamW(model.parameters(), cfg)
    params = optimizer.params

    def eval_split(split):
        stream = iter_window_batches(dataset.values, split, l_ctx, h_pred,
                                     dataset.target, contexts, cfg.batch_size,
                                     allow_context_overlap=True)
        return evaluate(model, stream, revin=cfg.revin)

    best_val = math.inf
    best_state = None
    best_epoch = 0
    bad_epochs = 0
    train_losses, val_losses = [], []
    epochs_run = 0

    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        lr_t = cosine_lr(epoch - 1, cfg)
        order = _epoch_permutation(cfg.seed, epoch, len(train_starts))
        sq_sum = 0.0
        count = 0
        for i in range(0, len(train_starts), cfg.batch_size):
            chunk = train_starts[order[i:i + cfg.batch_size]]
            ctx, fut = gather_windows(dataset.values, chunk, l_ctx, h_pred, dataset.target)
            batch = WindowBatch(ctx, fut, dataset.target, tuple(contexts))
            optimizer.zero_grads()
            loss = mse_loss(model.forward(batch, revin=cfg.revin), batch.target_future)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, batch {i // cfg.batch_size}")
            backward(loss)
            optimizer.step(lr_t)
            sq_sum += value * fut.size
            count += fut.size
        train_losses.append(sq_sum / count)

        _, val_mse = eval_split(val_split)
        if not math.isfinite(val_mse):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        val_losses.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_state = {k: p.data.copy() for k, p in params.items()}
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    for name, p in params.items():
        p.data = best_state[name].copy()

    test_mae, test_mse = eval_split(test_split)
    return RunResult(seed=cfg.seed, best_epoch=best_epoch, epochs_run=epochs_run,
                     test_mae=test_mae, test_mse=test_mse,
                     train_losses=train_losses, val_losses=val_losses,
                     wall_time=time.perf_counter() - t0)


def run_seeds(make_run, seeds):
    """Aggregate RunResults over seeds: mean and sample stdev per metric."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_seeds: no seeds given")
    results = [make_run(seed) for seed in seeds]
    mae = np.array([r.test_mae for r in results])
    mse = np.array([r.test_mse for r in results])
    single = len(seeds) == 1
    return {
        "mae_mean": float(mae.mean()),
        "mae_std": 0.0 if single else float(mae.std(ddof=1)),
        "mse_mean": float(mse.mean()),
        "mse_std": 0.0 if single else float(mse.std(ddof=1)),
        "n_seeds": len(seeds),
        "single_seed": single,
        "results": results,
    }


def result_record(result, meta):
    """Flat, self-describing key=value serialization of one training run.

    Timing is deliberately left out: records of identical runs must be
    byte-identical.
    """
    fields = dict(meta)
    fields.update({
        "seed": result.seed,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "test_mae": repr(result.test_mae),
        "test_mse": repr(result.test_mse),
        "train_losses": ",".join(repr(v) for v in result.train_losses),
        "val_losses": ",".join(repr(v) for v in result.val_losses),
    })
    return "".join(f"{k}={v}\n" for k, v in fields.items())


def parse_record(text):
    """Inverse of result_record, values kept as strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key] = value
    return out
