"""Maximum-likelihood meta-training on a stream of fresh synthetic tasks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .models import log_likelihood_per_point, nll_loss
from .synthdata import ProcessSpec, sample_task


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from a tuple of integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)
    return int(state[0] >> 1)


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    Full-scale defaults are 200 epochs x 256 batches x batch 16 with lr
    3e-4 and weight decay 1e-5; desk-scale presets scale the schedule down.
    """

    epochs: int = 200
    batches_per_epoch: int = 256
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 1e-5
    seed: int = 0
    early_stop_patience: int = 15
    n_val_tasks: int = 128

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "batch_size", "lr",
                     "early_stop_patience", "n_val_tasks"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("TrainConfig.weight_decay must be non-negative")

    @classmethod
    def desk_scale(cls, seed: int = 0) -> "TrainConfig":
        return cls(epochs=20, batches_per_epoch=64, batch_size=4, seed=seed)


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    val_ll: float
    seconds: float
    param_norm: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_rows(self):
        return [
            (r.epoch, r.train_nll, r.val_ll, r.seconds, r.param_norm)
            for r in self.records
        ]

    @property
    def best_val_ll(self) -> float:
        return max(r.val_ll for r in self.records)


@dataclass
class EvalSummary:
    n_tasks: int
    mean_ll: float
    stderr_ll: float
    mse: float
    stderr_mse: float
    per_task_ll: np.ndarray
    per_task_mse: np.ndarray


def evaluate(model, tasks) -> EvalSummary:
    """Per-task mean target log likelihood and mean prediction error."""
    if not tasks:
        raise ValueError("evaluate: no tasks")
    lls, mses = [], []
    for task in tasks:
        pred = model.forward(task)
        lls.append(log_likelihood_per_point(pred, task.target_y))
        mses.append(float(np.mean((pred.mean - task.target_y) ** 2)))
    lls = np.asarray(lls)
    mses = np.asarray(mses)

    def stderr(a):
        return float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0

    return EvalSummary(
        n_tasks=len(tasks),
        mean_ll=float(lls.mean()),
        stderr_ll=stderr(lls),
        mse=float(mses.mean()),
        stderr_mse=stderr(mses),
        per_task_ll=lls,
        per_task_mse=mses,
    )


def train(model, config: TrainConfig, process: ProcessSpec):
    """Meta-train ``model`` in place; returns (log, best_state, last_state).

    Each batch draws fresh tasks from the generator stream; the loss is the
    mean over tasks of the per-task mean target NLL.  A fixed validation
    set (seeds disjoint from the training stream) drives early stopping;
    the model is left holding the best-validation parameters.
    """
    store = model.params
    val_tasks = [
        sample_task(process, derive_seed(config.seed, 2, i))
        for i in range(config.n_val_tasks)
    ]

    log = TrainLog()
    best_state = store.state_dict()
    best_val = -np.inf
    stale_epochs = 0
    counter = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        epoch_nll = 0.0
        for _ in range(config.batches_per_epoch):
            leaves = store.leaves()
            losses = []
            task_seeds = []
            for _ in range(config.batch_size):
                seed = derive_seed(config.seed, 1, counter)
                counter += 1
                task = sample_task(process, seed)
                task_seeds.append(seed)
                try:
                    pred = model.forward(task, leaves=leaves)
                    losses.append(nll_loss(pred, task.target_y))
                except ad.DiffError as err:
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, task seed {seed}: {err}"
                    ) from err
            batch_loss = losses[0]
            for extra in losses[1:]:
                batch_loss = ad.add(batch_loss, extra)
            batch_loss = ad.mul(
                batch_loss, ad.constant(np.asarray(1.0 / len(losses)))
            )
            ad.backward(batch_loss)
            store.accumulate(leaves)
            ad.adam_step(store, config.lr, config.weight_decay)
            epoch_nll += float(batch_loss.value)

        val = evaluate(model, val_tasks)
        param_norm = float(
            np.sqrt(sum(np.sum(p.value**2) for _, p in store.items()))
        )
        log.records.append(
            EpochRecord(
                epoch=epoch,
                train_nll=epoch_nll / config.batches_per_epoch,
                val_ll=val.mean_ll,
                seconds=time.perf_counter() - t0,
                param_norm=param_norm,
            )
        )
        if val.mean_ll > best_val:
            best_val = val.mean_ll
            best_state = store.state_dict()
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.early_stop_patience:
                break

    last_state = store.state_dict()
    store.load_state_dict(best_state)
    return log, best_state, last_state
