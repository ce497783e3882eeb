"""Epoch loop with shuffled minibatches and validation-based early stopping.

The trainer owns the per-cycle rng streams: batch shuffling comes from one
substream so that identical (seed, config, data) reproduce identical runs.
The best-validation parameter state is restored before the model is handed
back for testing.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .data import batches_from_arrays, materialize
from .errors import ContractError, TrainingDiverged
from .model import evaluate, make_optimizers, train_step
from .objectives import kl_schedule
from .rng import Rng


@dataclass
class TrainConfig:
    lr: float = 0.005
    epochs: int = 20
    batch_size: int = 512
    patience: int = 3
    threshold: float = 0.5
    clip_norm: float = 10.0
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ContractError("lr, epochs, and batch_size must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ContractError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class EpochRow:
    epoch: int
    total: float
    likelihood_term: float
    kl_term: float
    l1_term: float
    l2_term: float
    kl_scale_applied: float
    val_weighted_f1: float
    wall_clock: float

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class FitResult:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_weighted_f1: float = 0.0


def _snapshot(model):
    state = {name: p.data.copy() for name, p in model.named_parameters().items()}
    for tag, bn in (("bn_text", model.fusion.bn_text), ("bn_image", model.fusion.bn_image)):
        if bn is not None:
            state[f"_running.{tag}.mean"] = bn.running_mean.copy()
            state[f"_running.{tag}.var"] = bn.running_var.copy()
    return state


def _restore(model, state):
    for name, p in model.named_parameters().items():
        p.data[...] = state[name]
    for tag, bn in (("bn_text", model.fusion.bn_text), ("bn_image", model.fusion.bn_image)):
        if bn is not None:
            bn.running_mean[...] = state[f"_running.{tag}.mean"]
            bn.running_var[...] = state[f"_running.{tag}.var"]


def fit(model, records, split, train_cfg, on_epoch=None, restore_best=True):
    """Train on ``split.train``, early-stopping on validation weighted-F1.

    Returns a FitResult with one row per completed epoch. ``on_epoch`` is
    called with each finished EpochRow (used for append-only logging).
    """
    cfg = model.config
    if cfg.elbo.kind == "lambda_kl" and not cfg.elbo.kl_scale_fixed:
        # anneal over the configured horizon by default
        cfg.elbo.anneal_epochs = max(cfg.elbo.anneal_epochs, 1)
    optimizers = make_optimizers(
        model, train_cfg.lr, clip_norm=train_cfg.clip_norm, weight_decay=train_cfg.weight_decay
    )
    shuffle_rng = Rng(model.seed).substream("shuffle")
    train_arrays = materialize(records, split.train)
    train_size = len(split.train)

    result = FitResult()
    best_state = None
    since_best = 0
    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        sums = np.zeros(6)
        steps = 0
        for batch in batches_from_arrays(
            *train_arrays, train_cfg.batch_size, rng=shuffle_rng, shuffle=True
        ):
            try:
                breakdown = train_step(model, batch, optimizers, epoch, train_size)
            except TrainingDiverged as exc:
                raise TrainingDiverged(exc.term, epoch) from None
            sums += [
                breakdown.total,
                breakdown.likelihood_term,
                breakdown.kl_term,
                breakdown.l1_term,
                breakdown.l2_term,
                breakdown.kl_scale_applied,
            ]
            steps += 1
        means = sums / max(steps, 1)
        val_report = evaluate(
            model, records, split.validation, threshold=train_cfg.threshold,
            batch_size=train_cfg.batch_size,
        )
        row = EpochRow(
            epoch=epoch,
            total=float(means[0]),
            likelihood_term=float(means[1]),
            kl_term=float(means[2]),
            l1_term=float(means[3]),
            l2_term=float(means[4]),
            kl_scale_applied=float(means[5]),
            val_weighted_f1=val_report.weighted,
            wall_clock=time.perf_counter() - started,
        )
        result.rows.append(row)
        if on_epoch is not None:
            on_epoch(row)

        if val_report.weighted > result.best_val_weighted_f1 or best_state is None:
            result.best_val_weighted_f1 = val_report.weighted
            result.best_epoch = epoch
            best_state = _snapshot(model)
            since_best = 0
        else:
            since_best += 1
            if since_best > train_cfg.patience:
                break

    if restore_best and best_state is not None:
        _restore(model, best_state)
    return result


def current_kl_scale(model, epoch):
    cfg = model.config
    if cfg.variant == "pm_mo" and cfg.elbo.kind == "lambda_kl":
        return kl_schedule(epoch, cfg.elbo)
    return 1.0
