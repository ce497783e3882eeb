"""Loss functions for the two training objectives.

The classifier trains against binary cross-entropy over logits. The fusion
module trains against a negative-ELBO loss in one of three flavours:

* v1 - Monte-Carlo KL from log-density differences at the sampled weights;
* v2 - the analytic KL in place of the sampled estimate, which removes that
  component's variance entirely;
* lambda_kl - v2 (or v1) with the KL term scaled by an annealed factor that
  starts at ``lambda0`` and grows linearly to 1.

Minibatch KL terms are scaled by batch_size / train_set_size so the summed
per-batch losses estimate the full-dataset objective without bias.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor

ELBO_KINDS = ("v1", "v2", "lambda_kl")


@dataclass
class ElboVariant:
    kind: str = "lambda_kl"
    mc_samples: int = 1
    lambda0: float = 0.2
    anneal_epochs: int = 20
    kl_scale_fixed: bool = False
    base: str = "v2"  # estimator the annealed variant wraps

    def __post_init__(self):
        if self.kind not in ELBO_KINDS:
            raise ContractError(f"unknown ELBO kind {self.kind!r}")
        if self.mc_samples < 1:
            raise ContractError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if not 0.0 < self.lambda0 <= 1.0:
            raise ContractError(f"lambda0 must lie in (0, 1], got {self.lambda0}")
        if self.anneal_epochs < 1:
            raise ContractError(f"anneal_epochs must be >= 1, got {self.anneal_epochs}")
        if self.base not in ("v1", "v2"):
            raise ContractError(f"lambda_kl base must be v1 or v2, got {self.base!r}")


@dataclass
class ForwardSample:
    """Per-pass terms gathered while the network ran with sampled weights."""

    nll: Tensor  # Bernoulli negative log-likelihood summed over the batch
    log_ratio: Tensor | None = None  # sum over sites of log q - log p at the draw


@dataclass
class LossBreakdown:
    """Scalar views of one loss evaluation.

    total = likelihood_term + kl_scale_applied * kl_term + l1_term + l2_term,
    where kl_term already carries the minibatch scale.
    """

    total: float
    likelihood_term: float
    kl_term: float = 0.0
    l1_term: float = 0.0
    l2_term: float = 0.0
    kl_scale_applied: float = 1.0
    loss: Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {
            "total": self.total,
            "likelihood_term": self.likelihood_term,
            "kl_term": self.kl_term,
            "l1_term": self.l1_term,
            "l2_term": self.l2_term,
            "kl_scale_applied": self.kl_scale_applied,
        }


def bce_with_logits(logits, targets):
    """Mean over the batch of the summed per-class binary cross-entropy.

    Uses the softplus form, so the result is finite for any finite logits.
    """
    if not isinstance(targets, Tensor):
        targets = Tensor(np.asarray(targets), dtype=logits.data.dtype)
    if logits.ndim != 2 or logits.shape != targets.shape:
        raise DimensionError(
            f"bce_with_logits: logits {logits.shape} and targets {targets.shape} must be equal 2-d shapes"
        )
    t = targets.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ContractError("bce_with_logits: targets must be binary")
    per_element = logits.softplus() - targets * logits
    return per_element.sum(axis=1).mean()


def _sum_terms(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def _mean_terms(terms):
    return _sum_terms(terms) * (1.0 / len(terms))


def _nll_mean(samples):
    if not samples:
        raise ContractError("at least one forward sample is required")
    return _mean_terms([s.nll for s in samples])


def elbo_v1_loss(samples, minibatch_scale):
    """Negative ELBO with the KL estimated from sampled log-densities."""
    nll = _nll_mean(samples)
    ratios = [s.log_ratio for s in samples if s.log_ratio is not None]
    if ratios:
        kl_hat = _mean_terms(ratios) * minibatch_scale
        loss = kl_hat + nll
        kl_value = kl_hat.item()
    else:
        loss = nll
        kl_value = 0.0
    return LossBreakdown(
        total=loss.item(),
        likelihood_term=nll.item(),
        kl_term=kl_value,
        kl_scale_applied=1.0,
        loss=loss,
    )


def elbo_v2_loss(samples, kl_closed, minibatch_scale):
    """Negative ELBO with the analytic KL (the Rao-Blackwellized estimate)."""
    nll = _nll_mean(samples)
    if kl_closed is not None:
        kl = kl_closed * minibatch_scale
        loss = kl + nll
        kl_value = kl.item()
    else:
        loss = nll
        kl_value = 0.0
    return LossBreakdown(
        total=loss.item(),
        likelihood_term=nll.item(),
        kl_term=kl_value,
        kl_scale_applied=1.0,
        loss=loss,
    )


def kl_schedule(epoch, variant):
    """Annealed KL factor: lambda0 at epoch 0, reaching 1 at anneal_epochs."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    if variant.kl_scale_fixed:
        return variant.lambda0
    lam = variant.lambda0 + (1.0 - variant.lambda0) * (epoch / variant.anneal_epochs)
    return min(1.0, lam)


def lambda_kl_loss(samples, kl_closed, minibatch_scale, epoch, variant):
    """The annealed-KL variant; wraps the v2 (default) or v1 estimator."""
    if variant.kind != "lambda_kl":
        raise ContractError(f"lambda_kl_loss expects a lambda_kl variant, got {variant.kind!r}")
    lam = kl_schedule(epoch, variant)
    nll = _nll_mean(samples)
    if variant.base == "v1":
        ratios = [s.log_ratio for s in samples if s.log_ratio is not None]
        kl = _mean_terms(ratios) * minibatch_scale if ratios else None
    else:
        kl = kl_closed * minibatch_scale if kl_closed is not None else None
    if kl is not None:
        loss = kl * lam + nll
        kl_value = kl.item()
    else:
        loss = nll
        kl_value = 0.0
    return LossBreakdown(
        total=loss.item(),
        likelihood_term=nll.item(),
        kl_term=kl_value,
        kl_scale_applied=lam,
        loss=loss,
    )


def vi_norm_penalties(locs, lambda_norm):
    """L1 and L2 penalties over the given location tensors.

    Returns scalar graph tensors (lambda_norm * sum |loc|, lambda_norm *
    sum loc^2); with lambda_norm == 0 both are detached zero constants.
    """
    if lambda_norm < 0.0:
        raise ContractError(f"norm penalty weight must be >= 0, got {lambda_norm}")
    if lambda_norm == 0.0 or not locs:
        zero = Tensor(np.zeros(()))
        return zero, Tensor(np.zeros(()))
    l1 = _sum_terms([t.abs().sum() for t in locs]) * lambda_norm
    l2 = _sum_terms([(t * t).sum() for t in locs]) * lambda_norm
    return l1, l2


def add_penalty(breakdown, kind, l1, l2):
    """Fold the selected norm penalty into a loss breakdown."""
    if kind in (None, "none"):
        return breakdown
    if kind == "l1":
        loss = breakdown.loss + l1
        return LossBreakdown(
            total=loss.item(),
            likelihood_term=breakdown.likelihood_term,
            kl_term=breakdown.kl_term,
            l1_term=l1.item(),
            kl_scale_applied=breakdown.kl_scale_applied,
            loss=loss,
        )
    if kind == "l2":
        loss = breakdown.loss + l2
        return LossBreakdown(
            total=loss.item(),
            likelihood_term=breakdown.likelihood_term,
            kl_term=breakdown.kl_term,
            l2_term=l2.item(),
            kl_scale_applied=breakdown.kl_scale_applied,
            loss=loss,
        )
    raise ContractError(f"unknown norm penalty {kind!r}")
