"""Adam-family optimizers with the regularising variants the trainer needs.

One instance owns one disjoint parameter set. ``clip_norm`` rescales each
parameter's gradient independently so its Euclidean norm stays within the
bound; ``weight_decay`` with ``decoupled=True`` shrinks parameters by a
factor (1 - lr * wd) after the Adam update (the AdamW rule), otherwise the
decay term joins the gradient before the moment updates.
"""

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor


def clip_gradient(g, clip_norm):
    """Rescale ``g`` so its Euclidean norm is at most ``clip_norm``."""
    if not clip_norm > 0.0:
        raise ContractError(f"clip_norm must be positive, got {clip_norm}")
    arr = g.data if isinstance(g, Tensor) else np.asarray(g)
    norm = float(np.sqrt((arr.astype(np.float64) ** 2).sum()))
    if norm <= clip_norm:
        return g
    scaled = arr * np.asarray(clip_norm / norm, dtype=arr.dtype)
    return Tensor(scaled) if isinstance(g, Tensor) else scaled


class Adam:
    """Adam with bias correction plus optional clipping and weight decay."""

    def __init__(
        self,
        params,
        lr,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        clip_norm=None,
        weight_decay=None,
        decoupled=True,
    ):
        if not lr > 0.0:
            raise ContractError(f"lr must be positive, got {lr}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ContractError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        wd = self.weight_decay
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} does not match parameter shape {p.data.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise ContractError("non-finite gradient passed to Adam")
            if self.clip_norm is not None:
                g = clip_gradient(g, self.clip_norm)
            if wd and not self.decoupled:
                g = g + wd * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)).astype(p.data.dtype)
            if wd and self.decoupled:
                p.data *= np.asarray(1.0 - self.lr * wd, dtype=p.data.dtype)


def clipped_adam(params, lr, clip_norm=10.0, **kwargs):
    """The fusion-module optimizer: per-parameter gradient clipping."""
    return Adam(params, lr, clip_norm=clip_norm, **kwargs)


def adamw(params, lr, weight_decay=0.01, **kwargs):
    """The classifier optimizer: decoupled weight decay."""
    return Adam(params, lr, weight_decay=weight_decay, decoupled=True, **kwargs)
