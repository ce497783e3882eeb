"""Network building blocks.

Deterministic and Bayesian linear layers, batch normalization, inverted
dropout, maxout, and the max-norm row projection. Bayesian layers keep a
learnable Laplace posterior (location plus unconstrained scale) per weight
and bias element against a fixed shared prior.
"""

import math

import numpy as np

from . import laplace
from .errors import ContractError, DimensionError
from .rng import Rng
from .tensor import Tensor, stack_rows

TRAIN = "train"
EVAL = "eval"

# projection bound when max-norm is enabled and no other value is configured
DEFAULT_MAX_NORM = 3.0


class LinearLayer:
    """y = x @ weight.T + bias with weight shaped [out, in]."""

    def __init__(self, in_width, out_width, rng=None, dtype=np.float32):
        if rng is None:
            w = np.zeros((out_width, in_width), dtype=dtype)
        else:
            limit = math.sqrt(6.0 / (in_width + out_width))
            w = rng.uniform(-limit, limit, (out_width, in_width)).astype(dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_width, dtype=dtype), requires_grad=True)

    @property
    def in_width(self):
        return self.weight.shape[1]

    @property
    def out_width(self):
        return self.weight.shape[0]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise DimensionError(
                f"linear expects [batch, {self.in_width}] input, got {x.shape}"
            )
        return x @ self.weight.T + self.bias

    def parameters(self):
        return [self.weight, self.bias]

    def named_parameters(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def linear_forward(layer, x):
    return layer.forward(x)


class VariationalParameter:
    """Laplace posterior over one parameter tensor: location and rho.

    The positive scale is softplus(rho); both pieces are learnable.
    """

    def __init__(self, shape, init_loc=0.1, init_scale=0.01, dtype=np.float32):
        rho0 = laplace.rho_for_scale(init_scale)
        self.loc = Tensor(np.full(shape, init_loc, dtype=dtype), requires_grad=True)
        self.rho = Tensor(np.full(shape, rho0, dtype=dtype), requires_grad=True)

    def scale(self):
        return laplace.scale_t(self.rho)

    def scale_values(self):
        return np.log1p(np.exp(-np.abs(self.rho.data))) + np.maximum(self.rho.data, 0.0)


class BayesLinearLayer:
    """Linear layer whose weights and biases are Laplace random variables."""

    def __init__(
        self,
        in_width,
        out_width,
        prior_loc=0.0,
        prior_scale=1.0,
        init_loc=0.1,
        init_scale=0.01,
        dtype=np.float32,
    ):
        self.weight_posterior = VariationalParameter(
            (out_width, in_width), init_loc, init_scale, dtype
        )
        self.bias_posterior = VariationalParameter((out_width,), init_loc, init_scale, dtype)
        self.prior_loc = float(prior_loc)
        self.prior_scale = float(prior_scale)
        # log q(theta_s) - log p(theta_s) of the draws used by the last
        # sample-mode forward; None after a mean-mode pass
        self.last_log_ratio = None

    @property
    def in_width(self):
        return self.weight_posterior.loc.shape[1]

    @property
    def out_width(self):
        return self.weight_posterior.loc.shape[0]

    def kl(self):
        """Closed-form KL(posterior || prior) summed over all elements."""
        wp, bp = self.weight_posterior, self.bias_posterior
        return laplace.laplace_kl_t(
            wp.loc, wp.scale(), self.prior_loc, self.prior_scale
        ) + laplace.laplace_kl_t(bp.loc, bp.scale(), self.prior_loc, self.prior_scale)

    def _log_ratio(self, theta, loc, scale):
        return laplace.laplace_log_prob_t(loc, scale, theta) - laplace.laplace_log_prob_const_t(
            self.prior_loc, self.prior_scale, theta
        )

    def forward(self, x, rng=None, mode="sample", per_example=False):
        """Returns (y, kl_contribution).

        ``sample`` draws one weight set for the whole batch (or one per
        example when ``per_example``); ``mean`` uses the posterior
        locations and is deterministic.
        """
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise DimensionError(
                f"bayes linear expects [batch, {self.in_width}] input, got {x.shape}"
            )
        wp, bp = self.weight_posterior, self.bias_posterior
        if mode == "mean":
            self.last_log_ratio = None
            return x @ wp.loc.T + bp.loc, self.kl()
        if not isinstance(rng, Rng):
            raise ContractError("sample-mode forward requires an rng stream")

        w_scale = wp.scale()
        b_scale = bp.scale()
        if not per_example:
            w = self._draw(wp.loc, w_scale, rng)
            b = self._draw(bp.loc, b_scale, rng)
            y = x @ w.T + b
            self.last_log_ratio = self._log_ratio(w, wp.loc, w_scale) + self._log_ratio(
                b, bp.loc, b_scale
            )
            return y, self.kl()

        # one independent weight draw per batch row; desk-scale only
        rows = []
        ratios = []
        for i in range(x.shape[0]):
            w = self._draw(wp.loc, w_scale, rng)
            b = self._draw(bp.loc, b_scale, rng)
            rows.append(x.row(i) @ w.T + b)
            ratios.append(
                self._log_ratio(w, wp.loc, w_scale) + self._log_ratio(b, bp.loc, b_scale)
            )
        total = ratios[0]
        for r in ratios[1:]:
            total = total + r
        self.last_log_ratio = total * (1.0 / len(ratios))
        return stack_rows(rows), self.kl()

    @staticmethod
    def _draw(loc, scale, rng):
        u = rng.open_unit(loc.shape)
        offset = laplace.sample_offset(u).astype(loc.data.dtype)
        return loc + scale * Tensor(offset)

    def parameters(self):
        wp, bp = self.weight_posterior, self.bias_posterior
        return [wp.loc, wp.rho, bp.loc, bp.rho]

    def named_parameters(self, prefix):
        wp, bp = self.weight_posterior, self.bias_posterior
        return {
            f"{prefix}.weight.loc": wp.loc,
            f"{prefix}.weight.rho": wp.rho,
            f"{prefix}.bias.loc": bp.loc,
            f"{prefix}.bias.rho": bp.rho,
        }


def bayes_linear_forward(layer, x, rng=None, mode="sample"):
    return layer.forward(x, rng=rng, mode=mode)


class BatchNorm:
    """Batch normalization with learnable gamma/beta and running statistics."""

    def __init__(self, width, momentum=0.1, epsilon=1e-5, dtype=np.float32):
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"momentum must lie in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ContractError(f"epsilon must be positive, got {epsilon}")
        self.gamma = Tensor(np.ones(width, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(width, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(width, dtype=dtype)
        self.running_var = np.ones(width, dtype=dtype)
        self.momentum = momentum
        self.epsilon = epsilon

    def forward(self, x, mode):
        if x.ndim != 2 or x.shape[1] != self.gamma.shape[0]:
            raise DimensionError(
                f"batchnorm expects [batch, {self.gamma.shape[0]}] input, got {x.shape}"
            )
        if mode == TRAIN:
            if x.shape[0] < 2:
                raise ContractError("train-mode batchnorm needs a batch of at least 2")
            mu = x.mean(axis=0)
            centered = x - mu
            var = (centered * centered).mean(axis=0)
            inv_std = ((var + self.epsilon).log() * -0.5).exp()
            normalized = centered * inv_std
            m = self.momentum
            self.running_mean = ((1.0 - m) * self.running_mean + m * mu.data).astype(
                self.running_mean.dtype
            )
            self.running_var = ((1.0 - m) * self.running_var + m * var.data).astype(
                self.running_var.dtype
            )
        else:
            inv = 1.0 / np.sqrt(self.running_var.astype(np.float64) + self.epsilon)
            normalized = (x - Tensor(self.running_mean)) * Tensor(
                inv.astype(self.gamma.data.dtype)
            )
        return normalized * self.gamma + self.beta

    def parameters(self):
        return [self.gamma, self.beta]

    def named_parameters(self, prefix):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


def batchnorm_forward(state, x, mode=TRAIN):
    return state.forward(x, mode)


def dropout_forward(p_drop, x, rng=None, mode=TRAIN):
    """Inverted dropout: scales survivors by 1/(1-p) so E[out] = in."""
    if not 0.0 <= p_drop < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {p_drop}")
    if mode != TRAIN or p_drop == 0.0:
        return x
    if not isinstance(rng, Rng):
        raise ContractError("train-mode dropout requires an rng stream")
    keep = rng.keep_mask(x.shape, p_drop)
    factor = keep.astype(x.data.dtype) / np.asarray(1.0 - p_drop, dtype=x.data.dtype)
    return x * Tensor(factor)


class Maxout:
    """Maximum over k affine pieces; ties route gradient to the lowest index."""

    def __init__(self, in_width, out_width, k, rng, dtype=np.float32):
        if k < 2:
            raise ContractError(f"maxout needs at least 2 pieces, got {k}")
        self.pieces = [LinearLayer(in_width, out_width, rng, dtype) for _ in range(k)]

    def forward(self, x):
        return maxout_forward(self.pieces, x)

    def parameters(self):
        return [p for piece in self.pieces for p in piece.parameters()]

    def named_parameters(self, prefix):
        out = {}
        for i, piece in enumerate(self.pieces):
            out.update(piece.named_parameters(f"{prefix}.piece{i}"))
        return out


def maxout_forward(pieces, x):
    if len(pieces) < 2:
        raise ContractError(f"maxout needs at least 2 pieces, got {len(pieces)}")
    widths = {(p.in_width, p.out_width) for p in pieces}
    if len(widths) != 1:
        raise DimensionError(f"maxout pieces disagree on widths: {sorted(widths)}")
    out = pieces[0].forward(x)
    for piece in pieces[1:]:
        out = out.max2(piece.forward(x))
    return out


def max_norm_project(weight, c):
    """Rescale any row with Euclidean norm above ``c`` back onto the bound."""
    if not c > 0.0:
        raise ContractError(f"max-norm bound must be positive, got {c}")
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    if w.ndim != 2:
        raise DimensionError(f"max-norm projection expects a 2-d weight, got {w.shape}")
    norms = np.sqrt((w.astype(np.float64) ** 2).sum(axis=1, keepdims=True))
    factor = np.where(norms > c, c / np.maximum(norms, 1e-30), 1.0).astype(w.dtype)
    projected = w * factor
    return Tensor(projected) if isinstance(weight, Tensor) else projected


def max_norm_apply_(param, c):
    """In-place row projection on a parameter tensor's data."""
    param.data[...] = max_norm_project(param.data, c)
