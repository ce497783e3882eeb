"""Laplace distribution: reparameterized sampling, log-density, closed-form KL.

Scalar helpers operate on plain floats; the ``*_t`` variants build the same
expressions from tensor ops so gradients flow to learnable location and
scale parameters. Scales are kept positive through softplus of an
unconstrained parameter; ``rho_for_scale`` inverts that transform for
initialisation.

At equal locations the |mu_q - mu_p| term has a kink; its derivative is
taken as 0 there (the tensor ``abs`` subgradient convention).
"""

import math

import numpy as np

from .errors import DomainError
from .tensor import Tensor

LN2 = math.log(2.0)


def _check_scale(scale, who):
    if not scale > 0.0:
        raise DomainError(f"{who}: scale must be strictly positive, got {scale}")


def rho_for_scale(scale):
    """Unconstrained parameter whose softplus equals ``scale``."""
    _check_scale(scale, "rho_for_scale")
    return math.log(math.expm1(scale))


def laplace_sample(loc, scale, u):
    """Inverse-CDF draw x = loc - scale * sign(u) * ln(1 - 2|u|).

    ``u`` must lie strictly inside (-1/2, 1/2); the result is differentiable
    in (loc, scale) for fixed u.
    """
    _check_scale(scale, "laplace_sample")
    u = np.asarray(u)
    if np.any(np.abs(u) >= 0.5):
        raise DomainError("laplace_sample: u must lie strictly inside (-1/2, 1/2)")
    out = loc - scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(out) if out.ndim == 0 else out


def sample_offset(u):
    """The scale-free part of a draw: sample = loc + scale * offset."""
    u = np.asarray(u)
    if np.any(np.abs(u) >= 0.5):
        raise DomainError("sample_offset: u must lie strictly inside (-1/2, 1/2)")
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_log_prob(loc, scale, x):
    """log density -ln(2b) - |x - mu| / b."""
    _check_scale(scale, "laplace_log_prob")
    out = -np.log(2.0 * scale) - np.abs(np.asarray(x, dtype=np.float64) - loc) / scale
    return float(out) if out.ndim == 0 else out


def laplace_cdf(loc, scale, x):
    _check_scale(scale, "laplace_cdf")
    z = (np.asarray(x, dtype=np.float64) - loc) / scale
    return np.where(z < 0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-z))


def laplace_kl(loc_q, scale_q, loc_p, scale_p):
    """Closed-form KL(q || p) between two Laplace distributions."""
    _check_scale(scale_q, "laplace_kl (q)")
    _check_scale(scale_p, "laplace_kl (p)")
    delta = abs(loc_q - loc_p)
    return (
        math.log(scale_p / scale_q)
        + delta / scale_p
        + (scale_q / scale_p) * math.exp(-delta / scale_q)
        - 1.0
    )


# ---------------------------------------------------------------- tensor forms


def scale_t(rho):
    """Positive scale tensor from the unconstrained parameter."""
    return rho.softplus()


def laplace_kl_t(loc, scale, prior_loc, prior_scale):
    """Elementwise KL(q elem || fixed prior) summed over all elements.

    ``loc`` and ``scale`` are tensors; the prior is a fixed scalar pair.
    """
    _check_scale(prior_scale, "laplace_kl_t (prior)")
    delta = (loc - prior_loc).abs()
    inv_scale = (-scale.log()).exp()
    term = (
        scale.log() * -1.0
        + math.log(prior_scale)
        + delta * (1.0 / prior_scale)
        + scale * (1.0 / prior_scale) * (-(delta * inv_scale)).exp()
        - 1.0
    )
    return term.sum()


def laplace_log_prob_t(loc, scale, x):
    """Sum of elementwise log q(x) with tensor parameters (for MC estimates)."""
    inv_scale = (-scale.log()).exp()
    per_elem = -(scale.log() + LN2) - (x - loc).abs() * inv_scale
    return per_elem.sum()


def laplace_log_prob_const_t(prior_loc, prior_scale, x):
    """Sum of elementwise log p(x) under a fixed scalar Laplace prior."""
    _check_scale(prior_scale, "laplace_log_prob_const_t")
    const = math.log(2.0 * prior_scale)
    return ((x - prior_loc).abs() * (-1.0 / prior_scale) - const).sum()


def sample_t(loc, rho, u):
    """Pathwise tensor draw: loc + softplus(rho) * offset(u).

    ``u`` is a fixed array of open-interval uniforms; gradients flow to
    ``loc`` and ``rho`` only.
    """
    offset = sample_offset(u).astype(loc.data.dtype)
    return loc + scale_t(rho) * Tensor(offset)
