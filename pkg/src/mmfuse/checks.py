"""Gradient-check suite: every registered op plus the composed forward.

Each check runs in double precision against central differences with the
default step, returning the max relative error per op. The composed checks
rebuild the full fusion-classifier loss as a deterministic function of one
leaf at a time (rng streams are re-seeded inside the closure), so sampled
weights, dropout masks, and the annealed KL path are all exercised.
"""

import numpy as np

from . import objectives
from .laplace import laplace_kl_t, laplace_log_prob_t, scale_t
from .layers import TRAIN, BatchNorm, LinearLayer, Maxout, dropout_forward
from .model import Model, ModelConfig
from .objectives import ElboVariant, ForwardSample
from .rng import Rng
from .tensor import Tensor, grad_check, stack_rows


def _const(rng, shape):
    return Tensor(rng.normal(shape), dtype=np.float64)


def _weighted(out, w):
    return (out * w).sum()


def _op_checks(seed):
    rng = Rng(seed).substream("gradcheck")
    x23 = rng.normal((2, 3))
    x3 = rng.normal(3)
    c23 = _const(rng, (2, 3))
    c3 = _const(rng, 3)
    w23 = _const(rng, (2, 3))
    w3 = _const(rng, 3)
    c34 = _const(rng, (3, 4))
    w24 = _const(rng, (2, 4))
    w26 = _const(rng, (2, 6))
    w32 = _const(rng, (3, 2))
    w13 = _const(rng, (1, 3))
    w43 = _const(rng, (4, 3))
    w2 = _const(rng, 2)

    checks = {
        "matmul_left": (lambda x: _weighted(x @ c34, w24), x23),
        "matmul_right": (lambda x: _weighted(Tensor(x23, dtype=np.float64) @ x, w24), rng.normal((3, 4))),
        "add": (lambda x: _weighted(x + c23, w23), x23),
        "add_row_broadcast": (lambda x: _weighted(x + c3, w23), x23),
        "add_vector_side": (lambda x: _weighted(x + c23, w23), x3),
        "add_scalar": (lambda x: _weighted(x + 1.5, w23), x23),
        "sub": (lambda x: _weighted(x - c23, w23), x23),
        "sub_row_broadcast": (lambda x: _weighted(x - c3, w23), x23),
        "mul": (lambda x: _weighted(x * c23, w23), x23),
        "mul_row_broadcast": (lambda x: _weighted(x * c3, w23), x23),
        "mul_scalar": (lambda x: _weighted(x * -2.5, w23), x23),
        "neg": (lambda x: _weighted(-x, w23), x23),
        "tanh": (lambda x: _weighted(x.tanh(), w23), x23),
        "sigmoid": (lambda x: _weighted(x.sigmoid(), w23), x23),
        "softplus": (lambda x: _weighted(x.softplus(), w23), x23),
        "exp": (lambda x: _weighted(x.exp(), w23), x23),
        "log": (lambda x: _weighted(x.log(), w23), np.abs(x23) + 0.5),
        "abs": (lambda x: _weighted(x.abs(), w23), x23 + 0.1),
        "max2": (lambda x: _weighted(x.max2(c23), w23), x23),
        "concat_last": (lambda x: _weighted(x.concat_last(c23), w26), x23),
        "transpose": (lambda x: _weighted(x.T, w32), x23),
        "row": (lambda x: _weighted(x.row(1), w13), x23),
        "stack_rows": (
            lambda x: _weighted(stack_rows([x, Tensor(x23, dtype=np.float64)]), w43),
            x23,
        ),
        "sum": (lambda x: x.sum(), x23),
        "sum_axis0": (lambda x: _weighted(x.sum(axis=0), w3), x23),
        "sum_axis1": (lambda x: _weighted(x.sum(axis=1), w2), x23),
        "mean": (lambda x: x.mean(), x23),
        "mean_axis0": (lambda x: _weighted(x.mean(axis=0), w3), x23),
    }
    return checks


def _layer_checks(seed):
    rng = Rng(seed).substream("gradcheck-layers")
    x43 = rng.normal((4, 3))
    targets = Tensor((rng.random((4, 2)) < 0.5).astype(np.float64), dtype=np.float64)
    logits0 = rng.normal((4, 2))

    def bce(x):
        return objectives.bce_with_logits(x, targets)

    lin_out_w = _const(rng, (4, 2))

    def linear(x):
        layer = LinearLayer(3, 2, dtype=np.float64)
        layer.weight = x
        return _weighted(layer.forward(Tensor(x43, dtype=np.float64)), lin_out_w)

    lin_w0 = rng.normal((2, 3))
    bn_w = Tensor(rng.normal((4, 3)), dtype=np.float64)

    def batchnorm(x):
        bn = BatchNorm(3, dtype=np.float64)
        bn.gamma = Tensor(np.array([1.1, 0.9, 1.3]), dtype=np.float64)
        bn.beta = Tensor(np.array([0.1, -0.2, 0.05]), dtype=np.float64)
        return _weighted(bn.forward(x, TRAIN), bn_w)

    mo_rng = Rng(seed).substream("gradcheck-maxout")
    maxout_layer = Maxout(3, 2, 2, mo_rng, dtype=np.float64)
    mo_w = Tensor(mo_rng.normal((4, 2)), dtype=np.float64)

    def maxout(x):
        return _weighted(maxout_layer.forward(x), mo_w)

    drop_w = Tensor(rng.normal((4, 3)), dtype=np.float64)

    def dropout(x):
        return _weighted(dropout_forward(0.25, x, rng=Rng(77).substream("dropout"), mode=TRAIN), drop_w)

    def kl_loc(x):
        return laplace_kl_t(x, scale_t(Tensor(rng0_rho, dtype=np.float64)), 0.0, 1.0)

    def kl_rho(x):
        return laplace_kl_t(Tensor(rng0_loc, dtype=np.float64), scale_t(x), 0.0, 1.0)

    rng0_loc = rng.normal((2, 3)) * 0.5
    rng0_rho = rng.normal((2, 3)) * 0.3

    theta0 = Tensor(rng.normal((2, 3)), dtype=np.float64)

    def log_prob_loc(x):
        return laplace_log_prob_t(x, scale_t(Tensor(rng0_rho, dtype=np.float64)), theta0)

    return {
        "bce_with_logits": (bce, logits0),
        "linear_weight": (linear, lin_w0),
        "batchnorm_train": (batchnorm, rng.normal((4, 3))),
        "maxout": (maxout, x43),
        "dropout": (dropout, x43),
        "laplace_kl_loc": (kl_loc, rng0_loc),
        "laplace_kl_rho": (kl_rho, rng0_rho),
        "laplace_log_prob_loc": (log_prob_loc, rng0_loc),
    }


def run_op_gradchecks(seed=0, h=1e-5):
    """Max relative error per registered op, double precision."""
    results = {}
    for name, (f, x0) in {**_op_checks(seed), **_layer_checks(seed)}.items():
        results[name] = grad_check(f, Tensor(np.asarray(x0), dtype=np.float64), h=h)
    return results


def _tiny_model(elbo_kind):
    cfg = ModelConfig(
        text_dim=3,
        image_dim=4,
        hidden_width=3,
        classifier_width=3,
        maxout_pieces=2,
        n_classes=2,
        dropout=0.25,
        variant="pm_mo",
        elbo=ElboVariant(kind=elbo_kind, lambda0=0.2, anneal_epochs=5)
        if elbo_kind == "lambda_kl"
        else ElboVariant(kind=elbo_kind),
        norm_penalty="l2",
        norm_lambda=0.1,
        init_scale=0.05,
    )
    return Model(cfg, seed=41, dtype=np.float64)


def _composed_loss(model, text, image, targets, train_size=12, epoch=1):
    model.sample_rng = Rng(2024).substream("sampling")
    model.dropout_rng = Rng(2025).substream("dropout")
    logits, kl, log_ratio = model.forward(text, image, TRAIN)
    nll = objectives.bce_with_logits(logits, targets) * float(text.shape[0])
    sample = ForwardSample(nll=nll, log_ratio=log_ratio)
    scale = text.shape[0] / train_size
    cfg = model.config
    if cfg.elbo.kind == "v1":
        breakdown = objectives.elbo_v1_loss([sample], scale)
    elif cfg.elbo.kind == "v2":
        breakdown = objectives.elbo_v2_loss([sample], kl, scale)
    else:
        breakdown = objectives.lambda_kl_loss([sample], kl, scale, epoch, cfg.elbo)
    l1, l2 = objectives.vi_norm_penalties(model.fusion.penalty_locs(), cfg.norm_lambda)
    return objectives.add_penalty(breakdown, cfg.norm_penalty, l1, l2).loss


def run_composed_gradchecks(seed=0, h=1e-5):
    """Full-loss gradient checks through the fusion and classifier stack."""
    rng = Rng(seed).substream("gradcheck-composed")
    text0 = rng.normal((3, 3))
    image0 = rng.normal((3, 4))
    targets = Tensor((rng.random((3, 2)) < 0.5).astype(np.float64), dtype=np.float64)

    results = {}
    for kind in ("v2", "lambda_kl", "v1"):
        model = _tiny_model(kind)
        image_t = Tensor(image0, dtype=np.float64)
        text_t = Tensor(text0, dtype=np.float64)

        def wrt_text(x):
            return _composed_loss(model, x, image_t, targets)

        results[f"composed_{kind}_text_input"] = grad_check(
            wrt_text, Tensor(text0, dtype=np.float64), h=h
        )

        def wrt_image(x):
            return _composed_loss(model, text_t, x, targets)

        results[f"composed_{kind}_image_input"] = grad_check(
            wrt_image, Tensor(image0, dtype=np.float64), h=h
        )

        param_targets = {
            "gate_loc": model.fusion.gate_layer.weight_posterior,
            "text_rho": model.fusion.text_layer.weight_posterior,
        }

        def wrt_loc(x, vp=param_targets["gate_loc"]):
            old = vp.loc
            vp.loc = x
            try:
                return _composed_loss(model, text_t, image_t, targets)
            finally:
                vp.loc = old

        results[f"composed_{kind}_gate_loc"] = grad_check(
            wrt_loc, Tensor(param_targets["gate_loc"].loc.data.copy(), dtype=np.float64), h=h
        )

        def wrt_rho(x, vp=param_targets["text_rho"]):
            old = vp.rho
            vp.rho = x
            try:
                return _composed_loss(model, text_t, image_t, targets)
            finally:
                vp.rho = old

        results[f"composed_{kind}_text_rho"] = grad_check(
            wrt_rho, Tensor(param_targets["text_rho"].rho.data.copy(), dtype=np.float64), h=h
        )

        piece = model.classifier.maxout.pieces[0]

        def wrt_classifier(x, piece=piece):
            old = piece.weight
            piece.weight = x
            try:
                return _composed_loss(model, text_t, image_t, targets)
            finally:
                piece.weight = old

        results[f"composed_{kind}_classifier_weight"] = grad_check(
            wrt_classifier, Tensor(piece.weight.data.copy(), dtype=np.float64), h=h
        )
    return results


def run_all_gradchecks(seed=0, h=1e-5):
    results = run_op_gradchecks(seed, h)
    results.update(run_composed_gradchecks(seed, h))
    return results
