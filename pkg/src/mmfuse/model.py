"""End-to-end architectures and the dual-objective training step.

The fusion module maps the two embeddings through one wide hidden layer per
modality (linear, batchnorm, tanh), concatenates the branch outputs, and
mixes them back with a learned sigmoid gate:

    h_t = tanh(bn(L_t(x_t)))        h_i = tanh(bn(L_i(x_i)))
    g   = sigmoid(L_g([h_t, h_i]))  z   = g * h_i + (1 - g) * h_t

In the probabilistic variant every fusion layer is Bayesian and trains
against a negative-ELBO objective; the classifier (dropout, maxout, linear)
always trains against binary cross-entropy. One backward pass serves both:
the fusion optimizer (clipped Adam) owns the fusion parameters, the
classifier optimizer (AdamW) owns the rest, and the likelihood term is the
path they share.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import objectives
from .data import IMAGE_DIM, N_CLASSES, TEXT_DIM, materialize
from .errors import ContractError, DimensionError, TrainingDiverged
from .layers import (
    EVAL,
    TRAIN,
    BatchNorm,
    BayesLinearLayer,
    LinearLayer,
    Maxout,
    dropout_forward,
    max_norm_apply_,
)
from .metrics import compute_report
from .objectives import ElboVariant, ForwardSample, LossBreakdown
from .optim import Adam, adamw, clipped_adam
from .rng import Rng
from .tensor import Tensor

VARIANTS = ("pm_mo", "m_mo", "gmu_baseline")
MODALITIES = ("both", "text_only", "image_only")
PENALTIES = ("none", "l1", "l2")


@dataclass
class ModelConfig:
    text_dim: int = TEXT_DIM
    image_dim: int = IMAGE_DIM
    hidden_width: int = 3000
    classifier_width: int = 512
    maxout_pieces: int = 2
    n_classes: int = N_CLASSES
    dropout: float = 0.9
    variant: str = "pm_mo"
    elbo: ElboVariant = field(default_factory=ElboVariant)
    norm_penalty: str = "l2"
    norm_lambda: float = 0.1
    use_batchnorm: bool = True
    use_maxnorm: bool = True
    maxnorm_c: float = 3.0
    prior_loc: float = 0.0
    prior_scale: float = 1.0
    init_loc: float = 0.1
    init_scale: float = 0.01
    per_example_sampling: bool = False
    modality: str = "both"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.modality not in MODALITIES:
            raise ContractError(f"unknown modality {self.modality!r}")
        if self.norm_penalty not in PENALTIES:
            raise ContractError(f"unknown norm penalty {self.norm_penalty!r}")
        for name in ("text_dim", "image_dim", "hidden_width", "classifier_width", "n_classes"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.maxout_pieces < 2:
            raise ContractError(f"maxout_pieces must be >= 2, got {self.maxout_pieces}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def variational(self):
        return self.variant == "pm_mo"


class FusionModule:
    """Module A: two embedding branches plus the mixing gate."""

    def __init__(self, cfg, rng, dtype=np.float32):
        h = cfg.hidden_width

        def mk(i, o):
            if cfg.variational:
                return BayesLinearLayer(
                    i, o, cfg.prior_loc, cfg.prior_scale, cfg.init_loc, cfg.init_scale, dtype
                )
            return LinearLayer(i, o, rng, dtype)

        self.text_layer = mk(cfg.text_dim, h)
        self.image_layer = mk(cfg.image_dim, h)
        self.gate_layer = mk(2 * h, h)
        self.bn_text = BatchNorm(h, dtype=dtype) if cfg.use_batchnorm else None
        self.bn_image = BatchNorm(h, dtype=dtype) if cfg.use_batchnorm else None
        self.cfg = cfg

    def _layer_forward(self, layer, x, rng, mode):
        if self.cfg.variational:
            y, kl = layer.forward(
                x,
                rng=rng,
                mode="sample" if mode == TRAIN else "mean",
                per_example=self.cfg.per_example_sampling and mode == TRAIN,
            )
            return y, kl, layer.last_log_ratio
        return layer.forward(x), None, None

    def forward(self, text, image, rng, mode):
        """Returns (z, kl_total, log_ratio_total); the last two are None for
        non-variational variants."""
        if text.shape[0] != image.shape[0]:
            raise DimensionError(
                f"batch extents disagree: text {text.shape} vs image {image.shape}"
            )
        h_t, kl_t, lr_t = self._layer_forward(self.text_layer, text, rng, mode)
        if self.bn_text is not None:
            h_t = self.bn_text.forward(h_t, mode)
        h_t = h_t.tanh()

        h_i, kl_i, lr_i = self._layer_forward(self.image_layer, image, rng, mode)
        if self.bn_image is not None:
            h_i = self.bn_image.forward(h_i, mode)
        h_i = h_i.tanh()

        v_cat = h_t.concat_last(h_i)
        pre_gate, kl_g, lr_g = self._layer_forward(self.gate_layer, v_cat, rng, mode)
        gate = pre_gate.sigmoid()
        z = gate * h_i + (1.0 - gate) * h_t

        if not self.cfg.variational:
            return z, None, None
        kl_total = kl_t + kl_i + kl_g
        ratios = [r for r in (lr_t, lr_i, lr_g) if r is not None]
        log_ratio = None
        if ratios:
            log_ratio = ratios[0]
            for r in ratios[1:]:
                log_ratio = log_ratio + r
        return z, kl_total, log_ratio

    def parameters(self):
        out = []
        for layer in (self.text_layer, self.image_layer, self.gate_layer):
            out.extend(layer.parameters())
        for bn in (self.bn_text, self.bn_image):
            if bn is not None:
                out.extend(bn.parameters())
        return out

    def named_parameters(self):
        out = {}
        out.update(self.text_layer.named_parameters("fusion.text"))
        out.update(self.image_layer.named_parameters("fusion.image"))
        out.update(self.gate_layer.named_parameters("fusion.gate"))
        if self.bn_text is not None:
            out.update(self.bn_text.named_parameters("fusion.bn_text"))
            out.update(self.bn_image.named_parameters("fusion.bn_image"))
        return out

    def penalty_locs(self):
        """Location tensors the L1/L2 penalty acts on."""
        if self.cfg.variational:
            return [
                layer.weight_posterior.loc
                for layer in (self.text_layer, self.image_layer, self.gate_layer)
            ] + [
                layer.bias_posterior.loc
                for layer in (self.text_layer, self.image_layer, self.gate_layer)
            ]
        return [
            t
            for layer in (self.text_layer, self.image_layer, self.gate_layer)
            for t in (layer.weight, layer.bias)
        ]

    def maxnorm_targets(self):
        layers = (self.text_layer, self.image_layer, self.gate_layer)
        if self.cfg.variational:
            return [layer.weight_posterior.loc for layer in layers]
        return [layer.weight for layer in layers]


class ClassifierModule:
    """Module C: dropout, maxout hidden layer, linear output logits."""

    def __init__(self, cfg, rng, dtype=np.float32):
        self.dropout = cfg.dropout
        self.maxout = Maxout(cfg.hidden_width, cfg.classifier_width, cfg.maxout_pieces, rng, dtype)
        self.output = LinearLayer(cfg.classifier_width, cfg.n_classes, rng, dtype)

    def forward(self, z, rng, mode):
        z = dropout_forward(self.dropout, z, rng=rng, mode=mode)
        return self.output.forward(self.maxout.forward(z))

    def parameters(self):
        return self.maxout.parameters() + self.output.parameters()

    def named_parameters(self):
        out = self.maxout.named_parameters("classifier.maxout")
        out.update(self.output.named_parameters("classifier.output"))
        return out

    def maxnorm_targets(self):
        return [p.weight for p in self.maxout.pieces] + [self.output.weight]


class Model:
    """Fusion plus classifier with seeded weight, sampling, and dropout streams."""

    def __init__(self, config, seed, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        root = Rng(seed)
        init_rng = root.substream("weights-init")
        self.fusion = FusionModule(config, init_rng, dtype)
        self.classifier = ClassifierModule(config, init_rng, dtype)
        self.sample_rng = root.substream("sampling")
        self.dropout_rng = root.substream("dropout")
        self.dtype = dtype

    def _masked_inputs(self, text, image):
        if self.config.modality == "text_only":
            image = Tensor(np.zeros_like(image.data))
        elif self.config.modality == "image_only":
            text = Tensor(np.zeros_like(text.data))
        return text, image

    def forward(self, text, image, mode):
        text, image = self._masked_inputs(text, image)
        z, kl, log_ratio = self.fusion.forward(text, image, self.sample_rng, mode)
        logits = self.classifier.forward(z, self.dropout_rng, mode)
        return logits, kl, log_ratio

    def fusion_parameters(self):
        return self.fusion.parameters()

    def classifier_parameters(self):
        return self.classifier.parameters()

    def parameters(self):
        return self.fusion_parameters() + self.classifier_parameters()

    def named_parameters(self):
        out = self.fusion.named_parameters()
        out.update(self.classifier.named_parameters())
        return out

    def apply_max_norm(self):
        if not self.config.use_maxnorm:
            return
        for w in self.fusion.maxnorm_targets() + self.classifier.maxnorm_targets():
            max_norm_apply_(w, self.config.maxnorm_c)


def build_model(config, seed, dtype=np.float32):
    return Model(config, seed, dtype)


def build_gmu_baseline(config=None, seed=0, dtype=np.float32):
    """The single-objective gated baseline: no VI, one BCE loss end to end."""
    if config is None:
        config = ModelConfig(variant="gmu_baseline", dropout=0.7, hidden_width=512)
    if config.variant != "gmu_baseline":
        raise ContractError("build_gmu_baseline requires variant='gmu_baseline'")
    return Model(config, seed, dtype)


def make_optimizers(model, lr, clip_norm=10.0, weight_decay=0.01):
    """Optimizer pair per module; the baseline trains with a single Adam."""
    if model.config.variant == "gmu_baseline":
        opt = Adam(model.parameters(), lr)
        return {"all": opt}
    return {
        "fusion": clipped_adam(model.fusion_parameters(), lr, clip_norm=clip_norm),
        "classifier": adamw(model.classifier_parameters(), lr, weight_decay=weight_decay),
    }


def train_step(model, batch, optimizers, epoch, train_size):
    """One dual-objective update; returns the loss breakdown.

    A single backward pass populates every gradient: the ELBO's likelihood
    term is the summed batch NLL, which is exactly the path the classifier
    optimizer consumes.
    """
    text, image, targets = batch
    cfg = model.config
    batch_size = text.shape[0]
    for opt in optimizers.values():
        opt.zero_grad()

    if cfg.variant == "gmu_baseline":
        logits, _, _ = model.forward(text, image, TRAIN)
        loss = objectives.bce_with_logits(logits, targets)
        breakdown = LossBreakdown(total=loss.item(), likelihood_term=loss.item(), loss=loss)
    else:
        samples = []
        kl_closed = None
        for _ in range(cfg.elbo.mc_samples):
            logits, kl, log_ratio = model.forward(text, image, TRAIN)
            nll = objectives.bce_with_logits(logits, targets) * float(batch_size)
            samples.append(ForwardSample(nll=nll, log_ratio=log_ratio))
            kl_closed = kl
        scale = batch_size / float(train_size)
        if cfg.variant == "m_mo" or not cfg.variational:
            breakdown = objectives.elbo_v2_loss(samples, None, scale)
        elif cfg.elbo.kind == "v1":
            breakdown = objectives.elbo_v1_loss(samples, scale)
        elif cfg.elbo.kind == "v2":
            breakdown = objectives.elbo_v2_loss(samples, kl_closed, scale)
        else:
            breakdown = objectives.lambda_kl_loss(samples, kl_closed, scale, epoch, cfg.elbo)
        l1, l2 = objectives.vi_norm_penalties(model.fusion.penalty_locs(), cfg.norm_lambda)
        breakdown = objectives.add_penalty(breakdown, cfg.norm_penalty, l1, l2)

    for name, value in breakdown.as_dict().items():
        if not math.isfinite(value):
            raise TrainingDiverged(name, epoch)

    breakdown.loss.backward()
    for opt in optimizers.values():
        opt.step()
    model.apply_max_norm()
    return breakdown


def predict(model, text, image, labels=None, threshold=0.5, batch_size=512):
    """Eval-mode hard predictions over arrays; deterministic."""
    n = text.shape[0]
    outputs = []
    for start in range(0, n, batch_size):
        rows = slice(start, min(start + batch_size, n))
        logits, _, _ = model.forward(Tensor(text[rows]), Tensor(image[rows]), EVAL)
        probs = 1.0 / (1.0 + np.exp(-logits.data.astype(np.float64)))
        # strictly above threshold: an uninformative 0 logit stays negative
        outputs.append((probs > threshold).astype(np.uint8))
    return np.concatenate(outputs, axis=0)


def evaluate(model, records, indices=None, threshold=0.5, batch_size=512):
    """Mean-weight, dropout-free evaluation returning the metrics report."""
    if indices is not None and len(indices) == 0:
        raise ContractError("evaluate requires a non-empty index set")
    if indices is None and len(records) == 0:
        raise ContractError("evaluate requires a non-empty dataset")
    text, image, labels = materialize(records, indices)
    y_hat = predict(model, text, image, threshold=threshold, batch_size=batch_size)
    return compute_report(y_hat, labels.astype(np.uint8))
