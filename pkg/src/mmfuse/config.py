"""Experiment configuration: flat key = value files, presets, CLI overrides.

Unknown keys are rejected and every value is range-checked at parse time.
Presets bake in the benchmark hyperparameters; the ablation grid maps row
names onto (variant, estimator, penalty) triples sharing all other settings.
"""

import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .model import ModelConfig
from .objectives import ElboVariant
from .training import TrainConfig

OUT_DIR_ENV = "MMFUSE_OUT"


@dataclass
class ExperimentConfig:
    variant: str = "pm_mo"
    elbo: str = "lambda_kl"
    mc_samples: int = 1
    lambda0: float = 0.2
    anneal_epochs: int | None = None  # None: anneal across all epochs
    kl_scale_fixed: bool = False
    lambda_kl_base: str = "v2"
    norm_penalty: str = "l2"
    norm_lambda: float = 0.1
    hidden_width: int = 3000
    classifier_width: int = 512
    maxout_pieces: int = 2
    dropout: float = 0.9
    use_batchnorm: bool = True
    use_maxnorm: bool = True
    maxnorm_c: float = 3.0
    per_example_sampling: bool = False
    modality: str = "both"
    prior_loc: float = 0.0
    prior_scale: float = 1.0
    init_loc: float = 0.1
    init_scale: float = 0.01
    lr: float = 0.005
    clip_norm: float = 10.0
    weight_decay: float = 0.01
    epochs: int = 20
    batch_size: int = 512
    patience: int = 3
    threshold: float = 0.5
    seed: int = 0
    cycles: int = 5
    train_frac: float = 0.60
    val_frac: float = 0.10
    data: str = ""
    out: str = field(default_factory=lambda: os.environ.get(OUT_DIR_ENV, "runs"))

    def model_config(self):
        return ModelConfig(
            hidden_width=self.hidden_width,
            classifier_width=self.classifier_width,
            maxout_pieces=self.maxout_pieces,
            dropout=self.dropout,
            variant=self.variant,
            elbo=ElboVariant(
                kind=self.elbo,
                mc_samples=self.mc_samples,
                lambda0=self.lambda0,
                anneal_epochs=self.anneal_epochs if self.anneal_epochs else self.epochs,
                kl_scale_fixed=self.kl_scale_fixed,
                base=self.lambda_kl_base,
            ),
            norm_penalty=self.norm_penalty,
            norm_lambda=self.norm_lambda,
            use_batchnorm=self.use_batchnorm,
            use_maxnorm=self.use_maxnorm,
            maxnorm_c=self.maxnorm_c,
            prior_loc=self.prior_loc,
            prior_scale=self.prior_scale,
            init_loc=self.init_loc,
            init_scale=self.init_scale,
            per_example_sampling=self.per_example_sampling,
            modality=self.modality,
        )

    def train_config(self):
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            patience=self.patience,
            threshold=self.threshold,
            clip_norm=self.clip_norm,
            weight_decay=self.weight_decay,
        )

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _bool(raw, key):
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _choice(options):
    def parse(raw, key):
        value = raw.strip()
        if value not in options:
            raise ConfigError(f"{key}: must be one of {options}, got {value!r}")
        return value

    return parse


def _int(lo=None, hi=None):
    def parse(raw, key):
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            raise ConfigError(f"{key}: {value} outside range [{lo}, {hi}]")
        return value

    return parse


def _float(lo=None, hi=None, lo_open=False, hi_open=False):
    def parse(raw, key):
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
        if lo is not None and (value < lo or (lo_open and value == lo)):
            raise ConfigError(f"{key}: {value} below bound {lo}")
        if hi is not None and (value > hi or (hi_open and value == hi)):
            raise ConfigError(f"{key}: {value} above bound {hi}")
        return value

    return parse


def _str(raw, key):
    return raw.strip()


_PARSERS = {
    "variant": _choice(("pm_mo", "m_mo", "gmu_baseline")),
    "elbo": _choice(("v1", "v2", "lambda_kl")),
    "mc_samples": _int(1),
    "lambda0": _float(0.0, 1.0, lo_open=True),
    "anneal_epochs": _int(1),
    "kl_scale_fixed": _bool,
    "lambda_kl_base": _choice(("v1", "v2")),
    "norm_penalty": _choice(("none", "l1", "l2")),
    "norm_lambda": _float(0.0),
    "hidden_width": _int(1),
    "classifier_width": _int(1),
    "maxout_pieces": _int(2),
    "dropout": _float(0.0, 1.0, hi_open=True),
    "use_batchnorm": _bool,
    "use_maxnorm": _bool,
    "maxnorm_c": _float(0.0, lo_open=True),
    "per_example_sampling": _bool,
    "modality": _choice(("both", "text_only", "image_only")),
    "prior_loc": _float(),
    "prior_scale": _float(0.0, lo_open=True),
    "init_loc": _float(),
    "init_scale": _float(0.0, lo_open=True),
    "lr": _float(0.0, lo_open=True),
    "clip_norm": _float(0.0, lo_open=True),
    "weight_decay": _float(0.0),
    "epochs": _int(1),
    "batch_size": _int(1),
    "patience": _int(0),
    "threshold": _float(0.0, 1.0, lo_open=True, hi_open=True),
    "seed": _int(),
    "cycles": _int(1),
    "train_frac": _float(0.0, 1.0, lo_open=True, hi_open=True),
    "val_frac": _float(0.0, 1.0, lo_open=True, hi_open=True),
    "data": _str,
    "out": _str,
}

PRESETS = {
    "pm-mo-paper": {
        "variant": "pm_mo",
        "elbo": "lambda_kl",
        "lambda0": 0.2,
        "norm_penalty": "l2",
        "norm_lambda": 0.1,
        "hidden_width": 3000,
        "classifier_width": 512,
        "dropout": 0.9,
        "lr": 0.005,
        "batch_size": 512,
        "cycles": 5,
        "epochs": 20,
        "train_frac": 0.60,
        "val_frac": 0.10,
    },
    "gmu-paper": {
        "variant": "gmu_baseline",
        "hidden_width": 512,
        "classifier_width": 512,
        "dropout": 0.7,
        "lr": 0.001,
        "batch_size": 512,
        "cycles": 5,
        "epochs": 20,
        "train_frac": 0.60,
        "val_frac": 0.10,
    },
    "pm-mo-1024": {},  # filled below from pm-mo-paper
}
PRESETS["pm-mo-1024"] = dict(PRESETS["pm-mo-paper"], hidden_width=1024)

# ablation rows: shared hyperparameters, differing estimator and penalty
ABLATION_GRID = {
    "lambda-kl+l2": {"variant": "pm_mo", "elbo": "lambda_kl", "norm_penalty": "l2"},
    "lambda-kl+l1": {"variant": "pm_mo", "elbo": "lambda_kl", "norm_penalty": "l1"},
    "lambda-kl": {"variant": "pm_mo", "elbo": "lambda_kl", "norm_penalty": "none"},
    "elbo-v2+l2": {"variant": "pm_mo", "elbo": "v2", "norm_penalty": "l2"},
    "elbo-v2": {"variant": "pm_mo", "elbo": "v2", "norm_penalty": "none"},
    "elbo-v1+l2": {"variant": "pm_mo", "elbo": "v1", "norm_penalty": "l2"},
    "elbo-v1": {"variant": "pm_mo", "elbo": "v1", "norm_penalty": "none"},
    "m+mo": {"variant": "m_mo", "norm_penalty": "l2"},
}


def normalize_grid_name(name):
    cleaned = (
        name.strip()
        .lower()
        .replace("λ", "lambda")  # a literal lambda character
        .replace(" ", "")
        .replace("_", "-")
    )
    for canonical in ABLATION_GRID:
        if cleaned == canonical or cleaned == canonical.replace("-", ""):
            return canonical
    raise ConfigError(f"unknown ablation variant {name!r}; choose from {sorted(ABLATION_GRID)}")


def set_value(config, key, raw):
    if key not in _PARSERS:
        raise ConfigError(f"unknown configuration key {key!r}")
    value = raw if not isinstance(raw, str) else _PARSERS[key](raw, key)
    setattr(config, key, value)


def parse_config_file(path, config=None):
    """Flat ``key = value`` file; blank lines and # comments are skipped."""
    config = config or ExperimentConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        set_value(config, key.strip(), raw)
    return config


def apply_preset(config, name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    for key, value in PRESETS[name].items():
        setattr(config, key, value)
    return config
