"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete. P10 needs the real benchmark container and is
skipped unless MMFUSE_MMIMDB points at one.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import integrate

from mmfuse.checks import run_all_gradchecks
from mmfuse.config import ABLATION_GRID, ExperimentConfig, apply_preset
from mmfuse.data import generate_synthetic, materialize, read_container, split_dataset
from mmfuse.laplace import laplace_cdf, laplace_kl, laplace_log_prob, laplace_sample
from mmfuse.metrics import compute_report
from mmfuse.model import Model, ModelConfig, evaluate, make_optimizers, train_step
from mmfuse.objectives import ElboVariant, ForwardSample, elbo_v1_loss, elbo_v2_loss, kl_schedule
from mmfuse.optim import Adam, adamw, clip_gradient
from mmfuse.rng import Rng
from mmfuse.tensor import Tensor
from mmfuse.training import TrainConfig, fit

FLAT_RATES = np.full(23, 0.35)

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def criterion(name, ok, detail):
    print(f"\n{name} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


def test_p1_gradient_correctness():
    started = time.perf_counter()
    results = run_all_gradchecks(seed=0, h=1e-5)
    elapsed = time.perf_counter() - started
    worst_name, worst = max(results.items(), key=lambda kv: kv[1])
    composed = [k for k in results if k.startswith("composed_")]
    ok = all(v < 1e-4 for v in results.values()) and len(composed) >= 3 and elapsed < 60.0
    criterion(
        "P1",
        ok,
        f"{len(results)} op and composed checks, worst {worst:.2e} ({worst_name}), {elapsed:.1f}s",
    )


def test_p2_laplace_kl_quadrature():
    def by_quadrature(loc_q, scale_q, loc_p, scale_p):
        def integrand(x):
            lq = laplace_log_prob(loc_q, scale_q, x)
            lp = laplace_log_prob(loc_p, scale_p, x)
            return math.exp(lq) * (lq - lp)

        lo, hi = loc_q - 60.0 * scale_q, loc_q + 60.0 * scale_q
        points = sorted(p for p in (loc_q, loc_p) if lo < p < hi)
        value, _ = integrate.quad(
            integrand, lo, hi, points=points or None, limit=400, epsabs=1e-12, epsrel=1e-12
        )
        return value

    locs = (-2.0, -0.5, 0.0, 0.5, 2.0)
    scales = (0.01, 0.1, 1.0, 3.0)
    worst = 0.0
    for lq in locs:
        for sq in scales:
            for lp in locs:
                for sp in scales:
                    gap = abs(laplace_kl(lq, sq, lp, sp) - by_quadrature(lq, sq, lp, sp))
                    worst = max(worst, gap)
    criterion("P2", worst < 1e-6, f"400 grid pairs, worst |closed - quadrature| = {worst:.2e}")


def test_p3_sampler_fidelity():
    n = 1_000_000
    u = Rng(31).substream("sampling").open_unit(n)
    draws = laplace_sample(0.1, 0.01, u)
    mean_err = abs(draws.mean() - 0.1)
    mean_bound = 3.0 * 0.01 * math.sqrt(2.0 / n)
    var = draws.var()
    var_ok = abs(var - 2e-4) <= 0.05 * 2e-4

    sorted_draws = np.sort(draws)
    cdf = laplace_cdf(0.1, 0.01, sorted_draws)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    ks = max(np.max(np.abs(hi - cdf)), np.max(np.abs(cdf - lo)))

    ok = mean_err < mean_bound and var_ok and ks < 0.01
    criterion(
        "P3",
        ok,
        f"mean err {mean_err:.2e} (< {mean_bound:.2e}), var {var:.6e} (2e-4 +-5%), KS {ks:.4f} (< 0.01)",
    )


def _four_unit_model():
    cfg = ModelConfig(
        text_dim=20,
        image_dim=30,
        hidden_width=4,
        classifier_width=4,
        n_classes=6,
        dropout=0.0,
        norm_penalty="none",
        elbo=ElboVariant(kind="v2"),
        init_loc=0.3,
        init_scale=0.25,
    )
    return Model(cfg, seed=400)


def test_p4_estimator_equivalence_and_variance():
    model = _four_unit_model()
    data_rng = Rng(41)
    text = Tensor(data_rng.normal((8, 20)).astype(np.float32))
    image = Tensor(data_rng.normal((8, 30)).astype(np.float32))
    targets = Tensor((data_rng.random((8, 6)) < 0.4).astype(np.float32))
    scale = 8 / 64.0

    n = 10_000
    v1_kl = np.empty(n)
    v2_kl = np.empty(n)
    v1_tot = np.empty(n)
    v2_tot = np.empty(n)
    for i in range(n):
        model.sample_rng = Rng(50_000 + i).substream("sampling")
        logits, kl, log_ratio = model.forward(text, image, "train")
        nll = (logits.softplus() - targets * logits).sum(axis=1).mean() * 8.0
        sample = ForwardSample(nll=nll, log_ratio=log_ratio)
        b1 = elbo_v1_loss([sample], scale)
        b2 = elbo_v2_loss([sample], kl, scale)
        v1_kl[i], v2_kl[i] = b1.kl_term, b2.kl_term
        v1_tot[i], v2_tot[i] = b1.total, b2.total

    stderr = v1_kl.std(ddof=1) / math.sqrt(n)
    mean_gap = abs(v1_tot.mean() - v2_tot.mean())
    v2_spread = np.unique(v2_kl).size
    ok = mean_gap < 3.0 * stderr and v2_spread == 1 and v1_kl.std() > 0.0
    criterion(
        "P4",
        ok,
        f"mean |v1 - v2| = {mean_gap:.4f} (< 3*stderr {3 * stderr:.4f}), "
        f"v2 KL values distinct: {v2_spread}, v1 KL std {v1_kl.std():.4f}",
    )


def brute_force(y_hat, y_true):
    n, k = y_hat.shape
    sample_scores = []
    for i in range(n):
        inter = int(np.sum((y_hat[i] == 1) & (y_true[i] == 1)))
        size = int(y_hat[i].sum() + y_true[i].sum())
        sample_scores.append(1.0 if size == 0 else 2.0 * inter / size)
    tp_all = fp_all = fn_all = 0
    f1s, supports = [], []
    for c in range(k):
        tp = int(np.sum((y_hat[:, c] == 1) & (y_true[:, c] == 1)))
        fp = int(np.sum((y_hat[:, c] == 1) & (y_true[:, c] == 0)))
        fn = int(np.sum((y_hat[:, c] == 0) & (y_true[:, c] == 1)))
        tp_all += tp
        fp_all += fp
        fn_all += fn
        f1s.append(0.0 if 2 * tp + fp + fn == 0 else 2.0 * tp / (2 * tp + fp + fn))
        supports.append(int(y_true[:, c].sum()))
    micro = 0.0 if 2 * tp_all + fp_all + fn_all == 0 else 2.0 * tp_all / (2 * tp_all + fp_all + fn_all)
    total = sum(supports)
    weighted = 0.0 if total == 0 else sum(s * f for s, f in zip(supports, f1s)) / total
    return micro, sum(f1s) / k, weighted, sum(sample_scores) / n


def test_p5_metrics_oracle():
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        y_true = (rng.random((n, 23)) < rng.uniform(0.02, 0.7)).astype(np.uint8)
        y_hat = (rng.random((n, 23)) < rng.uniform(0.02, 0.7)).astype(np.uint8)
        micro, macro, weighted, samples = brute_force(y_hat, y_true)
        report = compute_report(y_hat, y_true)
        worst = max(
            worst,
            abs(report.micro - micro),
            abs(report.macro - macro),
            abs(report.weighted - weighted),
            abs(report.samples - samples),
        )
    criterion("P5", worst < 1e-9, f"1000 random sets, worst |ours - brute force| = {worst:.2e}")


def test_p6_regulariser_contracts():
    # max-norm bound after every optimizer step
    cfg = ModelConfig(
        hidden_width=8,
        classifier_width=8,
        dropout=0.0,
        use_maxnorm=True,
        maxnorm_c=3.0,
        norm_penalty="none",
        elbo=ElboVariant(kind="v2"),
    )
    model = Model(cfg, seed=60)
    opts = make_optimizers(model, lr=0.05)
    records = generate_synthetic(61, 16, 0.1, label_rates=FLAT_RATES)
    text, image, labels = materialize(records)
    batch = (Tensor(text), Tensor(image), Tensor(labels))
    norm_ok = True
    for step in range(5):
        train_step(model, batch, opts, step, train_size=16)
        for w in model.fusion.maxnorm_targets() + model.classifier.maxnorm_targets():
            norms = np.linalg.norm(w.data.astype(np.float64), axis=1)
            norm_ok = norm_ok and bool(np.all(norms <= 3.0 + 1e-6))

    # AdamW zero-gradient decay identity
    start = np.array([1.0, -0.5, 2.0], dtype=np.float64)
    p = Tensor(start.copy(), requires_grad=True)
    adamw([p], lr=0.005, weight_decay=0.01).step()
    decay_ok = np.array_equal(p.data, start * (1.0 - 0.005 * 0.01))

    # clipping bound
    rng = Rng(62)
    clip_ok = all(
        np.linalg.norm(clip_gradient(rng.normal((6, 5)) * 50.0, 10.0)) <= 10.0 + 1e-6
        for _ in range(25)
    )

    # annealing schedule endpoints and monotonicity
    variant = ElboVariant(kind="lambda_kl", lambda0=0.2, anneal_epochs=12)
    lams = [kl_schedule(e, variant) for e in range(30)]
    lam_ok = (
        lams[0] == pytest.approx(0.2)
        and lams[12] == 1.0
        and all(b >= a for a, b in zip(lams, lams[1:]))
    )

    ok = norm_ok and decay_ok and clip_ok and lam_ok
    criterion(
        "P6",
        ok,
        f"max-norm {norm_ok}, AdamW identity {decay_ok}, clip bound {clip_ok}, schedule {lam_ok}",
    )


def test_p7_overfit_sanity():
    started = time.perf_counter()
    cfg = ModelConfig(
        hidden_width=32,
        classifier_width=32,
        dropout=0.0,
        norm_penalty="l2",
        elbo=ElboVariant(kind="lambda_kl", lambda0=0.2, anneal_epochs=200),
    )
    model = Model(cfg, seed=7)
    records = generate_synthetic(77, 64, 0.05, label_rates=FLAT_RATES)
    text, image, labels = materialize(records)
    batch = (Tensor(text), Tensor(image), Tensor(labels))
    opts = make_optimizers(model, lr=0.02)
    reached = None
    for epoch in range(200):
        train_step(model, batch, opts, epoch, train_size=64)
        if evaluate(model, records).samples >= 0.99:
            reached = epoch
            break
    elapsed = time.perf_counter() - started
    ok = reached is not None and elapsed < 60.0
    criterion(
        "P7",
        ok,
        f"training samples-F1 reached 0.99 at epoch {reached} of 200, {elapsed:.1f}s (< 60s)",
    )


def _shared_class_weighted_f1(report):
    shared = report.per_class[16:]
    total = sum(c.support for c in shared)
    return sum(c.support * c.f1 for c in shared) / total


def _p8_run(seed, modality):
    records = generate_synthetic(seed, 4000, 0.1, label_rates=FLAT_RATES)
    split = split_dataset(records, seed, train_frac=0.6, val_frac=0.1)
    cfg = ModelConfig(
        hidden_width=32,
        classifier_width=32,
        dropout=0.1,
        norm_penalty="l2",
        modality=modality,
        elbo=ElboVariant(kind="lambda_kl", lambda0=0.2, anneal_epochs=8),
    )
    model = Model(cfg, seed=seed)
    fit(model, records, split, TrainConfig(lr=0.01, epochs=8, batch_size=256, patience=8))
    return _shared_class_weighted_f1(evaluate(model, records, split.test))


def test_p8_fusion_necessity():
    seeds = range(100, 105)
    means = {}
    for modality in ("both", "text_only", "image_only"):
        means[modality] = float(np.mean([_p8_run(s, modality) for s in seeds]))
    margin_text = means["both"] - means["text_only"]
    margin_image = means["both"] - means["image_only"]
    ok = margin_text >= 0.10 and margin_image >= 0.10
    criterion(
        "P8",
        ok,
        f"shared-class weighted-F1: both {means['both']:.3f}, text-only {means['text_only']:.3f}, "
        f"image-only {means['image_only']:.3f}; margins {margin_text:.3f}/{margin_image:.3f} (>= 0.10)",
    )


P9_EPOCHS = 16


def _p9_run(name, seed):
    overrides = ABLATION_GRID[name]
    records = generate_synthetic(seed, 2000, 0.1, label_rates=FLAT_RATES)
    split = split_dataset(records, seed, train_frac=0.6, val_frac=0.1)
    cfg = ModelConfig(
        hidden_width=32,
        classifier_width=32,
        dropout=0.1,
        variant=overrides["variant"],
        norm_penalty=overrides["norm_penalty"],
        elbo=ElboVariant(kind=overrides.get("elbo", "v2"), lambda0=0.2, anneal_epochs=P9_EPOCHS),
    )
    model = Model(cfg, seed=seed)
    fit(
        model,
        records,
        split,
        TrainConfig(lr=0.01, epochs=P9_EPOCHS, batch_size=128, patience=P9_EPOCHS),
    )
    return evaluate(model, records, split.test)


def test_p9_ablation_ordering():
    seeds = range(200, 205)
    table = {}
    for name in ABLATION_GRID:
        reports = [_p9_run(name, s) for s in seeds]
        table[name] = {
            "micro": float(np.mean([r.micro for r in reports])),
            "macro": float(np.mean([r.macro for r in reports])),
            "weighted": float(np.mean([r.weighted for r in reports])),
            "samples": float(np.mean([r.samples for r in reports])),
        }
    print("\nablation grid, 5-seed means")
    print(f"{'specification':<16} {'micro':>7} {'macro':>7} {'weighted':>9} {'samples':>8}")
    for name, row in table.items():
        print(
            f"{name:<16} {row['micro']:>7.3f} {row['macro']:>7.3f}"
            f" {row['weighted']:>9.3f} {row['samples']:>8.3f}"
        )
    gap = table["m+mo"]["weighted"] - table["lambda-kl+l2"]["weighted"]
    ok = gap <= 0.01 and len(table) == 8
    criterion(
        "P9",
        ok,
        f"full 8-row grid emitted; m+mo - lambda-kl+l2 weighted gap {gap:+.4f} (<= +0.01)",
    )


@pytest.mark.skipif(
    "MMFUSE_MMIMDB" not in os.environ,
    reason="benchmark container not supplied; set MMFUSE_MMIMDB to run",
)
def test_p10_benchmark_reproduction():
    records = read_container(os.environ["MMFUSE_MMIMDB"])
    results = {}
    epoch_seconds = {}
    for preset in ("pm-mo-paper", "gmu-paper"):
        exp = apply_preset(ExperimentConfig(), preset)
        reports = []
        seconds = []
        for cycle in range(exp.cycles):
            seed = exp.seed + cycle
            split = split_dataset(records, seed, train_frac=exp.train_frac, val_frac=exp.val_frac)
            model = Model(exp.model_config(), seed)
            started = time.perf_counter()
            result = fit(model, records, split, exp.train_config())
            seconds.append((time.perf_counter() - started) / max(1, len(result.rows)))
            reports.append(evaluate(model, records, split.test, batch_size=exp.batch_size))
        results[preset] = float(np.mean([r.weighted for r in reports]))
        epoch_seconds[preset] = float(np.mean(seconds))
        print(f"\n{preset}: weighted {results[preset]:.4f}, {epoch_seconds[preset]:.1f}s/epoch CPU")
    ok = abs(results["pm-mo-paper"] - 0.617) <= 0.03 and abs(results["gmu-paper"] - 0.608) <= 0.03
    criterion(
        "P10",
        ok,
        f"pm-mo-paper weighted {results['pm-mo-paper']:.4f} (0.617 +- 0.03), "
        f"gmu-paper {results['gmu-paper']:.4f} (0.608 +- 0.03); CPU epoch times reported above",
    )
