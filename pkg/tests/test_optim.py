import numpy as np
import pytest

from mmfuse.errors import ContractError
from mmfuse.optim import Adam, adamw, clip_gradient, clipped_adam
from mmfuse.rng import Rng
from mmfuse.tensor import Tensor


def param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestClipGradient:
    def test_within_bound_untouched(self):
        g = np.array([3.0, 4.0])
        assert np.array_equal(clip_gradient(g, 10.0), g)

    def test_exactly_on_bound(self):
        g = np.array([3.0, 4.0])
        assert np.array_equal(clip_gradient(g, 5.0), g)

    def test_rescaled_to_unit_norm(self):
        out = clip_gradient(np.array([3.0, 4.0]), 1.0)
        assert np.allclose(out, [0.6, 0.8], atol=1e-12)

    def test_norm_bounded_after_clipping(self):
        rng = Rng(0)
        for _ in range(20):
            g = rng.normal((5, 3)) * 10.0
            clipped = clip_gradient(g, 2.5)
            assert np.linalg.norm(clipped) <= 2.5 + 1e-6

    def test_tensor_in_tensor_out(self):
        out = clip_gradient(Tensor(np.array([3.0, 4.0])), 1.0)
        assert isinstance(out, Tensor)


class TestAdam:
    def test_zero_gradient_no_decay_leaves_params(self):
        p = param([1.0, -2.0])
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        assert p.data.tolist() == [1.0, -2.0]

    def test_decoupled_decay_identity(self):
        start = np.array([1.0, -2.0, 0.25])
        p = param(start.copy())
        opt = adamw([p], lr=0.005, weight_decay=0.01)
        p.grad = np.zeros(3)
        opt.step()
        assert np.array_equal(p.data, start * (1.0 - 0.005 * 0.01))

    def test_first_step_is_signed_lr(self):
        p = param([1.0, 1.0])
        opt = Adam([p], lr=0.05)
        p.grad = np.array([0.3, -7.0])
        opt.step()
        assert np.allclose(p.data, [1.0 - 0.05, 1.0 + 0.05], atol=1e-6)

    def test_adamw_zero_decay_bit_identical_to_adam(self):
        rng = Rng(1)
        start = rng.normal(6)
        grads = [rng.normal(6) for _ in range(5)]
        p1, p2 = param(start.copy()), param(start.copy())
        plain = Adam([p1], lr=0.01)
        decayless = Adam([p2], lr=0.01, weight_decay=0.0, decoupled=True)
        for g in grads:
            p1.grad, p2.grad = g.copy(), g.copy()
            plain.step()
            decayless.step()
        assert np.array_equal(p1.data, p2.data)

    def test_step_count(self):
        p = param([1.0])
        opt = Adam([p], lr=0.1)
        for _ in range(7):
            p.grad = np.array([0.5])
            opt.step()
        assert opt.step_count == 7

    def test_scale_free_first_direction(self):
        rng = Rng(2)
        start = rng.normal(8)
        g = rng.normal(8)
        updates = []
        for factor in (1.0, 100.0):
            p = param(start.copy())
            Adam_ = Adam([p], lr=0.01)
            p.grad = g * factor
            Adam_.step()
            updates.append(np.sign(p.data - start))
        assert np.array_equal(updates[0], updates[1])

    def test_nan_gradient_rejected(self):
        p = param([1.0])
        opt = Adam([p], lr=0.1)
        p.grad = np.array([np.nan])
        with pytest.raises(ContractError):
            opt.step()

    def test_clipped_adam_bounds_update_like_clipped_gradient(self):
        start = np.zeros(2)
        p_clipped, p_manual = param(start.copy()), param(start.copy())
        big = np.array([30.0, 40.0])
        opt = clipped_adam([p_clipped], lr=0.1, clip_norm=5.0)
        p_clipped.grad = big.copy()
        opt.step()
        manual = Adam([p_manual], lr=0.1)
        p_manual.grad = clip_gradient(big, 5.0)
        manual.step()
        assert np.array_equal(p_clipped.data, p_manual.data)

    def test_non_decoupled_decay_goes_through_moments(self):
        p = param([2.0])
        opt = Adam([p], lr=0.1, weight_decay=0.5, decoupled=False)
        p.grad = np.zeros(1)
        opt.step()
        # gradient becomes wd * p = 1.0, so the first step is about -lr
        assert p.data[0] == pytest.approx(2.0 - 0.1, abs=1e-6)

    def test_zero_grad_clears(self):
        p = param([1.0])
        opt = Adam([p], lr=0.1)
        p.grad = np.array([3.0])
        opt.zero_grad()
        assert p.grad is None
