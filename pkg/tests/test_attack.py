"""FGSM/PGD contracts: closed forms, ball and range constraints."""

import numpy as np
import pytest

from lffs import autodiff as ad
from lffs.attack import AttackConfig, fgsm, fooling_rate, pgd, predict
from lffs.autodiff import Tensor
from lffs.losses import cross_entropy
from lffs.precision import precision


def linear_forward(weight: np.ndarray):
    w = Tensor(weight)

    def forward(x: Tensor) -> Tensor:
        return ad.matmul(ad.flatten(x), w)

    return forward


@pytest.fixture
def toy():
    # two flat "pixels", two classes
    w = np.array([[1.0, -1.0], [-2.0, 2.0]], dtype=np.float32)
    x = np.array([[0.4, 0.6]], dtype=np.float32)
    y = np.array([0])
    return linear_forward(w), x, y, w


class TestFGSM:
    def test_epsilon_zero_is_identity(self, toy):
        forward, x, y, _ = toy
        assert np.array_equal(fgsm(forward, x, y, 0.0), x)

    def test_matches_closed_form_linear(self, toy):
        # For logits z = x W with true class 0, dCE/dx = W (p - onehot)^T;
        # FGSM moves along sign of that row.
        forward, x, y, w = toy
        z = x @ w
        p = np.exp(z - z.max())
        p /= p.sum()
        grad = (p - np.array([[1.0, 0.0]])) @ w.T
        eps = 0.05
        expect = np.clip(x + eps * np.sign(grad), 0, 1)
        got = fgsm(forward, x, y, eps)
        assert np.abs(got - expect).max() < 1e-7

    def test_ball_constraint(self, toy):
        forward, x, y, _ = toy
        for eps in (0.01, 0.1, 0.5):
            adv = fgsm(forward, x, y, eps)
            assert np.abs(adv - x).max() <= eps + 1e-7
            assert adv.min() >= 0.0 and adv.max() <= 1.0


class TestPGD:
    def test_zero_iters_no_start_is_identity(self, toy):
        forward, x, y, _ = toy
        cfg = AttackConfig(iters=0, random_start=False)
        assert np.array_equal(pgd(forward, x, y, cfg), x)

    def test_ball_and_range_always_hold(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((12, 3)).astype(np.float32)
        forward = linear_forward(w)
        x = rng.random((6, 3, 2, 2)).astype(np.float32)
        y = rng.integers(0, 3, size=6)
        cfg = AttackConfig(epsilon=8 / 255, step_size=2 / 255, iters=20)
        adv = pgd(forward, x, y, cfg)
        assert np.abs(adv - x).max() <= cfg.epsilon + 1e-7
        assert adv.min() >= 0.0 and adv.max() <= 1.0

    def test_random_start_stays_inside(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((4, 2)).astype(np.float32)
        forward = linear_forward(w)
        x = rng.random((3, 1, 2, 2)).astype(np.float32)
        y = np.array([0, 1, 0])
        cfg = AttackConfig(iters=3, random_start=True)
        adv = pgd(forward, x, y, cfg, rng=np.random.default_rng(5))
        assert np.abs(adv - x).max() <= cfg.epsilon + 1e-7

    def test_loss_nondecreasing_in_iterations_linear_model(self):
        # On a fixed linear model the CE along sign-ascent steps cannot drop.
        rng = np.random.default_rng(2)
        w = rng.standard_normal((4, 3)).astype(np.float32)
        forward = linear_forward(w)
        x = rng.random((5, 1, 2, 2)).astype(np.float32) * 0.5 + 0.25
        y = rng.integers(0, 3, size=5)

        def ce_at(batch):
            return cross_entropy(forward(Tensor(batch)), y).item()

        losses = []
        for k in range(6):
            cfg = AttackConfig(epsilon=0.1, step_size=0.02, iters=k)
            losses.append(ce_at(pgd(forward, x, y, cfg)))
        assert all(b >= a - 1e-7 for a, b in zip(losses, losses[1:]))

    def test_deterministic_without_random_start(self, toy):
        forward, x, y, _ = toy
        cfg = AttackConfig(iters=10)
        a = pgd(forward, x, y, cfg)
        b = pgd(forward, x, y, cfg)
        assert np.array_equal(a, b)

    def test_gradient_matches_finite_differences(self):
        # 64-bit spot check of the attack's input gradient
        with precision(64):
            from lffs.gradcheck import finite_diff_check

            rng = np.random.default_rng(3)
            w = rng.standard_normal((4, 3))
            forward = linear_forward(w)
            y = np.array([1, 2])
            x = Tensor(rng.random((2, 1, 2, 2)), requires_grad=True)
            err = finite_diff_check(
                lambda t: cross_entropy(forward(t), y), x
            )
            assert err < 1e-6


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(epsilon=-0.1)
        with pytest.raises(ValueError):
            AttackConfig(iters=-1)
        with pytest.raises(ValueError):
            AttackConfig(step_size=0.0, iters=5)
        with pytest.raises(ValueError):
            AttackConfig(target_forward="quantum")


class TestFoolingRate:
    def test_identity_batch_zero(self, toy):
        forward, x, y, _ = toy
        clean = predict(forward, x)
        assert fooling_rate(forward, clean, x) == 0.0

    def test_all_flipped_is_one(self):
        w = np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=np.float32)
        forward = linear_forward(w)
        x = np.array([[0.9, 0.1]], dtype=np.float32)
        flipped = np.array([[0.1, 0.9]], dtype=np.float32)
        clean = predict(forward, x)
        assert fooling_rate(forward, clean, flipped) == 1.0

    def test_mixed_batch_fraction(self):
        w = np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=np.float32)
        forward = linear_forward(w)
        x = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]], dtype=np.float32)
        adv = x.copy()
        adv[0] = [0.1, 0.9]  # flip only the first
        clean = predict(forward, x)
        assert fooling_rate(forward, clean, adv) == 0.25
