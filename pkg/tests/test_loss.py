import math

import numpy as np
import pytest

from wsimil.errors import DimensionError
from wsimil.loss import AslConfig, asl, sigmoid


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_saturation_without_overflow(self):
        assert 0.0 < sigmoid(750.0) <= 1.0
        assert 0.0 <= sigmoid(-750.0) < 1.0

    def test_unit_value(self):
        assert abs(sigmoid(1.0) - 0.7310585786) <= 1e-9

    def test_vectorized(self):
        z = np.array([-2.0, 0.0, 2.0])
        out = sigmoid(z)
        assert out.shape == (3,)
        assert abs(out[1] - 0.5) == 0.0


class TestAslConfig:
    def test_defaults(self):
        cfg = AslConfig()
        assert (cfg.gamma_pos, cfg.gamma_neg, cfg.margin) == (0.0, 1.0, 0.0)

    def test_emphasis_rule(self):
        with pytest.raises(ValueError):
            AslConfig(gamma_pos=2.0, gamma_neg=1.0)
        with pytest.raises(ValueError):
            AslConfig(margin=-0.1)


def bce_oracle(z, y):
    # summed binary cross-entropy in its stable log1p(exp) form
    total = 0.0
    grad = np.zeros_like(z)
    for k in range(len(z)):
        if y[k]:
            total += np.logaddexp(0.0, -z[k])
        else:
            total += np.logaddexp(0.0, z[k])
        grad[k] = 1.0 / (1.0 + np.exp(-z[k])) - y[k]
    return total, grad


class TestAsl:
    def test_reduces_to_bce(self):
        rng = np.random.default_rng(1)
        cfg = AslConfig(0.0, 0.0, 0.0)
        for _ in range(50):
            z = rng.standard_normal(6) * 4
            y = rng.integers(0, 2, 6)
            loss, grad = asl(z, y, cfg)
            want_loss, want_grad = bce_oracle(z, y)
            assert abs(loss - want_loss) <= 1e-12
            assert np.max(np.abs(grad - want_grad)) <= 1e-12

    def test_positive_at_logit_zero(self):
        loss, _ = asl(np.array([0.0]), np.array([1]), AslConfig(0.0, 0.0, 0.0))
        assert abs(loss - 0.6931472) <= 1e-7

    def test_negative_focused_at_logit_zero(self):
        loss, _ = asl(np.array([0.0]), np.array([0]), AslConfig(0.0, 1.0, 0.0))
        assert abs(loss - 0.3465736) <= 1e-7

    def test_margin_clamps_easy_negatives(self):
        loss, grad = asl(np.array([-10.0]), np.array([0]),
                         AslConfig(0.0, 1.0, 0.08))
        assert loss == 0.0
        assert grad[0] == 0.0

    def test_loss_is_non_negative(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            z = rng.standard_normal(6) * 6
            y = rng.integers(0, 2, 6)
            cfg = AslConfig(float(rng.integers(0, 3)),
                            float(rng.integers(0, 3)) + 2.0,
                            float(rng.random() * 0.2))
            loss, _ = asl(z, y, cfg)
            assert loss >= 0.0

    def test_monotonicity(self):
        zs = np.linspace(-6, 6, 200)
        cfg = AslConfig(1.0, 2.0, 0.05)
        pos_losses = [asl(np.array([z]), np.array([1]), cfg)[0] for z in zs]
        assert all(a > b for a, b in zip(pos_losses, pos_losses[1:]))
        # negative branch: strictly increasing once p > margin
        zs_neg = zs[sigmoid(zs) > 0.06]
        neg_losses = [asl(np.array([z]), np.array([0]), cfg)[0] for z in zs_neg]
        assert all(a < b for a, b in zip(neg_losses, neg_losses[1:]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        eps = 1e-6
        checked = 0
        for _ in range(200):
            z = rng.standard_normal(6) * 3
            y = rng.integers(0, 2, 6)
            cfg = AslConfig(float(rng.integers(0, 3)),
                            float(rng.integers(0, 3)) + 2.0,
                            float(rng.random() * 0.15))
            p = sigmoid(z)
            if np.any(np.abs(p - cfg.margin) <= 1e-3):
                continue
            _, grad = asl(z, y, cfg)
            for k in range(6):
                # the loss is separable per label, so differencing the
                # single-label loss isolates dL/dz_k without cancellation
                # noise from the other labels
                zk = z[k : k + 1]
                yk = y[k : k + 1]
                fd = (asl(zk + eps, yk, cfg)[0] - asl(zk - eps, yk, cfg)[0]) / (2 * eps)
                if abs(fd - grad[k]) <= 1e-10:
                    continue  # below the resolution of the FD oracle
                rel = abs(fd - grad[k]) / max(abs(fd), abs(grad[k]))
                assert rel <= 1e-5, (z[k], int(y[k]), cfg, grad[k], fd)
                checked += 1
        assert checked > 250

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            asl(np.zeros(6), np.zeros(5), AslConfig())

    def test_huge_logits_stay_finite(self):
        loss, grad = asl(np.array([800.0, -800.0]), np.array([0, 1]),
                         AslConfig(0.0, 1.0, 0.0))
        assert math.isfinite(loss)
        assert np.all(np.isfinite(grad))
