import mpmath
import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_probs
from labelsift.calibration import ClassPrior, debias_logits, dml_loss, sharpen


class TestClassPrior:
    def test_uniform_init(self):
        p = ClassPrior.uniform(4, momentum=0.9)
        assert np.allclose(p.pi, 0.25)

    def test_fixed_point(self):
        p = ClassPrior(np.array([0.7, 0.3]), momentum=0.5)
        p.update(np.array([[0.7, 0.3], [0.7, 0.3]]))
        assert np.allclose(p.pi, [0.7, 0.3], atol=1e-12)

    def test_momentum_zero_jumps_to_batch_mean(self):
        p = ClassPrior(np.array([0.9, 0.1]), momentum=0.0)
        p.update(np.array([[0.2, 0.8], [0.4, 0.6]]))
        assert np.allclose(p.pi, [0.3, 0.7], atol=1e-12)

    def test_midpoint(self):
        p = ClassPrior(np.array([1.0, 0.0]), momentum=0.5)
        p.update(np.array([[0.0, 1.0]]))
        assert np.allclose(p.pi, [0.5, 0.5], atol=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            ClassPrior(np.array([0.5, 0.6]), momentum=0.5)
        p = ClassPrior.uniform(3)
        with pytest.raises(ValueError):
            p.update(np.empty((0, 3)))
        with pytest.raises(ValueError):
            p.update(np.ones((2, 3)))  # rows off the simplex

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 8), st.integers(1, 20))
    def test_updates_stay_on_simplex(self, seed, c, steps):
        rng = np.random.default_rng(seed)
        p = ClassPrior.uniform(c, momentum=float(rng.uniform(0, 0.999)))
        for _ in range(steps):
            p.update(random_probs(rng, int(rng.integers(1, 6)), c))
            assert (p.pi >= 0).all()
            assert abs(p.pi.sum() - 1.0) < 1e-9

    def test_geometric_mixing_identity_short(self):
        rng = np.random.default_rng(4)
        m = 0.97
        p = ClassPrior.uniform(5, momentum=m)
        pi0 = p.pi.copy()
        qs = []
        for _ in range(200):
            batch = random_probs(rng, 4, 5)
            qs.append(batch.mean(axis=0))
            p.update(batch)
        t = len(qs)
        weights = m ** (t - 1 - np.arange(t))
        closed = m ** t * pi0 + (1 - m) * (weights[:, None] * np.array(qs)).sum(axis=0)
        assert np.abs(p.pi - closed).max() < 1e-12


class TestMarginLoss:
    def test_alpha_zero_equals_cross_entropy(self):
        rng = np.random.default_rng(0)
        logits = torch.tensor(rng.normal(size=(16, 7)))
        labels = torch.tensor(rng.integers(0, 7, size=16))
        pi = random_probs(rng, 1, 7)[0]
        ours = dml_loss(logits, labels, pi, alpha=0.0)
        ref = F.cross_entropy(logits, labels)
        assert abs(float(ours - ref)) < 1e-12

    def test_uniform_prior_equals_cross_entropy(self):
        rng = np.random.default_rng(1)
        logits = torch.tensor(rng.normal(size=(16, 5)))
        labels = torch.tensor(rng.integers(0, 5, size=16))
        ours = dml_loss(logits, labels, np.full(5, 0.2), alpha=1.7)
        ref = F.cross_entropy(logits, labels)
        assert abs(float(ours - ref)) < 1e-12

    def test_scalar_oracle(self):
        # independent high-precision evaluation of
        # -log(0.1 / (e * 0.9 + 0.1)) for logits [1, 0], pi [0.9, 0.1], alpha 1, label 1
        mpmath.mp.dps = 50
        expected = -mpmath.log(mpmath.mpf("0.1") / (mpmath.e * mpmath.mpf("0.9") + mpmath.mpf("0.1")))
        got = dml_loss(torch.tensor([1.0, 0.0], dtype=torch.float64), 1,
                       np.array([0.9, 0.1]), alpha=1.0)
        assert abs(float(got) - float(expected)) < 1e-12

    def test_soft_targets(self):
        logits = torch.tensor([[2.0, -1.0, 0.5]], dtype=torch.float64)
        target = torch.tensor([[0.2, 0.3, 0.5]], dtype=torch.float64)
        pi = np.array([0.5, 0.25, 0.25])
        logp = torch.log_softmax(logits + 0.6 * torch.log(torch.tensor(pi)), dim=1)
        manual = -(target * logp).sum()
        got = dml_loss(logits, target, pi, alpha=0.6)
        assert abs(float(got - manual)) < 1e-12

    def test_reductions_and_single_sample(self):
        logits = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        labels = torch.tensor([0, 0])
        pi = np.array([0.5, 0.5])
        per = dml_loss(logits, labels, pi, 0.0, reduction="none")
        assert per.shape == (2,)
        assert abs(float(per.mean() - dml_loss(logits, labels, pi, 0.0))) < 1e-12
        single = dml_loss(logits[0], 0, pi, 0.0)
        assert abs(float(single - per[0])) < 1e-12

    def test_rejects_nan_logits_and_negative_prior(self):
        with pytest.raises(ValueError, match="NaN"):
            dml_loss(torch.tensor([float("nan"), 0.0]), 0, np.array([0.5, 0.5]), 0.5)
        with pytest.raises(ValueError, match="nonnegative"):
            dml_loss(torch.tensor([1.0, 0.0]), 0, np.array([1.5, -0.5]), 0.5)

    def test_zero_prior_entry_is_floored(self):
        val = dml_loss(torch.tensor([1.0, 0.0], dtype=torch.float64), 0,
                       np.array([1.0, 0.0]), alpha=0.5)
        assert np.isfinite(float(val))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            c = int(rng.integers(2, 6))
            logits = torch.tensor(rng.normal(size=c), requires_grad=True)
            label = int(rng.integers(0, c))
            pi = random_probs(rng, 1, c)[0]
            alpha = float(rng.uniform(0, 2))
            loss = dml_loss(logits, label, pi, alpha)
            loss.backward()
            eps = 1e-6
            for j in range(c):
                shift = torch.zeros(c, dtype=torch.float64)
                shift[j] = eps
                hi = dml_loss((logits.detach() + shift), label, pi, alpha)
                lo = dml_loss((logits.detach() - shift), label, pi, alpha)
                fd = float(hi - lo) / (2 * eps)
                assert abs(fd - float(logits.grad[j])) < 1e-4 * max(1.0, abs(fd))


class TestDebiasLogits:
    def test_alpha_zero_identity(self):
        logits = torch.tensor([[3.0, -1.0]])
        assert torch.equal(debias_logits(logits, np.array([0.9, 0.1]), 0.0), logits)

    def test_uniform_prior_keeps_argmax(self):
        rng = np.random.default_rng(3)
        logits = torch.tensor(rng.normal(size=(500, 6)))
        out = debias_logits(logits, np.full(6, 1 / 6), alpha=1.3)
        assert torch.equal(out.argmax(dim=1), logits.argmax(dim=1))

    def test_scalar_oracle_and_argmax_flip(self):
        logits = torch.tensor([2.0, 1.0], dtype=torch.float64)
        out = debias_logits(logits, np.array([0.8, 0.2]), alpha=1.0)
        expected = np.array([2.0 - np.log(0.8), 1.0 - np.log(0.2)])
        assert np.allclose(out.numpy(), expected, atol=1e-12)
        assert logits.argmax() == 0 and out.argmax() == 1  # shift flips the argmax


class TestSharpen:
    def test_temperature_one_identity(self):
        p = torch.tensor([0.3, 0.7], dtype=torch.float64)
        assert torch.allclose(sharpen(p, 1.0), p, atol=1e-12)

    def test_symmetric_input_unchanged(self):
        for t in (0.1, 0.5, 2.0):
            out = sharpen(torch.tensor([0.5, 0.5], dtype=torch.float64), t)
            assert torch.allclose(out, torch.tensor([0.5, 0.5], dtype=torch.float64))

    def test_scalar_oracle(self):
        out = sharpen(torch.tensor([0.8, 0.2], dtype=torch.float64), 0.5)
        expected = torch.tensor([0.64, 0.04], dtype=torch.float64) / 0.68
        assert torch.allclose(out, expected, atol=1e-12)
        assert abs(float(out[0]) - 0.9412) < 1e-4

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            sharpen(torch.tensor([0.5, 0.5]), 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 5.0))
    def test_preserves_argmax_and_simplex(self, seed, t):
        rng = np.random.default_rng(seed)
        p = torch.tensor(random_probs(rng, 3, 5))
        out = sharpen(p, t)
        assert torch.allclose(out.sum(dim=1), torch.ones(3, dtype=out.dtype), atol=1e-9)
        assert torch.equal(out.argmax(dim=1), p.argmax(dim=1))

    def test_limit_is_one_hot(self):
        p = torch.tensor([0.6, 0.3, 0.1], dtype=torch.float64)
        out = sharpen(p, 1e-3)
        assert torch.allclose(out, torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), atol=1e-9)
