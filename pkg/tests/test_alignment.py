"""Alignment loss values, symmetries, and gradients."""

import numpy as np
import pytest

from specdetect.alignment import AlignmentBatch, fsa_loss
from specdetect.numerics import dft, modulus, to_one_sided


def make_batch(moduli, labels, xi=1.0):
    return AlignmentBatch(moduli=np.asarray(moduli, dtype=float), labels=labels, xi=xi)


class TestLossValues:
    def test_identical_same_label_pair(self):
        loss, grads = fsa_loss(make_batch([[1.0, 2.0], [1.0, 2.0]], [0, 0]))
        assert loss == 0.0
        np.testing.assert_array_equal(grads, np.zeros((2, 2)))

    def test_identical_cross_label_pair_hits_full_margin(self):
        loss, _ = fsa_loss(make_batch([[1.0, 2.0], [1.0, 2.0]], [0, 1], xi=1.0))
        assert loss == 1.0

    def test_hand_worked_three_sample_batch(self):
        # labels (0,0,1): same pair at distance 0.2, cross pairs at 0.5 and 0.4
        # -> L_pos = 0.2, L_neg = (0.5 + 0.6)/2 = 0.55, total 0.75
        moduli = np.array([[0.0, 0.0], [0.2, 0.2], [0.9, 0.1]])
        loss, _ = fsa_loss(make_batch(moduli, [0, 0, 1], xi=1.0))
        assert loss == pytest.approx(0.75, abs=1e-15)

    def test_single_sample(self):
        loss, grads = fsa_loss(make_batch([[3.0, 1.0]], [1]))
        assert loss == 0.0
        np.testing.assert_array_equal(grads, np.zeros((1, 2)))

    def test_single_class_batch_has_no_negative_term(self):
        moduli = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        loss, _ = fsa_loss(make_batch(moduli, [1, 1, 1]))
        # only L_pos: pairwise distances 1, 2, 1 -> mean 4/3
        assert loss == pytest.approx(4.0 / 3.0, rel=1e-12)

    def test_saturated_batch(self):
        # same-label pairs identical, cross distances at >= xi
        moduli = np.array([[0.0, 0.0], [0.0, 0.0], [2.0, 2.0]])
        loss, grads = fsa_loss(make_batch(moduli, [0, 0, 1], xi=1.0))
        assert loss == 0.0
        np.testing.assert_array_equal(grads, np.zeros_like(moduli))


class TestInvariances:
    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            b = int(rng.integers(1, 7))
            moduli = np.abs(rng.standard_normal((b, 5)))
            labels = rng.integers(0, 2, size=b)
            loss, _ = fsa_loss(make_batch(moduli, labels, xi=float(rng.uniform(0.1, 2.0))))
            assert loss >= 0.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        moduli = np.abs(rng.standard_normal((5, 7)))
        labels = np.array([0, 1, 1, 0, 1])
        base, _ = fsa_loss(make_batch(moduli, labels))
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(5)
            shuffled, _ = fsa_loss(make_batch(moduli[perm], labels[perm]))
            assert shuffled == pytest.approx(base, rel=1e-12)

    def test_label_swap_symmetry(self):
        rng = np.random.default_rng(5)
        moduli = np.abs(rng.standard_normal((6, 4)))
        labels = np.array([0, 1, 1, 0, 1, 0])
        a, _ = fsa_loss(make_batch(moduli, labels))
        b, _ = fsa_loss(make_batch(moduli, 1 - labels))
        assert a == pytest.approx(b, rel=1e-15)

    def test_phase_invariance(self):
        # two phase-rotated copies of one spectrum share a modulus vector
        rng = np.random.default_rng(6)
        x = rng.standard_normal(12)
        spec = to_one_sided(dft(x))
        mod = modulus(spec)
        phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=spec.n_bins))
        rotated = np.abs(spec.bins * phases)
        np.testing.assert_allclose(rotated, mod, rtol=1e-12)
        a, _ = fsa_loss(make_batch(np.stack([mod, np.ones_like(mod)]), [0, 1]))
        b, _ = fsa_loss(make_batch(np.stack([rotated, np.ones_like(mod)]), [0, 1]))
        assert a == pytest.approx(b, rel=1e-12)


class TestGradients:
    @pytest.mark.parametrize("seed", range(6))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(2, 7))
        m = int(rng.integers(2, 17))
        moduli = np.abs(rng.standard_normal((b, m))) + 0.05
        labels = rng.integers(0, 2, size=b)
        xi = 0.8
        _, grads = fsa_loss(make_batch(moduli, labels, xi))
        eps = 1e-6
        # probe a handful of coordinates, skipping any that sit near a kink
        for _ in range(12):
            i = int(rng.integers(b))
            j = int(rng.integers(m))
            bump = np.zeros_like(moduli)
            bump[i, j] = eps
            hi, _ = fsa_loss(make_batch(moduli + bump, labels, xi))
            lo, _ = fsa_loss(make_batch(np.maximum(moduli - bump, 0.0), labels, xi))
            fd = (hi - lo) / (2 * eps)
            assert grads[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_zero_at_sign_zero(self):
        # identical moduli, same label: sign(0) = 0 convention
        moduli = np.array([[1.0, 1.0], [1.0, 1.0]])
        _, grads = fsa_loss(make_batch(moduli, [1, 1]))
        np.testing.assert_array_equal(grads, np.zeros_like(moduli))


class TestValidation:
    def test_mismatched_lengths(self):
        with pytest.raises(ValueError, match="mismatched lengths"):
            make_batch([[1.0, 2.0], [1.0, 2.0]], [0, 1, 1])

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            make_batch([[1.0], [2.0]], [0, 2])

    def test_negative_moduli(self):
        with pytest.raises(ValueError):
            make_batch([[-1.0], [2.0]], [0, 1])

    def test_bad_xi(self):
        with pytest.raises(ValueError):
            make_batch([[1.0], [2.0]], [0, 1], xi=0.0)
