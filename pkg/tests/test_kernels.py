"""Kernel contracts, plus bit-parity between the two backends."""

import math

import numpy as np
import pytest

from duplexasr.kernels import BACKEND, ctc_forward_backward, levenshtein, pure
from duplexasr.numerics import rng_for, softmax

try:
    from duplexasr.kernels import _hotpath
except ImportError:
    _hotpath = None

needs_ext = pytest.mark.skipif(_hotpath is None, reason="compiled kernels not built")


def random_log_probs(rng, t_len, vocab):
    return np.log(softmax(rng.normal(0.0, 2.0, size=(t_len, vocab))))


class TestCtcForwardBackward:
    def test_single_frame_single_label(self):
        lp = random_log_probs(rng_for(0, "k"), 1, 3)
        loss, grad = ctc_forward_backward(lp, [2])
        assert loss == pytest.approx(-lp[0, 2], abs=1e-12)
        # w.r.t. the log-distribution itself the gradient is a -1 one-hot;
        # chained through log-softmax it becomes softmax minus one-hot
        np.testing.assert_allclose(grad[0], [0.0, 0.0, -1.0], atol=1e-12)
        p = np.exp(lp[0])
        logit_grad = grad[0] - p * grad[0].sum()
        np.testing.assert_allclose(logit_grad, p - np.eye(3)[2], atol=1e-12)

    def test_two_frames_three_alignments(self):
        lp = random_log_probs(rng_for(1, "k"), 2, 2)
        p = np.exp(lp)
        loss, _ = ctc_forward_backward(lp, [1])
        want = -math.log(p[0, 1] * p[1, 1] + p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1])
        assert loss == pytest.approx(want, abs=1e-12)

    def test_repeat_needs_separating_blank(self):
        lp = random_log_probs(rng_for(2, "k"), 3, 2)
        p = np.exp(lp)
        loss, _ = ctc_forward_backward(lp, [1, 1])
        # only valid path is (a, blank, a)
        assert loss == pytest.approx(-math.log(p[0, 1] * p[1, 0] * p[2, 1]), abs=1e-12)

    def test_unsatisfiable_target_gives_inf_and_zero_grad(self):
        lp = random_log_probs(rng_for(3, "k"), 1, 3)
        loss, grad = ctc_forward_backward(lp, [1, 2])
        assert math.isinf(loss)
        assert np.array_equal(grad, np.zeros_like(grad))

    def test_empty_target_scores_blank_path(self):
        lp = random_log_probs(rng_for(4, "k"), 4, 3)
        loss, _ = ctc_forward_backward(lp, [])
        assert loss == pytest.approx(-lp[:, 0].sum(), abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = rng_for(5, "k")
        h = 1e-6
        for _ in range(20):
            t_len = int(rng.integers(2, 7))
            vocab = int(rng.integers(2, 5))
            target = [int(x) for x in rng.integers(1, vocab, size=rng.integers(1, 4))]
            lp = random_log_probs(rng, t_len, vocab)
            loss, grad = ctc_forward_backward(lp, target)
            if math.isinf(loss):
                continue
            for _ in range(4):
                t = int(rng.integers(0, t_len))
                k = int(rng.integers(0, vocab))
                bumped = lp.copy()
                bumped[t, k] += h
                up, _ = ctc_forward_backward(bumped, target)
                bumped[t, k] -= 2 * h
                down, _ = ctc_forward_backward(bumped, target)
                fd = (up - down) / (2 * h)
                assert grad[t, k] == pytest.approx(fd, abs=1e-6)

    def test_grad_rows_sum_to_minus_one(self):
        # posteriors per frame sum to 1, so d(nll)/d(log p) rows sum to -1;
        # chained through log-softmax that is what makes logit rows sum to 0
        rng = rng_for(6, "k")
        lp = random_log_probs(rng, 5, 4)
        _, grad = ctc_forward_backward(lp, [1, 2])
        np.testing.assert_allclose(grad.sum(axis=1), -1.0, atol=1e-9)

    def test_permutation_covariance_under_relabeling(self):
        rng = rng_for(7, "k")
        lp = random_log_probs(rng, 5, 4)
        loss_a, _ = ctc_forward_backward(lp, [1, 3])
        swapped = lp[:, [0, 3, 2, 1]]  # swap symbols 1 and 3
        loss_b, _ = ctc_forward_backward(swapped, [3, 1])
        assert loss_a == pytest.approx(loss_b, abs=1e-12)


class TestLevenshtein:
    @pytest.mark.parametrize(
        "a,b,want",
        [
            ([], [], 0),
            ([1, 2, 3], [1, 2, 3], 0),
            ([1, 2, 3, 4], [1, 9, 3, 4], 1),
            ([1, 2, 3], [1, 2], 1),
            ([], [5, 6], 2),
            ([1, 2, 3], [3, 2, 1], 2),
        ],
    )
    def test_known_distances(self, a, b, want):
        assert levenshtein(a, b) == want

    def test_symmetry_and_triangle(self):
        rng = rng_for(8, "lev")
        for _ in range(50):
            a = list(rng.integers(0, 4, size=rng.integers(0, 8)))
            b = list(rng.integers(0, 4, size=rng.integers(0, 8)))
            c = list(rng.integers(0, 4, size=rng.integers(0, 8)))
            assert levenshtein(a, b) == levenshtein(b, a)
            assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


@needs_ext
class TestBackendParity:
    """Pure and compiled backends must agree bit-for-bit."""

    def test_backend_selected(self):
        import os

        want = "pure" if os.environ.get("DUPLEXASR_PURE") else "compiled"
        assert BACKEND == want

    def test_ctc_bitwise(self):
        rng = rng_for(9, "parity")
        for _ in range(100):
            t_len = int(rng.integers(1, 12))
            vocab = int(rng.integers(2, 8))
            target = [int(x) for x in rng.integers(1, vocab, size=rng.integers(0, 5))]
            lp = random_log_probs(rng, t_len, vocab)
            loss_c, grad_c = _hotpath.ctc_forward_backward(lp, target)
            loss_p, grad_p = pure.ctc_forward_backward(lp, target)
            assert loss_c == loss_p or (math.isinf(loss_c) and math.isinf(loss_p))
            assert np.array_equal(grad_c, grad_p)

    def test_prefix_beam_bitwise(self):
        rng = rng_for(10, "parity")
        for _ in range(30):
            t_len = int(rng.integers(1, 10))
            vocab = int(rng.integers(2, 6))
            lp = random_log_probs(rng, t_len, vocab)
            beams_c = [((), 0.0, float("-inf"))]
            beams_p = [((), 0.0, float("-inf"))]
            for row in lp:
                beams_c = _hotpath.prefix_beam_step(beams_c, row, 8)
                beams_p = pure.prefix_beam_step(beams_p, row, 8)
                assert beams_c == beams_p

    def test_levenshtein_agrees(self):
        rng = rng_for(11, "parity")
        for _ in range(50):
            a = list(rng.integers(0, 5, size=rng.integers(0, 20)))
            b = list(rng.integers(0, 5, size=rng.integers(0, 20)))
            assert _hotpath.levenshtein(a, b) == pure.levenshtein(a, b)
