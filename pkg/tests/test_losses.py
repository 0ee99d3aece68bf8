import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cape.autodiff import Tensor, backward, parameter
from cape.mesh import build_topology
from cape.training.losses import LossWeights, loss_edge, loss_gan, loss_kl, loss_recon, loss_total

from conftest import gradient_check

TOL = 1e-5


def single_edge():
    g = build_topology([(0, 1, 2)], 3)
    return g.incidence()[:1]  # edge (0, 1) only


class TestRecon:
    def test_identical_is_zero(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 5, 3)))
        assert float(loss_recon(x, x).data) == 0.0

    def test_constant_offset_sum_convention(self):
        x = np.zeros((4, 7, 3))
        assert float(loss_recon(Tensor(x + 0.5), Tensor(x)).data) == pytest.approx(0.5 * 3 * 7)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((3, 6, 3)), rng.standard_normal((3, 6, 3))
        oracle = sum(abs(a[i, v, c] - b[i, v, c]) for i in range(3) for v in range(6) for c in range(3)) / 3
        assert float(loss_recon(Tensor(a), Tensor(b)).data) == pytest.approx(oracle, rel=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_recon(Tensor(np.zeros((1, 3, 3))), Tensor(np.zeros((1, 4, 3))))


class TestEdge:
    def test_identical_is_zero(self, sphere42):
        x = Tensor(np.random.default_rng(2).standard_normal((2, 42, 3)))
        assert float(loss_edge(x, x, sphere42[2].incidence()).data) == 0.0

    def test_single_edge_hand_case(self):
        x = np.zeros((1, 3, 3))
        x[0, 0] = [1.0, 0, 0]
        assert float(loss_edge(Tensor(np.zeros((1, 3, 3))), Tensor(x), single_edge()).data) == pytest.approx(1.0)

    def test_length_mode(self):
        x = np.zeros((1, 3, 3))
        x[0, 0] = [3.0, 0, 0]
        y = np.zeros((1, 3, 3))
        y[0, 0] = [0, 4.0, 0]
        inc = single_edge()
        assert float(loss_edge(Tensor(y), Tensor(x), inc, "length").data) == pytest.approx(1.0)
        assert float(loss_edge(Tensor(y), Tensor(x), inc, "vector").data) == pytest.approx(5.0)
        with pytest.raises(ValueError):
            loss_edge(Tensor(y), Tensor(x), inc, "angle")

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_translation_invariance(self, seed):
        from conftest import random_connected_graph

        rng = np.random.default_rng(seed)
        g = random_connected_graph(rng, int(rng.integers(3, 30)))
        a, b = rng.standard_normal((2, g.vertex_count, 3)), rng.standard_normal((2, g.vertex_count, 3))
        t = rng.standard_normal(3) * 10
        inc = g.incidence()
        base = float(loss_edge(Tensor(a), Tensor(b), inc).data)
        assert float(loss_edge(Tensor(a + t), Tensor(b), inc).data) == pytest.approx(base, rel=1e-9, abs=1e-12)
        assert float(loss_edge(Tensor(a), Tensor(b + t), inc).data) == pytest.approx(base, rel=1e-9, abs=1e-12)


class TestKL:
    def test_prior_is_zero(self):
        assert float(loss_kl(Tensor(np.zeros((3, 18))), Tensor(np.zeros((3, 18)))).data) == 0.0

    def test_unit_mean_closed_form(self):
        mu = np.zeros((1, 18))
        mu[0, 0] = 1.0
        assert float(loss_kl(Tensor(mu), Tensor(np.zeros((1, 18)))).data) == pytest.approx(0.5)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        mu, lv = rng.normal(0, 3, (2, 18)), rng.uniform(-20, 20, (2, 18))
        assert float(loss_kl(Tensor(mu), Tensor(lv)).data) >= 0.0


class TestGan:
    def test_half_scores(self):
        half = Tensor(np.full((2, 4), 0.5))
        d, g = loss_gan(half, half)
        assert float(d.data) == pytest.approx(2 * math.log(2), rel=1e-15)
        assert float(g.data) == pytest.approx(math.log(2), rel=1e-15)

    def test_perfect_discriminator(self):
        d, _ = loss_gan(Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4))))
        assert float(d.data) == pytest.approx(0.0, abs=1e-11)

    def test_generator_only(self):
        d, g = loss_gan(None, Tensor(np.full((1, 3), 0.25)))
        assert d is None and float(g.data) == pytest.approx(math.log(4))

    def test_random_scores_match_scalar_oracle(self):
        rng = np.random.default_rng(3)
        r, f = rng.uniform(0.01, 0.99, (2, 5)), rng.uniform(0.01, 0.99, (2, 5))
        d, g = loss_gan(Tensor(r), Tensor(f))
        d_oracle = -np.mean([math.log(v) for v in r.ravel()]) - np.mean([math.log(1 - v) for v in f.ravel()])
        g_oracle = -np.mean([math.log(v) for v in f.ravel()])
        assert float(d.data) == pytest.approx(d_oracle, rel=1e-13)
        assert float(g.data) == pytest.approx(g_oracle, rel=1e-13)


class TestTotal:
    def test_zero_weights_equal_recon(self):
        parts = {k: Tensor(v) for k, v in {"recon": 1.25, "edge": 3.0, "kl": 7.0, "gan": 0.5}.items()}
        assert float(loss_total(parts, LossWeights(0, 0, 0)).data) == 1.25

    def test_unit_parts_unit_weights(self):
        parts = {k: Tensor(1.0) for k in ("recon", "edge", "kl", "gan")}
        assert float(loss_total(parts, LossWeights(1, 1, 1)).data) == 4.0

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(gamma_kl=-1)
        with pytest.raises(ValueError):
            LossWeights(gamma_edge=float("nan"))


class TestGradients:
    def test_all_four_losses(self, small_mesh):
        rng = np.random.default_rng(4)
        inc = small_mesh[2].incidence()
        x_hat = parameter(rng.standard_normal((2, 50, 3)))
        x = Tensor(rng.standard_normal((2, 50, 3)))
        mu, lv = parameter(rng.standard_normal((2, 18))), parameter(rng.standard_normal((2, 18)))
        s = parameter(rng.uniform(0.1, 0.9, (2, 4)))
        f = parameter(rng.uniform(0.1, 0.9, (2, 4)))
        assert gradient_check(lambda: loss_recon(x_hat, x), [x_hat]) <= TOL
        assert gradient_check(lambda: loss_edge(x_hat, x, inc), [x_hat]) <= TOL
        assert gradient_check(lambda: loss_edge(x_hat, x, inc, "length"), [x_hat]) <= TOL
        assert gradient_check(lambda: loss_kl(mu, lv), [mu, lv]) <= TOL
        assert gradient_check(lambda: loss_gan(s, f)[0], [s, f]) <= TOL
        assert gradient_check(lambda: loss_gan(None, f)[1], [f]) <= TOL

    def test_total_backward_sums_weighted_parts(self):
        a = parameter([2.0])
        parts = {"recon": a * 1.0, "edge": a * 3.0}
        backward(loss_total(parts, LossWeights(gamma_edge=0.5)))
        assert a.grad[0] == pytest.approx(2.5)
