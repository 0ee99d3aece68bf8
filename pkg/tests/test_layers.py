import numpy as np
import pytest

from cape.autodiff import Tensor, ops
from cape.mesh import combinatorial_laplacian
from cape.net import layers as L

from conftest import gradient_check

TOL = 1e-5


@pytest.fixture(scope="module")
def lap50(small_mesh):
    return combinatorial_laplacian(small_mesh[2]).rescaled


def store(seed=0):
    return L.ParamStore(np.random.default_rng(seed))


def probe(rng, shape):
    """Fixed random projection so every output coordinate matters."""
    return Tensor(rng.standard_normal(shape))


class TestGroupCount:
    @pytest.mark.parametrize("channels,cap,want", [(64, 32, 32), (24, 32, 24), (48, 32, 24), (7, 32, 7), (6, 4, 3), (5, 4, 1)])
    def test_largest_divisor(self, channels, cap, want):
        assert L.gn_groups(channels, cap) == want


class TestInit:
    def test_fan_in_scaled_std(self):
        w = store(1).weight("w", 512, 512).data
        assert abs(w.std() / np.sqrt(2 / 512) - 1) < 0.1

    def test_fixed_seed_identical(self):
        a, b = store(3).weight("w", 10, 4).data, store(3).weight("w", 10, 4).data
        np.testing.assert_array_equal(a, b)

    def test_duplicate_name_rejected(self):
        s = store()
        s.zeros("a", 2)
        with pytest.raises(KeyError):
            s.zeros("a", 2)


class TestChebConv:
    def test_order_zero_is_pointwise_linear(self, lap50):
        s = store()
        L.init_cheb(s, "c", 3, 5, 0)
        x = np.random.default_rng(0).standard_normal((2, 50, 3))
        out = L.cheb_conv(s.params, "c", lap50, Tensor(x), 0).data
        np.testing.assert_allclose(out, x @ s.params["c.w"].data + s.params["c.b"].data, atol=1e-14)

    def test_wrong_order_rejected(self, lap50):
        s = store()
        L.init_cheb(s, "c", 3, 5, 2)
        with pytest.raises(ValueError):
            L.cheb_conv(s.params, "c", lap50, Tensor(np.zeros((1, 50, 3))), 3)

    @pytest.mark.parametrize("k", [0, 2, 3])
    def test_gradient(self, lap50, k):
        rng = np.random.default_rng(k)
        s = store(k)
        L.init_cheb(s, "c", 3, 4, k)
        x = Tensor(rng.standard_normal((2, 50, 3)), requires_grad=True)
        r = probe(rng, (2, 50, 4))
        fn = lambda: ops.sum(ops.mul(L.cheb_conv(s.params, "c", lap50, x, k), r))  # noqa: E731
        assert gradient_check(fn, [x, s.params["c.w"], s.params["c.b"]]) <= TOL


class TestOtherLayers:
    def test_linear_gradient(self):
        rng = np.random.default_rng(1)
        s = store(1)
        L.init_linear(s, "fc", 6, 4)
        x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        r = probe(rng, (3, 4))
        fn = lambda: ops.sum(ops.mul(L.linear(s.params, "fc", x), r))  # noqa: E731
        assert gradient_check(fn, [x, s.params["fc.w"], s.params["fc.b"]]) <= TOL

    def test_group_norm_gradient(self):
        rng = np.random.default_rng(2)
        s = store(2)
        L.init_group_norm(s, "gn", 8)
        s.params["gn.gamma"].data[:] = rng.standard_normal(8)
        x = Tensor(rng.standard_normal((2, 50, 8)), requires_grad=True)
        r = probe(rng, (2, 50, 8))
        fn = lambda: ops.sum(ops.mul(L.group_norm(s.params, "gn", x, 4), r))  # noqa: E731
        assert gradient_check(fn, [x, s.params["gn.gamma"], s.params["gn.beta"]], max_entries=30) <= TOL

    def test_leaky_relu_gradient(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 50, 3)), requires_grad=True)
        r = probe(rng, (2, 50, 3))
        assert gradient_check(lambda: ops.sum(ops.mul(ops.leaky_relu(x), r)), [x], max_entries=40) <= TOL

    def test_sampling_operators_gradient(self, small_hierarchy):
        rng = np.random.default_rng(4)
        lvl = small_hierarchy.levels[0]
        x = Tensor(rng.standard_normal((2, 50, 3)), requires_grad=True)
        c = Tensor(rng.standard_normal((2, lvl.vertex_count, 3)), requires_grad=True)
        r_down, r_up = probe(rng, (2, lvl.vertex_count, 3)), probe(rng, (2, 50, 3))
        down = lambda: ops.sum(ops.mul(ops.sparse_dense_matmul(lvl.down.tocsr(), x), r_down))  # noqa: E731
        up = lambda: ops.sum(ops.mul(ops.sparse_dense_matmul(lvl.up.tocsr(), c), r_up))  # noqa: E731
        assert gradient_check(down, [x]) <= TOL
        assert gradient_check(up, [c]) <= TOL


class TestResBlock:
    def make(self, c_in, c_out, seed=0):
        s = store(seed)
        L.init_res_block(s, "rb", c_in, c_out, 2)
        return s.params

    def test_zero_conv_weights_reduce_to_skip(self, lap50):
        p = self.make(6, 4)
        for name in ("lin1", "conv", "lin2"):
            p[f"rb.{name}.w"].data[:] = 0.0
        x = np.random.default_rng(5).standard_normal((2, 50, 6))
        out = L.res_block(p, "rb", lap50, Tensor(x), 2, 2).data
        skip = x @ p["rb.skip.w"].data + p["rb.skip.b"].data
        np.testing.assert_allclose(out, skip, atol=1e-14)

    def test_identity_skip_when_widths_match(self, lap50):
        p = self.make(4, 4)
        assert "rb.skip.w" not in p
        for name in ("lin1", "conv", "lin2"):
            p[f"rb.{name}.w"].data[:] = 0.0
        x = np.random.default_rng(6).standard_normal((1, 50, 4))
        np.testing.assert_array_equal(L.res_block(p, "rb", lap50, Tensor(x), 2, 2).data, x)

    def test_gradient(self, lap50):
        rng = np.random.default_rng(7)
        p = self.make(6, 4, seed=7)
        for key in p:
            if key.endswith(".b") or key.endswith(".beta"):
                p[key].data[:] = 0.1 * rng.standard_normal(p[key].shape)
        x = Tensor(rng.standard_normal((2, 50, 6)), requires_grad=True)
        r = probe(rng, (2, 50, 4))
        fn = lambda: ops.sum(ops.mul(L.res_block(p, "rb", lap50, x, 2, 2), r))  # noqa: E731
        assert gradient_check(fn, [x, *p.values()]) <= TOL
