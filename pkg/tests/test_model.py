import numpy as np
import pytest
import scipy.sparse as sp

from cape.autodiff import Tensor, ops
from cape.data import pose_rotation_features
from cape.net import ArchConfig, CapeNet, architecture_manifest, load_checkpoint, save_checkpoint
from cape.training.losses import loss_recon

from conftest import gradient_check

TINY = dict(width_scale=0.0625)


def conditions(rng, b=2, joints=14, spread=0.5):
    theta = rng.normal(0, spread, (b, joints, 3))
    return pose_rotation_features(theta, range(joints)), np.eye(4)[rng.integers(0, 4, b)]


@pytest.fixture(scope="module")
def net(small_hierarchy):
    return CapeNet.create(small_hierarchy, ArchConfig(**TINY, zero_init_final=False), seed=0)


def embed(net, pose, cloth, tag="g"):
    return net.embed_conditions(Tensor(pose), Tensor(cloth), tag)


class TestShapes:
    def test_heads_decoder_and_scores(self, net):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((3, 50, 3)))
        mu, logvar = net.encode(x)
        assert mu.shape == logvar.shape == (3, 18)
        assert net.params["g.dec.fc.w"].shape[0] == 18 + 24 + 8
        zp, zc = embed(net, *conditions(rng, 3))
        assert zp.shape == (3, 24) and zc.shape == (3, 8)
        assert net.decode(mu, zp, zc).shape == (3, 50, 3)
        dp, dc = embed(net, *conditions(rng, 3), "d")
        assert net.discriminate(x, dp, dc).shape == (3, 4)

    def test_encoder_flattens_third_level(self, net, small_hierarchy):
        bott = net.params["g.enc.bottleneck.w"].shape[1]
        assert net.params["g.enc.mu.w"].shape[0] == bott * small_hierarchy.counts[3]

    def test_topology_mismatch_rejected(self, net):
        with pytest.raises(ValueError):
            net.encode(Tensor(np.zeros((1, 49, 3))))

    @pytest.mark.parametrize("mode,z_in", [("latent", 50), ("tile", 18)])
    def test_conditioning_modes(self, small_hierarchy, mode, z_in):
        n = CapeNet.create(small_hierarchy, ArchConfig(**TINY, conditioning=mode), seed=0)
        assert n.params["g.dec.fc.w"].shape[0] == z_in
        rng = np.random.default_rng(1)
        zp, zc = embed(n, *conditions(rng))
        assert n.decode(Tensor(np.zeros((2, 18))), zp, zc).shape == (2, 50, 3)

    def test_unknown_conditioning_rejected(self):
        with pytest.raises(ValueError):
            ArchConfig(conditioning="both")

    def test_manifest_records_widths_orders_seeds(self, net):
        m = architecture_manifest(net, {"train": 3})
        assert m["level_counts"] == [50, 25, 13, 7, 4]
        assert m["decoder_input_dim"] == 50 and m["discriminator_scores"] == 4
        assert m["widths"]["encoder"] == [4, 4, 8, 8, 16, 16, 32, 32]
        assert m["k_orders"] == {"generator": 2, "discriminator": 3}
        assert m["seeds"] == {"train": 3}


class TestConditions:
    def test_zero_cloth_fc_gives_zero(self, small_hierarchy):
        n = CapeNet.create(small_hierarchy, ArchConfig(**TINY), seed=0)
        n.params["g.cond.cloth.w"].data[:] = 0.0
        _, zc = embed(n, *conditions(np.random.default_rng(0)))
        np.testing.assert_array_equal(zc.data, 0.0)

    def test_rest_pose_input_is_identity_copies(self):
        feats = pose_rotation_features(np.zeros((1, 14, 3)), range(14))
        np.testing.assert_array_equal(feats[0], np.tile(np.eye(3).ravel(), 14))

    def test_distinct_poses_distinct_embeddings(self, net):
        rng = np.random.default_rng(1)
        pose, cloth = conditions(rng, 2)
        cloth[1] = cloth[0]
        zp, _ = embed(net, pose, cloth)
        assert np.linalg.norm(zp.data[0] - zp.data[1]) > 1e-8


class TestEncoderDecoder:
    def test_zero_params_zero_posterior(self, small_hierarchy):
        n = CapeNet.create(small_hierarchy, ArchConfig(**TINY), seed=0)
        for k, v in n.params.items():
            if k.startswith("g.enc"):
                v.data[:] = 0.0
        mu, logvar = n.encode(Tensor(np.zeros((1, 50, 3))))
        np.testing.assert_array_equal(mu.data, 0.0)
        np.testing.assert_array_equal(logvar.data, 0.0)

    def test_zero_init_final_conv_gives_zero_offsets(self, small_hierarchy):
        n = CapeNet.create(small_hierarchy, ArchConfig(**TINY, zero_init_final=True), seed=0)
        rng = np.random.default_rng(2)
        zp, zc = embed(n, *conditions(rng))
        out = n.decode(Tensor(rng.standard_normal((2, 18))), zp, zc)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_decode_is_deterministic(self, net):
        rng = np.random.default_rng(3)
        z, (pose, cloth) = rng.standard_normal((2, 18)), conditions(rng)
        a = net.generate(z, pose, cloth)
        np.testing.assert_array_equal(a, net.generate(z, pose, cloth))

    def test_fixed_z_two_poses_differ(self, net):
        rng = np.random.default_rng(4)
        z = np.repeat(rng.standard_normal((1, 18)), 2, axis=0)
        pose, cloth = conditions(rng)
        cloth[1] = cloth[0]
        out = net.generate(z, pose, cloth)
        assert np.linalg.norm(out[0] - out[1]) > 0

    def test_standardization_roundtrip(self, small_hierarchy):
        n = CapeNet.create(small_hierarchy, ArchConfig(**TINY), seed=0)
        x = np.random.default_rng(5).normal(0.01, 0.003, (20, 50, 3))
        n.set_standardization(x)
        np.testing.assert_allclose(n.destandardize(n.standardize(x)), x, atol=1e-15)
        assert n.standardize(x).std() == pytest.approx(1.0)


class TestReparameterize:
    def test_floor_clamp_gives_mean(self):
        mu = Tensor(np.full((1, 18), 0.3))
        z = CapeNet.reparameterize(mu, Tensor(np.full((1, 18), -1e6)), np.ones((1, 18)))
        np.testing.assert_allclose(z.data, 0.3, atol=1e-4)

    def test_monte_carlo_mean(self):
        eps = np.random.default_rng(6).standard_normal((100_000, 18))
        z = CapeNet.reparameterize(Tensor(np.zeros((100_000, 18))), Tensor(np.zeros((100_000, 18))), eps)
        assert np.abs(z.data.mean(axis=0)).max() <= 0.02

    def test_seeded_reproducible(self):
        mu, lv = Tensor(np.zeros((2, 18))), Tensor(np.zeros((2, 18)))
        a = CapeNet.reparameterize(mu, lv, np.random.default_rng(7).standard_normal((2, 18)))
        b = CapeNet.reparameterize(mu, lv, np.random.default_rng(7).standard_normal((2, 18)))
        np.testing.assert_array_equal(a.data, b.data)


class TestDiscriminator:
    def test_zero_final_conv_scores_half(self, small_hierarchy):
        n = CapeNet.create(small_hierarchy, ArchConfig(**TINY), seed=0)
        n.params["d.out.w"].data[:] = 0.0
        rng = np.random.default_rng(8)
        dp, dc = embed(n, *conditions(rng), "d")
        s = n.discriminate(Tensor(rng.standard_normal((2, 50, 3))), dp, dc)
        np.testing.assert_array_equal(s.data, 0.5)

    def test_condition_changes_scores(self, net):
        rng = np.random.default_rng(9)
        x = Tensor(np.repeat(rng.standard_normal((1, 50, 3)), 2, axis=0))
        pose, _ = conditions(rng)
        pose[1] = pose[0]
        dp, dc = embed(net, pose, np.eye(4)[[0, 2]], "d")
        s = net.discriminate(x, dp, dc).data
        assert np.abs(s[0] - s[1]).max() > 0

    def test_receptive_field_locality(self, smpl_like_small):
        # one perturbed vertex may only move scores inside its propagated support
        n = smpl_like_small
        g = n.graph
        k = n.cfg.k_discriminator
        rng = np.random.default_rng(10)
        dp, dc = embed(n, *conditions(rng, 1), "d")
        x = rng.standard_normal((1, g.counts[0], 3))
        base = n.discriminate(Tensor(x), dp, dc).data[0]

        def reach(lap: sp.csr_matrix) -> sp.csr_matrix:
            step = (abs(lap) + sp.identity(lap.shape[0])).astype(bool).astype(float)
            out = sp.identity(lap.shape[0], format="csr")
            for _ in range(k):
                out = (step @ out).astype(bool).astype(float)
            return out

        support = sp.identity(g.counts[0], format="csr")
        for i in range(4):
            support = (g.down[i].astype(bool).astype(float) @ reach(g.laplacians[i]) @ support).astype(bool).astype(float)
        support = (reach(g.laplacians[4]) @ support).astype(bool).tocsc()

        local_seen = False
        for v in rng.choice(g.counts[0], 8, replace=False):
            xp = x.copy()
            xp[0, v] += 1.0
            changed = np.flatnonzero(np.abs(n.discriminate(Tensor(xp), dp, dc).data[0] - base) > 0)
            allowed = set(support[:, v].indices.tolist())
            assert set(changed.tolist()) <= allowed
            local_seen |= len(allowed) < g.counts[4]
        assert local_seen


@pytest.fixture(scope="module")
def smpl_like_small():
    from cape.mesh import build_sampling_hierarchy, build_topology
    from cape.mesh.primitives import capsule

    pos, faces = capsule(n_rings=60, n_segments=12)
    h = build_sampling_hierarchy(build_topology(faces, len(pos)), pos, [2, 2, 2, 2])
    return CapeNet.create(h, ArchConfig(width_scale=0.0625, k_discriminator=1), seed=0)


class TestInit:
    def test_fixed_seed_identical(self, small_hierarchy):
        a = CapeNet.create(small_hierarchy, ArchConfig(**TINY), seed=5)
        b = CapeNet.create(small_hierarchy, ArchConfig(**TINY), seed=5)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k].data, b.params[k].data)

    def test_large_layer_std(self, small_hierarchy):
        n = CapeNet.create(small_hierarchy, ArchConfig(width_scale=1.0, use_discriminator=False), seed=0)
        w = n.params["g.enc.conv7.w"].data
        assert abs(w.std() / np.sqrt(2 / w.shape[0]) - 1) < 0.1
        np.testing.assert_array_equal(n.params["g.enc.conv7.b"].data, 0.0)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, net, small_hierarchy):
        net.set_standardization(np.random.default_rng(11).normal(0, 0.01, (5, 50, 3)))
        save_checkpoint(tmp_path / "c.cape", net, small_hierarchy, step=7, extra={"a": 1})
        back, h, meta, _ = load_checkpoint(tmp_path / "c.cape")
        assert meta["step"] == 7 and meta["extra"] == {"a": 1}
        assert h.counts == small_hierarchy.counts
        for k in net.params:
            np.testing.assert_array_equal(back.params[k].data, net.params[k].data)
        rng = np.random.default_rng(12)
        z, (pose, cloth) = rng.standard_normal((2, 18)), conditions(rng)
        np.testing.assert_array_equal(back.generate(z, pose, cloth), net.generate(z, pose, cloth))


def test_end_to_end_gradient_unit_tolerance(net):
    """encode -> reparameterize (fixed eps) -> decode -> L1 at the unit tolerance."""
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((2, 50, 3)))
    target = Tensor(rng.standard_normal((2, 50, 3)))
    eps = rng.standard_normal((2, 18))
    pose, cloth = conditions(rng)
    params = list(net.generator_params().values())

    def loss():
        mu, lv = net.encode(x)
        zp, zc = net.embed_conditions(Tensor(pose), Tensor(cloth))
        return loss_recon(net.decode(CapeNet.reparameterize(mu, lv, eps), zp, zc), target)

    assert gradient_check(loss, params, max_entries=4) <= 1e-5
