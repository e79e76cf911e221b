import numpy as np
import pytest

from mcfr.errors import CheckpointError, ConfigError
from mcfr.network import (
    ABLATION_VARIANTS,
    AblationFlags,
    MCFRConfig,
    MCFRModel,
    TrainBatch,
    ablation_flags,
    backward,
    channel_transform_tau,
    cfe_forward,
    classify_features,
    default_sgd_config,
    features_forward,
    forward,
    fuse_and_classify,
    load_checkpoint,
    save_checkpoint,
    train_step,
    uer_forward,
)
from mcfr.nn import SGDState, finite_diff_check, softmax_ce_backward, softmax_ce_forward
from mcfr.snn import UeeNetwork


def rand_inputs(config, n, seed=0):
    rng = np.random.default_rng(seed)
    s = config.input_crop
    assembled = rng.random((n, 7, s, s))
    uee_feat = None
    if config.ablation.use_uee:
        h, w = config.feature_hw
        uee_feat = rng.random((n, config.uee.channels[-1], h, w))
    return assembled, uee_feat


class TestTau:
    def test_identity_projection(self):
        model = MCFRModel.initialize(MCFRConfig.tiny(), seed=0)
        w = np.zeros_like(model.params["tau.w"])
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        model.params["tau.w"] = w
        model.params["tau.b"][:] = 0.0
        x = np.random.default_rng(1).random((2, 7, 19, 19))
        y = channel_transform_tau(model, x)
        assert np.allclose(y, x[:, :3])

    def test_zero_weights(self):
        model = MCFRModel.initialize(MCFRConfig.tiny(), seed=0)
        model.params["tau.w"] = np.zeros_like(model.params["tau.w"])
        model.params["tau.b"][:] = 0.0
        x = np.random.default_rng(2).random((1, 7, 19, 19))
        assert not channel_transform_tau(model, x).any()

    def test_matches_pointwise_matrix_oracle(self):
        model = MCFRModel.initialize(MCFRConfig.tiny(), seed=3)
        rng = np.random.default_rng(4)
        x = rng.random((2, 7, 19, 19))
        y = channel_transform_tau(model, x)
        w = model.params["tau.w"][:, :, 0, 0]  # (3, 7)
        b = model.params["tau.b"]
        for n in (0, 1):
            for i in (0, 7, 18):
                for j in (3, 11):
                    expect = w @ x[n, :, i, j] + b
                    assert np.allclose(y[n, :, i, j], expect, atol=1e-12)


class TestBranches:
    def test_cfe_default_shape(self):
        config = MCFRConfig()
        assert config.feature_hw == (3, 3)
        model = MCFRModel.initialize(config, seed=0)
        x = np.random.default_rng(0).random((1, 3, 107, 107))
        assert cfe_forward(model, x).shape == (1, 512, 3, 3)

    def test_cfe_zero_input_zero_output(self):
        model = MCFRModel.initialize(MCFRConfig.tiny(), seed=0)
        y = cfe_forward(model, np.zeros((1, 3, 19, 19)))
        assert not y.any()  # biases start at zero

    def test_cfe_positive_homogeneity(self):
        # zero biases make the conv+relu+pool stack positively homogeneous
        model = MCFRModel.initialize(MCFRConfig.reduced(), seed=1)
        x = np.random.default_rng(1).standard_normal((1, 3, 75, 75))
        y1 = cfe_forward(model, x)
        y2 = cfe_forward(model, 2.0 * x)
        assert np.allclose(y2, 2.0 * y1, atol=1e-9)

    def test_uer_matches_cfe_spatial(self):
        for config in (MCFRConfig(), MCFRConfig.reduced(), MCFRConfig.tiny()):
            model = MCFRModel.initialize(config, seed=0)
            s = config.input_crop
            rgb = np.random.default_rng(0).random((1, 3, s, s))
            out = uer_forward(model, rgb)
            assert out.shape[2:] == config.feature_hw
            assert out.shape[1] == config.uer[-1].out_channels

    def test_uer_zero_input(self):
        model = MCFRModel.initialize(MCFRConfig.tiny(), seed=0)
        assert not uer_forward(model, np.zeros((1, 3, 19, 19))).any()

    def test_uer_pointwise_layers_commute_with_permutation(self):
        # blocks 2 and 3 are 1x1: shuffling spatial positions of their input
        # shuffles their output identically (tiny config has no pools)
        from mcfr.network import _blocks_forward

        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=5)
        rng = np.random.default_rng(6)
        x = rng.random((1, 4, 5, 5))  # after block 1: 4 channels
        perm = rng.permutation(25)

        def run_tail(inp):
            out = inp
            for i in (1, 2):
                spec = config.uer[i]
                from mcfr.nn import conv2d_forward, relu_forward

                out, _ = conv2d_forward(
                    out, model.params[f"uer.{i}.w"], model.params[f"uer.{i}.b"],
                    spec.stride, spec.padding,
                )
                out, _ = relu_forward(out)
            return out

        y = run_tail(x)
        x_perm = x.reshape(1, 4, 25)[:, :, perm].reshape(1, 4, 5, 5)
        y_perm = run_tail(x_perm)
        assert np.allclose(
            y.reshape(1, -1, 25)[:, :, perm], y_perm.reshape(1, -1, 25), atol=1e-12
        )


class TestFusion:
    def test_logits_shape(self):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=0)
        assembled, uee_feat = rand_inputs(config, 3)
        logits, _ = forward(model, assembled, uee_feat, domain=0)
        assert logits.shape == (3, 2)

    def test_domains_differ(self):
        config = MCFRConfig.tiny(num_domains=2)
        model = MCFRModel.initialize(config, seed=0)
        assembled, uee_feat = rand_inputs(config, 2)
        l0, _ = forward(model, assembled, uee_feat, domain=0)
        l1, _ = forward(model, assembled, uee_feat, domain=1)
        assert not np.allclose(l0, l1)

    def test_invalid_domain(self):
        config = MCFRConfig.tiny(num_domains=2)
        model = MCFRModel.initialize(config, seed=0)
        assembled, uee_feat = rand_inputs(config, 1)
        with pytest.raises(ConfigError):
            forward(model, assembled, uee_feat, domain=2)

    def test_fuse_and_classify_branch_features(self):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=0)
        rng = np.random.default_rng(7)
        h, w = config.feature_hw
        f_uee = rng.random((2, config.uee.channels[-1], h, w))
        f_cfe = rng.random((2, config.cfe[-1].out_channels, h, w))
        f_uer = rng.random((2, config.uer[-1].out_channels, h, w))
        logits = fuse_and_classify(model, f_uee, f_cfe, f_uer, domain=0)
        assert logits.shape == (2, 2)

    def test_fusion_width_tracks_enabled_branches(self):
        base = MCFRConfig.tiny()
        full_width = base.fusion_in_channels
        for variant, overrides in ABLATION_VARIANTS.items():
            cfg = base.with_ablation(variant)
            expect = 0
            flags = cfg.ablation
            if flags.use_uee:
                expect += base.uee.channels[-1]
            if flags.use_cfe:
                expect += base.cfe[-1].out_channels
            if flags.use_uer:
                expect += base.uer[-1].out_channels
            assert cfg.fusion_in_channels == expect
            if overrides.get("use_uee") is False or overrides.get("use_cfe") is False \
                    or overrides.get("use_uer") is False:
                assert cfg.fusion_in_channels < full_width

    def test_all_variants_forward(self):
        for variant in ABLATION_VARIANTS:
            config = MCFRConfig.tiny(ablation=ablation_flags(variant))
            model = MCFRModel.initialize(config, seed=0)
            assembled, uee_feat = rand_inputs(config, 2, seed=1)
            logits, _ = forward(model, assembled, uee_feat, domain=0)
            assert logits.shape == (2, 2)

    def test_variant_fingerprints_distinct(self):
        prints = {
            variant: MCFRConfig.tiny(ablation=ablation_flags(variant)).fingerprint()
            for variant in ABLATION_VARIANTS
        }
        assert len(set(prints.values())) == len(prints)


class TestTrainStep:
    def make_batch(self, config, n_pos=2, n_neg=2, seed=0):
        assembled, uee_feat = rand_inputs(config, n_pos + n_neg, seed=seed)
        labels = np.array([1] * n_pos + [0] * n_neg)
        return TrainBatch(assembled=assembled, uee_feat=uee_feat, labels=labels)

    def test_zero_lr_keeps_loss(self):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=0)
        batch = self.make_batch(config)
        cfg = default_sgd_config()
        cfg.lr = {"fc6": 0.0}
        cfg.default_lr = 0.0
        cfg.weight_decay = 0.0
        state = SGDState()
        l1 = train_step(model, batch, 0, cfg, state)
        l2 = train_step(model, batch, 0, cfg, state)
        assert l1 == pytest.approx(l2, abs=1e-15)

    def test_empty_batch_rejected(self):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=0)
        batch = TrainBatch(
            assembled=np.zeros((0, 7, 19, 19)), uee_feat=np.zeros((0, 4, 2, 2)),
            labels=np.zeros(0, dtype=int),
        )
        with pytest.raises(ConfigError):
            train_step(model, batch, 0, default_sgd_config(), SGDState())

    def test_single_sample_overfit(self):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=0)
        batch = self.make_batch(config, n_pos=1, n_neg=1, seed=3)
        cfg = default_sgd_config()
        state = SGDState()
        losses = [train_step(model, batch, 0, cfg, state) for _ in range(200)]
        assert losses[-1] < 0.01
        assert losses[-1] < losses[0]

    def test_uee_frozen_through_training(self):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=0)
        before = [l.weights.copy() for l in model.uee.layers]
        batch = self.make_batch(config)
        state = SGDState()
        for _ in range(5):
            train_step(model, batch, 0, default_sgd_config(), state)
        for b, l in zip(before, model.uee.layers):
            assert np.array_equal(b, l.weights)

    def test_domain_isolation(self):
        config = MCFRConfig.tiny(num_domains=3)
        model = MCFRModel.initialize(config, seed=0)
        frozen = {
            k: v.copy() for k, v in model.params.items()
            if k.startswith(("fc6.0", "fc6.2"))
        }
        shared_before = model.params["fc4.w"].copy()
        batch = self.make_batch(config)
        train_step(model, batch, 1, default_sgd_config(), SGDState())
        for k, v in frozen.items():
            assert np.array_equal(v, model.params[k]), k
        assert not np.array_equal(shared_before, model.params["fc4.w"])
        assert not np.array_equal(
            model.params["fc6.1.w"], np.zeros_like(model.params["fc6.1.w"])
        )


class TestEndToEndGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_full_path_finite_diff(self, seed):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=seed)
        rng = np.random.default_rng(100 + seed)
        assembled, uee_feat = rand_inputs(config, 2, seed=200 + seed)
        labels = np.array([1, 0])

        def loss_fn():
            logits, _ = forward(model, assembled, uee_feat, 0)
            loss, _ = softmax_ce_forward(logits, labels)
            return loss

        logits, cache = forward(model, assembled, uee_feat, 0)
        loss, ce_cache = softmax_ce_forward(logits, labels)
        grads = backward(model, cache, softmax_ce_backward(ce_cache))
        report = finite_diff_check(
            loss_fn, model.params, grads, tolerance=1e-5, coords_per_param=3,
            rng=rng,
        )
        assert report.passed, report.per_param


class TestCheckpoint:
    def test_round_trip_forward_agreement(self, tmp_path):
        config = MCFRConfig.tiny(num_domains=2)
        model = MCFRModel.initialize(config, seed=0)
        path = tmp_path / "model.mcfr"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assembled, uee_feat = rand_inputs(config, 2, seed=9)
        l1, _ = forward(model, assembled, uee_feat, 1)
        l2, _ = forward(loaded, assembled, uee_feat, 1)
        assert np.allclose(l1, l2, atol=1e-5)
        assert loaded.config == config

    def test_truncated_rejected(self, tmp_path):
        config = MCFRConfig.tiny()
        model = MCFRModel.initialize(config, seed=0)
        path = tmp_path / "model.mcfr"
        save_checkpoint(model, path)
        data = path.read_bytes()
        bad = tmp_path / "bad.mcfr"
        bad.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.mcfr"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_domain_count_preserved(self, tmp_path):
        config = MCFRConfig.tiny(num_domains=3)
        model = MCFRModel.initialize(config, seed=0)
        path = tmp_path / "model.mcfr"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.config.num_domains == 3
        assembled, uee_feat = rand_inputs(config, 1, seed=2)
        for k in range(3):
            logits, _ = forward(loaded, assembled, uee_feat, k)
            assert logits.shape == (1, 2)
        with pytest.raises(ConfigError):
            forward(loaded, assembled, uee_feat, 3)

    def test_single_branch_replacement(self):
        config = MCFRConfig.tiny(num_domains=3)
        model = MCFRModel.initialize(config, seed=0)
        single = model.with_single_branch(seed=1)
        assert single.config.num_domains == 1
        assert "fc6.1.w" not in single.params
        assert np.array_equal(single.params["fc4.w"], model.params["fc4.w"])
