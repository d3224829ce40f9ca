import numpy as np
import pytest

from pednet import layers as L
from pednet import models
from pednet.errors import ConfigError

TABLE1_COUNTS = {
    1: (24_639_878, 1_052_166),
    2: (27_785_606, 4_197_894),
    3: (24_639_878, 1_052_166),
    4: (27_785_606, 4_197_894),
    5: (524_998, 524_038),
    6: (1_573_574, 1_572_614),
    7: (524_998, 524_038),
    8: (1_573_574, 1_572_614),
}


class TestRegistry:
    def test_model_4(self):
        cfg = models.registry_lookup(4)
        assert (cfg.architecture, cfg.pooling, cfg.optimizer) == \
            ("resnet50", "MP", "sgd_momentum")
        assert (cfg.lr_initial, cfg.lr_finetune) == (0.01, 0.001)

    def test_model_8(self):
        cfg = models.registry_lookup(8)
        assert (cfg.architecture, cfg.pooling, cfg.optimizer) == \
            ("custom", "MP", "sgd_momentum")
        assert (cfg.lr_initial, cfg.lr_finetune) == (0.001, None)

    def test_model_1(self):
        cfg = models.registry_lookup(1)
        assert (cfg.architecture, cfg.pooling, cfg.optimizer) == \
            ("resnet50", "GAP", "adam")
        assert (cfg.lr_initial, cfg.lr_finetune) == (0.0001, 0.00001)

    @pytest.mark.parametrize("bad", [0, 9, -1])
    def test_out_of_range(self, bad):
        with pytest.raises(ConfigError):
            models.registry_lookup(bad)


class TestParameterCounts:
    @pytest.mark.parametrize("model_id", [5, 6])
    def test_custom(self, model_id):
        cfg = models.registry_lookup(model_id)
        _, total, trainable = models.build_model(cfg, seed=0).summary()
        assert (total, trainable) == TABLE1_COUNTS[model_id]

    @pytest.mark.parametrize("model_id", [1, 2])
    def test_resnet(self, model_id):
        cfg = models.registry_lookup(model_id)
        _, total, trainable = models.build_model(cfg, seed=0).summary()
        assert (total, trainable) == TABLE1_COUNTS[model_id]

    def test_custom_gap_per_layer_breakdown(self):
        model = models.build_custom_cnn("GAP", seed=0)
        ledger, _, trainable = model.summary()
        got = [e.trainable for e in ledger if e.trainable]
        assert got == [896, 64, 18_496, 128, 73_856, 256, 295_168, 512,
                       131_584, 3_078]
        assert trainable == 524_038

    def test_custom_mp_flatten_width(self):
        model = models.build_custom_cnn("MP", seed=0)
        dense1 = next(n.layer for n in model.nodes if n.name == "head_dense1")
        assert dense1.in_features == 3 * 3 * 256

    def test_resnet_mp_flatten_width(self):
        model = models.build_resnet50("MP", seed=0)
        dense1 = next(n.layer for n in model.nodes if n.name == "head_dense1")
        assert dense1.in_features == 2 * 2 * 2048

    def test_all_frozen_trainable_zero(self):
        model = models.build_custom_cnn("GAP", seed=0)
        for node in model.nodes:
            L.set_trainable(node.layer, False)
        _, total, trainable = model.summary()
        assert trainable == 0
        assert total == 524_998

    def test_resnet_full_unfreeze(self):
        model = models.build_resnet50("MP", seed=0)
        for node in model.nodes:
            L.set_trainable(node.layer, True)
        _, total, trainable = model.summary()
        assert total == 27_785_606
        # non-trainable residue is exactly the moving statistics:
        # 2 values per batchnorm channel in the backbone
        bn_channels = sum(
            n.layer.channels for n in model.nodes[:model.backbone_len]
            if n.layer.kind == "batchnorm")
        assert total - trainable == 2 * bn_channels
        assert total - trainable == 53_120


class TestBuildProperties:
    def test_same_seed_bit_identical(self):
        a = models.build_custom_cnn("MP", seed=5)
        b = models.build_custom_cnn("MP", seed=5)
        for (name_a, la, pa), (name_b, lb, pb) in zip(a.named_params(),
                                                      b.named_params()):
            assert name_a == name_b
            assert np.array_equal(la.params[pa], lb.params[pb])

    def test_different_seed_differs(self):
        a = models.build_custom_cnn("GAP", seed=5)
        b = models.build_custom_cnn("GAP", seed=6)
        assert not np.array_equal(
            a.nodes[0].layer.params["weight"],
            b.nodes[0].layer.params["weight"])

    @pytest.mark.parametrize("builder,pooling", [
        (models.build_custom_cnn, "GAP"),
        (models.build_custom_cnn, "MP"),
        (models.build_resnet50, "GAP"),
        (models.build_resnet50, "MP"),
    ])
    def test_forward_batch8_softmax_rows(self, builder, pooling):
        model = builder(pooling, seed=1)
        x = np.random.default_rng(0).random((8, 99, 99, 3), np.float32)
        out = model.forward(x, train=False)
        assert out.shape == (8, 6)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_gap_mp_backbones_identical(self):
        gap = models.build_resnet50("GAP", seed=2)
        mp = models.build_resnet50("MP", seed=2)
        lg, _, _ = gap.summary()
        lm, _, _ = mp.summary()
        n = gap.backbone_len
        assert n == mp.backbone_len
        assert [(e.name, e.kind, e.trainable, e.non_trainable)
                for e in lg[:n]] == \
               [(e.name, e.kind, e.trainable, e.non_trainable)
                for e in lm[:n]]

    def test_resnet_backbone_total(self):
        model = models.build_resnet50("GAP", seed=0)
        ledger, _, _ = model.summary()
        backbone = sum(e.trainable + e.non_trainable
                       for e in ledger[:model.backbone_len])
        assert backbone == 23_587_712

    def test_resnet_feature_map_is_4x4x2048(self):
        model = models.build_resnet50("GAP", seed=0)
        x = np.zeros((1, 99, 99, 3), np.float32)
        model.forward(x, train=False)
        gap_node = next(n for n in model.nodes if n.name == "head_gap")
        assert gap_node.layer.cache == (1, 4, 4, 2048)
