"""Network wiring: fusion channel arithmetic, variants, MAC accounting."""

import numpy as np
import pytest

from lightfcx import tensor as T
from lightfcx.config import TrackerConfig
from lightfcx.errors import ConfigError, ContractError
from lightfcx.model import TrackerNet


def cfg(**kw):
    return TrackerConfig(template_size=64, search_size=128, **kw).validate()


@pytest.fixture(scope="module")
def features():
    rng = np.random.default_rng(0)
    return (T.Tensor(rng.normal(size=(1, 160, 4, 4))),
            T.Tensor(rng.normal(size=(1, 160, 4, 4))),
            T.Tensor(rng.normal(size=(1, 160, 8, 8))),
            T.Tensor(rng.normal(size=(1, 160, 8, 8))))


class TestWiring:
    def test_fused_head_sees_416_channels(self, features):
        net = TrackerNet(cfg(), seed=0).eval()
        assert net.head.in_channels == 416  # 96 + 160 + 160
        out = net.forward(*features)
        assert out.cls.shape == (1, 1, 8, 8)
        assert out.offset.shape == (1, 2, 8, 8)
        assert out.size.shape == (1, 2, 8, 8)

    def test_split_heads_see_256_channels(self, features):
        net = TrackerNet(cfg(variant="rgbs"), seed=0).eval()
        assert net.head_rgb.in_channels == 256  # 96 + 160
        out_r, out_x = net.forward(*features)
        assert out_r.cls.shape == (1, 1, 8, 8)
        assert out_x.cls.shape == (1, 1, 8, 8)

    def test_stam_requested_without_module_rejected(self, features):
        net = TrackerNet(cfg(), seed=0).eval()
        with pytest.raises(ContractError):
            net.forward(*features, use_stam=True)

    def test_stam_disabled_passes_fixed_template(self, features):
        z_r, z_x, x_r, x_x = features
        net = TrackerNet(cfg(stam_enabled=True), seed=0).eval()
        rng = np.random.default_rng(1)
        zd = T.Tensor(rng.normal(size=(1, 160, 4, 4)))
        with_dyn = net.forward(z_r, z_x, x_r, x_x, zd, zd, use_stam=False)
        without = net.forward(z_r, z_x, x_r, x_x, use_stam=False)
        assert np.array_equal(with_dyn.cls.data, without.cls.data)

    def test_param_groups_cover_the_store(self):
        net = TrackerNet(cfg(stam_enabled=True, ecam_stack_depth=2), seed=0)
        groups = dict(net.param_groups())
        assert groups["ecam.0"] == groups["ecam.1"] == 73920
        assert sum(groups.values()) == net.store.count()

    def test_share_backbone_switch(self):
        shared = TrackerNet(cfg(), seed=0)
        split = TrackerNet(cfg(share_backbone=False), seed=0)
        assert shared.backbone is shared.backbone_x
        assert split.backbone is not split.backbone_x
        assert split.store.count("backbone_x.") == split.store.count("backbone.")

    def test_seed_reproducible_construction(self):
        a = TrackerNet(cfg(), seed=42)
        b = TrackerNet(cfg(), seed=42)
        for n in a.store.names():
            assert np.array_equal(a.store.get(n).data, b.store.get(n).data)

    def test_stam_built_last_keeps_other_init_identical(self):
        plain = TrackerNet(cfg(), seed=7)
        with_stam = TrackerNet(cfg(stam_enabled=True), seed=7)
        for n in plain.store.names():
            assert np.array_equal(plain.store.get(n).data,
                                  with_stam.store.get(n).data), n


class TestMacAccounting:
    def test_ecam_total_matches_hand_sum(self):
        # layer-by-layer spreadsheet of one fused block at 16x16 (T=256)
        net = TrackerNet(TrackerConfig().validate(), seed=0)
        t = 256
        attn = 2 * (2 * t * t * 96) + 2 * (96 * 96 * t)
        down = 192 * 96 * t
        dws = 96 * (9 + 25 + 49) * t
        mix = 96 * 96 * t
        proj = 192 * 96 * t
        hand = attn + down + dws + mix + proj
        assert net.ecam.macs(16, 16) == hand == 43_720_704

    def test_pointwise_conv_row(self):
        from lightfcx.flops import conv2d_macs
        assert conv2d_macs(192, 96, 1, 16, 16) == 192 * 96 * 256

    def test_macs_table_lists_all_modules(self):
        net = TrackerNet(cfg(stam_enabled=True), seed=0)
        names = [n for n, _ in net.macs_table()]
        assert any("backbone" in n for n in names)
        assert any("stam" in n for n in names)
        assert all(v >= 0 for _, v in net.macs_table())
