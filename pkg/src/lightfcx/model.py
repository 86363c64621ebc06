"""Full tracking network: backbone -> template aggregation -> interaction ->
cross-modal fusion -> concat -> prediction head(s).

Single-box variants (rgbt/rgbd/rgbe) run the fused ECAM and one head on the
416-channel concatenation [fused; X_rgb; X_x]. The spatially misaligned rgbs
variant runs the split ECAM and two independent heads, each on its modality's
256-channel concatenation [out_i; X_i]. STAM is built only when enabled; a
disabled or absent STAM passes the fixed template through untouched, which is
exactly the phase-1 (spatial-only) model.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import StubBackbone
from .ecam import EcamStack
from .errors import ConfigError, ContractError
from .head import RepCenterHead
from .layers import Module
from .params import ParamStore
from .stam import Stam
from .tsaim import Tsaim

FUSED_HEAD_CHANNELS = 160 + 160 + 96   # [fused; X_r; X_x]
SPLIT_HEAD_CHANNELS = 160 + 96         # [out_i; X_i]


class TrackerNet(Module):
    def __init__(self, config, seed=0):
        super().__init__()
        config.validate()
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        bkw = dict(widths=config.backbone_widths, mean=config.norm_mean,
                   std=config.norm_std)
        self.backbone = self.add(StubBackbone(self.store, "backbone", rng, **bkw))
        if config.share_backbone:
            self.backbone_x = self.backbone
        else:
            self.backbone_x = self.add(StubBackbone(self.store, "backbone_x", rng, **bkw))
        self.tsaim_rgb = self.add(Tsaim(self.store, "tsaim.rgb", rng))
        self.tsaim_x = self.add(Tsaim(self.store, "tsaim.x", rng))
        self.ecam = self.add(EcamStack(self.store, "ecam",
                                       variant=config.ecam_variant,
                                       depth=config.ecam_stack_depth, rng=rng))
        if config.variant == "rgbs":
            self.head_rgb = self.add(RepCenterHead(self.store, "head.rgb",
                                                   SPLIT_HEAD_CHANNELS, rng))
            self.head_x = self.add(RepCenterHead(self.store, "head.x",
                                                 SPLIT_HEAD_CHANNELS, rng))
            self.head = None
        else:
            self.head = self.add(RepCenterHead(self.store, "head",
                                               FUSED_HEAD_CHANNELS, rng))
            self.head_rgb = self.head_x = None
        # built last so earlier parameters are seed-identical with/without it
        if config.stam_enabled:
            self.stam_rgb = self.add(Stam(self.store, "stam.rgb", rng,
                                          tie_branches=config.tie_stam_branches))
            self.stam_x = self.add(Stam(self.store, "stam.x", rng,
                                        tie_branches=config.tie_stam_branches))
        else:
            self.stam_rgb = self.stam_x = None

    # -- feature extraction --------------------------------------------------

    def features(self, pixels, modality="rgb"):
        """Standardized pixel batch (N, 3, H, W) -> feature Tensor."""
        net = self.backbone if modality == "rgb" else self.backbone_x
        return net(pixels if isinstance(pixels, T.Tensor) else T.Tensor(pixels))

    def aggregate_template(self, z_fixed, z_dyn, modality="rgb", use_stam=None):
        """STAM aggregation, or the fixed template when STAM is off/absent."""
        if use_stam is None:
            use_stam = self.stam_rgb is not None
        if not use_stam:
            return z_fixed
        if self.stam_rgb is None:
            raise ContractError("STAM requested but the model was built without it")
        stam = self.stam_rgb if modality == "rgb" else self.stam_x
        return stam(z_fixed, z_dyn)

    # -- fusion and heads ------------------------------------------------------

    def forward_features(self, z_rt, z_xt, x_r, x_x):
        """Aggregated templates + search features -> head output(s)."""
        f_r = self.tsaim_rgb(z_rt, x_r)
        f_x = self.tsaim_x(z_xt, x_x)
        out = self.ecam(f_r, f_x)
        if self.config.variant == "rgbs":
            if out.fused is not None:
                raise ConfigError("rgbs wiring needs the split ECAM variant")
            fusion_r = T.concat([out.rgb_out, x_r], axis=1)
            fusion_x = T.concat([out.x_out, x_x], axis=1)
            return self.head_rgb(fusion_r), self.head_x(fusion_x)
        if out.fused is None:
            raise ConfigError("single-box wiring needs the fused ECAM variant")
        fusion = T.concat([out.fused, x_r, x_x], axis=1)
        return self.head(fusion)

    def forward(self, z_r, z_x, x_r, x_x, zd_r=None, zd_x=None, use_stam=None):
        """End-to-end forward from feature maps (templates may be raw fixed)."""
        z_rt = self.aggregate_template(z_r, zd_r if zd_r is not None else z_r,
                                       "rgb", use_stam)
        z_xt = self.aggregate_template(z_x, zd_x if zd_x is not None else z_x,
                                       "x", use_stam)
        return self.forward_features(z_rt, z_xt, x_r, x_x)

    def fuse_heads(self):
        for h in (self.head, self.head_rgb, self.head_x):
            if h is not None:
                h.fuse()
        return self

    # -- reporting --------------------------------------------------------------

    def param_groups(self):
        """Ordered (prefix, parameter count) rows for the params table."""
        groups = ["backbone"]
        if not self.config.share_backbone:
            groups.append("backbone_x")
        groups += ["tsaim.rgb", "tsaim.x"]
        groups += [f"ecam.{k}" for k in range(self.config.ecam_stack_depth)]
        groups += ["stam.rgb", "stam.x"]
        if self.config.variant == "rgbs":
            groups += ["head.rgb", "head.x"]
        else:
            groups += ["head"]
        return [(g, self.store.count(g + ".")) for g in groups]

    def macs_table(self):
        """Per-module multiply-accumulate counts at the configured sizes."""
        cfg = self.config
        tz, tx = cfg.template_cells, cfg.search_cells
        rows = [("backbone (template, per modality)",
                 self.backbone.macs(cfg.template_size, cfg.template_size)),
                ("backbone (search, per modality)",
                 self.backbone.macs(cfg.search_size, cfg.search_size)),
                ("tsaim (per modality)", self.tsaim_rgb.macs(tz, tz, tx, tx)),
                ("ecam stack", self.ecam.macs(tx, tx))]
        if self.stam_rgb is not None:
            rows.append(("stam (per modality)", self.stam_rgb.macs(tz, tz)))
        if cfg.variant == "rgbs":
            rows.append(("head (per modality)", self.head_rgb.macs(tx, tx)))
        else:
            rows.append(("head", self.head.macs(tx, tx)))
        return rows
