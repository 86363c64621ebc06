"""Tracker configuration: defaults, validation and the flat key=value format.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
CLI flags override file values. All keys are documented in docs/config.md.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

VARIANTS = ("rgbt", "rgbd", "rgbe", "rgbs")
MODALITY_DIRS = {"rgbt": "infrared", "rgbd": "depth", "rgbe": "event",
                 "rgbs": "sonar"}


@dataclass
class TrackerConfig:
    variant: str = "rgbt"
    template_size: int = 128
    search_size: int = 256
    template_context: float = 2.0
    search_context: float = 4.0
    update_interval: int = 400
    update_conf_threshold: float = 0.7
    window_influence: float = 0.45
    size_lr: float = 0.33      # smoothing of predicted w/h across frames
    ecam_stack_depth: int = 1
    stam_enabled: bool = False
    tie_stam_branches: bool = False
    share_backbone: bool = True
    backbone_widths: tuple = (32, 64, 128, 160)
    norm_mean: float = 0.5
    norm_std: float = 0.5
    seed: int = 0
    # synthetic sequence generation (config keys synth.*)
    synth_frames: int = 100
    synth_image_size: int = 224
    synth_size_px: int = 44
    synth_speed_px: float = 5.0
    synth_noise: float = 8.0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for field_name in ("template_size", "search_size"):
            v = getattr(self, field_name)
            if v % 16 != 0 or v <= 0:
                raise ConfigError(f"{field_name} must be a positive multiple of 16, got {v}")
        if self.update_interval < 1:
            raise ConfigError(f"update_interval must be >= 1, got {self.update_interval}")
        if not 0.0 <= self.update_conf_threshold <= 1.0:
            raise ConfigError(f"update_conf_threshold must be in [0,1], got "
                              f"{self.update_conf_threshold}")
        if not 0.0 <= self.window_influence <= 1.0:
            raise ConfigError(f"window_influence must be in [0,1], got "
                              f"{self.window_influence}")
        if not 0.0 < self.size_lr <= 1.0:
            raise ConfigError(f"size_lr must be in (0,1], got {self.size_lr}")
        if not 1 <= self.ecam_stack_depth <= 4:
            raise ConfigError(f"ecam_stack_depth must be in [1,4], got "
                              f"{self.ecam_stack_depth}")
        return self

    @property
    def template_cells(self):
        return self.template_size // 16

    @property
    def search_cells(self):
        return self.search_size // 16

    @property
    def ecam_variant(self):
        return "split" if self.variant == "rgbs" else "fused"

    @property
    def modality_dir(self):
        return MODALITY_DIRS[self.variant]


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    decay_epoch: int = 40      # lr x0.1 once this epoch is reached
    decay_factor: float = 0.1
    steps_per_epoch: int = 100
    max_frame_gap: int = 30
    jitter_frac: float = 0.15   # search-center jitter as a fraction of crop side
    scale_jitter: float = 0.18  # log-range of search-crop scale jitter


_BOOL = {"true": True, "1": True, "on": True, "yes": True,
         "false": False, "0": False, "off": False, "no": False}

_KEY_ALIASES = {
    "backbone.widths": "backbone_widths",
    "backbone.share_across_modalities": "share_backbone",
    "synth.frames": "synth_frames",
    "synth.image_size": "synth_image_size",
    "synth.size_px": "synth_size_px",
    "synth.speed_px": "synth_speed_px",
    "synth.noise": "synth_noise",
}


def _coerce(value, target):
    if isinstance(target, bool):
        v = value.strip().lower()
        if v not in _BOOL:
            raise ConfigError(f"expected a boolean, got {value!r}")
        return _BOOL[v]
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, tuple):
        return tuple(int(v) for v in value.split(","))
    return value.strip()


def parse_config_text(text, base=None):
    """Parse flat ``key = value`` lines into a TrackerConfig."""
    cfg = base or TrackerConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _coerce(value, known[key])
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return replace(cfg, **updates).validate()


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)
