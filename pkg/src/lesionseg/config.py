"""Model and run configuration with parsing and validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    """Everything the network, losses, optimizer and pipeline need.

    Defaults are desk scale: small channel widths and 64x64 inputs keep a
    CPU run in seconds while preserving every architectural ratio. The
    reference operating point behind them uses 256 context channels,
    256x256 inputs and dilation rates (6, 12, 18); `aspp_rate_divisor`
    rescales the rates to match the working resolution.
    """

    input_size: int = 64
    in_channels: int = 3
    encoder_channels: tuple = (16, 32, 32, 32)
    c_ctx: int = 32
    aspp_rates: tuple = (6, 12, 18)
    aspp_rate_divisor: int = 3
    aspp_branch_norm: bool = True
    use_cca: bool = True
    use_cgl: bool = True
    use_aux: bool = True
    gate_bias: bool = True
    cgl_qk_proj: bool = False
    norm: bool = True
    dice_weight: float = 1.0     # lambda on the dice term of each branch
    dice_eps: float = 1.0        # smoothing constant inside the dice ratio
    lr0: float = 3e-3
    momentum: float = 0.9
    poly_power: float = 0.9
    total_iters: int = 500
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    aug_flip_h: bool = True
    aug_flip_v: bool = True
    aug_crop: bool = True
    aug_rotate: bool = True
    rotate_mode: str = "constant"
    checkpoint_every: int = 100

    def validate(self) -> "ModelConfig":
        if self.input_size < 8 or self.input_size % 8:
            raise ConfigError(
                f"input_size must be a positive multiple of 8, got "
                f"{self.input_size}")
        if len(self.encoder_channels) != 4 or min(self.encoder_channels) < 1:
            raise ConfigError(
                f"encoder_channels needs 4 positive widths, got "
                f"{self.encoder_channels}")
        if self.c_ctx < 1:
            raise ConfigError(f"c_ctx must be positive, got {self.c_ctx}")
        if len(self.aspp_rates) != 3 or min(self.aspp_rates) < 1:
            raise ConfigError(
                f"aspp_rates needs 3 positive rates, got {self.aspp_rates}")
        if self.aspp_rate_divisor < 1:
            raise ConfigError(
                f"aspp_rate_divisor must be >= 1, got "
                f"{self.aspp_rate_divisor}")
        if self.dice_weight < 0:
            raise ConfigError(
                f"dice_weight must be >= 0, got {self.dice_weight}")
        if not 0.0 < self.dice_eps <= 1.0:
            raise ConfigError(
                f"dice_eps must be in (0, 1], got {self.dice_eps}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(
                f"momentum must be in [0, 1), got {self.momentum}")
        if self.poly_power <= 0:
            raise ConfigError(
                f"poly_power must be positive, got {self.poly_power}")
        if self.total_iters < 1:
            raise ConfigError(
                f"total_iters must be positive, got {self.total_iters}")
        if self.batch_size < 1:
            raise ConfigError(
                f"batch_size must be positive, got {self.batch_size}")
        if self.norm and self.batch_size < 2:
            raise ConfigError(
                "batch_size must be at least 2 while normalization is on")
        if self.rotate_mode not in ("constant", "reflect"):
            raise ConfigError(
                f"rotate_mode must be 'constant' or 'reflect', got "
                f"{self.rotate_mode!r}")
        if self.checkpoint_every < 1:
            raise ConfigError(
                f"checkpoint_every must be positive, got "
                f"{self.checkpoint_every}")
        return self

    @property
    def aux_active(self) -> bool:
        """The auxiliary head reads the cascade context, so it exists only
        when both switches are on."""
        return self.use_aux and self.use_cca

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["aspp_rates"] = list(self.aspp_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs = dict(d)
        for key in ("encoder_channels", "aspp_rates"):
            if key in kwargs:
                kwargs[key] = tuple(int(v) for v in kwargs[key])
        return cls(**kwargs)


def _coerce(name: str, text: str, pytype) -> object:
    text = text.strip()
    if pytype is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key '{name}': not a boolean: {text!r}")
    if pytype is int:
        return int(text)
    if pytype is float:
        return float(text)
    if pytype is tuple:
        return tuple(int(p.strip()) for p in text.split(",") if p.strip())
    return text


def parse_config_file(path) -> dict:
    """Read `key = value` lines into typed ModelConfig fields.

    Blank lines and lines starting with '#' are ignored. Unknown keys and
    unparseable values raise ConfigError with the line number.
    """
    fields = {f.name: f for f in dataclasses.fields(ModelConfig)}
    types = {n: type(getattr(ModelConfig, n)) for n in fields}
    out = {}
    for lineno, raw in enumerate(
            Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        try:
            out[key] = _coerce(key, value, types[key])
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


def format_config(cfg: ModelConfig) -> str:
    """Stable `key = value` text, one line per field."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
