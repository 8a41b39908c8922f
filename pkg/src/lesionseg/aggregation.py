"""Sequential gated fusion of the per-stage encoder features.

Each stage's feature map is reduced to the context width by a 1x1 conv.
The first stage passes straight through; every later stage adds two gated
terms to its reduced map: features computed from the input image resized to
the stage's grid, and the accumulated context from the previous stage
(resampled when the grids differ). Both gates are sigmoids of a 1x1 conv
over the concatenation of the reduced map and the previous context, so the
network decides per pixel and per channel how much of each source to admit.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .layers import ConvLayer, Module, ModuleList
from .tensor import Tensor, bilinear_resize, concat_channels, ew_add, ew_mul, sigmoid


class GateUnit(Module):
    """Per-stage reduction plus, from stage 2 on, the two fusion gates."""

    def __init__(self, index: int, c_in: int, c_ctx: int, rng,
                 image_channels: int = 3, gate_bias: bool = True):
        super().__init__()
        self.index = index
        self.c_ctx = c_ctx
        self.reduce = ConvLayer(c_in, c_ctx, 1, rng, norm=False, act=False)
        if index > 1:
            self.image_conv = ConvLayer(image_channels, c_ctx, 3, rng,
                                        norm=False, act=False)
            self.gate_image = ConvLayer(2 * c_ctx, c_ctx, 1, rng, norm=False,
                                        act=False, bias=gate_bias)
            self.gate_context = ConvLayer(2 * c_ctx, c_ctx, 1, rng,
                                          norm=False, act=False,
                                          bias=gate_bias)

    def fuse(self, f_tilde: Tensor, f_prev: Tensor, image: Tensor) -> Tensor:
        return self._fuse(f_tilde, f_prev, image)[0]

    def fuse_detailed(self, f_tilde, f_prev, image):
        """Like fuse, also returning the gate maps and the image features."""
        out, f_img, g_img, g_ctx = self._fuse(f_tilde, f_prev, image)
        return out, {"image_features": f_img, "gate_image": g_img,
                     "gate_context": g_ctx}

    def _fuse(self, f_tilde, f_prev, image):
        if self.index == 1:
            raise ConfigError("stage 1 has no fusion gates")
        if f_tilde.data.shape[1] != self.c_ctx:
            raise ConfigError(
                f"stage {self.index}: reduced features have "
                f"{f_tilde.data.shape[1]} channels, expected {self.c_ctx}")
        if f_prev.data.shape[1] != self.c_ctx:
            raise ConfigError(
                f"stage {self.index}: previous context has "
                f"{f_prev.data.shape[1]} channels, expected {self.c_ctx}")
        th, tw = f_tilde.data.shape[2:]
        f_img = self.image_conv(bilinear_resize(image, th, tw))
        if f_prev.data.shape[2:] != (th, tw):
            f_prev = bilinear_resize(f_prev, th, tw)
        gate_in = concat_channels([f_tilde, f_prev])
        g_img = sigmoid(self.gate_image(gate_in))
        g_ctx = sigmoid(self.gate_context(gate_in))
        out = ew_add(ew_add(f_tilde, ew_mul(g_img, f_img)),
                     ew_mul(g_ctx, f_prev))
        return out, f_img, g_img, g_ctx


class ContextCascade(Module):
    """Runs the gate units over the four encoder stages in order."""

    def __init__(self, stage_channels, c_ctx: int, rng,
                 image_channels: int = 3, gate_bias: bool = True):
        super().__init__()
        self.units = ModuleList([
            GateUnit(i + 1, c, c_ctx, rng, image_channels=image_channels,
                     gate_bias=gate_bias)
            for i, c in enumerate(stage_channels)])

    def forward(self, image: Tensor, feats, capture: bool = False):
        """Returns (context, trace, details); trace holds every stage's
        accumulated context, details the gate maps when capture is set."""
        if len(feats) != len(self.units):
            raise ConfigError(
                f"{len(self.units)} stages configured but {len(feats)} "
                "feature maps given")
        details = [] if capture else None
        ctx = self.units[0].reduce(feats[0])
        trace = [ctx]
        for unit, feat in zip(self.units[1:], feats[1:]):
            reduced = unit.reduce(feat)
            if capture:
                ctx, info = unit.fuse_detailed(reduced, ctx, image)
                details.append(info)
            else:
                ctx = unit.fuse(reduced, ctx, image)
            trace.append(ctx)
        return ctx, trace, details
