"""Context-guided fusion and softmax position affinity at 1/8 resolution.

The fuse step injects the cascade context into the head features through a
sigmoid gate (a 1x1 conv over their concatenation). The affinity step builds
an N x N matrix of inner products between the fused position vectors
(N = h * w), normalized per row with a softmax, and re-mixes the fused map
with those weights. The head features enter as the residual, so the module
refines rather than replaces them. Every batch item is handled on its own;
nothing mixes across the batch axis.
"""
from __future__ import annotations

from .errors import ShapeError
from .layers import ConvLayer, Module
from .tensor import (Tensor, concat_channels, ew_add, ew_mul, pos_gram,
                     pos_mix, sigmoid, softmax_rows)


class LocalAffinity(Module):
    def __init__(self, c_ctx: int, rng, gate_bias: bool = True,
                 qk_proj: bool = False):
        super().__init__()
        self.gate = ConvLayer(2 * c_ctx, c_ctx, 1, rng, norm=False,
                              act=False, bias=gate_bias)
        if qk_proj:
            self.query = ConvLayer(c_ctx, c_ctx, 1, rng, norm=False,
                                   act=False)
            self.key = ConvLayer(c_ctx, c_ctx, 1, rng, norm=False, act=False)
        else:
            self.query = None
            self.key = None

    def fuse(self, f_head: Tensor, f_ctx: Tensor) -> Tensor:
        """f_head + gate * f_ctx, gate = sigmoid(1x1 conv over concat)."""
        if f_head.data.shape != f_ctx.data.shape:
            raise ShapeError(
                f"fuse: head features {f_head.data.shape} and context "
                f"{f_ctx.data.shape} must match")
        g = sigmoid(self.gate(concat_channels([f_head, f_ctx])))
        return ew_add(f_head, ew_mul(g, f_ctx))

    def affinity(self, fused: Tensor) -> Tensor:
        """Row-stochastic (n, 1, N, N) position-to-position weights."""
        q = self.query(fused) if self.query is not None else fused
        k = self.key(fused) if self.key is not None else fused
        return softmax_rows(pos_gram(q, k))

    def update(self, fused: Tensor, weights: Tensor,
               f_head: Tensor) -> Tensor:
        """Affinity-weighted sum of fused vectors plus the head residual."""
        return ew_add(pos_mix(weights, fused), f_head)

    def forward(self, f_head: Tensor, f_ctx: Tensor | None = None):
        """Full pass; f_ctx is None when the cascade is ablated away, in
        which case the affinity operates on the head features alone."""
        fused = self.fuse(f_head, f_ctx) if f_ctx is not None else f_head
        weights = self.affinity(fused)
        return self.update(fused, weights, f_head), weights
