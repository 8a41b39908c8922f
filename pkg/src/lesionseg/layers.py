"""Parameterized blocks: convolution layers with optional batch normalization,
residual stages, the dilated encoder, and the multi-rate context head."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import (Tensor, add_scalar, bilinear_resize, channel_mean,
                     concat_channels, conv2d, ew_add, ew_mul, global_avg_pool,
                     mul_scalar, pow_scalar, relu)


class Module:
    """Minimal container for parameters, buffers and child modules.

    Attribute assignment registers grad-tracked Tensors as parameters and
    Module instances as children, so state discovery and train/eval mode
    propagation walk the tree without per-class bookkeeping.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _register_buffer(self, name: str, arr: np.ndarray):
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix: str = ""):
        for n, p in self._params.items():
            yield prefix + n, p
        for cn, child in self._children.items():
            yield from child.named_parameters(prefix + cn + ".")

    def named_buffers(self, prefix: str = ""):
        for n, b in self._buffers.items():
            yield prefix + n, b
        for cn, child in self._children.items():
            yield from child.named_buffers(prefix + cn + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def set_training(self, flag: bool):
        object.__setattr__(self, "training", flag)
        for child in self._children.values():
            child.set_training(flag)

    def state_arrays(self) -> dict:
        """Name -> array for every parameter and buffer, in discovery order."""
        out = {n: p.data for n, p in self.named_parameters()}
        out.update({n: b for n, b in self.named_buffers()})
        return out

    def load_state(self, arrays: dict):
        own = self.state_arrays()
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ConfigError(
                f"state mismatch; missing={missing}, unexpected={extra}")
        for name, arr in own.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ConfigError(
                    f"state entry '{name}' has shape {src.shape}, "
                    f"expected {arr.shape}")
            arr[...] = src


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = []
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
            self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)


def init_conv_weight(rng: np.random.Generator, c_out: int, c_in: int,
                     k: int) -> np.ndarray:
    """Fan-in scaled uniform init: bound = sqrt(1 / (c_in * k * k))."""
    bound = float(np.sqrt(1.0 / (c_in * k * k)))
    return rng.uniform(-bound, bound, size=(c_out, c_in, k, k))


class ConvLayer(Module):
    """conv -> optional batch norm -> optional rectifier.

    Batch normalization uses batch statistics while training (and then
    updates the running estimates with momentum 0.1) and the frozen running
    estimates in eval mode. gamma starts at 1, beta at 0, biases at 0.
    """

    BN_MOMENTUM = 0.1
    BN_EPS = 1e-5

    def __init__(self, c_in: int, c_out: int, k: int,
                 rng: np.random.Generator, stride: int = 1, dilation: int = 1,
                 padding: int | None = None, norm: bool = True,
                 act: bool = True, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (k - 1) // 2 if padding is None else padding
        self.norm = norm
        self.act = act
        self.weight = Tensor(init_conv_weight(rng, c_out, c_in, k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros((1, c_out, 1, 1)),
                           requires_grad=True) if bias else None
        if norm:
            self.gamma = Tensor(np.ones((1, c_out, 1, 1)), requires_grad=True)
            self.beta = Tensor(np.zeros((1, c_out, 1, 1)), requires_grad=True)
            self._register_buffer("running_mean", np.zeros(c_out))
            self._register_buffer("running_var", np.ones(c_out))

    def forward(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, self.bias, stride=self.stride,
                   dilation=self.dilation, padding=self.padding)
        if self.norm:
            y = self._batch_norm(y)
        if self.act:
            y = relu(y)
        return y

    def _batch_norm(self, y: Tensor) -> Tensor:
        n = y.data.shape[0]
        if self.training:
            if n < 2:
                raise ConfigError(
                    "batch normalization in training mode needs a batch of "
                    f"at least 2, got {n}")
            mu = channel_mean(y)
            centered = ew_add(y, mul_scalar(mu, -1.0))
            var = channel_mean(ew_mul(centered, centered))
            inv = pow_scalar(add_scalar(var, self.BN_EPS), -0.5)
            yhat = ew_mul(centered, inv)
            m = self.BN_MOMENTUM
            self.running_mean += m * (mu.data.reshape(-1) - self.running_mean)
            self.running_var += m * (var.data.reshape(-1) - self.running_var)
        else:
            c = y.data.shape[1]
            neg_mu = Tensor(-self.running_mean.reshape(1, c, 1, 1))
            inv = Tensor(
                (1.0 / np.sqrt(self.running_var + self.BN_EPS)
                 ).reshape(1, c, 1, 1))
            yhat = ew_mul(ew_add(y, neg_mu), inv)
        return ew_add(ew_mul(yhat, self.gamma), self.beta)


class ResidualBlock(Module):
    """Two 3x3 convs with an additive skip; the skip is projected by a 1x1
    conv whenever channels or resolution change."""

    def __init__(self, c_in: int, c_out: int, rng, stride: int = 1,
                 dilation: int = 1, norm: bool = True):
        super().__init__()
        self.conv1 = ConvLayer(c_in, c_out, 3, rng, stride=stride,
                               dilation=dilation, norm=norm, act=True)
        self.conv2 = ConvLayer(c_out, c_out, 3, rng, dilation=dilation,
                               norm=norm, act=False)
        if c_in != c_out or stride != 1:
            self.proj = ConvLayer(c_in, c_out, 1, rng, stride=stride,
                                  norm=norm, act=False)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv2(self.conv1(x))
        skip = self.proj(x) if self.proj is not None else x
        return relu(ew_add(y, skip))


class EncoderStage(Module):
    def __init__(self, c_in: int, c_out: int, rng, stride: int,
                 dilation: int, norm: bool = True):
        super().__init__()
        self.blocks = ModuleList([
            ResidualBlock(c_in, c_out, rng, stride=stride, dilation=dilation,
                          norm=norm),
            ResidualBlock(c_out, c_out, rng, dilation=dilation, norm=norm),
        ])

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Encoder(Module):
    """Four-stage residual backbone with a stride-2 stem.

    Stage outputs sit at 1/4, 1/8, 1/8 and 1/8 of the input resolution:
    the stem and the first two stages each halve the grid, stages three and
    four keep it and use dilation 2 instead.
    """

    STRIDES = (2, 2, 1, 1)
    DILATIONS = (1, 1, 2, 2)

    def __init__(self, in_channels: int, stage_channels, rng,
                 norm: bool = True):
        super().__init__()
        if len(stage_channels) != 4:
            raise ConfigError(
                f"encoder needs 4 stage widths, got {stage_channels}")
        self.stem = ConvLayer(in_channels, stage_channels[0], 3, rng,
                              stride=2, norm=norm, act=True)
        stages = []
        c_prev = stage_channels[0]
        for c_out, stride, dil in zip(stage_channels, self.STRIDES,
                                      self.DILATIONS):
            stages.append(EncoderStage(c_prev, c_out, rng, stride, dil,
                                       norm=norm))
            c_prev = c_out
        self.stages = ModuleList(stages)

    def forward(self, x: Tensor):
        h, w = x.data.shape[2:]
        if h % 8 or w % 8:
            raise ConfigError(
                f"input spatial size {h}x{w} must be divisible by 8")
        y = self.stem(x)
        feats = []
        for stage in self.stages:
            y = stage(y)
            feats.append(y)
        return tuple(feats)


class AsppHead(Module):
    """Parallel context head over the deepest feature map.

    One 1x1 branch, three 3x3 branches at increasing dilation rates, and a
    global-pool branch (1x1 conv then bilinear upsample), concatenated and
    projected back to the context width. Rates are the base rates divided
    by `rate_divisor` (floored, at least 1) so the reach scales with the
    working resolution.
    """

    def __init__(self, c_in: int, c_ctx: int, rng, rates=(6, 12, 18),
                 rate_divisor: int = 1, branch_norm: bool = True,
                 norm: bool = True):
        super().__init__()
        if rate_divisor < 1:
            raise ConfigError(f"rate divisor must be >= 1, got {rate_divisor}")
        self.rates = tuple(max(1, r // rate_divisor) for r in rates)
        bn = norm and branch_norm
        self.point = ConvLayer(c_in, c_ctx, 1, rng, norm=bn, act=branch_norm)
        self.dilated = ModuleList([
            ConvLayer(c_in, c_ctx, 3, rng, dilation=r, norm=bn,
                      act=branch_norm)
            for r in self.rates])
        self.pool_conv = ConvLayer(c_in, c_ctx, 1, rng, norm=bn,
                                   act=branch_norm)
        self.project = ConvLayer(5 * c_ctx, c_ctx, 1, rng, norm=norm,
                                 act=True)

    def forward(self, f4: Tensor) -> Tensor:
        h, w = f4.data.shape[2:]
        branches = [self.point(f4)]
        branches.extend(conv(f4) for conv in self.dilated)
        pooled = bilinear_resize(self.pool_conv(global_avg_pool(f4)), h, w)
        branches.append(pooled)
        return self.project(concat_channels(branches))
