"""Full segmentation network: encoder, context paths, decoder, heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affinity import LocalAffinity
from .aggregation import ContextCascade
from .config import ModelConfig
from .errors import ShapeError
from .layers import Module, ConvLayer, Encoder, AsppHead
from .tensor import Tensor, bilinear_resize, concat_channels, sigmoid


@dataclass
class ForwardResult:
    """Everything one pass produces.

    main_prob and aux_prob are full-resolution probability maps (aux_prob
    is None when the auxiliary branch is off). The remaining fields expose
    intermediate maps for inspection dumps: context/trace/gate_details from
    the cascade, aspp from the parallel head, affinity_weights from the
    attention step. Fields for disabled paths hold None.
    """
    main_prob: Tensor
    aux_prob: Tensor = None
    aspp: Tensor = None
    context: Tensor = None
    trace: list = None
    gate_details: list = None
    affinity_out: Tensor = None
    affinity_weights: Tensor = None


class SegmentationNetwork(Module):
    """Dual-branch lesion segmenter assembled from a ModelConfig.

    The decoder concatenates the active context maps in a fixed order
    (cascade context, parallel head, attention output), projects back to
    the context width, maps to a single logit channel, upsamples to the
    input resolution and applies a sigmoid. The auxiliary head reads the
    cascade context alone, so its gradients reach the encoder through the
    gate units only.
    """

    def __init__(self, cfg: ModelConfig, rng=None):
        super().__init__()
        cfg.validate()
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg

        self.encoder = Encoder(cfg.in_channels, cfg.encoder_channels, rng,
                               norm=cfg.norm)
        self.aspp = AsppHead(cfg.encoder_channels[3], cfg.c_ctx, rng,
                             rates=cfg.aspp_rates,
                             rate_divisor=cfg.aspp_rate_divisor,
                             branch_norm=cfg.aspp_branch_norm, norm=cfg.norm)
        if cfg.use_cca:
            self.cascade = ContextCascade(cfg.encoder_channels, cfg.c_ctx,
                                          rng, image_channels=cfg.in_channels,
                                          gate_bias=cfg.gate_bias)
        else:
            self.cascade = None
        if cfg.use_cgl:
            self.affinity = LocalAffinity(cfg.c_ctx, rng,
                                          gate_bias=cfg.gate_bias,
                                          qk_proj=cfg.cgl_qk_proj)
        else:
            self.affinity = None

        n_parts = 1 + int(cfg.use_cca) + int(cfg.use_cgl)
        self.fuse_conv = ConvLayer(n_parts * cfg.c_ctx, cfg.c_ctx, 1, rng,
                                   norm=cfg.norm, act=True)
        self.out_conv = ConvLayer(cfg.c_ctx, 1, 1, rng, norm=False,
                                  act=False)
        if cfg.aux_active:
            self.aux_conv = ConvLayer(cfg.c_ctx, 1, 1, rng, norm=False,
                                      act=False)
        else:
            self.aux_conv = None

    def forward(self, image: Tensor, capture: bool = False) -> ForwardResult:
        n, c, h, w = image.data.shape
        if c != self.cfg.in_channels:
            raise ShapeError(
                f"network expects {self.cfg.in_channels} input channels, "
                f"got {c}")
        feats = self.encoder(image)
        f_a = self.aspp(feats[3])

        f_c = trace = details = None
        if self.cascade is not None:
            f_c, trace, details = self.cascade(image, feats, capture=capture)

        f_l = weights = None
        if self.affinity is not None:
            f_l, weights = self.affinity(f_a, f_c)

        parts = [p for p in (f_c, f_a, f_l) if p is not None]
        fused = concat_channels(parts) if len(parts) > 1 else parts[0]
        logit = self.out_conv(self.fuse_conv(fused))
        main = sigmoid(bilinear_resize(logit, h, w))

        aux = None
        if self.aux_conv is not None:
            aux = sigmoid(bilinear_resize(self.aux_conv(f_c), h, w))

        return ForwardResult(main_prob=main, aux_prob=aux, aspp=f_a,
                             context=f_c, trace=trace, gate_details=details,
                             affinity_out=f_l, affinity_weights=weights)

    def predict(self, image: np.ndarray, threshold: float = 0.5):
        """Eval-mode inference on a numpy batch.

        Returns (mask, prob) as numpy arrays of shape (n, 1, h, w); mask is
        uint8 in {0, 1}. Training mode is restored afterwards.
        """
        was_training = self.training
        self.set_training(False)
        try:
            out = self.forward(Tensor._const(
                np.asarray(image, dtype=np.float64)))
        finally:
            self.set_training(was_training)
        prob = out.main_prob.data
        mask = (prob >= threshold).astype(np.uint8)
        return mask, prob
