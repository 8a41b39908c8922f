"""Deterministic training loop with CSV logging and checkpoints."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ModelConfig
from .data import AugmentSpec, augment, resize_sample, to_batch
from .errors import ConfigError, TrainingDiverged
from .losses import joint_loss
from .optim import PolySGD
from .tensor import Tensor

LOG_HEADER = "iter,lr,wbce_main,dice_main,wbce_aux,dice_aux,total"


class _BatchSampler:
    """Cycles seeded epoch permutations so every run sees the same order."""

    def __init__(self, n: int, batch_size: int, rng):
        if n < 1:
            raise ConfigError("training needs at least one sample")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.pool = []

    def next_batch(self):
        out = []
        while len(out) < self.batch_size:
            if not self.pool:
                self.pool = list(self.rng.permutation(self.n))
            out.append(self.pool.pop(0))
        return out


def _prepare(samples, indices, cfg: ModelConfig, rng, spec):
    chosen = [samples[i] for i in indices]
    if cfg.augment:
        imgs, masks = [], []
        for s in chosen:
            im, m = augment(s.image, s.mask, rng, spec)
            imgs.append(im.transpose(2, 0, 1))
            masks.append(m[None].astype(np.float64))
        return np.stack(imgs), np.stack(masks)
    return to_batch(chosen, out_size=cfg.input_size)


def train(model, cfg: ModelConfig, samples, out_dir,
          log_name: str = "train_log.csv", progress=None):
    """Runs cfg.total_iters updates and returns a small result dict.

    The log has one row per iteration, floats written at full repr
    precision and no timestamps, so identical runs produce identical
    bytes. A non-finite loss aborts with TrainingDiverged. `progress`,
    if given, is called as progress(it, lr, parts) after every update;
    it must not mutate the model.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    sampler = _BatchSampler(len(samples), cfg.batch_size, rng)
    spec = AugmentSpec.from_config(cfg)
    opt = PolySGD(model.parameters(), lr0=cfg.lr0, momentum=cfg.momentum,
                  power=cfg.poly_power, total_iters=cfg.total_iters)
    model.set_training(True)

    log_path = out / log_name
    checkpoints = []
    last_parts = None
    with open(log_path, "w") as log:
        log.write(LOG_HEADER + "\n")
        for it in range(1, cfg.total_iters + 1):
            x, y = _prepare(samples, sampler.next_batch(), cfg, rng, spec)
            result = model(Tensor._const(x))
            loss, parts = joint_loss(result.main_prob, y,
                                     aux_prob=result.aux_prob,
                                     dice_weight=cfg.dice_weight,
                                     dice_eps=cfg.dice_eps)
            lr = opt.lr_at(it - 1)
            if not math.isfinite(parts["total"]):
                raise TrainingDiverged(iteration=it, lr=lr, parts=parts)
            Tensor.backward(loss)
            opt.step(it - 1)
            opt.zero_grad()
            log.write(",".join(
                [str(it), repr(lr)]
                + [repr(parts[k]) for k in ("wbce_main", "dice_main",
                                            "wbce_aux", "dice_aux",
                                            "total")]) + "\n")
            last_parts = parts
            if progress is not None:
                progress(it, lr, parts)
            if it % cfg.checkpoint_every == 0 and it != cfg.total_iters:
                p = out / f"ckpt_{it:06d}.ckpt"
                save_checkpoint(p, model, cfg, meta={"iteration": it})
                checkpoints.append(p)

    final = out / "final.ckpt"
    save_checkpoint(final, model, cfg, meta={"iteration": cfg.total_iters})
    checkpoints.append(final)
    return {"log_path": log_path, "checkpoints": checkpoints,
            "final_checkpoint": final, "iterations": cfg.total_iters,
            "last_parts": last_parts}
