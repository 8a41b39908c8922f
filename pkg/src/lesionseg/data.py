"""Synthetic dermoscopy-style data, manifests, and augmentation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, IngestionError, ManifestError
from .imgio import read_image, write_png

CATEGORIES = ("melanoma-like", "benign-like")

# lesion area as a fraction of the frame stays inside these bounds;
# draws outside are rejected and resampled
AREA_LO = 0.05
AREA_HI = 0.60


@dataclass
class SegSample:
    sample_id: str
    image: np.ndarray            # (h, w, 3) float64 in [0, 1]
    mask: np.ndarray             # (h, w) uint8 in {0, 1}
    category: str = "benign-like"
    split: str = "train"


def _smooth_noise(rng, h, w, cells, amp):
    """Low-frequency field: a coarse random grid blown up bilinearly."""
    coarse = rng.normal(0.0, amp, size=(cells, cells))
    return ndimage.zoom(coarse, (h / cells, w / cells), order=1)


def _star_mask(rng, h, w):
    """Star-convex blob: an ellipse whose radius wobbles with angle."""
    cy = h * rng.uniform(0.3, 0.7)
    cx = w * rng.uniform(0.3, 0.7)
    base = min(h, w) * rng.uniform(0.15, 0.42)
    squash = rng.uniform(0.6, 1.0)
    tilt = rng.uniform(0.0, np.pi)
    n_harm = 4
    amps = rng.uniform(0.0, 0.14, size=n_harm)
    phases = rng.uniform(0.0, 2 * np.pi, size=n_harm)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # rotate into the ellipse frame, squash one axis
    ry = (np.cos(tilt) * dy - np.sin(tilt) * dx) / squash
    rx = np.sin(tilt) * dy + np.cos(tilt) * dx
    dist = np.hypot(ry, rx)
    theta = np.arctan2(ry, rx)
    radius = base * (1.0 + sum(
        a * np.cos((k + 2) * theta + p)
        for k, (a, p) in enumerate(zip(amps, phases))))
    return (dist <= radius).astype(np.float64)


def make_sample(seed_seq, size: int, index: int) -> SegSample:
    """One deterministic sample from its own child random stream."""
    rng = np.random.default_rng(seed_seq)
    h = w = size

    category = CATEGORIES[0] if rng.random() < 0.5 else CATEGORIES[1]
    low_contrast = category == CATEGORIES[0]

    # skin background: warm base tone plus two scales of texture
    base = np.array([rng.uniform(0.70, 0.88), rng.uniform(0.52, 0.66),
                     rng.uniform(0.42, 0.56)])
    image = np.empty((h, w, 3))
    slow = _smooth_noise(rng, h, w, 4, 0.035)
    for c in range(3):
        image[:, :, c] = base[c] + slow \
            + _smooth_noise(rng, h, w, max(8, size // 8), 0.015)

    # reject lesion shapes until the area lands in bounds
    for _ in range(64):
        mask = _star_mask(rng, h, w)
        frac = mask.mean()
        if AREA_LO <= frac <= AREA_HI:
            break
    else:
        raise ConfigError(
            f"sample {index}: no lesion shape met the area bounds "
            f"[{AREA_LO}, {AREA_HI}] in 64 draws")

    # lesion tone: darker than skin; low-contrast samples sit much closer
    # to the background color
    contrast = rng.uniform(0.08, 0.22) if low_contrast \
        else rng.uniform(0.35, 0.60)
    tint = np.array([rng.uniform(0.25, 0.45), rng.uniform(0.15, 0.30),
                     rng.uniform(0.10, 0.25)])
    lesion_color = base * (1.0 - contrast) + tint * contrast

    # soft boundary: blur the crisp mask into an alpha matte
    alpha = ndimage.gaussian_filter(mask, sigma=size * 0.02 + 0.8)
    shade = 1.0 + _smooth_noise(rng, h, w, 6, 0.08)
    for c in range(3):
        image[:, :, c] = image[:, :, c] * (1 - alpha) \
            + lesion_color[c] * shade * alpha

    _draw_hairs(rng, image)
    if rng.random() < 0.5:
        _draw_ruler(rng, image)

    image = np.clip(image, 0.0, 1.0)
    return SegSample(sample_id=f"synth{index:05d}", image=image,
                     mask=(mask > 0.5).astype(np.uint8), category=category)


def _draw_hairs(rng, image):
    h, w = image.shape[:2]
    for _ in range(rng.integers(0, 4)):
        # one dark arc: a circle segment walked in small steps
        cy, cx = rng.uniform(-h, 2 * h), rng.uniform(-w, 2 * w)
        r = rng.uniform(0.5 * h, 2.0 * h)
        t0 = rng.uniform(0, 2 * np.pi)
        span = rng.uniform(0.3, 1.2)
        dark = rng.uniform(0.15, 0.45)
        for t in np.linspace(t0, t0 + span, int(4 * r * span) + 8):
            y, x = int(cy + r * np.sin(t)), int(cx + r * np.cos(t))
            if 0 <= y < h and 0 <= x < w:
                image[y, x] *= dark


def _draw_ruler(rng, image):
    h, w = image.shape[:2]
    horizontal = rng.random() < 0.5
    offset = int(rng.uniform(0.05, 0.2) * (h if horizontal else w))
    if rng.random() < 0.5:
        offset = (h if horizontal else w) - 1 - offset
    step = max(4, (w if horizontal else h) // 12)
    tick = max(2, (h if horizontal else w) // 24)
    for k in range(0, (w if horizontal else h), step):
        if horizontal:
            image[offset:offset + tick, k] *= 0.3
        else:
            image[k, offset:offset + tick] *= 0.3


def generate(count: int, size: int, seed: int) -> list:
    """Deterministic batch: sample i only depends on (seed, i)."""
    if count < 1:
        raise ConfigError(f"count must be positive, got {count}")
    children = np.random.SeedSequence(seed).spawn(count)
    return [make_sample(sq, size, i) for i, sq in enumerate(children)]


def emit_dataset(out_dir, count: int, size: int, seed: int,
                 val_fraction: float = 0.0, test_fraction: float = 0.0):
    """Write images/, masks/ and manifest.csv under out_dir.

    The split column tags the trailing test_fraction of samples as test,
    the val_fraction before them as val, the rest as train.
    """
    if val_fraction + test_fraction >= 1.0:
        raise ConfigError("val and test fractions must leave training data")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    samples = generate(count, size, seed)
    n_test = int(round(count * test_fraction))
    n_val = int(round(count * val_fraction))
    rows = []
    for i, s in enumerate(samples):
        if i >= count - n_test:
            s.split = "test"
        elif i >= count - n_test - n_val:
            s.split = "val"
        img_rel = f"images/{s.sample_id}.png"
        mask_rel = f"masks/{s.sample_id}.png"
        write_png(out / img_rel,
                  np.round(s.image * 255.0).astype(np.uint8))
        write_png(out / mask_rel, (s.mask * 255).astype(np.uint8))
        rows.append((s.sample_id, img_rel, mask_rel, s.category, s.split))
    with open(out / "manifest.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("sample_id", "image", "mask", "category", "split"))
        wr.writerows(rows)
    return out / "manifest.csv"


MANIFEST_COLUMNS = ("sample_id", "image", "mask", "category", "split")


def load_manifest(path, split: str = None) -> list:
    """Read a manifest.csv and every sample it lists.

    Structural problems (missing file, wrong header, short rows, duplicate
    ids) raise ManifestError; unreadable or mismatched images raise
    IngestionError. Messages carry the row number and sample id.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if tuple(header) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: header {header} does not match "
                f"{list(MANIFEST_COLUMNS)}")
        samples = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} "
                    f"fields, got {len(row)}")
            sid, img_rel, mask_rel, category, row_split = row
            if sid in seen:
                raise ManifestError(
                    f"{path}:{lineno}: duplicate sample_id '{sid}'")
            seen.add(sid)
            if split is not None and row_split != split:
                continue
            samples.append(_load_row(root, lineno, sid, img_rel, mask_rel,
                                     category, row_split))
    return samples


def _load_row(root, lineno, sid, img_rel, mask_rel, category, split):
    try:
        img = read_image(root / img_rel)
        mask = read_image(root / mask_rel)
    except (OSError, IngestionError) as exc:
        raise IngestionError(
            f"row {lineno} (sample '{sid}'): {exc}") from exc
    if img.ndim != 3 or img.shape[2] != 3:
        raise IngestionError(
            f"row {lineno} (sample '{sid}'): image must be rgb, "
            f"got shape {img.shape}")
    if mask.ndim != 2:
        raise IngestionError(
            f"row {lineno} (sample '{sid}'): mask must be grayscale, "
            f"got shape {mask.shape}")
    if mask.shape != img.shape[:2]:
        raise IngestionError(
            f"row {lineno} (sample '{sid}'): mask {mask.shape} does not "
            f"match image {img.shape[:2]}")
    return SegSample(sample_id=sid, image=img.astype(np.float64) / 255.0,
                     mask=(mask > 127).astype(np.uint8), category=category,
                     split=split)


@dataclass
class AugmentSpec:
    flip_h: bool = True
    flip_v: bool = True
    crop: bool = True
    rotate: bool = True
    out_size: int = 64
    rotate_mode: str = "constant"
    crop_lo: float = 0.5         # smallest center-crop scale
    max_angle: float = 20.0      # degrees

    @classmethod
    def from_config(cls, cfg) -> "AugmentSpec":
        return cls(flip_h=cfg.aug_flip_h, flip_v=cfg.aug_flip_v,
                   crop=cfg.aug_crop, rotate=cfg.aug_rotate,
                   out_size=cfg.input_size, rotate_mode=cfg.rotate_mode)


def _zoom_to(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape[:2]
    if (h, w) == (size, size):
        return arr
    factors = (size / h, size / w) + (1,) * (arr.ndim - 2)
    return ndimage.zoom(arr, factors, order=1, grid_mode=True,
                        mode="nearest")


def augment(image: np.ndarray, mask: np.ndarray, rng,
            spec: AugmentSpec):
    """Random flips, center crop, small rotation, then resize.

    The mask travels as float through the same interpolations as the image
    and is binarized (>= 0.5) only after the final resize, so the pair
    stays geometrically aligned the whole way.
    """
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if spec.flip_h and rng.random() < 0.5:
        img, m = img[:, ::-1], m[:, ::-1]
    if spec.flip_v and rng.random() < 0.5:
        img, m = img[::-1], m[::-1]
    if spec.crop:
        h, w = m.shape
        scale = rng.uniform(spec.crop_lo, 1.0)
        ch, cw = max(8, int(round(h * scale))), max(8, int(round(w * scale)))
        top, left = (h - ch) // 2, (w - cw) // 2
        img = img[top:top + ch, left:left + cw]
        m = m[top:top + ch, left:left + cw]
    if spec.rotate:
        angle = rng.uniform(0.0, spec.max_angle)
        img = ndimage.rotate(img, angle, reshape=False, order=1,
                             mode=spec.rotate_mode)
        m = ndimage.rotate(m, angle, reshape=False, order=1,
                           mode=spec.rotate_mode)
    img = np.clip(_zoom_to(np.ascontiguousarray(img), spec.out_size), 0, 1)
    m = _zoom_to(np.ascontiguousarray(m), spec.out_size)
    return img, (m >= 0.5).astype(np.uint8)


def resize_sample(sample: SegSample, size: int) -> SegSample:
    """Deterministic resize used for validation and test samples."""
    img = np.clip(_zoom_to(sample.image, size), 0, 1)
    m = _zoom_to(sample.mask.astype(np.float64), size)
    return SegSample(sample_id=sample.sample_id, image=img,
                     mask=(m >= 0.5).astype(np.uint8),
                     category=sample.category, split=sample.split)


def to_batch(samples, out_size: int = None):
    """Stack samples into network inputs: (n,3,h,w) images, (n,1,h,w) masks."""
    if out_size is not None:
        samples = [resize_sample(s, out_size) for s in samples]
    x = np.stack([s.image.transpose(2, 0, 1) for s in samples])
    y = np.stack([s.mask[None].astype(np.float64) for s in samples])
    return x, y
