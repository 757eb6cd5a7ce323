"""Dataset ingestion, augmentation, batch streaming, and the synthetic task.

Images are float32 [H, W, 3] arrays in [0, 255] when loaded; the augmentation
pipeline rescales them to [0, 1] before any geometric transform. Batches are
NCHW with one-hot labels. The directory layout is class-per-directory:
``<root>/{benign,malignant}/*.{jpg,jpeg,png}`` with benign = 0, malignant = 1
(lexicographic order).
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import InputError, LayoutError, SplitError
from .rng import STREAM_AUGMENT, STREAM_SHUFFLE, STREAM_SPLIT, STREAM_SYNTH, derived_rng

log = logging.getLogger(__name__)

CLASS_NAMES = ("benign", "malignant")
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")

THREADS_ENV = "LESIONFORGE_THREADS"


@dataclass
class AugmentParams:
    """Randomized augmentation knobs; rescale is applied first and always."""

    rescale: float = 1.0 / 255.0
    shear_deg: float = 0.2
    hflip: bool = True
    vflip: bool = True
    zoom: float = 0.2

    def __post_init__(self):
        if self.rescale <= 0:
            raise InputError(f"rescale must be > 0, got {self.rescale}")
        if self.shear_deg < 0:
            raise InputError(f"shear_deg must be >= 0, got {self.shear_deg}")
        if not 0.0 <= self.zoom < 1.0:
            raise InputError(f"zoom must be in [0, 1), got {self.zoom}")


@dataclass
class Sample:
    source: "Path | np.ndarray"
    label: int
    meta: dict = field(default_factory=dict)


@dataclass
class Dataset:
    samples: list
    classes: tuple = CLASS_NAMES
    skipped: int = 0

    def __len__(self):
        return len(self.samples)

    def class_counts(self):
        counts = {name: 0 for name in self.classes}
        for s in self.samples:
            counts[self.classes[s.label]] += 1
        return counts


@dataclass
class Batch:
    x: np.ndarray  # [N, 3, S, S] float32
    y: np.ndarray  # [N, 2] one-hot float32


def decode_image(path):
    """Decode a PNG/JPEG file to float32 [H, W, 3] in [0, 255]; alpha dropped."""
    with PILImage.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float32)


def load_sample(sample):
    if isinstance(sample.source, np.ndarray):
        return sample.source.astype(np.float32, copy=True)
    return decode_image(sample.source)


def load_dataset(root):
    """Scan ``root/{benign,malignant}`` into a Dataset, lexicographic by path.

    Undecodable files are skipped with a warning and counted in
    ``Dataset.skipped``. A missing class directory raises LayoutError.
    """
    root = Path(root)
    samples = []
    skipped = 0
    for label, name in enumerate(CLASS_NAMES):
        class_dir = root / name
        if not class_dir.is_dir():
            raise LayoutError(f"missing class directory {class_dir}")
        for path in sorted(class_dir.iterdir()):
            if path.suffix.lower() not in IMAGE_EXTENSIONS or not path.is_file():
                continue
            try:
                with PILImage.open(path) as im:
                    im.verify()
            except (UnidentifiedImageError, OSError, SyntaxError):
                log.warning("skipping undecodable image %s", path)
                skipped += 1
                continue
            samples.append(Sample(source=path, label=label))
    return Dataset(samples=samples, skipped=skipped)


def _sample_bilinear(img, ys, xs):
    """Sample ``img`` at float coordinates with bilinear interpolation,
    replicating the nearest edge pixel outside the frame."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(img.dtype)
    wx = (xs - x0).astype(img.dtype)
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def bilinear_resize(img, out_h, out_w):
    """Bilinear resize with half-pixel-centered sampling; identity when the
    size is unchanged."""
    h, w = img.shape[:2]
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _sample_bilinear(img, grid_y, grid_x)


def resize(img, size):
    """Resize an [H, W, C] image to size x size."""
    if size < 1:
        raise InputError(f"size must be >= 1, got {size}")
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return bilinear_resize(img, size, size)


def _grid(h, w):
    return np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                       indexing="ij")


def shear(img, angle_deg):
    """Horizontal shear about the image center, anticlockwise by angle_deg."""
    h, w = img.shape[:2]
    cy = (h - 1) / 2.0
    ys, xs = _grid(h, w)
    return _sample_bilinear(img, ys, xs - math.tan(math.radians(angle_deg)) * (ys - cy))


def zoom(img, factor):
    """Zoom about the center: factor > 1 crops inward, factor < 1 replicates
    edge pixels outward."""
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = _grid(h, w)
    return _sample_bilinear(img, cy + (ys - cy) / factor, cx + (xs - cx) / factor)


def hflip(img):
    return np.ascontiguousarray(img[:, ::-1])


def vflip(img):
    return np.ascontiguousarray(img[::-1, :])


def augment(img, p, rng):
    """Apply the randomized pipeline: rescale, shear, horizontal/vertical
    flips (50% each), zoom.

    Exactly four variates are always drawn, in this order: shear angle,
    horizontal-flip uniform, vertical-flip uniform, zoom factor. This keeps
    the per-sample stream independent of which transforms are enabled.
    """
    out = img * np.float32(p.rescale)
    angle = rng.uniform(-p.shear_deg, p.shear_deg)
    u_h = rng.random()
    u_v = rng.random()
    factor = rng.uniform(1.0 - p.zoom, 1.0 + p.zoom)
    if angle != 0.0:
        out = shear(out, angle)
    if p.hflip and u_h < 0.5:
        out = hflip(out)
    if p.vflip and u_v < 0.5:
        out = vflip(out)
    if factor != 1.0:
        out = zoom(out, factor)
    return out.astype(np.float32, copy=False)


def train_val_split(ds, val_fraction, seed):
    """Stratified split into (train, val); deterministic under ``seed``."""
    if not 0.0 < val_fraction < 1.0:
        raise SplitError(f"val_fraction must be in (0, 1), got {val_fraction}")
    train_samples, val_samples = [], []
    for label in range(len(ds.classes)):
        idx = [i for i, s in enumerate(ds.samples) if s.label == label]
        if len(idx) < 2:
            raise SplitError(f"class {ds.classes[label]!r} has {len(idx)} samples; need >= 2")
        perm = derived_rng(seed, STREAM_SPLIT, label).permutation(len(idx))
        n_val = int(math.floor(len(idx) * val_fraction + 0.5))
        chosen = {idx[j] for j in perm[:n_val]}
        for i in idx:
            (val_samples if i in chosen else train_samples).append(ds.samples[i])
    return (Dataset(samples=train_samples, classes=ds.classes),
            Dataset(samples=val_samples, classes=ds.classes))


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV)
    if not env:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None


def _prepare(sample, image_size, params, rescale, rng):
    img = resize(load_sample(sample), image_size)
    if params is not None:
        img = augment(img, params, rng)
    else:
        img = img * np.float32(rescale)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


def iter_batches(ds, batch_size, *, image_size, shuffle=False, params=None,
                 rescale=1.0 / 255.0, seed=0, epoch=0, workers=None):
    """Yield one epoch of Batches: ceil(len(ds) / batch_size) of them.

    Each sample's augmentation generator is derived from
    (seed, epoch, dataset index), so contents are bit-identical for any
    worker count. With ``params=None`` only the rescale is applied.
    """
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    if n == 0:
        raise InputError("empty dataset: nothing to stream")
    order = np.arange(n)
    if shuffle:
        order = derived_rng(seed, STREAM_SHUFFLE, epoch).permutation(n)
    n_workers = _worker_count(workers)
    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            jobs = [(ds.samples[i], image_size, params, rescale,
                     derived_rng(seed, STREAM_AUGMENT, epoch, i)) for i in idx]
            if pool is None:
                planes = [_prepare(*job) for job in jobs]
            else:
                planes = list(pool.map(lambda j: _prepare(*j), jobs))
            x = np.stack(planes)
            y = np.zeros((len(idx), len(ds.classes)), dtype=np.float32)
            y[np.arange(len(idx)), [ds.samples[i].label for i in idx]] = 1.0
            yield Batch(x=x, y=y)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)


def synth_image(size, label, rng):
    """One synthetic sample: noisy dark background plus a bright blob in the
    upper (label 0) or lower (label 1) half. Returns (image, bbox) with the
    image quantized to uint8 range and bbox as (x0, y0, x1, y1) inclusive.

    Variate order is frozen: cx fraction, cy fraction, radius fraction, then
    the background noise field.
    """
    cx = rng.uniform(0.30, 0.70) * (size - 1)
    lo, hi = (0.15, 0.27) if label == 0 else (0.73, 0.85)
    cy = rng.uniform(lo, hi) * (size - 1)
    radius = rng.uniform(0.15, 0.20) * size
    noise = rng.standard_normal((size, size))
    background = np.clip(25.0 + 10.0 * noise, 0.0, 255.0)
    ys, xs = _grid(size, size)
    dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
    coverage = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    gray = np.clip(background * (1 - coverage) + 235.0 * coverage, 0.0, 255.0)
    gray = np.round(gray).astype(np.float32)
    img = np.repeat(gray[:, :, None], 3, axis=2)
    bbox = (max(0, int(math.floor(cx - radius))), max(0, int(math.floor(cy - radius))),
            min(size - 1, int(math.ceil(cx + radius))), min(size - 1, int(math.ceil(cy + radius))))
    return img, bbox


def synth_dataset(n_per_class, size, seed):
    """Balanced two-class synthetic dataset, deterministic under ``seed``."""
    if n_per_class < 1:
        raise InputError(f"n_per_class must be >= 1, got {n_per_class}")
    samples = []
    for label in range(2):
        for i in range(n_per_class):
            img, bbox = synth_image(size, label, derived_rng(seed, STREAM_SYNTH, label, i))
            samples.append(Sample(source=img, label=label, meta={"bbox": bbox}))
    return Dataset(samples=samples)


def write_dataset_png(ds, out_dir):
    """Write every sample as an 8-bit PNG under ``out_dir/<class>/``."""
    out_dir = Path(out_dir)
    counters = [0 for _ in ds.classes]
    for s in ds.samples:
        name = ds.classes[s.label]
        class_dir = out_dir / name
        class_dir.mkdir(parents=True, exist_ok=True)
        img = np.clip(np.round(load_sample(s)), 0, 255).astype(np.uint8)
        path = class_dir / f"{name}_{counters[s.label]:05d}.png"
        PILImage.fromarray(img, mode="RGB").save(path, format="PNG")
        counters[s.label] += 1
    return out_dir
