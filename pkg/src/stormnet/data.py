"""Deterministic synthetic storm imagery with per-pixel flash labels.

Each 48x48 sample carries four channels in [0, 1]: vil (radar-like
liquid water), ir (inverted brightness temperature: cold tops over
storms), wv (a blurred correlate of ir), and vis (cloud mask plus
noise). Storm cells are elliptical Gaussians; per-pixel flash counts
are Poisson with rate alpha * vil^2 wherever vil exceeds the storm-core
threshold, with alpha calibrated by bisection so the fraction of
flash-positive pixels hits the requested target (about 1% by default,
a rare-event regime).

Every sample is generated from its own seed derived from
(dataset seed, split id, sample index), so generation order and worker
count never matter, and any sample can be regenerated in isolation
given the manifest's alpha.
"""

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import ShapeError
from .rng import Rng, derive_seed

CHANNELS = ("vil", "ir", "wv", "vis")
PERCENTILES = (0, 1, 10, 25, 50, 75, 90, 99, 100)
IMAGE_SIZE = 48
CORE_THRESHOLD = 0.5
GENERATOR_VERSION = 2
SPLIT_IDS = {"train": 0, "val": 1, "test": 2}
_FLASH_STREAM = 7919  # tag separating the flash stream from the field stream

_GRID_Y, _GRID_X = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)


class CalibrationError(RuntimeError):
    """Flash-rate calibration cannot reach the requested positive rate."""


@dataclass
class StormSample:
    image: np.ndarray   # [48, 48, 4]
    flashes: np.ndarray  # [48, 48] non-negative integer counts

    @property
    def image_flash_count(self) -> float:
        return float(self.flashes.sum())

    @property
    def has_lightning(self) -> bool:
        return self.image_flash_count >= 1.0


class DataSplit:
    """One split's images [N, 48, 48, 4] and flash maps [N, 48, 48]."""

    def __init__(self, images, flashes):
        self.images = np.ascontiguousarray(images, dtype=np.float64)
        self.flashes = np.ascontiguousarray(flashes, dtype=np.float64)
        self._features = None

    def __len__(self):
        return self.images.shape[0]

    def sample(self, i: int) -> StormSample:
        return StormSample(self.images[i], self.flashes[i])

    def labels_any(self) -> np.ndarray:
        """Image-level 0/1 label: does the image contain any flash."""
        return (self.flashes.sum(axis=(1, 2)) >= 1.0).astype(np.float64)

    def flash_counts(self) -> np.ndarray:
        return self.flashes.sum(axis=(1, 2))

    def pixel_labels(self) -> np.ndarray:
        return (self.flashes > 0).astype(np.float64)

    def percentile_features(self) -> np.ndarray:
        """[N, 36] engineered features: per channel, the 9 fixed percentiles."""
        if self._features is None:
            n = len(self)
            feats = np.empty((n, 4 * len(PERCENTILES)))
            for c in range(4):
                flat = self.images[:, :, :, c].reshape(n, -1)
                qs = np.percentile(flat, PERCENTILES, axis=1, method="linear")
                feats[:, c * len(PERCENTILES) : (c + 1) * len(PERCENTILES)] = qs.T
            self._features = feats
        return self._features

    def subset(self, idx) -> "DataSplit":
        return DataSplit(self.images[idx], self.flashes[idx])


class Dataset:
    def __init__(self, splits: dict, meta: dict):
        self.splits = splits
        self.meta = meta

    @property
    def train(self) -> DataSplit:
        return self.splits["train"]

    @property
    def val(self) -> DataSplit:
        return self.splits["val"]

    @property
    def test(self) -> DataSplit:
        return self.splits["test"]

    def save(self, path) -> None:
        arrays = {}
        for name, split in self.splits.items():
            arrays[f"{name}_images"] = split.images
            arrays[f"{name}_flashes"] = split.flashes.astype(np.uint16)
        container.write_dir(path, self.meta, arrays)

    @classmethod
    def load(cls, path, only=None) -> "Dataset":
        """Load splits from a dataset directory; ``only`` names a subset
        so, e.g., test evaluation never reads the training arrays."""
        wanted = tuple(only) if only is not None else tuple(SPLIT_IDS)
        names = [f"{n}_{kind}" for n in wanted for kind in ("images", "flashes")]
        meta, arrays = container.read_dir(path, names=names)
        splits = {}
        for name in wanted:
            splits[name] = DataSplit(
                arrays[f"{name}_images"], arrays[f"{name}_flashes"].astype(np.float64)
            )
        return cls(splits, meta)


def _blur1d(a, axis):
    weights = (1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16)
    pad = [(0, 0)] * a.ndim
    pad[axis] = (2, 2)
    p = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a)
    sl = [slice(None)] * a.ndim
    for i, w in enumerate(weights):
        sl[axis] = slice(i, i + a.shape[axis])
        out += w * p[tuple(sl)]
    return out


def blur(img, passes: int = 1):
    """Separable binomial smoothing over the two leading axes."""
    for _ in range(passes):
        img = _blur1d(_blur1d(img, 0), 1)
    return img


def _generate_fields(rng: Rng) -> np.ndarray:
    """Draw one sample's four channels (no flashes) from its stream."""
    vil = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    n_cells = rng.integer(5)
    for _ in range(n_cells):
        cx = rng.uniform(low=6.0, high=42.0)
        cy = rng.uniform(low=6.0, high=42.0)
        sx = rng.uniform(low=2.5, high=7.0)
        sy = rng.uniform(low=2.5, high=7.0)
        angle = rng.uniform(low=0.0, high=np.pi)
        amp = rng.uniform(low=0.25, high=1.05)
        dx = _GRID_X - cx
        dy = _GRID_Y - cy
        u = dx * np.cos(angle) + dy * np.sin(angle)
        v = -dx * np.sin(angle) + dy * np.cos(angle)
        vil += amp * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))
    vil = np.clip(vil, 0.0, 1.0)
    # the proxy channels are deliberately degraded copies (blur + noise)
    # so vil stays the most diagnostic channel for lightning
    shape = (IMAGE_SIZE, IMAGE_SIZE)
    ir = np.clip(1.0 - 0.55 * blur(vil, 5) + 0.15 * rng.normal(shape), 0.0, 1.0)
    wv = np.clip(0.85 * blur(ir, 4) + 0.12 * rng.normal(shape), 0.0, 1.0)
    cloud = (blur(vil, 1) > 0.04).astype(np.float64)
    vis = np.clip(0.1 + 0.7 * cloud + 0.10 * rng.normal(shape), 0.0, 1.0)
    return np.stack([vil, ir, wv, vis], axis=-1)


def _draw_flashes(sample_seed: int, vil: np.ndarray, alpha: float) -> np.ndarray:
    rng = Rng(derive_seed(sample_seed, _FLASH_STREAM))
    lam = alpha * vil * vil * (vil > CORE_THRESHOLD)
    return rng.poisson(lam).astype(np.float64)


def generate_sample(seed: int, split: str, index: int, alpha: float) -> StormSample:
    """Regenerate a single sample in isolation (alpha from the manifest)."""
    sample_seed = derive_seed(seed, SPLIT_IDS[split], index)
    fields = _generate_fields(Rng(sample_seed))
    flashes = _draw_flashes(sample_seed, fields[:, :, 0], alpha)
    return StormSample(fields, flashes)


def _calibrate_alpha(train_vil: np.ndarray, target: float) -> float:
    """Bisection on the expected positive-pixel fraction, which is
    monotone in alpha: E[positive] = mean((vil > t) * (1 - exp(-a vil^2)))."""
    core = train_vil * train_vil * (train_vil > CORE_THRESHOLD)

    def expected_rate(a: float) -> float:
        return float(np.mean(-np.expm1(-a * core) * (core > 0)))

    ceiling = float(np.mean(core > 0))
    if ceiling < target:
        raise CalibrationError(
            f"target positive rate {target} unreachable: at most {ceiling:.6f} "
            f"of pixels exceed the storm-core threshold"
        )
    lo, hi = 0.0, 1.0
    while expected_rate(hi) < target:
        hi *= 2.0
        if hi > 1e12:
            raise CalibrationError(
                f"calibration diverged; achieved {expected_rate(1e12):.6f} at alpha=1e12"
            )
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if expected_rate(mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


def generate(seed: int, n_train: int = 2000, n_val: int = 400, n_test: int = 400,
             pixel_pos_rate_target: float = 0.01) -> Dataset:
    """Generate the three splits; see the module docstring for the recipe."""
    counts = {"train": n_train, "val": n_val, "test": n_test}
    for name, n in counts.items():
        if n < 1:
            raise ValueError(f"{name} count must be >= 1, got {n}")
    images = {}
    for name, n in counts.items():
        stack = np.empty((n, IMAGE_SIZE, IMAGE_SIZE, 4))
        for i in range(n):
            stack[i] = _generate_fields(Rng(derive_seed(seed, SPLIT_IDS[name], i)))
        images[name] = stack

    alpha = _calibrate_alpha(images["train"][:, :, :, 0], pixel_pos_rate_target)

    splits = {}
    for name, n in counts.items():
        flashes = np.empty((n, IMAGE_SIZE, IMAGE_SIZE))
        for i in range(n):
            sample_seed = derive_seed(seed, SPLIT_IDS[name], i)
            flashes[i] = _draw_flashes(sample_seed, images[name][i, :, :, 0], alpha)
        splits[name] = DataSplit(images[name], flashes)

    achieved = float((splits["train"].flashes > 0).mean())
    meta = {
        "seed": seed,
        "generator_version": GENERATOR_VERSION,
        "alpha": alpha,
        "core_threshold": CORE_THRESHOLD,
        "pixel_pos_rate_target": pixel_pos_rate_target,
        "achieved_pixel_pos_rate": achieved,
        "counts": counts,
    }
    return Dataset(splits, meta)


def coarsen(img: np.ndarray, factor: int) -> np.ndarray:
    """Reduce resolution by non-overlapping block averaging."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    H, W = img.shape[:2]
    if H % factor or W % factor:
        raise ShapeError(f"coarsen: extents {H}x{W} not divisible by {factor}")
    shape = (H // factor, factor, W // factor, factor) + img.shape[2:]
    return img.reshape(shape).mean(axis=(1, 3))


def extract_percentiles(sample) -> np.ndarray:
    """36-feature vector: channels (vil, ir, wv, vis) x 9 fixed percentiles."""
    image = sample.image if isinstance(sample, StormSample) else np.asarray(sample)
    feats = np.empty(4 * len(PERCENTILES))
    for c in range(4):
        flat = image[:, :, c].ravel()
        feats[c * len(PERCENTILES) : (c + 1) * len(PERCENTILES)] = np.percentile(
            flat, PERCENTILES, method="linear"
        )
    return feats


@dataclass
class Patch:
    image: np.ndarray
    flashes: np.ndarray
    y0: int
    x0: int


def patch(sample: StormSample, size: int, min_pos_fraction: float) -> list:
    """Tile into (48/size)^2 patches, keeping those whose flash-positive
    pixel fraction is at least min_pos_fraction. Offsets allow stitching."""
    if size < 1 or IMAGE_SIZE % size:
        raise ValueError(f"patch size must divide {IMAGE_SIZE}, got {size}")
    out = []
    for y0 in range(0, IMAGE_SIZE, size):
        for x0 in range(0, IMAGE_SIZE, size):
            fl = sample.flashes[y0 : y0 + size, x0 : x0 + size]
            if (fl > 0).mean() >= min_pos_fraction:
                out.append(Patch(sample.image[y0 : y0 + size, x0 : x0 + size], fl, y0, x0))
    return out


def stitch(patches: list, full_size: int = IMAGE_SIZE) -> StormSample:
    """Reassemble patches (all tiles present) into a full sample."""
    if not patches:
        raise ValueError("stitch: no patches")
    channels = patches[0].image.shape[-1]
    image = np.zeros((full_size, full_size, channels))
    flashes = np.zeros((full_size, full_size))
    for p in patches:
        s = p.image.shape[0]
        image[p.y0 : p.y0 + s, p.x0 : p.x0 + s] = p.image
        flashes[p.y0 : p.y0 + s, p.x0 : p.x0 + s] = p.flashes
    return StormSample(image, flashes)


def apply_geometric(arr: np.ndarray, quarter_turns: int, flip_ud: bool, flip_lr: bool):
    """Right-angle rotation then optional flips over the two leading axes."""
    out = np.rot90(arr, quarter_turns, axes=(0, 1))
    if flip_ud:
        out = out[::-1]
    if flip_lr:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(sample: StormSample, rng: Rng, noise_std: float = 0.01) -> StormSample:
    """Random right-angle rotation, flips, and image-channel Gaussian noise.

    The flash map gets the identical geometric transform and no noise,
    so image-level labels are invariant.
    """
    k = rng.integer(4)
    flip_ud = rng.uniform() < 0.5
    flip_lr = rng.uniform() < 0.5
    image = apply_geometric(sample.image, k, flip_ud, flip_lr)
    flashes = apply_geometric(sample.flashes, k, flip_ud, flip_lr)
    if noise_std > 0:
        image = np.clip(image + rng.normal(image.shape, std=noise_std), 0.0, 1.0)
    return StormSample(image, flashes)


def augment_batch(images, flashes, rng: Rng, noise_std: float = 0.01):
    """Augment a batch sample by sample (fixed draw order)."""
    out_i = np.empty_like(images)
    out_f = np.empty_like(flashes)
    for i in range(images.shape[0]):
        s = augment(StormSample(images[i], flashes[i]), rng, noise_std)
        out_i[i] = s.image
        out_f[i] = s.flashes
    return out_i, out_f
