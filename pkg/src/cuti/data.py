"""Datasets: IDX ingestion, synthetic style-shifted digit domains, splits.

Images are stored as float32 arrays shaped ``[N, C, H, W]`` with pixels in
``[0, 1]``; labels are int64 arrays shaped ``[N]``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError

DOMAIN_TAGS = ("source", "cuti", "target", "synthetic")
STYLES = ("identity", "inverted", "colored", "noisy")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledBatch:
    images: np.ndarray
    labels: np.ndarray
    domain_tag: str = "source"
    num_classes: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise InvalidInputError(f"images must be [N, C, H, W], got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise InvalidInputError(
                f"{self.images.shape[0]} images but labels shaped {self.labels.shape}"
            )
        if self.domain_tag not in DOMAIN_TAGS:
            raise InvalidInputError(f"unknown domain tag {self.domain_tag!r}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise InvalidInputError("pixel values must lie in [0, 1]")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, index) -> "LabeledBatch":
        return LabeledBatch(self.images[index], self.labels[index], self.domain_tag, self.num_classes)

    def with_tag(self, tag: str) -> "LabeledBatch":
        return LabeledBatch(self.images, self.labels, tag, self.num_classes)

    def with_images(self, images) -> "LabeledBatch":
        return LabeledBatch(images, self.labels, self.domain_tag, self.num_classes)

    @staticmethod
    def concat(batches, domain_tag=None) -> "LabeledBatch":
        batches = list(batches)
        if not batches:
            raise InvalidInputError("nothing to concatenate")
        return LabeledBatch(
            np.concatenate([b.images for b in batches]),
            np.concatenate([b.labels for b in batches]),
            domain_tag or batches[0].domain_tag,
            max(b.num_classes for b in batches),
        )


@dataclass
class DomainDataset:
    name: str
    train: LabeledBatch
    test: LabeledBatch
    num_classes: int

    @property
    def image_shape(self):
        return self.train.image_shape


def content_hashes(batch: LabeledBatch) -> list[str]:
    """One SHA-1 digest per image, over its raw float32 bytes."""
    return [hashlib.sha1(np.ascontiguousarray(img).tobytes()).hexdigest() for img in batch.images]


def split_and_shuffle(dataset: LabeledBatch, seed: int, test_fraction: float = 0.2):
    """Deterministic shuffled train/test split; ``|test| = round(test_fraction * N)``."""
    n = len(dataset)
    n_test = int(np.floor(test_fraction * n + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])


# --------------------------------------------------------------------------- IDX


def _read_u32(buf: bytes, offset: int, what: str) -> int:
    if len(buf) < offset + 4:
        raise FormatError(f"file truncated while reading {what}", offset)
    return struct.unpack_from(">I", buf, offset)[0]


def _read_idx(path, expected_magic: int, ndim: int):
    buf = Path(path).read_bytes()
    if not buf:
        raise FormatError(f"{path}: empty file", 0)
    magic = _read_u32(buf, 0, "magic number")
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    dims = [_read_u32(buf, 4 + 4 * i, f"dimension {i}") for i in range(ndim)]
    header = 4 + 4 * ndim
    expected = header + int(np.prod(dims))
    if len(buf) < expected:
        raise FormatError(f"{path}: truncated data, need {expected} bytes, found {len(buf)}", len(buf))
    if len(buf) > expected:
        raise FormatError(f"{path}: {len(buf) - expected} trailing bytes", expected)
    data = np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)
    return data


def load_idx_dataset(images_path, labels_path, num_classes=None, domain_tag="source") -> LabeledBatch:
    """Parse an IDX image file (magic 0x803) and its label file (magic 0x801)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels", 4
        )
    pixels = images.astype(np.float32)[:, None] / 255.0
    return LabeledBatch(pixels, labels.astype(np.int64), domain_tag, num_classes)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``[N, H, W]`` and labels ``[N]`` as an IDX file pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def match_shape(batch: LabeledBatch, shape) -> LabeledBatch:
    """Replicate grayscale channels and center-pad/crop to ``(C, H, W)``."""
    c, h, w = shape
    imgs = batch.images
    if imgs.shape[1] != c:
        if imgs.shape[1] != 1:
            raise InvalidInputError(f"cannot map {imgs.shape[1]} channels onto {c}")
        imgs = np.repeat(imgs, c, axis=1)
    out = np.zeros((len(batch), c, h, w), dtype=np.float32)
    sh, sw = imgs.shape[2:]
    ch, cw = min(h, sh), min(w, sw)
    dy, dx = (h - ch) // 2, (w - cw) // 2
    sy, sx = (sh - ch) // 2, (sw - cw) // 2
    out[:, :, dy : dy + ch, dx : dx + cw] = imgs[:, :, sy : sy + ch, sx : sx + cw]
    return batch.with_images(out)


# --------------------------------------------------------------------- synthetic

# Glyph strokes in a unit box, x to the right, y downward.
_SEGMENTS = np.array(
    [
        [[0, 0], [1, 0]],  # top
        [[1, 0], [1, 0.5]],  # upper right
        [[1, 0.5], [1, 1]],  # lower right
        [[0, 1], [1, 1]],  # bottom
        [[0, 0.5], [0, 1]],  # lower left
        [[0, 0], [0, 0.5]],  # upper left
        [[0, 0.5], [1, 0.5]],  # middle
        [[0, 0], [1, 1]],  # diagonal down
        [[1, 0], [0, 1]],  # diagonal up
    ],
    dtype=np.float64,
)

_DIGIT_GLYPHS = [
    (0, 1, 2, 3, 4, 5),
    (1, 2),
    (0, 1, 6, 4, 3),
    (0, 1, 6, 2, 3),
    (5, 6, 1, 2),
    (0, 5, 6, 2, 3),
    (0, 5, 6, 4, 3, 2),
    (0, 1, 2),
    (0, 1, 2, 3, 4, 5, 6),
    (0, 1, 2, 3, 5, 6),
]


def glyph_table(n_classes: int):
    """Segment subsets for each class: the ten seven-segment digits, then extras."""
    glyphs = list(_DIGIT_GLYPHS)
    if n_classes > len(glyphs):
        from itertools import combinations

        seen = {frozenset(g) for g in glyphs}
        for k in range(2, len(_SEGMENTS) + 1):
            for combo in combinations(range(len(_SEGMENTS)), k):
                if len(glyphs) >= n_classes:
                    break
                if frozenset(combo) not in seen and (7 in combo or 8 in combo):
                    glyphs.append(combo)
    if n_classes > len(glyphs):
        raise InvalidInputError(f"at most {len(glyphs)} classes are supported")
    return glyphs[:n_classes]


def render_glyphs(labels, image_size: int, rng: np.random.Generator, n_classes: int | None = None):
    """Grayscale stroke images ``[N, H, W]`` in [0, 1] with random pose and thickness."""
    labels = np.asarray(labels)
    glyphs = glyph_table(n_classes or int(labels.max()) + 1)
    n = len(labels)
    s = float(image_size)

    height = rng.uniform(0.5, 0.72, n) * s
    width = height * rng.uniform(0.45, 0.65, n)
    angle = np.deg2rad(rng.uniform(-12, 12, n))
    shear = rng.uniform(-0.2, 0.2, n)
    center = s / 2 + rng.uniform(-0.08, 0.08, (n, 2)) * s
    thick = rng.uniform(0.045, 0.085, n) * s

    ys, xs = np.mgrid[0:image_size, 0:image_size] + 0.5
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1)  # [P, 2]
    out = np.zeros((n, image_size * image_size))

    cos, sin = np.cos(angle), np.sin(angle)
    for i in range(n):
        segs = _SEGMENTS[list(glyphs[labels[i]])] - 0.5  # [S, 2, 2]
        x = (segs[..., 0] + shear[i] * segs[..., 1]) * width[i]
        y = segs[..., 1] * height[i]
        px = cos[i] * x - sin[i] * y + center[i, 0]
        py = sin[i] * x + cos[i] * y + center[i, 1]
        a = np.stack([px[:, 0], py[:, 0]], axis=1)[:, None, :]  # [S, 1, 2]
        b = np.stack([px[:, 1], py[:, 1]], axis=1)[:, None, :]
        ab = b - a
        t = np.clip(((pix[None] - a) * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
        d = np.linalg.norm(pix[None] - (a + t[..., None] * ab), axis=-1).min(axis=0)
        out[i] = np.clip(thick[i] / 2 - d + 0.5, 0.0, 1.0)
    return out.reshape(n, image_size, image_size)


def _smooth_noise(rng, n, size, cells=4):
    """Low-frequency RGB texture via bilinear upsampling of a coarse random grid."""
    coarse = rng.uniform(0, 1, (n, 3, cells + 1, cells + 1))
    grid = np.linspace(0, cells, size)
    i0 = np.minimum(np.floor(grid).astype(int), cells - 1)
    frac = grid - i0
    rows = coarse[:, :, i0, :] * (1 - frac)[None, None, :, None] + coarse[:, :, i0 + 1, :] * frac[None, None, :, None]
    return rows[..., i0] * (1 - frac) + rows[..., i0 + 1] * frac


def apply_style(glyphs: np.ndarray, style: str, rng: np.random.Generator) -> np.ndarray:
    """Map grayscale glyphs ``[N, H, W]`` to styled RGB images ``[N, 3, H, W]``."""
    n, h, w = glyphs.shape
    g = glyphs[:, None].repeat(3, axis=1)
    if style == "identity":
        out = g
    elif style == "inverted":
        out = 1.0 - g
    elif style == "colored":
        background = _smooth_noise(rng, n, h)
        out = np.abs(background - g * rng.uniform(0.6, 1.0, (n, 3, 1, 1)))
    elif style == "noisy":
        base = rng.uniform(0.15, 0.45, (n, 1, 1, 1)) + rng.uniform(-0.05, 0.05, (n, 3, 1, 1))
        contrast = rng.uniform(0.3, 0.6, (n, 1, 1, 1))
        out = base + contrast * g + rng.normal(0.0, 0.08, g.shape)
    else:
        raise InvalidInputError(f"unknown style {style!r}; choose from {STYLES}")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass
class SyntheticSpec:
    n_classes: int = 10
    n_per_class: int = 625
    image_size: int = 32
    domain_styles: tuple = STYLES
    seed: int = 0
    test_fraction: float = 0.2

    def validate(self):
        if self.n_classes < 2:
            raise InvalidInputError("n_classes must be at least 2")
        if self.n_per_class < 1:
            raise InvalidInputError("n_per_class must be positive")
        if self.image_size < 8:
            raise InvalidInputError("image_size must be at least 8")
        if not self.domain_styles:
            raise InvalidInputError("at least one domain style is required")
        for style in self.domain_styles:
            if style not in STYLES:
                raise InvalidInputError(f"unknown style {style!r}; choose from {STYLES}")
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidInputError("test_fraction must lie in (0, 1)")
        glyph_table(self.n_classes)


def make_synthetic_domains(spec: SyntheticSpec) -> list[DomainDataset]:
    """Render one dataset per style over a shared label sequence.

    Every domain draws glyph poses from the same distribution and only the
    style transform differs, so semantics are shared and style is private.
    """
    spec.validate()
    labels = np.repeat(np.arange(spec.n_classes), spec.n_per_class)
    labels = np.random.default_rng([spec.seed, 0]).permutation(labels)
    domains = []
    for index, style in enumerate(spec.domain_styles):
        rng = np.random.default_rng([spec.seed, 1, index])
        glyphs = render_glyphs(labels, spec.image_size, rng, spec.n_classes)
        images = apply_style(glyphs, style, rng)
        full = LabeledBatch(images, labels, "source", spec.n_classes)
        train, test = split_and_shuffle(full, spec.seed, spec.test_fraction)
        domains.append(DomainDataset(style, train, test, spec.n_classes))
    return domains
