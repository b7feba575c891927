"""Datasets, the synthetic low-frequency task generator, and episode sampling.

The synthetic generator builds one smooth class template per class directly
in the frequency domain (seeded complex coefficients strictly inside the
signal radius, conjugate-symmetrized so the spatial image is real), then
adds per-sample high-frequency noise living strictly outside that radius.
Template pixel ranges are kept away from [0, 1] edges so adding bounded
noise never needs clamping, which keeps each class's spectral content exact.

Dataset files (FSDS, little-endian):

    magic "FSDS" | u32 version | u32 N | u32 C | u32 H | u32 W |
    u32 class_count | u8 split_tag (0 = base, 1 = novel) |
    N * u16 labels | N*C*H*W float32 pixels

Episode query labels are sealed: finetuning code receives the Episode but
only the evaluator calls reveal() on the label box.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_SPLIT_TAGS = {"base": 0, "novel": 1}
_SPLIT_NAMES = {v: k for k, v in _SPLIT_TAGS.items()}


class DatasetError(Exception):
    """Malformed dataset file or invalid generator/episode request."""


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, d, d] float32 in [0, 1]
    labels: np.ndarray  # [N] int class ids
    class_count: int
    split: str  # "base" | "novel"

    def __post_init__(self):
        if self.split not in _SPLIT_TAGS:
            raise DatasetError(f"split must be 'base' or 'novel', got {self.split!r}")
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                f"images {self.images.shape} do not match labels {self.labels.shape}"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise DatasetError("label outside [0, class_count)")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise DatasetError(f"pixel range [{lo:.4f}, {hi:.4f}] outside [0, 1]")

    @property
    def side(self) -> int:
        return self.images.shape[-1]

    @property
    def size(self) -> int:
        return self.images.shape[0]


class SealedLabels:
    """Ground-truth query labels, readable only by code that evaluates."""

    __slots__ = ("_values",)

    def __init__(self, values: np.ndarray):
        self._values = values

    def reveal(self) -> np.ndarray:
        return self._values

    def __repr__(self):
        return f"SealedLabels(n={self._values.shape[0]})"


@dataclass
class Episode:
    """One k-way task: labeled support, unlabeled query, sealed ground truth."""

    k: int
    support_images: np.ndarray
    support_labels: np.ndarray
    query_images: np.ndarray
    query_labels: SealedLabels = field(repr=False)

    @property
    def n_support(self) -> int:
        return self.support_images.shape[0]

    @property
    def n_query(self) -> int:
        return self.query_images.shape[0]


@dataclass
class SyntheticConfig:
    base_classes: int = 8
    novel_classes: int = 5
    per_class: int = 40
    side: int = 32
    channels: int = 3
    signal_radius: int = 8
    noise_amp: float = 0.1
    contrast: float = 0.3  # template half-range around the 0.5 mean


def _symmetrize(plane: np.ndarray) -> np.ndarray:
    """Enforce conjugate symmetry on a centered spectrum so ifft is real."""
    d = plane.shape[-1]
    idx = (d - np.arange(d)) % d
    reflected = np.conj(plane[..., idx, :][..., :, idx])
    return 0.5 * (plane + reflected)


def _centered_distance(d: int) -> np.ndarray:
    p = np.arange(d)
    return np.sqrt((p[:, None] - d / 2) ** 2 + (p[None, :] - d / 2) ** 2)


def _spatial_from_centered(spec: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.fft.ifftshift(spec, axes=(-2, -1))).real


def _random_plane(rng, channels: int, d: int) -> np.ndarray:
    coeff = rng.standard_normal((channels, d, d)) + 1j * rng.standard_normal(
        (channels, d, d)
    )
    dist = _centered_distance(d)
    return coeff / (1.0 + dist) ** 1.5


# How much of the sub-2 band is class-specific (the rest is shared within a
# class pair). Keeps the lowest radius informative but genuinely lossy, so
# the curriculum and ensemble have real work to do above it.
_LOW_RING_OWN_FRACTION = 0.5


def _split_templates(rng, count: int, channels: int, d: int, radius: int,
                     contrast: float) -> list[np.ndarray]:
    """Templates for one split. Spectral power tilts toward the lowest
    rings, and the band strictly below radius 2 is mostly shared between
    class pairs: the very lowest frequencies alone degrade pair
    discrimination, while a few rings up restores full separability. DC is
    excluded everywhere; the shared mean carries no class information."""
    dist = _centered_distance(d)
    body = (dist >= 2) & (dist < radius)
    low_ring = (dist > 0) & (dist < 2)
    shared = [_random_plane(rng, channels, d) for _ in range((count + 1) // 2)]
    own_frac = _LOW_RING_OWN_FRACTION
    out = []
    for local in range(count):
        own = _random_plane(rng, channels, d)
        low = (1.0 - own_frac) * shared[local // 2] + own_frac * own
        spec = np.where(body, own, 0) + np.where(low_ring, low, 0)
        img = _spatial_from_centered(_symmetrize(spec))
        peak = np.abs(img).max()
        if peak > 0:
            img = img * (contrast / peak)
        out.append(0.5 + img)
    return out


def _make_noise(rng, channels: int, d: int, radius: int, amp: float):
    if amp == 0.0:
        return np.zeros((channels, d, d))
    dist = _centered_distance(d)
    outside = dist >= radius
    coeff = rng.standard_normal((channels, d, d)) + 1j * rng.standard_normal(
        (channels, d, d)
    )
    spec = _symmetrize(np.where(outside, coeff, 0))
    img = _spatial_from_centered(spec)
    peak = np.abs(img).max()
    if peak > 0:
        img = img * (amp / peak)
    return img


def generate_synthetic(
    cfg: SyntheticConfig, seed: int
) -> tuple[Dataset, Dataset]:
    """Deterministic (base, novel) pair with disjoint class identities."""
    if cfg.side % 2 or cfg.side < 16:
        raise DatasetError(f"side must be even and >= 16, got {cfg.side}")
    if cfg.base_classes < 1 or cfg.novel_classes < 1:
        raise DatasetError("need at least one base and one novel class")
    if cfg.signal_radius < 2 or cfg.signal_radius > cfg.side // 2:
        raise DatasetError(
            f"signal_radius must lie in [2, side/2], got {cfg.signal_radius}"
        )
    if not 0.0 <= cfg.noise_amp <= 0.5 - cfg.contrast:
        raise DatasetError(
            "noise_amp must lie in [0, 0.5 - contrast] so pixels stay in [0, 1]"
        )
    rng = np.random.default_rng(seed)
    templates = _all_templates(rng, cfg)

    def build(class_ids: list[int], split: str) -> Dataset:
        n = len(class_ids) * cfg.per_class
        images = np.empty((n, cfg.channels, cfg.side, cfg.side), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        row = 0
        for local, cid in enumerate(class_ids):
            for _ in range(cfg.per_class):
                noise = _make_noise(
                    rng, cfg.channels, cfg.side, cfg.signal_radius, cfg.noise_amp
                )
                images[row] = (templates[cid] + noise).astype(np.float32)
                labels[row] = local
                row += 1
        return Dataset(images, labels, len(class_ids), split)

    total = cfg.base_classes + cfg.novel_classes
    base = build(list(range(cfg.base_classes)), "base")
    novel = build(list(range(cfg.base_classes, total)), "novel")
    check_disjoint(base, novel)
    return base, novel


def _all_templates(rng, cfg: SyntheticConfig) -> list[np.ndarray]:
    args = (cfg.channels, cfg.side, cfg.signal_radius, cfg.contrast)
    return _split_templates(rng, cfg.base_classes, *args) + _split_templates(
        rng, cfg.novel_classes, *args
    )


def class_templates(cfg: SyntheticConfig, seed: int) -> np.ndarray:
    """The exact per-class templates the generator used (oracle for tests)."""
    return np.stack(_all_templates(np.random.default_rng(seed), cfg))


# -- FSDS file format -------------------------------------------------------

_FSDS_MAGIC = b"FSDS"
_FSDS_VERSION = 1


def save_dataset(ds: Dataset, path) -> None:
    n, c, h, w = ds.images.shape
    if n > 0xFFFFFFFF or ds.class_count > 0xFFFF:
        raise DatasetError("dataset too large for the file format")
    blob = bytearray()
    blob += _FSDS_MAGIC
    blob += struct.pack(
        "<IIIIIIB", _FSDS_VERSION, n, c, h, w, ds.class_count,
        _SPLIT_TAGS[ds.split],
    )
    blob += ds.labels.astype("<u2").tobytes()
    blob += np.ascontiguousarray(ds.images, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<IIIIIIB") + 4
    if len(raw) < head:
        raise DatasetError(f"{path}: truncated header")
    if raw[:4] != _FSDS_MAGIC:
        raise DatasetError(f"{path}: bad magic, not an FSDS file")
    version, n, c, h, w, class_count, tag = struct.unpack(
        "<IIIIIIB", raw[4:head]
    )
    if version != _FSDS_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    if tag not in _SPLIT_NAMES:
        raise DatasetError(f"{path}: unknown split tag {tag}")
    need = head + 2 * n + 4 * n * c * h * w
    if len(raw) != need:
        raise DatasetError(
            f"{path}: expected {need} bytes for {n} samples, file has {len(raw)}"
        )
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=head).astype(np.int64)
    images = np.frombuffer(
        raw, dtype="<f4", count=n * c * h * w, offset=head + 2 * n
    ).reshape(n, c, h, w).copy()
    if labels.size and labels.max() >= class_count:
        raise DatasetError(f"{path}: label {labels.max()} >= class count {class_count}")
    return Dataset(images, labels, class_count, _SPLIT_NAMES[tag])


def check_disjoint(base: Dataset, novel: Dataset) -> None:
    """Base and novel must carry different split tags; the synthetic
    generator additionally guarantees distinct template identities."""
    if base.split == novel.split:
        raise DatasetError(
            f"expected disjoint splits, both datasets are tagged {base.split!r}"
        )


# -- episode sampling --------------------------------------------------------


def sample_episode(
    novel: Dataset,
    k: int,
    shots,
    queries_per_class: int,
    rng: np.random.Generator,
) -> Episode:
    """Draw a k-way episode; shots is one int or an explicit per-class list.

    Classes are sampled without replacement, support and query sets are
    disjoint, and labels are remapped to [0, k).
    """
    if novel.split != "novel":
        raise DatasetError("episodes are sampled from the novel split")
    if k < 2 or k > novel.class_count:
        raise DatasetError(f"cannot sample {k}-way from {novel.class_count} classes")
    counts = (
        [int(shots)] * k if np.isscalar(shots) else [int(s) for s in shots]
    )
    if len(counts) != k or any(s < 1 for s in counts):
        raise DatasetError(f"per-class shot counts {counts} invalid for k={k}")
    classes = rng.choice(novel.class_count, size=k, replace=False)
    sup_idx: list[np.ndarray] = []
    qry_idx: list[np.ndarray] = []
    for slot, (cls, n_s) in enumerate(zip(classes, counts)):
        pool = np.flatnonzero(novel.labels == cls)
        need = n_s + queries_per_class
        if pool.size < need:
            raise DatasetError(
                f"class {cls} has {pool.size} samples, episode needs {need}"
            )
        picked = rng.choice(pool, size=need, replace=False)
        sup_idx.append(picked[:n_s])
        qry_idx.append(picked[n_s:])
    sup = np.concatenate(sup_idx)
    qry = np.concatenate(qry_idx)
    sup_labels = np.concatenate(
        [np.full(c, slot, dtype=np.int64) for slot, c in enumerate(counts)]
    )
    qry_labels = np.concatenate(
        [np.full(queries_per_class, slot, dtype=np.int64) for slot in range(k)]
    )
    return Episode(
        k=k,
        support_images=novel.images[sup].copy(),
        support_labels=sup_labels,
        query_images=novel.images[qry].copy(),
        query_labels=SealedLabels(qry_labels),
    )
