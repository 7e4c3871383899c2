"""Synthetic noisy-view data, CIFAR-10 binary ingestion, dataset dumps.

The synthetic generator produces Gaussian class blobs with two
controllable noise species:

  false negatives  pairs of distinct instances that share a latent
                   component, so treating them as negatives is wrong.
                   false_neg_rate sets the probability that two random
                   distinct instances collide.  Geometry: rate >= 1/C is
                   reached by skewing class sizes; rates in (0, 1/C) by
                   splitting each class into tight subclusters (the
                   latent unit becomes the subcluster); rate 0 makes
                   every instance its own latent.  None means plain
                   uniform classes (rate ~ 1/C).
  false positives  every instance carries a second latent component
                   drawn from another class; with probability
                   false_pos_rate a view pair's second view comes from
                   that component instead (a mismatched augmentation).

All draws are keyed streams of one seed, so generation is deterministic
and platform independent.
"""

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError, LabelOutOfRange, MalformedFile
from .tensorcore import Rng


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 10
    n_instances: int = 5000
    input_dim: int = 64
    class_sep: float = 4.0
    class_spread: float = 0.25
    aug_noise: float = 0.1
    false_neg_rate: float | None = None
    false_pos_rate: float = 0.0
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.n_classes < 2 or self.input_dim < 2:
            raise DataError("need n_classes >= 2 and input_dim >= 2")
        if self.n_instances < self.n_classes:
            raise DataError(
                f"{self.n_instances} instances cannot cover {self.n_classes} classes")
        if self.false_neg_rate is not None and not 0.0 <= self.false_neg_rate <= 1.0:
            raise DataError(f"false_neg_rate must be in [0, 1], got {self.false_neg_rate}")
        if not 0.0 <= self.false_pos_rate <= 1.0:
            raise DataError(f"false_pos_rate must be in [0, 1], got {self.false_pos_rate}")
        if not self.class_sep > 0:
            raise DataError(f"class_sep must be > 0, got {self.class_sep}")
        if self.class_spread < 0 or self.aug_noise < 0:
            raise DataError("class_spread and aug_noise must be >= 0")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise DataError(f"eval_fraction must be in [0, 1), got {self.eval_fraction}")


@dataclass
class LabeledDataset:
    """Inputs with class labels and a train/eval split tag per row (0 train, 1 eval)."""

    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    n_classes: int
    channel_stats: tuple | None = None

    def __post_init__(self):
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise LabelOutOfRange(
                f"labels must lie in [0, {self.n_classes}), "
                f"found range [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def train_inputs(self):
        return self.inputs[self.split == 0]

    @property
    def train_labels(self):
        return self.labels[self.split == 0]

    @property
    def eval_inputs(self):
        return self.inputs[self.split == 1]

    @property
    def eval_labels(self):
        return self.labels[self.split == 1]


@dataclass
class Instance:
    """One composite instance: primary position, alternate component, identity."""

    x: np.ndarray
    alt: np.ndarray
    instance_id: int
    latent_class: int


@dataclass
class SynthMeta:
    """Latent bookkeeping for a synthetic dataset (powers make_views)."""

    config: SynthConfig
    latent_id: np.ndarray
    alt_inputs: np.ndarray
    alt_class: np.ndarray
    class_means: np.ndarray

    def instance(self, dataset: LabeledDataset, i: int) -> Instance:
        return Instance(
            x=dataset.inputs[i], alt=self.alt_inputs[i],
            instance_id=i, latent_class=int(self.latent_id[i]),
        )


def _quota_counts(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment of `total` items over weights."""
    quotas = weights / weights.sum() * total
    base = np.floor(quotas).astype(np.int64)
    rem = total - int(base.sum())
    order = np.argsort(-(quotas - base), kind="stable")
    base[order[:rem]] += 1
    return base


def _skew_heavy(parts: int, rate: float) -> np.ndarray:
    """Part weights with one heavy part so that sum(w^2) = rate.

    Solves h^2 + (1-h)^2/(parts-1) = rate; requires rate >= 1/parts.
    """
    disc = 1.0 - parts * (1.0 - rate * (parts - 1))
    h = (1.0 + math.sqrt(max(disc, 0.0))) / parts
    w = np.full(parts, (1.0 - h) / (parts - 1))
    w[0] = h
    return w


def _assign_latents(config: SynthConfig, rng: Rng):
    """Class labels and latent component ids realizing the collision rate.

    Returns (labels, latent_id, n_latents).  The collision rate is the
    probability that two random distinct instances share a latent id.
    """
    c, n, r = config.n_classes, config.n_instances, config.false_neg_rate
    if r is not None and r >= 1.0 / c:
        counts = _quota_counts(_skew_heavy(c, r), n)
        labels = np.repeat(np.arange(c), counts)
        labels = labels[rng.stream("labels").permutation(n)]
        return labels, labels.astype(np.int64).copy(), c

    counts = _quota_counts(np.ones(c), n)
    labels = np.repeat(np.arange(c), counts)
    labels = labels[rng.stream("labels").permutation(n)]
    if r is None:
        return labels, labels.astype(np.int64).copy(), c

    latent = np.empty(n, dtype=np.int64)
    next_id = 0
    sub_stream = rng.stream("sublatents")
    for cls in range(c):
        members = np.flatnonzero(labels == cls)
        nc = members.size
        if r == 0.0:
            latent[members] = np.arange(next_id, next_id + nc)
            next_id += nc
            continue
        # per-class collision target q: overall r = (1/c) * q under uniform classes
        q = min(c * r, 1.0)
        parts = min(nc, max(2, math.ceil(1.0 / q)))
        sub_counts = _quota_counts(_skew_heavy(parts, max(q, 1.0 / parts)), nc)
        sub = np.repeat(np.arange(parts), sub_counts)
        sub = sub[sub_stream.permutation(nc)]
        latent[members] = next_id + sub
        next_id += parts
    return labels, latent, next_id


def synth_generate(config: SynthConfig, seed: int):
    """Build a labeled dataset plus latent metadata, deterministically.

    Geometry: class means sit at (class_sep / sqrt(2 d)) * N(0, I), which
    makes the expected distance between two class means ~ class_sep.
    Within a class, instances spread by class_spread * that scale; when
    latents are subclusters the subcluster centers carry the spread and
    members sit 0.35x tighter around them.
    """
    rng = Rng(seed)
    c, n, d = config.n_classes, config.n_instances, config.input_dim
    scale = config.class_sep / math.sqrt(2.0 * d)
    spread = config.class_spread * scale

    means = scale * rng.stream("means").standard_normal((c, d))
    labels, latent, n_latents = _assign_latents(config, rng)

    latent_is_class = bool(np.array_equal(latent, labels)) and n_latents == c
    pos_stream = rng.stream("positions")
    if latent_is_class:
        inputs = means[labels] + spread * pos_stream.standard_normal((n, d))
    else:
        first_member = np.full(n_latents, -1, dtype=np.int64)
        for i, l in enumerate(latent):
            if first_member[l] < 0:
                first_member[l] = i
        latent_class = labels[first_member]
        centers = means[latent_class] + spread * rng.stream("latent-centers").standard_normal((n_latents, d))
        inputs = centers[latent] + 0.35 * spread * pos_stream.standard_normal((n, d))

    alt_stream = rng.stream("alt")
    shift = alt_stream.integers(1, c, size=n)
    alt_class = (labels + shift) % c
    alt_inputs = means[alt_class] + spread * alt_stream.standard_normal((n, d))

    n_eval = int(round(config.eval_fraction * n))
    split = np.zeros(n, dtype=np.uint8)
    split[rng.stream("split").permutation(n)[:n_eval]] = 1

    dataset = LabeledDataset(inputs=inputs, labels=labels.astype(np.int64),
                             split=split, n_classes=c)
    meta = SynthMeta(config=config, latent_id=latent, alt_inputs=alt_inputs,
                     alt_class=alt_class, class_means=means)
    return dataset, meta


@dataclass
class ViewPair:
    view_a: np.ndarray
    view_b: np.ndarray
    instance_id: int
    latent_class: int
    is_false_positive: bool


def make_views(instance: Instance, config: SynthConfig, rng: np.random.Generator):
    """Two augmented views of one instance.

    Both views are the instance plus isotropic noise of scale aug_noise;
    with probability false_pos_rate view_b is built from the alternate
    latent component instead and the pair is flagged false positive.
    """
    d = instance.x.shape[0]
    view_a = instance.x + config.aug_noise * rng.standard_normal(d)
    swapped = bool(rng.random() < config.false_pos_rate)
    base = instance.alt if swapped else instance.x
    view_b = base + config.aug_noise * rng.standard_normal(d)
    return ViewPair(view_a=view_a, view_b=view_b, instance_id=instance.instance_id,
                    latent_class=instance.latent_class, is_false_positive=swapped)


def make_view_batch(inputs: np.ndarray, alts: np.ndarray, config: SynthConfig,
                    rng: np.random.Generator):
    """Vectorized make_views over rows; returns (views_a, views_b, fp_flags)."""
    b, d = inputs.shape
    views_a = inputs + config.aug_noise * rng.standard_normal((b, d))
    swapped = rng.random(b) < config.false_pos_rate
    base = np.where(swapped[:, None], alts, inputs)
    views_b = base + config.aug_noise * rng.standard_normal((b, d))
    return views_a, views_b, swapped


RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes per CIFAR-10 record


def load_cifar10(path, stats: tuple | None = None, split: str = "train") -> LabeledDataset:
    """Read a CIFAR-10 binary batch file into flattened normalized vectors.

    Pixels are scaled to [0, 1] and normalized per channel.  stats=None
    computes (mean, std) from this file, treating it as the training
    split; pass a training dataset's channel_stats when loading an eval
    batch.  The stats used are attached to the returned dataset.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % RECORD_BYTES != 0:
        raise MalformedFile(
            f"{path}: {len(raw)} bytes is not a positive multiple of {RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise LabelOutOfRange(f"{path}: label {labels.max()} outside [0, 9]")
    pixels = records[:, 1:].astype(np.float64) / 255.0
    by_channel = pixels.reshape(-1, 3, 1024)
    if stats is None:
        mean = by_channel.mean(axis=(0, 2))
        std = by_channel.std(axis=(0, 2))
        std = np.where(std < 1e-8, 1.0, std)
        stats = (mean, std)
    mean, std = stats
    by_channel = (by_channel - mean[None, :, None]) / std[None, :, None]
    # stats are computed in double for accuracy; storage stays single
    inputs = by_channel.reshape(-1, 3072).astype(np.float32)
    tag = 1 if split == "eval" else 0
    return LabeledDataset(
        inputs=inputs, labels=labels,
        split=np.full(labels.shape[0], tag, dtype=np.uint8),
        n_classes=10, channel_stats=stats,
    )


DUMP_MAGIC = b"SNDS"
DUMP_VERSION = 1


def save_dataset(path, dataset: LabeledDataset):
    """Binary dump: header, float32 inputs, int64 labels, split tags, crc32."""
    n, d = dataset.inputs.shape
    buf = bytearray()
    buf += DUMP_MAGIC
    buf += struct.pack("<IIII", DUMP_VERSION, n, d, dataset.n_classes)
    buf += np.ascontiguousarray(dataset.inputs, dtype=np.float32).tobytes()
    buf += np.ascontiguousarray(dataset.labels, dtype=np.int64).tobytes()
    buf += np.ascontiguousarray(dataset.split, dtype=np.uint8).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_dataset(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != DUMP_MAGIC:
        raise MalformedFile(f"{path}: not a dataset dump")
    if zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
        raise MalformedFile(f"{path}: checksum mismatch")
    version, n, d, n_classes = struct.unpack("<IIII", raw[4:20])
    if version != DUMP_VERSION:
        raise MalformedFile(f"{path}: dump version {version} unsupported")
    pos = 20
    need = n * d * 4 + n * 8 + n
    if len(raw) - 4 - pos != need:
        raise MalformedFile(f"{path}: payload size mismatch")
    inputs = np.frombuffer(raw, dtype=np.float32, count=n * d, offset=pos).reshape(n, d).copy()
    pos += n * d * 4
    labels = np.frombuffer(raw, dtype=np.int64, count=n, offset=pos).copy()
    pos += n * 8
    split = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos).copy()
    return LabeledDataset(inputs=inputs, labels=labels, split=split, n_classes=n_classes)
