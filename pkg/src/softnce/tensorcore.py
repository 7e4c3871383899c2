"""Dense array primitives and seeded randomness.

Everything downstream (losses, model, queue, eval) is built on the few
operations here.  Arrays are plain row-major numpy ndarrays; Matrix is a
thin checked wrapper used at module boundaries where the shape contract
matters.  All functions are pure.

Randomness: `Rng` wraps Philox, a counter-based generator whose output
is a pure function of (key, counter) and therefore identical on every
platform.  Streams are derived, not advanced: `Rng(seed).stream(*tags)`
keys a fresh generator from the seed plus a hash of the tag tuple, so a
resumed run only needs the seed and the loop counters to reproduce the
exact draws of an uninterrupted one.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidTemperature, NumericFailure, ZeroVector

_PRECISION_DTYPE = {"single": np.float32, "double": np.float64}


@dataclass(frozen=True)
class Matrix:
    """A checked, row-major, finite 2-D float array.

    check=True (the default) rejects NaN/Inf at construction; pass
    check=False only for hot paths that already guarantee finiteness.
    """

    data: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 2:
            raise DimensionMismatch(f"Matrix needs 2 dimensions, got {arr.ndim}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if self.check and not np.isfinite(arr).all():
            raise NumericFailure("Matrix rejects non-finite values in checked mode")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def precision(self) -> str:
        return "single" if self.data.dtype == np.float32 else "double"


def as_array(x) -> np.ndarray:
    """Accept a Matrix or ndarray and hand back the underlying ndarray."""
    return x.data if isinstance(x, Matrix) else np.asarray(x)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction.

    Raises ZeroVector when the norm is below 1e-12.
    """
    v = np.asarray(v, dtype=np.result_type(v, np.float32))
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ZeroVector(f"cannot normalize a vector with norm {n:.3e}")
    return v / n


def l2_normalize_rows(x) -> np.ndarray:
    """Row-wise l2 normalization of a 2-D array; ZeroVector names the first bad row."""
    arr = as_array(x)
    norms = np.linalg.norm(arr, axis=1)
    bad = norms < 1e-12
    if bad.any():
        raise ZeroVector(f"row {int(np.flatnonzero(bad)[0])} has norm below 1e-12")
    return arr / norms[:, None]


def softmax_temp(logits: np.ndarray, tau: float) -> np.ndarray:
    """Temperature-scaled softmax with max-subtraction for stability.

    Raises InvalidTemperature when tau <= 0.
    """
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {tau}")
    z = np.asarray(logits, dtype=np.result_type(logits, np.float32)) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cosine_sim_matrix(a, b) -> np.ndarray:
    """Pairwise dot products of unit rows: entry (i, j) = a_i . b_j."""
    a = as_array(a)
    b = as_array(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(
            f"row dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    return a @ b.T


def dtype_for(precision: str):
    if precision not in _PRECISION_DTYPE:
        raise ValueError(f"precision must be 'single' or 'double', got {precision!r}")
    return _PRECISION_DTYPE[precision]


class Rng:
    """Seeded, splittable randomness with platform-independent streams.

    Each stream is an independent Philox generator keyed by the 64-bit
    seed and a blake2b hash of the tag tuple.  Streams never share state,
    so draw order inside one stream cannot perturb another; training code
    keys streams by purpose and loop counters ("views", epoch, batch).
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, *tags) -> np.random.Generator:
        label = "/".join(str(t) for t in tags).encode("utf-8")
        digest = hashlib.blake2b(label, digest_size=8).digest()
        tag_key = int.from_bytes(digest, "little")
        key = np.array([self.seed, tag_key], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))
