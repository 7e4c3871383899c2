"""Dispatch layer over the numpy and numba kernel builds.

Callers use these wrappers, never the _kernels_* modules directly; the
wrappers validate shapes, harmonize dtypes, and route to the backend
chosen in backend.py.  See backend.py for the SOFTNCE_BACKEND contract.
"""

import numpy as np

from . import _kernels_numpy, backend
from .errors import DimensionMismatch, MisalignedWeights


def _impl(override: str | None = None):
    name = backend.active_backend() if override is None else backend.resolve(override)
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    return _kernels_numpy


def topk_rows(sims: np.ndarray, k: int, backend_name: str | None = None) -> np.ndarray:
    """Top-k column indices per row, descending value, ties to ascending index.

    k is clamped to the row length; k < 1 is rejected.
    """
    sims = np.ascontiguousarray(sims)
    if sims.ndim != 2:
        raise DimensionMismatch(f"expected a (batch, n) similarity array, got shape {sims.shape}")
    if k < 1:
        raise DimensionMismatch(f"top-k needs k >= 1, got {k}")
    k = min(k, sims.shape[1])
    return _impl(backend_name).topk_rows(sims, k)


def softnce_rows(
    sim_pos: np.ndarray,
    sim_negs: np.ndarray,
    topk_idx: np.ndarray,
    betas: np.ndarray,
    alpha: float,
    tau: float,
    backend_name: str | None = None,
):
    """Batched smoothed-contrastive loss rows plus similarity gradients.

    Returns (loss (b,), grad_pos (b,), grad_negs (b, n)) where the gradient
    of row i's loss w.r.t. its similarities is (softmax - target) / tau.
    All float work happens in sim_negs' dtype; betas/alpha/tau are cast to it.
    """
    sim_pos = np.ascontiguousarray(sim_pos)
    sim_negs = np.ascontiguousarray(sim_negs)
    topk_idx = np.ascontiguousarray(topk_idx, dtype=np.int64)
    if sim_negs.ndim != 2 or sim_pos.shape != (sim_negs.shape[0],):
        raise DimensionMismatch(
            f"sim_pos {sim_pos.shape} does not align with sim_negs {sim_negs.shape}"
        )
    if topk_idx.shape[0] != sim_negs.shape[0] or topk_idx.shape[1] != betas.shape[0]:
        raise MisalignedWeights(
            f"topk_idx {topk_idx.shape} does not align with betas {betas.shape}"
        )
    dt = sim_negs.dtype
    betas = np.ascontiguousarray(betas, dtype=dt)
    return _impl(backend_name).softnce_rows(
        sim_pos.astype(dt, copy=False), sim_negs, topk_idx, betas,
        dt.type(alpha), dt.type(tau),
    )
