"""Pure-numpy reference kernels.

Same contracts as _kernels_numba; this path is always importable and is
the ground truth the numba build is tested against.
"""

import numpy as np


def topk_rows(sims: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-k indices of `sims` (b, n), ordered by descending value.

    Ties are broken by ascending column index, so for queue similarities the
    oldest slot wins.  Runs in O(n + k log k) per row via a partition
    threshold; only the <= k candidates near the cut get sorted.

    Requires 1 <= k <= n (callers clamp).
    """
    b, n = sims.shape
    out = np.empty((b, k), dtype=np.int64)
    # value of the k-th largest entry per row, O(n)
    kth = np.partition(sims, n - k, axis=1)[:, n - k]
    for i in range(b):
        row = sims[i]
        t = kth[i]
        above = np.flatnonzero(row > t)          # strictly above the cut, < k of them
        ties = np.flatnonzero(row == t)          # ascending index by construction
        cand = np.concatenate([above, ties[: k - above.size]])
        # stable sort keeps ascending-index order inside equal-value groups
        order = np.argsort(-row[cand], kind="stable")
        out[i] = cand[order]
    return out


def softnce_rows(
    sim_pos: np.ndarray,
    sim_negs: np.ndarray,
    topk_idx: np.ndarray,
    betas: np.ndarray,
    alpha: float,
    tau: float,
):
    """Fused smoothed-contrastive loss over a batch of similarity rows.

    For each row, logits are [sim_pos, sim_negs...] / tau and the target
    distribution puts alpha on the positive and betas[j] on the j-th ranked
    negative (topk_idx[i, j]).  Returns per-row losses and the gradients of
    the per-row loss with respect to sim_pos and every entry of sim_negs:
    grad = (softmax - target) / tau.

    Shapes: sim_pos (b,), sim_negs (b, n), topk_idx (b, k), betas (k,).
    """
    z0 = sim_pos / tau
    zn = sim_negs / tau
    m = np.maximum(z0, zn.max(axis=1))
    e0 = np.exp(z0 - m)
    en = np.exp(zn - m[:, None])
    s = e0 + en.sum(axis=1)
    lse = m + np.log(s)

    zk = np.take_along_axis(zn, topk_idx, axis=1)
    loss = alpha * (lse - z0) + ((lse[:, None] - zk) * betas[None, :]).sum(axis=1)

    w = np.zeros_like(sim_negs)
    np.put_along_axis(w, topk_idx, np.broadcast_to(betas, topk_idx.shape), axis=1)
    grad_pos = (e0 / s - alpha) / tau
    grad_negs = (en / s[:, None] - w) / tau
    return loss, grad_pos, grad_negs
