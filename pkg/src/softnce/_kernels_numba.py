"""Numba builds of the hot kernels.

Importing this module requires numba; backend.py guards the import.
Contracts and tie rules match _kernels_numpy exactly (same dtype in,
same dtype out), only the execution strategy differs: these are single
fused passes over each row instead of a chain of vectorized temporaries.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def topk_rows(sims, k):
    """Row-wise top-k indices by descending value, ties to the lower index.

    Linear scan with a sorted k-buffer insert: O(n) for random rows since
    most entries fail the cut without shifting.
    """
    b, n = sims.shape
    out = np.empty((b, k), dtype=np.int64)
    vals = np.empty(k, dtype=sims.dtype)
    for i in range(b):
        filled = 0
        for j in range(n):
            s = sims[i, j]
            if filled == k:
                if s <= vals[k - 1]:
                    continue
            else:
                filled += 1
            p = filled - 1
            # strict compare: an equal value never displaces an earlier index
            while p > 0 and s > vals[p - 1]:
                vals[p] = vals[p - 1]
                out[i, p] = out[i, p - 1]
                p -= 1
            vals[p] = s
            out[i, p] = j
    return out


@njit(cache=True)
def softnce_rows(sim_pos, sim_negs, topk_idx, betas, alpha, tau):
    """Fused per-row smoothed-contrastive loss and similarity gradients.

    Same math as the numpy build: logits [pos, negs]/tau, max-subtracted
    softmax, loss = sum_j target_j * (lse - z_j), grad = (p - target)/tau.
    """
    b, n = sim_negs.shape
    k = topk_idx.shape[1]
    loss = np.empty(b, dtype=sim_negs.dtype)
    grad_pos = np.empty(b, dtype=sim_negs.dtype)
    grad_negs = np.empty((b, n), dtype=sim_negs.dtype)
    for i in range(b):
        z0 = sim_pos[i] / tau
        m = z0
        for j in range(n):
            z = sim_negs[i, j] / tau
            if z > m:
                m = z
        e0 = np.exp(z0 - m)
        s = e0
        for j in range(n):
            s += np.exp(sim_negs[i, j] / tau - m)
        lse = m + np.log(s)

        li = alpha * (lse - z0)
        for j in range(k):
            li += betas[j] * (lse - sim_negs[i, topk_idx[i, j]] / tau)
        loss[i] = li

        grad_pos[i] = (e0 / s - alpha) / tau
        for j in range(n):
            grad_negs[i, j] = np.exp(sim_negs[i, j] / tau - m) / s
        for j in range(k):
            grad_negs[i, topk_idx[i, j]] -= betas[j]
        for j in range(n):
            grad_negs[i, j] /= tau
    return loss, grad_pos, grad_negs
