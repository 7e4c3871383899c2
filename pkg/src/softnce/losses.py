"""Contrastive losses with analytic gradients.

Two objectives over one positive and N negative similarities:

  info_nce   classic one-hot target: loss = -log p_0 with
             p = softmax([sim_pos, sim_negs...] / tau)
  soft_nce   smoothed target: mass alpha on the positive, beta_j on the
             j-th hardest negative, zero elsewhere, alpha + sum(beta) = 1;
             loss = -alpha*log p_0 - sum_n beta_n * log p_n

Both losses share one core, so soft_nce with alpha = 1 reduces to
info_nce bit-for-bit.  Gradients are (p - target) / tau in similarity
space, derived by hand from the weighted-cross-entropy-over-softmax
form; no autodiff anywhere.

The per-sample functions here are the double-precision reference path.
Batched training goes through kernels.softnce_rows, which implements
the same formulas; consistency between the two is under test.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    ConfigError,
    EmptyNegatives,
    InvalidTemperature,
    KTooLarge,
    MisalignedWeights,
)
from .tensorcore import as_array

PATTERNS = ("average", "linear_decay")
SCHEDULES = ("static", "incremental")


@dataclass(frozen=True)
class SmoothingConfig:
    """How smoothing mass is spread over negatives and scheduled over training.

    pattern    "average": the 1-alpha mass is split evenly over the top k.
               "linear_decay": mass on rank j is 2(k-j)/((k-1)k) * (1-alpha),
               so it decreases linearly with rank and the k-th rank gets
               exactly zero (the formula's quirk is kept as stated; see
               README).  k = 1 puts the whole mass on the hardest negative.
    schedule   "static": alpha is constant.  "incremental": alpha starts at 1
               and cosine-decays to alpha_min by the final epoch.
    """

    pattern: str = "linear_decay"
    k: int = 20
    schedule: str = "static"
    alpha: float = 0.8
    alpha_min: float = 0.8
    tau: float = 0.1

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.alpha_min <= 1.0:
            raise ConfigError(f"alpha_min must be in [0, 1], got {self.alpha_min}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")


@dataclass
class SmoothWeights:
    """Target distribution over [positive, negatives]: alpha + sum(betas) = 1.

    betas is index-aligned with the similarity vector it was built from;
    entries outside the top-k are exactly zero.  k_used < k_requested only
    in permissive mode when fewer negatives were available (clamped=True).
    """

    alpha: float
    betas: np.ndarray
    top_idx: np.ndarray
    k_requested: int
    k_used: int
    clamped: bool = False

    def check(self, tol: float = 1e-12):
        assert 0.0 <= self.alpha <= 1.0
        assert (self.betas >= 0).all()
        assert abs(self.alpha + self.betas.sum() - 1.0) <= tol
        assert np.count_nonzero(self.betas) <= self.k_used


@dataclass
class SimLoss:
    """Loss on one similarity row with similarity-space gradients.

    grad_positive is dloss/dsim_pos; grad_negatives aligns with the
    negative similarity vector the loss was computed from.
    """

    value: float
    grad_positive: float
    grad_negatives: np.ndarray

    @property
    def grad_all(self) -> np.ndarray:
        return np.concatenate(([self.grad_positive], self.grad_negatives))


@dataclass
class LossOutput:
    """Per-sample loss with gradients in embedding space."""

    value: float
    grad_query: np.ndarray
    grad_positive: np.ndarray
    grad_negatives: np.ndarray


@dataclass
class PairLoss:
    """Symmetric loss: mean of the two directional losses over a batch.

    grad_query_a/b are gradients of `value` w.r.t. the query-encoder
    embeddings of views a and b (keys and queue receive no gradient).
    """

    value: float
    forward_value: float
    reverse_value: float
    grad_query_a: np.ndarray
    grad_query_b: np.ndarray


def pattern_betas(pattern: str, k: int, alpha: float) -> np.ndarray:
    """Per-rank smoothing masses for the top k negatives (rank 1 = hardest)."""
    mass = 1.0 - alpha
    if pattern == "average":
        return np.full(k, mass / k)
    if pattern == "linear_decay":
        if k == 1:
            # continuous limit of the pattern: all mass on the hardest
            return np.array([mass])
        ranks = np.arange(1, k + 1, dtype=np.float64)
        return 2.0 * (k - ranks) / ((k - 1) * k) * mass
    raise ConfigError(f"unknown pattern {pattern!r}")


def beta_weights(
    sim_negs: np.ndarray,
    config: SmoothingConfig,
    alpha: float | None = None,
    strict: bool = True,
) -> SmoothWeights:
    """Rank negatives by similarity and assign the configured beta pattern.

    Rank 1 is the hardest (highest similarity); ties are broken by
    ascending index, which for queue similarities means the oldest slot.
    alpha defaults to config.alpha; schedule-driven callers pass the
    current alpha_at value instead.  strict=False clamps k to the number
    of negatives instead of raising KTooLarge, and reports the clamp on
    the returned weights.
    """
    sims = np.asarray(sim_negs, dtype=np.float64)
    n = sims.shape[0]
    if n == 0:
        raise EmptyNegatives("beta_weights needs at least one negative")
    if alpha is None:
        alpha = config.alpha
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    k = config.k
    clamped = False
    if k > n:
        if strict:
            raise KTooLarge(f"k={k} exceeds {n} available negatives")
        k = n
        clamped = True
    order = np.argsort(-sims, kind="stable")
    top = order[:k].copy()
    betas = np.zeros(n)
    betas[top] = pattern_betas(config.pattern, k, alpha)
    return SmoothWeights(
        alpha=alpha, betas=betas, top_idx=top,
        k_requested=config.k, k_used=k, clamped=clamped,
    )


def _weighted_core(sims_all: np.ndarray, w_all: np.ndarray, tau: float):
    """loss = sum_j w_j * (lse - z_j), grads = (softmax - w) / tau.

    Each (lse - z_j) term is >= 0 even in floating point, so the loss is
    never negative.
    """
    z = sims_all / tau
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    p = np.exp(z - lse)
    loss = float(np.dot(w_all, lse - z))
    grads = (p - w_all) / tau
    return loss, grads


def info_nce(sim_pos: float, sim_negs: np.ndarray, tau: float):
    """Eq.-style InfoNCE on one similarity row.

    Returns (loss, dloss_dsims) where dloss_dsims[0] is the derivative
    w.r.t. sim_pos and the rest align with sim_negs.
    """
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {tau}")
    negs = np.asarray(sim_negs, dtype=np.float64)
    if negs.ndim != 1 or negs.shape[0] == 0:
        raise EmptyNegatives("info_nce needs a nonempty 1-D vector of negatives")
    sims = np.concatenate(([float(sim_pos)], negs))
    w = np.zeros(sims.shape[0])
    w[0] = 1.0
    loss, grads = _weighted_core(sims, w, tau)
    return SimLoss(value=loss, grad_positive=float(grads[0]),
                   grad_negatives=grads[1:])


def soft_nce(sim_pos: float, sim_negs: np.ndarray, weights: SmoothWeights, tau: float):
    """Smoothed contrastive loss on one similarity row.

    weights must be index-aligned with sim_negs (normally produced by
    beta_weights on the same vector).  With weights.alpha = 1 the result
    is bitwise identical to info_nce.
    """
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {tau}")
    negs = np.asarray(sim_negs, dtype=np.float64)
    if negs.ndim != 1 or negs.shape[0] == 0:
        raise EmptyNegatives("soft_nce needs a nonempty 1-D vector of negatives")
    if weights.betas.shape[0] != negs.shape[0]:
        raise MisalignedWeights(
            f"{weights.betas.shape[0]} betas for {negs.shape[0]} negatives"
        )
    sims = np.concatenate(([float(sim_pos)], negs))
    w = np.concatenate(([weights.alpha], weights.betas))
    loss, grads = _weighted_core(sims, w, tau)
    return SimLoss(value=loss, grad_positive=float(grads[0]),
                   grad_negatives=grads[1:])


def alpha_at(epoch: int, total_epochs: int, config: SmoothingConfig) -> float:
    """Smoothing strength for an epoch.

    static: the configured alpha, every epoch.  incremental: alpha(0) = 1,
    cosine decay to alpha_min at epoch = total_epochs.
    """
    if epoch < 0 or epoch > total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    if config.schedule == "static":
        return config.alpha
    if total_epochs == 0:
        return 1.0
    a = config.alpha_min
    return a + (1.0 - a) * (1.0 + np.cos(np.pi * epoch / total_epochs)) / 2.0


def embedding_loss(
    query: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    weights: SmoothWeights,
    tau: float,
) -> LossOutput:
    """soft_nce evaluated from embeddings, with gradients pushed to them.

    query/positive are unit vectors (d,), negatives unit rows (n, d).
    Similarity gradients map back via sim = dot products:
    d sim_pos / d query = positive, d sim_n / d query = negatives[n].
    """
    query = np.asarray(query, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = as_array(negatives).astype(np.float64, copy=False)
    sim_pos = float(query @ positive)
    sim_negs = negatives @ query
    out = soft_nce(sim_pos, sim_negs, weights, tau)
    return LossOutput(
        value=out.value,
        grad_query=out.grad_positive * positive + negatives.T @ out.grad_negatives,
        grad_positive=out.grad_positive * query,
        grad_negatives=np.outer(out.grad_negatives, query),
    )


def batch_directional_loss(
    queries: np.ndarray,
    keys: np.ndarray,
    negatives: np.ndarray,
    config: SmoothingConfig,
    alpha: float,
    backend_name: str | None = None,
):
    """Mean smoothed loss of a batch against a frozen negative bank.

    queries/keys are aligned unit rows (b, d); negatives (n, d) is a queue
    snapshot shared by the whole batch.  Weights are ranked per row.  k is
    clamped to n (training runs permissive).  Returns (mean_loss,
    grad_queries) where grad_queries is d(mean)/d(queries); keys and
    negatives get no gradient (stop-gradient on the key path).
    """
    b = queries.shape[0]
    sim_pos = np.einsum("ij,ij->i", queries, keys)
    sim_negs = queries @ negatives.T
    k = min(config.k, sim_negs.shape[1])
    idx = kernels.topk_rows(sim_negs, k, backend_name)
    betas = pattern_betas(config.pattern, k, alpha)
    loss_rows, grad_pos, grad_negs = kernels.softnce_rows(
        sim_pos, sim_negs, idx, betas, alpha, config.tau, backend_name
    )
    mean_loss = float(loss_rows.mean())
    grad_queries = (grad_pos[:, None] * keys + grad_negs @ negatives) / b
    return mean_loss, grad_queries


def symmetric_pair_loss(
    embed_a_by_q,
    embed_b_by_k,
    embed_b_by_q,
    embed_a_by_k,
    queue,
    config: SmoothingConfig,
    alpha: float | None = None,
    backend_name: str | None = None,
) -> PairLoss:
    """Mean of the two directional losses, swapping query/key roles.

    Both directions score against the same queue snapshot.  Swapping the
    views (a_q,b_k,b_q,a_k) -> (b_q,a_k,a_q,b_k) leaves `value` exactly
    unchanged.  alpha defaults to the config's static value; schedules
    pass the current alpha_at explicitly.
    """
    negatives = queue.snapshot() if hasattr(queue, "snapshot") else as_array(queue)
    if negatives.shape[0] == 0:
        raise EmptyNegatives("symmetric loss needs a nonempty queue")
    if alpha is None:
        alpha = config.alpha
    a_q = as_array(embed_a_by_q)
    b_k = as_array(embed_b_by_k)
    b_q = as_array(embed_b_by_q)
    a_k = as_array(embed_a_by_k)
    l_ab, g_a = batch_directional_loss(a_q, b_k, negatives, config, alpha, backend_name)
    l_ba, g_b = batch_directional_loss(b_q, a_k, negatives, config, alpha, backend_name)
    return PairLoss(
        value=0.5 * (l_ab + l_ba),
        forward_value=l_ab,
        reverse_value=l_ba,
        grad_query_a=0.5 * g_a,
        grad_query_b=0.5 * g_b,
    )
