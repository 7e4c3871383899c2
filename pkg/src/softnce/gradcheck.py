"""Finite-difference verification of every analytic gradient in the engine.

Four suites, all in double precision with central differences (h = 1e-6):

  info      d info_nce / d sims
  soft      d soft_nce / d sims, both patterns, k in {1, 2, 5, 20},
            with weights re-ranked at each perturbed point
  jacobian  the l2-normalization Jacobian behind the projector output
  chain     every parameter of a small encoder+projector through the
            smoothed loss (the full backward path)

Configurations that sit too close to a kink are redrawn: ReLU
preactivations within 1e-4 of zero, or negative similarities within
1e-4 of each other (where the top-k ranking, and with it the weight
vector, would flip inside the difference stencil).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .losses import SmoothingConfig, beta_weights, embedding_loss, info_nce, soft_nce
from .model import backward, build_network, forward, params
from .tensorcore import Rng, l2_normalize_rows

H = 1e-6
K_GRID = (1, 2, 5, 20)
# per 20 trials: 5 info, 9 soft, 3 jacobian, 3 chain
_CYCLE = ("info",) * 5 + ("soft",) * 9 + ("jacobian",) * 3 + ("chain",) * 3


@dataclass
class CaseResult:
    kind: str
    index: int
    rel_error: float
    detail: str = ""


@dataclass
class GradcheckReport:
    seed: int
    trials: int
    tolerance: float
    cases: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def max_rel_error(self) -> float:
        return max(c.rel_error for c in self.cases)

    @property
    def worst(self) -> CaseResult:
        return max(self.cases, key=lambda c: c.rel_error)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def fd_gradient(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the sup norm of the numeric gradient."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = np.abs(numeric).max() + 1e-12
    return float(np.abs(analytic - numeric).max() / scale)


def _draw_sims(g: np.random.Generator, n: int):
    """Similarities in (-1, 1) whose negative entries are pairwise >= 1e-4 apart."""
    while True:
        pos = float(g.uniform(-0.95, 0.95))
        negs = g.uniform(-0.95, 0.95, size=n)
        gaps = np.diff(np.sort(negs))
        if gaps.size == 0 or gaps.min() > 1e-4:
            return pos, negs


def _case_info(g: np.random.Generator) -> float:
    n = int(g.integers(3, 41))
    tau = float(g.uniform(0.05, 1.0))
    pos, negs = _draw_sims(g, n)
    sims = np.concatenate(([pos], negs))
    analytic = info_nce(sims[0], sims[1:], tau).grad_all
    numeric = fd_gradient(lambda: info_nce(sims[0], sims[1:], tau).value, sims)
    return rel_error(analytic, numeric)


def _case_soft(g: np.random.Generator, case_index: int) -> float:
    k = K_GRID[case_index % len(K_GRID)]
    pattern = "average" if (case_index // len(K_GRID)) % 2 == 0 else "linear_decay"
    n = int(g.integers(max(k + 1, 3), 41))
    tau = float(g.uniform(0.05, 1.0))
    alpha = float(g.uniform(0.0, 1.0))
    cfg = SmoothingConfig(pattern=pattern, k=k, alpha=alpha, tau=tau)
    pos, negs = _draw_sims(g, n)
    sims = np.concatenate(([pos], negs))

    def value() -> float:
        # weights re-ranked per evaluation: the gap guard keeps the ranking
        # stable inside the stencil, so the composition stays differentiable
        w = beta_weights(sims[1:], cfg, alpha)
        return soft_nce(sims[0], sims[1:], w, tau).value

    w0 = beta_weights(sims[1:], cfg, alpha)
    analytic = soft_nce(sims[0], sims[1:], w0, tau).grad_all
    numeric = fd_gradient(value, sims)
    return rel_error(analytic, numeric)


def _case_jacobian(g: np.random.Generator) -> float:
    d = int(g.integers(2, 17))
    y = g.normal(size=d)
    while np.linalg.norm(y) < 0.1:
        y = g.normal(size=d)
    u = g.normal(size=d)

    def value() -> float:
        return float(u @ (y / np.linalg.norm(y)))

    norm = np.linalg.norm(y)
    z = y / norm
    analytic = (u - z * (z @ u)) / norm
    numeric = fd_gradient(value, y)
    return rel_error(analytic, numeric)


def _case_chain(g: np.random.Generator, corrupt: bool = False) -> float:
    """Full backward through encoder, projector, normalization, and the loss."""
    dims = (int(g.integers(4, 7)), int(g.integers(3, 6)), int(g.integers(3, 5)))
    embed = int(g.integers(2, 4))
    batch, n_negs, k = 3, 6, 3
    tau = float(g.uniform(0.07, 0.6))
    alpha = float(g.uniform(0.3, 1.0))
    cfg = SmoothingConfig(pattern="linear_decay", k=k, alpha=alpha, tau=tau)

    seed = int(g.integers(0, 2**32))
    net = build_network(dims[0], [dims[1]], dims[2], projector_hidden=3,
                        embed_dim=embed, precision="double",
                        rng=Rng(seed), tags=("gradcheck",))
    for w in params(net):
        w += g.normal(scale=0.05, size=w.shape)  # break bias zeros

    batch_x = g.normal(size=(batch, dims[0]))
    positives = l2_normalize_rows(g.normal(size=(batch, embed)))
    negatives = l2_normalize_rows(g.normal(size=(n_negs, embed)))

    def total_loss() -> float:
        _, z, _ = forward(net, batch_x, need_cache=False)
        acc = 0.0
        for i in range(batch):
            sims = negatives @ z[i]
            w = beta_weights(sims, cfg, alpha)
            acc += soft_nce(float(z[i] @ positives[i]), sims, w, tau).value
        return acc / batch

    # kink guards: redraw if any preactivation or ranking gap is unsafe
    _, z, cache = forward(net, batch_x)
    for a in cache.backbone_cache[1] + cache.projector_cache[1]:
        if np.abs(a).min() < 1e-4:
            return _case_chain(g, corrupt)
    for i in range(batch):
        gaps = np.diff(np.sort(negatives @ z[i]))
        if gaps.min() < 1e-4:
            return _case_chain(g, corrupt)

    dloss = np.zeros_like(z)
    for i in range(batch):
        sims = negatives @ z[i]
        w = beta_weights(sims, cfg, alpha)
        out = embedding_loss(z[i], positives[i], negatives, w, tau)
        dloss[i] = out.grad_query / batch
    analytic = backward(net, cache, dloss)
    if corrupt:
        analytic[0] = analytic[0].copy()
        analytic[0].reshape(-1)[0] += 1e-3

    # one global scale across all parameters, so a near-zero gradient block
    # cannot turn finite-difference noise into a spurious relative error
    analytic_all = np.concatenate([a.reshape(-1) for a in analytic])
    numeric_all = np.concatenate(
        [fd_gradient(total_loss, p).reshape(-1) for p in params(net)]
    )
    return rel_error(analytic_all, numeric_all)


def run_gradcheck(seed: int = 0, trials: int = 200, corrupt: bool = False,
                  tolerance: float = 1e-5) -> GradcheckReport:
    """Run `trials` randomized cases mixed over the four suites.

    corrupt=True injects a 1e-3 error into one chain gradient as a
    negative control; the report must then fail.
    """
    rng = Rng(seed)
    report = GradcheckReport(seed=seed, trials=trials, tolerance=tolerance)
    start = time.monotonic()
    counters = {"info": 0, "soft": 0, "jacobian": 0, "chain": 0}
    for t in range(trials):
        kind = _CYCLE[t % len(_CYCLE)]
        idx = counters[kind]
        counters[kind] += 1
        g = rng.stream("gradcheck", kind, idx)
        if kind == "info":
            err = _case_info(g)
        elif kind == "soft":
            err = _case_soft(g, idx)
        elif kind == "jacobian":
            err = _case_jacobian(g)
        else:
            err = _case_chain(g, corrupt=corrupt)
        report.cases.append(CaseResult(kind=kind, index=idx, rel_error=err))
    report.elapsed = time.monotonic() - start
    return report
