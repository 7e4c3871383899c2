"""SGD, the LR schedule, and the training step that ties everything together.

Step order is fixed and load-bearing:

  1. forward query and key encoders (both view directions when symmetric)
  2. snapshot the queue, rank negatives, build weights, compute the loss
  3. backward through the query network only
  4. SGD update with the warmup+cosine LR
  5. EMA update of the key network with the cosine momentum
  6. enqueue this step's key embeddings (after the loss, so a step never
     scores against its own keys)

A non-finite loss or gradient raises NumericFailure immediately; there
is no silent clipping.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigError, NumericFailure, ShapeMismatch
from .losses import (
    SmoothingConfig,
    alpha_at,
    batch_directional_loss,
    symmetric_pair_loss,
)
from .membank import NegativeQueue, enqueue
from .model import (
    EncoderPair,
    Mlp,
    Network,
    backward,
    build_pair,
    copy_network,
    ema_update,
    forward,
    momentum_at,
    params,
)
from .tensorcore import Rng


@dataclass(frozen=True)
class TrainPlan:
    """All schedules and hyperparameters of one pretraining run.

    Defaults follow the reference recipe where it gives a number
    (lr 0.2, weight decay 1e-4, 5 warmup epochs, tau 0.1 inside
    smoothing, m0 0.99), with desk-scale sizes for batch and queue.
    """

    smoothing: SmoothingConfig
    base_lr: float = 0.2
    warmup_epochs: int = 5
    total_epochs: int = 200
    batch_size: int = 128
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.9
    queue_capacity: int = 4096
    ema_m0: float = 0.99
    symmetric: bool = True
    seed: int = 0

    def __post_init__(self):
        # total_epochs == 0 is the write-initial-checkpoint-and-stop case
        if self.total_epochs > 0 and self.warmup_epochs >= self.total_epochs:
            raise ConfigError(
                f"warmup_epochs {self.warmup_epochs} must be < total_epochs {self.total_epochs}"
            )
        if self.base_lr < 0 or self.weight_decay < 0 or self.sgd_momentum < 0:
            raise ConfigError("rates must be >= 0")
        if not 0.0 <= self.ema_m0 < 1.0:
            raise ConfigError(f"ema_m0 must be in [0, 1), got {self.ema_m0}")
        if self.batch_size < 1 or self.queue_capacity < 1:
            raise ConfigError("batch_size and queue_capacity must be >= 1")
        if self.batch_size > self.queue_capacity:
            raise ConfigError("batch_size cannot exceed queue_capacity")

    @property
    def tau(self) -> float:
        return self.smoothing.tau


@dataclass
class StepReport:
    step: int
    lr: float
    m: float
    alpha: float
    loss: float
    grad_norm: float


def lr_at(step: int, steps_per_epoch: int, plan: TrainPlan) -> float:
    """Linear warmup from 0 to base_lr, then cosine decay to 0.

    Exactly 0 at step 0 and exactly base_lr at the end of warmup; the
    curve is continuous at the boundary.
    """
    warm = plan.warmup_epochs * steps_per_epoch
    total = plan.total_epochs * steps_per_epoch
    if warm > 0 and step < warm:
        return plan.base_lr * (step / warm)
    span = total - warm
    if span <= 0:
        return plan.base_lr
    t = step - warm
    return plan.base_lr * 0.5 * (1.0 + math.cos(math.pi * t / span))


def sgd_step(param_list, grad_list, lr, weight_decay, sgd_momentum, velocities):
    """Classic SGD with momentum and coupled weight decay, in place.

    g <- grad + wd * param;  v <- mu * v + g;  param <- param - lr * v
    """
    if not (len(param_list) == len(grad_list) == len(velocities)):
        raise ShapeMismatch(
            f"{len(param_list)} params, {len(grad_list)} grads, {len(velocities)} velocities"
        )
    for p, g, v in zip(param_list, grad_list, velocities):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeMismatch(f"param {p.shape}, grad {g.shape}, velocity {v.shape}")
        geff = g + weight_decay * p
        v *= sgd_momentum
        v += geff
        p -= lr * v


@dataclass
class TrainState:
    """Mutable state of one run: networks, queue, velocities, counters."""

    plan: TrainPlan
    pair: EncoderPair
    queue: NegativeQueue
    velocities: list
    rng: Rng
    steps_per_epoch: int
    step: int = 0
    epoch: int = 0

    @property
    def total_steps(self) -> int:
        return self.plan.total_epochs * self.steps_per_epoch


def init_state(plan: TrainPlan, input_dim, hidden_dims, feature_dim,
               projector_hidden, embed_dim, precision, steps_per_epoch) -> TrainState:
    """Fresh state: seeded init, key = copy of query, queue prefilled."""
    rng = Rng(plan.seed)
    pair = build_pair(input_dim, hidden_dims, feature_dim, projector_hidden,
                      embed_dim, precision, rng)
    pair.m0 = plan.ema_m0
    queue = NegativeQueue(plan.queue_capacity, embed_dim,
                          dtype=pair.query.dtype)
    queue.prefill(rng)
    velocities = [np.zeros_like(p) for p in params(pair.query)]
    return TrainState(plan=plan, pair=pair, queue=queue, velocities=velocities,
                      rng=rng, steps_per_epoch=steps_per_epoch)


def train_step(state: TrainState, views_a, views_b) -> StepReport:
    """One optimization step on a batch of unit-preprocessed view pairs."""
    plan = state.plan
    sm = plan.smoothing
    alpha = alpha_at(min(state.epoch, plan.total_epochs), plan.total_epochs, sm)
    m = momentum_at(min(state.step, state.total_steps), state.total_steps, plan.ema_m0)
    lr = lr_at(state.step, state.steps_per_epoch, plan)
    query, key = state.pair.query, state.pair.key

    _, q_a, cache_a = forward(query, views_a)
    _, k_b, _ = forward(key, views_b, need_cache=False)
    negatives = state.queue.snapshot()

    if plan.symmetric:
        _, q_b, cache_b = forward(query, views_b)
        _, k_a, _ = forward(key, views_a, need_cache=False)
        pair_loss = symmetric_pair_loss(q_a, k_b, q_b, k_a, negatives, sm, alpha)
        loss = pair_loss.value
        grads = backward(query, cache_a, pair_loss.grad_query_a)
        for g, gb in zip(grads, backward(query, cache_b, pair_loss.grad_query_b)):
            g += gb
    else:
        loss, grad_q = batch_directional_loss(q_a, k_b, negatives, sm, alpha)
        grads = backward(query, cache_a, grad_q)

    grad_norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if not (math.isfinite(loss) and math.isfinite(grad_norm)):
        raise NumericFailure(
            f"non-finite training signal at step {state.step} "
            f"(loss={loss}, grad_norm={grad_norm}, lr={lr}, alpha={alpha})"
        )

    sgd_step(params(query), grads, lr, plan.weight_decay, plan.sgd_momentum,
             state.velocities)
    ema_update(state.pair, m)
    enqueue(state.queue, k_b)
    if plan.symmetric:
        enqueue(state.queue, k_a)

    state.step += 1
    return StepReport(step=state.step - 1, lr=lr, m=m, alpha=alpha,
                      loss=loss, grad_norm=grad_norm)


def snapshot_state(state: TrainState, config_text: str) -> ckpt.CheckpointData:
    """Freeze a state into checkpoint form (bit-exact; raw ring included)."""
    net = state.pair.query
    precision = "single" if net.dtype == np.float32 else "double"
    return ckpt.CheckpointData(
        config_text=config_text, precision=precision, seed=state.plan.seed,
        step=state.step, epoch=state.epoch, m0=state.pair.m0,
        backbone_dims=list(net.backbone.dims),
        projector_dims=list(net.projector.dims),
        query_params=[p.copy() for p in params(state.pair.query)],
        key_params=[p.copy() for p in params(state.pair.key)],
        velocities=[v.copy() for v in state.velocities],
        queue_capacity=state.queue.capacity, queue_dim=state.queue.dim,
        queue_head=state.queue.head, queue_filled=state.queue.filled,
        queue_slots=state.queue.slots.copy(),
    )


def network_from(dims_backbone, dims_projector, flat_params) -> Network:
    nb = len(dims_backbone) - 1
    backbone = Mlp(list(dims_backbone),
                   [flat_params[2 * i] for i in range(nb)],
                   [flat_params[2 * i + 1] for i in range(nb)])
    rest = flat_params[2 * nb:]
    npr = len(dims_projector) - 1
    projector = Mlp(list(dims_projector),
                    [rest[2 * i] for i in range(npr)],
                    [rest[2 * i + 1] for i in range(npr)])
    return Network(backbone, projector)


def restore_state(data: ckpt.CheckpointData, plan: TrainPlan,
                  steps_per_epoch: int) -> TrainState:
    """Rebuild a TrainState from checkpoint data; continues bit-identically."""
    query = network_from(data.backbone_dims, data.projector_dims,
                          [p.copy() for p in data.query_params])
    key = network_from(data.backbone_dims, data.projector_dims,
                        [p.copy() for p in data.key_params])
    queue = NegativeQueue(data.queue_capacity, data.queue_dim,
                          slots=data.queue_slots.copy(),
                          head=data.queue_head, filled=data.queue_filled)
    return TrainState(
        plan=plan, pair=EncoderPair(query=query, key=key, m0=data.m0),
        queue=queue, velocities=[v.copy() for v in data.velocities],
        rng=Rng(data.seed), steps_per_epoch=steps_per_epoch,
        step=data.step, epoch=data.epoch,
    )
