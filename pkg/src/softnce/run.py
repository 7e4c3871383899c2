"""End-to-end orchestration: datasets, pretraining, evaluation, sweeps.

This is the layer the CLI calls into; tests drive it directly so the
command surface stays a thin argument parser.
"""

import dataclasses
import hashlib
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .config import (
    RunConfig,
    build_plan,
    build_probe_config,
    build_synth_config,
    run_name,
    to_yaml,
)
from .data import (
    LabeledDataset,
    SynthConfig,
    load_cifar10,
    load_dataset,
    make_view_batch,
    synth_generate,
)
from .errors import DataError, IncompatibleCheckpoint, NumericFailure
from .evaluation import knn_classify, linear_probe
from .membank import NegativeQueue
from .metrics import MetricsLogger
from .model import Network, forward
from .optim import init_state, network_from, restore_state, snapshot_state, train_step
from .tensorcore import l2_normalize_rows

log = logging.getLogger("softnce")


@dataclass
class PretrainResult:
    checkpoint_path: str
    metrics_path: str
    run_id: str
    state: object
    epoch_losses: list


def build_dataset(config: RunConfig):
    """Materialize the configured data source: (dataset, synth metadata or None)."""
    d = config.data
    if d.source == "synth":
        ds, meta = synth_generate(build_synth_config(d), config.train.seed)
        return ds, meta
    if d.source == "cifar10":
        if d.false_pos_rate > 0:
            raise DataError("false_pos_rate needs composite synthetic instances; "
                            "it cannot apply to cifar10 inputs")
        if d.false_neg_rate is not None:
            raise DataError("false_neg_rate is a synthetic-generator knob; "
                            "cifar10 label structure is fixed")
        if not d.cifar_train:
            raise DataError("data.cifar_train path is required for source=cifar10")
        train = load_cifar10(d.cifar_train, split="train")
        if d.cifar_eval:
            ev = load_cifar10(d.cifar_eval, stats=train.channel_stats, split="eval")
            inputs = np.concatenate([train.inputs, ev.inputs])
            labels = np.concatenate([train.labels, ev.labels])
            split = np.concatenate([train.split, ev.split])
            return LabeledDataset(inputs=inputs, labels=labels, split=split,
                                  n_classes=10, channel_stats=train.channel_stats), None
        return train, None
    if not d.dump_path:
        raise DataError("data.dump_path is required for source=dump")
    return load_dataset(d.dump_path), None


def _aug_config(config: RunConfig, input_dim: int) -> SynthConfig:
    """View-noise parameters reused for non-synthetic sources (no component swaps)."""
    d = config.data
    if d.source == "synth":
        return build_synth_config(d)
    return SynthConfig(n_classes=2, n_instances=2, input_dim=max(input_dim, 2),
                       aug_noise=d.aug_noise, false_pos_rate=0.0)


def _out_paths(config: RunConfig, out_dir=None):
    base = out_dir or os.environ.get("SOFTNCE_LOG_DIR") or config.train.out_dir
    os.makedirs(base, exist_ok=True)
    rid = run_name(config)
    return base, rid


def config_digest(config: RunConfig) -> str:
    return hashlib.blake2b(to_yaml(config).encode(), digest_size=8).hexdigest()


def pretrain(config: RunConfig, resume: str | None = None,
             out_dir: str | None = None) -> PretrainResult:
    """Run the full schedule; writes metrics, periodic checkpoints, final checkpoint.

    resume continues bit-identically from a checkpoint written by the same
    config (same seed, same shapes); attempting anything else raises
    IncompatibleCheckpoint.  On a non-finite loss the state is dumped next
    to the log and NumericFailure propagates.
    """
    plan = build_plan(config)
    ds, meta = build_dataset(config)
    train_x = ds.train_inputs
    n_train = train_x.shape[0]
    if n_train < plan.batch_size:
        raise DataError(f"{n_train} training rows cannot fill a batch of {plan.batch_size}")
    steps_per_epoch = n_train // plan.batch_size
    input_dim = train_x.shape[1]
    alts = meta.alt_inputs[ds.split == 0] if meta is not None else train_x
    aug = _aug_config(config, input_dim)
    m = config.model

    if resume is not None:
        data = ckpt.load_checkpoint(resume)
        expect_b = [input_dim, *m.hidden_dims, m.feature_dim]
        expect_p = [m.feature_dim, m.projector_hidden, m.embed_dim]
        if data.backbone_dims != expect_b or data.projector_dims != expect_p:
            raise IncompatibleCheckpoint(
                f"checkpoint architecture {data.backbone_dims}+{data.projector_dims} "
                f"does not match config {expect_b}+{expect_p}"
            )
        if data.precision != m.precision or data.seed != plan.seed:
            raise IncompatibleCheckpoint("checkpoint precision/seed do not match config")
        if data.queue_capacity != plan.queue_capacity:
            raise IncompatibleCheckpoint("checkpoint queue capacity does not match config")
        state = restore_state(data, plan, steps_per_epoch)
    else:
        state = init_state(plan, input_dim, m.hidden_dims, m.feature_dim,
                           m.projector_hidden, m.embed_dim, m.precision,
                           steps_per_epoch)

    base, rid = _out_paths(config, out_dir)
    metrics_path = os.path.join(base, f"{rid}.jsonl")
    ckpt_path = os.path.join(base, f"{rid}.snce")
    cfg_text = to_yaml(config)
    epoch_losses = []

    with MetricsLogger(metrics_path, rid) as metrics:
        for epoch in range(state.epoch, plan.total_epochs):
            state.epoch = epoch
            perm = state.rng.stream("shuffle", epoch).permutation(n_train)
            t0 = time.monotonic()
            step_losses = []
            for b in range(steps_per_epoch):
                rows = perm[b * plan.batch_size:(b + 1) * plan.batch_size]
                va, vb, _ = make_view_batch(train_x[rows], alts[rows], aug,
                                            state.rng.stream("views", epoch, b))
                try:
                    report = train_step(state, l2_normalize_rows(va), l2_normalize_rows(vb))
                except NumericFailure:
                    dump = os.path.join(base, f"{rid}-dump.snce")
                    state.epoch = epoch
                    ckpt.save_checkpoint(dump, snapshot_state(state, cfg_text))
                    log.error("non-finite loss; state dumped to %s", dump)
                    raise
                step_losses.append(report.loss)
                metrics.log("step", {
                    "step": report.step, "epoch": epoch, "lr": report.lr,
                    "m": report.m, "alpha": report.alpha, "loss": report.loss,
                    "grad_norm": report.grad_norm,
                })
            state.epoch = epoch + 1
            epoch_losses.append(float(np.mean(step_losses)) if step_losses else float("nan"))
            metrics.log("epoch", {
                "epoch": epoch, "mean_loss": epoch_losses[-1],
                "seconds": time.monotonic() - t0,
            })
            log.info("epoch %d/%d mean loss %.4f", epoch + 1, plan.total_epochs,
                     epoch_losses[-1])
            done = epoch + 1
            if (config.train.checkpoint_every > 0
                    and done % config.train.checkpoint_every == 0
                    and done < plan.total_epochs):
                ckpt.save_checkpoint(
                    os.path.join(base, f"{rid}-epoch{done}.snce"),
                    snapshot_state(state, cfg_text),
                )
        ckpt.save_checkpoint(ckpt_path, snapshot_state(state, cfg_text))
    return PretrainResult(checkpoint_path=ckpt_path, metrics_path=metrics_path,
                          run_id=rid, state=state, epoch_losses=epoch_losses)


def _key_network(data: ckpt.CheckpointData) -> Network:
    return network_from(data.backbone_dims, data.projector_dims,
                        [p.copy() for p in data.key_params])


def embed_features(net: Network, inputs, batch: int = 1024) -> np.ndarray:
    """Backbone features (pre-projector) for all rows, unit-normalized."""
    chunks = []
    x = np.asarray(inputs)
    for i in range(0, x.shape[0], batch):
        feats, _, _ = forward(net, l2_normalize_rows(x[i:i + batch]), need_cache=False)
        chunks.append(feats)
    return l2_normalize_rows(np.concatenate(chunks).astype(np.float64))


def evaluate(config: RunConfig, checkpoint_path: str, protocol: str = "knn",
             out_dir: str | None = None, dataset: LabeledDataset | None = None) -> float:
    """Embed the eval split with the checkpoint's key backbone and score it."""
    data = ckpt.load_checkpoint(checkpoint_path)
    net = _key_network(data)
    if dataset is None:
        dataset, _ = build_dataset(config)
    if dataset.inputs.shape[1] != net.input_dim:
        raise IncompatibleCheckpoint(
            f"checkpoint expects {net.input_dim}-dim inputs, dataset has "
            f"{dataset.inputs.shape[1]}"
        )
    train_f = embed_features(net, dataset.train_inputs)
    eval_f = embed_features(net, dataset.eval_inputs)
    ev = config.eval
    if protocol == "knn":
        k = ev.knn_k
        if k > train_f.shape[0]:
            log.warning("knn k=%d exceeds %d training rows; clamping", k, train_f.shape[0])
            k = train_f.shape[0]
        _, acc = knn_classify(train_f, dataset.train_labels, eval_f,
                              dataset.eval_labels, k=k, vote_temp=ev.vote_temp,
                              weighted=ev.weighted)
    elif protocol == "linear":
        acc = linear_probe(train_f, dataset.train_labels, eval_f, dataset.eval_labels,
                           build_probe_config(ev), seed=config.train.seed)
    else:
        raise DataError(f"unknown protocol {protocol!r}, expected knn or linear")

    base, rid = _out_paths(config, out_dir)
    with MetricsLogger(os.path.join(base, f"{rid}.jsonl"), rid) as metrics:
        metrics.log("eval", {
            "protocol": protocol, "k": ev.knn_k if protocol == "knn" else None,
            "accuracy": acc, "config": config_digest(config),
            "checkpoint": os.path.basename(checkpoint_path),
        })
    log.info("%s accuracy %.4f", protocol, acc)
    return float(acc)


def sweep(config: RunConfig, alphas, ks, patterns, out_dir: str | None = None):
    """Grid of (pattern, alpha, k) cells sharing one seed; returns result rows.

    Each cell is a fresh pretrain + knn evaluation.  Cell records go to
    the metrics log as they finish, so an interrupted sweep keeps its
    completed cells.
    """
    rows = []
    try:
        for pattern in patterns:
            for alpha in alphas:
                for k in ks:
                    sm = dataclasses.replace(config.smoothing, pattern=pattern,
                                             alpha=float(alpha), k=int(k))
                    name = f"sweep-{pattern}-a{alpha:g}-k{k}-seed{config.train.seed}"
                    cell = dataclasses.replace(
                        config, smoothing=sm,
                        train=dataclasses.replace(config.train, run_name=name),
                    )
                    result = pretrain(cell, out_dir=out_dir)
                    acc = evaluate(cell, result.checkpoint_path, "knn", out_dir=out_dir)
                    rows.append({"pattern": pattern, "alpha": float(alpha),
                                 "k": int(k), "accuracy": acc})
    except KeyboardInterrupt:
        log.warning("sweep interrupted; %d completed cells kept", len(rows))
    return rows


def sweep_table(rows) -> str:
    """Aligned text table of sweep cells."""
    header = f"{'pattern':<14}{'alpha':>7}{'k':>5}{'accuracy':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['pattern']:<14}{r['alpha']:>7.3g}{r['k']:>5d}{r['accuracy']:>10.4f}")
    return "\n".join(lines)
