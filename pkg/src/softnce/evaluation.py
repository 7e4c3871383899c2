"""Frozen-feature evaluation: weighted k-nearest-neighbor and linear probe.

Both protocols consume features produced elsewhere; nothing here touches
the encoder.  kNN votes are similarity-weighted by default
(exp(sim / vote_temp), vote_temp 0.07), with plain majority voting
behind a flag since the two conventions give different absolute numbers.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, EmptyTrainSet
from .tensorcore import Rng, as_array


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    lr: float = 1.0
    batch_size: int = 256
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("probe needs positive epochs/batch/lr and weight_decay >= 0")


def knn_classify(train_feats, train_labels, query_feats, query_labels=None,
                 k: int = 20, vote_temp: float = 0.07, weighted: bool = True):
    """Classify queries by their k most cosine-similar training features.

    Features must be unit rows.  Class score is sum(exp(sim / vote_temp))
    over the query's neighbors of that class (or the plain neighbor count
    when weighted=False); predicted class is the argmax, ties to the
    lowest class index.  k larger than the training set is clamped.

    Returns (predictions, accuracy); accuracy is NaN when query_labels
    is None.
    """
    train = as_array(train_feats)
    queries = as_array(query_feats)
    labels = np.asarray(train_labels)
    if train.shape[0] == 0:
        raise EmptyTrainSet("kNN needs at least one training feature")
    k = min(k, train.shape[0])
    n_classes = int(labels.max()) + 1

    sims = queries @ train.T
    idx = kernels.topk_rows(sims, k)
    top_sims = np.take_along_axis(sims, idx, axis=1)
    top_labels = labels[idx]

    preds = np.empty(queries.shape[0], dtype=np.int64)
    weights = np.exp(top_sims / vote_temp) if weighted else np.ones_like(top_sims)
    for i in range(queries.shape[0]):
        scores = np.bincount(top_labels[i], weights=weights[i], minlength=n_classes)
        preds[i] = int(np.argmax(scores))  # argmax takes the lowest index on ties

    if query_labels is None:
        return preds, float("nan")
    accuracy = float(np.mean(preds == np.asarray(query_labels)))
    return preds, accuracy


def linear_probe(train_feats, train_labels, eval_feats, eval_labels,
                 config: ProbeConfig, seed: int = 0) -> float:
    """Multinomial logistic regression on frozen features; returns eval accuracy.

    Zero-initialized weights, minibatch SGD on softmax cross-entropy with
    cosine-decayed lr and weight decay on the weight matrix only.
    """
    x = as_array(train_feats).astype(np.float64)
    y = np.asarray(train_labels)
    xe = as_array(eval_feats).astype(np.float64)
    ye = np.asarray(eval_labels)
    if x.shape[0] == 0:
        raise EmptyTrainSet("probe needs training features")
    n, d = x.shape
    n_classes = int(max(y.max(), ye.max())) + 1

    w = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    rng = Rng(seed)
    bs = min(config.batch_size, n)
    steps_per_epoch = n // bs
    onehot = np.eye(n_classes)

    for epoch in range(config.epochs):
        lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
        perm = rng.stream("probe-shuffle", epoch).permutation(n)
        for s in range(steps_per_epoch):
            rows = perm[s * bs:(s + 1) * bs]
            xb, yb = x[rows], y[rows]
            logits = xb @ w.T + b
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            p = e / e.sum(axis=1, keepdims=True)
            g = (p - onehot[yb]) / xb.shape[0]
            w -= lr * (g.T @ xb + config.weight_decay * w)
            b -= lr * g.sum(axis=0)

    preds = np.argmax(xe @ w.T + b, axis=1)
    return float(np.mean(preds == ye))
