"""Encoder, projector, and the momentum pair, with handwritten backprop.

The encoder is a plain MLP (ReLU on hidden layers, linear feature
output) followed by a two-layer MLP projector whose output is l2
normalized; the normalization Jacobian is part of backward.  Gradients
are exact, computed layer by layer, and verified against finite
differences in the test suite.

The key network is a structural twin of the query network that never
sees gradients; it only moves by EMA (ema_update) with the cosine
momentum schedule (momentum_at).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, StaleCache
from .tensorcore import Rng, as_array, dtype_for, l2_normalize_rows


@dataclass
class Mlp:
    """Fully connected stack: ReLU after every layer except the last.

    weights[i] has shape (dims[i+1], dims[i]); biases[i] has shape
    (dims[i+1],).  Rows of the input batch are samples.
    """

    dims: list
    weights: list
    biases: list

    @staticmethod
    def create(dims, dtype, rng: Rng | None = None, tags=()):
        """He-uniform fan-in init (U(-sqrt(6/fan_in), +sqrt(6/fan_in))), zero biases.

        rng=None gives all-zero parameters (useful for tests).  Draws happen
        in double precision and are cast, so single and double runs share
        the same initial point up to rounding.
        """
        weights, biases = [], []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                limit = math.sqrt(6.0 / fan_in)
                w = rng.stream(*tags, "w", i).uniform(-limit, limit, size=(fan_out, fan_in))
            weights.append(w.astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return Mlp(list(dims), weights, biases)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def forward(self, x):
        """Returns (output, cache); cache holds each layer's input and preactivation."""
        layer_inputs, preacts = [], []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            layer_inputs.append(h)
            a = h @ w.T + b
            preacts.append(a)
            h = np.maximum(a, 0) if i < last else a
        return h, (layer_inputs, preacts)

    def backward(self, cache, dout):
        """Backprop dout through the stack; returns ([dW0, db0, ...], dinput)."""
        layer_inputs, preacts = cache
        grads = [None] * (2 * len(self.weights))
        last = len(self.weights) - 1
        d = dout
        for i in range(last, -1, -1):
            da = d if i == last else d * (preacts[i] > 0)
            grads[2 * i] = da.T @ layer_inputs[i]
            grads[2 * i + 1] = da.sum(axis=0)
            d = da @ self.weights[i]
        return grads, d


@dataclass
class Network:
    """Backbone MLP producing features plus the projector producing embeddings."""

    backbone: Mlp
    projector: Mlp

    @property
    def input_dim(self):
        return self.backbone.dims[0]

    @property
    def dtype(self):
        return self.backbone.dtype


@dataclass
class ForwardCache:
    batch: np.ndarray
    backbone_cache: tuple
    features: np.ndarray
    projector_cache: tuple
    prenorm: np.ndarray
    norms: np.ndarray
    embeddings: np.ndarray


@dataclass
class EncoderPair:
    """Query network, its EMA twin, and the base momentum m0."""

    query: Network
    key: Network
    m0: float


def build_network(input_dim, hidden_dims, feature_dim, projector_hidden, embed_dim,
                  precision="single", rng: Rng | None = None, tags=()) -> Network:
    dtype = dtype_for(precision)
    backbone = Mlp.create([input_dim, *hidden_dims, feature_dim], dtype, rng, (*tags, "backbone"))
    projector = Mlp.create([feature_dim, projector_hidden, embed_dim], dtype, rng, (*tags, "projector"))
    return Network(backbone, projector)


def copy_network(net: Network) -> Network:
    return Network(
        Mlp(list(net.backbone.dims), [w.copy() for w in net.backbone.weights],
            [b.copy() for b in net.backbone.biases]),
        Mlp(list(net.projector.dims), [w.copy() for w in net.projector.weights],
            [b.copy() for b in net.projector.biases]),
    )


def build_pair(input_dim, hidden_dims, feature_dim, projector_hidden, embed_dim,
               precision="single", rng: Rng | None = None) -> EncoderPair:
    """Initialize the query network and start the key network as its exact copy."""
    query = build_network(input_dim, hidden_dims, feature_dim, projector_hidden,
                          embed_dim, precision, rng, ("init",))
    return EncoderPair(query=query, key=copy_network(query), m0=0.99)


def params(net: Network) -> list:
    """Parameter arrays in a fixed order: backbone then projector, W before b."""
    out = []
    for mlp in (net.backbone, net.projector):
        for w, b in zip(mlp.weights, mlp.biases):
            out.append(w)
            out.append(b)
    return out


def forward(net: Network, batch, need_cache: bool = True):
    """Run the full stack: returns (features, unit embeddings, cache or None)."""
    x = as_array(batch)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionMismatch(
            f"batch shape {x.shape} does not match input dim {net.input_dim}"
        )
    x = x.astype(net.dtype, copy=False)
    features, bcache = net.backbone.forward(x)
    prenorm, pcache = net.projector.forward(features)
    embeddings = l2_normalize_rows(prenorm)
    norms = np.linalg.norm(prenorm, axis=1)
    if not need_cache:
        return features, embeddings, None
    return features, embeddings, ForwardCache(
        batch=x, backbone_cache=bcache, features=features,
        projector_cache=pcache, prenorm=prenorm, norms=norms, embeddings=embeddings,
    )


def backward(net: Network, cache: ForwardCache, dloss_dembeddings) -> list:
    """Exact parameter gradients for the scalar loss behind dloss_dembeddings.

    Includes the l2-normalization Jacobian: for z = y/|y|,
    dL/dy = (g - z * (z . g)) / |y| row-wise.  Gradient order matches
    params(net).
    """
    if cache is None:
        raise StaleCache("forward was called with need_cache=False")
    g = as_array(dloss_dembeddings).astype(net.dtype, copy=False)
    if g.shape != cache.embeddings.shape:
        raise StaleCache(
            f"upstream gradient shape {g.shape} does not match embeddings "
            f"{cache.embeddings.shape}"
        )
    if cache.batch.shape[1] != net.input_dim:
        raise StaleCache("cache does not belong to this network")
    z = cache.embeddings
    dy = (g - z * np.sum(z * g, axis=1, keepdims=True)) / cache.norms[:, None]
    proj_grads, dfeat = net.projector.backward(cache.projector_cache, dy)
    back_grads, _ = net.backbone.backward(cache.backbone_cache, dfeat)
    return back_grads + proj_grads


def ema_update(pair: EncoderPair, m: float):
    """theta_key <- m * theta_key + (1 - m) * theta_query, every parameter."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {m}")
    for pk, pq in zip(params(pair.key), params(pair.query)):
        np.copyto(pk, m * pk + (1.0 - m) * pq)


def momentum_at(step: int, total_steps: int, m0: float) -> float:
    """Cosine momentum: m(0) = m0 rising to m(T) = 1.

    m(t) = 1 - (1 - m0) * (cos(pi t / T) + 1) / 2, scheduled over steps.
    """
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return m0
    return 1.0 - (1.0 - m0) * (math.cos(math.pi * step / total_steps) + 1.0) / 2.0
