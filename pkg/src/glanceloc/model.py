"""Two-tower embedding model with analytic reverse-mode gradients.

Video tower: clip FC reduction -> max-pooled moment map -> linear
projection into the joint space. Query tower: linear projection of the
query code. Matching scores are cosines between the query embedding and
every moment embedding (a raw dot-product mode exists for ablation).

Everything is plain linear algebra, so gradients are derived by hand:
linear layers backprop as matrix products, the max pool routes each
coordinate's gradient to the clip cached as argmax at forward time, and
the cosine uses the standard quotient form.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import matio
from .numerics import ZeroNormError
from .temporal_map import build_map

__all__ = [
    "CheckpointError",
    "ModelParams",
    "Gradients",
    "VideoTrace",
    "ForwardTrace",
    "init_params",
    "video_forward",
    "query_forward",
    "scores",
    "forward",
    "cosine_pair_backward",
    "dot_pair_backward",
    "video_backward",
    "query_backward",
    "backward",
    "params_to_vector",
    "vector_to_params",
    "save_params",
    "load_params",
]

PARAM_FIELDS = ("W1", "b1", "Wv", "bv", "Ws", "bs")


class CheckpointError(Exception):
    """Checkpoint files disagree with their JSON header."""


@dataclass
class ModelParams:
    """Weights of both towers; activation is "none" or "relu" on the clip FC."""

    W1: np.ndarray  # feature_dim x reduced_dim
    b1: np.ndarray
    Wv: np.ndarray  # reduced_dim x joint_dim
    bv: np.ndarray
    Ws: np.ndarray  # query_dim x joint_dim
    bs: np.ndarray
    activation: str = "none"

    @property
    def dims(self):
        """(feature_dim, reduced_dim, query_dim, joint_dim)."""
        return (self.W1.shape[0], self.W1.shape[1], self.Ws.shape[0], self.Ws.shape[1])

    def validate(self):
        d_in, d_red, d_query, d_joint = self.dims
        checks = {
            "W1": (d_in, d_red), "b1": (d_red,),
            "Wv": (d_red, d_joint), "bv": (d_joint,),
            "Ws": (d_query, d_joint), "bs": (d_joint,),
        }
        for name, shape in checks.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"ModelParams.{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"ModelParams.{name}: non-finite entries")
        if self.activation not in ("none", "relu"):
            raise ValueError(f"activation must be 'none' or 'relu', got {self.activation!r}")


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    Wv: np.ndarray
    bv: np.ndarray
    Ws: np.ndarray
    bs: np.ndarray

    @classmethod
    def zeros_like(cls, params):
        return cls(*(np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS))

    def add_(self, other):
        for f in PARAM_FIELDS:
            getattr(self, f).__iadd__(getattr(other, f))
        return self

    def scale_(self, c):
        for f in PARAM_FIELDS:
            getattr(self, f).__imul__(c)
        return self

    def global_norm(self):
        total = 0.0
        for f in PARAM_FIELDS:
            g = getattr(self, f)
            total += float(np.dot(g.ravel(), g.ravel()))
        return total ** 0.5


def init_params(dims, rng, scale=0.1, activation="none"):
    """Uniform [-scale, scale] weights, zero biases, deterministic per seed.

    dims is (feature_dim, reduced_dim, query_dim, joint_dim).
    """
    d_in, d_red, d_query, d_joint = dims
    if min(dims) < 1:
        raise ValueError(f"all dims must be positive, got {dims}")
    params = ModelParams(
        W1=rng.uniform(-scale, scale, size=(d_in, d_red)),
        b1=np.zeros(d_red),
        Wv=rng.uniform(-scale, scale, size=(d_red, d_joint)),
        bv=np.zeros(d_joint),
        Ws=rng.uniform(-scale, scale, size=(d_query, d_joint)),
        bs=np.zeros(d_joint),
        activation=activation,
    )
    params.validate()
    return params


@dataclass
class VideoTrace:
    """Video-tower intermediates cached for the backward pass."""

    clips: np.ndarray        # N x feature_dim input
    reduced_pre: np.ndarray  # N x reduced_dim, before activation
    reduced: np.ndarray      # N x reduced_dim
    mmap: object             # MomentMap (pooled features + argmax routing)
    moment_emb: np.ndarray   # M x joint_dim


@dataclass
class ForwardTrace:
    video: VideoTrace
    query: np.ndarray
    query_emb: np.ndarray
    scores: np.ndarray
    similarity: str


def video_forward(params, clip_features):
    clips = np.asarray(clip_features, dtype=np.float64)
    if clips.ndim != 2 or clips.shape[1] != params.W1.shape[0]:
        raise ValueError(f"video_forward: clip shape {clips.shape} incompatible with "
                         f"feature_dim {params.W1.shape[0]}")
    pre = clips @ params.W1 + params.b1
    reduced = np.maximum(pre, 0.0) if params.activation == "relu" else pre
    mmap = build_map(reduced)
    moment_emb = mmap.features @ params.Wv + params.bv
    return VideoTrace(clips, pre, reduced, mmap, moment_emb)


def query_forward(params, query_feature):
    query = np.asarray(query_feature, dtype=np.float64)
    if query.shape != (params.Ws.shape[0],):
        raise ValueError(f"query_forward: query shape {query.shape} incompatible with "
                         f"query_dim {params.Ws.shape[0]}")
    return query @ params.Ws + params.bs


def scores(query_emb, moment_emb, similarity="cosine"):
    """Matching scores of one query embedding against M moment embeddings."""
    if similarity == "dot":
        return moment_emb @ query_emb
    nq = float(np.linalg.norm(query_emb))
    if nq == 0.0:
        raise ZeroNormError("scores: query embedding has zero norm")
    norms = np.linalg.norm(moment_emb, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroNormError(f"scores: zero-norm moment embedding(s) at {bad.tolist()}")
    return np.clip(moment_emb @ query_emb / (norms * nq), -1.0, 1.0)


def forward(params, clip_features, query_feature, similarity="cosine"):
    """Full forward pass for one (video, query) pair, caching intermediates."""
    vt = video_forward(params, clip_features)
    qe = query_forward(params, query_feature)
    return ForwardTrace(vt, np.asarray(query_feature, dtype=np.float64), qe,
                        scores(qe, vt.moment_emb, similarity), similarity)


def cosine_pair_backward(query_emb, moment_emb, upstream):
    """Gradients of sum_z upstream[z] * cos(query_emb, moment_emb[z]).

    Returns (d_query_emb, d_moment_emb) via the quotient form
    d cos / d q = (m_hat - cos * q_hat) / |q| and symmetrically for m.
    """
    q = query_emb
    nq = float(np.linalg.norm(q))
    norms = np.linalg.norm(moment_emb, axis=1)
    cos = moment_emb @ q / (norms * nq)
    u_over_norm = upstream / norms
    d_query = (moment_emb.T @ u_over_norm - q * float(np.dot(upstream, cos)) / nq) / nq
    d_moment = (np.outer(u_over_norm / nq, q)
                - moment_emb * (upstream * cos / norms ** 2)[:, None])
    return d_query, d_moment


def dot_pair_backward(query_emb, moment_emb, upstream):
    return moment_emb.T @ upstream, np.outer(upstream, query_emb)


def pair_backward(query_emb, moment_emb, upstream, similarity="cosine"):
    if similarity == "dot":
        return dot_pair_backward(query_emb, moment_emb, upstream)
    return cosine_pair_backward(query_emb, moment_emb, upstream)


def video_backward(params, vt, d_moment_emb, grads):
    """Accumulate video-tower gradients given d loss / d moment embeddings."""
    grads.Wv += vt.mmap.features.T @ d_moment_emb
    grads.bv += d_moment_emb.sum(axis=0)
    d_pooled = d_moment_emb @ params.Wv.T
    d_reduced = np.zeros_like(vt.reduced)
    cols = np.arange(vt.reduced.shape[1])
    np.add.at(d_reduced, (vt.mmap.pool_argmax, cols), d_pooled)
    if params.activation == "relu":
        d_reduced = d_reduced * (vt.reduced_pre > 0.0)
    grads.W1 += vt.clips.T @ d_reduced
    grads.b1 += d_reduced.sum(axis=0)


def query_backward(query, d_query_emb, grads):
    grads.Ws += np.outer(query, d_query_emb)
    grads.bs += d_query_emb


def backward(trace, params, upstream):
    """Exact gradients of sum_z upstream[z] * score[z] for one trace."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != trace.scores.shape:
        raise ValueError(f"backward: upstream shape {upstream.shape} does not match "
                         f"{trace.scores.shape} scores")
    if trace.video.clips.shape[1] != params.W1.shape[0] or \
            trace.query.shape[0] != params.Ws.shape[0]:
        raise ValueError("backward: trace was produced with differently shaped params")
    grads = Gradients.zeros_like(params)
    d_query_emb, d_moment_emb = pair_backward(
        trace.query_emb, trace.video.moment_emb, upstream, trace.similarity)
    query_backward(trace.query, d_query_emb, grads)
    video_backward(params, trace.video, d_moment_emb, grads)
    return grads


def params_to_vector(params):
    return np.concatenate([getattr(params, f).ravel() for f in PARAM_FIELDS])


def vector_to_params(vec, like):
    """Rebuild ModelParams shaped like `like` from a flat vector."""
    out = {}
    at = 0
    for f in PARAM_FIELDS:
        ref = getattr(like, f)
        out[f] = vec[at:at + ref.size].reshape(ref.shape).copy()
        at += ref.size
    if at != vec.size:
        raise ValueError(f"vector_to_params: vector length {vec.size}, expected {at}")
    return ModelParams(activation=like.activation, **out)


def grads_to_vector(grads):
    return np.concatenate([getattr(grads, f).ravel() for f in PARAM_FIELDS])


HEADER_NAME = "model.json"


def save_params(params, directory):
    """Checkpoint: JSON header of dims plus one f64 matrix file per field."""
    params.validate()
    os.makedirs(directory, exist_ok=True)
    d_in, d_red, d_query, d_joint = params.dims
    header = {
        "format": "glanceloc-model", "version": 1,
        "dims": {"feature_dim": d_in, "reduced_dim": d_red,
                 "query_dim": d_query, "joint_dim": d_joint},
        "activation": params.activation,
        "matrices": {f: f"model_{f}.bin" for f in PARAM_FIELDS},
    }
    for f in PARAM_FIELDS:
        arr = getattr(params, f)
        matio.write_matrix(os.path.join(directory, header["matrices"][f]),
                           arr.reshape(1, -1) if arr.ndim == 1 else arr, dtype="f64")
    with open(os.path.join(directory, HEADER_NAME), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(directory):
    header_path = os.path.join(directory, HEADER_NAME)
    try:
        with open(header_path) as fh:
            header = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing checkpoint header: {header_path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unparseable checkpoint header: {exc}") from exc
    if header.get("format") != "glanceloc-model":
        raise CheckpointError(f"not a model checkpoint: {header_path}")
    dims = header["dims"]
    shapes = {
        "W1": (dims["feature_dim"], dims["reduced_dim"]),
        "b1": (1, dims["reduced_dim"]),
        "Wv": (dims["reduced_dim"], dims["joint_dim"]),
        "bv": (1, dims["joint_dim"]),
        "Ws": (dims["query_dim"], dims["joint_dim"]),
        "bs": (1, dims["joint_dim"]),
    }
    loaded = {}
    for f in PARAM_FIELDS:
        path = os.path.join(directory, header["matrices"][f])
        try:
            arr = matio.read_matrix(path)
        except FileNotFoundError as exc:
            raise CheckpointError(f"missing checkpoint matrix: {path}") from exc
        if arr.shape != shapes[f]:
            raise CheckpointError(f"{path}: shape {arr.shape}, header promises {shapes[f]}")
        loaded[f] = arr[0] if f.startswith("b") else arr
    params = ModelParams(activation=header.get("activation", "none"), **loaded)
    params.validate()
    return params
