"""Deterministic epoch/batch training loop and optimizers.

Per epoch: snapshot the reduced clip features with the current weights,
refresh each sample's momentum-smoothed relevance once, rebuild each
sample's per-moment prior weights (static glance-centered grid, or the
dynamically re-centered grid when enabled), then run seeded-shuffled
batches of the group contrastive loss with SGD or Adam updates.
Identical (corpus, config, seed) triples give bit-identical results.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .contrastive import SAMPLING_MODES, batch_loss
from .model import PARAM_FIELDS, Gradients, init_params
from .numerics import seeded_rng
from .prior import DgaConfig, GaussianGrid, RelevanceState, center_mask, \
    dga_weights, midpoint_weight_table, momentum_update, relevance, \
    triplet_weight_table
from .temporal_map import moment_grid

__all__ = ["TrainConfig", "TrainState", "TrainingDiverged", "optimizer_step", "train"]

WEIGHT_MODES = ("triplet", "midpoint")


class TrainingDiverged(ArithmeticError):
    """Loss went non-finite; message carries the epoch/batch diagnostic."""


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 0.002
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k: int = 10
    tau: float = 0.1
    sigma: float = 0.3
    dga_enabled: bool = False
    dga: DgaConfig = field(default_factory=DgaConfig)
    sampling_mode: str = "calibrated"
    weight_mode: str = "triplet"
    similarity: str = "cosine"
    activation: str = "none"
    reduced_dim: int = 16
    joint_dim: int = 32
    init_scale: float = 0.1
    grad_clip: float = 10.0
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.tau <= 0.0:
            raise ValueError("tau must be > 0")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be > 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"sampling_mode must be one of {SAMPLING_MODES}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.similarity not in ("cosine", "dot"):
            raise ValueError("similarity must be 'cosine' or 'dot'")
        if self.grad_clip is not None and self.grad_clip <= 0.0:
            raise ValueError("grad_clip must be > 0 or None")
        self.dga.validate()


@dataclass
class AdamState:
    m: Gradients
    v: Gradients
    t: int = 0


@dataclass
class TrainState:
    params: object
    opt: AdamState
    relevance_states: list
    epoch: int
    history: list  # mean loss per epoch


def optimizer_step(params, opt, grads, config):
    """Apply one SGD or bias-corrected Adam update in place."""
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for f in PARAM_FIELDS:
            getattr(params, f).__isub__(lr * getattr(grads, f))
        return params
    opt.t += 1
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1 ** opt.t
    bias2 = 1.0 - b2 ** opt.t
    for f in PARAM_FIELDS:
        g = getattr(grads, f)
        m = getattr(opt.m, f)
        v = getattr(opt.v, f)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * (m / bias1) / (np.sqrt(v / bias2) + config.eps)
        getattr(params, f).__isub__(step)
    return params


def _clip_gradients(grads, max_norm):
    if max_norm is None:
        return grads
    norm = grads.global_norm()
    if norm > max_norm:
        grads.scale_(max_norm / norm)
    return grads


def _epoch_prior_tables(views, params, config, rel_states, static_grid, starts, ends):
    """Refresh relevance states and per-moment weights for this epoch."""
    n_clips = static_grid.n_clips
    dga_sigma = config.dga.sigma if config.dga.sigma is not None else config.sigma
    dyn_grid = GaussianGrid(n_clips, dga_sigma)
    weigh = triplet_weight_table if config.weight_mode == "triplet" else midpoint_weight_table
    tables = []
    for view, state in zip(views, rel_states):
        if config.dga.feature_source == "raw":
            feats = view.clip_features
        else:
            feats = np.asarray(view.clip_features, dtype=np.float64) @ params.W1 + params.b1
            if params.activation == "relu":
                feats = np.maximum(feats, 0.0)
        momentum_update(state, relevance(feats, view.glance), config.dga.alpha)
        if config.dga_enabled:
            mask = center_mask(state.r_bar, config.dga.relevance_threshold)
            grid_vec = dga_weights(state.r_bar, mask, n_clips, dga_sigma,
                                   config.dga, grid=dyn_grid)
        else:
            grid_vec = static_grid.weights(view.glance)
        tables.append(weigh(grid_vec, starts, ends))
    return tables


def train(views, config, log_path=None):
    """Train on glance-supervised views; returns final state with history.

    The views carry no ground-truth span field, so the loop cannot read
    one even by accident. A per-epoch CSV line "epoch,mean_loss,wall_ms"
    is written when log_path is given.
    """
    if not views:
        raise ValueError("train: empty training split")
    config.validate()
    n_clips = views[0].clip_features.shape[0]
    feature_dim = views[0].clip_features.shape[1]
    query_dim = views[0].query_feature.shape[0]
    for view in views:
        if view.clip_features.shape != (n_clips, feature_dim) or \
                view.query_feature.shape != (query_dim,):
            raise ValueError(f"train: inconsistent shapes at {view.query_id}")

    rng = seeded_rng(config.seed)
    params = init_params((feature_dim, config.reduced_dim, query_dim, config.joint_dim),
                         rng, config.init_scale, config.activation)
    opt = AdamState(Gradients.zeros_like(params), Gradients.zeros_like(params))
    rel_states = [RelevanceState() for _ in views]
    static_grid = GaussianGrid(n_clips, config.sigma)
    starts, ends = moment_grid(n_clips)
    history = []
    log_rows = []

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        tables = _epoch_prior_tables(views, params, config, rel_states,
                                     static_grid, starts, ends)
        perm = rng.permutation(len(views))
        loss_sum = 0.0
        for at in range(0, len(views), config.batch_size):
            chunk = perm[at:at + config.batch_size]
            batch = [views[i] for i in chunk]
            priors = [tables[i] for i in chunk]
            loss, grads = batch_loss(batch, params, priors, config.k, config.tau,
                                     config.sampling_mode, config.similarity)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting "
                    f"with {batch[0].query_id}")
            _clip_gradients(grads, config.grad_clip)
            optimizer_step(params, opt, grads, config)
            loss_sum += loss * len(chunk)
        mean_loss = loss_sum / len(views)
        history.append(mean_loss)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        log_rows.append(f"{epoch},{mean_loss!r},{wall_ms:.3f}")

    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("epoch,mean_loss,wall_ms\n")
            fh.write("\n".join(log_rows) + "\n")
    return TrainState(params, opt, rel_states, config.epochs, history)
