"""Gaussian prior weights over clips and moments, static and dynamic.

The static prior is a glance-centered Gaussian over the clip grid,
min-max normalized so the peak is exactly 1. Per-moment weights sample
that grid at the moment's start, end and midpoint (or midpoint only,
for the weaker baseline). The dynamic variant re-centers the prior at
every clip whose momentum-smoothed relevance to the glance clip clears
a threshold, then aggregates one Gaussian per surviving center.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import minmax_normalize, row_cosines

__all__ = [
    "scale_index",
    "gaussian_weights",
    "GaussianGrid",
    "triplet_weight",
    "midpoint_weight",
    "triplet_weight_table",
    "midpoint_weight_table",
    "relevance",
    "RelevanceState",
    "momentum_update",
    "center_mask",
    "DgaConfig",
    "dga_weights",
]


def scale_index(i, n_clips):
    """Map clip index i of an N-clip grid linearly into [-1, 1]."""
    if not 0 <= i < n_clips:
        raise IndexError(f"clip index {i} out of range for N={n_clips}")
    if n_clips == 1:
        return 0.0
    return 2.0 * i / (n_clips - 1) - 1.0


def gaussian_weights(n_clips, center, sigma):
    """Gaussian over the scaled clip grid, min-max normalized into [0, 1].

    The value at `center` is exactly 1. Index differences are formed
    before scaling so the grid is exactly symmetric about the center.
    Any positive prefactor on the raw Gaussian cancels under the
    normalization.
    """
    if not 0 <= center < n_clips:
        raise IndexError(f"center {center} out of range for N={n_clips}")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if n_clips == 1:
        return np.ones(1)
    delta = 2.0 * (np.arange(n_clips) - center) / (n_clips - 1)
    raw = np.exp(-(delta * delta) / (2.0 * sigma * sigma))
    return minmax_normalize(raw)


class GaussianGrid:
    """Per-center cache of gaussian_weights for a fixed (N, sigma)."""

    def __init__(self, n_clips, sigma):
        if sigma <= 0.0:
            raise ValueError(f"sigma must be > 0, got {sigma}")
        self.n_clips = int(n_clips)
        self.sigma = float(sigma)
        self._cache = {}

    def weights(self, center):
        center = int(center)
        got = self._cache.get(center)
        if got is None:
            got = gaussian_weights(self.n_clips, center, self.sigma)
            got.flags.writeable = False
            self._cache[center] = got
        return got


def triplet_weight(i, j, weights):
    """Average of the grid at a moment's start, end and floor-midpoint.

    Widening a moment past the prior's peak drags in smaller endpoint
    values, so over-long moments are penalized even when their midpoint
    sits on the peak.
    """
    mid = (i + j) // 2
    return (weights[i] + weights[j] + weights[mid]) / 3.0


def midpoint_weight(i, j, weights):
    """Grid value at the floor-midpoint only (single-sample baseline)."""
    return weights[(i + j) // 2]


def triplet_weight_table(weights, starts, ends):
    """Vectorized triplet_weight over a whole moment enumeration."""
    weights = np.asarray(weights, dtype=np.float64)
    mids = (starts + ends) // 2
    return (weights[starts] + weights[ends] + weights[mids]) / 3.0


def midpoint_weight_table(weights, starts, ends):
    weights = np.asarray(weights, dtype=np.float64)
    return weights[(starts + ends) // 2]


def relevance(clip_features, glance):
    """Cosine of every clip feature against the glance clip's feature."""
    clip_features = np.asarray(clip_features, dtype=np.float64)
    return row_cosines(clip_features, clip_features[glance])


@dataclass
class RelevanceState:
    """Momentum-smoothed per-clip relevance for one (video, query) sample."""

    r_bar: np.ndarray = None

    @property
    def initialized(self):
        return self.r_bar is not None


def momentum_update(state, r, alpha):
    """Blend new relevance into the state; the first update copies it.

    r_bar <- (1 - alpha) * r_bar + alpha * r, so alpha weighs the new
    observation. Iterating with fixed r contracts toward r geometrically.
    """
    r = np.asarray(r, dtype=np.float64)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"momentum alpha must be in [0, 1], got {alpha}")
    if not state.initialized:
        state.r_bar = r.copy()
    else:
        if state.r_bar.shape != r.shape:
            raise ValueError("momentum_update: length mismatch")
        state.r_bar = (1.0 - alpha) * state.r_bar + alpha * r
    return state


def center_mask(r_bar, threshold):
    """Binary mask of clips whose smoothed relevance clears the threshold."""
    return np.asarray(r_bar, dtype=np.float64) >= threshold


@dataclass
class DgaConfig:
    """Knobs for the dynamically adjusted Gaussian prior.

    relevance_threshold: cut for promoting a clip to a Gaussian center.
    alpha: momentum factor for smoothing relevance across epochs.
    sigma: grid width; None means reuse the trainer's static sigma.
    renormalize: clamp at 0 and min-max the aggregate back into [0, 1].
    literal_relevance_at_i: multiply by the relevance at the evaluated
        clip i, as opposed to the relevance at each center z.
    feature_source: "reduced" uses the learned clip projection for
        relevance, "raw" uses corpus features as generated.
    """

    relevance_threshold: float = 0.9
    alpha: float = 0.7
    sigma: float = None
    renormalize: bool = True
    literal_relevance_at_i: bool = True
    feature_source: str = "reduced"

    def validate(self):
        if not 0.0 < self.relevance_threshold <= 1.0:
            raise ValueError(f"relevance_threshold must be in (0, 1], got {self.relevance_threshold}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.sigma is not None and self.sigma <= 0.0:
            raise ValueError(f"dga sigma must be > 0, got {self.sigma}")
        if self.feature_source not in ("reduced", "raw"):
            raise ValueError(f"feature_source must be 'reduced' or 'raw', got {self.feature_source!r}")


def dga_weights(r_bar, mask, n_clips, sigma, cfg=None, grid=None):
    """Aggregate one Gaussian per masked center into a dynamic prior.

    Literal form: G_hat(i) = (1/C) sum_z mask[z] * rel * G(i, z, sigma)
    with C the number of masked centers and rel either r_bar[i]
    (default) or r_bar[z]. With renormalization enabled the aggregate is
    clamped at 0 (relevance can be negative) and min-max rescaled so it
    is comparable to the static grid; with it disabled the literal
    aggregate is returned, which the test oracle checks term by term.
    """
    cfg = cfg or DgaConfig()
    r_bar = np.asarray(r_bar, dtype=np.float64)
    mask = np.asarray(mask)
    if r_bar.shape != (n_clips,) or mask.shape != (n_clips,):
        raise ValueError("dga_weights: r_bar/mask length must equal N")
    centers = np.flatnonzero(mask)
    if centers.size == 0:
        raise ValueError("dga_weights: mask selects no centers")
    if grid is None:
        grid = GaussianGrid(n_clips, sigma)
    if cfg.literal_relevance_at_i:
        acc = np.zeros(n_clips)
        for z in centers:
            acc += grid.weights(z)
        out = r_bar * acc / centers.size
    else:
        acc = np.zeros(n_clips)
        for z in centers:
            acc += r_bar[z] * grid.weights(z)
        out = acc / centers.size
    if cfg.renormalize:
        out = minmax_normalize(np.maximum(out, 0.0))
    return out
