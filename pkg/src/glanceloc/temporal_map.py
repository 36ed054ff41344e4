"""Candidate-moment geometry and the max-pooled moment feature map.

A moment (i, j) with 0 <= i <= j < N covers clips i..j inclusive, i.e.
the half-open interval [i, j+1) in clip units. All N(N+1)/2 valid
moments are enumerated densely in canonical order: ascending start,
then ascending end.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "num_moments",
    "flat_index",
    "unflatten",
    "moment_grid",
    "iou",
    "contains",
    "MomentMap",
    "build_map",
]


def num_moments(n_clips):
    return n_clips * (n_clips + 1) // 2


def _check_moment(i, j, n_clips):
    if not (0 <= i <= j < n_clips):
        raise IndexError(f"invalid moment ({i}, {j}) for N={n_clips}")


def flat_index(i, j, n_clips):
    """Dense index of moment (i, j) in canonical (start, end) order."""
    _check_moment(i, j, n_clips)
    return i * n_clips - i * (i - 1) // 2 + (j - i)


def unflatten(index, n_clips):
    """Inverse of flat_index."""
    if not (0 <= index < num_moments(n_clips)):
        raise IndexError(f"flat index {index} out of range for N={n_clips}")
    i = 0
    row_len = n_clips
    rest = index
    while rest >= row_len:
        rest -= row_len
        row_len -= 1
        i += 1
    return i, i + rest


def moment_grid(n_clips):
    """Start and end clip indices of every valid moment, canonical order."""
    starts, ends = np.triu_indices(n_clips)
    return starts, ends


def iou(a, b):
    """Intersection over union of two moments in whole-clip units."""
    ai, aj = a
    bi, bj = b
    inter = min(aj, bj) + 1 - max(ai, bi)
    if inter <= 0:
        return 0.0
    union = (aj - ai + 1) + (bj - bi + 1) - inter
    return inter / union


def contains(moment, clip):
    """True iff the moment's span covers the given clip index."""
    i, j = moment
    return i <= clip <= j


@dataclass
class MomentMap:
    """All candidate moments of one video with max-pooled features.

    features[z] is the element-wise max over clip rows starts[z]..ends[z];
    pool_argmax[z, c] records which clip supplied coordinate c (ties broken
    to the lowest clip index, which keeps gradients deterministic).
    """

    n_clips: int
    starts: np.ndarray
    ends: np.ndarray
    features: np.ndarray
    pool_argmax: np.ndarray

    @property
    def size(self):
        return self.features.shape[0]

    def index(self, i, j):
        return flat_index(i, j, self.n_clips)

    def moment(self, z):
        return int(self.starts[z]), int(self.ends[z])


def build_map(clip_features):
    """Build the dense moment map via incremental max pooling.

    row(i, j) = max(row(i, j-1), clip j), so construction is O(N^2 d).
    """
    clip_features = np.asarray(clip_features, dtype=np.float64)
    if clip_features.ndim != 2 or clip_features.shape[0] < 1:
        raise ValueError(f"build_map: need a nonempty N x d matrix, got {clip_features.shape}")
    n, d = clip_features.shape
    m = num_moments(n)
    features = np.empty((m, d), dtype=np.float64)
    pool_argmax = np.empty((m, d), dtype=np.int64)
    for i in range(n):
        cur = clip_features[i].copy()
        cur_arg = np.full(d, i, dtype=np.int64)
        base = flat_index(i, i, n)
        features[base] = cur
        pool_argmax[base] = cur_arg
        for j in range(i + 1, n):
            take = clip_features[j] > cur  # strict: ties keep the lower clip
            cur = np.where(take, clip_features[j], cur)
            cur_arg = np.where(take, j, cur_arg)
            features[base + (j - i)] = cur
            pool_argmax[base + (j - i)] = cur_arg
    starts, ends = moment_grid(n)
    return MomentMap(n, starts, ends, features, pool_argmax)
