"""Small dense-numerics kernel shared by every other module.

All public operations work on 64-bit floats and are pure functions.
Randomness goes through :func:`seeded_rng` so that identical seeds give
bit-identical streams across runs.
"""

import numpy as np

__all__ = [
    "ZeroNormError",
    "seeded_rng",
    "cosine",
    "row_cosines",
    "finite_diff_gradient",
    "minmax_normalize",
]


class ZeroNormError(ValueError):
    """A vector with zero l2-norm was fed to a cosine computation."""


def seeded_rng(seed):
    """Return a deterministic random generator for the given 64-bit seed."""
    return np.random.default_rng(int(seed))


def cosine(a, b):
    """Cosine similarity a.b / (|a||b|), clipped into [-1, 1].

    Raises ZeroNormError instead of silently producing NaN when either
    input has zero norm.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cosine: shape mismatch {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine: zero-norm input vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def row_cosines(mat, vec):
    """Cosine of `vec` against every row of `mat` (length-rows vector)."""
    mat = np.asarray(mat, dtype=np.float64)
    vec = np.asarray(vec, dtype=np.float64)
    nv = float(np.linalg.norm(vec))
    if nv == 0.0:
        raise ZeroNormError("row_cosines: zero-norm query vector")
    norms = np.linalg.norm(mat, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroNormError(f"row_cosines: zero-norm row(s) {bad.tolist()}")
    return np.clip(mat @ vec / (norms * nv), -1.0, 1.0)


def finite_diff_gradient(f, x, h):
    """Central-difference gradient of a scalar function, used as a test oracle.

    Args:
        f: callable mapping a 1-d parameter vector to a finite scalar.
        x: evaluation point.
        h: step size, either a positive scalar or a per-coordinate vector.

    Returns:
        Gradient vector (f(x + h e_k) - f(x - h e_k)) / (2 h) per coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape).copy()
    if np.any(steps <= 0.0):
        raise ValueError("finite_diff_gradient: step h must be > 0")
    grad = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += steps[k]
        xm[k] -= steps[k]
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"finite_diff_gradient: non-finite f at coordinate {k}")
        grad[k] = (fp - fm) / (2.0 * steps[k])
    return grad


def minmax_normalize(v):
    """Affinely rescale a vector into [0, 1].

    A constant vector maps to all-ones, so a degenerate peak still
    normalizes to 1.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("minmax_normalize: empty vector")
    mn = float(v.min())
    mx = float(v.max())
    if mx == mn:
        return np.ones_like(v)
    return (v - mn) / (mx - mn)
