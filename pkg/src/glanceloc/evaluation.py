"""Moment ranking, optional temporal NMS, and recall at IoU thresholds.

R@n,IoU=m is the fraction of queries for which at least one of the
top-n ranked moments overlaps the hidden ground-truth span with
IoU >= m (inclusive boundary, the conventional reading).
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import forward
from .temporal_map import iou, moment_grid, num_moments

__all__ = [
    "EvalConfig",
    "Prediction",
    "RecallTable",
    "rank_moments",
    "recall_at",
    "evaluate_model",
    "random_ranking_baseline",
]

DEFAULT_NMS = 0.5  # applied to top-n retrieval for n > 1; top-1 is unaffected


@dataclass
class EvalConfig:
    n_values: tuple = (1, 5)
    iou_thresholds: tuple = (0.5, 0.7)
    nms_threshold: float = DEFAULT_NMS
    similarity: str = "cosine"

    def validate(self):
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive")
        if not self.iou_thresholds or any(not 0.0 < m <= 1.0 for m in self.iou_thresholds):
            raise ValueError("iou thresholds must lie in (0, 1]")
        if self.nms_threshold is not None and not 0.0 < self.nms_threshold <= 1.0:
            raise ValueError("nms_threshold must lie in (0, 1] or be None")


@dataclass
class Prediction:
    """Ranked candidate moments for one query, scores non-increasing."""

    query_id: str
    moments: list   # [(i, j), ...] in rank order
    scores: np.ndarray


class RecallTable:
    def __init__(self, entries, num_queries):
        self.entries = dict(entries)
        self.num_queries = num_queries
        self._check_monotone()

    def _check_monotone(self):
        ns = sorted({n for n, _ in self.entries})
        ms = sorted({m for _, m in self.entries})
        for n in ns:
            for lo, hi in zip(ms, ms[1:]):
                if (n, lo) in self.entries and (n, hi) in self.entries:
                    assert self.entries[(n, hi)] <= self.entries[(n, lo)] + 1e-12
        for m in ms:
            for lo, hi in zip(ns, ns[1:]):
                if (lo, m) in self.entries and (hi, m) in self.entries:
                    assert self.entries[(hi, m)] >= self.entries[(lo, m)] - 1e-12

    def recall(self, n, m):
        return self.entries[(n, m)]

    def to_csv(self):
        lines = ["n,m,recall,num_queries"]
        for (n, m) in sorted(self.entries):
            lines.append(f"{n},{m!r},{self.entries[(n, m)]!r},{self.num_queries}")
        return "\n".join(lines) + "\n"

    def format_table(self):
        ns = sorted({n for n, _ in self.entries})
        ms = sorted({m for _, m in self.entries})
        head = "        " + "  ".join(f"IoU={m:<4g}" for m in ms)
        rows = [head]
        for n in ns:
            cells = "  ".join(f"{self.entries[(n, m)]:8.4f}" for m in ms)
            rows.append(f"R@{n:<5d} {cells}")
        rows.append(f"queries: {self.num_queries}")
        return "\n".join(rows)

    def __eq__(self, other):
        return (isinstance(other, RecallTable)
                and self.entries == other.entries
                and self.num_queries == other.num_queries)


def rank_moments(scores, starts, ends, nms_threshold=None):
    """Rank flat moment indices by score, optionally greedily suppressed.

    Sort is by descending score with ties broken to the lower flat
    index. With a threshold, a moment is kept only when its IoU with
    every already-kept moment does not exceed it; the result is a
    permutation prefix independent of input enumeration order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.shape[0]
    order = np.lexsort((np.arange(m), -scores))
    if nms_threshold is None:
        return order
    kept = []
    kept_i, kept_j = [], []
    for z in order:
        i, j = int(starts[z]), int(ends[z])
        if kept:
            inter = np.minimum(kept_j, j) + 1 - np.maximum(kept_i, i)
            inter = np.maximum(inter, 0)
            union = (np.array(kept_j) - np.array(kept_i) + 1) + (j - i + 1) - inter
            if np.any(inter / union > nms_threshold):
                continue
        kept.append(z)
        kept_i.append(i)
        kept_j.append(j)
    return np.asarray(kept, dtype=np.int64)


def recall_at(predictions, gt_spans, n_values, iou_thresholds):
    """Recall table over aligned predictions and ground-truth spans.

    Args:
        predictions: dict query_id -> Prediction.
        gt_spans: dict query_id -> (t_start, t_end).
    """
    if not gt_spans:
        raise ValueError("recall_at: no queries to evaluate")
    missing = sorted(set(gt_spans) - set(predictions))
    if missing:
        raise KeyError(f"missing predictions for queries: {missing}")
    hits = {(n, m): 0 for n in n_values for m in iou_thresholds}
    for qid, span in gt_spans.items():
        pred = predictions[qid]
        best = 0.0
        prefix_best = {}
        for rank, moment in enumerate(pred.moments, start=1):
            best = max(best, iou(moment, span))
            prefix_best[rank] = best
        for n in n_values:
            reach = min(n, len(pred.moments))
            top = prefix_best.get(reach, 0.0)
            for m in iou_thresholds:
                if top >= m:
                    hits[(n, m)] += 1
    total = len(gt_spans)
    return RecallTable({key: count / total for key, count in hits.items()}, total)


def evaluate_model(params, test_samples, config=None):
    """Forward every test query, rank its moments, and tabulate recall."""
    config = config or EvalConfig()
    config.validate()
    if not test_samples:
        raise ValueError("evaluate_model: no queries in the test split")
    predictions = {}
    gt = {}
    for sample in test_samples:
        trace = forward(params, sample.clip_features, sample.query_feature,
                        config.similarity)
        starts, ends = trace.video.mmap.starts, trace.video.mmap.ends
        kept = rank_moments(trace.scores, starts, ends, config.nms_threshold)
        predictions[sample.query_id] = Prediction(
            sample.query_id,
            [(int(starts[z]), int(ends[z])) for z in kept],
            trace.scores[kept],
        )
        gt[sample.query_id] = sample.gt_span
    return recall_at(predictions, gt, config.n_values, config.iou_thresholds)


def random_ranking_baseline(gt_spans, n_clips, iou_threshold):
    """Expected R@1 of a uniformly random ranking, from span geometry alone.

    For each query this is the fraction of the N(N+1)/2 candidates whose
    IoU with the ground truth clears the threshold; the mean over
    queries is the expected recall of scoring moments at random.
    """
    starts, ends = moment_grid(n_clips)
    total = num_moments(n_clips)
    fracs = []
    for span in gt_spans:
        good = sum(1 for i, j in zip(starts, ends)
                   if iou((int(i), int(j)), span) >= iou_threshold)
        fracs.append(good / total)
    return math.fsum(fracs) / len(fracs)
