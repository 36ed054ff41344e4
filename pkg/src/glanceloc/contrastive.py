"""Prior-calibrated key selection and the weighted group contrastive loss.

For each query the per-moment Gaussian weight is calibrated by the
semantic consistency (cosine) between the query embedding and each
moment embedding; the top-k moments under the calibrated prior become a
group of positive keys weighted by their Gaussian weights. Negatives
are the same video's moments that miss the glance plus every moment of
every other video in the batch. The loss is a weighted InfoNCE over the
group; its per-score gradient is returned in closed form so the model's
analytic backward can consume it.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import Gradients, pair_backward, query_backward, query_forward, \
    scores as model_scores, video_backward, video_forward
from .numerics import row_cosines
from .temporal_map import moment_grid

__all__ = [
    "consistency_scores",
    "calibrate",
    "KeySelection",
    "select_keys",
    "LossOutput",
    "group_contrastive_loss",
    "batch_loss",
]

SAMPLING_MODES = ("gaussian_only", "semantic_only", "calibrated")


def consistency_scores(query_emb, moment_emb):
    """Cosine between the query embedding and every moment embedding."""
    return row_cosines(moment_emb, query_emb)


def calibrate(gaussian_w, consistency):
    """Element-wise product; negative consistency ranks a moment low."""
    gaussian_w = np.asarray(gaussian_w, dtype=np.float64)
    consistency = np.asarray(consistency, dtype=np.float64)
    if gaussian_w.shape != consistency.shape:
        raise ValueError("calibrate: length mismatch")
    return gaussian_w * consistency


@dataclass
class KeySelection:
    """Positive / negative key indices for one sample.

    positives: flat moment indices, the k largest by the ranking value
        (ties broken to the lower flat index), in rank order.
    positive_weights: the Gaussian weights of those moments.
    intra_negatives: flat indices of own moments that do not contain the
        glance, minus the positives, ascending.
    inter_refs: batch positions of other samples, all of whose moments
        serve as negatives.
    """

    positives: np.ndarray
    positive_weights: np.ndarray
    intra_negatives: np.ndarray
    inter_refs: tuple


def select_keys(ranking, gaussian_w, glance, k, starts, ends, inter_refs=()):
    ranking = np.asarray(ranking, dtype=np.float64)
    m = ranking.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"select_keys: k={k} out of range [1, {m}]")
    order = np.lexsort((np.arange(m), -ranking))
    positives = order[:k]
    negative_mask = ~((starts <= glance) & (glance <= ends))
    negative_mask[positives] = False
    return KeySelection(positives, np.asarray(gaussian_w)[positives],
                        np.flatnonzero(negative_mask), tuple(inter_refs))


@dataclass
class LossOutput:
    loss: float
    pos_score_grads: np.ndarray  # d loss / d similarity score, positives
    neg_score_grads: np.ndarray  # same for negatives, concatenated order


def group_contrastive_loss(query_emb, positives, pos_weights, negatives, tau,
                           similarity="cosine"):
    """Weighted group InfoNCE over k positives and any number of negatives.

    loss = -(1/k) sum_z W[z] * log( exp(s_z / tau) / SUM ) where SUM runs
    over all positive and negative similarity scores. Summations use
    compensated accumulation, so the value is independent of negative
    enumeration order. Per-score gradients:

        positive z: (sum(W) * softmax_z - W[z]) / (k * tau)
        negative z:  sum(W) * softmax_z / (k * tau)

    with the softmax taken over all scored logits.
    """
    positives = np.asarray(positives, dtype=np.float64)
    if positives.ndim != 2 or positives.shape[0] < 1:
        raise ValueError("group_contrastive_loss: need at least one positive key")
    if tau <= 0.0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    k = positives.shape[0]
    pos_weights = np.asarray(pos_weights, dtype=np.float64)
    if pos_weights.shape != (k,):
        raise ValueError("group_contrastive_loss: one weight per positive required")
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, positives.shape[1])

    pos_scores = model_scores(query_emb, positives, similarity)
    neg_scores = (model_scores(query_emb, negatives, similarity)
                  if negatives.shape[0] else np.empty(0))
    logits = np.concatenate([pos_scores, neg_scores]) / tau
    peak = float(logits.max())
    exp_shift = np.exp(logits - peak)
    lse = peak + math.log(math.fsum(exp_shift))
    loss = math.fsum(w * (lse - z) for w, z in zip(pos_weights, logits[:k])) / k

    softmax = np.exp(logits - lse)
    weight_sum = math.fsum(pos_weights)
    pos_grads = (weight_sum * softmax[:k] - pos_weights) / (k * tau)
    neg_grads = weight_sum * softmax[k:] / (k * tau)
    return LossOutput(loss, pos_grads, neg_grads)


def batch_loss(samples, params, prior_tables, k, tau, sampling_mode="calibrated",
               similarity="cosine"):
    """Mean per-sample group contrastive loss over a batch, with gradients.

    Args:
        samples: glance views sharing a clip count N.
        prior_tables: per-sample length-M Gaussian weight vectors, where
            M = N(N+1)/2 (triplet or midpoint weights, static or dynamic).
        sampling_mode: rank positives by gaussian weight, by semantic
            consistency, or by their product.

    Returns:
        (mean loss, Gradients), with gradients accumulated in sample
        order and scaled by 1/len(samples).
    """
    if not samples:
        raise ValueError("batch_loss: empty batch")
    if sampling_mode not in SAMPLING_MODES:
        raise ValueError(f"sampling_mode must be one of {SAMPLING_MODES}, got {sampling_mode!r}")
    n_clips = samples[0].clip_features.shape[0]
    starts, ends = moment_grid(n_clips)

    video_traces = [video_forward(params, s.clip_features) for s in samples]
    query_embs = [query_forward(params, s.query_feature) for s in samples]
    d_moment_emb = [np.zeros_like(vt.moment_emb) for vt in video_traces]
    d_query_emb = [np.zeros(params.Ws.shape[1]) for _ in samples]

    total = 0.0
    for a, sample in enumerate(samples):
        own_scores = model_scores(query_embs[a], video_traces[a].moment_emb, similarity)
        gaussian_w = np.asarray(prior_tables[a], dtype=np.float64)
        if similarity == "cosine":
            consistency = own_scores
        else:
            consistency = consistency_scores(query_embs[a], video_traces[a].moment_emb)
        if sampling_mode == "gaussian_only":
            ranking = gaussian_w
        elif sampling_mode == "semantic_only":
            ranking = consistency
        else:
            ranking = calibrate(gaussian_w, consistency)
        others = tuple(b for b in range(len(samples)) if b != a)
        sel = select_keys(ranking, gaussian_w, sample.glance, k, starts, ends, others)

        neg_blocks = [video_traces[a].moment_emb[sel.intra_negatives]]
        neg_blocks += [video_traces[b].moment_emb for b in sel.inter_refs]
        negatives = np.vstack(neg_blocks) if neg_blocks else np.empty((0, params.Ws.shape[1]))
        out = group_contrastive_loss(
            query_embs[a], video_traces[a].moment_emb[sel.positives],
            sel.positive_weights, negatives, tau, similarity)
        total += out.loss

        # route the per-score gradients back onto (query a, video v) pairs
        segments = [(a, sel.positives, out.pos_score_grads)]
        at = sel.intra_negatives.shape[0]
        segments.append((a, sel.intra_negatives, out.neg_score_grads[:at]))
        for b in sel.inter_refs:
            m_b = video_traces[b].moment_emb.shape[0]
            segments.append((b, None, out.neg_score_grads[at:at + m_b]))
            at += m_b
        for v, rows, upstream in segments:
            if upstream.size == 0:
                continue
            emb = video_traces[v].moment_emb if rows is None else video_traces[v].moment_emb[rows]
            dq, dm = pair_backward(query_embs[a], emb, upstream, similarity)
            d_query_emb[a] += dq
            if rows is None:
                d_moment_emb[v] += dm
            else:
                np.add.at(d_moment_emb[v], rows, dm)

    grads = Gradients.zeros_like(params)
    for a, sample in enumerate(samples):
        query_backward(np.asarray(sample.query_feature, dtype=np.float64),
                       d_query_emb[a], grads)
    for vt, dm in zip(video_traces, d_moment_emb):
        video_backward(params, vt, dm, grads)
    grads.scale_(1.0 / len(samples))
    return total / len(samples), grads
