"""Independent brute-force re-implementations used only by tests.

Everything here is written with plain Python loops and math, sharing no
code with the library's main paths, so agreement between the two is a
meaningful check rather than a tautology.
"""

import math


def oracle_cosine(a, b):
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return num / (na * nb)


def oracle_loss(query_emb, positives, weights, negatives, tau):
    """Literal weighted group InfoNCE: -(1/k) sum W log(exp(s/tau) / SUM)."""
    pos_logits = [oracle_cosine(query_emb, p) / tau for p in positives]
    neg_logits = [oracle_cosine(query_emb, n) / tau for n in negatives]
    denom = sum(math.exp(z) for z in pos_logits) + sum(math.exp(z) for z in neg_logits)
    k = len(positives)
    total = 0.0
    for w, z in zip(weights, pos_logits):
        total += w * math.log(math.exp(z) / denom)
    return -total / k


def oracle_iou(a, b):
    set_a = set(range(a[0], a[1] + 1))
    set_b = set(range(b[0], b[1] + 1))
    if not set_a & set_b:
        return 0.0
    return len(set_a & set_b) / len(set_a | set_b)


def oracle_recall(ranked_moments, gt_spans, n, m):
    """Fraction of queries where some top-n moment has IoU >= m with gt."""
    hit = 0
    for moments, span in zip(ranked_moments, gt_spans):
        for moment in moments[:n]:
            if oracle_iou(moment, span) >= m:
                hit += 1
                break
    return hit / len(gt_spans)


def oracle_pool(clip_rows, i, j):
    """Element-wise max over clip rows i..j inclusive, by exhaustive loop."""
    d = len(clip_rows[0])
    out = list(clip_rows[i])
    for t in range(i + 1, j + 1):
        for c in range(d):
            if clip_rows[t][c] > out[c]:
                out[c] = clip_rows[t][c]
    return out


def _oracle_gaussian_grid(n_clips, center, sigma):
    raw = []
    for i in range(n_clips):
        hi = 2.0 * i / (n_clips - 1) - 1.0
        hc = 2.0 * center / (n_clips - 1) - 1.0
        raw.append(math.exp(-((hi - hc) ** 2) / (2.0 * sigma * sigma)))
    lo, hi = min(raw), max(raw)
    return [(v - lo) / (hi - lo) for v in raw]


def oracle_dga(r_bar, mask, n_clips, sigma):
    """Literal double loop over centers and positions, no clamp or rescale."""
    c = sum(1 for v in mask if v)
    out = []
    for i in range(n_clips):
        acc = 0.0
        for z in range(n_clips):
            if mask[z]:
                acc += r_bar[i] * _oracle_gaussian_grid(n_clips, z, sigma)[i]
        out.append(acc / c)
    return out


def oracle_nms(scored_moments, threshold):
    """Greedy keep-if-clear over (score, i, j), ties by flat enumeration order."""
    ranked = sorted(range(len(scored_moments)),
                    key=lambda z: (-scored_moments[z][0], z))
    kept = []
    for z in ranked:
        _, i, j = scored_moments[z]
        clear = True
        for kz in kept:
            _, ki, kj = scored_moments[kz]
            if oracle_iou((i, j), (ki, kj)) > threshold:
                clear = False
                break
        if clear:
            kept.append(z)
    return kept
