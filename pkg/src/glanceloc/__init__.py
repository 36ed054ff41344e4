"""Glance-supervised temporal moment localization on synthetic corpora.

The pipeline: generate corpora whose ground-truth spans are known
exactly but whose training supervision is a single glance clip per
query; build dense 2D candidate-moment maps by max pooling; weigh
moments with a glance-centered (optionally dynamically re-centered)
Gaussian prior; train a two-tower embedding model with a weighted group
contrastive loss and hand-derived gradients; evaluate localization with
R@n at IoU thresholds.
"""

__version__ = "0.1.0"
