"""Synthetic grounding corpora with exactly known ground truth.

Each video is a sequence of N clip feature vectors: event-prototype
vectors plus noise inside annotated target spans, a background
prototype plus noise elsewhere. Each query is a fixed random linear
code of the mean of its span's event prototypes. Supervision exposed to
training is a single glance clip index inside the span; the hidden
(t_start, t_end) span is only available to evaluation.

Persistence: a JSON manifest plus one binary feature file per video and
per query (see matio for the container format). Features are quantized
to 32-bit reals at generation time so save/load round-trips are
bit-exact even though internal arithmetic is 64-bit.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import matio
from .numerics import seeded_rng

__all__ = [
    "CorpusError",
    "GenerationError",
    "ManifestError",
    "MissingFeatureError",
    "DimensionMismatchError",
    "CorpusConfig",
    "GlanceView",
    "GroundingSample",
    "Corpus",
    "generate",
    "save",
    "load",
]

MANIFEST_NAME = "manifest.json"
FEATURE_DIR = "features"
TRAIN_VIDEO_FRACTION = 2.0 / 3.0  # leading videos train, the rest test
EVENT_JITTER = 0.2  # events of one moment are jittered copies of its base prototype


class CorpusError(Exception):
    pass


class GenerationError(CorpusError):
    """Config asks for spans that cannot be realized."""


class ManifestError(CorpusError):
    """Manifest missing, unparseable, or structurally invalid."""


class MissingFeatureError(CorpusError):
    """Manifest references a feature file that does not exist."""


class DimensionMismatchError(CorpusError):
    """A feature file disagrees with the dimensions in the manifest."""


@dataclass
class CorpusConfig:
    num_videos: int = 24
    clips_per_video: int = 16
    feature_dim: int = 16
    query_dim: int = 16
    num_event_prototypes: int = 6
    moments_per_video: int = 2
    max_events_per_moment: int = 1
    noise_sigma: float = 0.05
    glance_mode: str = "uniform"
    extreme_margin_fraction: float = 0.1
    seed: int = 7

    def validate(self):
        if self.num_videos < 1:
            raise ValueError("num_videos must be >= 1")
        if self.clips_per_video < 2:
            raise ValueError("clips_per_video must be >= 2")
        if self.feature_dim < 1 or self.query_dim < 1:
            raise ValueError("feature_dim and query_dim must be >= 1")
        if self.moments_per_video < 1:
            raise ValueError("moments_per_video must be >= 1")
        if self.max_events_per_moment < 1:
            raise ValueError("max_events_per_moment must be >= 1")
        if self.num_event_prototypes < self.moments_per_video:
            raise ValueError(
                "need num_event_prototypes >= moments_per_video so moments within "
                "a video never share a base prototype")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        if self.glance_mode not in ("uniform", "extreme"):
            raise ValueError(f"glance_mode must be 'uniform' or 'extreme', got {self.glance_mode!r}")
        if not 0.0 < self.extreme_margin_fraction <= 0.5:
            raise ValueError("extreme_margin_fraction must be in (0, 0.5]")


@dataclass(eq=False)
class GlanceView:
    """What the trainer is allowed to see: no ground-truth span field."""

    video_id: str
    query_id: str
    clip_features: np.ndarray  # N x feature_dim
    query_feature: np.ndarray  # query_dim
    glance: int


@dataclass(eq=False)
class GroundingSample:
    video_id: str
    query_id: str
    clip_features: np.ndarray
    query_feature: np.ndarray
    glance: int
    gt_span: tuple  # (t_start, t_end), clip indices inclusive

    def glance_view(self):
        return GlanceView(self.video_id, self.query_id, self.clip_features,
                          self.query_feature, self.glance)

    def __eq__(self, other):
        if not isinstance(other, GroundingSample):
            return NotImplemented
        return (self.video_id == other.video_id
                and self.query_id == other.query_id
                and self.glance == other.glance
                and tuple(self.gt_span) == tuple(other.gt_span)
                and np.array_equal(self.clip_features, other.clip_features)
                and np.array_equal(self.query_feature, other.query_feature))


@dataclass(eq=False)
class Corpus:
    config: CorpusConfig
    samples: list
    splits: list  # "train" / "test" per sample, train/test video ids disjoint
    stats: dict = field(default_factory=dict)  # generation-time counters, not persisted

    def train_views(self):
        return [s.glance_view() for s, tag in zip(self.samples, self.splits) if tag == "train"]

    def test_samples(self):
        return [s for s, tag in zip(self.samples, self.splits) if tag == "test"]

    def sample_by_query_id(self, query_id):
        for s in self.samples:
            if s.query_id == query_id:
                return s
        raise KeyError(f"no sample with query_id {query_id!r}")

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (self.config == other.config
                and self.splits == other.splits
                and len(self.samples) == len(other.samples)
                and all(a == b for a, b in zip(self.samples, other.samples)))


def _span_length_bounds(n_clips, spans_per_video):
    # Shortest span is 3 clips when N allows it, so a single clip never
    # reaches IoU 0.5 against any target; the cap keeps several background
    # clips in every video. Spans plus 1-clip gaps must pack into N.
    lo = 3 if n_clips >= spans_per_video * 4 else max(1, n_clips // (2 * spans_per_video))
    hi = max(lo, min(n_clips // 3, n_clips // spans_per_video - 2))
    return lo, hi


def _plan_spans(rng, n_clips, count, lo, hi):
    """Disjoint spans with at least one background clip between them."""
    if count * lo + (count - 1) > n_clips:
        raise GenerationError(
            f"cannot pack {count} spans of length >= {lo} plus gaps into {n_clips} clips")
    for _ in range(256):
        lengths = rng.integers(lo, hi + 1, size=count)
        free = n_clips - int(lengths.sum()) - (count - 1)
        if free < 0:
            continue
        gaps = rng.multinomial(free, np.full(count + 1, 1.0 / (count + 1)))
        spans = []
        t = int(gaps[0])
        for q in range(count):
            spans.append((t, t + int(lengths[q]) - 1))
            t += int(lengths[q]) + 1 + int(gaps[q + 1])
        return spans
    raise GenerationError(f"failed to pack {count} spans into {n_clips} clips after 256 tries")


def _split_blocks(start, end, pieces):
    """Split the inclusive span into `pieces` contiguous blocks, longest first."""
    length = end - start + 1
    base, extra = divmod(length, pieces)
    blocks = []
    t = start
    for b in range(pieces):
        size = base + (1 if b < extra else 0)
        blocks.append((t, t + size - 1))
        t += size
    return blocks


def _draw_glance(rng, span, mode, margin_fraction):
    ts, te = span
    if mode == "uniform":
        return int(rng.integers(ts, te + 1))
    length = te - ts + 1
    margin = min(length, math.ceil(margin_fraction * length))
    if rng.integers(2) == 0:
        return int(rng.integers(ts, ts + margin))
    return int(rng.integers(te - margin + 1, te + 1))


def _f32_quantize(arr):
    return np.asarray(arr, dtype=np.float64).astype(np.float32).astype(np.float64)


def generate(config):
    """Generate a corpus deterministically from its config.

    Per-video draw order is fixed (spans, per-span event structure, clip
    noise, query noise, glance) so equal seeds give bit-identical
    corpora.
    """
    config.validate()
    rng = seeded_rng(config.seed)
    n = config.clips_per_video
    prototypes = rng.normal(size=(config.num_event_prototypes, config.feature_dim))
    background = rng.normal(size=config.feature_dim)
    query_code = rng.normal(size=(config.feature_dim, config.query_dim)) / math.sqrt(config.feature_dim)

    lo, hi = _span_length_bounds(n, config.moments_per_video)
    n_train = config.num_videos if config.num_videos == 1 else \
        min(config.num_videos - 1, max(1, round(config.num_videos * TRAIN_VIDEO_FRACTION)))

    samples, splits = [], []
    multi_event = 0
    for v in range(config.num_videos):
        video_id = f"v{v:04d}"
        spans = _plan_spans(rng, n, config.moments_per_video, lo, hi)
        # one base prototype per moment (distinct within the video);
        # a moment's events are distinct jittered copies of its base, so the
        # events of one moment correlate strongly with each other but not
        # with other moments or the background
        bases = rng.choice(config.num_event_prototypes, size=len(spans), replace=False)
        span_events = []
        for span, base in zip(spans, bases):
            n_events = min(config.max_events_per_moment, span[1] - span[0] + 1)
            jitter = rng.normal(size=(n_events, config.feature_dim)) * EVENT_JITTER
            span_events.append(prototypes[base] + jitter)
        noise = rng.normal(size=(n, config.feature_dim)) * config.noise_sigma
        clips = np.tile(background, (n, 1)) + noise
        for span, events in zip(spans, span_events):
            for block, event in zip(_split_blocks(span[0], span[1], len(events)), events):
                for t in range(block[0], block[1] + 1):
                    clips[t] = event + noise[t]
        clips = _f32_quantize(clips)
        for q, (span, events) in enumerate(zip(spans, span_events)):
            if len(events) > 1:
                multi_event += 1
            mix = events.mean(axis=0)
            qfeat = mix @ query_code + rng.normal(size=config.query_dim) * config.noise_sigma
            qfeat = _f32_quantize(qfeat)
            glance = _draw_glance(rng, span, config.glance_mode, config.extreme_margin_fraction)
            samples.append(GroundingSample(
                video_id=video_id,
                query_id=f"{video_id}_q{q}",
                clip_features=clips,
                query_feature=qfeat,
                glance=glance,
                gt_span=span,
            ))
            splits.append("train" if v < n_train else "test")
    return Corpus(config, samples, splits, stats={"multi_event_queries": multi_event})


def save(corpus, directory):
    """Write manifest.json plus one feature file per video and query."""
    os.makedirs(os.path.join(directory, FEATURE_DIR), exist_ok=True)
    seen_videos = {}
    entries = []
    for sample, tag in zip(corpus.samples, corpus.splits):
        clip_rel = seen_videos.get(sample.video_id)
        if clip_rel is None:
            clip_rel = f"{FEATURE_DIR}/{sample.video_id}.bin"
            matio.write_matrix(os.path.join(directory, clip_rel), sample.clip_features, dtype="f32")
            seen_videos[sample.video_id] = clip_rel
        query_rel = f"{FEATURE_DIR}/{sample.query_id}.bin"
        matio.write_matrix(os.path.join(directory, query_rel),
                           sample.query_feature.reshape(1, -1), dtype="f32")
        entries.append({
            "video_id": sample.video_id,
            "query_id": sample.query_id,
            "split": tag,
            "glance": int(sample.glance),
            "gt_span": [int(sample.gt_span[0]), int(sample.gt_span[1])],
            "clip_file": clip_rel,
            "query_file": query_rel,
        })
    manifest = {"format": "glanceloc-corpus", "version": 1,
                "config": asdict(corpus.config), "samples": entries}
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


_SAMPLE_KEYS = {"video_id", "query_id", "split", "glance", "gt_span", "clip_file", "query_file"}


def load(directory):
    """Load a corpus, validating structure, dimensions and invariants."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise ManifestError(f"missing manifest: {manifest_path}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"unparseable manifest: {exc}") from exc
    if manifest.get("format") != "glanceloc-corpus":
        raise ManifestError(f"not a corpus manifest: {manifest_path}")
    try:
        config = CorpusConfig(**manifest["config"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"bad config block: {exc}") from exc

    samples, splits = [], []
    clip_cache = {}
    for entry in manifest.get("samples", []):
        extra = set(entry) - _SAMPLE_KEYS
        missing = _SAMPLE_KEYS - set(entry)
        if extra or missing:
            raise ManifestError(f"sample entry keys wrong: extra={sorted(extra)} missing={sorted(missing)}")
        clips = clip_cache.get(entry["clip_file"])
        if clips is None:
            clips = _read_features(directory, entry["clip_file"])
            if clips.shape != (config.clips_per_video, config.feature_dim):
                raise DimensionMismatchError(
                    f"{entry['clip_file']}: shape {clips.shape}, expected "
                    f"({config.clips_per_video}, {config.feature_dim})")
            clip_cache[entry["clip_file"]] = clips
        qfeat = _read_features(directory, entry["query_file"])
        if qfeat.shape != (1, config.query_dim):
            raise DimensionMismatchError(
                f"{entry['query_file']}: shape {qfeat.shape}, expected (1, {config.query_dim})")
        ts, te = entry["gt_span"]
        glance = entry["glance"]
        if not 0 <= ts <= glance <= te < config.clips_per_video:
            raise ManifestError(
                f"{entry['query_id']}: glance {glance} outside span ({ts}, {te})")
        samples.append(GroundingSample(
            video_id=entry["video_id"],
            query_id=entry["query_id"],
            clip_features=clips,
            query_feature=qfeat[0],
            glance=int(glance),
            gt_span=(int(ts), int(te)),
        ))
        splits.append(entry["split"])
    train_videos = {s.video_id for s, t in zip(samples, splits) if t == "train"}
    test_videos = {s.video_id for s, t in zip(samples, splits) if t == "test"}
    if train_videos & test_videos:
        raise ManifestError(f"train/test videos overlap: {sorted(train_videos & test_videos)}")
    return Corpus(config, samples, splits)


def _read_features(directory, rel_path):
    path = os.path.join(directory, rel_path)
    if not os.path.exists(path):
        raise MissingFeatureError(f"manifest references missing feature file: {path}")
    return matio.read_matrix(path)
