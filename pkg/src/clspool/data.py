"""Synthetic text-dependent verification corpus and feature file I/O.

Each phrase is an ordered permutation of a shared segment inventory and
comes paired with its order-reversed mirror, so every phrase pair has
identical frame content up to ordering: pooling that ignores frame
order cannot tell a phrase from its mirror. A speaker is a constant
offset vector added to every frame. Position features carry the segment
identity of each frame smoothed with a short causal kernel (wrapping at
the sequence edge), which encodes segment transitions without changing
any per-segment column mass.

Feature files are little-endian: magic "TPF1", then T, D, P as uint32,
then the frames and position matrices row-major as float32.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from .verification import Trial

MAGIC = b"TPF1"

# causal smoothing kernel over segment identities, lag 0 first
POSITION_KERNEL = (0.6, 0.25, 0.15)

# scale of the per-speaker offset relative to unit-variance segments
SPEAKER_SCALE = 0.6


class FeatureFileError(Exception):
    """Malformed feature file."""


class BadMagic(FeatureFileError):
    """File does not start with the expected magic bytes."""


class TruncatedFile(FeatureFileError):
    """File ends before the declared payload is complete."""


@dataclass
class FeatureSequence:
    """One utterance: frame matrix, position matrix, and identity tags."""

    frames: np.ndarray     # (T, D) float32
    positions: np.ndarray  # (T, P) float32
    speaker_id: str = ""
    phrase_id: str = ""
    utterance_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 2 or self.positions.ndim != 2:
            raise ValueError("frames and positions must be 2-d")
        if self.frames.shape[0] != self.positions.shape[0]:
            raise ValueError(
                f"frame rows {self.frames.shape[0]} != position rows {self.positions.shape[0]}"
            )
        if self.frames.shape[0] < 1:
            raise ValueError("sequence must have at least one frame")

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class CorpusSpec:
    """Shape of the synthetic corpus.

    `n_phrases` must be even: phrases come in mirror pairs. `frames`
    bounds the per-utterance length draw. position_dim defaults to the
    segment inventory size.
    """

    n_speakers: int = 4
    n_phrases: int = 8
    sessions: int = 5
    frames: tuple = (40, 60)
    feature_dim: int = 8
    segments: int = 8
    position_dim: int | None = None
    position_scale: float = 2.0
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.position_dim is None:
            self.position_dim = self.segments
        if min(self.n_speakers, self.n_phrases, self.sessions,
               self.feature_dim, self.segments, self.position_dim) < 1:
            raise ValueError("all corpus counts must be >= 1")
        if self.n_phrases % 2 != 0:
            raise ValueError(f"n_phrases must be even (mirror pairs), got {self.n_phrases}")
        lo, hi = self.frames
        if not 1 <= lo <= hi:
            raise ValueError(f"bad frame range {self.frames}")
        if -(-lo // self.segments) > hi // self.segments:
            raise ValueError(
                f"frame range {self.frames} admits no whole multiple of {self.segments} segments"
            )
        if self.position_dim < self.segments:
            raise ValueError(
                f"position_dim {self.position_dim} cannot encode {self.segments} segments"
            )
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.position_scale <= 0:
            raise ValueError("position_scale must be positive")


@dataclass
class SyntheticCorpus:
    spec: CorpusSpec
    train: list
    eval: list
    trials: dict       # condition name -> list[Trial]
    mirror: dict       # phrase_id -> its order-reversed partner


def _position_matrix(seg_ids, n_dims, scale):
    """Causally smoothed one-hot segment identities, wrapping in time.

    `scale` lifts the encoding toward the magnitude of the content
    features so attention sees both on comparable footing.
    """
    n = len(seg_ids)
    onehot = np.zeros((n, n_dims))
    onehot[np.arange(n), seg_ids] = 1.0
    out = np.zeros_like(onehot)
    for lag, weight in enumerate(POSITION_KERNEL):
        out += weight * np.roll(onehot, lag, axis=0)
    return (out * scale).astype(np.float32)


def _make_utterance(spec, prototypes, offset, phrase, rng):
    # equal per-segment duration, so a phrase and its mirror have
    # identical per-segment frame counts at any drawn length
    lo = -(-spec.frames[0] // spec.segments)
    hi = spec.frames[1] // spec.segments
    reps = int(rng.integers(lo, hi + 1))
    seg_ids = np.repeat(np.asarray(phrase), reps)
    total = seg_ids.size
    frames = prototypes[seg_ids] + offset + rng.normal(0.0, 1.0, (total, spec.feature_dim)) * spec.noise
    return frames.astype(np.float32), _position_matrix(seg_ids, spec.position_dim,
                                                       spec.position_scale)


def _draw_phrases(spec, rng):
    """Mirror-paired segment orders; phrase 2k+1 reverses phrase 2k."""
    phrases = []
    seen = set()
    while len(phrases) < spec.n_phrases:
        order = tuple(rng.permutation(spec.segments))
        mirror = order[::-1]
        if order == mirror or order in seen or mirror in seen:
            continue
        seen.update((order, mirror))
        phrases.extend((list(order), list(mirror)))
    return phrases[:spec.n_phrases]


def gen_synthetic_corpus(spec):
    """Deterministic corpus from the spec: train split, eval split with
    disjoint speakers, and trial lists per condition.

    Conditions: "speaker" pits enrollments against other speakers
    saying the same phrase, "phrase" against the same speaker saying
    the mirrored phrase, "all" is their union.
    """
    rng = np.random.default_rng(spec.seed)
    prototypes = rng.standard_normal((spec.segments, spec.feature_dim))
    phrases = _draw_phrases(spec, rng)
    train_offsets = rng.standard_normal((spec.n_speakers, spec.feature_dim)) * SPEAKER_SCALE
    eval_offsets = rng.standard_normal((spec.n_speakers, spec.feature_dim)) * SPEAKER_SCALE

    mirror = {}
    for k in range(0, spec.n_phrases, 2):
        a, b = f"p{k:02d}", f"p{k + 1:02d}"
        mirror[a] = b
        mirror[b] = a

    def build_split(prefix, offsets):
        split = []
        for s in range(spec.n_speakers):
            speaker = f"{prefix}_s{s:02d}"
            for p, phrase in enumerate(phrases):
                for u in range(spec.sessions):
                    frames, positions = _make_utterance(spec, prototypes, offsets[s], phrase, rng)
                    split.append(FeatureSequence(
                        frames=frames, positions=positions,
                        speaker_id=speaker, phrase_id=f"p{p:02d}",
                        utterance_id=f"{speaker}_p{p:02d}_u{u:02d}",
                    ))
        return split

    train = build_split("train", train_offsets)
    eval_split = build_split("eval", eval_offsets)

    by_class = {}
    for seq in eval_split:
        by_class.setdefault((seq.speaker_id, seq.phrase_id), []).append(seq)

    targets, wrong_speaker, wrong_phrase = [], [], []
    speakers = sorted({s for s, _ in by_class})
    for (speaker, phrase), sessions in sorted(by_class.items()):
        enroll = sessions[0].utterance_id
        for test in sessions[1:]:
            targets.append(Trial(enroll, test.utterance_id, "target"))
        for other in speakers:
            if other == speaker:
                continue
            for test in by_class[(other, phrase)][1:]:
                wrong_speaker.append(Trial(enroll, test.utterance_id, "nontarget"))
        for test in by_class[(speaker, mirror[phrase])][1:]:
            wrong_phrase.append(Trial(enroll, test.utterance_id, "nontarget"))

    trials = {
        "speaker": targets + wrong_speaker,
        "phrase": targets + wrong_phrase,
        "all": targets + wrong_speaker + wrong_phrase,
    }
    return SyntheticCorpus(spec=spec, train=train, eval=eval_split,
                           trials=trials, mirror=mirror)


def normalize_features(seq):
    """Per-dimension zero mean / unit variance over the utterance.

    Variances are floored at 1e-8, so constant dimensions map to zero.
    Positions pass through untouched.
    """
    frames = seq.frames.astype(np.float64)
    mean = frames.mean(axis=0)
    var = np.maximum(frames.var(axis=0), 1e-8)
    normalized = ((frames - mean) / np.sqrt(var)).astype(np.float32)
    return replace(seq, frames=normalized)


def combine_features(frames, positions, mode="concat"):
    """Model input from frames and positions: side-by-side or additive."""
    if mode == "concat":
        return np.concatenate([frames, positions], axis=1).astype(np.float64)
    if mode == "add":
        if frames.shape != positions.shape:
            raise ValueError(
                f"additive positions need matching shapes, got {frames.shape} vs {positions.shape}"
            )
        return (frames.astype(np.float64) + positions.astype(np.float64))
    raise ValueError(f"unknown position mode {mode!r}")


def save_features(seq, path):
    """Write one utterance in the TPF1 binary layout."""
    t, d = seq.frames.shape
    p = seq.positions.shape[1]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", t, d, p))
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(seq.positions, dtype="<f4").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"file ends inside {what} ({len(buf)} of {n} bytes)")
    return buf


def load_features(path, speaker_id="", phrase_id="", utterance_id=""):
    """Read one utterance; identity tags come from the caller (manifest)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
        t, d, p = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if t < 1 or d < 1 or p < 1:
            raise FeatureFileError(f"degenerate dimensions T={t} D={d} P={p}")
        frames = np.frombuffer(_read_exact(fh, 4 * t * d, "frames"), dtype="<f4")
        positions = np.frombuffer(_read_exact(fh, 4 * t * p, "positions"), dtype="<f4")
    return FeatureSequence(
        frames=frames.reshape(t, d).copy(),
        positions=positions.reshape(t, p).copy(),
        speaker_id=speaker_id, phrase_id=phrase_id, utterance_id=utterance_id,
    )


def write_manifest(path, entries):
    """Manifest lines: utterance_id speaker_id phrase_id path."""
    with open(path, "w") as fh:
        for utt, spk, phr, feature_path in entries:
            fh.write(f"{utt} {spk} {phr} {feature_path}\n")


def read_manifest(path):
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            entries.append(tuple(parts))
    return entries
