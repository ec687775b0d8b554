"""Embedding extraction and cosine trial scoring.

Evaluation is deterministic: no token sampling (the surviving token at
index 0 is used) and no augmentation. Scores are plain cosine
similarities between utterance embeddings; students contribute their
class-token state only, never the distillation token.
"""

from dataclasses import dataclass

import numpy as np

MODES = ("AVG", "CLS")


@dataclass
class Trial:
    enroll_id: str
    test_id: str
    label: str  # "target" | "nontarget"

    def __post_init__(self):
        if self.label not in ("target", "nontarget"):
            raise ValueError(f"trial label must be target/nontarget, got {self.label!r}")


class TrialSet:
    """Labeled trials plus the embedding for every referenced utterance."""

    def __init__(self, trials, embeddings):
        self.trials = list(trials)
        self.embeddings = dict(embeddings)
        for trial in self.trials:
            for utt in (trial.enroll_id, trial.test_id):
                if utt not in self.embeddings:
                    raise KeyError(f"no embedding for utterance {utt!r}")
        labels = {t.label for t in self.trials}
        if self.trials and labels != {"target", "nontarget"}:
            raise ValueError("trial set needs at least one target and one nontarget")


def extract_embedding(model, seq_combined, mode):
    """Fixed-length utterance embedding from a trained model.

    CLS attaches the surviving class token (index 0, plus the model's
    distillation token if it has one, matching its training-time input)
    and returns the class-token state. AVG runs the encoder without
    tokens and averages the output rows over time.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "CLS":
        states, _ = model.encode_with_tokens(seq_combined, token_index=0)
        return states[0].values[0].copy()
    out, _ = model.encode_plain(seq_combined)
    return out.values.mean(axis=0)


def cosine_score(a, b):
    """Cosine similarity in [-1, 1]; zero vectors are rejected."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_score: zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def score_trials(trial_set):
    """Cosine score for every trial, in trial order."""
    return [
        (trial, cosine_score(trial_set.embeddings[trial.enroll_id],
                             trial_set.embeddings[trial.test_id]))
        for trial in trial_set.trials
    ]


def aggregate_embeddings(vectors):
    """Multi-session enrollment: length-normalized mean of embeddings."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vectors:
        raise ValueError("no embeddings to aggregate")
    mean = np.mean(vectors, axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("aggregate embedding is the zero vector")
    return mean / norm


def read_trials(path):
    """Trial lines: enroll_id test_id {target|nontarget}."""
    trials = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            trials.append(Trial(*parts))
    return trials


def write_trials(path, trials):
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.enroll_id} {t.test_id} {t.label}\n")


def write_scores(path, scored):
    """Score lines: enroll_id test_id score (full float64 precision)."""
    with open(path, "w") as fh:
        for trial, score in scored:
            fh.write(f"{trial.enroll_id} {trial.test_id} {score!r}\n")


def read_scores(path):
    scored = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            scored.append((parts[0], parts[1], float(parts[2])))
    return scored
