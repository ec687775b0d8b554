"""Detection metrics over labeled score sets: EER and normalized
minimum detection cost.

Threshold convention: a score equal to the threshold counts as an
acceptance, so p_miss is the fraction of targets strictly below the
threshold and p_fa the fraction of nontargets at or above it. The
sweep visits every distinct score plus one reject-all point above the
maximum, which pins the normalized minimum cost at or below 1.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoreSet:
    target_scores: np.ndarray
    nontarget_scores: np.ndarray

    def __post_init__(self):
        self.target_scores = np.asarray(self.target_scores, dtype=np.float64)
        self.nontarget_scores = np.asarray(self.nontarget_scores, dtype=np.float64)
        if self.target_scores.size == 0 or self.nontarget_scores.size == 0:
            raise ValueError("both target and nontarget scores are required")

    @classmethod
    def from_scored_trials(cls, scored):
        """Split (trial, score) pairs by their labels."""
        targets = [s for t, s in scored if t.label == "target"]
        nontargets = [s for t, s in scored if t.label == "nontarget"]
        return cls(np.asarray(targets), np.asarray(nontargets))

    @classmethod
    def from_score_file(cls, scores_path, trials_path):
        """Join a written score file back against its trial list."""
        from .verification import read_scores, read_trials

        labels = {(t.enroll_id, t.test_id): t.label for t in read_trials(trials_path)}
        targets, nontargets = [], []
        for enroll, test, score in read_scores(scores_path):
            label = labels.get((enroll, test))
            if label is None:
                raise KeyError(f"score for unknown trial ({enroll}, {test})")
            (targets if label == "target" else nontargets).append(score)
        return cls(np.asarray(targets), np.asarray(nontargets))


@dataclass
class DcfParams:
    """Detection cost weights: miss cost, false-alarm cost, target prior."""

    c_miss: float
    c_fa: float
    p_target: float

    def __post_init__(self):
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")
        if not 0.0 < self.p_target < 1.0:
            raise ValueError(f"p_target {self.p_target} outside (0, 1)")

    @property
    def norm(self):
        return min(self.c_miss * self.p_target, self.c_fa * (1.0 - self.p_target))


DCF08 = DcfParams(c_miss=10.0, c_fa=1.0, p_target=0.01)
DCF10 = DcfParams(c_miss=1.0, c_fa=1.0, p_target=0.001)


def det_points(scores):
    """(threshold, p_miss, p_fa) at every distinct score, plus reject-all.

    p_miss is non-decreasing and p_fa non-increasing along the sweep.
    """
    targets = np.sort(scores.target_scores)
    nontargets = np.sort(scores.nontarget_scores)
    thresholds = np.unique(np.concatenate([targets, nontargets]))
    # fraction of targets strictly below / nontargets at or above each threshold
    p_miss = np.searchsorted(targets, thresholds, side="left") / targets.size
    p_fa = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    points = list(zip(thresholds.tolist(), p_miss.tolist(), p_fa.tolist()))
    points.append((np.inf, 1.0, 0.0))
    return points


def compute_eer(scores):
    """Rate where p_miss meets p_fa, linearly interpolated on the sweep."""
    points = det_points(scores)
    prev = points[0]
    for point in points:
        diff = point[1] - point[2]
        if diff >= 0.0:
            if diff == 0.0:
                return point[1]
            _, pm1, pf1 = prev
            _, pm2, pf2 = point
            t = (pf1 - pm1) / ((pf1 - pm1) + (pm2 - pf2))
            return pm1 + t * (pm2 - pm1)
        prev = point
    raise RuntimeError("no miss/false-alarm crossing found")  # unreachable


def compute_min_dcf(scores, params):
    """Minimum cost over the threshold sweep, normalized by the better
    of reject-all and accept-all."""
    best = min(
        params.c_miss * pm * params.p_target + params.c_fa * pf * (1.0 - params.p_target)
        for _, pm, pf in det_points(scores)
    )
    return best / params.norm


def metrics_report(scores):
    """The standard triple for one condition."""
    return {
        "eer": compute_eer(scores),
        "dcf08": compute_min_dcf(scores, DCF08),
        "dcf10": compute_min_dcf(scores, DCF10),
    }
