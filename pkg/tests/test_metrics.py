"""Metric tests: the detection sweep and both summary metrics against a
brute-force double-loop oracle, plus the worked examples."""

import numpy as np
import pytest

from clspool import metrics as met
from clspool.metrics import DCF08, DCF10, DcfParams, ScoreSet


def sweep_oracle(targets, nontargets):
    """Independent (threshold, p_miss, p_fa) sweep by explicit counting."""
    points = []
    for thr in sorted(set(targets) | set(nontargets)) + [np.inf]:
        p_miss = sum(1 for s in targets if s < thr) / len(targets)
        p_fa = sum(1 for s in nontargets if s >= thr) / len(nontargets)
        points.append((thr, p_miss, p_fa))
    return points


def eer_oracle(targets, nontargets):
    points = sweep_oracle(targets, nontargets)
    for i, (_, pm, pf) in enumerate(points):
        if pm - pf >= 0.0:
            if pm == pf:
                return pm
            _, pm1, pf1 = points[i - 1]
            t = (pf1 - pm1) / ((pf1 - pm1) + (pm - pf))
            return pm1 + t * (pm - pm1)
    raise AssertionError("no crossing")


def min_dcf_oracle(targets, nontargets, params):
    best = min(
        params.c_miss * pm * params.p_target + params.c_fa * pf * (1 - params.p_target)
        for _, pm, pf in sweep_oracle(targets, nontargets)
    )
    return best / min(params.c_miss * params.p_target, params.c_fa * (1 - params.p_target))


def random_score_set(rng, max_n=50):
    n_t = int(rng.integers(2, max_n))
    n_n = int(rng.integers(2, max_n))
    sep = rng.uniform(0.0, 2.0)
    return (rng.standard_normal(n_t) + sep).tolist(), rng.standard_normal(n_n).tolist()


class TestDetPoints:
    def test_separable_reaches_zero_zero(self):
        points = met.det_points(ScoreSet([1.0], [0.0]))
        assert any(pm == 0.0 and pf == 0.0 for _, pm, pf in points)

    def test_identical_scores_never_reach_zero_zero(self):
        points = met.det_points(ScoreSet([0.5], [0.5]))
        assert not any(pm == 0.0 and pf == 0.0 for _, pm, pf in points)

    def test_matches_brute_force_counter(self):
        rng = np.random.default_rng(0)
        targets = rng.standard_normal(50).tolist()
        nontargets = rng.standard_normal(50).tolist()
        got = met.det_points(ScoreSet(targets, nontargets))
        expect = sweep_oracle(targets, nontargets)
        assert len(got) == len(expect)
        for (t1, pm1, pf1), (t2, pm2, pf2) in zip(got, expect):
            assert t1 == t2 and abs(pm1 - pm2) < 1e-12 and abs(pf1 - pf2) < 1e-12

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        points = met.det_points(ScoreSet(rng.standard_normal(30), rng.standard_normal(30)))
        pm = [p for _, p, _ in points]
        pf = [p for _, _, p in points]
        assert all(a <= b for a, b in zip(pm, pm[1:]))
        assert all(a >= b for a, b in zip(pf, pf[1:]))

    def test_empty_side_rejected(self):
        with pytest.raises(ValueError):
            ScoreSet([], [0.1])


class TestEer:
    def test_separable_is_zero(self):
        assert met.compute_eer(ScoreSet([0.9, 0.8], [0.1, 0.2])) == 0.0

    def test_fully_inverted_is_one(self):
        assert met.compute_eer(ScoreSet([0.4], [0.6])) == 1.0

    def test_worked_example(self):
        scores = ScoreSet([0.9, 0.8, 0.7, 0.3], [0.6, 0.2, 0.1, 0.05])
        assert abs(met.compute_eer(scores) - 0.25) < 1e-12

    def test_matches_oracle_on_200_random_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            targets, nontargets = random_score_set(rng)
            got = met.compute_eer(ScoreSet(targets, nontargets))
            assert abs(got - eer_oracle(targets, nontargets)) < 1e-9


class TestMinDcf:
    def test_separable_is_zero(self):
        assert met.compute_min_dcf(ScoreSet([0.9, 0.8], [0.1, 0.2]), DCF08) == 0.0

    def test_identical_scores_hit_reject_all_bound(self):
        got = met.compute_min_dcf(ScoreSet([0.5, 0.5], [0.5, 0.5]), DCF08)
        assert abs(got - 1.0) < 1e-12

    def test_worked_example_matches_oracle(self):
        targets = [0.9, 0.8, 0.7, 0.3]
        nontargets = [0.6, 0.2, 0.1, 0.05]
        got = met.compute_min_dcf(ScoreSet(targets, nontargets), DCF08)
        assert abs(got - min_dcf_oracle(targets, nontargets, DCF08)) < 1e-12

    def test_matches_oracle_on_200_random_sets(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            targets, nontargets = random_score_set(rng)
            for params in (DCF08, DCF10):
                got = met.compute_min_dcf(ScoreSet(targets, nontargets), params)
                assert abs(got - min_dcf_oracle(targets, nontargets, params)) < 1e-9

    def test_bounded_by_one(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            targets, nontargets = random_score_set(rng)
            for params in (DCF08, DCF10):
                assert met.compute_min_dcf(ScoreSet(targets, nontargets), params) <= 1 + 1e-12

    def test_preset_parameters(self):
        assert (DCF08.c_miss, DCF08.c_fa, DCF08.p_target) == (10.0, 1.0, 0.01)
        assert (DCF10.c_miss, DCF10.c_fa, DCF10.p_target) == (1.0, 1.0, 0.001)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            DcfParams(c_miss=0.0, c_fa=1.0, p_target=0.5)
        with pytest.raises(ValueError):
            DcfParams(c_miss=1.0, c_fa=1.0, p_target=1.0)


class TestMonotoneInvariance:
    def test_increasing_transform_leaves_metrics_unchanged(self):
        rng = np.random.default_rng(5)
        transforms = [np.tanh, lambda s: 3.0 * s + 1.0, lambda s: s ** 3]
        for _ in range(30):
            targets, nontargets = random_score_set(rng)
            base = ScoreSet(targets, nontargets)
            eer = met.compute_eer(base)
            dcf = met.compute_min_dcf(base, DCF08)
            for f in transforms:
                mapped = ScoreSet(f(np.asarray(targets)), f(np.asarray(nontargets)))
                assert abs(met.compute_eer(mapped) - eer) < 1e-12
                assert abs(met.compute_min_dcf(mapped, DCF08) - dcf) < 1e-12


class TestReport:
    def test_keys(self):
        report = met.metrics_report(ScoreSet([0.9, 0.8], [0.1, 0.2]))
        assert set(report) == {"eer", "dcf08", "dcf10"}

    def test_from_scored_trials(self):
        from clspool.verification import Trial
        scored = [(Trial("e", "a", "target"), 0.9), (Trial("e", "b", "nontarget"), 0.1)]
        ss = ScoreSet.from_scored_trials(scored)
        assert ss.target_scores.tolist() == [0.9]
        assert ss.nontarget_scores.tolist() == [0.1]

    def test_from_score_file_round_trip(self, tmp_path):
        from clspool import verification as ver
        trials = [ver.Trial("e", "a", "target"), ver.Trial("e", "b", "nontarget")]
        scored = [(trials[0], 0.875), (trials[1], -0.25)]
        ver.write_trials(tmp_path / "trials.txt", trials)
        ver.write_scores(tmp_path / "scores.txt", scored)
        ss = ScoreSet.from_score_file(tmp_path / "scores.txt", tmp_path / "trials.txt")
        assert ss.target_scores.tolist() == [0.875]
        assert ss.nontarget_scores.tolist() == [-0.25]
        ver.write_trials(tmp_path / "other.txt", [ver.Trial("x", "y", "target")])
        with pytest.raises(KeyError):
            ScoreSet.from_score_file(tmp_path / "scores.txt", tmp_path / "other.txt")
