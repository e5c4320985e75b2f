import math

import numpy as np
import pytest

from facevoice.numerics import Rng
from facevoice.stats import (
    SampleSet, anova_oneway, f_sf, one_sample_t, student_t_quantile,
    student_t_sf_two_sided, summarize_experiment, t_from_moments, tukey_hsd,
)


def t_density(x, df):
    return (math.gamma((df + 1) / 2)
            / (math.sqrt(df * math.pi) * math.gamma(df / 2))
            * (1 + x * x / df) ** (-(df + 1) / 2))


def t_sf_by_quadrature(t, df, n_panels=40_000, cutoff=400.0):
    """Two-sided tail mass by composite Simpson integration of the density.

    Independent oracle: integrates the central region on a fine grid and
    subtracts from 1.
    """
    a, b = -abs(t), abs(t)
    h = (b - a) / n_panels
    xs = [a + i * h for i in range(n_panels + 1)]
    weights = [1] + [4 if i % 2 else 2 for i in range(1, n_panels)] + [1]
    central = h / 3 * sum(w * t_density(x, df) for w, x in zip(weights, xs))
    return 1.0 - central


class TestStudentT:
    @pytest.mark.parametrize("df", [5, 30, 100])
    def test_p_values_match_quadrature(self, df):
        for t in (0.5, 1.3, 2.0, 3.7):
            assert student_t_sf_two_sided(t, df) == pytest.approx(
                t_sf_by_quadrature(t, df), abs=1e-6)

    def test_zero_t_gives_one(self):
        assert student_t_sf_two_sided(0.0, 10) == 1.0

    def test_quantile_round_trip(self):
        for df in (5, 19, 80):
            q = student_t_quantile(0.995, df)
            assert student_t_sf_two_sided(q, df) == pytest.approx(0.01,
                                                                  abs=1e-9)

    def test_against_scipy(self):
        from scipy.stats import t as t_dist
        for df in (3, 12, 60, 250):
            for t in (0.2, 1.1, 2.8, 5.0):
                assert student_t_sf_two_sided(t, df) == pytest.approx(
                    2 * float(t_dist.sf(t, df)), rel=1e-9)


class TestOneSampleT:
    def test_table_rows_reproduce_published_t(self):
        rows = [
            (0.714, 0.136, 70, 13.17),
            (0.650, 0.130, 70, 9.65),
            (0.584, 0.138, 73, 5.20),
            (0.552, 0.122, 75, 3.69),
        ]
        for mean, sd, n, expect in rows:
            res = t_from_moments(mean, sd, n, mu0=0.5)
            assert res.statistic == pytest.approx(expect, abs=0.02)
            assert res.p_value < 0.001
            assert 0.001 in res.significant_at

    def test_exact_mean_zero_t(self):
        res = one_sample_t([0.4, 0.5, 0.6], mu0=0.5)
        assert res.statistic == 0.0
        assert res.p_value == 1.0

    def test_zero_variance_errors(self):
        with pytest.raises(ValueError):
            one_sample_t([0.5, 0.5, 0.5], mu0=0.4)

    def test_moments_path_matches_sample_path(self):
        r = Rng(5)
        vals = 0.5 + 0.1 * r.normal(40)
        res = one_sample_t(vals, 0.5)
        res2 = t_from_moments(float(np.mean(vals)),
                              float(np.std(vals, ddof=1)), len(vals), 0.5)
        assert res.statistic == pytest.approx(res2.statistic, rel=1e-12)


def _exact_moment_sample(mean, sd, n, seed):
    """Normal draws affinely adjusted to hit the target moments exactly."""
    z = Rng(seed).normal(n)
    z = (z - z.mean()) / z.std(ddof=1)
    return mean + sd * z


class TestAnova:
    def test_identical_constant_groups_f_zero(self):
        groups = [[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]]
        res = anova_oneway(groups)
        assert res.statistic == 0.0
        assert res.p_value == 1.0

    def test_two_groups_f_equals_t_squared(self):
        """Classical identity: equal-size two-group ANOVA F = pooled t^2."""
        a = _exact_moment_sample(0.3, 0.1, 25, seed=1)
        b = _exact_moment_sample(0.5, 0.12, 25, seed=2)
        res = anova_oneway([a, b])
        # pooled two-sample t
        sp2 = (((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()) / 48
        t = (a.mean() - b.mean()) / math.sqrt(sp2 * (1 / 25 + 1 / 25))
        assert res.statistic == pytest.approx(t * t, rel=1e-10)

    def test_published_group_moments_give_large_f(self):
        """Groups rebuilt from the study's published means/sds/ns must land
        near the reported omnibus F and clear the 0.001 criterion."""
        groups = [
            _exact_moment_sample(0.714, 0.136, 70, seed=11),
            _exact_moment_sample(0.650, 0.130, 70, seed=12),
            _exact_moment_sample(0.584, 0.138, 73, seed=13),
            _exact_moment_sample(0.552, 0.122, 75, seed=14),
        ]
        res = anova_oneway(groups)
        assert res.df == (3, 284)
        assert res.statistic == pytest.approx(21.36, abs=1.0)
        assert res.p_value < 0.001

    def test_shift_invariance(self):
        r = Rng(3)
        groups = [list(0.5 + 0.1 * r.normal(12)) for _ in range(3)]
        base = anova_oneway(groups).statistic
        shifted = anova_oneway([[v + 17.3 for v in g] for g in groups]).statistic
        assert shifted == pytest.approx(base, rel=1e-9)

    def test_against_scipy(self):
        from scipy.stats import f_oneway
        r = Rng(7)
        groups = [list(0.5 + 0.1 * r.normal(10 + 3 * i)) for i in range(4)]
        res = anova_oneway(groups)
        ref = f_oneway(*groups)
        assert res.statistic == pytest.approx(float(ref.statistic), rel=1e-10)
        assert res.p_value == pytest.approx(float(ref.pvalue), rel=1e-7)


class TestTukey:
    def test_identical_groups_nothing_significant(self):
        g = _exact_moment_sample(0.5, 0.1, 20, seed=5)
        res = tukey_hsd([list(g), list(g), list(g)], alpha=0.05, n_draws=20_000)
        assert not res.significant.any()

    def test_far_separated_groups_significant(self):
        a = _exact_moment_sample(0.0, 0.1, 20, seed=6)
        b = _exact_moment_sample(10.0, 0.1, 20, seed=7)
        res = tukey_hsd([list(a), list(b)], alpha=0.05, n_draws=20_000)
        assert res.significant[0, 1]
        assert res.p_values[0, 1] < 0.001

    def test_monte_carlo_determinism(self):
        a = _exact_moment_sample(0.45, 0.1, 15, seed=8)
        b = _exact_moment_sample(0.55, 0.1, 15, seed=9)
        r1 = tukey_hsd([list(a), list(b)], seed=42, n_draws=20_000)
        r2 = tukey_hsd([list(a), list(b)], seed=42, n_draws=20_000)
        assert np.array_equal(r1.p_values, r2.p_values)

    def test_p_monotone_in_mean_gap(self):
        base = _exact_moment_sample(0.0, 1.0, 20, seed=10)
        ps = []
        for gap in (0.5, 1.0, 2.0, 4.0):
            shifted = [v + gap for v in base]
            res = tukey_hsd([list(base), shifted], seed=3, n_draws=30_000)
            ps.append(res.p_values[0, 1])
        assert ps == sorted(ps, reverse=True)

    def test_published_study_pattern(self):
        """The four study conditions: adjacent pairs 1-2 and 2-3 differ at
        alpha=0.05, the two hardest conditions 3-4 do not."""
        groups = [
            _exact_moment_sample(0.714, 0.136, 70, seed=11),
            _exact_moment_sample(0.650, 0.130, 70, seed=12),
            _exact_moment_sample(0.584, 0.138, 73, seed=13),
            _exact_moment_sample(0.552, 0.122, 75, seed=14),
        ]
        res = tukey_hsd([list(g) for g in groups], alpha=0.05, seed=1)
        assert res.significant[0, 1]
        assert res.significant[1, 2]
        assert not res.significant[2, 3]

    def test_against_scipy_studentized_range(self):
        from scipy.stats import studentized_range
        a = _exact_moment_sample(0.40, 0.1, 30, seed=15)
        b = _exact_moment_sample(0.47, 0.1, 30, seed=16)
        c = _exact_moment_sample(0.55, 0.1, 30, seed=17)
        res = tukey_hsd([list(a), list(b), list(c)], seed=2, n_draws=200_000)
        for i in range(3):
            for j in range(i + 1, 3):
                ref = float(studentized_range.sf(res.q[i, j], 3, 87))
                assert res.p_values[i, j] == pytest.approx(ref, abs=0.01)


class TestSummarize:
    def test_single_perfect_participant(self):
        s = summarize_experiment({"p1": [True] * 16})
        assert s.mean == 1.0
        assert s.n == 1

    def test_balanced_pair_t_zero(self):
        s = summarize_experiment({"p1": [True] * 12 + [False] * 4,
                                  "p2": [True] * 4 + [False] * 12})
        assert s.mean == 0.5
        assert s.t == 0.0

    def test_unanimous_perfect_group(self):
        s = summarize_experiment({f"p{i}": [True] * 16 for i in range(8)})
        assert s.mean == 1.0
        assert s.t == math.inf
        assert 0.001 in s.significant_at

    def test_table_row_scale_reconstruction(self):
        """70 participants with 16-trial outcome lists whose accuracies
        approximate mean .714 / sd .136 summarize to t near 13.17."""
        target = _exact_moment_sample(0.714, 0.136, 70, seed=20)
        responses = {}
        for i, v in enumerate(target):
            k = int(round(np.clip(v, 0.0, 1.0) * 16))
            responses[f"p{i}"] = [True] * k + [False] * (16 - k)
        s = summarize_experiment(responses)
        # summarize's t must equal the t of its own realized moments...
        ref = t_from_moments(s.mean, s.sd, s.n, 0.5)
        assert s.t == pytest.approx(ref.statistic, rel=1e-12)
        # ...and sit near the published value despite 1/16 quantization
        assert s.t == pytest.approx(13.17, abs=0.8)
        assert s.p_value < 0.001

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            summarize_experiment({})
        with pytest.raises(ValueError, match="p1"):
            summarize_experiment({"p1": []})


class TestSampleSet:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SampleSet("x", [0.5])
        with pytest.raises(ValueError):
            SampleSet("x", [0.5, 1.5])
        s = SampleSet("ok", [0.4, 0.6])
        assert one_sample_t(s, 0.5).statistic == 0.0
