"""Study statistics: one-sample t tests against chance, one-way ANOVA,
Tukey HSD via a seeded Monte Carlo studentized-range distribution, and
per-experiment summary rows.

All computations run in float64. Tail probabilities come from the
regularized incomplete beta in numerics (no platform stats libraries).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, reg_inc_beta

SIGNIFICANCE_LEVELS = (0.05, 0.01, 0.001)


@dataclass
class SampleSet:
    """Labelled per-participant accuracies."""
    label: str
    values: list

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValueError(f"{self.label!r}: need at least 2 values")
        if any(not (0.0 <= v <= 1.0) for v in self.values):
            raise ValueError(f"{self.label!r}: accuracies must lie in [0, 1]")


@dataclass
class TestResult:
    statistic: float
    df: object
    p_value: float
    significant_at: list = field(default_factory=list)


def _values(group):
    vals = np.asarray(group.values if isinstance(group, SampleSet) else group,
                      dtype=np.float64)
    if vals.ndim != 1 or len(vals) < 2:
        raise ValueError("each group needs at least 2 observations")
    return vals


def _attained(p):
    return [a for a in SIGNIFICANCE_LEVELS if p < a]


def student_t_sf_two_sided(t, df):
    """P(|T_df| >= |t|) via the incomplete beta."""
    if df <= 0:
        raise ValueError("df must be positive")
    t = float(t)
    if not math.isfinite(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return reg_inc_beta(x, df / 2.0, 0.5)


def f_sf(f, df1, df2):
    """P(F_{df1,df2} >= f)."""
    if f < 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    x = df2 / (df2 + df1 * f)
    return reg_inc_beta(x, df2 / 2.0, df1 / 2.0)


def student_t_quantile(p, df):
    """Inverse CDF of Student t for p in (0.5, 1), by bisection."""
    if not (0.5 < p < 1.0):
        raise ValueError("p must be in (0.5, 1)")
    tail = 2.0 * (1.0 - p)  # two-sided survival mass at the quantile
    lo, hi = 0.0, 1.0
    while student_t_sf_two_sided(hi, df) > tail:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("t quantile bisection failed to bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if student_t_sf_two_sided(mid, df) > tail:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def one_sample_t(sample, mu0):
    """Two-sided one-sample t test of mean == mu0 (sd uses n-1)."""
    vals = _values(sample)
    n = len(vals)
    sd = float(np.std(vals, ddof=1))
    if sd == 0.0:
        raise ValueError("zero variance sample")
    t = (float(np.mean(vals)) - mu0) / (sd / math.sqrt(n))
    p = student_t_sf_two_sided(t, n - 1)
    return TestResult(statistic=t, df=n - 1, p_value=p,
                      significant_at=_attained(p))


def t_from_moments(mean, sd, n, mu0=0.5):
    """t statistic and p from summary moments (for published-table checks)."""
    if sd <= 0 or n < 2:
        raise ValueError("need sd > 0 and n >= 2")
    t = (mean - mu0) / (sd / math.sqrt(n))
    return TestResult(statistic=t, df=n - 1,
                      p_value=student_t_sf_two_sided(t, n - 1),
                      significant_at=_attained(student_t_sf_two_sided(t, n - 1)))


def anova_oneway(groups):
    """One-way fixed-effects ANOVA: F with (k-1, N-k) df.

    A fully degenerate dataset (zero between- and within-group variance)
    reports F = 0.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    data = [_values(g) for g in groups]
    k = len(data)
    N = sum(len(d) for d in data)
    grand = sum(d.sum() for d in data) / N
    ss_between = sum(len(d) * (d.mean() - grand) ** 2 for d in data)
    ss_within = sum(((d - d.mean()) ** 2).sum() for d in data)
    df1, df2 = k - 1, N - k
    ms_between = ss_between / df1
    ms_within = ss_within / df2
    if ms_within == 0.0:
        f = 0.0 if ms_between == 0.0 else math.inf
    else:
        f = ms_between / ms_within
    p = f_sf(f, df1, df2)
    return TestResult(statistic=f, df=(df1, df2), p_value=p,
                      significant_at=_attained(p))


def _studentized_range_samples(k, df, n_draws, seed, chunk=2000):
    """Monte Carlo draws of the studentized range q = (max-min)/s for k
    groups and df error degrees of freedom."""
    rng = Rng(seed)
    out = np.empty(n_draws)
    done = 0
    while done < n_draws:
        c = min(chunk, n_draws - done)
        z = rng.normal((c, k))
        r = z.max(axis=1) - z.min(axis=1)
        # chi-square via sum of squared normals keeps the generator simple
        s2 = (rng.normal((c, df)) ** 2).sum(axis=1) / df
        out[done:done + c] = r / np.sqrt(s2)
        done += c
    return out


@dataclass
class TukeyResult:
    labels: list
    q: np.ndarray
    p_values: np.ndarray
    significant: np.ndarray
    alpha: float
    n_draws: int
    seed: int


def tukey_hsd(groups, alpha=0.05, n_draws=100_000, seed=0, labels=None):
    """Tukey-Kramer pairwise comparisons after a one-way layout.

    p-values come from seeded Monte Carlo of the studentized range with
    k groups and N-k degrees of freedom; adequate near alpha=0.05 at the
    default draw count.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 groups")
    if labels is None:
        labels = [g.label if isinstance(g, SampleSet) else f"group{i}"
                  for i, g in enumerate(groups)]
    data = [_values(g) for g in groups]
    k = len(data)
    N = sum(len(d) for d in data)
    df = N - k
    ms_within = sum(((d - d.mean()) ** 2).sum() for d in data) / df
    if ms_within == 0.0:
        raise ValueError("zero within-group variance")
    samples = _studentized_range_samples(k, df, n_draws, seed)

    q = np.zeros((k, k))
    p = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            se = math.sqrt(ms_within / 2.0 * (1.0 / len(data[i])
                                              + 1.0 / len(data[j])))
            qij = abs(data[i].mean() - data[j].mean()) / se
            pij = float(np.mean(samples >= qij))
            q[i, j] = q[j, i] = qij
            p[i, j] = p[j, i] = pij
    np.fill_diagonal(p, 1.0)
    sig = p < alpha
    np.fill_diagonal(sig, False)
    return TukeyResult(labels=list(labels), q=q, p_values=p, significant=sig,
                       alpha=alpha, n_draws=n_draws, seed=seed)


@dataclass
class ExperimentSummary:
    """One study row: participant count, accuracy moments, t vs chance."""
    n: int
    mean: float
    sd: float
    t: float
    df: int
    p_value: float
    significant_at: list
    per_participant: dict


def summarize_experiment(responses_by_participant, mu0=0.5):
    """Aggregate scored-trial outcomes into a study summary row.

    responses_by_participant maps participant id to a list of per-trial
    correctness flags (scored, non-control trials only).
    """
    if not responses_by_participant:
        raise ValueError("no eligible participants")
    accuracies = {}
    for pid, outcomes in responses_by_participant.items():
        if not outcomes:
            raise ValueError(f"participant {pid!r} has no scored trials")
        accuracies[pid] = float(np.mean([1.0 if o else 0.0 for o in outcomes]))
    vals = list(accuracies.values())
    mean = float(np.mean(vals))
    if len(vals) < 2:
        return ExperimentSummary(n=len(vals), mean=mean, sd=0.0,
                                 t=math.nan, df=0, p_value=math.nan,
                                 significant_at=[], per_participant=accuracies)
    sd = float(np.std(vals, ddof=1))
    if sd == 0.0:
        # unanimous participants: the t statistic degenerates to its limit
        if mean == mu0:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, mean - mu0), 0.0
        return ExperimentSummary(n=len(vals), mean=mean, sd=0.0,
                                 t=t, df=len(vals) - 1, p_value=p,
                                 significant_at=_attained(p),
                                 per_participant=accuracies)
    res = one_sample_t(vals, mu0)
    return ExperimentSummary(n=len(vals), mean=mean,
                             sd=float(np.std(vals, ddof=1)),
                             t=res.statistic, df=res.df, p_value=res.p_value,
                             significant_at=res.significant_at,
                             per_participant=accuracies)
