"""Linear attribute probes over learned embeddings.

Each probe trains a one-vs-all linear classifier (L2-regularized hinge
loss, deterministic full-batch subgradient descent) on a balanced,
identity-disjoint holdout split, and reports mean average precision over
repeated trials with a 99% t-interval plus a chance-overlap flag.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import embed
from .numerics import Rng
from .stats import student_t_quantile

CHANCE_BAND = (0.45, 0.55)


@dataclass
class ProbeSpec:
    attribute: str
    modality: str
    n_trials: int = 20
    holdout_fraction: float = 0.2
    epochs: int = 200
    lr: float = 0.1
    l2_penalty: float = 1e-3
    seed: int = 0


@dataclass
class ProbeResult:
    map_mean: float
    ci_halfwidth: float
    per_trial_aps: list
    chance_flagged: bool
    spec: ProbeSpec


def binarize_continuous(values, strategy="median_split"):
    """Discretize a continuous annotation; ties at a boundary go low.

    median_split gives {0,1}; quartiles gives {0,1,2,3} for one-vs-all use.
    """
    vals = np.asarray(values, dtype=np.float64)
    if len(np.unique(vals)) < 2:
        raise ValueError("constant input cannot be binarized")
    if strategy == "median_split":
        return (vals > np.median(vals)).astype(int)
    if strategy == "quartiles":
        qs = np.percentile(vals, [25, 50, 75])
        return np.sum(vals[:, None] > qs[None, :], axis=1).astype(int)
    raise ValueError(f"unknown strategy {strategy!r}")


def average_precision(scores, labels):
    """Mean of precision at each positive, ranked by descending score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if labels.sum() == 0:
        raise ValueError("no positives in ranking")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    return float(np.mean((hits / ranks)[ranked == 1]))


def _train_linear_svm(X, y, epochs, lr, l2_penalty):
    """Full-batch subgradient descent on mean hinge loss + l2/2 * |w|^2.

    y in {-1, +1}; the 1/t learning-rate decay makes the run deterministic.
    """
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    for t in range(1, epochs + 1):
        step = lr / t
        margins = y * (X @ w + b)
        viol = margins < 1.0
        grad_w = l2_penalty * w - (y[viol, None] * X[viol]).sum(axis=0) / n
        grad_b = -y[viol].sum() / n
        w -= step * grad_w
        b -= step * grad_b
    return w, b


def _holdout_split(identities, rng, holdout_fraction):
    ids = sorted(set(identities))
    order = list(ids)
    rng.shuffle(order)
    n_hold = max(1, int(round(holdout_fraction * len(ids))))
    return set(order[:n_hold]), set(order[n_hold:])


def _balanced_indices(y, idx, rng):
    """Downsample the majority class among idx to the minority count."""
    pos = [i for i in idx if y[i] == 1]
    neg = [i for i in idx if y[i] == 0]
    n = min(len(pos), len(neg))
    rng.shuffle(pos)
    rng.shuffle(neg)
    return sorted(pos[:n] + neg[:n])


def run_probe(embeddings, labels, identities, spec):
    """Probe an embedding matrix against binary labels.

    embeddings: (n, d) array; labels: (n,) 0/1; identities: length-n ids
    used for identity-disjoint holdout splits.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if X.ndim != 2 or len(y) != len(X) or len(identities) != len(X):
        raise ValueError("embeddings, labels, identities must align")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("labels are single-class; probe undefined")
    for cls in (0, 1):
        if (y == cls).sum() < 10:
            raise ValueError(f"need >=10 samples of class {cls}, "
                             f"got {(y == cls).sum()}")

    root = Rng(spec.seed)
    aps = []
    for _ in range(spec.n_trials):
        trial_rng = root.spawn()
        for _attempt in range(100):
            hold_ids, train_ids = _holdout_split(identities, trial_rng,
                                                 spec.holdout_fraction)
            train_idx = [i for i, ident in enumerate(identities)
                         if ident in train_ids]
            hold_idx = [i for i, ident in enumerate(identities)
                        if ident in hold_ids]
            train_ok = len(set(y[train_idx])) == 2
            hold_ok = len(hold_idx) > 0 and y[hold_idx].sum() > 0
            if train_ok and hold_ok:
                break
        else:
            raise ValueError("could not draw a holdout split with both "
                             "classes in training and a positive held out")
        train_idx = _balanced_indices(y, train_idx, trial_rng)
        Xt = X[train_idx]
        yt = np.where(y[train_idx] == 1, 1.0, -1.0)
        w, b = _train_linear_svm(Xt, yt, spec.epochs, spec.lr, spec.l2_penalty)
        decisions = X[hold_idx] @ w + b
        aps.append(average_precision(decisions, y[hold_idx]))

    map_mean = float(np.mean(aps))
    sd = float(np.std(aps, ddof=1)) if len(aps) > 1 else 0.0
    if sd > 0.0:
        tq = student_t_quantile(0.995, len(aps) - 1)  # 99% two-sided
        ci = tq * sd / math.sqrt(len(aps))
    else:
        ci = 0.0
    lo, hi = map_mean - ci, map_mean + ci
    flagged = lo <= CHANCE_BAND[1] and hi >= CHANCE_BAND[0]
    return ProbeResult(map_mean=map_mean, ci_halfwidth=ci,
                       per_trial_aps=aps, chance_flagged=flagged, spec=spec)


def attribute_labels(records, attribute):
    """Resolve a probe attribute name to (record_indices, labels).

    Supported names: "gender" (positive f) or "gender:<v>"; "fluency"
    (positive Y) or "fluency:<v>"; "age:<bucket>"; "ethnicity:<code>";
    "attr:<facial attribute>"; "pitch_median"; "loudness_median".
    Records missing the underlying annotation are dropped.
    """
    name, _, value = attribute.partition(":")
    if name == "gender":
        value = value or "f"
        pairs = [(i, int(r.gender == value)) for i, r in enumerate(records)]
    elif name == "fluency":
        value = value or "Y"
        pairs = [(i, int(r.fluency == value)) for i, r in enumerate(records)]
    elif name == "age":
        if not value:
            raise ValueError("age probe needs a bucket, e.g. age:30s")
        pairs = [(i, int(r.age_group == value)) for i, r in enumerate(records)]
    elif name == "ethnicity":
        if not value:
            raise ValueError("ethnicity probe needs a code, e.g. ethnicity:5")
        pairs = [(i, int(r.ethnicity == int(value))) for i, r in enumerate(records)]
    elif name == "attr":
        if not value:
            raise ValueError("facial-attribute probe needs a name, e.g. attr:Chubby")
        pairs = [(i, int(r.facial_attrs[value]))
                 for i, r in enumerate(records)
                 if r.facial_attrs and value in r.facial_attrs]
    elif name in ("pitch_median", "loudness_median"):
        fieldname = "pitch_hz" if name == "pitch_median" else "loudness"
        idx = [i for i, r in enumerate(records)
               if getattr(r, fieldname) is not None]
        if not idx:
            raise ValueError(f"no records carry {fieldname}")
        vals = [getattr(records[i], fieldname) for i in idx]
        labs = binarize_continuous(vals, "median_split")
        pairs = list(zip(idx, (int(v) for v in labs)))
    else:
        raise ValueError(f"unknown probe attribute {attribute!r}")
    if not pairs:
        raise ValueError(f"no records carry attribute {attribute!r}")
    indices, labels = zip(*pairs)
    return list(indices), list(labels)


def probe_dataset(params, manifest, store, attribute, modality,
                  identities=None):
    """Assemble (embeddings, labels, identity ids) for run_probe."""
    keep = None if identities is None else set(identities)
    records = [r for r in manifest.records
               if r.has_modality(modality)
               and (keep is None or r.identity_id in keep)]
    indices, labels = attribute_labels(records, attribute)
    X = np.stack([embed(params, modality,
                        store.get(records[i].clip_id, modality))
                  for i in indices])
    ids = [records[i].identity_id for i in indices]
    return X, np.asarray(labels), ids
