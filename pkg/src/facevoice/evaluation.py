"""Two-way forced matching with demographic grouping, cross-modal recall@K,
per-identity difficulty, and embedding export."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import embed, score

GROUPING_MODES = ("none", "G", "E", "GE", "GEFA")

# manifest fields that must agree between the two candidates, per mode
_CONSTRAINED_FIELDS = {
    "none": (),
    "G": ("gender",),
    "E": ("ethnicity",),
    "GE": ("gender", "ethnicity"),
    "GEFA": ("gender", "ethnicity", "fluency", "age_group"),
}


class GroupingError(ValueError):
    pass


@dataclass(frozen=True)
class Grouping:
    """Demographic constraint between the two candidates of a trial.

    mode GEFA additionally restricts every participant clip to gefa_target,
    a (gender, ethnicity, fluency, age_group) tuple; a None entry leaves
    that attribute free at the population level (the within-pair equality
    still applies).
    """
    mode: str = "none"
    gefa_target: tuple | None = None

    def __post_init__(self):
        if self.mode not in GROUPING_MODES:
            raise GroupingError(f"unknown grouping mode {self.mode!r}")
        if (self.gefa_target is not None) != (self.mode == "GEFA"):
            raise GroupingError("gefa_target is required iff mode='GEFA'")
        if self.gefa_target is not None and len(self.gefa_target) != 4:
            raise GroupingError(
                "gefa_target must be (gender, ethnicity, fluency, age_group)")

    @property
    def fields(self):
        return _CONSTRAINED_FIELDS[self.mode]

    def admits(self, rec):
        """Population-level restriction (only GEFA restricts)."""
        if self.mode != "GEFA":
            return True
        target = dict(zip(("gender", "ethnicity", "fluency", "age_group"),
                          self.gefa_target))
        return all(v is None or getattr(rec, k) == v for k, v in target.items())

    def compatible(self, rec_a, rec_b):
        return all(getattr(rec_a, f) == getattr(rec_b, f) for f in self.fields)


@dataclass
class MatchTrial:
    probe_modality: str
    probe_clip: str
    probe_identity: str
    true_clip: str
    true_identity: str
    false_clip: str
    false_identity: str
    grouping: Grouping


@dataclass
class EvalReport:
    accuracy: float
    n_trials: int
    n_ties: int
    per_identity_difficulty: dict
    seed: int | None = None


def make_match_trials(manifest, test_identities, grouping, rng,
                      direction="V2F", trials_per_probe=8):
    """Forced-choice trials over the test split.

    For every test clip of the probe modality, trials_per_probe trials are
    drawn: a true candidate from the probe's identity and a false candidate
    from a different identity whose constrained attributes equal the true
    candidate's. Raises GroupingError when a constraint group has no
    second identity to draw from.
    """
    test = set(test_identities)
    probe_mod = "voice" if direction == "V2F" else "face"
    cand_mod = "face" if direction == "V2F" else "voice"

    probes = [r for r in manifest.records_with(probe_mod, test)
              if grouping.admits(r)]
    candidates = [r for r in manifest.records_with(cand_mod, test)
                  if grouping.admits(r)]
    cand_by_identity = {}
    for r in candidates:
        cand_by_identity.setdefault(r.identity_id, []).append(r)
    if len(cand_by_identity) < 2:
        raise GroupingError(
            f"grouping {grouping.mode}: fewer than 2 candidate identities")

    probes = [p for p in probes if p.identity_id in cand_by_identity]
    trials = []
    for probe in sorted(probes, key=lambda r: r.clip_id):
        own = cand_by_identity[probe.identity_id]
        for _ in range(trials_per_probe):
            true_rec = own[rng.randint(len(own))]
            foils = [r for r in candidates
                     if r.identity_id != probe.identity_id
                     and grouping.compatible(true_rec, r)]
            if not foils:
                group = {f: getattr(true_rec, f) for f in grouping.fields}
                raise GroupingError(
                    f"grouping {grouping.mode}: no second identity in group "
                    f"{group or '(all)'} for candidate {true_rec.clip_id!r}")
            false_rec = foils[rng.randint(len(foils))]
            trials.append(MatchTrial(
                probe_modality=probe_mod,
                probe_clip=probe.clip_id,
                probe_identity=probe.identity_id,
                true_clip=true_rec.clip_id,
                true_identity=true_rec.identity_id,
                false_clip=false_rec.clip_id,
                false_identity=false_rec.identity_id,
                grouping=grouping,
            ))
    return trials


def _trial_score(params, store, trial, cand_clip, score_fn):
    cand_mod = "face" if trial.probe_modality == "voice" else "voice"
    probe_feat = store.get(trial.probe_clip, trial.probe_modality)
    cand_feat = store.get(cand_clip, cand_mod)
    if trial.probe_modality == "voice":
        face_feat, voice_feat = cand_feat, probe_feat
    else:
        face_feat, voice_feat = probe_feat, cand_feat
    if score_fn is not None:
        return score_fn(face_feat, voice_feat)
    return score(params, face_feat, voice_feat)


def run_matching(params, trials, store, score_fn=None, seed=None):
    """Score every trial; correct iff the true candidate outranks the false
    one, exact ties counting half. Difficulty per identity is its fraction
    correct across trials where it appears as either candidate."""
    if not trials:
        raise ValueError("no trials")
    points = 0.0
    ties = 0
    id_points = {}
    id_counts = {}
    for trial in trials:
        s_true = _trial_score(params, store, trial, trial.true_clip, score_fn)
        s_false = _trial_score(params, store, trial, trial.false_clip, score_fn)
        if s_true > s_false:
            p = 1.0
        elif s_true < s_false:
            p = 0.0
        else:
            p = 0.5
            ties += 1
        points += p
        for ident in (trial.true_identity, trial.false_identity):
            id_points[ident] = id_points.get(ident, 0.0) + p
            id_counts[ident] = id_counts.get(ident, 0) + 1
    difficulty = {i: id_points[i] / id_counts[i] for i in id_points}
    return EvalReport(accuracy=points / len(trials), n_trials=len(trials),
                      n_ties=ties, per_identity_difficulty=difficulty,
                      seed=seed)


def recall_at_k(params, manifest, identities, store, set_size, ks,
                rng, repeats=10, direction="V2F", score_fn=None):
    """Averaged recall@K over seeded gallery draws.

    Each draw samples set_size identities, one clip per identity per
    modality; every probe-modality item queries the full other-modality
    gallery and scores a hit when its identity ranks within K.
    Returns {K: recall percent}.
    """
    eligible = [i for i in sorted(set(identities))
                if any(r.has_modality("face") for r in manifest.records_for(i))
                and any(r.has_modality("voice") for r in manifest.records_for(i))]
    if set_size > len(eligible):
        raise ValueError(
            f"set_size {set_size} exceeds {len(eligible)} identities with "
            f"both modalities")
    ks = sorted(ks)
    if ks[0] < 1 or ks[-1] > set_size:
        raise ValueError(f"ks must lie in [1, set_size={set_size}]")

    probe_mod = "voice" if direction == "V2F" else "face"
    cand_mod = "face" if direction == "V2F" else "voice"
    hits = {k: 0 for k in ks}
    total = 0
    for _ in range(repeats):
        pool = list(eligible)
        rng.shuffle(pool)
        gallery_ids = pool[:set_size]
        probe_feats = []
        cand_feats = []
        for ident in gallery_ids:
            recs = manifest.records_for(ident)
            probe_recs = [r for r in recs if r.has_modality(probe_mod)]
            cand_recs = [r for r in recs if r.has_modality(cand_mod)]
            probe_rec = probe_recs[rng.randint(len(probe_recs))]
            cand_rec = cand_recs[rng.randint(len(cand_recs))]
            probe_feats.append(store.get(probe_rec.clip_id, probe_mod))
            cand_feats.append(store.get(cand_rec.clip_id, cand_mod))
        for qi in range(set_size):
            scores = np.empty(set_size)
            for ci in range(set_size):
                if probe_mod == "voice":
                    face, voice = cand_feats[ci], probe_feats[qi]
                else:
                    face, voice = probe_feats[qi], cand_feats[ci]
                scores[ci] = (score_fn(face, voice) if score_fn is not None
                              else score(params, face, voice))
            # rank of the true identity: 1 + number of strictly better items
            rank = 1 + int(np.sum(scores > scores[qi]))
            for k in ks:
                if rank <= k:
                    hits[k] += 1
            total += 1
    return {k: 100.0 * hits[k] / total for k in ks}


def export_embeddings(params, manifest, store, out_path, identities=None):
    """One JSON line per (clip, modality) with the embedding and every
    annotation, for external projection tools. Returns the row count."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    keep = None if identities is None else set(identities)
    n = 0
    with out_path.open("w", encoding="utf-8") as f:
        for rec in manifest.records:
            if keep is not None and rec.identity_id not in keep:
                continue
            for modality in ("face", "voice"):
                if not rec.has_modality(modality):
                    continue
                e = embed(params, modality, store.get(rec.clip_id, modality))
                row = {
                    "clip_id": rec.clip_id,
                    "identity_id": rec.identity_id,
                    "modality": modality,
                    "embedding": [float(v) for v in e],
                    "gender": rec.gender,
                    "ethnicity": rec.ethnicity,
                    "fluency": rec.fluency,
                    "age_group": rec.age_group,
                    "pitch_hz": rec.pitch_hz,
                    "loudness": rec.loudness,
                    "facial_attrs": rec.facial_attrs,
                }
                f.write(json.dumps(row) + "\n")
                n += 1
    return n
