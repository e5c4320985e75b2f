"""Study protocol logic: experiment specs, pairing pools, per-session trial
sequences, control evaluation, exclusion rules, and aggregation.

A session is 20 sequential forced-choice trials: 16 scored pairs (8 male,
8 female), two consistency controls that repeat an earlier trial's stimuli,
and two correctness controls that pair a male with a female model. Sessions
are a pure function of (service seed, experiment, participant demographics).
"""

import hashlib
import json
from dataclasses import dataclass, field, asdict

from ..datamodel import AGE_GROUPS, ETHNICITIES, FLUENCIES, GENDERS
from ..evaluation import Grouping
from ..numerics import Rng
from ..stats import summarize_experiment

EXPERIMENT_IDS = ("exp1_G", "exp2_GE", "exp3_GEFA", "exp4_GEFA_F2V")
N_SCORED = 16
N_CONTROLS = 4
# a consistency duplicate appears at least this many trials after its source
MIN_DUP_GAP = 5

DEMOGRAPHIC_FIELDS = ("gender", "ethnicity", "fluency", "age_group")


class StudyError(Exception):
    pass


class PoolExhausted(StudyError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    direction: str
    grouping: Grouping
    n_tasks: int = N_SCORED
    n_controls: int = N_CONTROLS


def build_experiments(gefa_ethnicity=5, gefa_fluency="Y", gefa_age_group="20s"):
    """The four standard experiment configurations.

    The GEFA conditions pin ethnicity/fluency/age for every stimulus while
    leaving gender free at the population level (pairs are same-gender, and
    a session still balances 8 male with 8 female pairs).
    """
    gefa = Grouping("GEFA", gefa_target=(None, gefa_ethnicity, gefa_fluency,
                                         gefa_age_group))
    return {
        "exp1_G": ExperimentSpec("exp1_G", "V2F", Grouping("G")),
        "exp2_GE": ExperimentSpec("exp2_GE", "V2F", Grouping("GE")),
        "exp3_GEFA": ExperimentSpec("exp3_GEFA", "V2F", gefa),
        "exp4_GEFA_F2V": ExperimentSpec("exp4_GEFA_F2V", "F2V", gefa),
    }


@dataclass
class Trial:
    kind: str                 # scored | consistency | correctness
    direction: str
    true_identity: str
    false_identity: str
    probe_asset: str
    true_asset: str
    false_asset: str
    true_slot: str            # A | B
    duplicate_of: int | None = None

    def chosen_identity(self, choice):
        if choice not in ("A", "B"):
            raise StudyError(f"choice must be A or B, got {choice!r}")
        return self.true_identity if choice == self.true_slot \
            else self.false_identity

    def payload(self, index, total, asset_base="/assets"):
        """Client-facing view: stimulus URLs only, no truth or kind fields."""
        a_asset = self.true_asset if self.true_slot == "A" else self.false_asset
        b_asset = self.false_asset if self.true_slot == "A" else self.true_asset
        probe_kind = "audio" if self.direction == "V2F" else "image"
        choice_kind = "image" if self.direction == "V2F" else "audio"
        return {
            "index": index,
            "total": total,
            "direction": self.direction,
            "probe": {"kind": probe_kind,
                      "url": f"{asset_base}/{self.probe_asset}"},
            "choices": {
                "A": {"kind": choice_kind, "url": f"{asset_base}/{a_asset}"},
                "B": {"kind": choice_kind, "url": f"{asset_base}/{b_asset}"},
            },
        }


@dataclass
class ResponseRecord:
    trial_index: int
    choice: str
    response_ms: int
    timestamp: float


@dataclass
class StudySession:
    session_id: str
    experiment_id: str
    demographics: dict
    trials: list
    cursor: int = 0
    completed: bool = False
    responses: dict = field(default_factory=dict)

    @property
    def completion_code(self):
        digest = hashlib.sha256(f"{self.session_id}/complete".encode()).hexdigest()
        return digest[:10].upper()


def validate_demographics(demographics):
    d = dict(demographics)
    if d.get("gender") not in GENDERS:
        raise StudyError(f"bad gender {d.get('gender')!r}")
    if int(d.get("ethnicity", 0)) not in ETHNICITIES:
        raise StudyError(f"bad ethnicity {d.get('ethnicity')!r}")
    if d.get("fluency") not in FLUENCIES:
        raise StudyError(f"bad fluency {d.get('fluency')!r}")
    if d.get("age_group") not in AGE_GROUPS:
        raise StudyError(f"bad age_group {d.get('age_group')!r}")
    d["ethnicity"] = int(d["ethnicity"])
    d["contributed_stimuli"] = bool(d.get("contributed_stimuli", False))
    return d


def derive_seed(*parts):
    """Stable 64-bit seed from a tuple of values (sha256-based)."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def session_seed(service_seed, experiment_id, demographics):
    """Same (seed, experiment, demographics) always yields the same
    trial sequence."""
    canon = json.dumps(
        {k: demographics[k] for k in DEMOGRAPHIC_FIELDS}, sort_keys=True)
    return derive_seed(service_seed, experiment_id, canon)


class PairingPools:
    """Global seeded pairing pools for one experiment.

    Eligible identities need both a face and a voice stimulus asset and must
    pass the experiment's population restriction. Every identity is paired
    with pairs_per_identity others drawn within the demographic constraint;
    pairs are keyed by gender for the 8-male/8-female session balance.
    """

    def __init__(self, manifest, spec, seed, pairs_per_identity=8):
        self.spec = spec
        self.pairs_per_identity = pairs_per_identity
        rng = Rng(seed)
        self.face_assets = {}
        self.voice_assets = {}
        self.identity_record = {}
        for ident in manifest.identities:
            recs = manifest.records_for(ident)
            if not spec.grouping.admits(recs[0]):
                continue
            faces = [r.face_asset_ref for r in recs if r.face_asset_ref]
            voices = [r.voice_asset_ref for r in recs if r.voice_asset_ref]
            if faces and voices:
                self.face_assets[ident] = faces
                self.voice_assets[ident] = voices
                self.identity_record[ident] = recs[0]

        self.pairs_by_gender = {"m": [], "f": []}
        idents = sorted(self.identity_record)
        for ident in idents:
            rec = self.identity_record[ident]
            partners = [q for q in idents if q != ident
                        and spec.grouping.compatible(rec,
                                                     self.identity_record[q])]
            if len(partners) < pairs_per_identity:
                raise PoolExhausted(
                    f"{spec.id}: identity {ident!r} has only {len(partners)} "
                    f"compatible partners, needs {pairs_per_identity}")
            rng.shuffle(partners)
            for q in partners[:pairs_per_identity]:
                self.pairs_by_gender[rec.gender].append((ident, q))

        # mixed-gender pool for correctness controls
        males = [i for i in idents if self.identity_record[i].gender == "m"]
        females = [i for i in idents if self.identity_record[i].gender == "f"]
        self.males = males
        self.females = females
        if not males or not females:
            raise PoolExhausted(
                f"{spec.id}: correctness controls need both genders, have "
                f"{len(males)} male / {len(females)} female identities")

    def _make_trial(self, rng, true_id, false_id, kind):
        direction = self.spec.direction
        if direction == "V2F":
            probe = rng.choice(self.voice_assets[true_id])
            true_asset = rng.choice(self.face_assets[true_id])
            false_asset = rng.choice(self.face_assets[false_id])
        else:
            probe = rng.choice(self.face_assets[true_id])
            true_asset = rng.choice(self.voice_assets[true_id])
            false_asset = rng.choice(self.voice_assets[false_id])
        slot = "A" if rng.randint(2) == 0 else "B"
        return Trial(kind=kind, direction=direction, true_identity=true_id,
                     false_identity=false_id, probe_asset=probe,
                     true_asset=true_asset, false_asset=false_asset,
                     true_slot=slot)

    def build_sequence(self, seed):
        """The 20-trial sequence for one session."""
        rng = Rng(seed)
        scored = []
        for gender in ("m", "f"):
            pool = list(self.pairs_by_gender[gender])
            if len(pool) < N_SCORED // 2:
                raise PoolExhausted(
                    f"{self.spec.id}: only {len(pool)} {gender} pairs in the "
                    f"pool, need {N_SCORED // 2}")
            rng.shuffle(pool)
            for true_id, false_id in pool[:N_SCORED // 2]:
                scored.append(self._make_trial(rng, true_id, false_id,
                                               "scored"))

        correctness = []
        for _ in range(2):
            male = rng.choice(self.males)
            female = rng.choice(self.females)
            true_id, false_id = (male, female) if rng.randint(2) == 0 \
                else (female, male)
            correctness.append(self._make_trial(rng, true_id, false_id,
                                                "correctness"))

        # two consistency duplicates of distinct scored trials; the shuffle
        # is redrawn until each duplicate lands >= MIN_DUP_GAP after its
        # source trial
        dup_sources = list(range(N_SCORED))
        rng.shuffle(dup_sources)
        dup_sources = dup_sources[:2]
        base = [("scored", i) for i in range(N_SCORED)]
        base += [("correctness", i) for i in range(2)]
        base += [("duplicate", i) for i in range(2)]
        for _ in range(10_000):
            order = list(base)
            rng.shuffle(order)
            pos = {item: p for p, item in enumerate(order)}
            if all(pos[("duplicate", d)] >= pos[("scored", dup_sources[d])]
                   + MIN_DUP_GAP for d in range(2)):
                break
        else:
            raise StudyError("could not place consistency controls")

        trials = []
        source_index = {}
        for kind, i in order:
            if kind == "scored":
                source_index[i] = len(trials)
                trials.append(scored[i])
            elif kind == "correctness":
                trials.append(correctness[i])
            else:
                src = scored[dup_sources[i]]
                dup = Trial(kind="consistency", direction=src.direction,
                            true_identity=src.true_identity,
                            false_identity=src.false_identity,
                            probe_asset=src.probe_asset,
                            true_asset=src.true_asset,
                            false_asset=src.false_asset,
                            true_slot="A" if rng.randint(2) == 0 else "B",
                            duplicate_of=dup_sources[i])
                trials.append(dup)
        # resolve duplicate_of from scored ordinal to sequence position
        for t in trials:
            if t.kind == "consistency":
                t.duplicate_of = source_index[t.duplicate_of]
        return trials


def evaluate_session(session):
    """Control outcomes, exclusion verdict, and scored-trial correctness."""
    if not session.completed:
        raise StudyError(f"session {session.session_id} not completed")
    chosen = {}
    for idx, trial in enumerate(session.trials):
        rec = session.responses[idx]
        chosen[idx] = trial.chosen_identity(rec.choice)

    failures = []
    for idx, trial in enumerate(session.trials):
        if trial.kind == "consistency":
            if chosen[idx] != chosen[trial.duplicate_of]:
                failures.append(("consistency", idx))
        elif trial.kind == "correctness":
            if chosen[idx] != trial.true_identity:
                failures.append(("correctness", idx))

    reasons = []
    if len(failures) >= 2:
        reasons.append(f"failed {len(failures)} control questions")
    if session.demographics.get("contributed_stimuli"):
        reasons.append("participant contributed stimuli")

    scored_outcomes = [chosen[i] == t.true_identity
                       for i, t in enumerate(session.trials)
                       if t.kind == "scored"]
    scored_pairs = [(t.true_identity, t.false_identity, chosen[i] == t.true_identity)
                    for i, t in enumerate(session.trials) if t.kind == "scored"]
    return {
        "session_id": session.session_id,
        "control_failures": failures,
        "excluded": bool(reasons),
        "exclusion_reasons": reasons,
        "scored_outcomes": scored_outcomes,
        "scored_pairs": scored_pairs,
    }


def aggregate_sessions(sessions):
    """Experiment summary over completed sessions: exclusions applied, the
    remaining accuracies run through the study statistics, and per-model
    difficulty over every appearance as true or false candidate."""
    completed = [s for s in sessions if s.completed]
    if not completed:
        raise StudyError("no completed sessions")
    evaluations = [evaluate_session(s) for s in completed]
    included = [e for e in evaluations if not e["excluded"]]
    excluded = [{"session_id": e["session_id"],
                 "reasons": e["exclusion_reasons"]}
                for e in evaluations if e["excluded"]]

    result = {
        "n_sessions": len(completed),
        "n_included": len(included),
        "excluded": excluded,
    }
    if included:
        summary = summarize_experiment(
            {e["session_id"]: e["scored_outcomes"] for e in included})
        points = {}
        counts = {}
        for e in included:
            for true_id, false_id, correct in e["scored_pairs"]:
                for ident in (true_id, false_id):
                    points[ident] = points.get(ident, 0.0) + correct
                    counts[ident] = counts.get(ident, 0) + 1
        result["summary"] = {
            "n": summary.n, "mean": summary.mean, "sd": summary.sd,
            "t": summary.t, "df": summary.df, "p_value": summary.p_value,
            "significant_at": summary.significant_at,
            "per_participant": summary.per_participant,
        }
        result["per_model_difficulty"] = {
            i: points[i] / counts[i] for i in sorted(points)}
    return result


def trial_to_dict(trial):
    return asdict(trial)


def trial_from_dict(obj):
    return Trial(**obj)
