"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

Tolerances are pinned here; the desk-scale synthetic substitutes for the
full-scale corpus, whose headline numbers need external features and are
out of reach in this repository by design.
"""

import functools
import math
import sys
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import perfect_identity_params
from facevoice.datamodel import (
    ClipRecord, FeatureStore, Manifest, SynthConfig, save_manifest,
    split_by_identity, synth_generate,
)
from facevoice.evaluation import Grouping, make_match_trials, recall_at_k, run_matching
from facevoice.model import init_params, triplet_loss
from facevoice.numerics import Rng
from facevoice.probes import ProbeSpec, probe_dataset, run_probe
from facevoice.stats import t_from_moments
from facevoice.studysvc import StudyServiceConfig, create_app
from facevoice.trainer import AdamState, TrainConfig, adam_step, lr_at, train

from test_model import _fd_check
from test_studysvc import (
    DEMO, _drive_session, _fail_consistency, _fail_correctness, _fail_mixed,
    _study_manifest,
)


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"FAIL  {name}", file=sys.stderr)
                raise
            print(f"PASS  {name}", file=sys.stderr)
        return wrapper
    return deco


@criterion("loss closed form: softmax-norm triplet == 2*sigma(d+-d-)^2")
def test_loss_closed_form():
    r = Rng(101)
    for _ in range(10_000):
        dim = 2 + r.randint(15)
        e_a, e_p, e_n = (r.normal(dim).astype(np.float32) for _ in range(3))
        d_p = float(np.linalg.norm((e_a - e_p).astype(np.float32)))
        d_m = float(np.linalg.norm((e_a - e_n).astype(np.float32)))
        s = 1.0 / (1.0 + math.exp(-(d_p - d_m)))
        assert triplet_loss(e_a, e_p, e_n) == pytest.approx(2.0 * s * s,
                                                            abs=1e-6)
    # boundary: equal distances give exactly 0.5
    e_a = np.zeros(3, dtype=np.float32)
    e_p = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    e_n = np.array([0.0, 1.0, 0.0], dtype=np.float32)
    assert abs(triplet_loss(e_a, e_p, e_n) - 0.5) < 1e-9


@criterion("gradient correctness: triplet/contrastive/classifier vs central "
           "finite differences, rel err < 1e-4, 50 seeds, < 1 min")
def test_gradient_correctness():
    t0 = time.monotonic()
    _fd_check("triplet", 50)
    _fd_check("contrastive", 50)
    _fd_check("classifier", 50)
    assert time.monotonic() - t0 < 60.0


@criterion("optimizer: Adam first step = lr*(1 -/+ 1e-4); lr schedule "
           "1e-3 / 1e-4 / 1e-5 at iterations 0 / 80k / 160k")
def test_optimizer():
    for g in (10.0, -3.0, 0.5):
        p = init_params(6, 4, 3, seed=0)
        state = AdamState(p)
        before = {n: a.copy() for n, a in p.blocks()}
        grads = {n: np.full_like(a, g) for n, a in p.blocks()}
        adam_step(p, grads, state, lr=1e-3)
        for n, a in p.blocks():
            step = np.abs(a - before[n])
            assert np.all(step >= 1e-3 * (1 - 1e-4))
            assert np.all(step <= 1e-3 * (1 + 1e-4))
            assert np.all(np.sign(a - before[n]) == -np.sign(g))
    cfg = TrainConfig()
    assert lr_at(cfg, 0) == pytest.approx(1e-3, rel=1e-9)
    assert lr_at(cfg, 80_000) == pytest.approx(1e-4, rel=1e-9)
    assert lr_at(cfg, 160_000) == pytest.approx(1e-5, rel=1e-9)


@criterion("end-to-end learnability: shared 0.9 uncontrolled >= 70% and "
           "grouped(G) strictly below; shared 0 within 50 +/- 3%; < 5 min")
def test_end_to_end_learnability():
    t0 = time.monotonic()
    train_cfg = TrainConfig(iterations=2000, lr_decay_every=800,
                            hard_mining_start=1000, seed=3)

    def run(shared_ratio):
        cfg = SynthConfig(n_identities=250, clips_per_identity=10,
                          shared_ratio=shared_ratio, seed=7)
        manifest, feats = synth_generate(cfg)
        store = FeatureStore(manifest, feats)
        split = split_by_identity(manifest, 200, seed=11)
        assert len(split.test_identities) == 50
        params, _ = train(manifest, split, train_cfg, store)
        return manifest, store, split, params

    manifest, store, split, params = run(0.9)
    rng = Rng(5)
    ungrouped = run_matching(params, make_match_trials(
        manifest, split.test_identities, Grouping("none"), rng, "V2F", 8),
        store).accuracy
    grouped = run_matching(params, make_match_trials(
        manifest, split.test_identities, Grouping("G"), rng, "V2F", 8),
        store).accuracy
    assert ungrouped >= 0.70, f"uncontrolled accuracy {ungrouped:.3f}"
    assert grouped < ungrouped, (
        f"grouped {grouped:.3f} not below ungrouped {ungrouped:.3f}")

    manifest0, store0, split0, params0 = run(0.0)
    chance = run_matching(params0, make_match_trials(
        manifest0, split0.test_identities, Grouping("none"), Rng(5), "V2F", 8),
        store0).accuracy
    assert abs(chance - 0.5) <= 0.03, f"no-signal accuracy {chance:.3f}"
    assert time.monotonic() - t0 < 300.0


@criterion("retrieval baseline: random scores at N=250 give "
           "R@{1,5,10,50,100} = {0.4,2,4,20,40}% within 3 SE; "
           "perfect oracle R@1 = 100%")
def test_retrieval_baseline():
    records = []
    for i in range(250):
        ident = f"id{i:03d}"
        for j in range(2):
            records.append(ClipRecord(
                identity_id=ident, clip_id=f"{ident}_c{j}",
                face_feature_ref=f"f/{ident}_{j}.f32",
                voice_feature_ref=f"v/{ident}_{j}.f32"))
    manifest = Manifest(records, feature_dim=4)
    feats = {(r.clip_id, m): np.zeros(4, dtype=np.float32)
             for r in records for m in ("face", "voice")}
    store = FeatureStore(manifest, feats)
    score_rng = Rng(77)
    ks = [1, 5, 10, 50, 100]
    repeats = 10
    recalls = recall_at_k(None, manifest, manifest.identities, store,
                          set_size=250, ks=ks, rng=Rng(13), repeats=repeats,
                          score_fn=lambda f, v: score_rng.uniform())
    n = repeats * 250
    for k in ks:
        p = k / 250
        expect = 100.0 * p
        se = 100.0 * math.sqrt(p * (1 - p) / n)
        assert abs(recalls[k] - expect) <= 3 * se, (
            f"R@{k} = {recalls[k]:.2f}%, expected {expect}% +/- {3 * se:.2f}")

    cfg = SynthConfig(n_identities=40, clips_per_identity=2, latent_dim=5,
                      feature_dim=20, shared_ratio=1.0, noise_sigma=0.0,
                      seed=9, axis_scales=())
    manifest_p, feats_p = synth_generate(cfg)
    oracle = perfect_identity_params(cfg)
    rec = recall_at_k(oracle, manifest_p, manifest_p.identities,
                      FeatureStore(manifest_p, feats_p), set_size=40,
                      ks=[1], rng=Rng(21), repeats=3)
    assert rec[1] == 100.0


@criterion("statistics: published (mean, sd, n) rows give t = "
           "13.17 / 9.65 / 5.20 / 3.69 within 0.02, all p < 0.001")
def test_statistics_reproduction():
    rows = [
        (0.714, 0.136, 70, 13.17),
        (0.650, 0.130, 70, 9.65),
        (0.584, 0.138, 73, 5.20),
        (0.552, 0.122, 75, 3.69),
    ]
    for mean, sd, n, expected in rows:
        res = t_from_moments(mean, sd, n, mu0=0.5)
        assert abs(res.statistic - expected) <= 0.02, (
            f"({mean}, {sd}, {n}): t = {res.statistic:.4f}")
        assert res.p_value < 0.001


@criterion("probe pipeline: linear attribute mAP > 0.9; independent random "
           "attribute chance-flagged; 20 trials < 1 min")
def test_probe_pipeline():
    t0 = time.monotonic()
    cfg = SynthConfig(n_identities=80, clips_per_identity=6, latent_dim=8,
                      shared_ratio=1.0, noise_sigma=0.5, feature_dim=64,
                      seed=21)
    manifest, feats = synth_generate(cfg)
    store = FeatureStore(manifest, feats)
    params = init_params(64, 32, 16, seed=99)

    X, y, ids = probe_dataset(params, manifest, store, "gender", "face")
    linear = run_probe(X, y, ids, ProbeSpec("gender", "face", seed=13))
    assert linear.map_mean > 0.9, f"gender mAP {linear.map_mean:.3f}"
    assert not linear.chance_flagged

    Xr, yr, idsr = probe_dataset(params, manifest, store,
                                 "attr:random_attr", "face")
    rand = run_probe(Xr, yr, idsr, ProbeSpec("attr:random_attr", "face",
                                             seed=13))
    assert rand.chance_flagged, (
        f"random attr mAP {rand.map_mean:.3f} +/- {rand.ci_halfwidth:.3f}")
    assert time.monotonic() - t0 < 60.0


@criterion("study aggregation: 6-session control-failure fixture excludes "
           "exactly the >=2-failure sessions; log replay reproduces the "
           "aggregate bit for bit")
def test_study_aggregation(tmp_path):
    manifest_path = tmp_path / "stimuli.jsonl"
    save_manifest(_study_manifest(), manifest_path)
    config = StudyServiceConfig(manifest_path=str(manifest_path),
                                data_dir=str(tmp_path / "data"), seed=99)
    app = create_app(config)
    client = TestClient(app)

    _drive_session(client, app, "exp1_G", lambda t, i: "true")
    _drive_session(client, app, "exp1_G", _fail_consistency(1))
    _drive_session(client, app, "exp1_G", _fail_correctness(1))
    excluded = set()
    for chooser in (_fail_consistency(2), _fail_correctness(2), _fail_mixed()):
        sid, _ = _drive_session(client, app, "exp1_G", chooser)
        excluded.add(sid)

    agg = client.get("/api/experiments/exp1_G/aggregate").json()
    assert agg["n_sessions"] == 6
    assert {e["session_id"] for e in agg["excluded"]} == excluded
    assert agg["n_included"] == 3

    replay_app = create_app(config)
    agg_replayed = TestClient(replay_app).get(
        "/api/experiments/exp1_G/aggregate").json()
    assert agg_replayed == agg
