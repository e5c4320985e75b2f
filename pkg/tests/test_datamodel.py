import json

import numpy as np
import pytest

from facevoice.datamodel import (
    AGE_GROUPS, ClipRecord, FeatureFileMissing, FeatureLengthError,
    FeatureStore, Manifest, ManifestParseError, SynthConfig, load_manifest,
    read_feature_file, save_manifest, save_synth, split_by_identity,
    synth_generate, write_feature_file,
)


def _tiny_manifest(tmp_path, n_identities=3, clips=2, dim=8):
    cfg = SynthConfig(n_identities=n_identities, clips_per_identity=clips,
                      latent_dim=4, feature_dim=dim, noise_sigma=0.1, seed=5,
                      axis_scales=())
    manifest, feats = synth_generate(cfg)
    path = save_synth(manifest, feats, tmp_path)
    return path, manifest, feats


class TestManifestIO:
    def test_empty_file_errors(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        with pytest.raises(ManifestParseError, match="no records"):
            load_manifest(p)

    def test_two_records_load(self, tmp_path):
        p = tmp_path / "m.jsonl"
        dim = 4
        write_feature_file(tmp_path / "a.f32", np.arange(dim, dtype=np.float32))
        write_feature_file(tmp_path / "b.f32", np.arange(dim, dtype=np.float32))
        lines = [json.dumps({"feature_dim": dim})]
        lines.append(json.dumps({"identity_id": "x", "clip_id": "x_c0",
                                 "face_feature_ref": "a.f32"}))
        lines.append(json.dumps({"identity_id": "y", "clip_id": "y_c0",
                                 "voice_feature_ref": "b.f32"}))
        p.write_text("\n".join(lines) + "\n")
        m = load_manifest(p)
        assert len(m.records) == 2
        assert m.identities == ["x", "y"]

    def test_wrong_length_feature_file(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_feature_file(tmp_path / "short.f32",
                           np.zeros(511, dtype=np.float32))
        lines = [json.dumps({"feature_dim": 512}),
                 json.dumps({"identity_id": "x", "clip_id": "x_c0",
                             "face_feature_ref": "short.f32"})]
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(FeatureLengthError, match="x_c0"):
            load_manifest(p)

    def test_missing_feature_file(self, tmp_path):
        p = tmp_path / "m.jsonl"
        lines = [json.dumps({"feature_dim": 4}),
                 json.dumps({"identity_id": "x", "clip_id": "x_c0",
                             "face_feature_ref": "gone.f32"})]
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(FeatureFileMissing, match="x_c0"):
            load_manifest(p)

    def test_parse_error_names_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps({"feature_dim": 4}) + "\n{broken\n")
        with pytest.raises(ManifestParseError, match="line 2"):
            load_manifest(p)

    def test_record_validation(self):
        with pytest.raises(ManifestParseError, match="feature ref"):
            ClipRecord(identity_id="a", clip_id="a_c0")
        with pytest.raises(ManifestParseError, match="ethnicity"):
            ClipRecord(identity_id="a", clip_id="a_c0",
                       face_feature_ref="f", ethnicity=7)
        with pytest.raises(ManifestParseError, match="age_group"):
            ClipRecord(identity_id="a", clip_id="a_c0",
                       face_feature_ref="f", age_group="teens")

    def test_round_trip_bit_exact(self, tmp_path):
        path, manifest, feats = _tiny_manifest(tmp_path)
        reloaded = load_manifest(path)
        assert reloaded.feature_dim == manifest.feature_dim
        assert len(reloaded.records) == len(manifest.records)
        store = FeatureStore(reloaded)
        for (clip, modality), vec in feats.items():
            assert np.array_equal(store.get(clip, modality), vec)
        for a, b in zip(manifest.records, reloaded.records):
            assert a == b

    def test_save_reload_save_identical_bytes(self, tmp_path):
        path, manifest, _ = _tiny_manifest(tmp_path)
        reloaded = load_manifest(path)
        second = tmp_path / "again.jsonl"
        save_manifest(reloaded, second)
        assert second.read_bytes() == path.read_bytes()


class TestSplit:
    def test_disjoint_halves(self, tmp_path):
        _, manifest, _ = _tiny_manifest(tmp_path, n_identities=4)
        s = split_by_identity(manifest, 2, seed=3)
        assert len(s.train_identities) == 2
        assert len(s.test_identities) == 2
        assert not set(s.train_identities) & set(s.test_identities)

    def test_determinism(self, tmp_path):
        _, manifest, _ = _tiny_manifest(tmp_path, n_identities=6)
        a = split_by_identity(manifest, 4, seed=42)
        b = split_by_identity(manifest, 4, seed=42)
        assert a == b

    def test_disjoint_over_many_seeds(self, tmp_path):
        _, manifest, _ = _tiny_manifest(tmp_path, n_identities=10)
        for seed in range(100):
            s = split_by_identity(manifest, 7, seed=seed)
            assert not set(s.train_identities) & set(s.test_identities)
            assert set(s.train_identities) | set(s.test_identities) == \
                set(manifest.identities)

    def test_paper_scale_counts(self):
        records = [
            ClipRecord(identity_id=f"id{i:04d}", clip_id=f"id{i:04d}_c0",
                       face_feature_ref="f")
            for i in range(1251)
        ]
        manifest = Manifest(records, feature_dim=4)
        s = split_by_identity(manifest, 1001, seed=0)
        assert len(s.train_identities) == 1001
        assert len(s.test_identities) == 250

    def test_out_of_range(self, tmp_path):
        _, manifest, _ = _tiny_manifest(tmp_path, n_identities=3)
        with pytest.raises(ValueError):
            split_by_identity(manifest, 3, seed=0)


class TestSynth:
    def test_record_count(self):
        cfg = SynthConfig(n_identities=200, clips_per_identity=10,
                          latent_dim=4, feature_dim=8, seed=1)
        manifest, feats = synth_generate(cfg)
        assert len(manifest.records) == 2000
        assert len(feats) == 4000

    def test_determinism(self):
        cfg = SynthConfig(n_identities=5, clips_per_identity=3, latent_dim=4,
                          feature_dim=16, seed=9)
        m1, f1 = synth_generate(cfg)
        m2, f2 = synth_generate(cfg)
        assert m1.records == m2.records
        assert all(np.array_equal(f1[k], f2[k]) for k in f1)

    def test_shared_ratio_one_no_noise_is_deterministic_in_identity(self):
        cfg = SynthConfig(n_identities=4, clips_per_identity=3, latent_dim=4,
                          shared_ratio=1.0, noise_sigma=0.0, feature_dim=16,
                          seed=2)
        manifest, feats = synth_generate(cfg)
        for ident in manifest.identities:
            recs = manifest.records_for(ident)
            first_face = feats[(recs[0].clip_id, "face")]
            for r in recs[1:]:
                assert np.array_equal(feats[(r.clip_id, "face")], first_face)

    def test_shared_ratio_zero_independent_modalities(self):
        # with no shared block, face and voice features of an identity are
        # built from disjoint random draws; correlation ~ 0
        cfg = SynthConfig(n_identities=30, clips_per_identity=4, latent_dim=8,
                          shared_ratio=0.0, noise_sigma=0.0, feature_dim=32,
                          seed=3, axis_scales=())
        manifest, feats = synth_generate(cfg)
        faces = np.stack([feats[(r.clip_id, "face")] for r in manifest.records])
        voices = np.stack([feats[(r.clip_id, "voice")] for r in manifest.records])
        c = np.corrcoef(faces.mean(axis=1), voices.mean(axis=1))[0, 1]
        assert abs(c) < 0.3

    def test_demographics_identity_level(self):
        cfg = SynthConfig(n_identities=20, clips_per_identity=5, latent_dim=4,
                          feature_dim=8, seed=4)
        manifest, _ = synth_generate(cfg)
        for ident in manifest.identities:
            recs = manifest.records_for(ident)
            assert len({(r.gender, r.ethnicity, r.fluency, r.age_group)
                        for r in recs}) == 1
            assert len({r.facial_attrs["random_attr"] for r in recs}) == 1
        assert all(r.age_group in AGE_GROUPS for r in manifest.records)

    def test_latent_recovery_r2(self):
        """Linear regression from face features back to the shared latent
        explains >90% of variance at shared_ratio=1, sigma=0.1."""
        cfg = SynthConfig(n_identities=60, clips_per_identity=4, latent_dim=6,
                          shared_ratio=1.0, noise_sigma=0.1, feature_dim=48,
                          seed=6, axis_scales=())
        manifest, feats, latents = synth_generate(cfg, return_latents=True)
        X = np.asarray([feats[(r.clip_id, "face")] for r in manifest.records])
        Z = np.asarray([latents[r.identity_id] for r in manifest.records])
        coef, *_ = np.linalg.lstsq(
            np.hstack([X, np.ones((len(X), 1))]), Z, rcond=None)
        pred = np.hstack([X, np.ones((len(X), 1))]) @ coef
        ss_res = ((Z - pred) ** 2).sum()
        ss_tot = ((Z - Z.mean(axis=0)) ** 2).sum()
        assert 1.0 - ss_res / ss_tot > 0.9

    def test_feature_file_length_guard(self, tmp_path):
        write_feature_file(tmp_path / "v.f32", np.zeros(7, dtype=np.float32))
        with pytest.raises(FeatureLengthError):
            read_feature_file(tmp_path / "v.f32", 8)

    def test_store_optional_l2_normalization(self, tmp_path):
        path, manifest, feats = _tiny_manifest(tmp_path)
        raw = FeatureStore(manifest, feats)
        unit = FeatureStore(manifest, feats, l2_normalize=True)
        clip = manifest.records[0].clip_id
        v_raw = raw.get(clip, "face")
        v_unit = unit.get(clip, "face")
        assert np.linalg.norm(v_unit) == pytest.approx(1.0, abs=1e-5)
        assert np.allclose(v_unit * np.linalg.norm(v_raw), v_raw, atol=1e-5)
        # normalization also applies on the disk path
        disk = FeatureStore(load_manifest(path), l2_normalize=True)
        assert np.allclose(disk.get(clip, "face"), v_unit, atol=1e-6)
