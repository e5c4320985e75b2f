"""Manifest / feature-file formats, identity splits, and the synthetic
paired-feature generator used as the desk-scale oracle.

A manifest is UTF-8 JSON-lines: the first line is a header object
(currently just {"feature_dim": N}), each following line one clip record.
Feature files are raw little-endian float32, exactly feature_dim values,
no header; paths are resolved relative to the manifest's directory.
"""

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .numerics import Rng

GENDERS = ("m", "f")
# Ethnicity codes: 1 American Indian; 2 Asian and Pacific Islander;
# 3 black or African American; 4 Hispanic or Latino; 5 non-Hispanic white;
# 6 others.
ETHNICITIES = (1, 2, 3, 4, 5, 6)
FLUENCIES = ("Y", "N")
AGE_GROUPS = ("<=19", "20s", "30s", "40s", "50s", "60s", "70s", ">=80")
MODALITIES = ("face", "voice")

# Standard-normal octile boundaries, used to bucket a latent coordinate
# into the eight age groups.
_AGE_OCTILES = (-1.15035, -0.67449, -0.31864, 0.0, 0.31864, 0.67449, 1.15035)


class ManifestError(Exception):
    """Base for manifest/feature-file problems."""


class ManifestParseError(ManifestError):
    pass


class FeatureFileMissing(ManifestError):
    pass


class FeatureLengthError(ManifestError):
    pass


@dataclass
class ClipRecord:
    identity_id: str
    clip_id: str
    face_feature_ref: str | None = None
    voice_feature_ref: str | None = None
    face_asset_ref: str | None = None
    voice_asset_ref: str | None = None
    gender: str = "m"
    ethnicity: int = 5
    fluency: str = "Y"
    age_group: str = "20s"
    pitch_hz: float | None = None
    loudness: float | None = None
    facial_attrs: dict | None = None

    def __post_init__(self):
        if self.face_feature_ref is None and self.voice_feature_ref is None:
            raise ManifestParseError(
                f"record {self.clip_id!r}: needs at least one feature ref")
        if self.gender not in GENDERS:
            raise ManifestParseError(
                f"record {self.clip_id!r}: bad gender {self.gender!r}")
        if self.ethnicity not in ETHNICITIES:
            raise ManifestParseError(
                f"record {self.clip_id!r}: bad ethnicity {self.ethnicity!r}")
        if self.fluency not in FLUENCIES:
            raise ManifestParseError(
                f"record {self.clip_id!r}: bad fluency {self.fluency!r}")
        if self.age_group not in AGE_GROUPS:
            raise ManifestParseError(
                f"record {self.clip_id!r}: bad age_group {self.age_group!r}")
        if self.pitch_hz is not None and self.pitch_hz <= 0:
            raise ManifestParseError(
                f"record {self.clip_id!r}: pitch_hz must be positive")

    def feature_ref(self, modality):
        if modality == "face":
            return self.face_feature_ref
        if modality == "voice":
            return self.voice_feature_ref
        raise ValueError(f"unknown modality {modality!r}")

    def asset_ref(self, modality):
        return self.face_asset_ref if modality == "face" else self.voice_asset_ref

    def has_modality(self, modality):
        return self.feature_ref(modality) is not None


class Manifest:
    """Immutable collection of clip records plus the feature dimension."""

    def __init__(self, records, feature_dim=512, base_dir=None):
        if not records:
            raise ManifestParseError("no records")
        self.records = list(records)
        self.feature_dim = int(feature_dim)
        self.base_dir = Path(base_dir) if base_dir else None
        self._by_clip = {}
        self._by_identity = {}
        for rec in self.records:
            if rec.clip_id in self._by_clip:
                raise ManifestParseError(f"duplicate clip_id {rec.clip_id!r}")
            self._by_clip[rec.clip_id] = rec
            self._by_identity.setdefault(rec.identity_id, []).append(rec)

    @property
    def identities(self):
        return sorted(self._by_identity)

    def record(self, clip_id):
        return self._by_clip[clip_id]

    def records_for(self, identity_id):
        return self._by_identity[identity_id]

    def records_with(self, modality, identities=None):
        keep = None if identities is None else set(identities)
        return [r for r in self.records
                if r.has_modality(modality)
                and (keep is None or r.identity_id in keep)]

    def resolve(self, ref):
        p = Path(ref)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


@dataclass(frozen=True)
class SplitSpec:
    train_identities: tuple
    test_identities: tuple
    seed: int

    def __post_init__(self):
        overlap = set(self.train_identities) & set(self.test_identities)
        if overlap:
            raise ValueError(f"identities in both splits: {sorted(overlap)[:5]}")


def read_feature_file(path, feature_dim):
    """Raw float32-LE vector; byte length must be exactly feature_dim*4."""
    path = Path(path)
    if not path.exists():
        raise FeatureFileMissing(f"feature file missing: {path}")
    data = path.read_bytes()
    if len(data) != feature_dim * 4:
        raise FeatureLengthError(
            f"{path}: {len(data)} bytes, expected {feature_dim * 4} "
            f"({feature_dim} float32)")
    return np.frombuffer(data, dtype="<f4").astype(np.float32)


def write_feature_file(path, values):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(values, dtype="<f4")
    path.write_bytes(arr.tobytes())


def _record_from_json(line, lineno):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ManifestParseError(f"line {lineno}: invalid JSON ({e})") from e
    if "facial_attrs" in obj and obj["facial_attrs"] is not None:
        obj["facial_attrs"] = {k: int(v) for k, v in obj["facial_attrs"].items()}
    try:
        return ClipRecord(**obj)
    except TypeError as e:
        raise ManifestParseError(f"line {lineno}: {e}") from e


def load_manifest(path, check_features=True):
    """Parse and validate a manifest file.

    check_features verifies that every referenced feature file exists and has
    the exact byte length; disable for manifests whose features live only in
    memory or whose records carry asset refs for the study service.
    """
    path = Path(path)
    if not path.exists():
        raise FeatureFileMissing(f"manifest not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ManifestParseError("no records")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestParseError(f"line 1: invalid header ({e})") from e
    if not isinstance(header, dict):
        raise ManifestParseError("line 1: expected header object")
    if "clip_id" in header:
        raise ManifestParseError("line 1: missing header (found a record instead)")
    feature_dim = int(header.get("feature_dim", 512))
    records = [_record_from_json(ln, i + 2) for i, ln in enumerate(lines[1:])]
    manifest = Manifest(records, feature_dim=feature_dim, base_dir=path.parent)
    if check_features:
        for rec in manifest.records:
            for modality in MODALITIES:
                ref = rec.feature_ref(modality)
                if ref is None:
                    continue
                try:
                    read_feature_file(manifest.resolve(ref), feature_dim)
                except ManifestError as e:
                    raise type(e)(f"record {rec.clip_id!r}: {e}") from e
    return manifest


def save_manifest(manifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"feature_dim": manifest.feature_dim}) + "\n")
        for rec in manifest.records:
            obj = {k: v for k, v in asdict(rec).items() if v is not None}
            f.write(json.dumps(obj, sort_keys=True) + "\n")


class FeatureStore:
    """Resolves (clip_id, modality) to a float32 feature vector.

    Backed by an in-memory dict (synthetic data), by feature files on disk,
    or both; disk reads are cached. The upstream pipeline states no feature
    normalization, so none is applied by default; l2_normalize is available
    as an experiment knob and must be echoed into run logs by callers.
    """

    def __init__(self, manifest, features=None, l2_normalize=False):
        self.manifest = manifest
        self.l2_normalize = l2_normalize
        self._mem = dict(features) if features else {}
        self._cache = {}

    def _finish(self, vec):
        if not self.l2_normalize:
            return vec
        norm = float(np.linalg.norm(vec))
        return vec if norm == 0.0 else (vec / norm).astype(np.float32)

    def get(self, clip_id, modality):
        key = (clip_id, modality)
        if key in self._mem:
            return self._finish(self._mem[key])
        if key in self._cache:
            return self._cache[key]
        rec = self.manifest.record(clip_id)
        ref = rec.feature_ref(modality)
        if ref is None:
            raise FeatureFileMissing(
                f"record {clip_id!r} has no {modality} feature")
        vec = self._finish(read_feature_file(self.manifest.resolve(ref),
                                             self.manifest.feature_dim))
        self._cache[key] = vec
        return vec


def split_by_identity(manifest, n_train, seed):
    """Seeded identity-level split: first n_train shuffled identities train,
    the rest test. Clip-level leakage is impossible by construction."""
    identities = manifest.identities
    if not (0 < n_train < len(identities)):
        raise ValueError(
            f"n_train={n_train} out of range for {len(identities)} identities")
    rng = Rng(seed)
    order = list(identities)
    rng.shuffle(order)
    return SplitSpec(train_identities=tuple(sorted(order[:n_train])),
                     test_identities=tuple(sorted(order[n_train:])),
                     seed=int(seed))


@dataclass
class SynthConfig:
    n_identities: int
    clips_per_identity: int
    latent_dim: int = 16
    shared_ratio: float = 0.9
    noise_sigma: float = 5.0
    feature_dim: int = 512
    seed: int = 0
    # amplification of the leading latent axes (gender, age). Demographic
    # axes dominating the shared code is what makes grouped matching harder
    # than ungrouped, as in real co-embeddings.
    axis_scales: tuple = (4.0, 2.0)

    def __post_init__(self):
        if self.n_identities <= 0 or self.clips_per_identity <= 0:
            raise ValueError("n_identities and clips_per_identity must be positive")
        if self.latent_dim < 3:
            raise ValueError("latent_dim must be >= 3 (identity/age/pitch axes)")
        if not (0.0 <= self.shared_ratio <= 1.0):
            raise ValueError("shared_ratio must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if len(self.axis_scales) > self.latent_dim:
            raise ValueError("more axis_scales than latent axes")


def _age_from_latent(z1):
    bucket = sum(z1 > b for b in _AGE_OCTILES)
    return AGE_GROUPS[bucket]


def synth_generate(config, return_latents=False):
    """Deterministic synthetic paired-feature dataset.

    Each identity gets a shared latent z; face and voice features are fixed
    random linear maps of [sqrt(r)*z ; sqrt(1-r)*private] plus isotropic
    noise, so cross-modal signal strength is controlled by r=shared_ratio.
    Gender mirrors sign(z[0]), age group buckets z[1], pitch tracks z[2]
    (loudness is pure noise), and "random_attr" is drawn independently of z
    as a probe negative control. Returns (manifest, features) with features
    keyed by (clip_id, modality); with return_latents, a third dict maps
    identity to its latent (handy for oracle regressions in tests).
    """
    cfg = config
    rng = Rng(cfg.seed)
    L = cfg.latent_dim
    # fixed mixing maps, one per modality; 1/sqrt(L) keeps feature variance ~1
    A = rng.normal((cfg.feature_dim, 2 * L)) / math.sqrt(L)
    B = rng.normal((cfg.feature_dim, 2 * L)) / math.sqrt(L)
    scale = np.ones(L)
    scale[:len(cfg.axis_scales)] = cfg.axis_scales
    sr = math.sqrt(cfg.shared_ratio)
    sp = math.sqrt(1.0 - cfg.shared_ratio)

    records = []
    features = {}
    latents = {}
    id_width = len(str(cfg.n_identities - 1))
    for i in range(cfg.n_identities):
        identity = f"id{i:0{id_width}d}"
        z = rng.normal(L)
        latents[identity] = z
        gender = "m" if z[0] >= 0 else "f"
        age_group = _age_from_latent(z[1])
        ethnicity = 1 + rng.randint(6)
        fluency = "Y" if rng.randint(2) == 0 else "N"
        random_attr = rng.randint(2)
        zs = scale * z
        for j in range(cfg.clips_per_identity):
            clip = f"{identity}_c{j}"
            u = rng.normal(L)
            w = rng.normal(L)
            face = A @ np.concatenate([sr * zs, sp * u])
            voice = B @ np.concatenate([sr * zs, sp * w])
            if cfg.noise_sigma > 0:
                face = face + cfg.noise_sigma * rng.normal(cfg.feature_dim)
                voice = voice + cfg.noise_sigma * rng.normal(cfg.feature_dim)
            pitch = max(60.0, 120.0 + 40.0 * z[2] + 5.0 * rng.normal())
            loudness = rng.normal()
            records.append(ClipRecord(
                identity_id=identity,
                clip_id=clip,
                face_feature_ref=f"features/{clip}_face.f32",
                voice_feature_ref=f"features/{clip}_voice.f32",
                gender=gender,
                ethnicity=ethnicity,
                fluency=fluency,
                age_group=age_group,
                pitch_hz=round(pitch, 3),
                loudness=round(loudness, 4),
                facial_attrs={"random_attr": random_attr},
            ))
            features[(clip, "face")] = face.astype(np.float32)
            features[(clip, "voice")] = voice.astype(np.float32)
    manifest = Manifest(records, feature_dim=cfg.feature_dim)
    if return_latents:
        return manifest, features, latents
    return manifest, features


def save_synth(manifest, features, out_dir):
    """Write a synthetic dataset to disk at the refs the records carry."""
    out_dir = Path(out_dir)
    for rec in manifest.records:
        for modality in MODALITIES:
            ref = rec.feature_ref(modality)
            if ref is not None:
                write_feature_file(out_dir / ref, features[(rec.clip_id, modality)])
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(manifest, manifest_path)
    return manifest_path
