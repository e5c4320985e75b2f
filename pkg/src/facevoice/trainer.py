"""Tuple sampling, Adam, the learning-rate schedule, hard-sample mining,
and the training loop."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import TripletTuple, init_params, save_checkpoint, tuple_backward, tuple_loss
from .numerics import Rng


@dataclass
class TrainConfig:
    iterations: int = 240_000
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 80_000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    hard_mining_start: int = 120_000
    hard_mining_pool: int = 16
    hard_mining_keep: int = 8
    direction: str = "V2F"
    objective: str = "triplet"
    hidden_dim: int = 128
    embed_dim: int = 128
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.hard_mining_keep > self.hard_mining_pool:
            raise ValueError("hard_mining_keep must be <= hard_mining_pool")
        if (self.hard_mining_start < self.iterations
                and self.batch_size != self.hard_mining_keep):
            raise ValueError("batch_size must equal hard_mining_keep once "
                             "mining activates")


class AdamState:
    """First/second moment buffers mirroring the parameter blocks."""

    def __init__(self, params, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.blocks()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.blocks()}


def lr_at(config, iteration):
    """Step-decayed rate: lr * factor^floor(iteration / decay_every)."""
    if not (0 <= iteration):
        raise ValueError(f"iteration {iteration} negative")
    return config.lr * config.lr_decay_factor ** (iteration // config.lr_decay_every)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, applied in place. Returns (params, state)."""
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, arr in params.blocks():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in parameter block {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        arr -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
    return params, state


class TupleSampler:
    """Draws training triplets from the train split of a manifest.

    The anchor is uniform over train clips of the reference modality, the
    positive comes from the same identity's other-modality clips (excluding
    the anchor's own clip when another exists), and the negative is uniform
    over other identities' clips. Falling back to the anchor's own clip for
    the positive increments a warning counter.
    """

    def __init__(self, manifest, split, store, direction):
        self.manifest = manifest
        self.store = store
        self.direction = direction
        self.ref_modality = "voice" if direction == "V2F" else "face"
        self.oth_modality = "face" if direction == "V2F" else "voice"
        train = set(split.train_identities)
        by_identity = {}
        for rec in manifest.records_with(self.oth_modality, train):
            by_identity.setdefault(rec.identity_id, []).append(rec)
        # anchors only from identities that can supply a positive
        self.anchors = [r for r in manifest.records_with(self.ref_modality, train)
                        if r.identity_id in by_identity]
        self.positives_by_identity = by_identity
        self.negatives = manifest.records_with(self.oth_modality, train)
        if len(by_identity) < 2:
            raise ValueError(
                f"need >=2 train identities with both modalities, "
                f"got {len(by_identity)}")
        self.fallback_positives = 0

    def sample(self, rng):
        anchor_rec = self.anchors[rng.randint(len(self.anchors))]
        candidates = self.positives_by_identity[anchor_rec.identity_id]
        distinct = [r for r in candidates if r.clip_id != anchor_rec.clip_id]
        if distinct:
            pos_rec = distinct[rng.randint(len(distinct))]
        else:
            pos_rec = candidates[rng.randint(len(candidates))]
            self.fallback_positives += 1
        while True:
            neg_rec = self.negatives[rng.randint(len(self.negatives))]
            if neg_rec.identity_id != anchor_rec.identity_id:
                break
        return TripletTuple(
            anchor=self.store.get(anchor_rec.clip_id, self.ref_modality),
            positive=self.store.get(pos_rec.clip_id, self.oth_modality),
            negative=self.store.get(neg_rec.clip_id, self.oth_modality),
            anchor_identity=anchor_rec.identity_id,
            negative_identity=neg_rec.identity_id,
        )


def sample_tuple(manifest, split, store, rng, direction="V2F"):
    """One-off triplet draw (the loop keeps a TupleSampler instead)."""
    return TupleSampler(manifest, split, store, direction).sample(rng)


@dataclass
class LogRecord:
    iteration: int
    lr: float
    loss: float
    mining: bool


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    fallback_positives: int = 0

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps({"iteration": r.iteration, "lr": r.lr,
                                    "loss": r.loss, "mining": r.mining}) + "\n")
            f.write(json.dumps(
                {"fallback_positives": self.fallback_positives}) + "\n")


def _select_hard(losses, keep):
    """Indices of the `keep` largest losses; ties keep earlier draws."""
    order = np.argsort(-np.asarray(losses), kind="stable")
    return sorted(order[:keep])


def train(manifest, split, config, store, checkpoint_dir=None):
    """Full training loop; a pure function of (manifest+features, config).

    Returns (params, TrainLog). Checkpoints land in checkpoint_dir every
    checkpoint_every iterations when both are set.
    """
    root = Rng(config.seed)
    init_seed = root.next_u64()
    params = init_params(manifest.feature_dim, config.hidden_dim,
                         config.embed_dim, objective=config.objective,
                         direction=config.direction, seed=init_seed)
    if config.iterations == 0:
        return params, TrainLog()

    sampler = TupleSampler(manifest, split, store, config.direction)
    state = AdamState(params, config.beta1, config.beta2, config.epsilon)
    log = TrainLog()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for it in range(config.iterations):
        mining = it >= config.hard_mining_start
        if mining:
            pool = [sampler.sample(root) for _ in range(config.hard_mining_pool)]
            losses = [tuple_loss(params, t) for t in pool]
            batch = [pool[i] for i in _select_hard(losses, config.hard_mining_keep)]
        else:
            batch = [sampler.sample(root) for _ in range(config.batch_size)]

        total = None
        loss_sum = 0.0
        for tup in batch:
            loss, grads = tuple_backward(params, tup)
            loss_sum += loss
            if total is None:
                total = grads
            else:
                for name in total:
                    total[name] += grads[name]
        for name in total:
            total[name] /= len(batch)

        lr = lr_at(config, it)
        adam_step(params, total, state, lr)
        log.records.append(LogRecord(iteration=it, lr=lr,
                                     loss=loss_sum / len(batch), mining=mining))
        if ckpt_dir and config.checkpoint_every > 0 \
                and (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(params, ckpt_dir / f"checkpoint_{it + 1:07d}.bin")

    log.fallback_positives = sampler.fallback_positives
    return params, log
