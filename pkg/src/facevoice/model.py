"""Projection heads and training objectives.

Each modality head is affine -> ReLU -> affine, mapping a pooled feature
vector to the shared embedding space. Three objectives are supported behind
one scoring contract: the distance-softmax triplet loss, a margin
contrastive loss, and a binary match classifier over concatenated features.
All gradients are computed analytically (no autodiff).
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, affine_backward, affine_forward, l2_distance, softmax2

OBJECTIVES = ("triplet", "contrastive", "classifier")
DIRECTIONS = ("V2F", "F2V")

# guards the 1/d factor in distance gradients at d=0
_DIST_EPS = 1e-8


@dataclass
class HeadParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def blocks(self, prefix):
        return [(f"{prefix}.W1", self.W1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.W2", self.W2), (f"{prefix}.b2", self.b2)]


@dataclass
class ClassifierParams:
    Wc1: np.ndarray
    bc1: np.ndarray
    Wc2: np.ndarray
    bc2: np.ndarray
    Wc3: np.ndarray
    bc3: np.ndarray

    def blocks(self, prefix="classifier"):
        return [(f"{prefix}.Wc1", self.Wc1), (f"{prefix}.bc1", self.bc1),
                (f"{prefix}.Wc2", self.Wc2), (f"{prefix}.bc2", self.bc2),
                (f"{prefix}.Wc3", self.Wc3), (f"{prefix}.bc3", self.bc3)]


@dataclass
class ModelParams:
    face_head: HeadParams
    voice_head: HeadParams
    classifier_head: ClassifierParams | None
    objective: str
    direction: str
    feature_dim: int
    hidden_dim: int
    embed_dim: int

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if (self.classifier_head is not None) != (self.objective == "classifier"):
            raise ValueError("classifier_head present iff objective='classifier'")

    def head(self, modality):
        if modality == "face":
            return self.face_head
        if modality == "voice":
            return self.voice_head
        raise ValueError(f"unknown modality {modality!r}")

    def blocks(self):
        out = self.face_head.blocks("face") + self.voice_head.blocks("voice")
        if self.classifier_head is not None:
            out += self.classifier_head.blocks()
        return out

    @property
    def reference_modality(self):
        return "voice" if self.direction == "V2F" else "face"

    @property
    def other_modality(self):
        return "face" if self.direction == "V2F" else "voice"


@dataclass
class TripletTuple:
    """Anchor in the reference modality; positive/negative in the other one."""
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_identity: str
    negative_identity: str

    def __post_init__(self):
        if self.anchor_identity == self.negative_identity:
            raise ValueError("negative must come from a different identity")


def _glorot(rng, rows, cols):
    bound = math.sqrt(6.0 / (rows + cols))
    w = rng.uniform((rows, cols)) * (2.0 * bound) - bound
    return w.astype(np.float32)


def _init_head(rng, feature_dim, hidden_dim, embed_dim):
    return HeadParams(
        W1=_glorot(rng, hidden_dim, feature_dim),
        b1=np.zeros(hidden_dim, dtype=np.float32),
        W2=_glorot(rng, embed_dim, hidden_dim),
        b2=np.zeros(embed_dim, dtype=np.float32),
    )


def init_params(feature_dim=512, hidden_dim=128, embed_dim=128,
                objective="triplet", direction="V2F", seed=0):
    """Fan-balanced uniform weights, zero biases; deterministic in seed."""
    rng = Rng(seed)
    face = _init_head(rng, feature_dim, hidden_dim, embed_dim)
    voice = _init_head(rng, feature_dim, hidden_dim, embed_dim)
    classifier = None
    if objective == "classifier":
        classifier = ClassifierParams(
            Wc1=_glorot(rng, 128, 2 * feature_dim),
            bc1=np.zeros(128, dtype=np.float32),
            Wc2=_glorot(rng, 128, 128),
            bc2=np.zeros(128, dtype=np.float32),
            Wc3=_glorot(rng, 2, 128),
            bc3=np.zeros(2, dtype=np.float32),
        )
    return ModelParams(face_head=face, voice_head=voice,
                       classifier_head=classifier, objective=objective,
                       direction=direction, feature_dim=feature_dim,
                       hidden_dim=hidden_dim, embed_dim=embed_dim)


def _head_forward(head, x):
    h = affine_forward(head.W1, head.b1, x, relu=True)
    e = affine_forward(head.W2, head.b2, h, relu=False)
    return e, h


def embed(params, modality, x):
    """Map a feature vector through the modality's head to the embedding."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape != (params.feature_dim,):
        raise ValueError(
            f"feature shape {x.shape}, expected ({params.feature_dim},)")
    e, _ = _head_forward(params.head(modality), x)
    return e


def _head_backward(head, x, h, upstream, grads, prefix):
    """Accumulate head gradients for one input; returns nothing."""
    gW2, gb2, gh = affine_backward(head.W2, h, upstream)
    gW1, gb1, _ = affine_backward(head.W1, x, gh, relu_mask=h > 0)
    grads[f"{prefix}.W1"] += gW1
    grads[f"{prefix}.b1"] += gb1
    grads[f"{prefix}.W2"] += gW2
    grads[f"{prefix}.b2"] += gb2


def zero_grads(params):
    return {name: np.zeros_like(arr) for name, arr in params.blocks()}


def triplet_loss(e_anchor, e_pos, e_neg):
    """|| softmax([d+, d-]) - [0, 1] ||^2 over the two anchor distances.

    Algebraically equal to 2*s^2 with s the logistic of (d+ - d-):
    0.5 exactly when d+ = d-, approaching 0 as the positive pulls far
    ahead and 2 in the opposite limit.
    """
    d_plus = l2_distance(e_anchor, e_pos)
    d_minus = l2_distance(e_anchor, e_neg)
    s_plus, s_minus = softmax2(d_plus, d_minus)
    return s_plus ** 2 + (s_minus - 1.0) ** 2


def _sigma(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def triplet_backward(params, tup):
    """Loss and exact parameter gradients for one triplet.

    The positive and negative branches run through the non-reference head
    (a weight-shared twin), so their weight gradients sum.
    """
    ref_head = params.head(params.reference_modality)
    oth_head = params.head(params.other_modality)
    ref_prefix = params.reference_modality
    oth_prefix = params.other_modality

    e_a, h_a = _head_forward(ref_head, tup.anchor)
    e_p, h_p = _head_forward(oth_head, tup.positive)
    e_n, h_n = _head_forward(oth_head, tup.negative)

    d_plus = l2_distance(e_a, e_p)
    d_minus = l2_distance(e_a, e_n)
    s = _sigma(d_plus - d_minus)
    loss = 2.0 * s * s
    # dL/d(delta) with delta = d+ - d-
    g_delta = 4.0 * s * s * (1.0 - s)

    diff_p = (e_a - e_p) / max(d_plus, _DIST_EPS)
    diff_n = (e_a - e_n) / max(d_minus, _DIST_EPS)
    up_a = (g_delta * (diff_p - diff_n)).astype(np.float32)
    up_p = (-g_delta * diff_p).astype(np.float32)
    up_n = (g_delta * diff_n).astype(np.float32)

    grads = zero_grads(params)
    _head_backward(ref_head, tup.anchor, h_a, up_a, grads, ref_prefix)
    _head_backward(oth_head, tup.positive, h_p, up_p, grads, oth_prefix)
    _head_backward(oth_head, tup.negative, h_n, up_n, grads, oth_prefix)
    return loss, grads


def contrastive_loss(e1, e2, same_identity, margin=1.0):
    """Margin contrastive pair loss: d^2 for matched pairs,
    max(0, margin - d)^2 for mismatched ones."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    d = l2_distance(e1, e2)
    if same_identity:
        return d * d
    return max(0.0, margin - d) ** 2


def contrastive_backward(params, tup, margin=1.0):
    """Loss and gradients for one tuple under the contrastive objective.

    The tuple contributes two pairs: (anchor, positive) matched and
    (anchor, negative) mismatched; the reported loss is their mean.
    """
    ref_head = params.head(params.reference_modality)
    oth_head = params.head(params.other_modality)

    e_a, h_a = _head_forward(ref_head, tup.anchor)
    e_p, h_p = _head_forward(oth_head, tup.positive)
    e_n, h_n = _head_forward(oth_head, tup.negative)

    d_p = l2_distance(e_a, e_p)
    d_n = l2_distance(e_a, e_n)
    loss_p = d_p * d_p
    loss_n = max(0.0, margin - d_n) ** 2
    loss = 0.5 * (loss_p + loss_n)

    # matched pair: d^2 has gradient 2*(e_a - e_p), no 1/d singularity
    up_a = (e_a - e_p).astype(np.float32)
    up_p = (e_p - e_a).astype(np.float32)
    # mismatched pair: active only inside the margin
    if d_n < margin:
        coef = -(margin - d_n) / max(d_n, _DIST_EPS)
        up_a = up_a + coef * (e_a - e_n)
        up_n = (-coef * (e_a - e_n)).astype(np.float32)
    else:
        up_n = np.zeros_like(e_n)

    grads = zero_grads(params)
    _head_backward(ref_head, tup.anchor, h_a, up_a.astype(np.float32),
                   grads, params.reference_modality)
    _head_backward(oth_head, tup.positive, h_p, up_p, grads,
                   params.other_modality)
    _head_backward(oth_head, tup.negative, h_n, up_n, grads,
                   params.other_modality)
    return loss, grads


def _classifier_forward_full(params, face_feat, voice_feat):
    c = params.classifier_head
    x = np.concatenate([np.asarray(face_feat, dtype=np.float32),
                        np.asarray(voice_feat, dtype=np.float32)])
    h1 = affine_forward(c.Wc1, c.bc1, x, relu=True)
    h2 = affine_forward(c.Wc2, c.bc2, h1, relu=True)
    logits = affine_forward(c.Wc3, c.bc3, h2, relu=False)
    m = float(np.max(logits))
    exps = np.exp(logits.astype(np.float64) - m)
    probs = exps / exps.sum()
    return probs, (x, h1, h2)


def classifier_forward(params, face_feat, voice_feat):
    """(p_match, p_nonmatch), summing to 1. Requires the classifier objective."""
    if params.objective != "classifier":
        raise ValueError("classifier_forward requires objective='classifier'")
    probs, _ = _classifier_forward_full(params, face_feat, voice_feat)
    return float(probs[0]), float(probs[1])


def classifier_pair_backward(params, face_feat, voice_feat, is_match, grads):
    """Cross-entropy loss/gradients for one (face, voice, label) pair,
    accumulated into grads. Returns the pair loss."""
    c = params.classifier_head
    probs, (x, h1, h2) = _classifier_forward_full(params, face_feat, voice_feat)
    label = 0 if is_match else 1
    loss = -math.log(max(probs[label], 1e-300))
    dlogits = probs.astype(np.float32)
    dlogits[label] -= 1.0
    gW3, gb3, gh2 = affine_backward(c.Wc3, h2, dlogits)
    gW2, gb2, gh1 = affine_backward(c.Wc2, h1, gh2, relu_mask=h2 > 0)
    gW1, gb1, _ = affine_backward(c.Wc1, x, gh1, relu_mask=h1 > 0)
    grads["classifier.Wc1"] += gW1
    grads["classifier.bc1"] += gb1
    grads["classifier.Wc2"] += gW2
    grads["classifier.bc2"] += gb2
    grads["classifier.Wc3"] += gW3
    grads["classifier.bc3"] += gb3
    return loss


def classifier_backward(params, tup):
    """Tuple loss under the classifier objective: mean cross-entropy of the
    matched (anchor, positive) and mismatched (anchor, negative) pairs."""
    grads = zero_grads(params)
    if params.direction == "V2F":
        face_p, face_n, voice = tup.positive, tup.negative, tup.anchor
        loss = classifier_pair_backward(params, face_p, voice, True, grads)
        loss += classifier_pair_backward(params, face_n, voice, False, grads)
    else:
        face = tup.anchor
        loss = classifier_pair_backward(params, face, tup.positive, True, grads)
        loss += classifier_pair_backward(params, face, tup.negative, False, grads)
    for g in grads.values():
        g *= 0.5
    return 0.5 * loss, grads


def tuple_backward(params, tup):
    """Dispatch to the objective's backward pass. Returns (loss, grads)."""
    if params.objective == "triplet":
        return triplet_backward(params, tup)
    if params.objective == "contrastive":
        return contrastive_backward(params, tup)
    return classifier_backward(params, tup)


def tuple_loss(params, tup):
    """Forward-only tuple loss (used to rank hard-mining pools)."""
    if params.objective == "triplet":
        e_a = embed(params, params.reference_modality, tup.anchor)
        e_p = embed(params, params.other_modality, tup.positive)
        e_n = embed(params, params.other_modality, tup.negative)
        return triplet_loss(e_a, e_p, e_n)
    if params.objective == "contrastive":
        e_a = embed(params, params.reference_modality, tup.anchor)
        e_p = embed(params, params.other_modality, tup.positive)
        e_n = embed(params, params.other_modality, tup.negative)
        return 0.5 * (contrastive_loss(e_a, e_p, True)
                      + contrastive_loss(e_a, e_n, False))
    probs_p, _ = _classifier_forward_full(
        params, *( (tup.positive, tup.anchor) if params.direction == "V2F"
                    else (tup.anchor, tup.positive) ))
    probs_n, _ = _classifier_forward_full(
        params, *( (tup.negative, tup.anchor) if params.direction == "V2F"
                    else (tup.anchor, tup.negative) ))
    return 0.5 * (-math.log(max(probs_p[0], 1e-300))
                  - math.log(max(probs_n[1], 1e-300)))


def score(params, face_feat, voice_feat):
    """Similarity score, higher = more likely the same identity.

    Distance-based objectives return the negated embedding distance;
    the classifier returns its match probability.
    """
    if params.objective == "classifier":
        return classifier_forward(params, face_feat, voice_feat)[0]
    e_f = embed(params, "face", face_feat)
    e_v = embed(params, "voice", voice_feat)
    return -l2_distance(e_f, e_v)


_MAGIC = b"FVCK"
_VERSION = 1
_OBJ_TAGS = {name: i for i, name in enumerate(OBJECTIVES)}
_DIR_TAGS = {name: i for i, name in enumerate(DIRECTIONS)}


def save_checkpoint(params, path):
    """Binary checkpoint: magic, version, dims, objective/direction tags,
    then every weight block as float32-LE row-major in a fixed order."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIIIBB", _VERSION, params.feature_dim,
                            params.hidden_dim, params.embed_dim,
                            _OBJ_TAGS[params.objective],
                            _DIR_TAGS[params.direction]))
        for _, arr in params.blocks():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, feature_dim, hidden_dim, embed_dim, obj_tag, dir_tag = \
            struct.unpack("<IIIIBB", f.read(18))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        objective = OBJECTIVES[obj_tag]
        direction = DIRECTIONS[dir_tag]
        params = init_params(feature_dim, hidden_dim, embed_dim,
                             objective=objective, direction=direction, seed=0)
        for _, arr in params.blocks():
            data = f.read(arr.size * 4)
            if len(data) != arr.size * 4:
                raise ValueError("truncated checkpoint")
            arr[...] = np.frombuffer(data, dtype="<f4").reshape(arr.shape)
        extra = f.read(1)
        if extra:
            raise ValueError("trailing bytes in checkpoint")
    return params
