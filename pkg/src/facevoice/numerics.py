"""Dense float32 kernels, a portable seeded RNG, and special functions.

Model math runs in float32 (vectors/matrices are plain numpy arrays);
statistics run in float64. Nothing here depends on platform RNGs, so every
seeded computation is bit-reproducible.
"""

import math

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z):
    """splitmix64 finalizer on a python int (mod 2^64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based splitmix64 generator.

    The i-th output (0-based) is mix64(seed + (i+1)*GAMMA) where mix64 is the
    splitmix64 finalizer. Being a pure function of (seed, counter), the stream
    is identical across platforms and the bulk path can be vectorized with
    uint64 numpy arithmetic. Instances are single-owner: never share one
    across concurrent tasks.
    """

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self):
        self.counter += 1
        return _mix64((self.seed + self.counter * _GAMMA) & MASK64)

    def u64_array(self, n):
        """n raw 64-bit draws as a uint64 array (vectorized path)."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = (np.uint64(self.seed) + idx * np.uint64(_GAMMA))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, size=None):
        """float64 in [0, 1); scalar when size is None."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0 ** -53
        n = int(np.prod(size))
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return u.reshape(size)

    def normal(self, size=None):
        """Standard normals via Box-Muller; scalar when size is None."""
        if size is None:
            return float(self.normal(1)[0])
        n = int(np.prod(size))
        m = (n + 1) // 2
        # 1-u keeps the log argument in (0, 1], avoiding log(0)
        u1 = 1.0 - self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(size)

    def randint(self, bound):
        """Uniform int in [0, bound). Modulo bias is < bound/2^64."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def shuffle(self, items):
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def spawn(self):
        """Child generator with an independent stream."""
        return Rng(self.next_u64())


def as_vec32(values):
    v = np.asarray(values, dtype=np.float32)
    if v.ndim != 1:
        raise ValueError(f"expected 1-d vector, got shape {v.shape}")
    return v


def l2_distance(a, b):
    """Euclidean distance sqrt(sum((a-b)^2)) between two equal-length vectors."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def softmax2(d_plus, d_minus):
    """Two-way softmax (e^a/(e^a+e^b), e^b/(e^a+e^b)), max-subtracted.

    Stable for inputs of any finite magnitude; outputs sum to 1.
    """
    m = max(d_plus, d_minus)
    ea = math.exp(d_plus - m)
    eb = math.exp(d_minus - m)
    z = ea + eb
    return ea / z, eb / z


def affine_forward(W, b, x, relu=False):
    """y = W @ x + b, optionally clamped elementwise at 0. Returns float32.

    With zero biases the ReLU mask is recoverable from the output (y > 0),
    which is what the backward pass of the heads relies on.
    """
    W = np.asarray(W, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32)
    if W.ndim != 2 or W.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: W {W.shape} @ x {x.shape}")
    if b.shape[0] != W.shape[0]:
        raise ValueError(f"shape mismatch: b {b.shape} vs W rows {W.shape[0]}")
    y = W @ x + b
    if relu:
        y = np.maximum(y, 0.0)
    return y.astype(np.float32)


def affine_backward(W, x, upstream, relu_mask=None):
    """Gradients of y = [relu](W @ x + b) given the upstream dL/dy.

    relu_mask is the boolean activation mask (pre-activation > 0) from the
    forward pass, or None if no ReLU was applied.
    Returns (gradW, gradb, gradx).
    """
    W = np.asarray(W, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32)
    upstream = np.asarray(upstream, dtype=np.float32)
    if upstream.shape[0] != W.shape[0] or x.shape[0] != W.shape[1]:
        raise ValueError(
            f"shape mismatch: W {W.shape}, x {x.shape}, upstream {upstream.shape}")
    if relu_mask is not None:
        upstream = upstream * relu_mask
    gradW = np.outer(upstream, x).astype(np.float32)
    gradb = upstream.astype(np.float32)
    gradx = (W.T @ upstream).astype(np.float32)
    return gradW, gradb, gradx


def _betacf(x, a, b):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    MAXIT = 300
    EPS = 1e-15
    FPMIN = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise RuntimeError(f"incomplete beta did not converge for x={x}, a={a}, b={b}")


def reg_inc_beta(x, a, b):
    """Regularized incomplete beta I_x(a, b), absolute error <= 1e-10.

    Continued-fraction evaluation; the symmetry I_x(a,b) = 1 - I_{1-x}(b,a)
    keeps the fraction in its fast-converging region.
    """
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"x={x} outside [0, 1]")
    if a <= 0 or b <= 0:
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b
