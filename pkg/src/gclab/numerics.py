"""Float64 primitives: stable reductions, a counter-based RNG, and a
central-difference gradient oracle used by the test suites."""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyInputError, NonFiniteEvaluationError, ZeroNormError

NORM_FLOOR = 1e-30

# SplitMix64 constants (Steele, Lea & Flood 2014).
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_U64 = 0xFFFFFFFFFFFFFFFF


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream with fixed constants.

    Draw k is mix64(seed + (k+1)*GAMMA) mod 2^64, so the state is just
    (seed, counter): the stream is seekable, serializes to two integers,
    and is identical on every platform for a given seed.
    """

    def __init__(self, seed: int, counter: int = 0):
        if seed < 0 or counter < 0:
            raise ValueError("seed and counter must be non-negative")
        self.seed = int(seed) & _U64
        self.counter = int(counter)

    def _raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit draws as a uint64 array."""
        ks = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        return _mix64(np.uint64(self.seed) + ks * np.uint64(_GAMMA))

    def u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, low=0.0, high=1.0, size=None):
        """Uniform floats in [low, high) built from the top 53 bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        return float(out[0]) if size is None else out.reshape(size)

    def normal(self, size=None):
        """Standard normals via Box-Muller (one normal per pair of draws)."""
        n = 1 if size is None else int(np.prod(size))
        raw = self._raw(2 * n)
        # u1 in (0, 1] so log never sees zero.
        u1 = ((raw[:n] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[n:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, n: int, upper: int) -> np.ndarray:
        """n draws uniform over {0, ..., upper-1} (multiply-shift, no bias
        beyond 2^-64)."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        raws = self._raw(n)
        return np.array([(int(r) * upper) >> 64 for r in raws], dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of arange(n)."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        raws = self._raw(n - 1)
        for i in range(n - 1, 0, -1):
            j = (int(raws[n - 1 - i]) * (i + 1)) >> 64
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def state(self) -> tuple[int, int]:
        return self.seed, self.counter

    @classmethod
    def from_state(cls, seed: int, counter: int) -> "Rng":
        return cls(seed, counter)


def cosine(a, b) -> float:
    """Cosine similarity a.b / (|a||b|), clipped only by float rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ZeroNormError(f"norms {na:g}, {nb:g} below {NORM_FLOOR:g}")
    return float(a @ b) / (na * nb)


def log_sum_exp_mean(xs) -> float:
    """log((1/m) * sum(exp(x_i))) with max shift; exact for constant rows."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise EmptyInputError("log_sum_exp_mean of empty input")
    m = float(np.max(xs))
    return m + math.log(float(np.mean(np.exp(xs - m))))


def finite_diff_grad(f, theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(theta))
        flat[i] = orig - h
        fm = float(f(theta))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteEvaluationError(f"f non-finite at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_rel_error(g, g_hat) -> float:
    """max_i |g - g_hat| / max(1, |g|, |g_hat|), the comparator used by all
    gradient checks."""
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    g_hat = np.asarray(g_hat, dtype=np.float64).reshape(-1)
    if g.shape != g_hat.shape:
        raise ValueError("shape mismatch in gradient comparison")
    denom = np.maximum(1.0, np.maximum(np.abs(g), np.abs(g_hat)))
    return float(np.max(np.abs(g - g_hat) / denom)) if g.size else 0.0
