"""Probability utilities: standard-normal CDF/quantile, empirical quantiles,
seeded RNG streams, and summary statistics for Monte Carlo suites.

The normal quantile is needed at extreme tail probabilities (the pivotal
penalty evaluates the inverse CDF at 1 - 1/(3 n |V_O|^2), which can be within
1e-9 of 1), so it is computed by a rational-approximation initializer refined
by Newton steps on an erfc-based CDF rather than by table lookup.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "empirical_quantile",
    "normal_cdf",
    "normal_pdf",
    "normal_quantile",
    "summarize",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(x: float) -> float:
    """Standard normal CDF, accurate to ~1 ulp in absolute terms.

    Uses the complementary error function so that both tails keep full
    relative precision.
    """
    if x < 0.0:
        return 0.5 * math.erfc(-x / _SQRT2)
    return 1.0 - 0.5 * math.erfc(x / _SQRT2)


def normal_pdf(x: float) -> float:
    """Standard normal density."""
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


# Rational approximation coefficients (Acklam's inverse-normal initializer,
# |relative error| < 1.2e-9 on (0,1)); Newton refinement below removes the
# remaining error.
_ACKLAM_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def _quantile_initial(p: float) -> float:
    # p is in (0, 0.5]; return the lower-half initializer.
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        a1, a2, a3, a4, a5, a6 = _ACKLAM_C
        b1, b2, b3, b4 = _ACKLAM_D
        num = ((((a1 * q + a2) * q + a3) * q + a4) * q + a5) * q + a6
        den = (((b1 * q + b2) * q + b3) * q + b4) * q + 1.0
        return num / den
    q = p - 0.5
    r = q * q
    a1, a2, a3, a4, a5, a6 = _ACKLAM_A
    b1, b2, b3, b4, b5 = _ACKLAM_B
    num = (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q
    den = ((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0
    return num / den


def normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF.

    |CDF(result) - p| <= 1e-12 for p in [1e-15, 1-1e-15].  Raises ValueError
    outside (0, 1).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie strictly in (0,1), got {p!r}")
    if p == 0.5:
        return 0.0
    # Work on the lower half; the CDF there is computable with full relative
    # accuracy, and the quantile is odd around 1/2.
    flip = p > 0.5
    pl = 1.0 - p if flip else p
    x = _quantile_initial(pl)
    for _ in range(3):
        err = 0.5 * math.erfc(-x / _SQRT2) - pl
        dens = normal_pdf(x)
        if dens <= 0.0:
            break
        step = err / dens
        # Halley correction: quadratic convergence is enough, but the extra
        # term costs nothing and keeps huge initializer errors harmless.
        x -= step / (1.0 + 0.5 * step * x)
    return -x if flip else x


def empirical_quantile(samples, q: float, rule: str = "ceiling_rank") -> float:
    """Order-statistic quantile: the k-th smallest with k = ceil(q*B).

    k is clamped to [1, B]; the ceiling rank makes the estimate conservative
    (never below the usual interpolated quantile).
    """
    if rule != "ceiling_rank":
        raise ValueError(f"unknown quantile rule {rule!r}")
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empirical_quantile requires a non-empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level must lie in [0,1], got {q!r}")
    k = math.ceil(q * arr.size)
    k = min(max(k, 1), arr.size)
    return float(np.partition(arr, k - 1)[k - 1])


def summarize(values) -> dict:
    """Median / IQR / mean / sd summary used by the sweep reports."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("summarize requires a non-empty sample")
    q25, q50, q75 = np.percentile(arr, [25.0, 50.0, 75.0])
    return {
        "n": int(arr.size),
        "median": float(q50),
        "iqr": float(q75 - q25),
        "mean": float(arr.mean()),
        "sd": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def _path_digest(path: tuple) -> tuple:
    """Hash a stream path into two 64-bit words, stably across runs.

    The path is serialized unambiguously (type tag + length + payload per
    component) and digested as a whole; a fixed-width digest sidesteps
    SeedSequence's trailing-zero entropy stripping, under which e.g. the
    entropy tuples (99,) and (99, 0) are identical.
    """
    h = hashlib.blake2b(digest_size=16)
    for part in path:
        if isinstance(part, bool) or not isinstance(part, (int, np.integer, str)):
            raise TypeError(
                f"stream path components must be int or str, got {type(part)!r}"
            )
        payload = (str(int(part)) if not isinstance(part, str) else part).encode("utf-8")
        tag = b"i" if not isinstance(part, str) else b"s"
        h.update(tag)
        h.update(len(payload).to_bytes(4, "little"))
        h.update(payload)
    digest = h.digest()
    return (
        int.from_bytes(digest[:8], "little"),
        int.from_bytes(digest[8:], "little"),
    )


@dataclass(frozen=True)
class RngStream:
    """A value-typed handle to a counter-based random stream.

    Streams are addressed by (root seed, path); children fork by extending the
    path, so parallel work items can derive their own independent streams in
    any order.  The underlying bit generator is Philox keyed from a
    SeedSequence over the encoded path, which makes identical paths reproduce
    identical sequences and distinct paths statistically independent.
    """

    root_seed: int
    path: tuple = ()

    def child(self, *parts) -> "RngStream":
        return RngStream(self.root_seed, self.path + tuple(parts))

    def _entropy(self) -> tuple:
        return (int(self.root_seed) & 0xFFFFFFFFFFFFFFFF,) + _path_digest(self.path)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self._entropy())
        key = seq.generate_state(2, np.uint64)
        return np.random.Generator(np.random.Philox(key=key))
