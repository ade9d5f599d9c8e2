"""Halton-sequence standard-normal draws for simulating the mixing integral."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    for d in range(3, math.isqrt(n) + 1, 2):
        if n % d == 0:
            return False
    return True


def first_primes(count: int) -> tuple[int, ...]:
    primes = []
    n = 2
    while len(primes) < count:
        if _is_prime(n):
            primes.append(n)
        n += 1
    return tuple(primes)


@dataclass(frozen=True)
class HaltonConfig:
    """Draw count, burn-in and one prime base per random parameter."""

    draws_per_observation: int = 1000
    burn_in: int = 10
    bases: tuple[int, ...] = field(default_factory=lambda: first_primes(16))

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(int(b) for b in self.bases))
        if int(self.draws_per_observation) < 1:
            raise ValueError("draws_per_observation must be >= 1")
        if int(self.burn_in) < 0:
            raise ValueError("burn_in must be >= 0")
        if len(set(self.bases)) != len(self.bases):
            raise ValueError(f"bases must be distinct, got {self.bases}")
        bad = [b for b in self.bases if not _is_prime(b)]
        if bad:
            raise ValueError(f"bases must be primes, got {bad}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bases"] = list(self.bases)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HaltonConfig":
        return cls(
            draws_per_observation=int(d["draws_per_observation"]),
            burn_in=int(d["burn_in"]),
            bases=tuple(d["bases"]),
        )


@dataclass(frozen=True, eq=False)
class DrawMatrix:
    """Standard-normal draws indexed ``values[r, n, p]``."""

    values: np.ndarray
    config: HaltonConfig

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_obs(self) -> int:
        return self.values.shape[1]

    @property
    def n_params(self) -> int:
        return self.values.shape[2]


def halton_point(base: int, index: int) -> float:
    """Radical inverse of ``index`` in ``base``."""
    if not _is_prime(int(base)):
        raise ValueError(f"base must be prime, got {base}")
    if int(index) < 1:
        raise ValueError(f"index must be >= 1, got {index}")
    i = int(index)
    result = 0.0
    f = 1.0 / base
    while i > 0:
        i, digit = divmod(i, base)
        result += digit * f
        f /= base
    return result


def halton_sequence(base: int, start: int, count: int) -> np.ndarray:
    """Points ``start, start + 1, ..., start + count - 1`` of the base-``base`` stream."""
    if not _is_prime(int(base)):
        raise ValueError(f"base must be prime, got {base}")
    if start < 1:
        raise ValueError(f"start index must be >= 1, got {start}")
    idx = np.arange(start, start + count, dtype=np.int64)
    result = np.zeros(count)
    f = 1.0 / base
    while np.any(idx > 0):
        idx, digit = np.divmod(idx, base)
        result += digit * f
        f /= base
    return result


# Rational approximation coefficients (Acklam) for the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _quantile_initial(u: np.ndarray) -> np.ndarray:
    x = np.empty_like(u)
    lo = u < _P_LOW
    hi = u > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = u[mid] - 0.5
    r = q * q
    num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    x[mid] = q * num / den

    for mask, sign, tail in ((lo, 1.0, u[lo]), (hi, -1.0, 1.0 - u[hi])):
        q = np.sqrt(-2.0 * np.log(tail))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[mask] = sign * num / den
    return x


def normal_inverse_cdf(u):
    """Standard normal quantile; scalar or array input.

    Rational initial guess followed by one Halley correction against the
    complementary error function, which brings the absolute error well
    below 1e-9 on [1e-12, 1 - 1e-12].
    """
    arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("normal_inverse_cdf requires 0 < u < 1")
    flat = arr.reshape(-1)
    x = _quantile_initial(flat)
    # Halley step; residual taken on the nearer tail to avoid cancellation.
    upper = flat > 0.5
    cdf_err = np.where(
        upper,
        (1.0 - flat) - 0.5 * special.erfc(x / math.sqrt(2.0)),
        0.5 * special.erfc(-x / math.sqrt(2.0)) - flat,
    )
    t = cdf_err * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
    x = x - t / (1.0 + 0.5 * x * t)
    x[flat == 0.5] = 0.0
    out = x.reshape(arr.shape)
    if out.ndim == 0:
        return float(out)
    return out


def make_draws(config: HaltonConfig, n_obs: int, n_params: int) -> DrawMatrix:
    """Observation-specific normal draws, one Halton stream per random parameter.

    The stream for parameter ``p`` skips ``burn_in`` points and is cut into
    ``n_obs`` consecutive blocks of ``R`` points; block ``n`` belongs to
    observation ``n``.
    """
    if n_params > len(config.bases):
        raise ValueError(
            f"{n_params} random parameters but only {len(config.bases)} Halton bases"
        )
    if n_obs < 0 or n_params < 0:
        raise ValueError("n_obs and n_params must be nonnegative")
    R = config.draws_per_observation
    values = np.empty((R, n_obs, n_params))
    for p in range(n_params):
        stream = halton_sequence(config.bases[p], config.burn_in + 1, n_obs * R)
        values[:, :, p] = normal_inverse_cdf(stream).reshape(n_obs, R).T if n_obs else 0.0
    return DrawMatrix(values=values, config=config)
