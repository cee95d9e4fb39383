"""Rician fading links with distance-based path loss and closed-form moments.

Three links matter: transmitter to surface (one coefficient per element),
surface to receiver (one per element), and the direct transmitter-receiver
path.  Every link is Rician with a common K factor and its own path loss.
The closed-form amplitude moments feed the analytical error bounds.

Randomness is counter-based: every draw comes from a Philox stream keyed by
(seed, stream id, trial index), so parallel trial execution reproduces serial
results bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Stream identifiers for the per-trial Philox keys.
STREAM_CHANNEL = 1
STREAM_NOISE = 2
STREAM_LABEL = 3

_MASK32 = (1 << 32) - 1
_MASK64 = (1 << 64) - 1

_HYP1F1_MAX_TERMS = 500
_HYP1F1_RTOL = 1e-12


def stream_rng(seed: int, stream: int, trial: int) -> np.random.Generator:
    """Deterministic generator for one (seed, stream, trial) triple."""
    key = ((seed & _MASK64) << 64) | ((stream & _MASK32) << 32) | (trial & _MASK32)
    return np.random.Generator(np.random.Philox(key=key))


def complex_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)


@dataclass(frozen=True)
class ChannelParams:
    """Large-scale geometry and small-scale fading parameters.

    ``ref_loss`` is the linear power gain at 1 m; ``distances`` and
    ``exponents`` are ordered (tx-surface, surface-rx, tx-rx direct).
    """

    rician_k: float
    ref_loss: float
    distances: tuple[float, float, float]
    exponents: tuple[float, float, float]
    n_elements: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        object.__setattr__(self, "exponents", tuple(float(v) for v in self.exponents))
        if self.rician_k < 0.0:
            raise ValueError("Rician K factor must be non-negative")
        if self.ref_loss <= 0.0:
            raise ValueError("reference path loss must be positive (linear)")
        if any(d <= 0.0 for d in self.distances):
            raise ValueError("distances must be positive")
        if self.n_elements < 1:
            raise ValueError("element count must be at least 1")

    @property
    def rho1(self) -> float:
        return self.ref_loss * self.distances[0] ** -self.exponents[0]

    @property
    def rho2(self) -> float:
        return self.ref_loss * self.distances[1] ** -self.exponents[1]

    @property
    def rho3(self) -> float:
        return self.ref_loss * self.distances[2] ** -self.exponents[2]


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of all links; ``cascade`` holds |f_i||h_i| in element order."""

    h: np.ndarray
    f: np.ndarray
    g: complex
    cascade: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.h, self.f, self.cascade):
            arr.setflags(write=False)

    def cascade_prefix(self) -> np.ndarray:
        """Prefix sums of the cascade amplitudes with a leading zero."""
        cached = getattr(self, "_prefix", None)
        if cached is None:
            cached = np.concatenate(([0.0], np.cumsum(self.cascade)))
            cached.setflags(write=False)
            object.__setattr__(self, "_prefix", cached)
        return cached


def _rician_draw(rng: np.random.Generator, rho: float, k: float, size: int) -> np.ndarray:
    los = math.sqrt(k / (k + 1.0))
    scatter = math.sqrt(1.0 / (k + 1.0))
    return math.sqrt(rho) * (los + scatter * complex_normal(rng, size))


def sample_channel(params: ChannelParams, rng: np.random.Generator) -> ChannelRealization:
    """Draw one realization of all three links (fixed order: h, f, g)."""
    k = params.rician_k
    h = _rician_draw(rng, params.rho1, k, params.n_elements)
    f = _rician_draw(rng, params.rho2, k, params.n_elements)
    g = complex(_rician_draw(rng, params.rho3, k, 1)[0])
    cascade = np.abs(f) * np.abs(h)
    return ChannelRealization(h=h, f=f, g=g, cascade=cascade)


def _hyp1f1_series(alpha: float, beta: float, z: float) -> float:
    """Confluent hypergeometric series with term-ratio stopping."""
    term = 1.0
    total = 1.0
    for n in range(_HYP1F1_MAX_TERMS):
        term *= (alpha + n) * z / ((beta + n) * (n + 1))
        total += term
        if not math.isfinite(total):
            break
        if abs(term) <= _HYP1F1_RTOL * abs(total):
            return total
    raise ValueError(
        f"hypergeometric series did not converge for z={z}; "
        "argument is outside the intended regime"
    )


def rician_abs_moment(a: float, b: float, k: int) -> float:
    """k-th raw moment of a Rician amplitude.

    ``a`` is the line-of-sight amplitude and ``b`` the per-component scatter
    variance; only k = 1, 2 are needed here.
    """
    if b <= 0.0:
        raise ValueError("scatter variance must be positive")
    if k not in (1, 2):
        raise ValueError("only the first two moments are supported")
    z = a * a / (2.0 * b)
    return (
        (2.0 * b) ** (k / 2.0)
        * math.exp(-z)
        * math.gamma(1.0 + k / 2.0)
        * _hyp1f1_series(1.0 + k / 2.0, 1.0, z)
    )


@dataclass(frozen=True)
class MomentSet:
    """Closed-form amplitude moments of the links.

    ``mu``/``sigma2`` are the mean and variance of a single cascade amplitude
    |f_i||h_i|; ``mu_g``/``sigma_g2`` those of the direct-path amplitude.
    """

    mu: float
    sigma2: float
    mu_g: float
    sigma_g2: float
    h_moments: tuple[float, float]
    f_moments: tuple[float, float]
    g_moments: tuple[float, float]
    a1: float
    b1: float
    a2: float
    b2: float
    a3: float
    b3: float

    def __post_init__(self) -> None:
        if self.sigma2 <= 0.0:
            raise ValueError(
                "cascade amplitude variance is not positive; the K factor "
                "must be finite for the analytical path"
            )
        if self.sigma_g2 < 0.0:
            raise ValueError("direct-path variance must be non-negative")

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma2": self.sigma2,
            "mu_g": self.mu_g,
            "sigma_g2": self.sigma_g2,
            "h_moments": list(self.h_moments),
            "f_moments": list(self.f_moments),
            "g_moments": list(self.g_moments),
            "rician_params": {
                "a1": self.a1, "b1": self.b1,
                "a2": self.a2, "b2": self.b2,
                "a3": self.a3, "b3": self.b3,
            },
        }


def _link_params(rho: float, k: float) -> tuple[float, float]:
    return math.sqrt(rho * k / (1.0 + k)), rho / (2.0 + 2.0 * k)


def moment_set(params: ChannelParams) -> MomentSet:
    """Assemble the per-element and direct-path amplitude moments."""
    k = params.rician_k
    a1, b1 = _link_params(params.rho1, k)
    a2, b2 = _link_params(params.rho2, k)
    a3, b3 = _link_params(params.rho3, k)
    h1 = rician_abs_moment(a1, b1, 1)
    h2 = rician_abs_moment(a1, b1, 2)
    f1 = rician_abs_moment(a2, b2, 1)
    f2 = rician_abs_moment(a2, b2, 2)
    g1 = rician_abs_moment(a3, b3, 1)
    g2 = rician_abs_moment(a3, b3, 2)
    # h and f are independent, so the cascade moments factor.
    mu = h1 * f1
    sigma2 = h2 * f2 - h1 * h1 * f1 * f1
    return MomentSet(
        mu=mu,
        sigma2=sigma2,
        mu_g=g1,
        sigma_g2=g2 - g1 * g1,
        h_moments=(h1, h2),
        f_moments=(f1, f2),
        g_moments=(g1, g2),
        a1=a1, b1=b1, a2=a2, b2=b2, a3=a3, b3=b3,
    )
