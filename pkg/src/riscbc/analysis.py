"""Closed-form error bounds from Gaussian quadratic-form statistics.

The conditional pairwise error probability of the joint detector depends on a
squared distance that is a quadratic form of three (or two) jointly Gaussian
surrogates: the weighted element-amplitude sums of the true and the wrong
hypotheses and the direct-path amplitude.  Averaging the exponential
Q-function approximation over the surrogates turns into two evaluations of
the quadratic form's moment generating function.  Union sums over ordered
hypothesis pairs then bound the three symbol error rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import MomentSet
from .transceiver import Hypothesis, SystemConfig, hypotheses, mode_weights


def q_approx(x: float) -> float:
    """Two-exponential approximation of the Gaussian tail function."""
    if x < 0.0:
        raise ValueError("argument must be non-negative")
    return math.exp(-x * x / 2.0) / 12.0 + math.exp(-2.0 * x * x / 3.0) / 4.0


@dataclass(frozen=True, eq=False)
class QuadraticFormStats:
    """Mean, covariance, and form matrix of the Gaussian surrogate vector."""

    mean: np.ndarray
    cov: np.ndarray
    b_matrix: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.mean, self.cov, self.b_matrix):
            arr.setflags(write=False)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n) or self.b_matrix.shape != (n, n):
            raise ValueError("dimension mismatch between mean, cov, and form matrix")


def _pair_form(truth: Hypothesis, error: Hypothesis) -> np.ndarray:
    """Rank-<=2 form matrix from the real and imaginary distance projections."""
    xt = truth.x * np.exp(1j * truth.psi)
    xe = error.x * np.exp(1j * error.psi)
    dx = truth.x - error.x
    if truth.n_a != error.n_a:
        b_r = np.array([xt.real, -xe.real, dx.real])
        b_i = np.array([xt.imag, -xe.imag, dx.imag])
    else:
        b_r = np.array([(xt - xe).real, dx.real])
        b_i = np.array([(xt - xe).imag, dx.imag])
    return np.outer(b_r, b_r) + np.outer(b_i, b_i)


def _weighted_stats(n_a: int, n_hat: int, n_elements: int, moments: MomentSet,
                    hi: float, lo: float) -> tuple[float, float, float, float, float]:
    """Mean/variance/covariance of the two weighted amplitude sums.

    Element i contributes with weight ``hi`` when selected (i <= count) and
    ``lo`` otherwise; the two sums share elements, which produces the
    covariance term.
    """
    mu, s2 = moments.mu, moments.sigma2
    n = n_elements
    mean_t = (hi * n_a + lo * (n - n_a)) * mu
    mean_e = (hi * n_hat + lo * (n - n_hat)) * mu
    var_t = (hi * hi * n_a + lo * lo * (n - n_a)) * s2
    var_e = (hi * hi * n_hat + lo * lo * (n - n_hat)) * s2
    small, big = min(n_a, n_hat), max(n_a, n_hat)
    cov = (hi * hi * small + hi * lo * (big - small) + lo * lo * (n - big)) * s2
    return mean_t, mean_e, var_t, var_e, cov


def _build_stats(truth: Hypothesis, error: Hypothesis, moments: MomentSet,
                 alphabet: tuple[int, ...], n_elements: int,
                 hi: float, lo: float) -> QuadraticFormStats:
    if (truth.n_a, truth.psi, truth.x) == (error.n_a, error.psi, error.x):
        raise ValueError("hypothesis pair must be distinct")
    for value in (truth.n_a, error.n_a):
        if value not in alphabet:
            raise ValueError(f"element count {value} not in alphabet {alphabet}")
    mean_t, mean_e, var_t, var_e, cov = _weighted_stats(
        truth.n_a, error.n_a, n_elements, moments, hi, lo
    )
    if truth.n_a != error.n_a:
        mean = np.array([mean_t, mean_e, moments.mu_g])
        cov_m = np.array([
            [var_t, cov, 0.0],
            [cov, var_e, 0.0],
            [0.0, 0.0, moments.sigma_g2],
        ])
    else:
        mean = np.array([mean_t, moments.mu_g])
        cov_m = np.array([[var_t, 0.0], [0.0, moments.sigma_g2]])
    return QuadraticFormStats(mean=mean, cov=cov_m,
                              b_matrix=_pair_form(truth, error))


def build_stats_passive(truth: Hypothesis, error: Hypothesis,
                        moments: MomentSet,
                        alphabet: tuple[int, ...]) -> QuadraticFormStats:
    """Surrogate statistics for a passive surface (ON elements only)."""
    return _build_stats(truth, error, moments, alphabet, alphabet[-1], 1.0, 0.0)


def build_stats_active(truth: Hypothesis, error: Hypothesis,
                       moments: MomentSet, alphabet: tuple[int, ...],
                       xi: float, n_elements: int,
                       passive_amplitude: float = 1.0) -> QuadraticFormStats:
    """Surrogate statistics for an active surface.

    ``passive_amplitude`` is 1 when the non-amplified elements keep
    reflecting and 0 when they are switched OFF.
    """
    return _build_stats(truth, error, moments, alphabet, n_elements,
                        float(xi), passive_amplitude)


def _det(m: np.ndarray) -> float:
    # Cofactor expansion keeps the 2x2/3x3 arithmetic transparent.
    if m.shape == (2, 2):
        return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def _inv(m: np.ndarray, det: float) -> np.ndarray:
    if m.shape == (2, 2):
        return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    cof = np.array([
        [m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1],
         m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2],
         m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]],
        [m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2],
         m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0],
         m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]],
        [m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0],
         m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1],
         m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]],
    ])
    return cof / det


def mgf(stats: QuadraticFormStats, t: float) -> float:
    """Moment generating function of the quadratic form at t <= 0."""
    if t > 0.0:
        raise ValueError("the bound path only evaluates the MGF at t <= 0")
    cov = stats.cov
    diag = np.diag(cov)
    det_cov = _det(cov)
    if np.any(diag <= 0.0) or det_cov <= 0.0 or det_cov <= 1e-12 * np.prod(diag):
        raise ValueError(
            "singular surrogate covariance; the direct-path variance "
            "vanishes in the deterministic-channel limit"
        )
    n = cov.shape[0]
    core = np.eye(n) - 2.0 * t * stats.b_matrix @ cov
    det_core = _det(core)
    if det_core <= 0.0:
        raise ValueError(f"MGF undefined at t={t}: non-positive determinant")
    shrink = np.eye(n) - _inv(core, det_core)
    quad = stats.mean @ (shrink @ _inv(cov, det_cov) @ stats.mean)
    return det_core ** -0.5 * math.exp(-0.5 * quad)


def effective_noise(config: SystemConfig, moments: MomentSet, n_a: int) -> float:
    """Noise power the detector faces; includes amplifier noise when active."""
    if config.mode == "passive":
        return config.n0
    return config.xi ** 2 * n_a * moments.f_moments[1] * config.n_v + config.n0


def _stats_for_config(truth: Hypothesis, error: Hypothesis,
                      config: SystemConfig, moments: MomentSet) -> QuadraticFormStats:
    alphabet = config.bit_map.alphabet
    if config.mode == "passive":
        return build_stats_passive(truth, error, moments, alphabet)
    _, lo = mode_weights(config.mode, config.xi)
    return build_stats_active(truth, error, moments, alphabet, config.xi,
                              config.channel.n_elements, passive_amplitude=lo)


def unconditional_pep(truth: Hypothesis, error: Hypothesis,
                      config: SystemConfig, moments: MomentSet) -> float:
    """Channel-averaged pairwise error probability of the joint detector."""
    stats = _stats_for_config(truth, error, config, moments)
    n_bar = effective_noise(config, moments, truth.n_a)
    ratio = config.p_t / n_bar
    return mgf(stats, -ratio / 4.0) / 12.0 + mgf(stats, -ratio / 3.0) / 4.0


@dataclass(frozen=True)
class PepTable:
    """Unconditional PEP for every ordered pair of distinct hypotheses."""

    values: dict[tuple[str, str], float]

    def to_rows(self) -> list[dict]:
        return [
            {"truth": t, "error": e, "pep": v}
            for (t, e), v in sorted(self.values.items())
        ]


def pep_table(config: SystemConfig, moments: MomentSet) -> PepTable:
    values: dict[tuple[str, str], float] = {}
    pool = hypotheses(config.bit_map)
    for truth in pool:
        for error in pool:
            if truth.bit_label == error.bit_label:
                continue
            values[(truth.bit_label, error.bit_label)] = unconditional_pep(
                truth, error, config, moments
            )
    return PepTable(values)


class SerBounds(tuple):
    """Raw union-bound triple (active, backscatter, overall), unclamped."""

    __slots__ = ()

    def __new__(cls, active: float, backscatter: float, overall: float):
        return super().__new__(cls, (active, backscatter, overall))

    @property
    def active(self) -> float:
        return self[0]

    @property
    def backscatter(self) -> float:
        return self[1]

    @property
    def overall(self) -> float:
        return self[2]

    def clamped(self) -> tuple[float, float, float]:
        return tuple(min(1.0, v) for v in self)


def ser_bounds(config: SystemConfig, moments: MomentSet) -> SerBounds:
    """Union bounds on the three symbol error rates.

    The raw sums are returned unclamped; below-1 clamping happens in the
    reporting layer so the mathematical object stays inspectable.
    """
    pool = hypotheses(config.bit_map)
    order = config.constellation.modulation_order
    active = backscatter = overall = 0.0
    for truth in pool:
        for error in pool:
            if truth.bit_label == error.bit_label:
                continue
            pep = unconditional_pep(truth, error, config, moments)
            if error.x != truth.x:
                active += pep
            if (error.n_a, error.psi) != (truth.n_a, truth.psi):
                backscatter += pep
            overall += pep
    return SerBounds(active / order, backscatter / order, overall / order)
