"""Signal synthesis and detection for surface-borne APSK transmissions.

The surface conveys its own bits through the number of reflecting elements it
keeps ON (or amplified) and a common phase offset added on top of the
per-element coherent phases.  The receiver sees one complex sample per use
and decodes the source symbol and the surface symbol jointly, either by full
maximum-likelihood search or by a two-stage shortlist detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams, ChannelRealization, complex_normal
from .constellation import ApskConstellation, BitMap

MODES = ("passive", "active-on", "active-off")


def mode_weights(mode: str, xi: float) -> tuple[float, float]:
    """Reflection amplitudes (selected elements, remaining elements)."""
    if mode == "passive":
        return 1.0, 0.0
    if mode == "active-on":
        return float(xi), 1.0
    if mode == "active-off":
        return float(xi), 0.0
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class SystemConfig:
    """Immutable bundle of everything a link simulation needs.

    Powers are linear milliwatts.  ``n0`` is receiver noise, ``n_v`` the
    per-element amplifier noise of an active surface, and ``xi`` its gain.
    """

    channel: ChannelParams
    constellation: ApskConstellation
    bit_map: BitMap
    p_t: float
    n0: float
    n_v: float
    xi: float
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.p_t <= 0.0:
            raise ValueError("transmit power must be positive")
        # Zero noise powers are allowed so exactness checks can run noiseless.
        if self.n0 < 0.0 or self.n_v < 0.0:
            raise ValueError("noise powers must be non-negative")
        if self.xi < 1.0:
            raise ValueError("amplification gain must be at least 1")
        if self.mode == "active-on":
            product = math.prod(self.constellation.radius_ratios)
            if self.xi < product:
                raise ValueError(
                    f"gain {self.xi} below ring-ratio product {product:.4f}; "
                    "the mixed amplified/reflecting mode is infeasible"
                )
        if self.bit_map.mode != self.mode:
            raise ValueError(
                f"bit map was built for mode {self.bit_map.mode!r}, "
                f"config uses {self.mode!r}"
            )


@dataclass(frozen=True)
class Hypothesis:
    """A transmit triple with its bit label."""

    n_a: int
    psi: float
    x: complex
    bit_label: str


@dataclass(frozen=True, eq=False)
class ReceivedSample:
    # realization is the channel draw the sample was synthesized from (the
    # multi-antenna path stores its own channel type here)
    y: complex
    realization: object
    truth: Hypothesis


def hypotheses(bit_map: BitMap) -> tuple[Hypothesis, ...]:
    """All transmit triples in bit-label order."""
    return tuple(
        Hypothesis(n_a=e.n_a, psi=e.psi, x=e.x, bit_label=e.label)
        for e in bit_map.entries
    )


def configure_phases(realization: ChannelRealization, psi: float) -> np.ndarray:
    """Per-element phases: cancel the cascade phase, steer to the direct path,
    then add the common surface offset.  Wrapped to [0, 2*pi)."""
    phases = -np.angle(realization.f * realization.h) + np.angle(realization.g) + psi
    return np.mod(phases, 2.0 * math.pi)


def _prefix_amplitude(config: SystemConfig, realization: ChannelRealization,
                      n_a: int) -> float:
    hi, lo = mode_weights(config.mode, config.xi)
    prefix = realization.cascade_prefix()
    total = prefix[-1]
    return hi * prefix[n_a] + lo * (total - prefix[n_a])


def noiseless_signal(config: SystemConfig, realization: ChannelRealization,
                     hypothesis: Hypothesis) -> complex:
    """Receiver-side noiseless sample for one transmit triple.

    The element count is not required to belong to the alphabet, which keeps
    this usable for algebraic reduction checks.
    """
    if not 0 <= hypothesis.n_a <= config.channel.n_elements:
        raise ValueError(f"element count {hypothesis.n_a} out of range")
    amp = _prefix_amplitude(config, realization, hypothesis.n_a)
    g = realization.g
    return (
        math.sqrt(config.p_t)
        * (np.exp(1j * hypothesis.psi) * amp + abs(g))
        * hypothesis.x
        * np.exp(1j * np.angle(g))
    )


def draw_noise(config: SystemConfig, realization: ChannelRealization,
               hypothesis: Hypothesis, rng: np.random.Generator) -> complex:
    """Total receiver noise for one use; mode aware.

    Active modes synthesize the amplifier noise exactly per element rather
    than through its Gaussian variance approximation.
    """
    w = complex(complex_normal(rng, 1)[0]) * math.sqrt(config.n0)
    if config.mode == "passive":
        return w
    v = complex_normal(rng, config.channel.n_elements) * math.sqrt(config.n_v)
    n_a = hypothesis.n_a
    phase = np.exp(1j * (-np.angle(realization.h[:n_a]) + np.angle(realization.g)))
    amplified = config.xi * np.exp(1j * hypothesis.psi) * np.sum(
        np.abs(realization.f[:n_a]) * phase * v[:n_a]
    )
    return w + complex(amplified)


def _transmit(config: SystemConfig, realization: ChannelRealization,
              hypothesis: Hypothesis, rng: np.random.Generator) -> ReceivedSample:
    if hypothesis.n_a not in config.bit_map.alphabet:
        raise ValueError(
            f"element count {hypothesis.n_a} not in the alphabet "
            f"{config.bit_map.alphabet}"
        )
    y = noiseless_signal(config, realization, hypothesis) + draw_noise(
        config, realization, hypothesis, rng
    )
    return ReceivedSample(y=y, realization=realization, truth=hypothesis)


def transmit_passive(config: SystemConfig, realization: ChannelRealization,
                     hypothesis: Hypothesis, rng: np.random.Generator) -> ReceivedSample:
    if config.mode != "passive":
        raise ValueError(f"config mode is {config.mode!r}, expected 'passive'")
    return _transmit(config, realization, hypothesis, rng)


def transmit_active(config: SystemConfig, realization: ChannelRealization,
                    hypothesis: Hypothesis, rng: np.random.Generator) -> ReceivedSample:
    if config.mode not in ("active-on", "active-off"):
        raise ValueError(f"config mode is {config.mode!r}, expected an active mode")
    return _transmit(config, realization, hypothesis, rng)


def backscatter_amplitudes(config: SystemConfig,
                           realization: ChannelRealization) -> np.ndarray:
    """Channel amplitude seen by each surface symbol, in symbol order."""
    hi, lo = mode_weights(config.mode, config.xi)
    prefix = realization.cascade_prefix()
    total = prefix[-1]
    counts = np.fromiter((na for na, _ in config.bit_map.backscatter_pairs), dtype=int)
    partial = prefix[counts]
    return hi * partial + lo * (total - partial)


def model_vector(config: SystemConfig, realization: ChannelRealization) -> np.ndarray:
    """Noiseless receive values of all hypotheses, in bit-label order."""
    bit_map = config.bit_map
    amps = backscatter_amplitudes(config, realization)
    psis = np.fromiter((psi for _, psi in bit_map.backscatter_pairs), dtype=float)
    g = realization.g
    core = np.exp(1j * psis) * amps + abs(g)
    x = np.asarray(bit_map.active_symbols)
    models = core[None, :] * x[:, None] * np.exp(1j * np.angle(g))
    return math.sqrt(config.p_t) * models.reshape(-1)


def ml_detect(config: SystemConfig, realization: ChannelRealization,
              y: complex) -> Hypothesis:
    """Joint maximum-likelihood detection over every hypothesis.

    Metric ties resolve to the smallest bit label, which is what the
    first-occurrence argmin over label-ordered models yields.
    """
    models = model_vector(config, realization)
    index = int(np.argmin(np.abs(y - models) ** 2))
    return hypotheses(config.bit_map)[index]


def lc_detect(config: SystemConfig, realization: ChannelRealization, y: complex,
              n_candidates: int, counts: dict | None = None) -> Hypothesis:
    """Two-stage shortlist detection.

    Stage one scores each source symbol against an anchor built from the mean
    of the surface symbols and keeps the ``n_candidates`` best; stage two runs
    the joint metric on the shortlist only.  With a full shortlist the result
    matches :func:`ml_detect` pointwise.
    """
    bit_map = config.bit_map
    a = bit_map.active_order
    p = bit_map.backscatter_order
    if not 1 <= n_candidates <= a:
        raise ValueError(f"shortlist size {n_candidates} outside [1, {a}]")
    amps = backscatter_amplitudes(config, realization)
    psis = np.fromiter((psi for _, psi in bit_map.backscatter_pairs), dtype=float)
    g = realization.g
    anchor = np.mean(np.exp(1j * psis) * amps)
    base = math.sqrt(config.p_t) * (anchor + abs(g)) * np.exp(1j * np.angle(g))
    x = np.asarray(bit_map.active_symbols)
    stage1 = np.abs(y - base * x) ** 2
    shortlist = np.sort(np.argsort(stage1, kind="stable")[:n_candidates])

    models = model_vector(config, realization).reshape(a, p)
    restricted = models[shortlist]
    flat = int(np.argmin(np.abs(y - restricted) ** 2))
    a_val = int(shortlist[flat // p])
    index = a_val * p + flat % p
    if counts is not None:
        counts["stage1"] = a
        counts["stage2"] = n_candidates * p
    return hypotheses(bit_map)[index]
