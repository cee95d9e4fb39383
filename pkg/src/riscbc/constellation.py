"""Max-min-distance APSK constellations realized through RIS element counts.

An APSK constellation is a set of concentric PSK rings.  Here the ring
amplitudes are produced by the number of reflecting elements a surface keeps
ON (passive mode) or amplified (active mode), and the ring phases by a common
surface phase offset stacked on an A-ary PSK source symbol.  This module owns:

* the ring schedule and its validity rules,
* the exhaustive grid search for the ring-radius ratios that maximize the
  minimum squared Euclidean distance,
* the ON/amplified element-count alphabets for passive and active surfaces,
* the bit-mapping table tying bit labels to (source symbol, element count,
  phase offset) triples.

All types are immutable after construction and all functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Heuristic cap on adjacent-ring radius ratios; ratios live in the open
# interval (1, RATIO_CAP).
RATIO_CAP = 4.0

# Exhaustive search cost guard: the grid is (RATIO_CAP-1)/step points per
# ring gap, so more than three gaps is impractical at the default step.
MAX_OPTIMIZER_RINGS = 4

_ALPHABET_SEARCH_CAP = 1 << 20


def round_half_up(value: float) -> int:
    """Round a non-negative quantity half away from zero."""
    return int(math.floor(value + 0.5))


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _gray_decode(code: int) -> int:
    """Invert the Gray encoding m -> m ^ (m >> 1)."""
    m = 0
    while code:
        m ^= code
        code >>= 1
    return m


@dataclass(frozen=True)
class RingSchedule:
    """Ring layout of an APSK constellation fed by an A-ary PSK source.

    ``ring_counts`` lists the points per ring from the innermost outwards and
    ``active_order`` is the PSK order of the source symbol.  Every ring count
    must be a positive multiple of the active order so the common phase grid
    tiles each ring exactly.
    """

    ring_counts: tuple[int, ...]
    active_order: int = 1

    def __post_init__(self) -> None:
        counts = tuple(int(n) for n in self.ring_counts)
        object.__setattr__(self, "ring_counts", counts)
        object.__setattr__(self, "active_order", int(self.active_order))
        if not counts:
            raise ValueError("schedule needs at least one ring")
        if any(n <= 0 for n in counts):
            raise ValueError("ring point counts must be positive")
        if any(a > b for a, b in zip(counts, counts[1:])):
            raise ValueError("ring point counts must not decrease outwards")
        order = sum(counts)
        if order < 2 or not _is_power_of_two(order):
            raise ValueError(f"total constellation size {order} must be a power of two >= 2")
        a = self.active_order
        if not _is_power_of_two(a):
            raise ValueError(f"active order {a} must be a power of two")
        bad = [n for n in counts if n % a]
        if bad:
            raise ValueError(
                f"ring counts {bad} are not multiples of the active order {a}"
            )

    @property
    def rings(self) -> int:
        return len(self.ring_counts)

    @property
    def modulation_order(self) -> int:
        return sum(self.ring_counts)

    @property
    def backscatter_order(self) -> int:
        return self.modulation_order // self.active_order

    def __str__(self) -> str:
        return "+".join(str(n) for n in self.ring_counts)


def _check_ratios(ratios: tuple[float, ...]) -> None:
    for g in ratios:
        if not (1.0 < g < RATIO_CAP):
            raise ValueError(
                f"ring ratio {g} outside the open interval (1, {RATIO_CAP})"
            )


def _radii_from_ratios(ratios: tuple[float, ...], rings: int) -> tuple[float, ...]:
    # Outermost radius normalized to 1; work inwards dividing by each ratio.
    radii = [1.0] * rings
    for k in range(rings - 2, -1, -1):
        radii[k] = radii[k + 1] / ratios[k]
    return tuple(radii)


def ring_distances(
    schedule: RingSchedule, ratios: tuple[float, ...]
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Candidate squared distances: within each ring and between adjacent rings.

    With zero phase offsets the minimum pairwise distance of the full
    constellation is always attained by one of these candidates, so the grid
    search only has to scan them.
    """
    ratios = tuple(float(g) for g in ratios)
    if len(ratios) != schedule.rings - 1:
        raise ValueError(
            f"expected {schedule.rings - 1} ratios, got {len(ratios)}"
        )
    _check_ratios(ratios)
    radii = _radii_from_ratios(ratios, schedule.rings)
    intra = tuple(
        2.0 * r * r * (1.0 - math.cos(2.0 * math.pi / n))
        for r, n in zip(radii, schedule.ring_counts)
    )
    inter = tuple(
        (g - 1.0) ** 2 * radii[k] ** 2 for k, g in enumerate(ratios)
    )
    return intra, inter


def _min_candidate_distance(schedule: RingSchedule, ratios: tuple[float, ...]) -> float:
    intra, inter = ring_distances(schedule, ratios)
    # A one-point ring has no intra-ring pair; drop its degenerate candidate.
    values = [d for d, n in zip(intra, schedule.ring_counts) if n >= 2]
    values.extend(inter)
    return min(values)


@dataclass(frozen=True)
class ApskConstellation:
    """An APSK constellation with outer radius 1 and zero phase offsets."""

    schedule: RingSchedule
    radius_ratios: tuple[float, ...]
    radii: tuple[float, ...]
    phase_offsets: tuple[float, ...]
    points: tuple[complex, ...]
    min_sq_distance: float

    @classmethod
    def from_ratios(
        cls, schedule: RingSchedule, ratios: tuple[float, ...]
    ) -> "ApskConstellation":
        ratios = tuple(float(g) for g in ratios)
        if len(ratios) != schedule.rings - 1:
            raise ValueError(
                f"expected {schedule.rings - 1} ratios, got {len(ratios)}"
            )
        _check_ratios(ratios)
        radii = _radii_from_ratios(ratios, schedule.rings)
        points: list[complex] = []
        for r, n in zip(radii, schedule.ring_counts):
            for i in range(n):
                points.append(r * complex(math.cos(2.0 * math.pi * i / n),
                                          math.sin(2.0 * math.pi * i / n)))
        return cls(
            schedule=schedule,
            radius_ratios=ratios,
            radii=radii,
            phase_offsets=(0.0,) * schedule.rings,
            points=tuple(points),
            min_sq_distance=_min_candidate_distance(schedule, ratios),
        )

    @property
    def modulation_order(self) -> int:
        return self.schedule.modulation_order

    def points_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=complex)

    def to_dict(self) -> dict:
        return {
            "schedule": str(self.schedule),
            "ring_counts": list(self.schedule.ring_counts),
            "active_order": self.schedule.active_order,
            "radius_ratios": list(self.radius_ratios),
            "radii": list(self.radii),
            "phase_offsets": list(self.phase_offsets),
            "points": [[p.real, p.imag] for p in self.points],
            "min_sq_distance": self.min_sq_distance,
        }


def _ratio_grid(grid_step: float) -> np.ndarray:
    n = int(math.floor((RATIO_CAP - 1.0) / grid_step)) + 1
    values = 1.0 + grid_step * np.arange(1, n + 1)
    return values[values < RATIO_CAP - 1e-12]


def _objective_batch(schedule: RingSchedule, ratios: np.ndarray) -> np.ndarray:
    """Minimum candidate distance for a batch of ratio vectors (T, rings-1)."""
    counts = schedule.ring_counts
    rings = len(counts)
    radii = np.empty((ratios.shape[0], rings))
    radii[:, -1] = 1.0
    for k in range(rings - 2, -1, -1):
        radii[:, k] = radii[:, k + 1] / ratios[:, k]
    objective = np.full(ratios.shape[0], np.inf)
    for k, n in enumerate(counts):
        if n >= 2:
            c = 2.0 * (1.0 - math.cos(2.0 * math.pi / n))
            np.minimum(objective, c * radii[:, k] ** 2, out=objective)
    for k in range(rings - 1):
        np.minimum(objective, (ratios[:, k] - 1.0) ** 2 * radii[:, k] ** 2,
                   out=objective)
    return objective


def optimize_ratios(schedule: RingSchedule, grid_step: float = 0.01) -> ApskConstellation:
    """Grid search of the ratio vector maximizing the minimum squared distance.

    The grid covers (1, RATIO_CAP) per ratio with the given step.  Ties are
    broken towards the lexicographically smallest ratio vector, which makes
    the search deterministic on the flat stretches that occur when an outer
    intra-ring distance pins the objective.
    """
    if grid_step <= 0.0:
        raise ValueError("grid step must be positive")
    if schedule.rings > MAX_OPTIMIZER_RINGS:
        raise ValueError(
            f"exhaustive search limited to {MAX_OPTIMIZER_RINGS} rings; "
            f"got {schedule.rings}"
        )
    if schedule.rings == 1:
        return ApskConstellation.from_ratios(schedule, ())

    grid = _ratio_grid(grid_step)
    dims = schedule.rings - 1
    if dims == 1:
        objective = _objective_batch(schedule, grid[:, None])
        best = (float(grid[int(np.argmax(objective))]),)
        return ApskConstellation.from_ratios(schedule, best)

    # Scan the leading ratio one value at a time to bound memory; the tail of
    # the vector is fully vectorized.  C-order ravel keeps the scan
    # lexicographic, so argmax lands on the smallest tied vector.
    mesh = np.meshgrid(*([grid] * (dims - 1)), indexing="ij")
    tail = np.stack([m.ravel() for m in mesh], axis=1)
    best_obj = -np.inf
    best: tuple[float, ...] = ()
    block = np.empty((tail.shape[0], dims))
    block[:, 1:] = tail
    for g0 in grid:
        block[:, 0] = g0
        objective = _objective_batch(schedule, block)
        i = int(np.argmax(objective))
        if objective[i] > best_obj:
            best_obj = float(objective[i])
            best = tuple(float(v) for v in block[i])
    return ApskConstellation.from_ratios(schedule, best)


def _validate_alphabet(values: tuple[int, ...], n_elements: int,
                       retry) -> tuple[int, ...]:
    """Reject alphabets whose rounded entries collide or drop to zero."""
    ok = values[0] >= 1 and all(a < b for a, b in zip(values, values[1:]))
    if ok:
        return values
    n = n_elements + 1
    while n <= _ALPHABET_SEARCH_CAP:
        cand = retry(n)
        if cand[0] >= 1 and all(a < b for a, b in zip(cand, cand[1:])):
            break
        n += 1
    else:
        raise ValueError(
            f"element-count alphabet {values} has colliding entries at "
            f"N={n_elements} and no workable N was found"
        )
    raise ValueError(
        f"element-count alphabet {values} has colliding entries at "
        f"N={n_elements}; the smallest N separating all rings is {n}"
    )


def passive_na_alphabet(constellation: ApskConstellation, n_elements: int) -> tuple[int, ...]:
    """ON-element counts realizing each ring radius with a passive surface.

    Entry k is N divided by the product of the ratios outward of ring k,
    rounded half away from zero; the outermost ring uses every element.
    """
    if n_elements < 1:
        raise ValueError("element count must be at least 1")
    ratios = constellation.radius_ratios
    rings = constellation.schedule.rings

    def compute(n: int) -> tuple[int, ...]:
        values = [
            round_half_up(n / math.prod(ratios[k:])) for k in range(rings - 1)
        ]
        values.append(n)
        return tuple(values)

    return _validate_alphabet(compute(n_elements), n_elements, compute)


class ActiveAlphabet(NamedTuple):
    """Amplified-element counts plus the resolved surface operating mode."""

    values: tuple[int, ...]
    off_mode: bool


def active_na_alphabet(
    constellation: ApskConstellation, n_elements: int, xi: float
) -> ActiveAlphabet:
    """Amplified-element counts for an active surface with gain ``xi``.

    When ``xi`` is at least the product of all ring ratios, the non-amplified
    elements keep reflecting with unit amplitude and the counts solve the
    ring-radius equations for that mixed pattern.  Otherwise the inner-ring
    count would be driven below one, so the non-amplified elements are turned
    OFF instead and the passive alphabet applies unchanged; the flag in the
    result records which mode was used.
    """
    if xi <= 1.0:
        raise ValueError("amplification gain must exceed 1")
    if n_elements < 1:
        raise ValueError("element count must be at least 1")
    ratios = constellation.radius_ratios
    rings = constellation.schedule.rings
    full_product = math.prod(ratios) if ratios else 1.0
    if xi < full_product:
        return ActiveAlphabet(passive_na_alphabet(constellation, n_elements), True)

    def compute(n: int) -> tuple[int, ...]:
        values = [
            round_half_up((xi * n / math.prod(ratios[k:]) - n) / (xi - 1.0))
            for k in range(rings - 1)
        ]
        values.append(n)
        return tuple(values)

    values = _validate_alphabet(compute(n_elements), n_elements, compute)
    return ActiveAlphabet(values, False)


class BitMapEntry(NamedTuple):
    label: str
    x: complex
    n_a: int
    psi: float


@dataclass(frozen=True)
class BitMap:
    """Bit labels for every (source symbol, element count, phase) triple.

    Labels are natural binary with the source-symbol bits first.  The source
    bits are Gray-mapped onto the A-PSK circle; the backscatter bits walk the
    rings from the innermost outwards and, within a ring, the phase slots in
    increasing order.
    """

    entries: tuple[BitMapEntry, ...]
    active_symbols: tuple[complex, ...]
    backscatter_pairs: tuple[tuple[int, float], ...]
    ring_of_symbol: tuple[int, ...]
    alphabet: tuple[int, ...]
    mode: str
    xi: float | None

    @property
    def active_order(self) -> int:
        return len(self.active_symbols)

    @property
    def backscatter_order(self) -> int:
        return len(self.backscatter_pairs)

    @property
    def label_bits(self) -> int:
        return len(self.entries[0].label)

    def entry(self, label: str) -> BitMapEntry:
        index = int(label, 2)
        if not 0 <= index < len(self.entries) or len(label) != self.label_bits:
            raise ValueError(f"label {label!r} is not a {self.label_bits}-bit label")
        return self.entries[index]

    def index_of(self, n_a: int, psi: float, x: complex) -> int:
        """Recover the label index of a transmit triple (exact round trip)."""
        for p_val, (na, ps) in enumerate(self.backscatter_pairs):
            if na == n_a and abs(ps - psi) < 1e-9:
                break
        else:
            raise ValueError(f"({n_a}, {psi}) is not a backscatter symbol")
        for a_val, sym in enumerate(self.active_symbols):
            if abs(sym - x) < 1e-9:
                return a_val * self.backscatter_order + p_val
        raise ValueError(f"{x} is not a source symbol")

    def to_rows(self) -> list[dict]:
        return [
            {"label": e.label, "x": [e.x.real, e.x.imag], "n_a": e.n_a, "psi": e.psi}
            for e in self.entries
        ]


BIT_MAP_MODES = ("passive", "active-on", "active-off")


def resolve_mode(mode: str, constellation: ApskConstellation, xi: float | None) -> str:
    """Expand the 'active' shorthand into the concrete operating mode."""
    if mode == "active":
        if xi is None:
            raise ValueError("active mode needs an amplification gain")
        product = math.prod(constellation.radius_ratios) if constellation.radius_ratios else 1.0
        return "active-on" if xi >= product else "active-off"
    return mode


def build_bit_map(
    constellation: ApskConstellation,
    n_elements: int,
    mode: str = "passive",
    xi: float | None = None,
) -> BitMap:
    """Construct the bit-mapping table for the given surface operating mode."""
    mode = resolve_mode(mode, constellation, xi)
    if mode not in BIT_MAP_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    schedule = constellation.schedule
    if mode == "passive":
        alphabet = passive_na_alphabet(constellation, n_elements)
        xi_used = None
    else:
        if xi is None:
            raise ValueError(f"mode {mode!r} needs an amplification gain")
        if mode == "active-on":
            active = active_na_alphabet(constellation, n_elements, xi)
            if active.off_mode:
                raise ValueError(
                    f"gain {xi} is below the ring-ratio product; "
                    "use mode 'active-off'"
                )
            alphabet = active.values
        else:
            # OFF mode: non-amplified elements do not reflect, so the passive
            # counts reproduce the same constellation scaled by the gain.
            alphabet = passive_na_alphabet(constellation, n_elements)
        xi_used = float(xi)

    a = schedule.active_order
    active_symbols = tuple(
        complex(math.cos(2.0 * math.pi * _gray_decode(v) / a),
                math.sin(2.0 * math.pi * _gray_decode(v) / a))
        for v in range(a)
    )

    backscatter_pairs: list[tuple[int, float]] = []
    ring_of_symbol: list[int] = []
    for k, n in enumerate(schedule.ring_counts):
        for slot in range(n // a):
            backscatter_pairs.append((alphabet[k], 2.0 * math.pi * slot / n))
            ring_of_symbol.append(k)

    p = len(backscatter_pairs)
    a_bits = (a - 1).bit_length()
    p_bits = (p - 1).bit_length()
    bits = a_bits + p_bits
    entries = []
    for label_value in range(a * p):
        a_val, p_val = divmod(label_value, p)
        n_a, psi = backscatter_pairs[p_val]
        entries.append(
            BitMapEntry(
                label=format(label_value, f"0{bits}b"),
                x=active_symbols[a_val],
                n_a=n_a,
                psi=psi,
            )
        )
    return BitMap(
        entries=tuple(entries),
        active_symbols=active_symbols,
        backscatter_pairs=tuple(backscatter_pairs),
        ring_of_symbol=tuple(ring_of_symbol),
        alphabet=alphabet,
        mode=mode,
        xi=xi_used,
    )


def export_constellation(
    constellation: ApskConstellation, bit_map: BitMap | None = None
) -> dict:
    """JSON-ready export of a constellation and, optionally, its bit map."""
    payload = constellation.to_dict()
    payload["rounding"] = "half-away-from-zero"
    if bit_map is not None:
        payload["mode"] = bit_map.mode
        payload["xi"] = bit_map.xi
        payload["na_alphabet"] = list(bit_map.alphabet)
        payload["bit_map"] = bit_map.to_rows()
    return payload
