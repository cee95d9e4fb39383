"""Experiment orchestration: configuration, Monte Carlo sweeps, file emission.

A sweep walks a list of transmit powers; each trial draws a fresh channel,
sends one uniformly random label, and counts three error events (source
symbol wrong, surface symbol wrong, anything wrong).  Trials are keyed by a
counter-based stream so the same spec and seed give byte-identical output no
matter how many worker processes run the chunks.  Channel, noise, and label
draws are tied to the trial index only, so every power point sees the same
experiment ensemble at a different scale.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import multiprocessing
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, miso as miso_mod, plots
from .channel import (
    STREAM_CHANNEL,
    STREAM_LABEL,
    STREAM_NOISE,
    ChannelParams,
    complex_normal,
    moment_set,
    sample_channel,
    stream_rng,
)
from .constellation import (
    RingSchedule,
    build_bit_map,
    export_constellation,
    optimize_ratios,
    resolve_mode,
)
from .transceiver import SystemConfig, draw_noise, hypotheses, model_vector

SISO_CHUNK = 4096
MISO_CHUNK = 128

# Two-sided 99% normal quantile for the Wilson score interval.
WILSON_Z99 = 2.5758293035489004

WORKERS_ENV = "RISCBC_WORKERS"
SEED_ENV = "RISCBC_SEED"

DEFAULTS = {
    "n_elements": 128,
    "noise_dbm": -80.0,
    "amp_noise_dbm": -80.0,
    "distances": (5.0, 50.0, 54.0),
    "exponents": (2.0, 2.2, 3.5),
    "rician_k": 8.0,
    "ref_loss_db": -30.0,
    "grid_step": 0.01,
    "miso_epsilon": 1e-10,
    "miso_max_rounds": 4,
}


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class MisoSpec:
    n_tx: int
    epsilon: float = DEFAULTS["miso_epsilon"]
    max_rounds: int = DEFAULTS["miso_max_rounds"]

    def __post_init__(self) -> None:
        if self.n_tx < 1:
            raise ValueError("miso.n_tx: need at least one transmit antenna")
        if self.epsilon <= 0.0:
            raise ValueError("miso.epsilon: must be positive")
        if self.max_rounds < 1:
            raise ValueError("miso.max_rounds: must be at least 1")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one sweep needs; immutable and hashable."""

    mode: str = "passive"
    schedule: tuple[int, ...] = (4, 12)
    a_psk: int = 4
    n_elements: int = DEFAULTS["n_elements"]
    xi: float = 10.0
    p_t_dbm: tuple[float, ...] = (0.0,)
    trials: int = 100_000
    detector: str = "ml"
    lc_candidates: int | None = None
    seed: int = 0
    grid_step: float = DEFAULTS["grid_step"]
    noise_dbm: float = DEFAULTS["noise_dbm"]
    amp_noise_dbm: float = DEFAULTS["amp_noise_dbm"]
    rician_k: float = DEFAULTS["rician_k"]
    ref_loss_db: float = DEFAULTS["ref_loss_db"]
    distances: tuple[float, float, float] = DEFAULTS["distances"]
    exponents: tuple[float, float, float] = DEFAULTS["exponents"]
    miso: MisoSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "schedule", tuple(int(n) for n in self.schedule))
        object.__setattr__(self, "p_t_dbm", tuple(float(p) for p in self.p_t_dbm))
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        object.__setattr__(self, "exponents", tuple(float(v) for v in self.exponents))
        if self.trials < 1:
            raise ValueError("trials: must be at least 1")
        if not self.p_t_dbm:
            raise ValueError("p_t_dbm: sweep must not be empty")
        if self.detector not in ("ml", "lc"):
            raise ValueError(f"detector: unknown detector {self.detector!r}")
        if self.detector == "lc":
            if self.lc_candidates is None:
                raise ValueError("lc_candidates: required for the lc detector")
            if not 1 <= self.lc_candidates <= self.a_psk:
                raise ValueError(
                    f"lc_candidates: {self.lc_candidates} outside [1, {self.a_psk}]"
                )
        if self.mode not in ("passive", "active", "active-on", "active-off"):
            raise ValueError(f"mode: unknown mode {self.mode!r}")
        if self.miso is not None and self.mode != "passive":
            raise ValueError("miso: the multi-antenna path covers passive mode only")

    def to_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["schedule"] = list(self.schedule)
        payload["p_t_dbm"] = list(self.p_t_dbm)
        payload["distances"] = list(self.distances)
        payload["exponents"] = list(self.exponents)
        if self.miso is not None:
            payload["miso"] = dataclasses.asdict(self.miso)
        return payload


@dataclass(frozen=True)
class SerPoint:
    """Simulation and bound values at one transmit power."""

    p_t_dbm: float
    ser_active: float
    ser_backscatter: float
    ser_overall: float
    bound_active: float
    bound_backscatter: float
    bound_overall: float
    trials: int
    wilson_active: float
    wilson_backscatter: float
    wilson_overall: float
    raw_bounds: tuple[float, float, float]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"raw_bounds": list(self.raw_bounds)}


def wilson_interval(errors: int, trials: int, z: float = WILSON_Z99
                    ) -> tuple[float, float]:
    """Wilson score interval (center, half-width) of an error frequency."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    p_hat = errors / trials
    zz = z * z / trials
    denom = 1.0 + zz
    center = (p_hat + zz / 2.0) / denom
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / trials + zz / (4.0 * trials)) / denom
    return center, half


def build_channel_params(spec: ExperimentSpec) -> ChannelParams:
    return ChannelParams(
        rician_k=spec.rician_k,
        ref_loss=db_to_linear(spec.ref_loss_db),
        distances=spec.distances,
        exponents=spec.exponents,
        n_elements=spec.n_elements,
    )


def build_system(spec: ExperimentSpec, p_t_dbm: float | None = None) -> SystemConfig:
    """Assemble the full system configuration referenced by a spec."""
    schedule = RingSchedule(spec.schedule, active_order=spec.a_psk)
    constellation = optimize_ratios(schedule, spec.grid_step)
    mode = resolve_mode(spec.mode, constellation, spec.xi)
    bit_map = build_bit_map(constellation, spec.n_elements, mode=mode, xi=spec.xi)
    power = p_t_dbm if p_t_dbm is not None else spec.p_t_dbm[0]
    return SystemConfig(
        channel=build_channel_params(spec),
        constellation=constellation,
        bit_map=bit_map,
        p_t=dbm_to_mw(power) if math.isfinite(power) else 1.0,
        n0=dbm_to_mw(spec.noise_dbm),
        n_v=dbm_to_mw(spec.amp_noise_dbm),
        xi=spec.xi,
        mode=mode,
    )


_RUNTIME_CACHE: dict[ExperimentSpec, SystemConfig] = {}


def _cached_config(spec: ExperimentSpec) -> SystemConfig:
    config = _RUNTIME_CACHE.get(spec)
    if config is None:
        config = build_system(spec)
        _RUNTIME_CACHE[spec] = config
    return config


def _detect_batch(y: np.ndarray, sqrt_pt: float, models: np.ndarray,
                  detector: str, lc_candidates: int | None,
                  anchor_base: np.ndarray, x_symbols: np.ndarray,
                  p_order: int) -> np.ndarray:
    """Vectorized detection of a chunk; returns label indices."""
    if detector == "ml":
        metrics = np.abs(y[:, None] - sqrt_pt * models.reshape(len(y), -1)) ** 2
        return np.argmin(metrics, axis=1)
    stage1 = np.abs(y[:, None] - sqrt_pt * anchor_base[:, None] * x_symbols[None, :]) ** 2
    shortlist = np.sort(
        np.argsort(stage1, axis=1, kind="stable")[:, :lc_candidates], axis=1
    )
    restricted = np.take_along_axis(models, shortlist[:, :, None], axis=1)
    metrics = np.abs(y[:, None, None] - sqrt_pt * restricted) ** 2
    flat = np.argmin(metrics.reshape(len(y), -1), axis=1)
    a_val = np.take_along_axis(shortlist, (flat // p_order)[:, None], axis=1)[:, 0]
    return a_val * p_order + flat % p_order


def _point_powers(spec: ExperimentSpec) -> list[tuple[float, float]]:
    """(sqrt linear power, noise scale) per sweep point; inf means noiseless."""
    out = []
    for dbm in spec.p_t_dbm:
        if math.isinf(dbm):
            out.append((1.0, 0.0))
        else:
            out.append((math.sqrt(dbm_to_mw(dbm)), 1.0))
    return out


def _siso_chunk_counts(spec: ExperimentSpec, lo: int, hi: int) -> np.ndarray:
    config = _cached_config(spec)
    bit_map = config.bit_map
    pool = hypotheses(bit_map)
    n_hyp = len(pool)
    a_order = bit_map.active_order
    p_order = bit_map.backscatter_order
    x_symbols = np.asarray(bit_map.active_symbols)
    size = hi - lo

    models = np.empty((size, a_order, p_order), dtype=complex)
    anchor_base = np.empty(size, dtype=complex)
    truth = np.empty(size, dtype=int)
    noise = np.empty(size, dtype=complex)
    for row, trial in enumerate(range(lo, hi)):
        realization = sample_channel(config.channel, stream_rng(spec.seed, STREAM_CHANNEL, trial))
        label = int(stream_rng(spec.seed, STREAM_LABEL, trial).integers(n_hyp))
        truth[row] = label
        # model_vector includes sqrt(p_t); store the unscaled models instead.
        models[row] = (model_vector(config, realization) / math.sqrt(config.p_t)).reshape(
            a_order, p_order
        )
        # The first source symbol is 1, so averaging its row over the surface
        # symbols gives the stage-one anchor model directly.
        anchor_base[row] = np.mean(models[row, 0] / x_symbols[0])
        noise[row] = draw_noise(
            config, realization, pool[label], stream_rng(spec.seed, STREAM_NOISE, trial)
        )
    truth_models = models.reshape(size, -1)[np.arange(size), truth]

    counts = np.zeros((len(spec.p_t_dbm), 3), dtype=np.int64)
    for point, (sqrt_pt, noise_scale) in enumerate(_point_powers(spec)):
        y = sqrt_pt * truth_models + noise_scale * noise
        detected = _detect_batch(
            y, sqrt_pt, models, spec.detector, spec.lc_candidates,
            anchor_base, x_symbols, p_order,
        )
        counts[point, 0] = int(np.sum(detected // p_order != truth // p_order))
        counts[point, 1] = int(np.sum(detected % p_order != truth % p_order))
        counts[point, 2] = int(np.sum(detected != truth))
    return counts


def _miso_chunk_counts(spec: ExperimentSpec, lo: int, hi: int) -> np.ndarray:
    config = _cached_config(spec)
    bit_map = config.bit_map
    pool = hypotheses(bit_map)
    n_hyp = len(pool)
    a_order = bit_map.active_order
    p_order = bit_map.backscatter_order
    x_symbols = np.asarray(bit_map.active_symbols)
    stats = miso_mod.backscatter_stats(bit_map)
    size = hi - lo

    models = np.empty((size, a_order, p_order), dtype=complex)
    anchor_base = np.empty(size, dtype=complex)
    truth = np.empty(size, dtype=int)
    noise = np.empty(size, dtype=complex)
    for row, trial in enumerate(range(lo, hi)):
        channel = miso_mod.sample_miso_channel(
            config.channel, spec.miso.n_tx, stream_rng(spec.seed, STREAM_CHANNEL, trial)
        )
        state = miso_mod.alternating_optimize(
            channel, stats, epsilon=spec.miso.epsilon,
            max_rounds=spec.miso.max_rounds,
        )
        truth[row] = int(stream_rng(spec.seed, STREAM_LABEL, trial).integers(n_hyp))
        models[row] = (
            miso_mod.miso_model_vector(channel, state.p, state.theta, config)
            / math.sqrt(config.p_t)
        ).reshape(a_order, p_order)
        anchor_base[row] = np.mean(models[row, 0] / x_symbols[0])
        noise_rng = stream_rng(spec.seed, STREAM_NOISE, trial)
        noise[row] = complex(complex_normal(noise_rng, 1)[0]) * math.sqrt(config.n0)
    truth_models = models.reshape(size, -1)[np.arange(size), truth]

    counts = np.zeros((len(spec.p_t_dbm), 3), dtype=np.int64)
    for point, (sqrt_pt, noise_scale) in enumerate(_point_powers(spec)):
        y = sqrt_pt * truth_models + noise_scale * noise
        detected = _detect_batch(
            y, sqrt_pt, models, spec.detector, spec.lc_candidates,
            anchor_base, x_symbols, p_order,
        )
        counts[point, 0] = int(np.sum(detected // p_order != truth // p_order))
        counts[point, 1] = int(np.sum(detected % p_order != truth % p_order))
        counts[point, 2] = int(np.sum(detected != truth))
    return counts


def _chunk_task(args: tuple[ExperimentSpec, int, int]) -> np.ndarray:
    spec, lo, hi = args
    if spec.miso is not None:
        return _miso_chunk_counts(spec, lo, hi)
    return _siso_chunk_counts(spec, lo, hi)


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError("workers: must be at least 1")
    return workers


def run_sweep(spec: ExperimentSpec, workers: int | None = None) -> list[SerPoint]:
    """Simulate the power sweep and attach analytical bounds.

    The aggregate is a sum of integer error counts over fixed-size trial
    chunks, so the result does not depend on the worker count.
    """
    workers = resolve_workers(workers)
    chunk = MISO_CHUNK if spec.miso is not None else SISO_CHUNK
    tasks = [
        (spec, lo, min(lo + chunk, spec.trials))
        for lo in range(0, spec.trials, chunk)
    ]
    counts = np.zeros((len(spec.p_t_dbm), 3), dtype=np.int64)
    if workers == 1 or len(tasks) == 1:
        for task in tasks:
            counts += _chunk_task(task)
    else:
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            for result in pool.imap_unordered(_chunk_task, tasks, chunksize=1):
                counts += result

    bounds = _bounds_for_sweep(spec)
    points = []
    for i, p_t in enumerate(spec.p_t_dbm):
        err = counts[i]
        raw = bounds[i]
        clamped = tuple(b if math.isnan(b) else min(1.0, b) for b in raw)
        points.append(
            SerPoint(
                p_t_dbm=p_t,
                ser_active=err[0] / spec.trials,
                ser_backscatter=err[1] / spec.trials,
                ser_overall=err[2] / spec.trials,
                bound_active=clamped[0],
                bound_backscatter=clamped[1],
                bound_overall=clamped[2],
                trials=spec.trials,
                wilson_active=wilson_interval(int(err[0]), spec.trials)[1],
                wilson_backscatter=wilson_interval(int(err[1]), spec.trials)[1],
                wilson_overall=wilson_interval(int(err[2]), spec.trials)[1],
                raw_bounds=raw,
            )
        )
    return points


def _bounds_for_sweep(spec: ExperimentSpec) -> list[tuple[float, float, float]]:
    """Raw union-bound triples per point; NaN for the multi-antenna path."""
    if spec.miso is not None:
        return [(math.nan, math.nan, math.nan)] * len(spec.p_t_dbm)
    config = _cached_config(spec)
    moments = moment_set(config.channel)
    out = []
    for dbm in spec.p_t_dbm:
        if math.isinf(dbm):
            out.append((0.0, 0.0, 0.0))
            continue
        point_config = dataclasses.replace(config, p_t=dbm_to_mw(dbm))
        out.append(tuple(analysis.ser_bounds(point_config, moments)))
    return out


CSV_COLUMNS = (
    "p_t_dbm",
    "ser_active",
    "ser_backscatter",
    "ser_overall",
    "bound_active",
    "bound_backscatter",
    "bound_overall",
    "trials",
)


def points_to_csv(points: list[SerPoint]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for pt in points:
        row = (
            pt.p_t_dbm, pt.ser_active, pt.ser_backscatter, pt.ser_overall,
            pt.bound_active, pt.bound_backscatter, pt.bound_overall,
        )
        cells = [format(v, ".17g") for v in row]
        cells.append(str(pt.trials))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        row = {k: (int(v) if k == "trials" else float(v)) for k, v in zip(header, cells)}
        rows.append(row)
    return rows


def run_id_for(payload: dict) -> str:
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()
    return digest[:12]


def emit_results(points: list[SerPoint], out_dir: str | Path, *,
                 spec: ExperimentSpec | None = None,
                 extra_metadata: dict | None = None,
                 render_figure: bool = True,
                 base_name: str = "results") -> dict[str, Path]:
    """Write the delimited table, metadata, plot description, and figure."""
    if not points:
        raise ValueError("nothing to emit: the sweep is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}

    csv_path = out_dir / f"{base_name}.csv"
    csv_path.write_text(points_to_csv(points))
    files["csv"] = csv_path

    spec_echo = spec.to_dict() if spec is not None else None
    metadata = {
        "run_id": run_id_for({"spec": spec_echo, "points": len(points)}),
        "spec": spec_echo,
        "seed": spec.seed if spec is not None else None,
        "conventions": {
            "rounding": "half-away-from-zero",
            "trial_streams": "Philox keyed by (seed, stream, trial)",
            "channel_reuse": "one realization per trial, shared across sweep points",
            "symbols_per_realization": 1,
        },
        "points": [pt.to_dict() for pt in points],
    }
    if spec is not None and spec.miso is None:
        config = _cached_config(spec)
        metadata["constellation"] = export_constellation(
            config.constellation, config.bit_map
        )
    if extra_metadata:
        metadata.update(extra_metadata)
    json_path = out_dir / f"{base_name}.json"
    json_path.write_text(json.dumps(metadata, indent=2, default=str) + "\n")
    files["json"] = json_path

    payload = plots.ser_plot_payload(
        [pt.to_dict() for pt in points],
        title=f"{'+'.join(str(n) for n in spec.schedule)} sweep" if spec else "sweep",
    )
    plot_path = out_dir / f"{base_name}_plot.json"
    plot_path.write_text(json.dumps(payload, indent=2) + "\n")
    files["plot_spec"] = plot_path

    if render_figure:
        figure_path = out_dir / f"{base_name}.png"
        plots.render_ser_payload(payload, figure_path)
        files["figure"] = figure_path
    return files
