"""Command-line interface.

Subcommands: ``optimize`` (constellation search), ``alphabet`` (element-count
sets), ``simulate`` (Monte Carlo sweep), ``analyze`` (bounds only), ``miso``
(beamforming then sweep), ``moments`` (closed-form moment dump).

Settings come from a YAML/JSON config file mirroring the experiment spec;
command-line flags override file values, and the RISCBC_SEED /
RISCBC_WORKERS environment variables override seed and worker count.
Exit codes: 0 success, 2 validation or configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import yaml

from . import analysis, harness, miso as miso_mod, plots
from .channel import STREAM_CHANNEL, moment_set, stream_rng
from .constellation import (
    RingSchedule,
    active_na_alphabet,
    build_bit_map,
    export_constellation,
    optimize_ratios,
    passive_na_alphabet,
    resolve_mode,
)
from .harness import DEFAULTS, ExperimentSpec, MisoSpec, SEED_ENV, build_system
from .miso import SolverError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3


def parse_schedule(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split("+"))
    except ValueError as exc:
        raise ValueError(f"schedule: cannot parse {text!r}; expected e.g. 4+12") from exc


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    raw = Path(path).read_text()
    data = yaml.safe_load(raw)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"config: {path} must hold a key-value document")
    return data


_SPEC_FIELDS = {f.name for f in dataclasses.fields(ExperimentSpec)}


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Merge defaults, config file, environment, and flags into a spec."""
    values: dict = {}
    file_values = _load_config_file(getattr(args, "config", None))
    unknown = set(file_values) - _SPEC_FIELDS - {"workers"}
    if unknown:
        raise ValueError(f"config: unknown keys {sorted(unknown)}")
    for key, value in file_values.items():
        if key == "schedule" and isinstance(value, str):
            value = parse_schedule(value)
        if key == "miso" and isinstance(value, dict):
            value = MisoSpec(**value)
        if key != "workers":
            values[key] = value

    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        values["seed"] = int(env_seed)

    overrides = {
        "schedule": args.schedule,
        "a_psk": args.a_psk,
        "n_elements": args.n_elements,
        "xi": args.xi,
        "mode": args.mode,
        "p_t_dbm": args.p_t_dbm,
        "trials": args.trials,
        "detector": args.detector,
        "lc_candidates": args.lc_candidates,
        "seed": args.seed,
        "grid_step": args.grid_step,
        "noise_dbm": args.noise_dbm,
        "amp_noise_dbm": args.amp_noise_dbm,
        "rician_k": args.rician_k,
        "ref_loss_db": args.ref_loss_db,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value

    # the multi-antenna flags override the file's block field by field
    base: MisoSpec | None = values.get("miso")
    n_tx = getattr(args, "n_tx", None)
    epsilon = getattr(args, "miso_epsilon", None)
    max_rounds = getattr(args, "miso_max_rounds", None)
    if n_tx is not None or (base is not None and (epsilon is not None
                                                  or max_rounds is not None)):
        values["miso"] = MisoSpec(
            n_tx=n_tx if n_tx is not None else base.n_tx,
            epsilon=epsilon if epsilon is not None
            else (base.epsilon if base else DEFAULTS["miso_epsilon"]),
            max_rounds=max_rounds if max_rounds is not None
            else (base.max_rounds if base else DEFAULTS["miso_max_rounds"]),
        )
    return ExperimentSpec(**values)


def _resolved_workers(args: argparse.Namespace) -> int:
    # precedence: flag, then environment, then config file, then serial
    if getattr(args, "workers", None) is not None:
        return args.workers
    env = os.environ.get(harness.WORKERS_ENV)
    if env:
        return harness.resolve_workers(int(env))
    file_value = _load_config_file(getattr(args, "config", None)).get("workers")
    if file_value is not None:
        return harness.resolve_workers(int(file_value))
    return 1


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="YAML/JSON config file mirroring the spec")
    sub.add_argument("--schedule", type=parse_schedule,
                     help="ring schedule, e.g. 4+12")
    sub.add_argument("--A", "--a-psk", dest="a_psk", type=int,
                     help="source PSK order")
    sub.add_argument("--N", "--n-elements", dest="n_elements", type=int,
                     help="number of surface elements")
    sub.add_argument("--xi", type=float, help="active amplification gain")
    sub.add_argument("--mode",
                     choices=("passive", "active", "active-on", "active-off"),
                     help="surface operating mode")
    sub.add_argument("--pt", dest="p_t_dbm", type=float, nargs="+",
                     help="transmit power sweep in dBm")
    sub.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    sub.add_argument("--detector", choices=("ml", "lc"), help="detector kind")
    sub.add_argument("--lc-candidates", type=int,
                     help="shortlist size of the lc detector")
    sub.add_argument("--seed", type=int, help="base RNG seed")
    sub.add_argument("--step", dest="grid_step", type=float,
                     help="ratio grid step of the constellation search")
    sub.add_argument("--noise-dbm", type=float, help="receiver noise power")
    sub.add_argument("--amp-noise-dbm", type=float,
                     help="per-element amplifier noise power")
    sub.add_argument("--rician-k", type=float, help="Rician K factor")
    sub.add_argument("--ref-loss-db", type=float,
                     help="path-loss factor at 1 m, in dB")
    sub.add_argument("--workers", type=int, help="worker processes")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--no-figure", action="store_true",
                     help="skip matplotlib rendering")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riscbc",
        description="RIS-aided backscatter link simulator with optimized APSK",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("optimize", "search the max-min-distance ring ratios"),
        ("alphabet", "print the element-count alphabets"),
        ("simulate", "run the Monte Carlo power sweep"),
        ("analyze", "compute analytical bounds only"),
        ("miso", "alternating beamforming, then a multi-antenna sweep"),
        ("moments", "dump the closed-form channel moments"),
    ):
        sub = commands.add_parser(name, help=text)
        _add_common_flags(sub)
        if name == "miso":
            sub.add_argument("--n-tx", type=int, help="transmit antennas")
            sub.add_argument("--miso-epsilon", type=float,
                             help="alternating-optimization stop threshold")
            sub.add_argument("--miso-max-rounds", type=int,
                             help="alternating-optimization round cap")
        if name == "analyze":
            sub.add_argument("--pep-table", action="store_true",
                             help="include the pairwise error table in the report")
    return parser


def _cmd_optimize(args: argparse.Namespace) -> int:
    spec = build_spec(args)
    schedule = RingSchedule(spec.schedule, active_order=spec.a_psk)
    constellation = optimize_ratios(schedule, spec.grid_step)
    ratios = ", ".join(f"{g:.6g}" for g in constellation.radius_ratios)
    print(f"schedule {schedule}: ratios [{ratios}] "
          f"min squared distance {constellation.min_sq_distance:.12g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        mode = resolve_mode(spec.mode, constellation, spec.xi)
        bit_map = build_bit_map(constellation, spec.n_elements, mode=mode, xi=spec.xi)
        (out / "constellation.json").write_text(
            json.dumps(export_constellation(constellation, bit_map), indent=2) + "\n"
        )
        if not args.no_figure:
            plots.render_constellation(
                list(constellation.points), out / "constellation.png",
                title=f"{schedule} constellation",
            )
        print(f"wrote {out / 'constellation.json'}")
    return EXIT_OK


def _cmd_alphabet(args: argparse.Namespace) -> int:
    spec = build_spec(args)
    schedule = RingSchedule(spec.schedule, active_order=spec.a_psk)
    constellation = optimize_ratios(schedule, spec.grid_step)
    passive = passive_na_alphabet(constellation, spec.n_elements)
    print(f"passive: {list(passive)}")
    active = active_na_alphabet(constellation, spec.n_elements, spec.xi)
    label = "active (OFF fallback)" if active.off_mode else "active"
    print(f"{label} at gain {spec.xi:g}: {list(active.values)}")
    return EXIT_OK


def _cmd_moments(args: argparse.Namespace) -> int:
    spec = build_spec(args)
    moments = moment_set(harness.build_channel_params(spec))
    text = json.dumps(moments.to_dict(), indent=2)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "moments.json").write_text(text + "\n")
        print(f"wrote {out / 'moments.json'}")
    else:
        print(text)
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    spec = build_spec(args)
    points = harness.run_sweep(spec, workers=_resolved_workers(args))
    out = Path(args.out) if args.out else Path("runs") / "simulate"
    files = harness.emit_results(points, out, spec=spec,
                                 render_figure=not args.no_figure)
    for pt in points:
        print(f"P_t {pt.p_t_dbm:+.1f} dBm: "
              f"ser {pt.ser_active:.3g}/{pt.ser_backscatter:.3g}/{pt.ser_overall:.3g} "
              f"bound {pt.bound_active:.3g}/{pt.bound_backscatter:.3g}/{pt.bound_overall:.3g}")
    print(f"wrote {files['csv']}")
    return EXIT_OK


def _cmd_analyze(args: argparse.Namespace) -> int:
    spec = build_spec(args)
    config = build_system(spec)
    moments = moment_set(config.channel)
    points = []
    for dbm in spec.p_t_dbm:
        if math.isinf(dbm):
            raw = (0.0, 0.0, 0.0)
        else:
            point_config = dataclasses.replace(config, p_t=harness.dbm_to_mw(dbm))
            raw = tuple(analysis.ser_bounds(point_config, moments))
        clamped = tuple(min(1.0, v) for v in raw)
        points.append(harness.SerPoint(
            p_t_dbm=dbm,
            ser_active=math.nan, ser_backscatter=math.nan, ser_overall=math.nan,
            bound_active=clamped[0], bound_backscatter=clamped[1],
            bound_overall=clamped[2],
            trials=0,
            wilson_active=math.nan, wilson_backscatter=math.nan,
            wilson_overall=math.nan,
            raw_bounds=raw,
        ))
        print(f"P_t {dbm:+.1f} dBm: bound "
              f"{clamped[0]:.3g}/{clamped[1]:.3g}/{clamped[2]:.3g}")
    extra = {"moments": moments.to_dict()}
    if args.pep_table:
        table = analysis.pep_table(
            dataclasses.replace(config, p_t=harness.dbm_to_mw(spec.p_t_dbm[0])),
            moments,
        )
        extra["pep_table_at_first_point"] = table.to_rows()
    out = Path(args.out) if args.out else Path("runs") / "analyze"
    files = harness.emit_results(points, out, spec=spec, extra_metadata=extra,
                                 render_figure=not args.no_figure,
                                 base_name="bounds")
    print(f"wrote {files['csv']}")
    return EXIT_OK


def _cmd_miso(args: argparse.Namespace) -> int:
    spec = build_spec(args)
    if spec.miso is None:
        spec = dataclasses.replace(spec, miso=MisoSpec(n_tx=2))
    config = build_system(spec)
    stats = miso_mod.backscatter_stats(config.bit_map)
    channel = miso_mod.sample_miso_channel(
        config.channel, spec.miso.n_tx, stream_rng(spec.seed, STREAM_CHANNEL, 0)
    )
    state = miso_mod.alternating_optimize(
        channel, stats, epsilon=spec.miso.epsilon, max_rounds=spec.miso.max_rounds
    )
    print(f"beamforming on trial-0 channel: objective {state.objective:.6g} "
          f"after {state.iteration} rounds")
    points = harness.run_sweep(spec, workers=_resolved_workers(args))
    out = Path(args.out) if args.out else Path("runs") / "miso"
    files = harness.emit_results(
        points, out, spec=spec,
        extra_metadata={"beamforming_trial0": state.to_dict()},
        render_figure=not args.no_figure,
    )
    for pt in points:
        print(f"P_t {pt.p_t_dbm:+.1f} dBm: "
              f"ser {pt.ser_active:.3g}/{pt.ser_backscatter:.3g}/{pt.ser_overall:.3g}")
    print(f"wrote {files['csv']}")
    return EXIT_OK


_COMMANDS = {
    "optimize": _cmd_optimize,
    "alphabet": _cmd_alphabet,
    "simulate": _cmd_simulate,
    "analyze": _cmd_analyze,
    "miso": _cmd_miso,
    "moments": _cmd_moments,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
