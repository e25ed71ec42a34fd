"""Command-line surface: analyze, design, simulate, sweep.

Configs are JSON with engineering-suffix number strings ("4u", "13.8k")
accepted anywhere a number is expected.  All emitted files are
deterministic for fixed inputs: fixed column order, fixed float
formatting, no timestamps.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, design, fha, simulate
from .errors import ConfigError, DomainError, InfeasibleError, NumericError

_SUFFIXES = {
    "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3,
    "k": 1e3, "K": 1e3, "M": 1e6, "G": 1e9,
}

FLOAT_FMT = "%.10e"


def parse_quantity(value) -> float:
    """Accept plain numbers or strings with a single engineering suffix."""
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        s = value.strip()
        mult = 1.0
        if s and s[-1] in _SUFFIXES:
            mult = _SUFFIXES[s[-1]]
            s = s[:-1]
        try:
            return float(s) * mult
        except ValueError:
            pass
    raise ConfigError(f"cannot parse quantity {value!r}")


def _q(mapping: dict, key: str, default=None):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"config field {key!r} is missing")
        return default
    return parse_quantity(mapping[key])


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    return cfg


def design_spec_from_config(cfg: dict) -> design.DesignSpec:
    d = cfg.get("design", {})
    if not d:
        return design.reference_spec()
    g = d.get("grid", {})
    grid = design.GridSpec(
        Vo=_q(g, "Vo", 13.8e3), fg=_q(g, "fg", 60.0), k=_q(g, "k", 0.05)
    )
    kwargs = dict(
        grid=grid,
        Vin_min=_q(d, "Vin_min", 600.0),
        Vin_max=_q(d, "Vin_max", 850.0),
        Po_min=_q(d, "Po_min", 30e3),
        Po_max=_q(d, "Po_max", 1e6 / 3),
        fs_min=_q(d, "fs_min", 45e3),
        fs_max=_q(d, "fs_max", 70e3),
        Vcr_max=_q(d, "Vcr_max", 850.0),
        THD_max=_q(d, "THD_max", 0.12),
    )
    for name in ("n_series", "max_iterations"):
        if name in d:
            kwargs[name] = int(parse_quantity(d[name]))
    for name in (
        "fr1_margin", "m_init", "cr_step", "lm_step", "lf_step",
        "zvs_coverage_min", "filter_x", "filter_y", "cr_floor",
    ):
        if name in d:
            kwargs[name] = parse_quantity(d[name])
    if "cr_override" in d and d["cr_override"] is not None:
        kwargs["cr_override"] = parse_quantity(d["cr_override"])
    if "region_preference" in d:
        kwargs["region_preference"] = str(d["region_preference"])
    if "compact_filter" in d:
        kwargs["compact_filter"] = bool(d["compact_filter"])
    try:
        return design.DesignSpec(**kwargs)
    except DomainError as exc:
        raise ConfigError(f"invalid design spec: {exc}") from exc


def tank_from_config(cfg: dict) -> fha.ResonantTank:
    t = cfg.get("tank")
    if not t:
        return design.reference_tank()
    try:
        return fha.ResonantTank(
            Lr=_q(t, "Lr"), Cr=_q(t, "Cr"), Lm=_q(t, "Lm"), N=_q(t, "N")
        )
    except DomainError as exc:
        raise ConfigError(f"invalid tank: {exc}") from exc


def filter_from_config(cfg: dict) -> design.FilterDesign:
    f = cfg.get("filter")
    if not f:
        return design.reference_filter("fc4k")
    if "preset" in f:
        return design.reference_filter(str(f["preset"]))
    try:
        cf = _q(f, "Cf", 0.1e-6)
        if "fc" in f:
            fc = _q(f, "fc")
            lf = design.filter_inductor(fc, cf)
        else:
            lf = _q(f, "Lf")
            fc = 1.0 / (2.0 * math.pi * math.sqrt(lf * cf))
        region = str(f.get("region", "region2"))
        return design.FilterDesign(Cf=cf, Lf=lf, fc=fc, region=region)
    except DomainError as exc:
        raise ConfigError(f"invalid filter: {exc}") from exc


def schedule_from_config(cfg: dict, preset: str | None = None) -> simulate.Schedule:
    s = cfg.get("schedule", {})
    name = preset or s.get("preset")
    if name:
        sched = simulate.schedule_preset(str(name))
    elif "segments" in s:
        segs = []
        for row in s["segments"]:
            if len(row) != 4:
                raise ConfigError("schedule segments must be [t_start, t_end, Vin, Ipeak]")
            segs.append(
                simulate.Segment(
                    parse_quantity(row[0]), parse_quantity(row[1]),
                    parse_quantity(row[2]), parse_quantity(row[3]),
                )
            )
        sched = simulate.Schedule(tuple(segs))
    else:
        sched = simulate.schedule_preset("c1-c4")
    if "segment_duration" in s:
        sched = simulate.resegment(sched, parse_quantity(s["segment_duration"]))
    return sched


def sim_config_from_config(cfg: dict, spec: design.DesignSpec, args) -> simulate.SimConfig:
    s = dict(cfg.get("sim", {}))
    if getattr(args, "mode", None):
        s["mode"] = args.mode
    if getattr(args, "dt", None):
        s["dt"] = args.dt
    if getattr(args, "duration", None):
        s["duration"] = args.duration
    kwargs = dict(
        fs_min=_q(s, "fs_min", spec.fs_min),
        fs_max=_q(s, "fs_max", spec.fs_max),
        mode=str(s.get("mode", "switched")),
        n_series=int(parse_quantity(s.get("n_series", spec.n_series))),
    )
    for name in ("dt", "duration", "sample_dt"):
        if s.get(name) is not None:
            kwargs[name] = parse_quantity(s[name])
    for name in ("zvs_current_threshold", "pi_kp", "pi_ki", "current_loop_tau",
                 "envelope_rs_floor"):
        if name in s:
            kwargs[name] = parse_quantity(s[name])
    return simulate.SimConfig(**kwargs)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("LLCINV_OUT", "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_table(path: Path, header: list[str], rows: np.ndarray) -> None:
    """Delimited text, one header row, fixed float format."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        path.write_text(",".join(header) + "\n")
        return
    np.savetxt(path, rows, fmt=FLOAT_FMT, delimiter=",",
               header=",".join(header), comments="")


def write_waveforms(out_dir: Path, output: simulate.SimOutput, binary: bool = False) -> None:
    header = list(simulate.SimOutput.CHANNELS)
    data = np.column_stack([getattr(output, name) for name in header]) \
        if len(output.t) else np.empty((0, len(header)))
    write_table(out_dir / "waveforms.csv", header, data)
    ev_header = ["t", "i_lr", "transition", "zvs"]
    ev = np.column_stack([
        output.events_t, output.events_i_lr,
        output.events_transition.astype(float), output.events_zvs.astype(float),
    ]) if len(output.events_t) else np.empty((0, 4))
    write_table(out_dir / "events.csv", ev_header, ev)
    if binary:
        npy_dir = out_dir / "waveforms_npy"
        npy_dir.mkdir(exist_ok=True)
        for name in header:
            np.save(npy_dir / f"{name}.npy", getattr(output, name))


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def report_to_dict(report: design.DesignReport) -> dict:
    d = {
        "feasible": report.feasible,
        "failed_check": report.failed_check,
        "annotations": list(report.annotations),
        "metrics": dict(report.metrics),
        "tank": dataclasses.asdict(report.tank) if report.tank else None,
        "filter": dataclasses.asdict(report.filter) if report.filter else None,
        "trace": [dataclasses.asdict(e) for e in report.trace],
    }
    return d


def report_from_dict(d: dict) -> design.DesignReport:
    tank = fha.ResonantTank(**d["tank"]) if d.get("tank") else None
    filt = design.FilterDesign(**d["filter"]) if d.get("filter") else None
    trace = [design.TraceEntry(**e) for e in d.get("trace", [])]
    return design.DesignReport(
        feasible=d["feasible"],
        tank=tank,
        filter=filt,
        trace=trace,
        failed_check=d.get("failed_check"),
        annotations=list(d.get("annotations", [])),
        metrics=dict(d.get("metrics", {})),
    )


def metrics_to_dict(m: analysis.Metrics) -> dict:
    d = dataclasses.asdict(m)
    return d


def _segment_metrics(output: simulate.SimOutput, schedule: simulate.Schedule) -> list[dict]:
    fg = output.meta["fg"]
    rows = []
    for k, seg in enumerate(schedule.segments):
        t_end = min(seg.t_end, output.t[-1] if len(output.t) else 0.0)
        if t_end - seg.t_start < 2.0 / fg - 1e-9:
            continue
        sel = output.t < t_end - 1e-12
        if not np.any(sel):
            continue
        row = {"segment": k, "Vin": seg.Vin, "Ipeak": seg.Ipeak}
        try:
            row["thd"] = analysis.thd(output.i_grid[sel], output.sample_rate, fg)
        except DomainError as exc:
            row["thd_error"] = str(exc)
        win = (max(seg.t_start, t_end - 2.0 / fg), t_end)
        try:
            row["zvs_coverage"] = analysis.zvs_coverage(output, window=win)
        except DomainError:
            pass
        wsel = (output.t >= win[0]) & (output.t < win[1])
        row["vcr_peak"] = analysis.peak_stress(output.v_cr[wsel])
        rows.append(row)
    return rows


def cmd_analyze(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    out_dir = _out_dir(args)
    tank = tank_from_config(cfg)
    spec = design_spec_from_config(cfg)
    a = cfg.get("analyze", {})
    loads_w = [parse_quantity(x) for x in a.get("loads_w", [1e6 / 6, 1e6 / 12])]
    n_fs = int(parse_quantity(a.get("fs_points", 200)))
    fs_lo = _q(a, "fs_lo", tank.fr1)
    fs_hi = _q(a, "fs_hi", spec.fs_max)
    vo_mod = spec.vo_module_rms

    loads = [fha.load_context(tank, vo_mod, po) for po in loads_w]
    fs_grid = np.linspace(fs_lo, fs_hi, n_fs)
    rows = fha.sweep_curves(tank, loads, fs_grid)
    load_col = np.repeat(loads_w, len(fs_grid))
    table = np.column_stack([rows[:, 0], load_col, rows[:, 1], rows[:, 2], rows[:, 3]])
    write_table(out_dir / "gain_angle_vs_fs.csv",
                ["fs_hz", "load_w", "q", "gain", "angle_rad"], table)

    lm_lo = _q(a, "lm_lo", 20e-6)
    lm_hi = _q(a, "lm_hi", 500e-6)
    n_lm = int(parse_quantity(a.get("lm_points", 50)))
    fs_list = [parse_quantity(x) for x in a.get("fs_list", [50e3, 60e3, 70e3])]
    lm_grid = np.linspace(lm_lo, lm_hi, n_lm)
    rows = []
    for fs in fs_list:
        for lm in lm_grid:
            tk = fha.ResonantTank(Lr=tank.Lr, Cr=tank.Cr, Lm=lm, N=tank.N)
            ctx = fha.load_context(tk, vo_mod, loads_w[-1])
            rows.append((lm, fs, fha.impedance_angle(tk, ctx.Rac, fs)))
    write_table(out_dir / "angle_vs_lm.csv", ["lm_h", "fs_hz", "angle_rad"],
                np.asarray(rows))
    print(f"wrote {out_dir}/gain_angle_vs_fs.csv and {out_dir}/angle_vs_lm.csv")
    return 0


def cmd_design(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    out_dir = _out_dir(args)
    spec = design_spec_from_config(cfg)
    report = design.run_design_loop(spec)
    doc = report_to_dict(report)

    if report.feasible and not args.skip_validation:
        sched = simulate.Schedule((
            simulate.Segment(0.0, 4.0 / spec.grid.fg, spec.Vin_max, spec.ipeak_max),
        ))
        sim_cfg = simulate.SimConfig(
            fs_min=spec.fs_min, fs_max=spec.fs_max, mode="switched",
            n_series=spec.n_series, dt=args.dt,
        )
        output = simulate.simulate(report.tank, report.filter, spec.grid, sched, sim_cfg)
        doc["switched_validation"] = metrics_to_dict(analysis.compute_metrics(output))

    _json_dump(doc, out_dir / "design_report.json")
    print(f"wrote {out_dir}/design_report.json "
          f"({'feasible' if report.feasible else 'infeasible'})")
    return 0 if report.feasible else 2


def cmd_simulate(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    out_dir = _out_dir(args)
    tank = tank_from_config(cfg)
    filt = filter_from_config(cfg)
    if args.filter:
        filt = design.reference_filter(args.filter)
    spec = design_spec_from_config(cfg)
    sched = schedule_from_config(cfg, preset=args.preset)
    sim_cfg = sim_config_from_config(cfg, spec, args)
    output = simulate.simulate(tank, filt, spec.grid, sched, sim_cfg)
    write_waveforms(out_dir, output, binary=args.binary)
    doc = {"meta": {k: v for k, v in sorted(output.meta.items())}}
    if len(output.t):
        doc["overall"] = metrics_to_dict(analysis.compute_metrics(output))
        doc["segments"] = _segment_metrics(output, sched)
    _json_dump(doc, out_dir / "metrics.json")
    print(f"wrote {out_dir}/waveforms.csv, {out_dir}/events.csv, {out_dir}/metrics.json")
    return 0


_SWEEPABLE = ("Lr", "Cr", "Lm", "N", "Cf", "Lf", "fc", "Ipeak", "Vin")


def _sweep_point(payload):
    (cfg, param, value, preset, mode) = payload
    try:
        tank = tank_from_config(cfg)
        filt = filter_from_config(cfg)
        spec = design_spec_from_config(cfg)
        if param in ("Lr", "Cr", "Lm", "N"):
            tank = dataclasses.replace(tank, **{param: value})
        elif param == "fc":
            lf = design.filter_inductor(value, filt.Cf)
            filt = design.FilterDesign(Cf=filt.Cf, Lf=lf, fc=value, region=filt.region)
        elif param == "Lf":
            fc = 1.0 / (2.0 * math.pi * math.sqrt(value * filt.Cf))
            filt = design.FilterDesign(Cf=filt.Cf, Lf=value, fc=fc, region=filt.region)
        elif param == "Cf":
            fc = 1.0 / (2.0 * math.pi * math.sqrt(filt.Lf * value))
            filt = design.FilterDesign(Cf=value, Lf=filt.Lf, fc=fc, region=filt.region)
        sched = schedule_from_config(cfg, preset=preset)
        if param in ("Ipeak", "Vin"):
            segs = tuple(
                simulate.Segment(
                    s.t_start, s.t_end,
                    value if param == "Vin" else s.Vin,
                    value if param == "Ipeak" else s.Ipeak,
                )
                for s in sched.segments
            )
            sched = simulate.Schedule(segs)
        s = dict(cfg.get("sim", {}))
        if mode:
            s["mode"] = mode
        sim_cfg = simulate.SimConfig(
            fs_min=_q(s, "fs_min", spec.fs_min),
            fs_max=_q(s, "fs_max", spec.fs_max),
            mode=str(s.get("mode", "envelope")),
            n_series=spec.n_series,
            duration=parse_quantity(s["duration"]) if s.get("duration") else None,
        )
        output = simulate.simulate(tank, filt, spec.grid, sched, sim_cfg)
        m = analysis.compute_metrics(output)
        return {
            "parameter": param, "value": value, "thd": m.thd,
            "zvs_coverage": m.zvs_coverage, "vcr_peak": m.vcr_peak,
            "i_lr_rms": m.i_lr_rms, "i_lm_rms": m.i_lm_rms,
            "p_in_avg": m.p_in_avg, "p_out_avg": m.p_out_avg, "error": "",
        }
    except Exception as exc:  # per-point failures stay in-row
        return {"parameter": param, "value": value, "error": str(exc)}


def cmd_sweep(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    out_dir = _out_dir(args)
    sw = cfg.get("sweep", {})
    param = sw.get("parameter")
    if param not in _SWEEPABLE:
        raise ConfigError(
            f"sweep parameter must be one of {_SWEEPABLE}, got {param!r}"
        )
    if "values" in sw:
        values = [parse_quantity(v) for v in sw["values"]]
    else:
        lo = _q(sw, "min")
        hi = _q(sw, "max")
        n = int(parse_quantity(sw.get("points", 5)))
        values = list(np.linspace(lo, hi, n))
    payloads = [(cfg, param, v, args.preset, args.mode) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]

    cols = ["value", "thd", "zvs_coverage", "vcr_peak", "i_lr_rms", "i_lm_rms",
            "p_in_avg", "p_out_avg"]
    lines = [",".join(["parameter"] + cols + ["error"])]
    for r in results:
        vals = [r.get(c) for c in cols]
        cells = [r["parameter"]]
        cells += [FLOAT_FMT % v if isinstance(v, (int, float)) else "" for v in vals]
        cells.append(r.get("error", ""))
        lines.append(",".join(cells))
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir}/sweep.csv ({len(results)} points)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="llcinv",
        description="Design and simulate a medium-voltage single-stage LLC resonant PV inverter",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config path")
    common.add_argument("--out", help="output directory (default $LLCINV_OUT or ./out)")

    p = sub.add_parser("analyze", parents=[common], help="FHA gain/angle curve tables")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("design", parents=[common], help="run the iterative design loop")
    p.add_argument("--dt", type=float, help="switched-validation timestep (s)")
    p.add_argument("--skip-validation", action="store_true",
                   help="skip the final switched-mode validation run")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", parents=[common], help="run one simulation")
    p.add_argument("--preset", choices=("c1-c4", "c5-c8", "c9-c12"),
                   help="canned test schedule")
    p.add_argument("--filter", choices=("fc4k", "fc13k"), help="shipped filter design")
    p.add_argument("--mode", choices=("switched", "envelope"))
    p.add_argument("--dt", type=float, help="timestep (s)")
    p.add_argument("--duration", type=float, help="truncate the run (s)")
    p.add_argument("--binary", action="store_true",
                   help="also write per-channel .npy files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="metrics over a parameter grid")
    p.add_argument("--preset", choices=("c1-c4", "c5-c8", "c9-c12"))
    p.add_argument("--mode", choices=("switched", "envelope"))
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (NumericError,) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (InfeasibleError,) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
