"""Monte-Carlo batch runner and command line front end."""

from __future__ import annotations

import argparse
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ggiw_pmbm import mathkit as mk
from ggiw_pmbm.association import AssociationConfig
from ggiw_pmbm.metrics import GospaResult, Infeasible, gospa
from ggiw_pmbm.pmbm import NoAssociations, PMBMDensity, TooLarge
from ggiw_pmbm.reduction import ReductionConfig
from ggiw_pmbm.simulator import Scenario, cast_occlusion, generate_measurements, resolve_scenario
from ggiw_pmbm.tracker import FilterConfig, PMBMTracker

CSV_HEADER = "scan,gospa_total,gospa_loc,gospa_missed,gospa_false,n_hyp,n_tracks,ppp_mass,ms_elapsed"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str = "1"
    mc_runs: int = 1
    seed: Optional[int] = None
    out: Optional[str] = None
    exhaustive: bool = False
    timing: bool = False
    duration: Optional[int] = None
    gospa_c: float = 10.0
    gospa_p: float = 1.0
    association: AssociationConfig = field(default_factory=AssociationConfig)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    # overrides applied to the scenario's sensor (clutter_rate, p_D, p_S)
    sensor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mc_runs < 1:
            raise ConfigError("mc_runs must be >= 1")
        if self.duration is not None and self.duration < 1:
            raise ConfigError("duration must be >= 1")
        if self.gospa_c <= 0 or self.gospa_p < 1:
            raise ConfigError("need gospa_c > 0 and gospa_p >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            if "association" in data:
                a = dict(data["association"])
                if "partition_probs" in a:
                    a["partition_probs"] = tuple(a["partition_probs"])
                data["association"] = AssociationConfig(**a)
            if "reduction" in data:
                data["reduction"] = ReductionConfig(**data["reduction"])
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class RunReport:
    rows: list  # per run: list of per-scan dicts
    wall_seconds: list
    mean_curves: dict
    shadow_mass: list = field(default_factory=list)
    reference_mass: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "mc_runs": len(self.rows),
            "wall_seconds": self.wall_seconds,
            "mean_gospa_total": float(np.mean([r["gospa_total"] for run in self.rows for r in run])),
            "mean_curves": self.mean_curves,
            "shadow_mass": self.shadow_mass,
            "reference_mass": self.reference_mass,
        }


def ppp_mass_in_region(pmbm, region) -> float:
    """Expected number of undetected targets whose position lies in a rectangle."""
    ppp = pmbm.ppp if isinstance(pmbm, PMBMDensity) else pmbm
    (x0, x1), (y0, y1) = region
    total = 0.0
    for c in ppp.components:
        m = c.params.m[:2]
        P = c.params.P[:2, :2]
        total += float(np.exp(c.log_w)) * mk.gaussian_rect_mass(m, P, (x0, y0), (x1, y1))
    return total


def _sensor_for(scenario: Scenario, overrides: dict):
    sensor = scenario.sensor
    if overrides:
        unknown = set(overrides) - {"clutter_rate", "p_D", "p_S", "gate_prob"}
        if unknown:
            raise ConfigError(f"unknown sensor keys: {sorted(unknown)}")
        try:
            sensor = replace(sensor, **{k: float(v) for k, v in overrides.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return sensor


def run_single(scenario: Scenario, config: RunConfig, seed: int):
    rng = np.random.Generator(np.random.Philox(seed))
    fcfg = FilterConfig(config.association, config.reduction, exhaustive=config.exhaustive)
    tracker = PMBMTracker(scenario.motion, scenario.sensor, scenario.birth, scenario.initial, fcfg)
    occ = scenario.occlusion
    base_field = scenario.base_field() if occ is not None else None
    estimates = []
    rows, shadow, reference = [], [], []
    t_start = time.perf_counter()
    for k in range(scenario.duration):
        Z = generate_measurements(scenario, k, rng)
        t0 = time.perf_counter()
        sensor = None
        if occ is not None:
            foot = [(e.state[:2], e.extent) for e in estimates]
            field_k = cast_occlusion(base_field, foot, occ.sensor_origin, occ.floor)
            sensor = scenario.sensor.with_detection(field_k)
        estimates = tracker.step(Z, sensor)
        elapsed = (time.perf_counter() - t0) * 1e3
        truth = scenario.truth(k)
        est = [(e.state[:2], e.extent) for e in estimates]
        g = gospa(truth, est, config.gospa_c, config.gospa_p)
        d = tracker.density
        rows.append(
            {
                "scan": k,
                "gospa_total": g.total,
                "gospa_loc": g.localisation,
                "gospa_missed": g.missed,
                "gospa_false": g.false_,
                "n_hyp": len(d.hypotheses),
                "n_tracks": len(estimates),
                "ppp_mass": d.ppp.mass,
                "ms_elapsed": elapsed if config.timing else None,
                "n_truth": len(truth),
            }
        )
        if occ is not None:
            shadow.append(ppp_mass_in_region(d, occ.shadow_region))
            reference.append(ppp_mass_in_region(d, occ.reference_region))
    return rows, time.perf_counter() - t_start, shadow, reference


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    cols = CSV_HEADER.split(",")
    for r in rows:
        buf.write(",".join(_fmt(r[c]) for c in cols) + "\n")
    return buf.getvalue()


def run(config: RunConfig) -> RunReport:
    scenario = resolve_scenario(config.scenario)
    scenario.sensor = _sensor_for(scenario, config.sensor)
    if config.duration is not None:
        scenario.duration = config.duration
    base_seed = scenario.seed if config.seed is None else config.seed

    all_rows, walls, shadows, refs = [], [], [], []
    for r in range(config.mc_runs):
        rows, wall, shadow, ref = run_single(scenario, config, base_seed + r)
        all_rows.append(rows)
        walls.append(wall)
        shadows.append(shadow)
        refs.append(ref)

    keys = ["gospa_total", "gospa_loc", "gospa_missed", "gospa_false", "n_hyp", "n_tracks", "ppp_mass"]
    curves = {k: np.mean([[row[k] for row in run_] for run_ in all_rows], axis=0).tolist() for k in keys}
    report = RunReport(
        all_rows,
        walls,
        curves,
        np.mean(shadows, axis=0).tolist() if scenario.occlusion else [],
        np.mean(refs, axis=0).tolist() if scenario.occlusion else [],
    )
    if config.out is not None:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        for r, rows in enumerate(all_rows):
            (out / f"run_{r:03d}.csv").write_text(rows_to_csv(rows))
        (out / "summary.json").write_text(json.dumps(report.summary(), indent=1))
    return report


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ggiw-pmbm", description="GGIW-PMBM extended target filter")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="Monte-Carlo run of a scenario")
    r.add_argument("--scenario", default=None, help="builtin id (1, 2, 3, occlusion) or JSON path")
    r.add_argument("--mc", type=int, default=None, help="number of Monte-Carlo runs")
    r.add_argument("--seed", type=int, default=None, help="base seed; run r uses seed + r")
    r.add_argument("--out", default=None, help="output directory for CSV and JSON")
    r.add_argument("--config", default=None, help="JSON file with RunConfig fields")
    r.add_argument("--exhaustive", action="store_true", help="enumerate every association")
    r.add_argument("--timing", action="store_true", help="fill the ms_elapsed column")
    r.add_argument("--duration", type=int, default=None, help="truncate the scenario")
    s = sub.add_parser("simulate", help="dump measurements of one run as CSV")
    s.add_argument("--scenario", default="1")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    return p


def _config_from_args(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for key, val in (
        ("scenario", args.scenario),
        ("mc_runs", args.mc),
        ("seed", args.seed),
        ("out", args.out),
        ("duration", args.duration),
    ):
        if val is not None:
            data[key] = val
    if args.exhaustive:
        data["exhaustive"] = True
    if args.timing:
        data["timing"] = True
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "simulate":
            from ggiw_pmbm.simulator import write_measurements

            scen = resolve_scenario(args.scenario)
            seed = scen.seed if args.seed is None else args.seed
            rng = np.random.Generator(np.random.Philox(seed))
            scans = [generate_measurements(scen, k, rng) for k in range(scen.duration)]
            write_measurements(args.out, scans)
            return 0
        config = _config_from_args(args)
        report = run(config)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (Infeasible, NoAssociations, TooLarge) as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    s = report.summary()
    print(f"{s['mc_runs']} run(s), mean GOSPA {s['mean_gospa_total']:.3f}, "
          f"wall {sum(s['wall_seconds']):.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
