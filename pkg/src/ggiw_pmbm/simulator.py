"""Ground truth and measurement generation, detection fields and built-in scenarios."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ggiw_pmbm.ggiw import GGIWParams, MotionModel, SensorModel, WeightedGGIW
from ggiw_pmbm.pmbm import PPPIntensity

BUILTIN = {"1": "scenario1.json", "2": "scenario2.json", "3": "scenario3.json", "occlusion": "occlusion.json"}


def extent_matrix(axes, orientation: float = 0.0) -> np.ndarray:
    a, b = axes
    c, s = math.cos(orientation), math.sin(orientation)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag([a * a, b * b]) @ R.T


@dataclass(frozen=True)
class GroundTruthTrack:
    birth_time: int
    death_time: int
    # rows (t, x, y); position is piecewise linear between rows
    waypoints: np.ndarray
    extent_axes: tuple[float, float] = (2.5, 2.0)
    orientation: Optional[float] = None  # None aligns the major axis with the heading
    gamma: float = 10.0

    def __post_init__(self):
        if self.death_time < self.birth_time:
            raise ValueError("death_time must be >= birth_time")
        if min(self.extent_axes) <= 0:
            raise ValueError("extent axes must be positive")

    def alive(self, k: int) -> bool:
        return self.birth_time <= k <= self.death_time

    def state(self, k: int) -> np.ndarray:
        wp = np.asarray(self.waypoints, dtype=float)
        t = wp[:, 0]
        x = np.interp(k, t, wp[:, 1])
        y = np.interp(k, t, wp[:, 2])
        seg = int(np.clip(np.searchsorted(t, k, side="right") - 1, 0, len(t) - 2)) if len(t) > 1 else 0
        if len(t) > 1:
            dt = t[seg + 1] - t[seg]
            vel = (wp[seg + 1, 1:] - wp[seg, 1:]) / dt
        else:
            vel = np.zeros(2)
        return np.array([x, y, vel[0], vel[1]])

    def extent(self, k: int) -> np.ndarray:
        theta = self.orientation
        if theta is None:
            v = self.state(k)[2:]
            theta = math.atan2(v[1], v[0]) if np.any(v) else 0.0
        return extent_matrix(self.extent_axes, theta)


@dataclass(frozen=True)
class DetectionField:
    """Constant p_D, or a grid of p_D values over a rectangle (row = y, column = x)."""

    p_D: float = 0.9
    grid: Optional[np.ndarray] = None
    bounds: tuple = ((-100.0, 100.0), (-100.0, 100.0))
    base: Optional[np.ndarray] = None

    @classmethod
    def uniform_grid(cls, p_D: float, bounds, step: float) -> "DetectionField":
        (x0, x1), (y0, y1) = bounds
        nx = int(round((x1 - x0) / step))
        ny = int(round((y1 - y0) / step))
        g = np.full((ny, nx), float(p_D))
        return cls(p_D, g, tuple(map(tuple, bounds)), g)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        (x0, x1), (y0, y1) = self.bounds
        ny, nx = self.grid.shape
        xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
        ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
        return np.meshgrid(xs, ys)

    def __call__(self, pos) -> float:
        if self.grid is None:
            return float(self.p_D)
        (x0, x1), (y0, y1) = self.bounds
        ny, nx = self.grid.shape
        x, y = float(pos[0]), float(pos[1])
        if not (x0 <= x < x1 and y0 <= y < y1):
            return float(self.p_D)
        i = min(int((y - y0) / (y1 - y0) * ny), ny - 1)
        j = min(int((x - x0) / (x1 - x0) * nx), nx - 1)
        return float(self.grid[i, j])


def cast_occlusion(
    field: DetectionField, targets: Sequence, sensor_origin=(0.0, 0.0), floor: float = 0.01
) -> DetectionField:
    """Lower p_D to ``floor`` in every grid cell hidden behind a target ellipse.

    ``targets`` holds (position, extent matrix) footprints. A cell is hidden
    when the segment from the sensor to the cell centre passes through an
    ellipse that contains neither the sensor nor the cell centre.
    """
    if field.grid is None:
        raise ValueError("occlusion needs a grid-backed detection field")
    base = field.base if field.base is not None else field.grid
    grid = base.copy()
    if len(targets) == 0:
        return DetectionField(field.p_D, grid, field.bounds, base)
    X, Y = field.cell_centers()
    cells = np.stack([X.ravel(), Y.ravel()], axis=1)
    o = np.asarray(sensor_origin, dtype=float)
    d = cells - o
    hidden = np.zeros(len(cells), dtype=bool)
    for pos, ext in targets:
        mu = np.asarray(pos, dtype=float)[:2]
        Ainv = np.linalg.inv(np.asarray(ext, dtype=float))
        w = o - mu
        # (w + t d)^T A^-1 (w + t d) = 1 along the ray o + t d
        a = np.einsum("ia,ab,ib->i", d, Ainv, d)
        b = 2.0 * d @ (Ainv @ w)
        c = float(w @ Ainv @ w) - 1.0
        if c <= 0.0:
            continue  # sensor inside the footprint
        disc = b * b - 4.0 * a * c
        ok = disc >= 0.0
        t1 = np.full(len(cells), np.inf)
        t1[ok] = (-b[ok] - np.sqrt(disc[ok])) / (2.0 * a[ok])
        inside_end = a + b + c <= 0.0
        hidden |= ok & (t1 > 0.0) & (t1 < 1.0) & ~inside_end
    grid.ravel()[hidden] = np.minimum(grid.ravel()[hidden], floor)
    return DetectionField(field.p_D, grid, field.bounds, base)


@dataclass(frozen=True)
class OcclusionSetup:
    sensor_origin: tuple = (0.0, 0.0)
    grid_step: float = 2.0
    floor: float = 0.01
    shadow_region: tuple = ((-4.0, 4.0), (30.0, 60.0))
    reference_region: tuple = ((-50.0, -42.0), (30.0, 60.0))


@dataclass
class Scenario:
    name: str
    duration: int
    tracks: list
    sensor: SensorModel
    motion: MotionModel
    birth: PPPIntensity
    initial: PPPIntensity
    seed: int = 0
    bounds: tuple = ((-100.0, 100.0), (-100.0, 100.0))
    occlusion: Optional[OcclusionSetup] = None

    def truth(self, k: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """(position, extent) of every target alive at scan k."""
        return [(t.state(k)[:2], t.extent(k)) for t in self.tracks if t.alive(k)]

    def base_field(self) -> DetectionField:
        p = self.sensor.p_D if not callable(self.sensor.p_D) else 0.9
        if self.occlusion is None:
            return DetectionField(float(p), bounds=self.bounds)
        return DetectionField.uniform_grid(float(p), self.bounds, self.occlusion.grid_step)

    def true_field(self, k: int) -> DetectionField:
        field = self.base_field()
        if self.occlusion is None:
            return field
        return cast_occlusion(field, self.truth(k), self.occlusion.sensor_origin, self.occlusion.floor)


def generate_measurements(scenario: Scenario, k: int, rng: np.random.Generator) -> np.ndarray:
    """One scan of target and clutter measurements, shuffled, shape (n, 2)."""
    if not 0 <= k < scenario.duration:
        raise ValueError(f"scan {k} outside [0, {scenario.duration})")
    field = scenario.true_field(k)
    parts = []
    for t in scenario.tracks:
        if not t.alive(k):
            continue
        x = t.state(k)
        if rng.random() >= field(x[:2]):
            continue
        n = rng.poisson(t.gamma)
        if n:
            parts.append(rng.multivariate_normal(x[:2], t.extent(k), size=n))
    n_c = rng.poisson(scenario.sensor.clutter_rate)
    (x0, x1), (y0, y1) = scenario.bounds
    clutter = np.column_stack([rng.uniform(x0, x1, n_c), rng.uniform(y0, y1, n_c)])
    parts.append(clutter)
    Z = np.concatenate(parts, axis=0) if parts else np.zeros((0, 2))
    return Z[rng.permutation(len(Z))]


def write_measurements(path, scans: Sequence[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scan", "x", "y"])
        for k, Z in enumerate(scans):
            for z in Z:
                w.writerow([k, repr(float(z[0])), repr(float(z[1]))])


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------


def birth_component(spec: dict) -> WeightedGGIW:
    pos = np.asarray(spec["position"], dtype=float)
    vel = np.asarray(spec.get("velocity", [0.0, 0.0]), dtype=float)
    ps, vs = spec.get("pos_std", 5.0), spec.get("vel_std", 1.0)
    v = float(spec.get("v", 10.0))
    axes = spec.get("extent_axes", [2.5, 2.5])
    params = GGIWParams(
        float(spec.get("alpha", 100.0)),
        float(spec.get("beta", 10.0)),
        np.concatenate([pos, vel]),
        np.diag([ps**2, ps**2, vs**2, vs**2]),
        v,
        (v - 6.0) * extent_matrix(axes),
    )
    params.validate()
    return WeightedGGIW(math.log(spec["weight"]), params)


def _grid_components(spec: dict) -> list[dict]:
    (x0, x1), (y0, y1) = spec["grid"]
    step = spec["step"]
    out = []
    for y in np.arange(y0 + step / 2, y1, step):
        for x in np.arange(x0 + step / 2, x1, step):
            comp = {k: v for k, v in spec.items() if k not in ("grid", "step")}
            comp["position"] = [float(x), float(y)]
            out.append(comp)
    return out


def _components(specs: list) -> PPPIntensity:
    flat = []
    for s in specs:
        flat.extend(_grid_components(s) if "grid" in s else [s])
    return PPPIntensity(tuple(birth_component(s) for s in flat))


def scenario_from_dict(data: dict) -> Scenario:
    bounds = tuple(tuple(map(float, b)) for b in data.get("area", [[-100, 100], [-100, 100]]))
    area = (bounds[0][1] - bounds[0][0]) * (bounds[1][1] - bounds[1][0])
    s = data.get("sensor", {})
    sensor = SensorModel(
        clutter_rate=float(s.get("clutter_rate", 10.0)),
        area=area,
        p_D=float(s.get("p_D", 0.9)),
        p_S=float(s.get("p_S", 0.99)),
        gate_prob=float(s.get("gate_prob", 0.999)),
    )
    motion = MotionModel(**data.get("motion", {}))
    tracks = []
    for t in data["tracks"]:
        tracks.append(
            GroundTruthTrack(
                int(t["birth"]),
                int(t["death"]),
                np.asarray(t["waypoints"], dtype=float),
                tuple(t.get("extent_axes", (2.5, 2.0))),
                t.get("orientation"),
                float(t.get("gamma", 10.0)),
            )
        )
    birth = _components(data["birth"])
    initial = _components(data.get("initial", data["birth"]))
    occ = None
    if "occlusion" in data:
        o = data["occlusion"]
        occ = OcclusionSetup(
            tuple(o.get("sensor_origin", (0.0, 0.0))),
            float(o.get("grid_step", 2.0)),
            float(o.get("floor", 0.01)),
            tuple(map(tuple, o["shadow_region"])),
            tuple(map(tuple, o["reference_region"])),
        )
    return Scenario(
        data.get("name", "custom"),
        int(data["duration"]),
        tracks,
        sensor,
        motion,
        birth,
        initial,
        int(data.get("seed", 0)),
        bounds,
        occ,
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def builtin_scenario(ident) -> Scenario:
    key = str(ident)
    if key not in BUILTIN:
        raise KeyError(f"unknown scenario {ident!r}; choose from {sorted(BUILTIN)}")
    text = resources.files("ggiw_pmbm.data").joinpath(BUILTIN[key]).read_text()
    return scenario_from_dict(json.loads(text))


def resolve_scenario(ident_or_path) -> Scenario:
    if str(ident_or_path) in BUILTIN:
        return builtin_scenario(ident_or_path)
    path = Path(ident_or_path)
    if not path.exists():
        raise FileNotFoundError(f"no builtin scenario or file named {ident_or_path!r}")
    return load_scenario(path)


def random_tracks(
    n: int, sites: Sequence, duration: int, rng: np.random.Generator, speed=(0.5, 1.5)
) -> list[dict]:
    """Random straight-line tracks starting at the given birth sites, heading inwards."""
    out = []
    for i in range(n):
        site = np.asarray(sites[i % len(sites)], dtype=float)
        birth = int(rng.integers(0, duration - 20))
        death = int(min(duration - 1, birth + rng.integers(20, 80)))
        heading = math.atan2(-site[1], -site[0]) + rng.uniform(-0.6, 0.6)
        v = rng.uniform(*speed)
        end = site + v * (death - birth) * np.array([math.cos(heading), math.sin(heading)])
        start = site + rng.normal(0.0, 2.0, size=2)
        out.append(
            {
                "birth": birth,
                "death": death,
                "waypoints": [[birth, *np.round(start, 3).tolist()], [death, *np.round(end, 3).tolist()]],
                "extent_axes": np.round(rng.uniform(2.0, 3.0, size=2), 3).tolist(),
                "gamma": 10.0,
            }
        )
    return out
