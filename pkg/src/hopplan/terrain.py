"""Piecewise-flat terrains (ditch and step worlds) and the robot-centric heightmap."""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_CELLS = 110
CELL_WIDTH = 0.1
BEHIND = 3.0  # metres of terrain kept behind the robot
AHEAD = 8.0

DITCHES = "ditches"
STEPS = "steps"


@dataclass(frozen=True)
class Terrain:
    """Piecewise-constant height profile.

    ``breakpoints`` is a sequence of ``(x_start, height)``; the first segment
    extends to -inf whatever its stored ``x_start``.
    """

    breakpoints: tuple[tuple[float, float], ...]
    mu: float = 0.8
    kind: str = DITCHES
    _xs: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _hs: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bps = tuple((float(x), float(h)) for x, h in self.breakpoints)
        if not bps:
            raise ValueError("terrain needs at least one segment")
        xs = (-math.inf,) + tuple(x for x, _ in bps[1:])
        for a, b in zip(xs, xs[1:]):
            if not b > a:
                raise ValueError("breakpoint x positions must be strictly increasing")
        hs = tuple(h for _, h in bps)
        if not all(math.isfinite(h) for h in hs):
            raise ValueError("heights must be finite")
        object.__setattr__(self, "breakpoints", ((-math.inf, hs[0]),) + bps[1:])
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_hs", hs)

    @property
    def edges(self) -> tuple[float, ...]:
        """x positions of every height discontinuity."""
        return self._xs[1:]

    @property
    def heights(self) -> tuple[float, ...]:
        return self._hs

    def segment_index(self, x: float) -> int:
        return bisect.bisect_right(self._xs, x) - 1

    def height_at(self, x: float) -> float:
        return self._hs[bisect.bisect_right(self._xs, x) - 1]

    def segment_bounds(self, i: int) -> tuple[float, float]:
        hi = self._xs[i + 1] if i + 1 < len(self._xs) else math.inf
        return self._xs[i], hi

    def to_dict(self) -> dict:
        bps = [[None if math.isinf(x) else x, h] for x, h in self.breakpoints]
        return {"kind": self.kind, "mu": self.mu, "breakpoints": bps}

    @classmethod
    def from_dict(cls, d: dict) -> "Terrain":
        bps = [(-math.inf if x is None else x, h) for x, h in d["breakpoints"]]
        return cls(tuple(bps), mu=float(d["mu"]), kind=d["kind"])

    def with_mu(self, mu: float) -> "Terrain":
        return Terrain(self.breakpoints, mu=mu, kind=self.kind)


def flat(height: float = 0.0, mu: float = 0.8, kind: str = STEPS) -> Terrain:
    return Terrain(((-math.inf, height),), mu=mu, kind=kind)


def height_at(terrain: Terrain, x: float) -> float:
    return terrain.height_at(x)


def save_terrains(terrains: list[Terrain], path) -> None:
    Path(path).write_text(json.dumps([t.to_dict() for t in terrains], indent=1) + "\n")


def load_terrains(path) -> list[Terrain]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [Terrain.from_dict(d) for d in data]


# --------------------------------------------------------------------------
# heightmap


@dataclass(frozen=True)
class Heightmap:
    cells: np.ndarray
    origin_x: float

    def __post_init__(self):
        if self.cells.shape != (N_CELLS,):
            raise ValueError(f"heightmap must have {N_CELLS} cells, got {self.cells.shape}")

    def centers(self) -> np.ndarray:
        return cell_centers(self.origin_x)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cell_index", "x_center", "height"])
            for i, (xc, h) in enumerate(zip(self.centers(), self.cells)):
                w.writerow([i, repr(float(xc)), repr(float(h))])


def cell_center(origin_x: float, i) -> float:
    return origin_x - BEHIND + CELL_WIDTH * (i + 0.5)


def cell_centers(origin_x: float) -> np.ndarray:
    return origin_x - BEHIND + CELL_WIDTH * (np.arange(N_CELLS) + 0.5)


def cell_index(origin_x: float, x: float) -> int | None:
    """Cell holding ``x``, or None when ``x`` lies outside the window."""
    i = math.floor(round((x - origin_x + BEHIND) / CELL_WIDTH, 9))
    if 0 <= i < N_CELLS:
        return int(i)
    return None


def discretize(terrain: Terrain, robot_x: float) -> Heightmap:
    seg = np.searchsorted(terrain._xs, cell_centers(robot_x), side="right") - 1
    cells = np.asarray(terrain._hs)[seg]
    return Heightmap(cells, float(robot_x))


# --------------------------------------------------------------------------
# random worlds


@dataclass
class TerrainGenConfig:
    ditch_width: tuple[float, float] = (0.3, 0.9)
    ditch_depth: float = 1.0
    step_height: tuple[float, float] = (0.05, 0.2)
    spacing: tuple[float, float] = (1.0, 2.5)
    extent: float = 20.0
    launch_zone: float = 1.5
    mu: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        for name in ("ditch_width", "step_height", "spacing"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a non-negative (lo, hi) range")
        if self.spacing[0] <= 0:
            raise ValueError("feature spacing must be positive")
        if self.spacing[0] < self.ditch_width[1]:
            raise ValueError("min spacing must be at least the max ditch width")
        if self.extent <= self.launch_zone:
            raise ValueError("extent must exceed the launch zone")
        if self.ditch_depth < 0:
            raise ValueError("ditch depth must be non-negative")


def _rng(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    return rng


def _merge(bps: list[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    out = [bps[0]]
    for x, h in bps[1:]:
        if h != out[-1][1]:
            out.append((x, h))
    return tuple(out)


def gen_ditch_world(cfg: TerrainGenConfig, rng=None) -> Terrain:
    cfg.validate()
    rng = _rng(cfg.seed if rng is None else rng)
    bps = [(-math.inf, 0.0)]
    s = cfg.launch_zone + rng.uniform(0.0, cfg.spacing[0])
    while True:
        w = rng.uniform(*cfg.ditch_width)
        if s + w > cfg.extent:
            break
        if w > 0 and cfg.ditch_depth > 0:
            bps.append((s, -cfg.ditch_depth))
            bps.append((s + w, 0.0))
        s += rng.uniform(*cfg.spacing)
    return Terrain(_merge(bps), mu=cfg.mu, kind=DITCHES)


def gen_step_world(cfg: TerrainGenConfig, rng=None) -> Terrain:
    cfg.validate()
    rng = _rng(cfg.seed if rng is None else rng)
    bound = 2.0 * cfg.step_height[1]
    bps = [(-math.inf, 0.0)]
    level = 0.0
    s = cfg.launch_zone + rng.uniform(0.0, cfg.spacing[0])
    while s < cfg.extent:
        dh = rng.uniform(*cfg.step_height)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if abs(level + sign * dh) > bound + 1e-12:
            sign = -sign
        level = level + sign * dh
        bps.append((s, level))
        s += rng.uniform(*cfg.spacing)
    return Terrain(_merge(bps), mu=cfg.mu, kind=STEPS)


def gen_world(kind: str, cfg: TerrainGenConfig, rng=None) -> Terrain:
    if kind == DITCHES:
        return gen_ditch_world(cfg, rng)
    if kind == STEPS:
        return gen_step_world(cfg, rng)
    raise ValueError(f"unknown terrain kind {kind!r}")
