"""Receding-horizon evaluation of footstep planners on ditch and step suites."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .controller import Controller, desired_angle
from .lstm_planner import plan_lstm_guided, plan_mode
from .search import (
    FootstepPlan,
    SearchConfig,
    plan_angle_space,
    plan_step_space,
    with_fallback,
)
from .slip import ApexState, FailureKind, HopperParams, OdeCounter, apex_step, touchdown_x
from .terrain import DITCHES, STEPS, Terrain, TerrainGenConfig, cell_centers, gen_world

log = logging.getLogger(__name__)


@dataclass
class SuiteConfig:
    n_terrains_per_kind: int = 15
    n_apexes: int = 5
    goal_x: float = 10.0
    mu: float = 0.8
    replan_every: int = 3
    max_steps: int = 40
    xdot_range: tuple[float, float] = (0.4, 1.4)
    apex_z: float = 0.85
    start_x: float = 0.0
    lookahead: float = 7.5
    seed: int = 0

    def __post_init__(self):
        if self.n_terrains_per_kind < 1 or self.n_apexes < 1 or self.max_steps < 1:
            raise ValueError("suite counts must be positive")
        if self.replan_every < 1:
            raise ValueError("replan_every must be >= 1")


@dataclass
class TestCase:
    kind: str
    index: int
    terrain: Terrain
    apex: ApexState

    def to_dict(self):
        return {"kind": self.kind, "index": self.index, "terrain": self.terrain.to_dict(), "apex": list(self.apex)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["index"], Terrain.from_dict(d["terrain"]), ApexState(*d["apex"]))


@dataclass
class EpisodeResult:
    success: bool
    failure: FailureKind | None
    steps_taken: int
    distance: float
    ode_calls: int
    plan_times: list[float] = field(default_factory=list)
    exec_ode_calls: int = 0
    reason: str = ""

    def to_dict(self):
        d = asdict(self)
        d["failure"] = self.failure.value if self.failure else None
        return d


# --------------------------------------------------------------------------
# suite


def gen_test_suite(cfg: SuiteConfig, terrain_cfg: TerrainGenConfig | None = None, rng=None) -> list[TestCase]:
    """``n_terrains_per_kind`` worlds of each kind, each paired with apexes whose
    velocity is swept linearly over ``cfg.xdot_range``."""
    tcfg = replace(terrain_cfg or TerrainGenConfig(), mu=cfg.mu)
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    if cfg.n_apexes == 1:
        speeds = [0.5 * (cfg.xdot_range[0] + cfg.xdot_range[1])]
    else:
        speeds = np.linspace(*cfg.xdot_range, cfg.n_apexes)
    cases = []
    for kind in (DITCHES, STEPS):
        for i in range(cfg.n_terrains_per_kind):
            terrain = gen_world(kind, tcfg, rng)
            for v in speeds:
                z = terrain.height_at(cfg.start_x) + cfg.apex_z
                cases.append(TestCase(kind, i, terrain, ApexState(cfg.start_x, float(z), float(v))))
    return cases


def save_suite(cases, path):
    with open(path, "w") as f:
        json.dump([c.to_dict() for c in cases], f, indent=1)
        f.write("\n")


def load_suite(path):
    with open(path) as f:
        return [TestCase.from_dict(d) for d in json.load(f)]


# --------------------------------------------------------------------------
# heuristic baseline


@dataclass
class HeuristicConfig:
    t_nom: float = 0.5
    margin: float = 0.15
    n_steps: int = 10


def _unsafe(terrain: Terrain, x: float, margin: float) -> bool:
    edges = terrain.edges
    if any(abs(x - e) < margin for e in edges):
        return True
    i = terrain.segment_index(x)
    hs = terrain.heights
    if 0 < i < len(hs) - 1 and hs[i] < hs[i - 1] and hs[i] < hs[i + 1]:
        return True
    return False


def plan_heuristic(apex: ApexState, terrain: Terrain, cfg: HeuristicConfig | None = None, start_x=None) -> list[float]:
    """Nominal-gait footsteps moved off ditches and edges. Uses no dynamics."""
    cfg = cfg or HeuristicConfig()
    start = apex.x if start_x is None else start_x
    step = apex.xdot * cfg.t_nom
    centers = cell_centers(apex.x)
    safe = [c for c in centers if not _unsafe(terrain, float(c), cfg.margin)]
    out = []
    for k in range(1, cfg.n_steps + 1):
        x = start + k * step
        if _unsafe(terrain, x, cfg.margin) and safe:
            x = float(min(safe, key=lambda c: (abs(c - x), c)))
        out.append(x)
    return out


# --------------------------------------------------------------------------
# planner adapters


class Planner:
    """Common planning interface used by the episode loop."""

    name = "planner"
    stochastic = False

    def __call__(self, apex, terrain, goal_x, committed, counter, rng) -> FootstepPlan | None:
        raise NotImplementedError


class HeuristicPlanner(Planner):
    name = "heuristic"

    def __init__(self, cfg: HeuristicConfig | None = None, params: HopperParams | None = None):
        self.cfg = cfg or HeuristicConfig()
        self.params = params or HopperParams()

    def __call__(self, apex, terrain, goal_x, committed, counter, rng):
        x0 = touchdown_x(apex, committed, terrain, self.params)
        if x0 is None:
            return None
        xs = plan_heuristic(apex, terrain, self.cfg, start_x=x0)
        return FootstepPlan([x0] + xs, [{"theta": committed}] + [{} for _ in xs], [committed] + [math.nan] * len(xs), [apex])


class _SearchPlanner(Planner):
    def __init__(self, cfg: SearchConfig, params: HopperParams | None = None):
        self.cfg = cfg
        self.params = params or HopperParams()

    def _cfg(self, goal_x, committed):
        return replace(self.cfg, goal_x=goal_x, committed_angle=committed)


class AngleSpacePlanner(_SearchPlanner):
    name = "angle-space"

    def __call__(self, apex, terrain, goal_x, committed, counter, rng):
        def run(cfg):
            return plan_angle_space(apex, terrain, cfg, self.params, counter)

        plans = with_fallback(run, self._cfg(goal_x, committed))
        return plans[0] if plans else None


class StepSpacePlanner(_SearchPlanner):
    name = "step-space"

    def __init__(self, controller, cfg, params=None):
        super().__init__(cfg, params)
        self.controller = controller

    def __call__(self, apex, terrain, goal_x, committed, counter, rng):
        def run(cfg):
            return plan_step_space(apex, terrain, self.controller, cfg, self.params, counter)

        plans = with_fallback(run, self._cfg(goal_x, committed))
        return plans[0] if plans else None


class LstmModePlanner(Planner):
    name = "lstm"

    # committed hop plus two rolled-out steps covers one replanning interval
    def __init__(self, net, n_steps: int = 2, params=None):
        self.net = net
        self.n_steps = n_steps
        self.params = params or HopperParams()

    def __call__(self, apex, terrain, goal_x, committed, counter, rng):
        plans = plan_mode(self.net, terrain, apex, self.n_steps, committed, self.params)
        return plans[0] if plans else None


class LstmGuidedPlanner(_SearchPlanner):
    name = "lstm-guided"
    stochastic = True

    def __init__(self, net, controller, cfg, params=None, temperature: float = 2.0, reach_mask: bool = True):
        super().__init__(cfg, params)
        self.net = net
        self.controller = controller
        self.temperature = temperature
        self.reach_mask = reach_mask

    def __call__(self, apex, terrain, goal_x, committed, counter, rng):
        def run(cfg):
            return plan_lstm_guided(
                apex, terrain, self.net, self.controller, cfg, self.params, counter, rng, self.temperature,
                reach_mask=self.reach_mask,
            )

        plans = with_fallback(run, self._cfg(goal_x, committed))
        return plans[0] if plans else None


# --------------------------------------------------------------------------
# episodes


def _step_angle(controller, apex, terrain, plan: FootstepPlan, j: int) -> float:
    action = plan.actions[j]
    if "xL" in action:
        x_L = action["xL"]
    else:
        x_L = plan.steps[j] - apex.x
    return desired_angle(controller, apex, terrain, x_L)


def neutral_angle(apex: ApexState, terrain: Terrain, params: HopperParams, counter=None, n: int = 25) -> float:
    """Leg angle that best preserves forward speed over one hop.

    A coarse scan of the friction cone by simulation, refined by bisection
    where the speed change crosses zero. Falls back to 0 when every hop fails.
    """
    lim = math.atan(terrain.mu) - 0.01

    def dv(th):
        r = apex_step(apex, th, terrain, params, counter)
        return r.next_apex.xdot - apex.xdot if r.ok else None

    grid = np.linspace(-0.25 * lim, lim, n)
    vals = [dv(float(th)) for th in grid]
    ok = [(abs(v), float(th)) for th, v in zip(grid, vals) if v is not None]
    if not ok:
        return 0.0
    best = min(ok)[1]
    for i in range(n - 1):
        a, b = vals[i], vals[i + 1]
        if a is not None and b is not None and a > 0 >= b:
            lo, hi = float(grid[i]), float(grid[i + 1])
            for _ in range(12):
                mid = 0.5 * (lo + hi)
                v = dv(mid)
                if v is None:
                    break
                lo, hi = (mid, hi) if v > 0 else (lo, mid)
            else:
                best = 0.5 * (lo + hi)
            break
    return best


def run_episode(
    planner: Planner,
    terrain: Terrain,
    apex: ApexState,
    cfg: SuiteConfig,
    controller: Controller,
    params: HopperParams | None = None,
    rng=None,
) -> EpisodeResult:
    """Plan, execute ``replan_every`` hops through the controller, repeat.

    The hopper always holds a committed leg angle for its next hop; planning
    starts from the touchdown that angle produces. Only planning-phase
    simulator calls are reported in ``ode_calls``.
    """
    params = params or HopperParams()
    rng = np.random.default_rng(rng)
    plan_calls, exec_calls = OdeCounter(), OdeCounter()
    committed = neutral_angle(apex, terrain, params, exec_calls)
    steps = 0
    empties = 0
    distance = apex.x
    times: list[float] = []

    def result(success, failure=None, reason=""):
        return EpisodeResult(success, failure, steps, distance, plan_calls.calls, times, exec_calls.calls, reason)

    while True:
        if steps >= cfg.max_steps:
            return result(False, reason="max_steps")
        goal = min(cfg.goal_x, apex.x + cfg.lookahead)
        t0 = time.perf_counter()
        plan = planner(apex, terrain, goal, committed, plan_calls, rng)
        times.append(time.perf_counter() - t0)
        if plan is None:
            empties += 1
            if empties >= 2:
                return result(False, reason="no_plan")
        else:
            empties = 0
        n_exec = cfg.replan_every if plan is not None else 1
        for j in range(n_exec):
            if j == 0:
                theta = committed
            elif plan is not None and j < len(plan.steps):
                theta = _step_angle(controller, apex, terrain, plan, j)
            else:
                break
            r = apex_step(apex, theta, terrain, params, exec_calls)
            steps += 1
            if not r.ok:
                return result(False, r.kind, reason="crash")
            distance = r.footstep_x
            apex = r.next_apex
            if r.footstep_x >= cfg.goal_x:
                return result(True)
            if steps >= cfg.max_steps:
                return result(False, reason="max_steps")
        j = n_exec
        if plan is not None and j < len(plan.steps):
            committed = _step_angle(controller, apex, terrain, plan, j)
        else:
            committed = neutral_angle(apex, terrain, params, exec_calls)


# --------------------------------------------------------------------------
# tables


@dataclass
class ResultsTable:
    rows: list[dict]
    episodes: list[dict] = field(default_factory=list)

    COLUMNS = ("planner", "suite", "success_pct", "mean_ode_calls", "mean_plan_time_s", "episodes")

    def row(self, planner: str, suite: str) -> dict:
        for r in self.rows:
            if r["planner"] == planner and r["suite"] == suite:
                return r
        raise KeyError((planner, suite))

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        cols = [c for c in self.COLUMNS if timing or c != "mean_plan_time_s"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r[c] for c in cols])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'planner':<13} {'suite':<8} {'success%':>9} {'ODE calls':>10} {'t_plan[s]':>10} {'n':>4}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{r['planner']:<13} {r['suite']:<8} {r['success_pct']:>9.1f} {r['mean_ode_calls']:>10.1f} "
                f"{r['mean_plan_time_s']:>10.2g} {r['episodes']:>4d}"
            )
        return "\n".join(lines)

    def episodes_jsonl(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.episodes)


def _episode(args):
    planner, case, cfg, controller, params, seed = args
    try:
        return run_episode(planner, case.terrain, case.apex, cfg, controller, params, rng=seed)
    except Exception as exc:  # a crashing planner costs the case, not the suite
        log.warning("planner %s raised on %s case %d: %r", planner.name, case.kind, case.index, exc)
        return EpisodeResult(False, None, 0, case.apex.x, 0, [], 0, reason=f"error: {exc!r}")


def run_suite(
    planners: dict,
    suite: list[TestCase],
    cfg: SuiteConfig,
    controller: Controller,
    params: HopperParams | None = None,
    workers: int = 1,
    progress=None,
) -> ResultsTable:
    """Every planner on every case; one row per (planner, terrain kind)."""
    params = params or HopperParams()
    jobs, keys = [], []
    for name, planner in planners.items():
        for k, case in enumerate(suite):
            seed = [cfg.seed, k]
            jobs.append((planner, case, cfg, controller, params, seed))
            keys.append((name, k))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_episode, jobs, chunksize=1))
    else:
        results = []
        for job in jobs:
            results.append(_episode(job))
            if progress:
                progress(len(results), len(jobs))
    rows, episodes = [], []
    for name in planners:
        for kind in (DITCHES, STEPS):
            res = [r for (n, k), r in zip(keys, results) if n == name and suite[k].kind == kind]
            if not res:
                continue
            times = [t for r in res for t in r.plan_times]
            rows.append(
                {
                    "planner": name,
                    "suite": kind,
                    "success_pct": round(100.0 * sum(r.success for r in res) / len(res), 3),
                    "mean_ode_calls": round(float(np.mean([r.ode_calls for r in res])), 3),
                    "mean_plan_time_s": float(f"{np.mean(times):.3g}") if times else 0.0,
                    "episodes": len(res),
                }
            )
    for (name, k), r in zip(keys, results):
        d = r.to_dict()
        d.update(planner=name, suite=suite[k].kind, case=k, terrain_index=suite[k].index)
        episodes.append(d)
    return ResultsTable(rows, episodes)


# --------------------------------------------------------------------------
# canonical desk-scale planner set


def default_search_configs() -> dict:
    return {
        "angle-space": SearchConfig(
            branching=20, fallback_branching=30, node_budget=300, require_forward=True
        ),
        "step-space": SearchConfig(
            step_grid_horizon=5.0,
            step_grid_spacing=0.5,
            step_grid_mode="reach",
            node_budget=300,
            require_forward=True,
        ),
        "lstm-guided": SearchConfig(
            branching=3, fallback_branching=5, node_budget=300, require_forward=True
        ),
    }


def build_planners(controller, net, params=None, configs: dict | None = None, names=None, temperature=2.0):
    params = params or HopperParams()
    cfgs = default_search_configs()
    cfgs.update(configs or {})
    all_planners = {
        "heuristic": lambda: HeuristicPlanner(params=params),
        "angle-space": lambda: AngleSpacePlanner(cfgs["angle-space"], params),
        "step-space": lambda: StepSpacePlanner(controller, cfgs["step-space"], params),
        "lstm": lambda: LstmModePlanner(net, params=params),
        "lstm-guided": lambda: LstmGuidedPlanner(net, controller, cfgs["lstm-guided"], params, temperature),
    }
    names = list(all_planners) if names is None else list(names)
    unknown = [n for n in names if n not in all_planners]
    if unknown:
        raise KeyError(f"unknown planner(s) {unknown}; valid: {sorted(all_planners)}")
    return {n: all_planners[n]() for n in names}


PLANNER_NAMES = ("heuristic", "angle-space", "step-space", "lstm", "lstm-guided")
