"""Best-first footstep search over simulated hops (angle-space and step-space)."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .slip import ApexState, HopperParams, OdeCounter, apex_step
from .terrain import Terrain


@dataclass
class SearchConfig:
    branching: int = 15
    fallback_branching: int | None = None
    desired_sequences: int = 1
    goal_x: float = 10.0
    weights: tuple[float, float, float] = (1.0, 1.0, 2.0)
    min_steps: int = 0
    step_grid_horizon: float = 5.0
    step_grid_spacing: float = 0.5
    step_grid_start: float | None = None
    step_grid_mode: str = "fixed"  # or "reach": spread over the apex's reachable step lengths
    node_budget: int = 20_000
    d_max: float = 1.0
    angle_margin: float = 0.01
    committed_angle: float = 0.0
    max_depth: int | None = None
    require_progress: bool = True
    require_forward: bool = False  # drop children whose next apex moves backwards

    def __post_init__(self):
        if self.branching < 2:
            raise ValueError("branching must be >= 2")
        if any(w < 0 for w in self.weights):
            raise ValueError("cost weights must be non-negative")
        if not self.step_grid_spacing > 0:
            raise ValueError("step grid spacing must be positive")


class Node:
    __slots__ = ("apex", "footstep_x", "action", "angle", "parent", "cost", "children", "depth", "memo")

    def __init__(self, apex, footstep_x, action, angle, parent=None, cost=0.0):
        self.apex = apex
        self.footstep_x = footstep_x
        self.action = action
        self.angle = angle
        self.parent = parent
        self.cost = cost
        self.children = []
        self.depth = 0 if parent is None else parent.depth + 1
        self.memo = None

    def __repr__(self):
        return f"Node(x={self.footstep_x:.3f}, depth={self.depth}, cost={self.cost:.3f})"


@dataclass
class FootstepPlan:
    """Root-first footstep sequence with the action used for every step.

    ``apexes[i]`` is the apex from which step ``i`` was taken; the last entry
    is the apex after the final step.
    """

    steps: list[float]
    actions: list[dict]
    angles: list[float]
    apexes: list[ApexState]
    cost: float = 0.0

    @property
    def apex0(self) -> ApexState:
        return self.apexes[0]

    def to_dict(self) -> dict:
        a = self.apex0
        return {
            "steps": list(self.steps),
            "actions": list(self.actions),
            "apex0": {"x": a.x, "z": a.z, "xdot": a.xdot},
            "cost": self.cost,
        }


@dataclass
class SearchStats:
    """Search bookkeeping. With ``trace`` set, ``events`` records every queue
    operation as ("push" | "pop", insertion id, cost)."""

    expansions: int = 0
    pops: list[float] = field(default_factory=list)
    nodes: list[Node] = field(default_factory=list)
    trace: bool = False
    events: list = field(default_factory=list)


# --------------------------------------------------------------------------
# cost


def isolation(node: Node, siblings, d_max: float = 1.0) -> float:
    """Distance from ``node`` to its nearest adjacent sibling footstep.

    ``siblings`` is ordered by the sampled control value and holds None for
    samples that crashed. A missing or crashed neighbour counts as ``d_max``.
    """
    i = next(k for k, s in enumerate(siblings) if s is node)
    left = siblings[i - 1] if i > 0 else None
    right = siblings[i + 1] if i + 1 < len(siblings) else None
    dl = abs(node.footstep_x - left.footstep_x) if left is not None else d_max
    dr = abs(node.footstep_x - right.footstep_x) if right is not None else d_max
    return min(dl, dr, d_max)


def node_cost(node: Node, siblings, cfg: SearchConfig) -> float:
    w1, w2, w3 = cfg.weights
    c = w1 * abs(node.footstep_x - cfg.goal_x) + w2 * abs(node.apex.xdot)
    if w3:
        c += w3 * isolation(node, siblings, cfg.d_max)
    return c


# --------------------------------------------------------------------------
# action sets


def sample_angles(apex: ApexState, terrain: Terrain, B: int, margin: float = 0.01) -> list[float]:
    """``B`` leg angles evenly covering the friction cone, shrunk by ``margin``."""
    if B < 1:
        raise ValueError("B must be >= 1")
    lim = math.atan(terrain.mu) - margin
    if B == 1:
        return [0.0]
    return [float(a) for a in np.linspace(-lim, lim, B)]


def step_grid(cfg: SearchConfig) -> list[float]:
    start = cfg.step_grid_spacing if cfg.step_grid_start is None else cfg.step_grid_start
    n = int(math.floor((cfg.step_grid_horizon - start) / cfg.step_grid_spacing + 1e-9)) + 1
    if start > cfg.step_grid_horizon or n < 1:
        raise ValueError("empty step-length action set: horizon shorter than the grid start")
    return [start + k * cfg.step_grid_spacing for k in range(n)]


# --------------------------------------------------------------------------
# search skeleton

# (node) -> ordered list of (action dict, leg angle)
Proposer = Callable[[Node], list]


def make_root(apex: ApexState, terrain: Terrain, cfg: SearchConfig, params: HopperParams, counter) -> Node | None:
    """The committed hop from the initial apex; its footstep is fixed."""
    r = apex_step(apex, cfg.committed_angle, terrain, params, counter)
    if not r.ok:
        return None
    root = Node(r.next_apex, r.footstep_x, {"theta": cfg.committed_angle}, cfg.committed_angle)
    root.memo = {"apex0": apex}
    return root


def extract_path(node: Node) -> FootstepPlan:
    chain = []
    n = node
    while n is not None:
        chain.append(n)
        n = n.parent
    chain.reverse()
    root = chain[0]
    apex0 = root.memo["apex0"] if root.memo and "apex0" in root.memo else None
    apexes = ([apex0] if apex0 is not None else []) + [c.apex for c in chain]
    return FootstepPlan(
        steps=[c.footstep_x for c in chain],
        actions=[dict(c.action) for c in chain],
        angles=[c.angle for c in chain],
        apexes=apexes,
        cost=node.cost,
    )


def best_first(
    apex: ApexState,
    terrain: Terrain,
    cfg: SearchConfig,
    propose: Proposer,
    params: HopperParams,
    counter: OdeCounter | None = None,
    stats: SearchStats | None = None,
) -> list[FootstepPlan]:
    """Grow a tree of simulated hops, always expanding the cheapest open node.

    Goal nodes are recorded and not expanded. Stops after
    ``cfg.desired_sequences`` goals, an empty queue, or ``cfg.node_budget``
    expansions.
    """
    counter = counter if counter is not None else OdeCounter()
    stats = stats if stats is not None else SearchStats()
    if cfg.goal_x <= apex.x:
        return []
    root = make_root(apex, terrain, cfg, params, counter)
    if root is None:
        return []
    stats.nodes.append(root)
    tie = itertools.count()
    queue: list = []
    goals: list[Node] = []

    def at_goal(n: Node) -> bool:
        return n.footstep_x >= cfg.goal_x and n.depth >= max(cfg.min_steps, 1)

    current = root
    while True:
        if cfg.max_depth is None or current.depth < cfg.max_depth:
            stats.expansions += 1
            sibs = []
            for action, angle in propose(current):
                r = apex_step(current.apex, angle, terrain, params, counter)
                sibs.append(Node(r.next_apex, r.footstep_x, action, angle, current) if r.ok else None)
            for child in sibs:
                if child is None:
                    continue
                if cfg.require_progress and child.footstep_x <= current.footstep_x:
                    continue
                if cfg.require_forward and child.apex.xdot <= 0:
                    continue
                child.cost = node_cost(child, sibs, cfg)
                current.children.append(child)
                stats.nodes.append(child)
                item = (child.cost, next(tie), child)
                heapq.heappush(queue, item)
                if stats.trace:
                    stats.events.append(("push", item[1], item[0]))
        current = None
        while queue and len(goals) < cfg.desired_sequences:
            cost, k, n = heapq.heappop(queue)
            stats.pops.append(cost)
            if stats.trace:
                stats.events.append(("pop", k, cost))
            if at_goal(n):
                goals.append(n)
                continue
            current = n
            break
        if current is None or len(goals) >= cfg.desired_sequences or stats.expansions >= cfg.node_budget:
            break
    return [extract_path(g) for g in goals]


def plan_angle_space(
    apex: ApexState,
    terrain: Terrain,
    cfg: SearchConfig,
    params: HopperParams | None = None,
    counter: OdeCounter | None = None,
    stats: SearchStats | None = None,
) -> list[FootstepPlan]:
    params = params or HopperParams()

    def propose(node):
        return [({"theta": a}, a) for a in sample_angles(node.apex, terrain, cfg.branching, cfg.angle_margin)]

    return best_first(apex, terrain, cfg, propose, params, counter, stats)


def reachable_steps(apex: ApexState, terrain: Terrain, params: HopperParams, margin: float = 0.01, n: int = 9):
    """(min, max) step length over the friction cone, from closed-form flight only."""
    from .slip import flight_phase, Touchdown

    xs = []
    for a in sample_angles(apex, terrain, n, margin):
        td = flight_phase(apex, a, terrain, params)
        if isinstance(td, Touchdown):
            xs.append(td.state.foot_x - apex.x)
    return (min(xs), max(xs)) if xs else None


def plan_step_space(
    apex: ApexState,
    terrain: Terrain,
    controller,
    cfg: SearchConfig,
    params: HopperParams | None = None,
    counter: OdeCounter | None = None,
    stats: SearchStats | None = None,
) -> list[FootstepPlan]:
    from .controller import desired_angle

    params = params or HopperParams()
    grid = step_grid(cfg)
    if cfg.step_grid_mode not in ("fixed", "reach"):
        raise ValueError(f"unknown step grid mode {cfg.step_grid_mode!r}")

    def lengths(node):
        if cfg.step_grid_mode == "fixed":
            return grid
        span = reachable_steps(node.apex, terrain, params, cfg.angle_margin)
        if span is None:
            return []
        return [float(v) for v in np.linspace(span[0], span[1], len(grid))]

    def propose(node):
        return [({"xL": xl}, desired_angle(controller, node.apex, terrain, xl)) for xl in lengths(node)]

    return best_first(apex, terrain, cfg, propose, params, counter, stats)


def with_fallback(plan_fn, cfg: SearchConfig, *args, **kwargs) -> list[FootstepPlan]:
    """Run ``plan_fn(cfg, ...)``; on failure retry once at the fallback branching."""
    plans = plan_fn(cfg, *args, **kwargs)
    if not plans and cfg.fallback_branching and cfg.fallback_branching != cfg.branching:
        plans = plan_fn(replace(cfg, branching=cfg.fallback_branching), *args, **kwargs)
    return plans


def replay(plan: FootstepPlan, terrain: Terrain, params: HopperParams | None = None):
    """Re-simulate a plan open loop with its stored angles.

    Returns (ok, footsteps) where ``ok`` is False on any failure.
    """
    params = params or HopperParams()
    apex = plan.apex0
    xs = []
    for th in plan.angles:
        r = apex_step(apex, th, terrain, params)
        if not r.ok:
            return False, xs
        xs.append(r.footstep_x)
        apex = r.next_apex
    return True, xs
