"""Learned low-level controller: (apex velocity, apex height, step length) -> leg angle."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import nn
from .slip import ApexState, Failure, HopperParams, apex_step
from .terrain import Terrain, flat


class ControllerSample(NamedTuple):
    xdot: float
    z_rel: float
    x_L: float
    theta: float


@dataclass
class ControllerGrid:
    xdot: tuple[float, float, int] = (0.0, 4.0, 20)
    z_rel: tuple[float, float, int] = (0.55, 1.2, 10)
    theta: tuple[float, float, int] = (-0.65, 0.65, 25)
    mu: float = 0.8

    def axes(self):
        out = []
        for lo, hi, n in (self.xdot, self.z_rel, self.theta):
            if n < 2 or not hi > lo:
                raise ValueError("controller grid axes need count >= 2 and hi > lo")
            out.append(np.linspace(lo, hi, int(n)))
        if max(abs(self.theta[0]), abs(self.theta[1])) > np.arctan(self.mu):
            raise ValueError("theta range leaves the friction cone")
        return out


def gen_controller_dataset(grid: ControllerGrid, params: HopperParams) -> list[ControllerSample]:
    """Simulate one hop on flat ground per grid point; keep the successful ones."""
    ground = flat(0.0, mu=grid.mu)
    out = []
    for xd, z, th in itertools.product(*grid.axes()):
        r = apex_step(ApexState(0.0, float(z), float(xd)), float(th), ground, params)
        if r.ok:
            out.append(ControllerSample(float(xd), float(z), r.footstep_x, float(th)))
    return out


@dataclass
class ControllerHyper:
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 400
    batch: int = 128
    lr: float = 3e-3
    lr_final: float = 2e-4
    holdout: float = 0.1


@dataclass
class Controller:
    mlp: nn.MLP
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    history: list[float] = field(default_factory=list)

    def predict(self, xdot, z_rel, x_L):
        x = np.column_stack([np.atleast_1d(xdot), np.atleast_1d(z_rel), np.atleast_1d(x_L)]).astype(float)
        y = self.mlp((x - self.x_mean) / self.x_std)[:, 0]
        return y * self.y_std + self.y_mean

    def angle(self, xdot: float, z_rel: float, x_L: float) -> float:
        return float(self.predict(xdot, z_rel, x_L)[0])

    def save(self, path) -> None:
        meta = {
            "model": "controller",
            "sizes": self.mlp.sizes,
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }
        nn.save_weights(path, self.mlp.params, meta)

    @classmethod
    def load(cls, path) -> "Controller":
        params, meta = nn.load_weights(path)
        if meta.get("model") != "controller":
            raise ValueError(f"{path} does not hold controller weights")
        mlp = nn.MLP(meta["sizes"])
        for k in mlp.params:
            mlp.params[k] = params[k]
        return cls(mlp, np.array(meta["x_mean"]), np.array(meta["x_std"]), meta["y_mean"], meta["y_std"])


def _as_arrays(data):
    arr = np.array([(s.xdot, s.z_rel, s.x_L, s.theta) for s in data], dtype=float)
    return arr[:, :3], arr[:, 3]


def train_controller(data: list[ControllerSample], hyper: ControllerHyper | None = None, rng=None):
    """Fit the MLP by minibatch Adam on standardized inputs/outputs.

    Returns the controller and a dict with the loss curve and held-out MSE.
    """
    hyper = hyper or ControllerHyper()
    if len(data) < 100:
        raise ValueError(f"need at least 100 controller samples, got {len(data)}")
    rng = np.random.default_rng(rng)
    X, y = _as_arrays(data)
    if np.any(X.std(axis=0) == 0) or y.std() == 0:
        raise ValueError("degenerate controller dataset")
    order = rng.permutation(len(y))
    n_hold = int(round(hyper.holdout * len(y)))
    hold, train = order[:n_hold], order[n_hold:]
    x_mean, x_std = X[train].mean(axis=0), X[train].std(axis=0)
    y_mean, y_std = float(y[train].mean()), float(y[train].std())
    Xs = (X - x_mean) / x_std
    ys = ((y - y_mean) / y_std)[:, None]

    mlp = nn.MLP([3, *hyper.hidden, 1], rng=rng)
    opt = nn.AdamState(lr=hyper.lr)

    def full_loss(idx):
        return nn.mse(mlp(Xs[idx]), ys[idx])[0]

    history = [full_loss(train)]
    decay = (hyper.lr_final / hyper.lr) ** (1.0 / max(hyper.epochs - 1, 1))
    for _ in range(hyper.epochs):
        perm = rng.permutation(train)
        for s in range(0, len(perm), hyper.batch):
            b = perm[s : s + hyper.batch]
            out, tape = mlp.forward(Xs[b])
            _, dy = nn.mse(out, ys[b])
            grads, _ = mlp.backward(tape, dy)
            nn.adam_step(mlp.params, grads, opt)
        opt.lr *= decay
        history.append(full_loss(train))
    ctrl = Controller(mlp, x_mean, x_std, y_mean, y_std, history)
    report = {
        "initial_loss": history[0],
        "final_loss": history[-1],
        "train_mse": history[-1],
        "holdout_mse": full_loss(hold) if n_hold else float("nan"),
        "history": history,
    }
    return ctrl, report


def desired_angle(ctrl: Controller, apex: ApexState, terrain: Terrain, x_L: float) -> float:
    """Leg angle expected to land ``x_L`` ahead of the apex.

    The height input is measured above the ground at the intended landing spot.
    """
    z_rel = apex.z - terrain.height_at(apex.x + x_L)
    return ctrl.angle(apex.xdot, z_rel, x_L)


@dataclass
class ErrorStats:
    mean_abs: float
    max_abs: float
    n: int
    crashed: int
    errors: list[float] = field(default_factory=list, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("errors")
        return d


@dataclass
class ProbeGrid:
    xdot: tuple[float, float, int] = (0.25, 3.0, 12)
    z_rel: tuple[float, float, int] = (0.6, 1.1, 6)
    theta: tuple[float, float, int] = (-0.6, 0.6, 13)
    mu: float = 0.8


def probe_targets(probes: ProbeGrid, params: HopperParams):
    """(apex, achievable step length) pairs obtained by simulating probe angles."""
    ground = flat(0.0, mu=probes.mu)
    out = []
    axes = [np.linspace(lo, hi, int(n)) for lo, hi, n in (probes.xdot, probes.z_rel, probes.theta)]
    for xd, z, th in itertools.product(*axes):
        apex = ApexState(0.0, float(z), float(xd))
        r = apex_step(apex, float(th), ground, params)
        if r.ok:
            out.append((apex, r.footstep_x - apex.x))
    return out


def eval_controller(ctrl: Controller, params: HopperParams, probes=None) -> ErrorStats:
    """Flat-ground step-length error of the controller over reachable targets.

    ``probes`` is a :class:`ProbeGrid` or an explicit list of (apex, x_L).
    """
    if probes is None or isinstance(probes, ProbeGrid):
        grid = probes or ProbeGrid()
        targets, mu = probe_targets(grid, params), grid.mu
    else:
        targets, mu = list(probes), 0.8
    ground = flat(0.0, mu=mu)
    errors, crashed = [], 0
    for apex, x_L in targets:
        th = desired_angle(ctrl, apex, ground, x_L)
        r = apex_step(apex, th, ground, params)
        if isinstance(r, Failure):
            crashed += 1
            continue
        errors.append(abs(r.footstep_x - apex.x - x_L))
    if not errors:
        return ErrorStats(float("nan"), float("nan"), 0, crashed)
    e = np.array(errors)
    return ErrorStats(float(e.mean()), float(e.max()), len(errors), crashed, errors)
