"""Recurrent footstep planner: CNN terrain/step encoder feeding a stacked LSTM that
emits a distribution over heightmap cells for each future footstep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .search import (
    FootstepPlan,
    Node,
    SearchConfig,
    SearchStats,
    best_first,
    extract_path,
    plan_angle_space,
    reachable_steps,
)
from .slip import ApexState, Failure, HopperParams, OdeCounter, apex_step, flight_phase
from .terrain import (
    CELL_WIDTH,
    DITCHES,
    N_CELLS,
    STEPS,
    Terrain,
    TerrainGenConfig,
    cell_center,
    cell_centers,
    cell_index,
    discretize,
    gen_world,
)


# --------------------------------------------------------------------------
# network


class PlannerNet:
    """g0 projection, two-layer conv encoder, stacked LSTM and a per-cell head."""

    def __init__(
        self,
        n_cells: int = N_CELLS,
        hidden: int = 110,
        layers: int = 2,
        channels: tuple[int, int] = (16, 8),
        kernel: int = 7,
        n_apex: int = 2,
        enc_dim: int | None = None,
        rng=None,
    ):
        rng = np.random.default_rng(rng)
        self.n_cells, self.hidden, self.n_layers = n_cells, hidden, layers
        self.channels, self.kernel, self.n_apex = tuple(channels), kernel, n_apex
        self.enc_dim = n_cells if enc_dim is None else enc_dim
        self.feat_mean = np.zeros(n_apex)
        self.feat_std = np.ones(n_apex)
        p = self.params = nn.Params()
        self.g0 = nn.Dense(p, "g0", n_apex, hidden, rng)
        self.conv1 = nn.Conv1d(p, "enc.conv1", 2, channels[0], kernel, rng)
        self.conv2 = nn.Conv1d(p, "enc.conv2", channels[0], channels[1], kernel, rng)
        self.fc = nn.Dense(p, "enc.fc", channels[1] * n_cells, self.enc_dim, rng)
        self.lstm = nn.LSTMStack(p, "lstm", self.enc_dim, hidden, layers, rng)
        # small head keeps the initial output close to uniform
        self.head = nn.Dense(p, "head", hidden, n_cells, rng, scale=0.1 / np.sqrt(hidden))

    # -- configuration -------------------------------------------------------

    def arch(self) -> dict:
        return {
            "n_cells": self.n_cells,
            "hidden": self.hidden,
            "layers": self.n_layers,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "n_apex": self.n_apex,
            "enc_dim": self.enc_dim,
        }

    def save(self, path) -> None:
        meta = {
            "model": "planner",
            "arch": self.arch(),
            "feat_mean": self.feat_mean.tolist(),
            "feat_std": self.feat_std.tolist(),
        }
        nn.save_weights(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "PlannerNet":
        params, meta = nn.load_weights(path)
        if meta.get("model") != "planner":
            raise ValueError(f"{path} does not hold planner weights")
        net = cls(**meta["arch"])
        for k in net.params:
            net.params[k] = params[k]
        net.feat_mean = np.array(meta["feat_mean"])
        net.feat_std = np.array(meta["feat_std"])
        return net

    # -- pieces ---------------------------------------------------------------

    def _feats(self, apex_features):
        f = np.atleast_2d(np.asarray(apex_features, dtype=float))
        return (f - self.feat_mean) / self.feat_std

    def init_hidden(self, apex_features):
        """LSTM state with layer 1's hidden state set to g0(apex features)."""
        h0, _ = self.g0.forward(self._feats(apex_features))
        state = self.lstm.zero_state(h0.shape[0])
        state[0] = (h0, state[0][1])
        return state

    def _encode(self, hm, prev):
        """hm, prev: (N, cells) -> (v, caches)."""
        if hm.shape[-1] != self.n_cells or prev.shape[-1] != self.n_cells:
            raise ValueError(f"encoder expects {self.n_cells} cells, got {hm.shape} and {prev.shape}")
        x = np.stack([hm, prev], axis=1)
        a1, c1 = self.conv1.forward(x)
        y1, t1 = nn.Tanh.forward(a1)
        a2, c2 = self.conv2.forward(y1)
        y2, t2 = nn.Tanh.forward(a2)
        flat = y2.reshape(y2.shape[0], -1)
        a3, c3 = self.fc.forward(flat)
        v, t3 = nn.Tanh.forward(a3)
        return v, (c1, t1, c2, t2, c3, t3, y2.shape)

    def _encode_backward(self, dv, caches, grads):
        c1, t1, c2, t2, c3, t3, shape = caches
        d = nn.Tanh.backward(dv, t3)
        d = self.fc.backward(d, c3, grads).reshape(shape)
        d = nn.Tanh.backward(d, t2)
        d = self.conv2.backward(d, c2, grads)
        d = nn.Tanh.backward(d, t1)
        self.conv1.backward(d, c1, grads, need_dx=False)

    def encode(self, heightmap, prev_step) -> np.ndarray:
        hm = np.atleast_2d(np.asarray(getattr(heightmap, "cells", heightmap), dtype=float))
        prev = np.atleast_2d(np.asarray(prev_step, dtype=float))
        v, _ = self._encode(hm, prev)
        return v[0] if np.ndim(prev_step) == 1 else v

    def step(self, heightmap_cells, prev_dist, state):
        """One planning step: (next-step distribution, new state). Batched on axis 0."""
        hm = np.atleast_2d(heightmap_cells)
        prev = np.atleast_2d(prev_dist)
        v, _ = self._encode(hm, prev)
        h, state, _ = self.lstm.step(v, state)
        logits, _ = self.head.forward(h)
        return nn.softmax(logits), state

    def _inference_weights(self):
        """Weights rearranged for :meth:`stepper`, rebuilt when the parameter
        version changes (in-place edits that skip ``Params.bump`` are not seen)."""
        P = self.params
        cached = getattr(self, "_infer", None)
        if cached is not None and cached[0] is P and cached[1] == P.version:
            return cached[2]
        C, k, H = self.n_cells, self.kernel, self.hidden
        W1 = P["enc.conv1.W"]
        c1 = W1.shape[0]
        w2 = np.ascontiguousarray(P["enc.conv2.W"].transpose(2, 1, 0).reshape(k * c1, -1))
        c2 = w2.shape[1]
        # gate columns reordered to (i, f, o, g): one sigmoid covers three gates
        perm = np.r_[0 : 2 * H, 3 * H : 4 * H, 2 * H : 3 * H]
        w = {
            "w1h": np.ascontiguousarray(W1[:, 0, :].T),
            "w1p": np.ascontiguousarray(W1[:, 1, :].T),
            "b1": P["enc.conv1.b"],
            "w2": w2,
            "b2": P["enc.conv2.b"],
            # fc rows reordered to cell-major so the conv output needs no transpose
            "wfc": P["enc.fc.W"].reshape(c2, C, -1).transpose(1, 0, 2).reshape(C * c2, -1).copy(),
            "bfc": P["enc.fc.b"],
            "lstm": [(P[f"lstm.{i}.W"][:, perm].copy(), P[f"lstm.{i}.b"][perm]) for i in range(self.n_layers)],
        }
        self._infer = (P, P.version, w)
        return w

    def stepper(self, heightmap_cells):
        """Single-query version of :meth:`step` for one fixed heightmap.

        The heightmap's share of the first convolution is computed once, so
        each call only convolves the previous-step channel. Same numbers as
        ``step`` up to rounding; used at planning time.
        """
        P = self.params
        wts = self._inference_weights()
        C, k, H = self.n_cells, self.kernel, self.hidden
        pad = k // 2
        idx = np.arange(C)[:, None] + np.arange(k)[None, :]
        hp = np.zeros(C + 2 * pad)
        hp[pad : pad + C] = np.asarray(getattr(heightmap_cells, "cells", heightmap_cells), dtype=float).reshape(-1)
        base = hp[idx] @ wts["w1h"] + wts["b1"]  # (C, c1)
        w1p, w2, b2, wfc, bfc, lw = (wts[n] for n in ("w1p", "w2", "b2", "wfc", "bfc", "lstm"))
        c1 = w1p.shape[1]
        xh = [np.zeros((1, W.shape[0])) for W, _ in lw]
        wh, bh = P["head.W"], P["head.b"]
        pp = np.zeros(C + 2 * pad)
        y1p = np.zeros((C + 2 * pad, c1))

        def step(prev_dist, state):
            pp[pad : pad + C] = np.asarray(prev_dist).reshape(-1)
            y1p[pad : pad + C] = np.tanh(base + pp[idx] @ w1p)
            y2 = np.tanh(y1p[idx].reshape(C, k * c1) @ w2 + b2)
            x = np.tanh(y2.reshape(1, -1) @ wfc + bfc)
            new = []
            for (W, b), buf, (h, c) in zip(lw, xh, state):
                n_in = buf.shape[1] - H
                buf[:, :n_in] = x
                buf[:, n_in:] = h
                z = buf @ W + b
                g = nn.sigmoid(z[:, : 3 * H])
                c = g[:, H : 2 * H] * c + g[:, :H] * np.tanh(z[:, 3 * H :])
                x = g[:, 2 * H :] * np.tanh(c)
                new.append((x, c))
            e = x @ wh + bh
            e = np.exp(e - e.max())
            return e / e.sum(), new

        return step

    # -- teacher-forced training pass -----------------------------------------

    def forward(self, batch: "Batch"):
        """Logits (B, T, cells) for a teacher-forced batch, plus the tape."""
        B, T, C = batch.prev.shape
        hm = np.repeat(batch.heightmaps[:, None, :], T, axis=1).reshape(B * T, C)
        v, enc_cache = self._encode(hm, batch.prev.reshape(B * T, C))
        v = v.reshape(B, T, -1)
        feats = self._feats(batch.apex)
        h0, g0_cache = self.g0.forward(feats)
        state = self.lstm.zero_state(B)
        state[0] = (h0, state[0][1])
        logits = np.empty((B, T, C))
        step_caches, head_caches = [], []
        for t in range(T):
            h, state, sc = self.lstm.step(v[:, t], state)
            lg, hc = self.head.forward(h)
            logits[:, t] = lg
            step_caches.append(sc)
            head_caches.append(hc)
        tape = nn.Tape([enc_cache, g0_cache, step_caches, head_caches], self.params.version, self.params)
        return logits, tape

    def backward(self, tape: nn.Tape, dlogits):
        tape.check(self.params)
        enc_cache, g0_cache, step_caches, head_caches = tape.caches
        grads = self.params.zeros_like()
        B, T, C = dlogits.shape
        dstate = [(np.zeros((B, self.hidden)), np.zeros((B, self.hidden))) for _ in range(self.n_layers)]
        dv = np.empty((B, T, self.enc_dim))
        for t in reversed(range(T)):
            dh = self.head.backward(dlogits[:, t], head_caches[t], grads)
            dv[:, t], dstate = self.lstm.step_backward(dh, dstate, step_caches[t], grads)
        self.g0.backward(dstate[0][0], g0_cache, grads)
        self._encode_backward(dv.reshape(B * T, -1), enc_cache, grads)
        return grads

    def loss_and_grads(self, batch: "Batch"):
        logits, tape = self.forward(batch)
        n = batch.mask.sum()
        ls = nn.log_softmax(logits)
        b, t = np.nonzero(batch.mask)
        loss = -ls[b, t, batch.targets[b, t]].sum() / n
        d = np.exp(ls)
        d[b, t, batch.targets[b, t]] -= 1.0
        d *= batch.mask[:, :, None] / n
        return float(loss), self.backward(tape, d)

    def accuracy(self, batch: "Batch") -> float:
        logits, _ = self.forward(batch)
        hit = (logits.argmax(axis=-1) == batch.targets) & batch.mask
        return float(hit.sum() / batch.mask.sum())


def init_hidden(net: PlannerNet, apex_features):
    return net.init_hidden(apex_features)


def encode(net: PlannerNet, heightmap, prev_step):
    return net.encode(heightmap, prev_step)


def one_hot(i: int, n: int = N_CELLS) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def rollout(net: PlannerNet, heightmap, apex_features, s0, n_steps: int) -> list[np.ndarray]:
    """Feed each predicted distribution back as the next previous step."""
    step = net.stepper(heightmap)
    state = net.init_hidden(apex_features)
    prev = np.asarray(s0, dtype=float)
    out = []
    for _ in range(n_steps):
        dist, state = step(prev, state)
        prev = dist[0]
        out.append(prev)
    return out


# --------------------------------------------------------------------------
# data


@dataclass
class TrainingSequence:
    heightmap: list[float]
    apex: tuple[float, float]  # (z above ground, xdot)
    cells: list[int]  # s0 first

    def to_json(self) -> str:
        return json.dumps({"heightmap": list(self.heightmap), "apex": list(self.apex), "cells": list(self.cells)})

    @classmethod
    def from_json(cls, line: str) -> "TrainingSequence":
        d = json.loads(line)
        return cls(d["heightmap"], tuple(d["apex"]), d["cells"])


def save_sequences(seqs, path) -> None:
    with open(path, "w") as f:
        for s in seqs:
            f.write(s.to_json() + "\n")


def load_sequences(path) -> list[TrainingSequence]:
    with open(path) as f:
        return [TrainingSequence.from_json(line) for line in f if line.strip()]


def apex_features(apex: ApexState, terrain: Terrain) -> tuple[float, float]:
    return (apex.z - terrain.height_at(apex.x), apex.xdot)


@dataclass
class Batch:
    heightmaps: np.ndarray  # (B, C)
    apex: np.ndarray  # (B, 2)
    prev: np.ndarray  # (B, T, C) one-hot previous steps
    targets: np.ndarray  # (B, T)
    mask: np.ndarray  # (B, T) bool


def make_batch(seqs: list[TrainingSequence], n_cells: int = N_CELLS) -> Batch:
    B = len(seqs)
    T = max(len(s.cells) - 1 for s in seqs)
    prev = np.zeros((B, T, n_cells))
    targets = np.zeros((B, T), dtype=int)
    mask = np.zeros((B, T), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s.cells) - 1
        prev[b, np.arange(n), s.cells[:-1]] = 1.0
        targets[b, :n] = s.cells[1:]
        mask[b, :n] = True
    return Batch(
        np.array([s.heightmap for s in seqs], dtype=float),
        np.array([s.apex for s in seqs], dtype=float),
        prev,
        targets,
        mask,
    )


@dataclass
class DatasetGenConfig:
    n_terrains: int = 360
    states_per_terrain: int = 8
    min_steps: int = 8
    sequences_per_instance: int = 8
    branching: int = 15
    mu: float = 0.6
    weights: tuple[float, float, float] = (1.0, 1.0, 2.0)
    progress_fraction: float = 0.6
    goal_distance: float = 7.5
    z_range: tuple[float, float] = (0.7, 1.0)
    xdot_range: tuple[float, float] = (0.3, 1.6)
    committed_range: tuple[float, float] = (0.0, 0.3)
    node_budget: int = 400
    seed: int = 0

    def __post_init__(self):
        for name in ("n_terrains", "states_per_terrain", "sequences_per_instance", "branching"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def _sample_instance(terrain, cfg: DatasetGenConfig, tcfg: TerrainGenConfig, rng, params):
    """A start apex whose committed hop succeeds, or None."""
    for _ in range(20):
        x = rng.uniform(0.0, max(tcfg.extent - cfg.goal_distance - 1.0, 0.5))
        apex = ApexState(x, terrain.height_at(x) + rng.uniform(*cfg.z_range), rng.uniform(*cfg.xdot_range))
        theta = rng.uniform(*cfg.committed_range)
        if apex_step(apex, theta, terrain, params).ok:
            return apex, theta
    return None


def harvest(stats: SearchStats, apex0: ApexState, terrain: Terrain, cfg: DatasetGenConfig):
    """Root-to-leaf paths with enough steps and progress, as cell sequences."""
    hm = discretize(terrain, apex0.x)
    feats = apex_features(apex0, terrain)
    need = cfg.progress_fraction * cfg.goal_distance
    seen, out = set(), []
    for n in stats.nodes:
        if n.children or n.depth < cfg.min_steps or n.footstep_x - apex0.x < need:
            continue
        cells = []
        for x in extract_path(n).steps:
            c = cell_index(apex0.x, x)
            if c is None:
                break
            cells.append(c)
        if len(cells) - 1 < cfg.min_steps:
            continue
        key = tuple(cells)
        if key in seen:
            continue
        seen.add(key)
        out.append(TrainingSequence(hm.cells.tolist(), feats, list(cells)))
    return out


def _terrain_sequences(i: int, cfg: DatasetGenConfig, tcfg: TerrainGenConfig, params: HopperParams):
    """Sequences (and audit instances) harvested from the ``i``-th training world."""
    rng = np.random.default_rng([cfg.seed, i])
    scfg = SearchConfig(
        branching=cfg.branching,
        desired_sequences=cfg.sequences_per_instance,
        weights=tuple(cfg.weights),
        min_steps=cfg.min_steps,
        node_budget=cfg.node_budget,
    )
    kind = DITCHES if i % 2 == 0 else STEPS
    terrain = gen_world(kind, replace(tcfg, mu=cfg.mu), rng)
    seqs, instances = [], []
    for _ in range(cfg.states_per_terrain):
        inst = _sample_instance(terrain, cfg, tcfg, rng, params)
        if inst is None:
            continue
        apex, theta = inst
        stats = SearchStats()
        qcfg = replace(scfg, goal_x=apex.x + cfg.goal_distance, committed_angle=theta)
        plan_angle_space(apex, terrain, qcfg, params, stats=stats)
        instances.append((terrain, apex, theta))
        seqs.extend(harvest(stats, apex, terrain, cfg))
    return seqs, instances


def _terrain_job(args):
    return _terrain_sequences(*args)


def build_training_set(
    cfg: DatasetGenConfig,
    terrain_cfg: TerrainGenConfig | None = None,
    params: HopperParams | None = None,
    instances: list | None = None,
    workers: int = 1,
) -> list[TrainingSequence]:
    """Run the angle-space planner over random worlds and harvest feasible paths.

    Terrains alternate between ditch and step worlds and each draws from its
    own seeded stream, so the result does not depend on ``workers``.
    ``instances``, when a list, collects (terrain, apex, committed angle).
    """
    params = params or HopperParams()
    tcfg = terrain_cfg or TerrainGenConfig()
    jobs = [(i, cfg, tcfg, params) for i in range(cfg.n_terrains)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_terrain_job, jobs, chunksize=4))
    else:
        parts = [_terrain_job(j) for j in jobs]
    out = []
    for seqs, inst in parts:
        out.extend(seqs)
        if instances is not None:
            instances.extend(inst)
    return out


# --------------------------------------------------------------------------
# training


@dataclass
class LstmHyper:
    epochs: int = 30
    batch: int = 32
    lr: float = 5e-3
    lr_final: float = 8e-4
    clip: float = 5.0
    hidden: int = 110
    channels: tuple[int, int] = (16, 8)


def teacher_forced_loss(net: PlannerNet, data: list[TrainingSequence], batch: int = 256) -> float:
    total, count = 0.0, 0
    for s in range(0, len(data), batch):
        chunk = data[s : s + batch]
        b = make_batch(chunk, net.n_cells)
        loss, _ = _loss_only(net, b)
        n = int(b.mask.sum())
        total += loss * n
        count += n
    return total / count


def _loss_only(net, b):
    logits, _ = net.forward(b)
    ls = nn.log_softmax(logits)
    bi, ti = np.nonzero(b.mask)
    return float(-ls[bi, ti, b.targets[bi, ti]].mean()), None


def train_lstm(
    data: list[TrainingSequence],
    hyper: LstmHyper | None = None,
    rng=None,
    net: PlannerNet | None = None,
    progress=None,
):
    """Teacher-forced cross-entropy training with Adam.

    Returns (net, report). ``report["history"]`` holds the mean minibatch loss
    of every epoch; initial and final losses are over the whole dataset.
    """
    hyper = hyper or LstmHyper()
    if not data:
        raise ValueError("empty training set")
    rng = np.random.default_rng(rng)
    if net is None:
        net = PlannerNet(hidden=hyper.hidden, channels=hyper.channels, rng=rng)
        feats = np.array([s.apex for s in data], dtype=float)
        net.feat_mean = feats.mean(axis=0)
        std = feats.std(axis=0)
        net.feat_std = np.where(std > 0, std, 1.0)
    # bucket by length to limit padding
    order = sorted(range(len(data)), key=lambda i: (len(data[i].cells), i))
    batches = [order[s : s + hyper.batch] for s in range(0, len(order), hyper.batch)]
    opt = nn.AdamState(lr=hyper.lr)
    decay = (hyper.lr_final / hyper.lr) ** (1.0 / max(hyper.epochs - 1, 1))
    initial = teacher_forced_loss(net, data)
    history = []
    for epoch in range(hyper.epochs):
        total, count = 0.0, 0
        for k in rng.permutation(len(batches)):
            b = make_batch([data[i] for i in batches[k]], net.n_cells)
            loss, grads = net.loss_and_grads(b)
            n = int(b.mask.sum())
            total, count = total + loss * n, count + n
            nn.clip_grads(grads, hyper.clip)
            nn.adam_step(net.params, grads, opt)
        opt.lr *= decay
        history.append(total / count)
        if progress:
            progress(epoch, history[-1])
    report = {"initial_loss": initial, "final_loss": teacher_forced_loss(net, data), "history": history}
    return net, report


# --------------------------------------------------------------------------
# planning


def scale_temperature(dist, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    p = np.asarray(dist, dtype=float)
    with np.errstate(divide="ignore"):
        lg = np.log(p) / temperature
    lg -= lg.max()
    q = np.exp(lg)
    return q / q.sum()


def sample_step(dist, temperature: float, rng) -> int:
    q = scale_temperature(dist, temperature)
    return int(rng.choice(len(q), p=q))


def root_cell(apex: ApexState, terrain: Terrain, committed_angle: float, params: HopperParams):
    """(touchdown x, cell) of the committed hop, from closed-form flight only."""
    td = flight_phase(apex, committed_angle, terrain, params)
    if isinstance(td, Failure):
        return None
    x0 = td.state.foot_x
    c = cell_index(apex.x, x0)
    return None if c is None else (x0, c)


def plan_mode(
    net: PlannerNet,
    terrain: Terrain,
    apex: ApexState,
    n_steps: int = 8,
    committed_angle: float = 0.0,
    params: HopperParams | None = None,
    dists: list | None = None,
) -> list[FootstepPlan]:
    """Footsteps at the argmax cell of each rolled-out distribution. No simulation."""
    params = params or HopperParams()
    root = root_cell(apex, terrain, committed_angle, params)
    if root is None:
        return []
    x0, c0 = root
    hm = discretize(terrain, apex.x)
    out = rollout(net, hm, apex_features(apex, terrain), one_hot(c0, net.n_cells), n_steps)
    if dists is not None:
        dists.extend(out)
    xs = [x0] + [cell_center(apex.x, int(np.argmax(d))) for d in out]
    return [
        FootstepPlan(
            steps=xs,
            actions=[{"theta": committed_angle}] + [{} for _ in out],
            angles=[committed_angle] + [math.nan for _ in out],
            apexes=[apex],
        )
    ]


def export_distributions(dists, origin_x: float, path) -> None:
    import csv

    xs = cell_centers(origin_x)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step_index", "cell_index", "x_center", "prob"])
        for i, d in enumerate(dists, start=1):
            for j, p in enumerate(d):
                w.writerow([i, j, repr(float(xs[j])), repr(float(p))])


class UniformProposal:
    """Stand-in for a PlannerNet that always predicts a uniform distribution."""

    n_cells = N_CELLS

    def init_hidden(self, apex_features):
        return None

    def step(self, heightmap_cells, prev_dist, state):
        return np.full((1, self.n_cells), 1.0 / self.n_cells), state

    def stepper(self, heightmap_cells):
        return lambda prev_dist, state: self.step(heightmap_cells, prev_dist, state)


def draw_cells(dist, k: int, temperature: float, rng, retries: int = 5) -> list[int]:
    """Up to ``k`` distinct cells; duplicate draws are resampled ``retries`` times."""
    q = scale_temperature(dist, temperature)
    picked: list[int] = []
    need = k
    for _ in range(retries + 1):
        for c in rng.choice(len(q), size=need, p=q):
            if int(c) not in picked and len(picked) < k:
                picked.append(int(c))
        need = k - len(picked)
        if need == 0:
            break
    return sorted(picked)


def plan_lstm_guided(
    apex: ApexState,
    terrain: Terrain,
    net,
    controller,
    cfg: SearchConfig,
    params: HopperParams | None = None,
    counter: OdeCounter | None = None,
    rng=None,
    temperature: float = 2.0,
    stats: SearchStats | None = None,
    reach_mask: bool = True,
) -> list[FootstepPlan]:
    """Step-space search whose children are drawn from the network's next-step
    distribution along the node's root path.

    With ``reach_mask`` the distribution is first restricted to cells inside
    the node's closed-form reachable window (no simulator calls); if that
    leaves no mass the raw distribution is used.
    """
    from .controller import desired_angle

    params = params or HopperParams()
    rng = np.random.default_rng(rng)
    step = net.stepper(discretize(terrain, apex.x).cells)
    feats = apex_features(apex, terrain)

    def next_dist(node: Node):
        memo = node.memo if node.memo is not None else {}
        if "dist" not in memo:
            state = net.init_hidden(feats) if node.parent is None else node.parent.memo["state"]
            c = cell_index(apex.x, node.footstep_x)
            if c is None:
                memo["dist"], memo["state"] = None, state
            else:
                d, memo["state"] = step(one_hot(c, net.n_cells), state)
                memo["dist"] = d[0]
            node.memo = memo
        return memo["dist"]

    centers = cell_centers(apex.x)

    def masked(node, dist):
        span = reachable_steps(node.apex, terrain, params, cfg.angle_margin)
        if span is None:
            return dist
        xl = centers - node.apex.x
        half = 0.5 * CELL_WIDTH
        q = np.where((xl >= span[0] - half) & (xl <= span[1] + half), dist, 0.0)
        return q / q.sum() if q.sum() > 0 else dist

    def propose(node):
        dist = next_dist(node)
        if dist is None:
            return []
        if reach_mask:
            dist = masked(node, dist)
        out = []
        for c in draw_cells(dist, cfg.branching, temperature, rng):
            xl = cell_center(apex.x, c) - node.apex.x
            out.append(({"xL": xl}, desired_angle(controller, node.apex, terrain, xl)))
        return out

    return best_first(apex, terrain, cfg, propose, params, counter, stats)
