"""Command-line pipeline: generate data, train models, plan, evaluate."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import Controller, ControllerGrid, ControllerHyper, ControllerSample, eval_controller, gen_controller_dataset, train_controller
from .harness import PLANNER_NAMES, HeuristicConfig, SuiteConfig, build_planners, gen_test_suite, load_suite, run_suite, save_suite
from .lstm_planner import (
    DatasetGenConfig,
    LstmHyper,
    PlannerNet,
    build_training_set,
    export_distributions,
    load_sequences,
    save_sequences,
    train_lstm,
)
from .search import SearchConfig
from .slip import ApexState, HopperParams, OdeCounter
from .terrain import DITCHES, STEPS, Terrain, TerrainGenConfig, gen_world, save_terrains

log = logging.getLogger("hopplan")


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# config


@dataclass
class Paths:
    terrains: str = "terrains.json"
    controller_data: str = "controller_data.csv"
    sequences: str = "sequences.jsonl"
    suite: str = "suite.json"
    controller: str = "controller.json"
    lstm: str = "lstm.json"
    results: str = "results.csv"


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 0  # 0: all available cores
    paths: Paths = field(default_factory=Paths)
    hopper: HopperParams = field(default_factory=HopperParams)
    terrain: TerrainGenConfig = field(default_factory=TerrainGenConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    dataset: DatasetGenConfig = field(default_factory=DatasetGenConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    controller_grid: ControllerGrid = field(default_factory=ControllerGrid)
    controller_hyper: ControllerHyper = field(default_factory=ControllerHyper)
    lstm_hyper: LstmHyper = field(default_factory=LstmHyper)
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    temperature: float = 2.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data):
    """Dataclass from a (possibly nested) dict; unknown keys are errors."""
    if not isinstance(data, dict):
        raise CliError(f"{cls.__name__}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise CliError(f"{cls.__name__}: unknown key(s) {unknown}")
    kw = {}
    for k, v in data.items():
        default = getattr(cls(), k) if k in names else None
        if dataclasses.is_dataclass(default):
            kw[k] = _build(type(default), v)
        elif isinstance(default, tuple) and isinstance(v, list):
            kw[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{cls.__name__}: {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid JSON in {path}: {exc}") from exc
    return _build(RunConfig, data)


# --------------------------------------------------------------------------
# file helpers


def _atomic_write(path, text: str) -> None:
    def write(tmp):
        with open(tmp, "w", newline="") as f:
            f.write(text)

    _atomic_via(path, write)


def _atomic_via(path, writer) -> None:
    """Run ``writer(tmp_path)`` and move the result into place, so a failed
    command leaves no partial file behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


def _read_terrains(path, index: int | None = None) -> list[Terrain]:
    data = json.loads(_need(path, "terrain file").read_text())
    items = data if isinstance(data, list) else [data]
    terrains = [Terrain.from_dict(d) for d in items]
    if index is not None:
        if not 0 <= index < len(terrains):
            raise CliError(f"terrain index {index} out of range (file holds {len(terrains)})")
        return [terrains[index]]
    return terrains


def _loss_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(history):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def _sibling(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


# --------------------------------------------------------------------------
# commands


def cmd_gen(cfg: RunConfig, args) -> int:
    what = args.what
    if what == "terrains":
        out = args.out or cfg.paths.terrains
        rng = np.random.default_rng(cfg.seed)
        kinds = [args.kind] if args.kind else [DITCHES, STEPS]
        tcfg = cfg.terrain
        tcfg.validate()
        terrains = [gen_world(kinds[i % len(kinds)], tcfg, rng) for i in range(args.n)]
        _atomic_via(out, lambda tmp: save_terrains(terrains, tmp))
        print(f"wrote {len(terrains)} terrains to {out}")
    elif what == "controller-data":
        out = args.out or cfg.paths.controller_data
        data = gen_controller_dataset(cfg.controller_grid, cfg.hopper)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ControllerSample._fields)
        for s in data:
            w.writerow([repr(v) for v in s])
        _atomic_write(out, buf.getvalue())
        print(f"wrote {len(data)} controller samples to {out}")
    elif what == "sequences":
        out = args.out or cfg.paths.sequences
        dcfg = dataclasses.replace(cfg.dataset, seed=cfg.seed) if args.seed is not None else cfg.dataset
        seqs = build_training_set(dcfg, cfg.terrain, cfg.hopper, workers=_workers(cfg))
        if not seqs:
            raise CliError("dataset generation produced no sequences")
        _atomic_via(out, lambda tmp: save_sequences(seqs, tmp))
        mean_len = float(np.mean([len(s.cells) for s in seqs]))
        print(f"wrote {len(seqs)} sequences (mean length {mean_len:.1f}) to {out}")
    elif what == "suite":
        out = args.out or cfg.paths.suite
        scfg = dataclasses.replace(cfg.suite, seed=cfg.seed) if args.seed is not None else cfg.suite
        cases = gen_test_suite(scfg, cfg.terrain)
        _atomic_via(out, lambda tmp: save_suite(cases, tmp))
        print(f"wrote {len(cases)} test cases to {out}")
    return 0


def _read_controller_data(path) -> list[ControllerSample]:
    with open(_need(path, "controller dataset")) as f:
        rows = list(csv.DictReader(f))
    try:
        return [ControllerSample(*(float(r[k]) for k in ControllerSample._fields)) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed controller dataset {path}: {exc}") from exc


def cmd_train(cfg: RunConfig, args) -> int:
    if args.target == "controller":
        data = _read_controller_data(args.data or cfg.paths.controller_data)
        out = args.out or cfg.paths.controller
        ctrl, report = train_controller(data, cfg.controller_hyper, rng=cfg.seed)
        stats = eval_controller(ctrl, cfg.hopper)
        _atomic_via(out, ctrl.save)
        _atomic_write(_sibling(out, ".loss.csv"), _loss_csv(report["history"]))
        summary = {
            "samples": len(data),
            "initial_loss": report["initial_loss"],
            "final_loss": report["final_loss"],
            "holdout_mse": report["holdout_mse"],
            "step_error": stats.to_dict(),
        }
        _atomic_write(_sibling(out, ".report.json"), json.dumps(summary, indent=2) + "\n")
        print(json.dumps(summary, indent=2))
        print(f"wrote controller weights to {out}")
    else:
        path = _need(args.data or cfg.paths.sequences, "sequence dataset")
        seqs = load_sequences(path)
        if not seqs:
            raise CliError(f"{path} holds no sequences")
        out = args.out or cfg.paths.lstm

        def progress(epoch, loss):
            log.info("epoch %d loss %.4f", epoch, loss)

        net, report = train_lstm(seqs, cfg.lstm_hyper, rng=cfg.seed, progress=progress)
        _atomic_via(out, net.save)
        _atomic_write(
            _sibling(out, ".loss.csv"), _loss_csv([report["initial_loss"]] + report["history"])
        )
        print(f"initial loss {report['initial_loss']:.4f}  final loss {report['final_loss']:.4f}")
        print(f"wrote planner weights to {out}")
    return 0


def _load_models(cfg: RunConfig, names, args, need_controller: bool = False):
    ctrl = net = None
    if need_controller or {"step-space", "lstm-guided"} & set(names):
        ctrl = Controller.load(_need(args.controller or cfg.paths.controller, "controller weights"))
    if {"lstm", "lstm-guided"} & set(names):
        net = PlannerNet.load(_need(args.lstm or cfg.paths.lstm, "planner weights"))
    return ctrl, net


def cmd_plan(cfg: RunConfig, args) -> int:
    if args.planner not in PLANNER_NAMES:
        raise CliError(f"unknown planner {args.planner!r}; valid: {', '.join(PLANNER_NAMES)}")
    terrain = _read_terrains(args.terrain, args.index)[0]
    apex = ApexState(args.x, args.z, args.xdot)
    ctrl, net = _load_models(cfg, [args.planner], args)
    goal = args.goal if args.goal is not None else cfg.suite.goal_x
    planner = build_planners(ctrl, net, cfg.hopper, names=[args.planner], temperature=cfg.temperature)[args.planner]
    if args.planner == "heuristic":
        planner.cfg = cfg.heuristic
    counter = OdeCounter()
    dists: list = []
    if args.planner == "lstm":
        from .lstm_planner import plan_mode

        plans = plan_mode(net, terrain, apex, args.steps, args.committed, cfg.hopper, dists)
        plan = plans[0] if plans else None
    else:
        plan = planner(apex, terrain, goal, args.committed, counter, np.random.default_rng(cfg.seed))
    if plan is None:
        raise CliError("planner found no footstep sequence")
    result = plan.to_dict()
    result["planner"] = args.planner
    result["ode_calls"] = counter.calls
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    print(text, end="")
    if args.export_dist:
        if args.planner != "lstm":
            raise CliError("--export-dist needs --planner lstm")
        _atomic_via(args.export_dist, lambda tmp: export_distributions(dists, apex.x, tmp))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    names = [n.strip() for n in args.planners.split(",")] if args.planners else list(PLANNER_NAMES)
    bad = [n for n in names if n not in PLANNER_NAMES]
    if bad:
        raise CliError(f"unknown planner(s) {bad}; valid: {', '.join(PLANNER_NAMES)}")
    suite = load_suite(_need(args.suite or cfg.paths.suite, "test suite"))
    ctrl, net = _load_models(cfg, names, args, need_controller=True)
    planners = build_planners(ctrl, net, cfg.hopper, names=names, temperature=cfg.temperature)
    if "heuristic" in planners:
        planners["heuristic"].cfg = cfg.heuristic
    scfg = dataclasses.replace(cfg.suite, seed=cfg.seed) if args.seed is not None else cfg.suite
    table = run_suite(planners, suite, scfg, ctrl, cfg.hopper, workers=_workers(cfg))
    out = args.out or cfg.paths.results
    episodes = table.episodes
    if not args.timing:
        episodes = [{k: v for k, v in e.items() if k != "plan_times"} for e in episodes]
    _atomic_write(out, table.to_csv(timing=args.timing))
    _atomic_write(_sibling(out, ".episodes.jsonl"), "".join(json.dumps(e) + "\n" for e in episodes))
    print(table.to_text())
    print(f"wrote {out}")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hopplan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate terrains, datasets or a test suite")
    g.add_argument("what", choices=["terrains", "controller-data", "sequences", "suite"])
    g.add_argument("--kind", choices=[DITCHES, STEPS], help="terrain kind (default: alternate)")
    g.add_argument("--n", type=int, default=10, help="number of terrains")

    t = sub.add_parser("train", parents=[common], help="train the controller or the planner network")
    t.add_argument("target", choices=["controller", "lstm"])
    t.add_argument("--data", help="training data path")

    pl = sub.add_parser("plan", parents=[common], help="plan footsteps on one terrain")
    pl.add_argument("--planner", required=True)
    pl.add_argument("--terrain", required=True, help="terrain JSON (object or list)")
    pl.add_argument("--index", type=int, default=0, help="terrain index within a list file")
    pl.add_argument("--x", type=float, default=0.0)
    pl.add_argument("--z", type=float, required=True, help="apex height")
    pl.add_argument("--xdot", type=float, required=True)
    pl.add_argument("--committed", type=float, default=0.0, help="leg angle of the first hop")
    pl.add_argument("--goal", type=float)
    pl.add_argument("--controller")
    pl.add_argument("--lstm")
    pl.add_argument("--steps", type=int, default=8, help="rollout length (lstm planner)")
    pl.add_argument("--export-dist", help="CSV of per-step cell distributions (lstm planner)")

    e = sub.add_parser("eval", parents=[common], help="run planners over a test suite")
    e.add_argument("--suite")
    e.add_argument("--planners", help=f"comma-separated subset of {','.join(PLANNER_NAMES)}")
    e.add_argument("--controller")
    e.add_argument("--lstm")
    e.add_argument("--timing", action=argparse.BooleanOptionalAction, default=True,
                   help="include wall-clock columns (omit for byte-reproducible output)")
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "plan": cmd_plan, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        return COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
