"""Command-line front end.

    drrrt plan    --scenario S --seed 0 --allocation era --delta 0.1 --out runs/
    drrrt compare --scenario S --seeds 0..9 --configs ura:0.1,era:0.1,era:0.02 --out cmp/
    drrrt audit   --tree runs/tree-0-era-0.1.jsonl --scenario S
    drrrt gen     --n 10 --seed 0 --out scenario.yaml

``--scenario`` defaults to the bundled benchmark.  Set ``DRRRT_LOG`` to a
logging level name (``DEBUG``, ``INFO``...) for progress messages on stderr.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from drrrt.errors import ConfigurationError, ScenarioInfeasibleError, TreeFormatError
from drrrt.planner import ALLOCATIONS, audit_tree, plan
from drrrt.scenario import generate_scenario, load_scenario
from drrrt.treeio import dumps_tree, read_tree

log = logging.getLogger("drrrt")

METRIC_FIELDS = ("seed", "allocation", "Delta", "nodes", "goal_reached", "best_cost",
                 "wall_time", "residual_issued", "rejections")
SUMMARY_FIELDS = ("allocation", "Delta", "runs", "mean_nodes", "goal_rate", "mean_best_cost",
                  "mean_wall_time", "mean_residual_issued", "mean_rejections")

EXIT_FAIL = 1  # audit rejected the tree, or the run could not complete
EXIT_USAGE = 2  # bad flags or unreadable input (argparse uses 2 as well)


@dataclass
class RunMetrics:
    """One row of ``metrics.csv``.

    ``best_cost`` is empty when no node reached the goal; ``rejections``
    counts steered candidates that failed admission over the full horizon.
    """

    seed: int
    allocation: str
    Delta: float
    nodes: int
    goal_reached: bool
    best_cost: float | None
    wall_time: float
    residual_issued: float
    rejections: int

    def row(self) -> dict:
        d = dataclasses.asdict(self)
        d["goal_reached"] = int(self.goal_reached)
        d["best_cost"] = "" if self.best_cost is None else repr(self.best_cost)
        d["wall_time"] = f"{self.wall_time:.4f}"
        d["residual_issued"] = repr(self.residual_issued)
        return d


def bundled_scenario() -> str:
    return resources.files("drrrt").joinpath("data/benchmark.yaml").read_text()


def read_scenario_text(path) -> str:
    return bundled_scenario() if path is None else Path(path).read_text()


def tag(seed: int, allocation: str, delta: float) -> str:
    return f"{seed}-{allocation}-{delta:g}"


def run_one(scenario_text: str, seed: int, allocation: str, delta: float, samples: int | None = None,
            early_stop: bool | None = None):
    """Plan once; returns ``(metrics, result, env, sys, params)``."""
    env, sys_, params = load_scenario(scenario_text)
    over = dict(allocation=allocation, Delta=delta)
    if samples is not None:
        over["samples"] = samples
    if early_stop is not None:
        over["early_stop"] = early_stop
    params = dataclasses.replace(params, **over)
    t0 = time.perf_counter()
    res = plan(env, sys_, params, seed)
    wall = time.perf_counter() - t0
    m = res.metrics
    metrics = RunMetrics(seed, allocation, delta, m["nodes"], res.best_path is not None, res.best_cost,
                         max(wall, 1e-9), m["residual_issued"], m["infeasible_candidates"])
    log.info("seed=%d %s Delta=%g nodes=%d goal=%s %.2fs", seed, allocation, delta, metrics.nodes,
             metrics.goal_reached, wall)
    return metrics, res, env, sys_, params


def write_artifacts(out: Path, seed: int, res, env, sys_, params) -> tuple[Path, Path]:
    from drrrt.plotting import save_svg, tree_figure

    name = tag(seed, params.allocation, params.Delta)
    dump = out / f"tree-{name}.jsonl"
    svg = out / f"tree-{name}.svg"
    dump.write_text(dumps_tree(res.tree, params, seed))
    title = f"{params.allocation.upper()}  Delta={params.Delta:g}  seed={seed}  nodes={len(res.tree)}"
    save_svg(tree_figure(res.tree, env, sys_, params, res.best_path, title=title), svg)
    return dump, svg


def write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def parse_seeds(text: str) -> list[int]:
    """``"3"`` or an inclusive range ``"0..9"``; an empty range is an error."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            seeds = list(range(int(a), int(b) + 1))
        else:
            seeds = [int(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; expected INT or A..B") from None
    if not seeds:
        raise argparse.ArgumentTypeError(f"seed range {text!r} is empty")
    if any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be non-negative")
    return seeds


def parse_configs(text: str) -> list[tuple[str, float]]:
    """``"ura:0.1,era:0.02"`` into ``[("ura", 0.1), ("era", 0.02)]``."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        mode, _, delta = item.partition(":")
        mode = mode.strip().lower()
        if mode not in ALLOCATIONS:
            raise argparse.ArgumentTypeError(f"unknown allocation {mode!r} in {item!r}")
        try:
            out.append((mode, float(delta)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad budget in {item!r}; expected MODE:DELTA") from None
    if not out:
        raise argparse.ArgumentTypeError("no configurations given")
    return out


def cmd_plan(args) -> int:
    text = read_scenario_text(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics, res, env, sys_, params = run_one(text, args.seed, args.allocation, args.delta, args.samples,
                                             True if args.early_stop else None)
    dump, svg = write_artifacts(out, args.seed, res, env, sys_, params)
    write_csv(out / "metrics.csv", METRIC_FIELDS, [metrics.row()])
    print(f"nodes={metrics.nodes} goal_reached={metrics.goal_reached} best_cost={metrics.best_cost}")
    print(f"wrote {dump}, {svg}, {out / 'metrics.csv'}")
    return 0


def _compare_job(job):
    text, seed, mode, delta, samples, out = job
    metrics, res, env, sys_, params = run_one(text, seed, mode, delta, samples)
    if out is not None:
        write_artifacts(Path(out), seed, res, env, sys_, params)
    return metrics


def summarize(rows: list[RunMetrics], configs) -> list[dict]:
    out = []
    for mode, delta in configs:
        sel = [r for r in rows if r.allocation == mode and r.Delta == delta]
        costs = [r.best_cost for r in sel if r.best_cost is not None]
        n = len(sel)
        out.append({
            "allocation": mode, "Delta": delta, "runs": n,
            "mean_nodes": sum(r.nodes for r in sel) / n,
            "goal_rate": sum(r.goal_reached for r in sel) / n,
            "mean_best_cost": sum(costs) / len(costs) if costs else "",
            "mean_wall_time": f"{sum(r.wall_time for r in sel) / n:.4f}",
            "mean_residual_issued": sum(r.residual_issued for r in sel) / n,
            "mean_rejections": sum(r.rejections for r in sel) / n,
        })
    return out


def cmd_compare(args) -> int:
    text = read_scenario_text(args.scenario)
    load_scenario(text)  # fail fast, before spawning runs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(text, s, mode, delta, args.samples, str(out) if args.dump else None)
            for s in args.seeds for mode, delta in args.configs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_compare_job, jobs))  # map keeps (seed, config) order
    else:
        rows = [_compare_job(j) for j in jobs]
    write_csv(out / "metrics.csv", METRIC_FIELDS, [r.row() for r in rows])
    summary = summarize(rows, args.configs)
    write_csv(out / "summary.csv", SUMMARY_FIELDS, summary)
    print(f"{'seed':>4} {'allocation':>10} {'Delta':>7} {'nodes':>6} {'goal':>5}")
    for r in rows:
        print(f"{r.seed:>4} {r.allocation:>10} {r.Delta:>7g} {r.nodes:>6} {int(r.goal_reached):>5}")
    print("means:")
    for s in summary:
        print(f"  {s['allocation']} Delta={s['Delta']:g}: nodes={s['mean_nodes']:.1f} goal_rate={s['goal_rate']:.2f}")
    return 0


def cmd_audit(args) -> int:
    env, sys_, params = load_scenario(read_scenario_text(args.scenario))
    header, tree = read_tree(args.tree, sys_.n, env.N, env.n_e)
    try:
        params = dataclasses.replace(params, allocation=header["allocation"], Delta=float(header["Delta"]),
                                     T=int(header["T"]), T_steer=int(header["T_steer"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise TreeFormatError(f"tree header lacks run configuration: {exc}") from None
    verdict = audit_tree(tree, env, sys_, params)
    if verdict:
        print(f"audit passed: {len(tree)} nodes")
        return 0
    print(f"audit FAILED: {verdict.message}", file=sys.stderr)
    return EXIT_FAIL


def cmd_gen(args) -> int:
    doc = generate_scenario(n_obstacles=args.n, seed=args.seed)
    load_scenario(yaml.safe_dump(doc))  # the generator must produce loadable scenarios
    text = yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drrrt", description="Distributionally robust RRT with exact or uniform risk allocation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="grow one tree; write dump, metrics row and SVG")
    p.add_argument("--scenario", help="scenario YAML (default: bundled benchmark)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, help="sampling iterations (default: from scenario)")
    p.add_argument("--allocation", choices=ALLOCATIONS, default="era")
    p.add_argument("--delta", type=float, default=0.1, help="total risk budget")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--early-stop", action="store_true", help="stop at the first node inside the goal")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("compare", help="seeds x configurations on shared sampling streams")
    p.add_argument("--scenario")
    p.add_argument("--seeds", type=parse_seeds, default=parse_seeds("0..9"), help="INT or inclusive A..B")
    p.add_argument("--configs", type=parse_configs, default=parse_configs("ura:0.1,era:0.1,era:0.02"),
                   help="comma list of MODE:DELTA")
    p.add_argument("--samples", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--dump", action="store_true", help="also write a tree dump and SVG per run")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("audit", help="replay a tree dump against its scenario")
    p.add_argument("--tree", required=True)
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("gen", help="write a random rectangle scenario")
    p.add_argument("--n", type=int, default=10, help="number of obstacles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="output path ('-' for stdout)")
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("DRRRT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ScenarioInfeasibleError, TreeFormatError, OSError) as exc:
        print(f"drrrt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE if not isinstance(exc, ScenarioInfeasibleError) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
