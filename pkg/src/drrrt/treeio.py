"""Line-delimited JSON tree dumps.

The first line is a header carrying the run configuration; every following
line is one node with a fixed key order, so dumps diff cleanly.  Floats are
written with ``repr`` precision and read back bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from drrrt.dynamics import MomentState
from drrrt.errors import TreeFormatError
from drrrt.planner import PlannerParams, Tree, TreeNode
from drrrt.risk import RiskLedger

FORMAT = "drrrt-tree"
VERSION = 1
NODE_FIELDS = ("id", "parent", "k_abs", "steps", "target", "mean", "cov", "J", "residual", "delta", "kappa", "delta_tot")


def node_record(node: TreeNode) -> dict:
    led = node.ledger
    return {
        "id": node.id,
        "parent": node.parent,
        "k_abs": node.k_abs,
        "steps": node.steps,
        "target": None if node.target is None else node.target.tolist(),
        "mean": node.state.mean.tolist(),
        "cov": node.state.cov.ravel().tolist(),
        "J": node.J,
        "residual": node.residual,
        "delta": [] if led is None else led.delta.tolist(),
        "kappa": [] if led is None else led.kappa.tolist(),
        "delta_tot": [] if led is None else led.cumulative.tolist(),
    }


def dumps_tree(tree: Tree, params: PlannerParams, seed: int | None = None) -> str:
    header = {
        "format": FORMAT, "version": VERSION, "seed": seed, "allocation": params.allocation,
        "Delta": params.Delta, "T": params.T, "T_steer": params.T_steer, "nodes": len(tree),
    }
    lines = [json.dumps(header, allow_nan=False)]
    lines += [json.dumps(node_record(nd), allow_nan=False) for nd in tree.nodes]
    return "\n".join(lines) + "\n"


def write_tree(path, tree: Tree, params: PlannerParams, seed: int | None = None) -> None:
    Path(path).write_text(dumps_tree(tree, params, seed))


def _node(rec: dict, n: int, N: int, n_e: int) -> TreeNode:
    if list(rec) != list(NODE_FIELDS):
        raise TreeFormatError(f"node record has fields {list(rec)}, expected {list(NODE_FIELDS)}")
    cov = np.array(rec["cov"], dtype=float)
    if cov.size != n * n:
        raise TreeFormatError(f"node {rec['id']}: covariance has {cov.size} entries, expected {n * n}")
    ledger = None
    if rec["parent"] is not None:
        steps = int(rec["steps"])
        delta = np.array(rec["delta"], dtype=float).reshape(N, steps)
        kappa = np.array(rec["kappa"], dtype=float).reshape(n_e, steps)
        ledger = RiskLedger(delta, kappa, np.array(rec["delta_tot"], dtype=float), int(rec["k_abs"]) - steps + 1)
    return TreeNode(
        id=int(rec["id"]),
        parent=None if rec["parent"] is None else int(rec["parent"]),
        state=MomentState(np.array(rec["mean"], dtype=float), cov.reshape(n, n), int(rec["k_abs"])),
        J=float(rec["J"]),
        residual=float(rec["residual"]),
        steps=int(rec["steps"]),
        target=None if rec["target"] is None else np.array(rec["target"], dtype=float),
        ledger=ledger,
    )


def loads_tree(text: str, n: int, N: int, n_e: int) -> tuple[dict, Tree]:
    """Parse a dump; ``n``, ``N``, ``n_e`` are the scenario's state, obstacle and workspace-face counts."""
    lines = text.splitlines()
    if not lines:
        raise TreeFormatError("empty tree dump")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise TreeFormatError(f"malformed tree dump: {exc}") from None
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise TreeFormatError("not a tree dump (bad header)")
    if len(records) != header.get("nodes"):
        raise TreeFormatError(f"header announces {header.get('nodes')} nodes, file holds {len(records)}")
    try:
        nodes = [_node(r, n, N, n_e) for r in records]
        tree = Tree(nodes[0])
        for nd in nodes[1:]:
            tree.add(nd)
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        if isinstance(exc, TreeFormatError):
            raise
        raise TreeFormatError(f"malformed node record: {exc}") from None
    return header, tree


def read_tree(path, n: int, N: int, n_e: int) -> tuple[dict, Tree]:
    return loads_tree(Path(path).read_text(), n, N, n_e)
