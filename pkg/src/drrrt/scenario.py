"""Scenario documents: YAML in, validated model objects out (and back).

Top-level sections are ``system``, ``environment``, ``obstacles`` and
``planner``; unknown keys anywhere are rejected.  Regions are either
``{box: [lo, hi]}`` (over the position coordinates, or over every coordinate
when ``lo`` has full length) or ``{halfspaces: [{a: [...], b: ...}, ...]}``.
Matrices are row-major nested lists.  See README.md for the full field list.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from drrrt.dynamics import StochasticLinearSystem, double_integrator
from drrrt.environment import Environment, Obstacle, Polytope
from drrrt.errors import ConfigurationError
from drrrt.planner import PlannerParams

SYSTEM_KEYS = {"model", "A", "B", "dt", "Sigma_w", "Sigma_x0", "x0_mean"}
ENV_KEYS = {"workspace", "goal", "input_set", "env_probabilistic", "position_dims", "sample_velocity"}
OBSTACLE_KEYS = {"rect", "halfspaces", "translation", "location_cov"}
PLANNER_KEYS = {"Delta", "T", "T_steer", "M", "theta_J", "theta_res", "samples", "Q", "R",
                "inflation_radius", "allocation", "early_stop"}
TOP_KEYS = {"system", "environment", "obstacles", "planner"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"{where}: unknown field(s) {sorted(unknown)}")


def _matrix(v, where):
    try:
        return np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: not a numeric array ({exc})") from None


def _region(d, n, dims, where) -> Polytope:
    if not isinstance(d, dict) or len(d) != 1 or not ({"box", "halfspaces"} & set(d)):
        raise ConfigurationError(f"{where}: region needs exactly one of 'box' or 'halfspaces'")
    _check_keys(d, {"box", "halfspaces"}, where)
    try:
        if "box" in d:
            lo, hi = (np.asarray(v, dtype=float) for v in d["box"])
            box_dims = tuple(range(n)) if len(lo) == n and len(lo) != len(dims) else dims
            return Polytope.box(lo, hi, n, box_dims)
        hs = d["halfspaces"]
        if not isinstance(hs, list) or not hs:
            raise ConfigurationError(f"{where}: halfspace list must be nonempty")
        for j, h in enumerate(hs):
            _check_keys(h, {"a", "b"}, f"{where}.halfspaces[{j}]")
        A = _matrix([h["a"] for h in hs], where)
        b = _matrix([h["b"] for h in hs], where)
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"{where}: malformed region ({exc})") from None
    if A.ndim != 2 or A.shape[1] != n:
        raise ConfigurationError(f"{where}: halfspace normals must have length {n}")
    return Polytope(A, b)


def _system(d) -> StochasticLinearSystem:
    _check_keys(d, SYSTEM_KEYS, "system")
    dt = float(d.get("dt", 0.1))
    model = d.get("model")
    if model is not None and model != "double_integrator":
        raise ConfigurationError(f"system.model: unknown model {model!r}")
    if model is None and not {"A", "B"} <= set(d):
        raise ConfigurationError("system: A and B are required unless model is given")
    base = double_integrator(dt)
    kw = {}
    for key in ("A", "B", "Sigma_w", "Sigma_x0", "x0_mean"):
        kw[key] = _matrix(d[key], f"system.{key}") if key in d else getattr(base, key)
    return StochasticLinearSystem(dt=dt, **kw)


def _obstacle(d, n, dims, i) -> Obstacle:
    where = f"obstacles[{i}]"
    _check_keys(d, OBSTACLE_KEYS, where)
    if ("rect" in d) == ("halfspaces" in d):
        raise ConfigurationError(f"{where}: give exactly one of 'rect' or 'halfspaces'")
    shape = _region({"box": d["rect"]} if "rect" in d else {"halfspaces": d["halfspaces"]}, n, dims, where)
    trans = d.get("translation")
    if trans is not None:
        trans = np.atleast_2d(_matrix(trans, f"{where}.translation"))
        if trans.shape[1] == len(dims) and len(dims) != n:
            full = np.zeros((len(trans), n))
            full[:, list(dims)] = trans
            trans = full
    cov = d.get("location_cov")
    return Obstacle(shape, trans, None if cov is None else _matrix(cov, f"{where}.location_cov"))


def _planner(d) -> tuple[PlannerParams, float]:
    _check_keys(d, PLANNER_KEYS, "planner")
    d = dict(d)
    inflation = float(d.pop("inflation_radius", 0.0))
    kw = {}
    casts = dict(Delta=float, T=int, T_steer=int, M=int, theta_J=float, theta_res=float,
                 samples=int, allocation=str, early_stop=bool)
    for key, value in d.items():
        if key in ("Q", "R"):
            kw[key] = float(value) if np.isscalar(value) else _matrix(value, f"planner.{key}")
        else:
            kw[key] = casts[key](value)
    return PlannerParams(**kw), inflation


def scenario_from_dict(doc) -> tuple[Environment, StochasticLinearSystem, PlannerParams]:
    _check_keys(doc, TOP_KEYS, "scenario")
    for key in ("system", "environment", "planner"):
        if key not in doc:
            raise ConfigurationError(f"scenario: missing section {key!r}")
    sys = _system(doc["system"])
    n = sys.n
    e = doc["environment"]
    _check_keys(e, ENV_KEYS, "environment")
    if "workspace" not in e:
        raise ConfigurationError("environment: workspace is required")
    dims = tuple(int(x) for x in e.get("position_dims", (0, 1)))
    if any(not 0 <= x < n for x in dims):
        raise ConfigurationError(f"environment.position_dims out of range for n={n}")
    obstacles = doc.get("obstacles") or []
    if not isinstance(obstacles, list):
        raise ConfigurationError("obstacles: expected a list")
    params, inflation = _planner(doc["planner"])
    env = Environment(
        X=_region(e["workspace"], n, dims, "environment.workspace"),
        obstacles=[_obstacle(o, n, dims, i) for i, o in enumerate(obstacles)],
        goal=_region(e["goal"], n, dims, "environment.goal") if "goal" in e else None,
        U=_region(e["input_set"], sys.m, tuple(range(sys.m)), "environment.input_set") if "input_set" in e else None,
        env_probabilistic=bool(e.get("env_probabilistic", False)),
        position_dims=dims,
        inflation_radius=inflation,
        sample_velocity=bool(e.get("sample_velocity", False)),
    )
    return env, sys, params


def load_scenario(text: str):
    """Parse and validate a scenario document; returns ``(env, sys, params)``."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"scenario is not valid YAML: {exc}") from None
    return scenario_from_dict(doc)


def load_scenario_file(path):
    return load_scenario(Path(path).read_text())


def _hs(P: Polytope) -> dict:
    return {"halfspaces": [{"a": a.tolist(), "b": float(b)} for a, b in zip(P.A, P.b)]}


def _weight(W):
    W = np.asarray(W, dtype=float)
    return float(W) if W.ndim == 0 else W.tolist()


def scenario_to_dict(env: Environment, sys: StochasticLinearSystem, params: PlannerParams) -> dict:
    """Canonical (fully expanded) form of a scenario."""
    environment = {
        "workspace": _hs(env.X),
        "env_probabilistic": env.env_probabilistic,
        "position_dims": list(env.position_dims),
        "sample_velocity": env.sample_velocity,
    }
    if env.goal is not None:
        environment["goal"] = _hs(env.goal)
    if env.U is not None:
        environment["input_set"] = _hs(env.U)
    obstacles = []
    for o in env.obstacles:
        obstacles.append(dict(_hs(o.shape), translation=o.translation.tolist(), location_cov=o.location_cov.tolist()))
    return {
        "system": {
            "A": sys.A.tolist(), "B": sys.B.tolist(), "dt": float(sys.dt),
            "Sigma_w": sys.Sigma_w.tolist(), "Sigma_x0": sys.Sigma_x0.tolist(), "x0_mean": sys.x0_mean.tolist(),
        },
        "environment": environment,
        "obstacles": obstacles,
        "planner": {
            "Delta": params.Delta, "T": params.T, "T_steer": params.T_steer, "M": params.M,
            "theta_J": params.theta_J, "theta_res": params.theta_res, "samples": params.samples,
            "Q": _weight(params.Q), "R": _weight(params.R), "inflation_radius": env.inflation_radius,
            "allocation": params.allocation, "early_stop": params.early_stop,
        },
    }


def dump_scenario(env, sys, params) -> str:
    return yaml.safe_dump(scenario_to_dict(env, sys, params), sort_keys=False, default_flow_style=None)


def generate_scenario(n_obstacles: int = 10, seed: int = 0, size: float = 50.0, goal=((45.0, 45.0), (50.0, 50.0)),
                      side=(2.0, 8.0), start=(0.0, 0.0), clearance: float = 10.0, **planner) -> dict:
    """Random axis-aligned rectangles in ``[0, size]^2`` around the default double integrator.

    Rectangles within ``clearance`` (max-norm) of the start or overlapping the
    goal box are redrawn.  The default clearance is the uniform-allocation
    tightening at the initial position spread (about 316 x 0.032), so the
    root can be left under either allocation at the default budget.
    """
    rng = np.random.default_rng(seed)
    glo, ghi = np.asarray(goal[0]), np.asarray(goal[1])
    start = np.asarray(start, dtype=float)
    rects = []
    while len(rects) < n_obstacles:
        wh = rng.uniform(*side, size=2)
        lo = rng.uniform(0.0, size - wh)
        hi = lo + wh
        if np.all(lo - clearance <= start) and np.all(start <= hi + clearance):
            continue
        if np.all(lo < ghi) and np.all(glo < hi):
            continue
        rects.append([lo.round(3).tolist(), hi.round(3).tolist()])
    return {
        "system": {"model": "double_integrator", "dt": 0.1},
        "environment": {
            "workspace": {"box": [[0.0, 0.0], [size, size]]},
            "goal": {"box": [list(map(float, glo)), list(map(float, ghi))]},
            "env_probabilistic": False,
        },
        "obstacles": [{"rect": r} for r in rects],
        "planner": dict({"Delta": 0.1, "T": 1000, "T_steer": 10, "M": 5, "theta_J": 0.5, "theta_res": 0.5,
                         "samples": 1000, "Q": 40.0, "R": 0.1, "allocation": "era"}, **planner),
    }
