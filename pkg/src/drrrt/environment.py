"""Polytopic world model: workspace, obstacles, goal region and free-space sampling."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from drrrt.dynamics import check_psd
from drrrt.errors import ConfigurationError, ScenarioInfeasibleError

MAX_SAMPLE_ATTEMPTS = 10_000


@dataclass(frozen=True, eq=False)
class Halfspace:
    """The set ``{x : a.x <= b}``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", float(self.b))
        if not np.linalg.norm(self.a) > 0:
            raise ConfigurationError("halfspace normal must be nonzero")


@dataclass(frozen=True, eq=False)
class Polytope:
    """Intersection of halfspaces, stored as ``A x <= b``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] == 0:
            raise ConfigurationError("polytope needs at least one halfspace")
        if b.shape != (A.shape[0],):
            raise ConfigurationError(f"offset vector length {b.shape} does not match {A.shape[0]} normals")
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise ConfigurationError("polytope has a zero normal vector")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_halfspaces(cls, halfspaces) -> "Polytope":
        halfspaces = list(halfspaces)
        if not halfspaces:
            raise ConfigurationError("polytope needs at least one halfspace")
        return cls(np.array([h.a for h in halfspaces]), np.array([h.b for h in halfspaces]))

    @classmethod
    def box(cls, lo, hi, n: int, dims=(0, 1)) -> "Polytope":
        """Axis-aligned box ``lo <= x[dims] <= hi`` embedded in an n-dim state."""
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if lo.shape != (len(dims),) or hi.shape != lo.shape or np.any(hi <= lo):
            raise ConfigurationError(f"invalid box bounds {lo.tolist()} .. {hi.tolist()}")
        rows, offs = [], []
        for i, d in enumerate(dims):
            e = np.zeros(n)
            e[d] = 1.0
            rows += [e, -e]
            offs += [hi[i], -lo[i]]
        return cls(np.array(rows), np.array(offs))

    @property
    def halfspaces(self) -> list[Halfspace]:
        return [Halfspace(a, b) for a, b in zip(self.A, self.b)]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, x) -> bool:
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b))

    def translate(self, c) -> "Polytope":
        return Polytope(self.A, self.b + self.A @ np.asarray(c, dtype=float))

    def bounds(self, dim: int) -> tuple[float, float]:
        """Range of coordinate ``dim`` over the polytope (may be infinite)."""
        n = self.dim
        out = []
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[dim] = sign
            res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * n, method="highs")
            if res.status == 3:
                out.append(-sign * np.inf)
            elif res.status != 0:
                raise ConfigurationError(f"polytope is empty or degenerate ({res.message})")
            else:
                out.append(sign * res.fun)
        return out[0], out[1]


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Rigid polytope translated along a nominal schedule, with location uncertainty.

    ``translation`` has one row per time step; queries past the last row reuse
    it, so a single row is a static obstacle.  ``location_cov`` holds one
    covariance per hyperplane (a single matrix is broadcast to every face).
    """

    shape: Polytope
    translation: np.ndarray = None
    location_cov: np.ndarray = None

    def __post_init__(self):
        n = self.shape.dim
        t = np.zeros((1, n)) if self.translation is None else np.atleast_2d(np.asarray(self.translation, dtype=float))
        if t.shape[1] != n or t.shape[0] == 0:
            raise ConfigurationError(f"translation schedule must have rows of length {n}")
        h = len(self.shape.b)
        if self.location_cov is None:
            cov = np.zeros((h, n, n))
        else:
            cov = np.asarray(self.location_cov, dtype=float)
            if cov.shape == (n, n):
                cov = np.broadcast_to(cov, (h, n, n)).copy()
            if cov.shape != (h, n, n):
                raise ConfigurationError(f"location_cov must be {n}x{n} or one {n}x{n} per hyperplane")
        for j in range(h):
            check_psd(cov[j], f"location_cov[{j}]")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "location_cov", cov)

    def nominal_translation(self, k: int) -> np.ndarray:
        return self.translation[min(k, len(self.translation) - 1)]

    @property
    def is_static(self) -> bool:
        return len(self.translation) == 1


def obstacle_at(obs: Obstacle, k: int, inflation: float = 0.0) -> Polytope:
    """Nominal obstacle polytope at step k; the random part stays in the tightening."""
    if k < 0:
        raise ConfigurationError("time index must be nonnegative")
    P = obs.shape.translate(obs.nominal_translation(k))
    if inflation:
        P = Polytope(P.A, P.b + inflation * np.linalg.norm(P.A, axis=1))
    return P


@dataclass(frozen=True, eq=False)
class Environment:
    X: Polytope
    obstacles: tuple = ()
    goal: Polytope = None
    U: Polytope = None
    env_probabilistic: bool = False
    position_dims: tuple = (0, 1)
    inflation_radius: float = 0.0
    sample_velocity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "position_dims", tuple(int(d) for d in self.position_dims))
        n = self.X.dim
        for i, o in enumerate(self.obstacles):
            if o.shape.dim != n:
                raise ConfigurationError(f"obstacle {i} lives in {o.shape.dim} dims, workspace in {n}")
        if self.goal is not None and self.goal.dim != n:
            raise ConfigurationError("goal region dimension does not match workspace")
        if self.inflation_radius < 0:
            raise ConfigurationError("inflation radius must be nonnegative")

    @property
    def N(self) -> int:
        return len(self.obstacles)

    @property
    def n_e(self) -> int:
        return len(self.X.b)

    def obstacle_at(self, i: int, k: int) -> Polytope:
        return obstacle_at(self.obstacles[i], k, self.inflation_radius)

    @cached_property
    def sampling_bounds(self) -> dict:
        dims = list(self.position_dims)
        if self.sample_velocity:
            dims += [d for d in range(self.X.dim) if d not in self.position_dims]
        out = {}
        for d in dims:
            lo, hi = self.X.bounds(d)
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ConfigurationError(f"workspace is unbounded in sampled coordinate {d}")
            out[d] = (lo, hi)
        return out

    @cached_property
    def faces(self):
        """Stacked obstacle hyperplanes: normals, base offsets, owner index, per-face covariance."""
        n = self.X.dim
        if not self.obstacles:
            return np.zeros((0, n)), np.zeros(0), np.zeros(0, dtype=int), np.zeros((0, n, n))
        A = np.vstack([o.shape.A for o in self.obstacles])
        b = np.concatenate([o.shape.b for o in self.obstacles])
        owner = np.concatenate([np.full(len(o.shape.b), i) for i, o in enumerate(self.obstacles)])
        cov = np.concatenate([o.location_cov for o in self.obstacles])
        if self.inflation_radius:
            b = b + self.inflation_radius * np.linalg.norm(A, axis=1)
        return A, b, owner, cov

    def face_offsets(self, ks) -> np.ndarray:
        """Offsets of every obstacle hyperplane at each time in ``ks``, shape ``ks.shape + (F,)``."""
        A, b, owner, _ = self.faces
        ks = np.asarray(ks, dtype=int)
        if all(o.is_static for o in self.obstacles):
            return np.broadcast_to(self._static_offsets, ks.shape + (len(b),))
        uniq, inv = np.unique(ks, return_inverse=True)
        rows = np.empty((len(uniq), len(b)))
        for r, k in enumerate(uniq):
            c = np.array([self.obstacles[i].nominal_translation(int(k)) for i in owner]).reshape(A.shape)
            rows[r] = b + np.einsum("fn,fn->f", A, c)
        return rows[inv.reshape(ks.shape)]

    @cached_property
    def face_quad(self) -> np.ndarray:
        """``a^T Sigma_c a`` for every obstacle face."""
        A, _, _, cov = self.faces
        return np.einsum("fi,fij,fj->f", A, cov, A)

    @cached_property
    def face_starts(self) -> np.ndarray:
        """Index of each obstacle's first face in the stacked face arrays."""
        return np.cumsum([0] + [len(o.shape.b) for o in self.obstacles[:-1]])

    @cached_property
    def _static_offsets(self) -> np.ndarray:
        A, b, owner, _ = self.faces
        c = np.array([self.obstacles[i].translation[0] for i in owner]).reshape(A.shape)
        return b + np.einsum("fn,fn->f", A, c)

    def in_goal(self, x) -> bool:
        return self.goal is not None and self.goal.contains(x)


def mean_in_collision(env: Environment, x, k: int) -> bool:
    """Nominal check: is ``x`` outside the workspace or inside any obstacle at step k?"""
    x = np.asarray(x, dtype=float)
    if not env.X.contains(x):
        return True
    return any(env.obstacle_at(i, k).contains(x) for i in range(env.N))


def sample_free(env: Environment, k: int, rng: np.random.Generator, max_attempts: int = MAX_SAMPLE_ATTEMPTS) -> np.ndarray:
    """Rejection-sample a collision-free state at step k.

    Positions are uniform over the workspace bounds; the remaining coordinates
    are zero unless ``env.sample_velocity`` is set.
    """
    bounds = env.sampling_bounds
    dims = list(bounds)
    lo = np.array([bounds[d][0] for d in dims])
    hi = np.array([bounds[d][1] for d in dims])
    for _ in range(max_attempts):
        x = np.zeros(env.X.dim)
        x[dims] = rng.uniform(lo, hi)
        if not mean_in_collision(env, x, k):
            return x
    raise ScenarioInfeasibleError(f"no collision-free sample found in {max_attempts} attempts")
