"""Distributionally robust constraint tightening and risk allocation.

For a halfspace with normal ``a`` and a state known only through its mean and
covariance, the worst case over all distributions with those moments of
violating the halfspace is at most ``delta`` whenever the mean clears the face
by ``sqrt((1 - delta) / delta) * ||Sigma^(1/2) a||`` (one-sided Chebyshev).
Inverting that relation gives the smallest risk a trajectory actually needs,
which is what exact allocation charges against the budget.

Infeasible cells (mean inside an obstacle, or outside a workspace face) carry
risk ``inf`` so budget comparisons reject them without special cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from drrrt.dynamics import PSD_TOL
from drrrt.errors import ConfigurationError

INFEASIBLE = math.inf


def psd_sqrt(S) -> np.ndarray:
    """Symmetric square root; eigenvalues above ``-PSD_TOL`` are clamped to zero."""
    S = np.asarray(S, dtype=float)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w.size and w.min() < -PSD_TOL * max(1.0, abs(w).max()):
        raise ConfigurationError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sigma_norm(a, S) -> float:
    """``||S^(1/2) a||_2``."""
    return float(np.linalg.norm(psd_sqrt(S) @ np.asarray(a, dtype=float)))


def _risk_factor(delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"risk level must lie in (0, 1), got {delta}")
    return math.sqrt((1.0 - delta) / delta)


def tightening_obstacle(a, Sigma_x, Sigma_c, delta: float) -> float:
    """Margin an obstacle face must be cleared by at risk ``delta``."""
    return _risk_factor(delta) * sigma_norm(a, np.asarray(Sigma_x) + np.asarray(Sigma_c))


def tightening_env(a, Sigma_x, kappa: float) -> float:
    return _risk_factor(kappa) * sigma_norm(a, Sigma_x)


def _face_covs(P, Sigma_c):
    h, n = P.A.shape
    if Sigma_c is None:
        return np.zeros((h, n, n))
    Sigma_c = np.asarray(Sigma_c, dtype=float)
    return np.broadcast_to(Sigma_c, (h, n, n)) if Sigma_c.ndim == 2 else Sigma_c


def check_h(x_mean, P, Sigma_x, delta: float, Sigma_c=None) -> bool:
    """True iff the mean clears at least one tightened face of obstacle ``P``."""
    x_mean = np.asarray(x_mean, dtype=float)
    covs = _face_covs(P, Sigma_c)
    for a, b, Sc in zip(P.A, P.b, covs):
        if a @ x_mean >= b + tightening_obstacle(a, Sigma_x, Sc, delta):
            return True
    return False


def check_g(x_mean, halfspace, Sigma_x, kappa: float) -> bool:
    """True iff the mean lies inside the tightened workspace face."""
    a, c = halfspace.a, halfspace.b
    return bool(a @ np.asarray(x_mean, dtype=float) <= c - tightening_env(a, Sigma_x, kappa))


def _risk_from_margin(m: float) -> float:
    if m <= 0:
        return INFEASIBLE
    return 1.0 / (1.0 + m * m)


def era_obstacle_risk(x_mean, Sigma_x, P, Sigma_c=None) -> float:
    """Smallest risk for which the mean is outside the tightened obstacle.

    Uses the face with the largest normalized margin; returns ``inf`` when the
    mean is inside (or on the boundary of) the obstacle.
    """
    x_mean = np.asarray(x_mean, dtype=float)
    best = -math.inf
    for a, b, Sc in zip(P.A, P.b, _face_covs(P, Sigma_c)):
        margin = float(a @ x_mean - b)
        scale = sigma_norm(a, np.asarray(Sigma_x) + Sc)
        if scale > 0:
            best = max(best, margin / scale)
        elif margin > 0:
            best = math.inf
    return _risk_from_margin(best)


def era_env_risk(x_mean, Sigma_x, halfspace) -> float:
    a, c = halfspace.a, halfspace.b
    slack = float(c - a @ np.asarray(x_mean, dtype=float))
    scale = sigma_norm(a, Sigma_x)
    if scale == 0:
        return 0.0 if slack > 0 else INFEASIBLE
    return _risk_from_margin(slack / scale)


def cumulative_risk(delta: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Running total over steps of (obstacle risks + workspace risks).

    Works on stacked ledgers too (leading batch axes).  ``np.cumsum`` adds
    strictly left to right, so the result is bit-identical to summing each
    column in order and accumulating the column totals in order.
    """
    delta = np.asarray(delta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    col_d = np.cumsum(delta, axis=-2)[..., -1, :] if delta.shape[-2] else 0.0
    col_k = np.cumsum(kappa, axis=-2)[..., -1, :] if kappa.shape[-2] else 0.0
    per_step = np.zeros(delta.shape[:-2] + delta.shape[-1:]) + col_d + col_k
    return np.cumsum(per_step, axis=-1)


@dataclass(frozen=True, eq=False)
class RiskLedger:
    """Per-cell risks of one steered segment.

    Column ``c`` corresponds to absolute time ``k_start + c``.
    """

    delta: np.ndarray  # (N, T_s)
    kappa: np.ndarray  # (n_e, T_s)
    cumulative: np.ndarray  # (T_s,)
    k_start: int = 1

    @classmethod
    def build(cls, delta, kappa, k_start: int = 1) -> "RiskLedger":
        delta = np.asarray(delta, dtype=float)
        kappa = np.asarray(kappa, dtype=float)
        return cls(delta, kappa, cumulative_risk(delta, kappa), k_start)

    @property
    def horizon(self) -> int:
        return len(self.cumulative)

    @property
    def first_infeasible(self):
        """``("obstacle"|"workspace", index, k)`` of the first infinite cell, or None."""
        for c in range(self.horizon):
            rows = np.flatnonzero(np.isinf(self.delta[:, c]))
            if rows.size:
                return ("obstacle", int(rows[0]), self.k_start + c)
            rows = np.flatnonzero(np.isinf(self.kappa[:, c]))
            if rows.size:
                return ("workspace", int(rows[0]), self.k_start + c)
        return None

    @property
    def feasible(self) -> bool:
        return self.first_infeasible is None

    def prefix(self, k: int) -> "RiskLedger":
        return RiskLedger(self.delta[:, :k], self.kappa[:, :k], self.cumulative[:k], self.k_start)


def face_scales(cov_path, A, face_quad) -> np.ndarray:
    """``||(Sigma_x[k] + Sigma_c[f])^(1/2) a_f||`` for every step and face, shape (T, F).

    Uses ``||S^(1/2) a||^2 = a^T S a``; ``face_quad[f]`` is the precomputed
    ``a_f^T Sigma_c[f] a_f``.
    """
    q = ((A @ cov_path) * A).sum(axis=-1) + face_quad
    return np.sqrt(np.clip(q, 0.0, None))


def _normalize(margin, scale):
    with np.errstate(divide="ignore", invalid="ignore"):
        m = margin / scale
    zero = scale == 0
    m[zero] = np.where(margin[zero] > 0, np.inf, -np.inf)
    return m


def _risk_from_margins(m: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.where(m > 0, 1.0 / (1.0 + m * m), np.inf)


def era_cells(means, covs, env, ks):
    """Exact per-cell risks for stacked paths.

    ``means`` is ``(..., T, n)``, ``covs`` ``(..., T, n, n)`` and ``ks`` the
    matching absolute times ``(..., T)``.  Returns ``delta (..., N, T)`` and
    ``kappa (..., n_e, T)``; workspace risks are zero unless
    ``env.env_probabilistic`` is set.
    """
    lead = means.shape[:-1]
    delta = np.zeros(lead[:-1] + (env.N, lead[-1]))
    if env.N:
        A = env.faces[0]
        margin = means @ A.T - env.face_offsets(ks)
        m = _normalize(margin, face_scales(covs, A, env.face_quad))
        delta = np.swapaxes(_risk_from_margins(np.maximum.reduceat(m, env.face_starts, axis=-1)), -1, -2)
    kappa = np.zeros(lead[:-1] + (env.n_e, lead[-1]))
    if env.env_probabilistic:
        Ax, cx = env.X.A, env.X.b
        slack = cx - means @ Ax.T
        kappa = np.swapaxes(_risk_from_margins(_normalize(slack, face_scales(covs, Ax, 0.0))), -1, -2)
    return delta, kappa


def exact_risk_allocation(mean_path, cov_path, env, T_s: int | None = None, k_start: int = 1) -> RiskLedger:
    """Minimum per-cell risks along a steered segment.

    ``mean_path``/``cov_path`` hold steps ``k_start .. k_start + T_s - 1``; the
    segment's source state is not included.  Workspace risks are charged only
    when ``env.env_probabilistic`` is set.
    """
    mean_path = np.asarray(mean_path, dtype=float)
    cov_path = np.asarray(cov_path, dtype=float)
    if T_s is None:
        T_s = len(mean_path)
    if mean_path.shape[0] != T_s or cov_path.shape[0] != T_s:
        raise ConfigurationError(f"paths must have {T_s} steps, got {mean_path.shape[0]} and {cov_path.shape[0]}")
    delta, kappa = era_cells(mean_path, cov_path, env, np.arange(k_start, k_start + T_s))
    return RiskLedger.build(delta, kappa, k_start)


def uniform_risk_allocation(Delta: float, T: int, N: int) -> float:
    """Equal share of the total budget per obstacle and time step."""
    if N < 1 or T < 1:
        raise ConfigurationError("uniform allocation needs at least one obstacle and one step")
    return Delta / (T * N)


def uniform_cells_ok(means, covs, env, ks, delta_uni: float, kappa_uni: float = 0.0) -> np.ndarray:
    """Per-step pass mask ``(..., T)`` for stacked paths under uniform risks.

    A step passes when every obstacle has a face cleared at ``delta_uni`` and,
    for a probabilistic workspace, every face holds at ``kappa_uni``.
    """
    ok = np.ones(means.shape[:-1], dtype=bool)
    if env.N:
        A = env.faces[0]
        gamma = _risk_factor(delta_uni) * face_scales(covs, A, env.face_quad)
        cleared = (means @ A.T - env.face_offsets(ks)) >= gamma
        ok &= np.logical_or.reduceat(cleared, env.face_starts, axis=-1).all(axis=-1)
    if env.env_probabilistic:
        Ax, cx = env.X.A, env.X.b
        eta = _risk_factor(kappa_uni) * face_scales(covs, Ax, 0.0)
        ok &= (means @ Ax.T <= cx - eta).all(axis=-1)
    return ok


def uniform_admission(mean_path, cov_path, env, delta_uni: float, kappa_uni: float = 0.0, k_start: int = 1):
    """Ledger filled with the uniform risk, plus a per-step pass mask."""
    mean_path = np.asarray(mean_path, dtype=float)
    cov_path = np.asarray(cov_path, dtype=float)
    T_s = len(mean_path)
    ok = uniform_cells_ok(mean_path, cov_path, env, np.arange(k_start, k_start + T_s), delta_uni, kappa_uni)
    kappa = np.full((env.n_e, T_s), kappa_uni if env.env_probabilistic else 0.0)
    delta = np.full((env.N, T_s), delta_uni)
    return RiskLedger.build(delta, kappa, k_start), ok


def steering_budget(Delta: float, T: int, T_steer: int) -> float:
    return Delta * T_steer / T


@dataclass(frozen=True)
class Budget:
    """Total risk ``Delta`` over horizon ``T``, split evenly over steering horizons."""

    Delta: float
    T: int
    T_steer: int

    def __post_init__(self):
        if not 0.0 < self.Delta <= 0.5:
            raise ConfigurationError(f"total risk budget must lie in (0, 0.5], got {self.Delta}")
        if not 1 <= self.T_steer <= self.T:
            raise ConfigurationError(f"steering horizon must lie in [1, T={self.T}], got {self.T_steer}")

    @property
    def Delta_steer(self) -> float:
        return steering_budget(self.Delta, self.T, self.T_steer)

    def Delta_k(self, k: int) -> float:
        """Prefix budget for the first k steps of a steering horizon."""
        return self.Delta_steer * (k / self.T_steer)


def dr_feasible(delta_tot_k: float, k: int, budget: Budget, residual_parent: float) -> bool:
    return bool(delta_tot_k <= budget.Delta_k(k) + residual_parent)


def residual_update(delta_tot_k: float, k: int, budget: Budget, residual_parent: float) -> float:
    """Unused budget after the first k steps, carried to the new node."""
    res = (budget.Delta_k(k) + residual_parent) - delta_tot_k
    if res < 0:
        raise ConfigurationError("residual requested for a budget-infeasible segment")
    return res
