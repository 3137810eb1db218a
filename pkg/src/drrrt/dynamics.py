"""Moment propagation and finite-horizon LQR steering for stochastic LTI systems.

The robot follows ``x[k+1] = A x[k] + B u[k] + w[k]`` where only the first two
moments of ``w`` and ``x[0]`` are known.  Under an affine policy
``u[k] = K[k] x[k] + g[k]`` the mean and covariance evolve in closed form, which
is all the risk machinery downstream needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drrrt.errors import ConfigurationError

PSD_TOL = 1e-9


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def check_psd(M: np.ndarray, name: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ConfigurationError(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -PSD_TOL:
        raise ConfigurationError(f"{name} is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class StochasticLinearSystem:
    """Linear dynamics with moment-only knowledge of noise and initial state."""

    A: np.ndarray
    B: np.ndarray
    Sigma_w: np.ndarray
    x0_mean: np.ndarray
    Sigma_x0: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        for name in ("A", "B", "Sigma_w", "x0_mean", "Sigma_x0"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        if self.B.ndim != 2 or self.B.shape[0] != n:
            raise ConfigurationError(f"B must be {n}xm, got {self.B.shape}")
        if self.x0_mean.shape != (n,):
            raise ConfigurationError(f"x0_mean must have length {n}")
        for name in ("Sigma_w", "Sigma_x0"):
            M = getattr(self, name)
            if M.shape != (n, n):
                raise ConfigurationError(f"{name} must be {n}x{n}, got {M.shape}")
            check_psd(M, name)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def initial_state(self) -> "MomentState":
        return MomentState(self.x0_mean.copy(), self.Sigma_x0.copy(), 0)


def double_integrator(dt: float = 0.1, Sigma_w=None, Sigma_x0=None, x0_mean=None) -> StochasticLinearSystem:
    """Planar unit-mass double integrator, state ``(px, py, vx, vy)``.

    Defaults reproduce the cluttered 50x50 benchmark: start at rest at the
    origin, position variance 1e-3 and correlated velocity noise.
    """
    I2, Z2 = np.eye(2), np.zeros((2, 2))
    A = np.block([[I2, dt * I2], [Z2, I2]])
    B = np.vstack([0.5 * dt**2 * I2, dt * I2])
    if Sigma_w is None:
        Sigma_w = 1e-3 * np.array([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 2, 1], [0, 0, 1, 2]], dtype=float)
    if Sigma_x0 is None:
        Sigma_x0 = 1e-3 * np.diag([1.0, 1.0, 0.0, 0.0])
    if x0_mean is None:
        x0_mean = np.zeros(4)
    return StochasticLinearSystem(A, B, Sigma_w, x0_mean, Sigma_x0, dt)


@dataclass(frozen=True, eq=False)
class MomentState:
    mean: np.ndarray
    cov: np.ndarray
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if self.k < 0:
            raise ConfigurationError("time index must be nonnegative")


def propagate_moments(sys: StochasticLinearSystem, K, g, s: MomentState) -> MomentState:
    """One step of mean/covariance propagation under ``u = K x + g``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    n, m = sys.n, sys.m
    if K.shape != (m, n) or g.shape != (m,) or s.mean.shape != (n,) or s.cov.shape != (n, n):
        raise ConfigurationError(
            f"dimension mismatch: K {K.shape}, g {g.shape}, mean {s.mean.shape}, cov {s.cov.shape} for n={n}, m={m}"
        )
    Acl = sys.A + sys.B @ K
    mean = Acl @ s.mean + sys.B @ g
    cov = symmetrize(Acl @ s.cov @ Acl.T + sys.Sigma_w)
    return MomentState(mean, cov, s.k + 1)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Backward Riccati pass for regulating ``e = x - target`` over ``T_s`` steps.

    ``gains[k]`` is the feedback used at step k and ``P[k]`` the cost-to-go
    matrix (``P[T_s] = Q``).  Neither depends on the source state or the target,
    so the closed-loop maps below are precomputed once:
    ``mean[k] = target + Phi[k] (mean[0] - target) + Drift[k] target`` and
    ``cov[k] = Phi[k] cov[0] Phi[k]^T + Wacc[k]``.  ``Drift`` accounts for
    targets that are not at rest; it maps a resting target to exactly zero.
    """

    gains: np.ndarray  # (T_s, m, n)
    P: np.ndarray  # (T_s + 1, n, n)
    Q: np.ndarray
    R: np.ndarray
    Phi: np.ndarray  # (T_s + 1, n, n)
    Drift: np.ndarray  # (T_s + 1, n, n)
    Wacc: np.ndarray  # (T_s + 1, n, n)

    @property
    def horizon(self) -> int:
        return len(self.gains)


def _as_weight(W, dim: int, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        W = float(W) * np.eye(dim)
    if W.shape != (dim, dim):
        raise ConfigurationError(f"{name} must be {dim}x{dim} or scalar, got {W.shape}")
    return W


def solve_riccati(sys: StochasticLinearSystem, Q, R, T_s: int) -> RiccatiSolution:
    if T_s < 1:
        raise ConfigurationError("steering horizon must be >= 1")
    Q = _as_weight(Q, sys.n, "Q")
    R = _as_weight(R, sys.m, "R")
    check_psd(Q, "Q")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(symmetrize(R)).min() <= 0:
        raise ConfigurationError("R must be symmetric positive definite")
    A, B, n = sys.A, sys.B, sys.n
    P = np.empty((T_s + 1, n, n))
    gains = np.empty((T_s, sys.m, n))
    P[T_s] = Q
    for k in range(T_s - 1, -1, -1):
        Pn = P[k + 1]
        BtP = B.T @ Pn
        K = -np.linalg.solve(R + BtP @ B, BtP @ A)
        gains[k] = K
        Acl = A + B @ K
        P[k] = symmetrize(Q + K.T @ R @ K + Acl.T @ Pn @ Acl)
    Phi = np.empty((T_s + 1, n, n))
    Drift = np.empty((T_s + 1, n, n))
    Wacc = np.empty((T_s + 1, n, n))
    Phi[0], Drift[0], Wacc[0] = np.eye(n), np.zeros((n, n)), np.zeros((n, n))
    A_minus_I = A - np.eye(n)
    for k in range(T_s):
        Acl = A + B @ gains[k]
        Phi[k + 1] = Acl @ Phi[k]
        Drift[k + 1] = Acl @ Drift[k] + A_minus_I
        Wacc[k + 1] = symmetrize(Acl @ Wacc[k] @ Acl.T + sys.Sigma_w)
    return RiccatiSolution(gains, P, Q, R, Phi, Drift, Wacc)


@dataclass(frozen=True, eq=False)
class SteeringResult:
    gains: np.ndarray  # (T_s, m, n)
    feedforward: np.ndarray  # (T_s, m)
    mean_path: np.ndarray  # (T_s + 1, n)
    cov_path: np.ndarray  # (T_s + 1, n, n)
    cost: float
    target: np.ndarray | None = None


def path_cost(mean_path, gains, target, Q, R) -> float:
    """Quadratic steering objective of a mean path (stage terms plus terminal term)."""
    e = mean_path - target
    u = np.einsum("kij,kj->ki", gains, e[:-1])
    stage = np.einsum("ki,ij,kj->", e[:-1], Q, e[:-1]) + np.einsum("ki,ij,kj->", u, R, u)
    return float(stage + e[-1] @ Q @ e[-1])


def steer_paths(ric: RiccatiSolution, means0, covs0, targets):
    """Stacked mean ``(B, T_s+1, n)`` and covariance ``(B, T_s+1, n, n)`` paths.

    Row b steers source ``(means0[b], covs0[b])`` toward ``targets[b]``.
    """
    err = np.einsum("kij,bj->bki", ric.Phi, means0 - targets) + np.einsum("kij,bj->bki", ric.Drift, targets)
    means = targets[:, None, :] + err
    means[:, 0] = means0
    covs = ric.Phi[None] @ covs0[:, None] @ ric.Phi.transpose(0, 2, 1)[None] + ric.Wacc[None]
    covs = 0.5 * (covs + covs.transpose(0, 1, 3, 2))
    covs[:, 0] = covs0
    return means, covs


def steer_with(sys: StochasticLinearSystem, ric: RiccatiSolution, source: MomentState, target) -> SteeringResult:
    """Mean and covariance trajectories under a precomputed Riccati policy."""
    target = np.asarray(target, dtype=float)
    if target.shape != (sys.n,):
        raise ConfigurationError(f"target must have length {sys.n}")
    means = target + (ric.Phi @ (source.mean - target) + ric.Drift @ target)
    means[0] = source.mean
    covs = ric.Phi @ source.cov @ ric.Phi.transpose(0, 2, 1) + ric.Wacc
    covs = 0.5 * (covs + covs.transpose(0, 2, 1))
    covs[0] = source.cov
    ff = -(ric.gains @ target)
    cost = path_cost(means, ric.gains, target, ric.Q, ric.R)
    return SteeringResult(ric.gains, ff, means, covs, cost, target)


def lqr_steer(sys: StochasticLinearSystem, source: MomentState, target, T_s: int, Q, R) -> SteeringResult:
    """Steer the moment state toward ``target`` with finite-horizon LQR.

    The policy is ``u[k] = K[k] (x[k] - target)``, i.e. ``g[k] = -K[k] target``.
    The returned cost is the quadratic objective evaluated on the mean path;
    covariance does not enter it.  Targets should be equilibria of ``A``
    (zero velocity for the double integrator) for the error dynamics to be exact.
    """
    return steer_with(sys, solve_riccati(sys, Q, R, T_s), source, target)


def cost_to_go(sys: StochasticLinearSystem, source: MomentState, target, T_s: int, Q, R) -> float:
    ric = solve_riccati(sys, Q, R, T_s)
    e = source.mean - np.asarray(target, dtype=float)
    return float(e @ ric.P[0] @ e)
