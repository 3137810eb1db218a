"""DR-RRT tree growth with exact (ERA) or uniform (URA) risk allocation.

Each iteration samples a free state, steers the M cheapest-to-reach nodes
toward it with finite-horizon LQR, prices every steered segment under the
chosen allocation and keeps the best-scoring one.  Feasible prefixes of the
kept segment become nodes too.  Unused risk budget of a segment is stored on
its node as a residual and may be spent by that node's children.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from drrrt.dynamics import MomentState, SteeringResult, StochasticLinearSystem, solve_riccati, steer_paths
from drrrt.environment import MAX_SAMPLE_ATTEMPTS, Environment, sample_free
from drrrt.errors import ConfigurationError
from drrrt.risk import Budget, RiskLedger, cumulative_risk, era_cells, uniform_cells_ok, uniform_risk_allocation

log = logging.getLogger(__name__)

ALLOCATIONS = ("era", "ura")
J_FLOOR = 1e-9


@dataclass(frozen=True)
class PlannerParams:
    Delta: float = 0.1
    T: int = 1000
    T_steer: int = 10
    M: int = 5
    theta_J: float = 0.5
    theta_res: float = 0.5
    samples: int = 1000
    allocation: str = "era"
    Q: object = 40.0
    R: object = 0.1
    early_stop: bool = False
    max_sample_attempts: int = MAX_SAMPLE_ATTEMPTS

    def __post_init__(self):
        if not 0.0 < self.Delta <= 0.5:
            raise ConfigurationError(f"Delta must lie in (0, 0.5], got {self.Delta}")
        if not 1 <= self.T_steer <= self.T:
            raise ConfigurationError(f"T_steer must lie in [1, T], got T_steer={self.T_steer}, T={self.T}")
        for name in ("theta_J", "theta_res"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if abs(self.theta_J + self.theta_res - 1.0) > 1e-12:
            raise ConfigurationError("theta_J + theta_res must equal 1")
        if self.allocation not in ALLOCATIONS:
            raise ConfigurationError(f"allocation must be one of {ALLOCATIONS}, got {self.allocation!r}")
        if self.M < 1:
            raise ConfigurationError("M must be at least 1")
        if self.samples < 0:
            raise ConfigurationError("samples must be nonnegative")

    @property
    def budget(self) -> Budget:
        return Budget(self.Delta, self.T, self.T_steer)


@dataclass(eq=False)
class TreeNode:
    id: int
    parent: int | None
    state: MomentState
    J: float = 0.0
    residual: float = 0.0
    steps: int = 0
    target: np.ndarray | None = None
    ledger: RiskLedger | None = None
    edge_mean: np.ndarray | None = None  # (steps + 1, n), parent state first
    edge_cov: np.ndarray | None = None

    @property
    def k_abs(self) -> int:
        return self.state.k


class Tree:
    def __init__(self, root: TreeNode):
        self.nodes: list[TreeNode] = []
        self._means = np.empty((64, root.state.mean.shape[0]))
        self.add(root)

    def add(self, node: TreeNode) -> TreeNode:
        if node.id != len(self.nodes):
            raise ValueError(f"node id {node.id} out of sequence")
        if len(self.nodes) == len(self._means):
            self._means = np.vstack([self._means, np.empty_like(self._means)])
        self._means[len(self.nodes)] = node.state.mean
        self.nodes.append(node)
        return node

    @property
    def means(self) -> np.ndarray:
        return self._means[: len(self.nodes)]

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, i) -> TreeNode:
        return self.nodes[i]

    def path_to(self, i: int) -> list[int]:
        out = []
        while i is not None:
            out.append(i)
            i = self.nodes[i].parent
        return out[::-1]


@dataclass
class PlanResult:
    tree: Tree
    best_path: list[int] | None
    best_cost: float | None
    metrics: dict = field(default_factory=dict)


@dataclass
class Candidate:
    """A steered segment from one near node, priced under the active allocation."""

    parent: TreeNode
    steer: object
    ledger: RiskLedger
    feasible: np.ndarray  # (T_s + 1,), index k: prefix of k steps admissible
    residual: np.ndarray  # (T_s + 1,)
    J: np.ndarray  # (T_s + 1,), cost-to-come at each prefix end


@dataclass
class Priced:
    """Stacked pricing of B steered segments; step axis is 0..T_s where relevant."""

    means: np.ndarray  # (B, T_s + 1, n)
    covs: np.ndarray  # (B, T_s + 1, n, n)
    delta: np.ndarray  # (B, N, T_s)
    kappa: np.ndarray  # (B, n_e, T_s)
    cumulative: np.ndarray  # (B, T_s)
    feasible: np.ndarray  # (B, T_s + 1)
    residual: np.ndarray  # (B, T_s + 1)
    J: np.ndarray  # (B, T_s + 1)


def score(J: float, residual: float, params: PlannerParams) -> float:
    return params.theta_J / max(J, J_FLOOR) + params.theta_res * residual


def nearest_m_nodes(tree: Tree, x_s, M: int, P0) -> list[int]:
    """Ids of the M nodes with the lowest LQR cost-to-go to ``x_s``; ties go to the lower id."""
    e = tree.means - np.asarray(x_s, dtype=float)
    cost = np.einsum("ki,ij,kj->k", e, P0, e)
    return np.argsort(cost, kind="stable")[:M].tolist()


class Planner:
    """Owns a tree and grows it one sampling iteration at a time."""

    def __init__(self, env: Environment, sys: StochasticLinearSystem, params: PlannerParams):
        if env.X.dim != sys.n:
            raise ConfigurationError(f"environment is {env.X.dim}-dimensional, system state is {sys.n}")
        self.env, self.sys, self.params = env, sys, params
        self.budget = params.budget
        self.Delta_k = np.array([self.budget.Delta_k(k) for k in range(1, params.T_steer + 1)])
        self.ric = solve_riccati(sys, params.Q, params.R, params.T_steer)
        self.delta_uni = self.kappa_uni = 0.0
        if params.allocation == "ura":
            # workspace faces share the uniform split only when they are charged at all
            cells = env.N + (env.n_e if env.env_probabilistic else 0)
            if cells:
                share = uniform_risk_allocation(params.Delta, params.T, cells)
                self.delta_uni = share if env.N else 0.0
                self.kappa_uni = share if env.env_probabilistic else 0.0
        self.tree = Tree(TreeNode(0, None, sys.initial_state()))
        self.metrics = dict(iterations=0, candidates=0, infeasible_candidates=0, empty_iterations=0, residual_issued=0.0)
        self.best_goal: int | None = None

    def price(self, means0, covs0, k0, res0, J0, targets) -> Priced:
        """Steer and price a batch of segments.

        Row b starts from a node with moments ``(means0[b], covs0[b])`` at time
        ``k0[b]``, residual ``res0[b]`` and cost-to-come ``J0[b]``, and heads
        for ``targets[b]``.
        """
        env, p, ric = self.env, self.params, self.ric
        T_s = p.T_steer
        k0, res0, J0 = (np.asarray(v) for v in (k0, res0, J0))
        means, covs = steer_paths(ric, means0, covs0, targets)
        ks = k0[:, None] + np.arange(1, T_s + 1)
        steps_m, steps_c = means[:, 1:], covs[:, 1:]

        # quadratic objective truncated at every k, and the applied mean inputs
        e = means - targets[:, None]
        u = np.einsum("kij,bkj->bki", ric.gains, e[:, :-1])
        eQe = ((e @ ric.Q) * e).sum(axis=-1)
        stage = eQe[:, :-1] + ((u @ ric.R) * u).sum(axis=-1)
        running = np.zeros_like(eQe)
        np.cumsum(stage, axis=1, out=running[:, 1:])
        J = J0[:, None] + (running + eQe)

        # checks that carry no risk: horizon, plain workspace membership, inputs
        step_ok = ks <= p.T
        if not env.env_probabilistic:
            step_ok &= (steps_m @ env.X.A.T <= env.X.b).all(axis=-1)
        if env.U is not None:
            step_ok &= (u @ env.U.A.T <= env.U.b).all(axis=-1)

        B = len(means)
        feasible = np.zeros((B, T_s + 1), dtype=bool)
        residual = np.zeros((B, T_s + 1))
        if p.allocation == "era":
            delta, kappa = era_cells(steps_m, steps_c, env, ks)
            cumulative = cumulative_risk(delta, kappa)
            prefix_ok = np.logical_and.accumulate(step_ok, axis=1)
            allowed = self.Delta_k[None, :] + res0[:, None]
            ok = prefix_ok & (cumulative <= allowed)
            feasible[:, 1:] = ok
            residual[:, 1:] = np.where(ok, allowed - cumulative, 0.0)
        else:
            step_ok &= uniform_cells_ok(steps_m, steps_c, env, ks, self.delta_uni, self.kappa_uni)
            delta = np.full((B, env.N, T_s), self.delta_uni)
            kappa = np.full((B, env.n_e, T_s), self.kappa_uni)
            cumulative = cumulative_risk(delta, kappa)
            feasible[:, 1:] = np.logical_and.accumulate(step_ok, axis=1)
        return Priced(means, covs, delta, kappa, cumulative, feasible, residual, J)

    def evaluate_many(self, parents, target) -> list[Candidate]:
        """Candidates steering each of ``parents`` toward one ``target``."""
        target = np.asarray(target, dtype=float)
        if target.shape != (self.sys.n,):
            raise ConfigurationError(f"target must have length {self.sys.n}")
        pr = self.price(
            np.array([nd.state.mean for nd in parents]),
            np.array([nd.state.cov for nd in parents]),
            [nd.k_abs for nd in parents],
            [nd.residual for nd in parents],
            [nd.J for nd in parents],
            np.broadcast_to(target, (len(parents), self.sys.n)),
        )
        ric, T_s = self.ric, self.params.T_steer
        ff = -(ric.gains @ target)
        out = []
        for b, parent in enumerate(parents):
            steer = SteeringResult(ric.gains, ff, pr.means[b], pr.covs[b], float(pr.J[b, T_s] - parent.J), target)
            ledger = RiskLedger(pr.delta[b], pr.kappa[b], pr.cumulative[b], parent.k_abs + 1)
            out.append(Candidate(parent, steer, ledger, pr.feasible[b], pr.residual[b], pr.J[b]))
        return out

    def evaluate(self, parent: TreeNode, target) -> Candidate:
        return self.evaluate_many([parent], target)[0]

    def _make_node(self, cand: Candidate, k: int) -> TreeNode:
        steer = cand.steer
        node = TreeNode(
            id=len(self.tree),
            parent=cand.parent.id,
            state=MomentState(steer.mean_path[k], steer.cov_path[k], cand.parent.k_abs + k),
            J=float(cand.J[k]),
            residual=float(cand.residual[k]),
            steps=k,
            target=steer.target,
            ledger=cand.ledger.prefix(k),
            edge_mean=steer.mean_path[: k + 1],
            edge_cov=steer.cov_path[: k + 1],
        )
        self.tree.add(node)
        self.metrics["residual_issued"] += node.residual
        if self.env.in_goal(node.state.mean):
            if self.best_goal is None or node.J < self.tree[self.best_goal].J:
                self.best_goal = node.id
        return node

    def expand(self, rng: np.random.Generator) -> dict:
        """One sampling iteration; returns a small report of what happened."""
        p, T_s = self.params, self.params.T_steer
        x_s = sample_free(self.env, 0, rng, p.max_sample_attempts)
        near = nearest_m_nodes(self.tree, x_s, p.M, self.ric.P[0])
        cands = self.evaluate_many([self.tree[i] for i in near], x_s)
        self.metrics["iterations"] += 1
        self.metrics["candidates"] += len(cands)

        full = [c for c in cands if c.feasible[T_s]]
        self.metrics["infeasible_candidates"] += len(cands) - len(full)
        added = []
        chosen = None
        if full:
            chosen = max(full, key=lambda c: score(c.J[T_s], c.residual[T_s], p))
            added.append(self._make_node(chosen, T_s).id)
        else:
            best_key = None
            for c in cands:
                ks = np.flatnonzero(c.feasible[1:T_s]) + 1
                if not ks.size:
                    continue
                k = int(ks[-1])
                key = (k, score(c.J[k], c.residual[k], p))
                if best_key is None or key > best_key:
                    best_key, chosen = key, c
        if chosen is not None:
            for k in range(1, T_s):
                if chosen.feasible[k]:
                    added.append(self._make_node(chosen, k).id)
        if not added:
            self.metrics["empty_iterations"] += 1
        return dict(sample=x_s, near=near, full_feasible=len(full), added=added,
                    parent=None if chosen is None else chosen.parent.id)

    def result(self) -> PlanResult:
        best = self.best_goal
        m = dict(self.metrics, nodes=len(self.tree))
        return PlanResult(
            tree=self.tree,
            best_path=None if best is None else self.tree.path_to(best),
            best_cost=None if best is None else self.tree[best].J,
            metrics=m,
        )


def sampling_rng(seed: int) -> np.random.Generator:
    """Sampling stream for a run.

    The seed spawns two child streams; the first drives sampling and the
    second is reserved, so nothing else can perturb the sample sequence.
    """
    sampling, _reserved = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(sampling)


def expand(tree: Tree, env: Environment, sys: StochasticLinearSystem, params: PlannerParams, rng) -> dict:
    """Grow an existing tree by one iteration (stateless convenience wrapper)."""
    planner = Planner(env, sys, params)
    planner.tree = tree
    return planner.expand(rng)


def plan(env: Environment, sys: StochasticLinearSystem, params: PlannerParams, seed: int = 0) -> PlanResult:
    planner = Planner(env, sys, params)
    rng = sampling_rng(seed)
    for _ in range(params.samples):
        planner.expand(rng)
        if params.early_stop and planner.best_goal is not None:
            break
    log.debug("plan seed=%s allocation=%s nodes=%d", seed, params.allocation, len(planner.tree))
    return planner.result()


@dataclass
class AuditResult:
    ok: bool
    message: str = "ok"

    def __bool__(self):
        return self.ok


def _mismatch(got, exp) -> np.ndarray:
    """Elementwise: not equal up to 1e-12 relative (infinities must match exactly)."""
    with np.errstate(invalid="ignore"):
        return ~((got == exp) | (np.abs(got - exp) <= 1e-12 * np.abs(exp)))


CHECKS = (
    ("k_abs", "time index does not match parent time plus steps"),
    ("moments", "moments do not match re-propagation"),
    ("edge", "stored edge trajectory does not match re-propagation"),
    ("ledger", "risk ledger does not match recomputation"),
    ("admission", "segment fails admission on recomputation"),
    ("residual", "residual does not match the budget update"),
    ("cost", "cost-to-come does not match recomputation"),
)


def _structure(tree: Tree, n: int, N: int, n_e: int, T_s: int):
    """Index nodes by steered segment; stops at the first malformed node.

    Returns ``(count, pairs, seg, fault)``: nodes ``1..count`` are well formed,
    ``pairs`` lists the distinct (parent, target) segments, ``seg[i]`` is the
    segment of node ``i + 1`` and ``fault`` describes node ``count + 1`` if any.
    """
    pairs, seg, index = [], [], {}
    for node in tree.nodes[1:]:
        where = f"node {node.id}"
        fault = None
        if node.parent is None or not 0 <= node.parent < node.id:
            fault = f"{where}: parent {node.parent} must precede it"
        elif not 1 <= node.steps <= T_s:
            fault = f"{where}: bad step count {node.steps}"
        elif node.target is None or np.shape(node.target) != (n,):
            fault = f"{where}: missing or malformed steering target"
        elif node.state.mean.shape != (n,) or node.state.cov.shape != (n, n):
            fault = f"{where}: moments have the wrong shape"
        elif node.ledger is None or node.ledger.delta.shape != (N, node.steps) \
                or node.ledger.kappa.shape != (n_e, node.steps) or node.ledger.cumulative.shape != (node.steps,):
            fault = f"{where}: risk ledger has the wrong shape"
        elif node.edge_mean is not None and (
                np.shape(node.edge_mean) != (node.steps + 1, n) or np.shape(node.edge_cov) != (node.steps + 1, n, n)):
            fault = f"{where}: stored edge has the wrong shape"
        if fault:
            return len(seg), pairs, seg, fault
        key = (node.parent, np.asarray(node.target, dtype=float).tobytes())
        if key not in index:
            index[key] = len(pairs)
            pairs.append((node.parent, node.target))
        seg.append(index[key])
    return len(seg), pairs, seg, None


def audit_tree(tree: Tree, env: Environment, sys: StochasticLinearSystem, params: PlannerParams) -> AuditResult:
    """Re-derive every node from its parent and check its admission.

    Steering, moment propagation, risk ledger, budget test, residual and
    cost-to-come are recomputed from the stored parent state and steering
    target and compared with what the node records.  The first offending
    node is reported.
    """
    if not len(tree):
        return AuditResult(False, "empty tree")
    planner = Planner(env, sys, params)
    n, N, n_e, T_s = sys.n, env.N, env.n_e, params.T_steer
    root = tree[0]
    x0 = sys.initial_state()
    if root.parent is not None or root.J != 0.0 or root.residual != 0.0 or root.k_abs != 0:
        return AuditResult(False, "root must have no parent, J=0, residual=0, k=0")
    if root.state.mean.shape != (n,) or root.state.cov.shape != (n, n) \
            or _mismatch(root.state.mean, x0.mean).any() or _mismatch(root.state.cov, x0.cov).any():
        return AuditResult(False, "root state differs from the initial moments")

    count, pairs, seg, fault = _structure(tree, n, N, n_e, T_s)
    bad = {}
    if count:
        nodes = tree.nodes[1 : count + 1]
        seg = np.array(seg)
        steps = np.array([nd.steps for nd in nodes])
        parent_of = np.array([nd.parent for nd in nodes])
        k_abs = np.array([nd.k_abs for nd in tree.nodes[: count + 1]])
        src = [tree[i] for i, _ in pairs]
        pr = planner.price(
            np.array([nd.state.mean for nd in src]), np.array([nd.state.cov for nd in src]),
            [nd.k_abs for nd in src], [nd.residual for nd in src], [nd.J for nd in src],
            np.array([t for _, t in pairs], dtype=float),
        )
        rows = np.arange(count)
        bad["k_abs"] = k_abs[1:] != k_abs[parent_of] + steps
        bad["moments"] = (
            _mismatch(np.array([nd.state.mean for nd in nodes]), pr.means[seg, steps]).any(axis=1)
            | _mismatch(np.array([nd.state.cov for nd in nodes]), pr.covs[seg, steps]).any(axis=(1, 2))
        )

        # ragged per-node arrays go into step-padded buffers; padding compares equal
        col = np.arange(T_s + 1)
        live = col[None, :] <= steps[:, None]  # edge rows 0..steps
        em, ec = pr.means[seg].copy(), pr.covs[seg].copy()
        gd, gk, gc = pr.delta[seg].copy(), pr.kappa[seg].copy(), pr.cumulative[seg].copy()
        em[~live], ec[~live] = 0.0, 0.0
        cells = live[:, 1:]
        gd[np.broadcast_to(~cells[:, None, :], gd.shape)] = 0.0
        gk[np.broadcast_to(~cells[:, None, :], gk.shape)] = 0.0
        gc[~cells] = 0.0
        xd, xk, xc = np.zeros_like(gd), np.zeros_like(gk), np.zeros_like(gc)
        xm, xv = em.copy(), ec.copy()
        for r, nd in enumerate(nodes):
            k = nd.steps
            led = nd.ledger
            xd[r, :, :k], xk[r, :, :k], xc[r, :k] = led.delta, led.kappa, led.cumulative
            if nd.edge_mean is not None:
                xm[r, : k + 1], xv[r, : k + 1] = nd.edge_mean, nd.edge_cov
        bad["edge"] = _mismatch(xm, em).any(axis=(1, 2)) | _mismatch(xv, ec).any(axis=(1, 2, 3))
        bad["ledger"] = (
            _mismatch(xd, gd).any(axis=(1, 2)) | _mismatch(xk, gk).any(axis=(1, 2)) | _mismatch(xc, gc).any(axis=1)
        )
        bad["admission"] = ~pr.feasible[seg, steps]
        res = np.array([nd.residual for nd in nodes])
        bad["residual"] = (res < 0) | _mismatch(res, pr.residual[seg, steps])
        bad["cost"] = _mismatch(np.array([nd.J for nd in nodes]), pr.J[seg, steps])
        first = None
        for name, _ in CHECKS:
            hit = np.flatnonzero(bad[name])
            if hit.size and (first is None or hit[0] < first[0]):
                first = (int(hit[0]), name)
        if first is not None:
            r, name = first
            return AuditResult(False, f"node {rows[r] + 1}: {dict(CHECKS)[name]}")
    if fault:
        return AuditResult(False, fault)
    return AuditResult(True)
