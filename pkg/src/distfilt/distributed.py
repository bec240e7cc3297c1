"""Distributed gain synthesis by the method of multipliers.

Each node holds its own copies of the certificate matrices plus a local
performance weight.  One iteration is: (1) fusion, averaging every shared
quantity over its holders (exactly, or through an average-consensus
protocol that only talks across graph edges); (2) a parallel local
minimization of the augmented Lagrangian over each node's feasible set;
(3) a dual ascent step on the agreement multipliers.  The disagreement of
the copies is tracked per iteration and the filter gains are read off the
final local variables.

Node subproblems run concurrently in a thread pool; each solve touches
only node-local state plus the immutable fusion values, so scheduling
cannot change any result.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProblem, QuadraticObjective, SolveOptions, check_feasible, solve
from .lmis import (
    SynthesisParams,
    build_decoupled,
    copy_set,
    extract_gains,
    node_layout,
    theorem1_bounds,
)
from .matrices import symmetrize
from .model import derive

__all__ = [
    "SynthesisError",
    "InitializationError",
    "DivergenceError",
    "LocalVars",
    "Multipliers",
    "FusionState",
    "NodeMessage",
    "MessageLog",
    "ConsensusProtocol",
    "RunOptions",
    "IterationTrace",
    "RunResult",
    "consensus_average",
    "fusion_step",
    "dual_step",
    "run",
]


class SynthesisError(RuntimeError):
    """Raised when the distributed synthesis cannot proceed."""


class InitializationError(SynthesisError):
    """A node could not find a feasible starting point."""


class DivergenceError(SynthesisError):
    """The disagreement measure grew persistently."""


@dataclass
class LocalVars:
    """Node-local decision tuple: gain seed, performance weight, copies."""

    F: np.ndarray
    beta: float
    X: dict


@dataclass
class Multipliers:
    """Agreement multipliers: scalar for the weight, one matrix per copy."""

    lam: float
    Lam: dict


@dataclass
class FusionState:
    """Averaged consensus targets (``beta_tilde`` is None in fixed mode)."""

    beta_tilde: float | None
    X_tilde: dict


@dataclass(frozen=True)
class NodeMessage:
    sender: int
    receiver: int
    iteration: int
    tag: str
    size_bytes: int


class MessageLog:
    """Record of every value exchanged between nodes."""

    def __init__(self):
        self.messages = []

    def send(self, sender, receiver, iteration, tag, payload):
        size = int(np.asarray(payload).size) * 8
        self.messages.append(NodeMessage(sender, receiver, iteration, tag, size))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,sender,receiver,bytes\n")
            for m in self.messages:
                fh.write(f"{m.iteration},{m.sender},{m.receiver},{m.size_bytes}\n")


@dataclass(frozen=True)
class ConsensusProtocol:
    """``exact`` computes true means in one shot (stand-in for a finite-time
    protocol); ``linear`` iterates neighbor averaging for ``rounds`` steps
    with weight ``weight`` and reports the residual deviation."""

    kind: str = "exact"
    rounds: int = 200
    weight: float = 0.4

    @staticmethod
    def parse(text):
        parts = text.split()
        if parts[0] == "exact":
            return ConsensusProtocol("exact")
        if parts[0] == "linear":
            rounds = int(parts[1]) if len(parts) > 1 else 200
            weight = float(parts[2]) if len(parts) > 2 else 0.4
            return ConsensusProtocol("linear", rounds, weight)
        raise ValueError(f"unknown consensus protocol {text!r}")

    def describe(self):
        if self.kind == "exact":
            return "exact"
        return f"linear {self.rounds} {self.weight:g}"


def consensus_average(values, graph, protocol, log=None, iteration=0, tag="consensus"):
    """Average the per-node ``values`` over the network.

    Returns ``(per_node_results, max_deviation)`` where each entry is the
    node's estimate of the network-wide mean.  Exact mode returns the true
    mean everywhere; linear mode runs the neighbor-averaging iteration
    ``x_k <- x_k + w * sum_{j -> k} (x_j - x_k)`` and requires a balanced,
    strongly connected graph (otherwise the iteration does not preserve
    the mean).
    """
    stack = np.stack([np.asarray(v, dtype=float) for v in values])
    mean = stack.mean(axis=0)
    if protocol.kind == "exact":
        return [mean.copy() for _ in values], 0.0
    if protocol.kind != "linear":
        raise ValueError(f"unknown consensus protocol {protocol.kind!r}")
    if not graph.is_balanced():
        raise SynthesisError("linear consensus requires a balanced graph")
    if not graph.is_strongly_connected():
        raise SynthesisError("linear consensus requires a strongly connected graph")
    max_p = max(graph.in_degree(k) for k in range(1, graph.n_nodes + 1))
    if max_p and protocol.weight >= 1.0 / max_p:
        raise SynthesisError(
            f"consensus weight {protocol.weight} too large for max in-degree {max_p}"
        )
    x = stack.copy()
    sources = {k: sorted(graph.in_neighbors(k)) for k in range(1, graph.n_nodes + 1)}
    for _ in range(protocol.rounds):
        incoming = []
        for k in range(1, graph.n_nodes + 1):
            total = np.zeros_like(mean)
            for j in sources[k]:
                if log is not None:
                    log.send(j, k, iteration, tag, x[j - 1])
                total = total + (x[j - 1] - x[k - 1])
            incoming.append(total)
        x = x + protocol.weight * np.stack(incoming)
    max_dev = float(np.max(np.abs(x - mean))) if x.size else 0.0
    return [x[k].copy() for k in range(graph.n_nodes)], max_dev


def holder_set(j, graph, mode):
    """Nodes that carry a copy of node ``j``'s certificate matrix."""
    if mode == "full":
        return tuple(range(1, graph.n_nodes + 1))
    return tuple(sorted(graph.out_neighbors(j) | {j}))


def fusion_step(locals_, mults, c, graph, mode="full", rule="exact-minimizer"):
    """Exact fusion update: the minimizer of the augmented Lagrangian over
    the consensus targets.

    Every shared matrix is averaged over its holder set (``rule`` =
    ``"paper-step1"`` instead reproduces the published update, which sums
    over the out-neighborhood only and normalizes by the out-degree).
    ``beta_tilde`` is None when the runs pins the performance weight.
    """
    n_nodes = graph.n_nodes
    any_beta = locals_[1].beta is not None and mults[1].lam is not None
    beta_tilde = None
    if any_beta:
        beta_tilde = sum(locals_[k].beta for k in locals_) / n_nodes
        beta_tilde -= sum(mults[k].lam for k in mults) / (n_nodes * c)
    x_tilde = {}
    for j in range(1, n_nodes + 1):
        if rule == "paper-step1":
            holders = sorted(graph.out_neighbors(j))
            norm = max(graph.out_degree(j), 1)
        elif rule == "exact-minimizer":
            holders = [k for k in holder_set(j, graph, mode)]
            norm = len(holders)
        else:
            raise ValueError(f"unknown fusion rule {rule!r}")
        acc = np.zeros_like(locals_[j].X[j])
        for k in holders:
            acc = acc + locals_[k].X[j] - mults[k].Lam[j] / c
        x_tilde[j] = acc / norm
    return FusionState(beta_tilde=beta_tilde, X_tilde=x_tilde)


def dual_step(mult, fusion, local, c):
    """Dual ascent on the agreement multipliers of one node."""
    lam = mult.lam
    if fusion.beta_tilde is not None and lam is not None:
        lam = lam + c * (fusion.beta_tilde - local.beta)
    new_lam = {}
    for j, Lam_j in mult.Lam.items():
        new_lam[j] = Lam_j + c * (fusion.X_tilde[j] - local.X[j])
    return Multipliers(lam=lam, Lam=new_lam)


@dataclass
class RunOptions:
    """Knobs of the distributed iteration."""

    c: float = 1.0
    max_iter: int = 200
    tol: float = 1e-2
    mode: str = "full"
    fixed_beta: float | None = None
    beta0: float = 100.0
    consensus: ConsensusProtocol = field(default_factory=ConsensusProtocol)
    fusion_rule: str = "exact-minimizer"
    workers: int | None = None
    log_messages: bool = False
    solver: SolveOptions = field(
        default_factory=lambda: SolveOptions(
            feas_tol=2e-5,
            tighten=3e-5,
            eps_abs=1e-7,
            eps_rel=1e-7,
            sigma=8.0,
            relax=1.6,
        )
    )
    init_solver: SolveOptions = field(
        default_factory=lambda: SolveOptions(
            feas_tol=2e-5, tighten=3e-5, max_iter=30000, sigma=8.0, relax=1.6
        )
    )


@dataclass
class IterationTrace:
    """Per-iteration history of the distributed run."""

    error: list = field(default_factory=list)
    beta_ave: list = field(default_factory=list)
    max_violation: list = field(default_factory=list)
    node_violation: list = field(default_factory=list)
    bounds_ok: list = field(default_factory=list)
    consensus_dev: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)

    def __len__(self):
        return len(self.error)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,error,beta_ave,max_feas_violation,wall_ms\n")
            for i in range(len(self.error)):
                fh.write(
                    f"{i + 1},{self.error[i]:.17g},{self.beta_ave[i]:.17g},"
                    f"{self.max_violation[i]:.17g},{self.wall_ms[i]:.3f}\n"
                )


@dataclass
class RunResult:
    trace: IterationTrace
    locals: dict
    multipliers: dict
    gains: object
    converged: bool
    iterations: int
    message_log: MessageLog | None


class _NodeWorker:
    """Per-node state: fixed constraint blocks, mutable objective, warm
    solver state carried across outer iterations."""

    def __init__(self, k, derived_all, graph, params, opts, n):
        self.k = k
        self.derived_all = derived_all
        self.graph = graph
        self.params = params
        self.opts = opts
        self.n = n
        self.copies = copy_set(k, graph, opts.mode)
        self.variable_beta = opts.fixed_beta is None
        self.layout = node_layout(
            k, graph, n, mode=opts.mode, with_beta=self.variable_beta
        )
        self.blocks = build_decoupled(
            k,
            self.layout,
            derived_all,
            graph,
            params,
            mode=opts.mode,
            fixed_beta=opts.fixed_beta,
        )
        lower = np.full(self.layout.nvars, -np.inf)
        if self.variable_beta:
            lower[self.layout.slice_of("beta")] = 0.0
        self.prob = ConicProblem(
            nvars=self.layout.nvars,
            P=None,
            q=np.zeros(self.layout.nvars),
            blocks=self.blocks,
            lower=lower if self.variable_beta else None,
        )
        self.warm = None

    def _to_local(self, values, beta):
        xs = {j: symmetrize(values[f"X{j}"]) for j in self.copies}
        return LocalVars(F=values["F"], beta=beta, X=xs)

    def init_feasible(self):
        """Find a strictly feasible start with the performance weight pinned
        at its initial value; multipliers start at one / identity."""
        beta0 = self.opts.fixed_beta if self.opts.fixed_beta is not None else self.opts.beta0
        if self.variable_beta:
            # pin the weight by folding it into the constraint constants
            layout = node_layout(self.k, self.graph, self.n, mode=self.opts.mode, with_beta=False)
            blocks = build_decoupled(
                self.k,
                layout,
                self.derived_all,
                self.graph,
                self.params,
                mode=self.opts.mode,
                fixed_beta=beta0,
            )
            prob = ConicProblem(
                nvars=layout.nvars, P=None, q=np.zeros(layout.nvars), blocks=blocks
            )
        else:
            # the run problem already has the weight pinned and no objective
            layout, prob = self.layout, self.prob
        sol = solve(prob, self.opts.init_solver, warm=None)
        if sol.status != "optimal":
            raise InitializationError(
                f"initial performance weight {beta0:g} is outside the feasible "
                f"range: node {self.k} local conditions could not be satisfied "
                f"(solver status {sol.status}, violation {sol.worst_violation:.3e})"
            )
        if not self.variable_beta:
            self.warm = sol.state
        values = layout.unpack(sol.x)
        beta = beta0 if self.variable_beta else None
        local = self._to_local(values, beta)
        mult = Multipliers(
            lam=1.0 if self.variable_beta else None,
            Lam={j: np.eye(self.n) for j in self.copies},
        )
        return local, mult

    def local_step(self, local, mult, fusion):
        """Minimize the node's augmented-Lagrangian term over its feasible
        set, warm-starting from the previous iterate's solver state."""
        c = self.opts.c
        obj = QuadraticObjective(self.layout)
        if self.variable_beta:
            obj.add_linear("beta", -1.0 - mult.lam)
            obj.add_square("beta", fusion.beta_tilde, weight=c)
        for j in self.copies:
            obj.add_inner(f"X{j}", mult.Lam[j], coeff=-1.0)
            obj.add_square(f"X{j}", fusion.X_tilde[j], weight=c)
        P, q, c0 = obj.build()
        self.prob.P = P
        self.prob.q = q
        self.prob.c0 = c0
        sol = solve(self.prob, self.opts.solver, warm=self.warm)
        self.warm = sol.state
        values = self.layout.unpack(sol.x)
        beta = values["beta"] if self.variable_beta else None
        return self._to_local(values, beta), sol

    def violation(self, local):
        x = self.layout.pack(self._values_dict(local))
        _, worst = check_feasible(x, self.prob, tol=self.opts.solver.feas_tol)
        return worst

    def _values_dict(self, local):
        values = {"F": local.F}
        if self.variable_beta:
            values["beta"] = local.beta
        values.update({f"X{j}": local.X[j] for j in self.copies})
        return values


def _fusion_contribution(local, mult, c, copies, variable_beta):
    parts = [np.ravel(local.X[j] - mult.Lam[j] / c) for j in copies]
    if variable_beta:
        parts.append(np.array([local.beta - mult.lam / c]))
    return np.concatenate(parts)


def _fusion_from_vector(vec, n, copies, variable_beta):
    x_tilde = {}
    off = 0
    for j in copies:
        x_tilde[j] = symmetrize(vec[off : off + n * n].reshape(n, n))
        off += n * n
    beta_tilde = float(vec[off]) if variable_beta else None
    return FusionState(beta_tilde=beta_tilde, X_tilde=x_tilde)


def _neighborhood_fusion_linear(locals_, mults, c, graph, log, iteration, variable_beta, protocol):
    """Remark-style two-hop exchange for neighborhood mode: holders send
    their copies to the owner, the owner averages and sends the target
    back.  Needs the reverse edges, hence effectively undirected graphs."""
    n_nodes = graph.n_nodes
    x_tilde = {}
    for j in range(1, n_nodes + 1):
        holders = sorted(graph.out_neighbors(j) | {j})
        for k in holders:
            if k != j:
                if (k, j) not in graph.edges:
                    raise SynthesisError(
                        "neighborhood fusion over messages needs edge "
                        f"{k}->{j}; use full mode on directed graphs"
                    )
                if log is not None:
                    log.send(k, j, iteration, "fusion-up", locals_[k].X[j])
        acc = sum(locals_[k].X[j] - mults[k].Lam[j] / c for k in holders)
        x_tilde[j] = acc / len(holders)
        for k in holders:
            if k != j and log is not None:
                log.send(j, k, iteration, "fusion-down", x_tilde[j])
    beta_views = [None] * n_nodes
    if variable_beta:
        contributions = [
            np.array([locals_[k].beta - mults[k].lam / c]) for k in range(1, n_nodes + 1)
        ]
        views, _ = consensus_average(
            contributions, graph, protocol, log=log, iteration=iteration, tag="beta"
        )
        beta_views = [float(v[0]) for v in views]
    return [
        FusionState(beta_tilde=beta_views[k - 1], X_tilde=dict(x_tilde))
        for k in range(1, n_nodes + 1)
    ], 0.0


def run(plant, nodes, graph, params=None, opts=None):
    """Execute the distributed synthesis loop.

    Returns a :class:`RunResult` with the per-iteration trace, the final
    local variables and multipliers, and the gains extracted from each
    node's own certificate copy.
    """
    params = params or SynthesisParams()
    opts = opts or RunOptions()
    n_nodes = graph.n_nodes
    derived_list = [derive(plant, node, graph) for node in nodes]
    derived_all = {d.index: d for d in derived_list}
    n = plant.n

    workers = {
        k: _NodeWorker(k, derived_all, graph, params, opts, n)
        for k in range(1, n_nodes + 1)
    }

    log = MessageLog() if opts.log_messages else None
    pool_size = opts.workers or min(n_nodes, 8)
    variable_beta = opts.fixed_beta is None

    locals_ = {}
    mults = {}
    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        for k, (local, mult) in zip(
            workers, pool.map(lambda w: w.init_feasible(), workers.values())
        ):
            locals_[k], mults[k] = local, mult

        trace = IterationTrace()
        converged = False
        grow_streak = 0
        for it in range(1, opts.max_iter + 1):
            t_start = time.perf_counter()

            # 1) fusion
            max_dev = 0.0
            if opts.consensus.kind == "exact":
                fused = fusion_step(
                    locals_, mults, opts.c, graph, opts.mode, opts.fusion_rule
                )
                fusion_views = [fused] * n_nodes
            elif opts.mode == "full":
                copies_all = tuple(range(1, n_nodes + 1))
                contributions = [
                    _fusion_contribution(
                        locals_[k], mults[k], opts.c, copies_all, variable_beta
                    )
                    for k in range(1, n_nodes + 1)
                ]
                views, max_dev = consensus_average(
                    contributions, graph, opts.consensus, log=log, iteration=it, tag="fusion"
                )
                fusion_views = [
                    _fusion_from_vector(v, n, copies_all, variable_beta) for v in views
                ]
            else:
                fusion_views, max_dev = _neighborhood_fusion_linear(
                    locals_, mults, opts.c, graph, log, it, variable_beta, opts.consensus
                )

            # 2) parallel local minimizations
            def step(k):
                return workers[k].local_step(
                    locals_[k], mults[k], fusion_views[k - 1]
                )

            results = list(pool.map(step, range(1, n_nodes + 1)))
            for k, (local, sol) in zip(range(1, n_nodes + 1), results):
                locals_[k] = local

            # 3) dual updates
            for k in range(1, n_nodes + 1):
                mults[k] = dual_step(mults[k], fusion_views[k - 1], locals_[k], opts.c)

            # bookkeeping: disagreement, feasibility, gain bounds
            error = 0.0
            for j in range(1, n_nodes + 1):
                holders = holder_set(j, graph, opts.mode)
                ave = sum(locals_[k].X[j] for k in holders) / len(holders)
                error += sum(
                    float(np.linalg.norm(locals_[k].X[j] - ave) ** 2) for k in holders
                )
            if variable_beta:
                beta_ave = sum(locals_[k].beta for k in locals_) / n_nodes
                error += sum((locals_[k].beta - beta_ave) ** 2 for k in locals_)
            else:
                beta_ave = opts.fixed_beta
            node_viol = [workers[k].violation(locals_[k]) for k in range(1, n_nodes + 1)]
            bounds_ok = all(
                theorem1_bounds(locals_[k].X[k], locals_[k].F, params.rho)[0]
                for k in range(1, n_nodes + 1)
            )
            trace.error.append(error)
            trace.beta_ave.append(float(beta_ave))
            trace.max_violation.append(max(node_viol))
            trace.node_violation.append(node_viol)
            trace.bounds_ok.append(bounds_ok)
            trace.consensus_dev.append(max_dev)
            trace.wall_ms.append((time.perf_counter() - t_start) * 1e3)

            if len(trace.error) > 1 and trace.error[-1] > 10.0 * trace.error[-2]:
                grow_streak += 1
                if grow_streak >= 20:
                    raise DivergenceError(
                        f"disagreement grew tenfold for {grow_streak} consecutive "
                        f"iterations (iteration {it}, error {error:.3e})"
                    )
            else:
                grow_streak = 0
            if error < opts.tol:
                converged = True
                break

    gains = extract_gains(
        [locals_[k].X[k] for k in range(1, n_nodes + 1)],
        [locals_[k].F for k in range(1, n_nodes + 1)],
        plant,
        nodes,
        derived_list,
    )
    return RunResult(
        trace=trace,
        locals=locals_,
        multipliers=mults,
        gains=gains,
        converged=converged,
        iterations=len(trace),
        message_log=log,
    )
