"""Assembly of the estimator-synthesis matrix inequalities.

Three coupled conditions per node decide the gains: a stability block (the
node's shifted dynamics plus the disturbance channel), a couplings block
(tying the node's consensus gain to its in-neighbors' certificate
matrices), and a gain-bound block that keeps the consensus gain inside a
trust region of radius ``rho``.  The centralized builder phrases them in
the shared global variables; the decoupled builder phrases the same
structures in one node's local copies with a feasibility margin ``delta``
so the conditions stay non-strict but uniformly inside the strict set.

Both builders route through the same block arithmetic, differing only in
where the variable values come from, so synchronizing the local copies
with the global variables reproduces the centralized blocks exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import (
    QuadraticObjective,
    SolveOptions,
    VarLayout,
    blocks_from_maps,
    canonicalize,
    solve,
)
from .matrices import sym_eigen, symmetrize
from .model import derive

__all__ = [
    "SynthesisParams",
    "Gains",
    "InfeasibleError",
    "CentralResult",
    "copy_set",
    "node_layout",
    "centralized_layout",
    "build_decoupled",
    "build_centralized",
    "centralized_problem",
    "centralized_block_labels",
    "synthesize_central",
    "extract_gains",
    "theorem1_bounds",
]


class InfeasibleError(RuntimeError):
    """The synthesis conditions admit no solution at the requested
    performance weight."""


@dataclass(frozen=True)
class SynthesisParams:
    """Scalar knobs of the synthesis conditions.

    ``rho`` bounds the consensus gain, ``delta`` is the non-strictness
    margin of the decoupled conditions, ``delta_pd`` the floor that keeps
    certificate matrices positive definite.
    """

    rho: float = 1e4
    delta: float = 1e-4
    delta_pd: float = 1e-6


@dataclass
class Gains:
    """Synthesized filter gains plus the performance weighting matrix."""

    K: list
    L: list
    P: np.ndarray


def copy_set(k, graph, mode="full"):
    """Indices of the certificate copies node ``k`` carries.

    ``full`` mode keeps a copy of every node's matrix (needed for average
    consensus on directed balanced graphs); ``neighborhood`` mode keeps
    only the in-neighbors' and the node's own.
    """
    if mode == "full":
        return tuple(range(1, graph.n_nodes + 1))
    if mode == "neighborhood":
        return tuple(sorted(graph.in_neighbors(k) | {k}))
    raise ValueError(f"unknown copy-set mode {mode!r}")


def node_layout(k, graph, n, mode="full", with_beta=True):
    """Flat variable layout of node ``k``'s local tuple."""
    layout = VarLayout()
    layout.add_matrix("F", n, n)
    if with_beta:
        layout.add_scalar("beta")
    for j in copy_set(k, graph, mode):
        layout.add_symmetric(f"X{j}", n)
    return layout


def centralized_layout(n_nodes, n, with_beta=True):
    """Flat layout of the coupled problem over all nodes."""
    layout = VarLayout()
    if with_beta:
        layout.add_scalar("beta")
    for k in range(1, n_nodes + 1):
        layout.add_symmetric(f"X{k}", n)
    for k in range(1, n_nodes + 1):
        layout.add_matrix(f"F{k}", n, n)
    return layout


# ---------------------------------------------------------------------------
# block arithmetic (shared by both builders)


def _stability_mat(d, X, F, beta, delta):
    n = X.shape[0]
    m = X @ d.Atilde
    q_blk = (m + m.T) - d.obs_gram + (beta * (d.p + d.q) + 0.0) * np.eye(n)
    top_left = q_blk - d.p * (F + F.T) + delta * X
    top_right = X @ d.Btilde
    w = d.Btilde.shape[1]
    out = np.zeros((n + w, n + w))
    out[:n, :n] = top_left
    out[:n, n:] = top_right
    out[n:, :n] = top_right.T
    out[n:, n:] = -np.eye(w)
    return out


def _couplings_mat(d, neighbor_derived, X, X_neighbors, F, beta, delta):
    n = X.shape[0]
    p = len(neighbor_derived)
    dim = n * (p + 1)
    out = np.zeros((dim, dim))
    out[:n, :n] = -(2.0 * d.alpha / (d.q + 1.0)) * X + delta * np.eye(n)
    off = -beta * np.eye(n) + F
    for i, (dj, Xj) in enumerate(zip(neighbor_derived, X_neighbors), start=1):
        sl = slice(i * n, (i + 1) * n)
        out[:n, sl] = off
        out[sl, :n] = off.T
        out[sl, sl] = -(2.0 * dj.alpha / (dj.q + 1.0)) * Xj + delta * np.eye(n)
    return out


def _gain_bound_mat(X, F, rho):
    n = X.shape[0]
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n] = -rho * X
    out[:n, n:] = -F.T
    out[n:, :n] = -F
    out[n:, n:] = -X
    return out


def _node_maps(k, derived_all, graph, params, get_x, get_f, get_beta):
    """The three structural maps for node ``k`` with pluggable variable
    sources (local copies or global variables)."""
    d = derived_all[k]
    sources = sorted(graph.in_neighbors(k))
    neighbor_derived = [derived_all[j] for j in sources]

    def stability(v):
        return _stability_mat(d, get_x(v, k), get_f(v), get_beta(v), params.delta)

    def couplings(v):
        return _couplings_mat(
            d,
            neighbor_derived,
            get_x(v, k),
            [get_x(v, j) for j in sources],
            get_f(v),
            get_beta(v),
            params.delta,
        )

    def gain_bound(v):
        return _gain_bound_mat(get_x(v, k), get_f(v), params.rho)

    return [stability, couplings, gain_bound]


def _pd_floor_map(name, n, delta_pd):
    def floor(v):
        return delta_pd * np.eye(n) - v[name]

    return floor


def decoupled_maps(k, derived_all, graph, params, mode="full", fixed_beta=None):
    """Matrix evaluators of node ``k``'s local conditions, in the order
    stability, couplings, gain bound, then one PD floor per carried copy."""
    if fixed_beta is None:
        get_beta = lambda v: v["beta"]
    else:
        get_beta = lambda v: fixed_beta
    maps = _node_maps(
        k,
        derived_all,
        graph,
        params,
        get_x=lambda v, j: v[f"X{j}"],
        get_f=lambda v: v["F"],
        get_beta=get_beta,
    )
    n = derived_all[k].n
    for j in copy_set(k, graph, mode):
        maps.append(_pd_floor_map(f"X{j}", n, params.delta_pd))
    return maps


def build_decoupled(k, layout, derived_all, graph, params, mode="full", fixed_beta=None):
    """Affine blocks of node ``k``'s local feasible set over ``layout``."""
    return blocks_from_maps(
        decoupled_maps(k, derived_all, graph, params, mode, fixed_beta), layout
    )


def centralized_maps(k, derived_all, graph, params, fixed_beta=None):
    """Matrix evaluators of node ``k``'s conditions in global variables."""
    if fixed_beta is None:
        get_beta = lambda v: v["beta"]
    else:
        get_beta = lambda v: fixed_beta
    return _node_maps(
        k,
        derived_all,
        graph,
        params,
        get_x=lambda v, j: v[f"X{j}"],
        get_f=lambda v: v[f"F{k}"],
        get_beta=get_beta,
    )


def build_centralized(k, layout, derived_all, graph, params, fixed_beta=None):
    """Affine blocks of node ``k``'s coupled conditions over ``layout``."""
    return blocks_from_maps(
        centralized_maps(k, derived_all, graph, params, fixed_beta), layout
    )


def centralized_problem(derived_all, graph, params, fixed_beta=None):
    """The full coupled program: maximize the performance weight (or a pure
    feasibility problem when ``fixed_beta`` is given).

    Returns ``(layout, problem)``.
    """
    n = derived_all[1].n
    with_beta = fixed_beta is None
    layout = centralized_layout(graph.n_nodes, n, with_beta=with_beta)
    maps = []
    for k in range(1, graph.n_nodes + 1):
        maps.extend(centralized_maps(k, derived_all, graph, params, fixed_beta))
    for k in range(1, graph.n_nodes + 1):
        maps.append(_pd_floor_map(f"X{k}", n, params.delta_pd))
    obj = QuadraticObjective(layout)
    lower = None
    if with_beta:
        obj.add_linear("beta", -1.0)
        lower = {"beta": 0.0}
    return layout, canonicalize(obj, maps, layout, lower=lower)


def centralized_block_labels(n_nodes):
    """Human-readable names of the blocks emitted by
    :func:`centralized_problem`, in order."""
    labels = []
    for k in range(1, n_nodes + 1):
        labels += [f"node {k} stability", f"node {k} couplings", f"node {k} gain bound"]
    labels += [f"X{k} positive-definite floor" for k in range(1, n_nodes + 1)]
    return labels


def _worst_block(x, prob, labels):
    worst_val = -np.inf
    worst_label = "none"
    for blk, label in zip(prob.blocks, labels):
        val = float(np.linalg.eigvalsh(symmetrize(blk.evaluate(x)))[-1])
        if val > worst_val:
            worst_val, worst_label = val, label
    return worst_label, worst_val


@dataclass
class CentralResult:
    """Outcome of a centralized synthesis."""

    beta: float
    values: dict
    gains: Gains
    worst_violation: float
    iterations: int


def synthesize_central(
    plant,
    nodes,
    graph,
    params=None,
    fixed_beta=None,
    solver_opts=None,
    polish_backoff=0.995,
    max_polish=10,
):
    """Solve the coupled program with all variables shared.

    With ``fixed_beta`` the stacked conditions are solved as a pure
    feasibility problem.  Otherwise the performance weight is maximized
    directly; because a splitting method ends with small residual
    constraint violations, the reported weight is then certified by
    re-solving the stacked feasibility problem at the achieved value,
    backing off by ``polish_backoff`` per attempt until a strictly
    feasible point is found.  The certified point is what the gains are
    extracted from.
    """
    params = params or SynthesisParams()
    derived_list = [derive(plant, node, graph) for node in nodes]
    derived_all = {d.index: d for d in derived_list}
    labels = centralized_block_labels(graph.n_nodes)
    iterations = 0

    def feasibility_point(beta):
        nonlocal iterations
        layout, prob = centralized_problem(derived_all, graph, params, fixed_beta=beta)
        opts = solver_opts or SolveOptions(feas_tol=1e-8, max_iter=60000, relax=1.6)
        sol = solve(prob, opts)
        iterations += sol.iterations
        if sol.status != "optimal":
            label, val = _worst_block(sol.x, prob, labels)
            raise InfeasibleError(
                f"stacked conditions infeasible at beta = {beta:g} "
                f"(solver status {sol.status}; worst block: {label}, "
                f"eigenvalue {val:.3e})"
            )
        return layout.unpack(sol.x), sol.worst_violation

    if fixed_beta is not None:
        values, worst = feasibility_point(fixed_beta)
        beta = fixed_beta
    else:
        layout, prob = centralized_problem(derived_all, graph, params)
        opts = solver_opts or SolveOptions(max_iter=100000, eps_abs=3e-8, eps_rel=3e-8, relax=1.6)
        sol = solve(prob, opts)
        iterations += sol.iterations
        if sol.status == "infeasible":
            raise InfeasibleError("stacked conditions infeasible for every weight")
        beta_est = max(layout.unpack(sol.x)["beta"], 0.0)
        values = worst = None
        beta = beta_est
        for attempt in range(max_polish):
            beta = beta_est * polish_backoff ** attempt
            try:
                values, worst = feasibility_point(beta)
                break
            except InfeasibleError:
                continue
        if values is None:
            raise InfeasibleError(
                f"could not certify a feasible point near the achieved weight {beta_est:g}"
            )

    xs = [values[f"X{k}"] for k in range(1, graph.n_nodes + 1)]
    fs = [values[f"F{k}"] for k in range(1, graph.n_nodes + 1)]
    gains = extract_gains(xs, fs, plant, nodes, derived_list)
    return CentralResult(
        beta=float(beta),
        values=values,
        gains=gains,
        worst_violation=float(worst),
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# gains and bounds


def extract_gains(Xs, Fs, plant, nodes, derived):
    """Recover the filter gains from certificate matrices.

    ``K_k = inv(X_k) F_k``, ``L_k = (inv(X_k) C_k.T + B D_k.T) inv(E_k)``,
    and the performance weighting is the average of the ``X_k``.
    """
    K, L = [], []
    for X, F, node, d in zip(Xs, Fs, nodes, derived):
        cond = np.linalg.cond(X)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(
                f"certificate matrix of node {node.index} is numerically singular "
                f"(condition number {cond:.3e})"
            )
        K.append(np.linalg.solve(X, F))
        L.append((np.linalg.solve(X, node.C.T) + plant.B @ node.D.T) @ d.E_inv)
    P = symmetrize(sum(Xs) / len(Xs))
    return Gains(K=K, L=L, P=P)


def theorem1_bounds(X, F, rho):
    """Gain-norm bound implied by the gain-bound block.

    Returns ``(ok, bound)`` with ``bound = sqrt(n * rho) * ||sqrt(X)||_F^2``
    and ``ok`` true when ``||F||_F`` stays strictly below it.
    """
    n = X.shape[0]
    w, v = sym_eigen(X)
    sqrt_x = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    bound = float(np.sqrt(n * rho) * np.linalg.norm(sqrt_x) ** 2)
    return bool(np.linalg.norm(F) < bound), bound
