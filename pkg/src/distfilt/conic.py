"""Conic solver for convex quadratic objectives under affine PSD-block
constraints.

Problems have the canonical form

    minimize   0.5 * x' P x + q' x + c0
    subject to G0_b + sum_i x_i * G_i_b  <=  0   (negative semidefinite),
               x_i >= lower_i,

with every coefficient matrix symmetric.  The solver is an operator
splitting (ADMM) iteration: a regularized linear solve in ``x``, a
projection of each block slack onto the negative-semidefinite cone, and a
scaled dual update.  Constraints are equilibrated (per-block and
per-variable scalings) before iterating, which keeps the method usable on
problems whose data spans several orders of magnitude.

A solve call is single-threaded and deterministic; independent calls may
run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .matrices import (
    pack_symmetric,
    pack_weights,
    symmetrize,
    unpack_symmetric,
    unvec,
    vec,
)

__all__ = [
    "VarLayout",
    "AffineBlock",
    "ConicProblem",
    "ConicSolution",
    "SolveOptions",
    "QuadraticObjective",
    "blocks_from_maps",
    "canonicalize",
    "solve",
    "check_feasible",
    "dump_problem",
    "load_problem",
]

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


# ---------------------------------------------------------------------------
# variable layout


class VarLayout:
    """Maps named matrix/scalar decision variables to a flat vector.

    Plain matrices contribute one scalar per entry in column-stacked order;
    symmetric matrices contribute only their upper triangle (the associated
    inner-product weights carry the factor 2 for off-diagonal entries);
    scalars contribute a single entry.
    """

    def __init__(self):
        self._vars = {}
        self._order = []
        self._n = 0

    def _add(self, name, kind, meta, size):
        if name in self._vars:
            raise ValueError(f"layout collision: variable {name!r} already defined")
        self._vars[name] = (kind, meta, slice(self._n, self._n + size))
        self._order.append(name)
        self._n += size

    def add_scalar(self, name):
        self._add(name, "scalar", None, 1)

    def add_matrix(self, name, rows, cols):
        self._add(name, "matrix", (rows, cols), rows * cols)

    def add_symmetric(self, name, n):
        self._add(name, "symmetric", n, n * (n + 1) // 2)

    @property
    def nvars(self):
        return self._n

    def names(self):
        return list(self._order)

    def kind(self, name):
        return self._vars[name][0]

    def slice_of(self, name):
        return self._vars[name][2]

    def pack_one(self, name, value):
        kind, meta, _ = self._vars[name]
        if kind == "scalar":
            return np.array([float(value)])
        if kind == "matrix":
            return vec(value)
        return pack_symmetric(value)

    def pack(self, values):
        x = np.zeros(self._n)
        for name in self._order:
            x[self._vars[name][2]] = self.pack_one(name, values[name])
        return x

    def unpack(self, x):
        out = {}
        for name in self._order:
            kind, meta, sl = self._vars[name]
            seg = x[sl]
            if kind == "scalar":
                out[name] = float(seg[0])
            elif kind == "matrix":
                out[name] = unvec(seg, *meta)
            else:
                out[name] = unpack_symmetric(seg, meta)
        return out

    def zero_vars(self):
        return self.unpack(np.zeros(self._n))

    def weights(self):
        """Frobenius inner-product weight of each flat entry."""
        w = np.ones(self._n)
        for name in self._order:
            kind, meta, sl = self._vars[name]
            if kind == "symmetric":
                w[sl] = pack_weights(meta)
        return w


# ---------------------------------------------------------------------------
# problem data


@dataclass
class AffineBlock:
    """One PSD-block constraint ``G0 + sum_i x_i basis[i] <= 0``."""

    dim: int
    G0: np.ndarray
    basis: np.ndarray  # (nvars, dim, dim), exactly symmetric slices

    def __post_init__(self):
        self.G0 = np.asarray(self.G0, dtype=float)
        self.basis = np.asarray(self.basis, dtype=float)
        if self.G0.shape != (self.dim, self.dim):
            raise ValueError(f"G0 shape {self.G0.shape} != ({self.dim}, {self.dim})")
        if self.basis.ndim != 3 or self.basis.shape[1:] != (self.dim, self.dim):
            raise ValueError("basis must have shape (nvars, dim, dim)")
        if not np.array_equal(self.G0, self.G0.T):
            raise ValueError("G0 must be exactly symmetric")
        if not np.array_equal(self.basis, np.transpose(self.basis, (0, 2, 1))):
            raise ValueError("all coefficient matrices must be exactly symmetric")

    @property
    def nvars(self):
        return self.basis.shape[0]

    def coeff(self, i):
        return self.basis[i]

    def evaluate(self, x):
        return self.G0 + np.tensordot(x, self.basis, axes=1)


@dataclass
class ConicProblem:
    """Canonical problem data; ``P`` may be ``None`` for a linear cost."""

    nvars: int
    P: np.ndarray | None
    q: np.ndarray
    blocks: list
    lower: np.ndarray | None = None
    c0: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (self.nvars,):
            raise ValueError("q has wrong length")
        if self.P is not None:
            self.P = np.asarray(self.P, dtype=float)
            if self.P.shape != (self.nvars, self.nvars):
                raise ValueError("P has wrong shape")
            if not np.allclose(self.P, self.P.T, rtol=0, atol=0):
                raise ValueError("P must be symmetric")
            wmin = float(np.linalg.eigvalsh(self.P)[0]) if self.nvars else 0.0
            if wmin < -1e-10 * max(1.0, float(np.abs(self.P).max())):
                raise ValueError(f"P must be PSD (min eigenvalue {wmin:.3e})")
        for blk in self.blocks:
            if blk.nvars != self.nvars:
                raise ValueError("block variable count mismatch")
        if self.lower is not None:
            self.lower = np.asarray(self.lower, dtype=float)
            if self.lower.shape != (self.nvars,):
                raise ValueError("lower has wrong length")

    def objective(self, x):
        val = float(self.q @ x) + self.c0
        if self.P is not None:
            val += 0.5 * float(x @ (self.P @ x))
        return val


@dataclass
class WarmState:
    """Opaque solver state for warm-starting a later solve of the same
    problem structure (identical blocks and bounds)."""

    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    sigma: float


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    worst_violation: float
    objective: float
    state: WarmState = field(repr=False, default=None)


@dataclass
class SolveOptions:
    max_iter: int = 50000
    feas_tol: float = 1e-6
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    sigma: float = 1.0
    check_every: int = 25
    balance_every: int = 100
    balance_ratio: float = 10.0
    balance_factor: float = 2.0
    cert_tol: float = 1e-4
    cert_consecutive: int = 3
    ridge: float = 1e-12
    scale: bool = True
    relax: float = 1.0
    # shift every block inward by tighten * I; with feas_tol < tighten any
    # accepted iterate is strictly feasible for the original constraints
    tighten: float = 0.0


# ---------------------------------------------------------------------------
# canonicalization helpers


def blocks_from_maps(maps, layout):
    """Turn affine matrix-valued evaluators into :class:`AffineBlock` s.

    Each ``map`` takes a dict of named variable values and returns a
    symmetric matrix, affine in the variables.  Coefficients are recovered
    by evaluating at the origin and at each unit basis vector of the flat
    layout, which keeps the canonical form consistent with the direct
    evaluator by construction.
    """
    nv = layout.nvars
    blocks = []
    for fn in maps:
        G0 = np.asarray(fn(layout.zero_vars()), dtype=float)
        dim = G0.shape[0]
        basis = np.zeros((nv, dim, dim))
        e = np.zeros(nv)
        for i in range(nv):
            e[i] = 1.0
            basis[i] = np.asarray(fn(layout.unpack(e)), dtype=float) - G0
            e[i] = 0.0
        blocks.append(AffineBlock(dim=dim, G0=G0, basis=basis))
    return blocks


class QuadraticObjective:
    """Accumulates a diagonal quadratic cost over a :class:`VarLayout`.

    Supports exactly the terms that show up in the synthesis subproblems:
    squared Frobenius/scalar distances, trace inner products, and linear
    scalar terms.  The packed symmetric weighting keeps canonical values
    equal to the matrix-form expressions term by term.
    """

    def __init__(self, layout):
        self.layout = layout
        self._pdiag = np.zeros(layout.nvars)
        self._q = np.zeros(layout.nvars)
        self._c0 = 0.0
        self._w = layout.weights()

    def add_linear(self, name, coeff):
        """Add ``coeff * v`` for a scalar variable."""
        sl = self.layout.slice_of(name)
        self._q[sl] += float(coeff)

    def add_inner(self, name, M, coeff=1.0):
        """Add ``coeff * tr(M.T @ V)`` (or ``coeff * m * v`` for scalars)."""
        sl = self.layout.slice_of(name)
        kind = self.layout.kind(name)
        if kind == "scalar":
            self._q[sl] += coeff * float(M)
        elif kind == "matrix":
            self._q[sl] += coeff * vec(M)
        else:
            self._q[sl] += coeff * self._w[sl] * pack_symmetric(symmetrize(M))

    def add_square(self, name, target, weight):
        """Add ``(weight / 2) * ||V - target||^2`` (Frobenius or scalar)."""
        sl = self.layout.slice_of(name)
        kind = self.layout.kind(name)
        w = self._w[sl]
        t = self.layout.pack_one(name, target)
        self._pdiag[sl] += weight * w
        self._q[sl] += -weight * w * t
        if kind == "scalar":
            self._c0 += 0.5 * weight * float(target) ** 2
        else:
            self._c0 += 0.5 * weight * float(np.sum(np.asarray(target) ** 2))

    def build(self):
        P = np.diag(self._pdiag) if np.any(self._pdiag) else None
        return P, self._q.copy(), self._c0


def canonicalize(objective, maps, layout, lower=None):
    """Assemble a :class:`ConicProblem` from an objective and LMI maps."""
    P, q, c0 = objective.build()
    blocks = blocks_from_maps(maps, layout)
    lo = None
    if lower:
        lo = np.full(layout.nvars, -np.inf)
        for name, bound in lower.items():
            sl = layout.slice_of(name)
            lo[sl] = bound
    return ConicProblem(nvars=layout.nvars, P=P, q=q, blocks=blocks, lower=lo, c0=c0)


# ---------------------------------------------------------------------------
# compiled constraint stack


def _congruence_scale(G0, basis, passes=3):
    """Diagonal of a congruence transform T M T that balances a block's row
    magnitudes.  Sign-definiteness is invariant under congruence, so the
    scaled block constrains the same set while spanning far fewer orders of
    magnitude (measurement-noise weights easily contribute factors of 1e4)."""
    t = np.ones(G0.shape[0])
    for _ in range(passes):
        mag = np.abs(G0) * t[:, None] * t[None, :]
        rowmax = mag.max(axis=1)
        if basis.size:
            bmag = np.abs(basis) * t[None, :, None] * t[None, None, :]
            rowmax = np.maximum(rowmax, bmag.max(axis=(0, 2)))
        rowmax[rowmax == 0] = 1.0
        t /= np.sqrt(np.sqrt(rowmax))
    return np.clip(t, 1e-6, 1e6)


class _Compiled:
    """Preconditioned, dimension-grouped constraint data reused across
    solves.  Scaling is three-layered: a diagonal congruence transform per
    block, then Ruiz equilibration with one scalar per block and one per
    variable."""

    def __init__(self, blocks, lower, nvars, scale, tighten=0.0):
        entries = []
        for blk in blocks:
            g0 = blk.G0 + tighten * np.eye(blk.dim) if tighten else blk.G0
            t = _congruence_scale(g0, blk.basis) if scale else np.ones(blk.dim)
            entries.append(
                (
                    blk.dim,
                    g0 * t[:, None] * t[None, :],
                    blk.basis * t[None, :, None] * t[None, None, :],
                    t,
                )
            )
        if lower is not None:
            for i in np.flatnonzero(np.isfinite(lower)):
                basis = np.zeros((nvars, 1, 1))
                basis[i, 0, 0] = -1.0
                entries.append((1, np.array([[lower[i] + tighten]]), basis, np.ones(1)))
        self.nvars = nvars
        self.nblocks = len(entries)

        # per-block coefficient magnitudes drive Ruiz equilibration
        norm_tab = np.zeros((self.nblocks, nvars))
        for b, (_, _, basis, _) in enumerate(entries):
            norm_tab[b] = np.sqrt(np.einsum("ijk,ijk->i", basis, basis))
        s = np.ones(self.nblocks)
        d = np.ones(nvars)
        if scale and self.nblocks:
            for _ in range(8):
                tab = norm_tab * s[:, None] * d[None, :]
                rmax = tab.max(axis=1)
                cmax = tab.max(axis=0)
                rmax[rmax == 0] = 1.0
                cmax[cmax == 0] = 1.0
                s /= np.sqrt(rmax)
                d /= np.sqrt(cmax)
            s = np.clip(s, 1e-8, 1e8)
            d = np.clip(d, 1e-8, 1e8)
        self.block_scale = s
        self.var_scale = d

        # group by dimension, preserving encounter order
        dims = []
        for dim, _, _, _ in entries:
            if dim not in dims:
                dims.append(dim)
        self.groups = []
        arows = []
        grows = []
        offset = 0
        for dim in dims:
            idx = [b for b, e in enumerate(entries) if e[0] == dim]
            count = len(idx)
            rows = count * dim * dim
            self.groups.append(
                {
                    "dim": dim,
                    "count": count,
                    "rows": slice(offset, offset + rows),
                    "scale": s[idx],
                    "cong": np.stack([entries[b][3] for b in idx]),
                }
            )
            grows.append(np.stack([entries[b][1] * s[b] for b in idx]).reshape(-1))
            a_grp = np.concatenate(
                [(entries[b][2] * (s[b] * d[:, None, None])).reshape(nvars, -1) for b in idx],
                axis=1,
            )
            arows.append(a_grp.T)
            offset += rows
        self.A = np.vstack(arows) if arows else np.zeros((0, nvars))
        self.g = np.concatenate(grows) if grows else np.zeros(0)
        self.AtA = self.A.T @ self.A
        self.rows = self.A.shape[0]
        self.g_norm = float(np.linalg.norm(self.g))

    def project_nsd(self, w):
        """Project each block of the stacked slack onto the NSD cone."""
        out = np.empty_like(w)
        for grp in self.groups:
            seg = w[grp["rows"]]
            dim = grp["dim"]
            if dim == 1:
                out[grp["rows"]] = np.minimum(seg, 0.0)
                continue
            mats = seg.reshape(grp["count"], dim, dim)
            vals, vecs = np.linalg.eigh(mats)
            np.minimum(vals, 0.0, out=vals)
            proj = np.einsum("bij,bj,bkj->bik", vecs, vals, vecs)
            out[grp["rows"]] = proj.reshape(-1)
        return out

    def worst_violation(self, slack):
        """Max eigenvalue over blocks of the slack mapped back to the
        original (unscaled, uncongruenced) constraint matrices."""
        worst = -np.inf
        for grp in self.groups:
            seg = slack[grp["rows"]]
            dim = grp["dim"]
            cong = grp["cong"]
            if dim == 1:
                v = seg.reshape(-1) / grp["scale"] / cong[:, 0] ** 2
                worst = max(worst, float(v.max()))
                continue
            mats = seg.reshape(grp["count"], dim, dim) / grp["scale"][:, None, None]
            mats = mats / cong[:, :, None] / cong[:, None, :]
            vals = np.linalg.eigvalsh(mats)
            worst = max(worst, float(vals[:, -1].max()))
        return worst


def _compiled(prob, scale, tighten=0.0):
    cache = getattr(prob, "_compiled_cache", None)
    lower_key = None if prob.lower is None else prob.lower.tobytes()
    key = (id(prob.blocks), lower_key, scale, tighten)
    if cache is not None and cache[0] == key:
        return cache[1]
    comp = _Compiled(prob.blocks, prob.lower, prob.nvars, scale, tighten)
    prob._compiled_cache = (key, comp)
    return comp


# ---------------------------------------------------------------------------
# solver


def _factor(Pd, AtA, sigma, ridge):
    K = sigma * AtA
    if Pd is not None:
        K = K + Pd
    tau = max(1.0, float(K.diagonal().max(initial=0.0)))
    eps = ridge * tau
    for _ in range(4):
        try:
            return scipy.linalg.cho_factor(
                K + eps * np.eye(K.shape[0]), lower=True, check_finite=False
            )
        except np.linalg.LinAlgError:
            eps *= 100.0
    raise np.linalg.LinAlgError("x-update system could not be factorized")


def solve(prob, opts=None, warm=None):
    """Run the operator-splitting iteration on ``prob``.

    Returns a :class:`ConicSolution` whose status is ``optimal`` when the
    iterate satisfies every block to ``feas_tol`` and both residuals meet
    the absolute/relative convergence thresholds, ``max_iter`` when the
    iteration budget ran out (final iterate returned with residuals), or
    ``infeasible`` when the dual-increment direction certifies primal
    infeasibility: a blockwise-PSD ray ``v`` with ``A' v ~ 0`` and
    ``<g, v> > 0`` cannot exist for a feasible problem, so observing one
    (to ``cert_tol``, at ``cert_consecutive`` successive check points) is
    taken as the verdict.
    """
    opts = opts or SolveOptions()
    comp = _compiled(prob, opts.scale, opts.tighten)
    n = prob.nvars
    d = comp.var_scale

    # cost in scaled variables x = d * x'
    if prob.P is not None:
        Pd = prob.P * d[:, None] * d[None, :]
    else:
        Pd = None
    qd = prob.q * d

    if comp.rows == 0:
        # unconstrained quadratic program
        K = Pd if Pd is not None else np.zeros((n, n))
        xs = np.linalg.solve(K + opts.ridge * np.eye(n), -qd)
        x = xs * d
        return ConicSolution(
            x=x,
            status=OPTIMAL,
            primal_residual=0.0,
            dual_residual=0.0,
            iterations=0,
            worst_violation=-np.inf,
            objective=prob.objective(x),
            state=WarmState(x=xs, z=np.zeros(0), u=np.zeros(0), sigma=opts.sigma),
        )

    A, g, AtA = comp.A, comp.g, comp.AtA
    if warm is not None:
        x = warm.x.copy()
        z = warm.z.copy()
        u = warm.u.copy()
        sigma = warm.sigma
    else:
        x = np.zeros(n)
        z = comp.project_nsd(g.copy())
        u = np.zeros(comp.rows)
        sigma = opts.sigma

    chol = _factor(Pd, AtA, sigma, opts.ridge)
    status = MAX_ITER
    r_p = np.inf
    r_d = np.inf
    worst = np.inf
    u_mark = u.copy()  # dual iterate at the previous check point
    cert_hits = 0
    it = 0
    # with a zero objective any certified feasible point is optimal
    feasibility_only = Pd is None and not np.any(qd)

    for it in range(1, opts.max_iter + 1):
        rhs = sigma * (A.T @ (z - u - g)) - qd
        x = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        s_lin = A @ x + g
        if opts.relax != 1.0:
            w = opts.relax * s_lin + (1.0 - opts.relax) * z + u
        else:
            w = s_lin + u
        z_prev = z
        z = comp.project_nsd(w)
        u = w - z
        r_p = float(np.linalg.norm(s_lin - z))

        if it % opts.check_every == 0 or it == opts.max_iter:
            r_d = sigma * float(np.linalg.norm(A.T @ (z - z_prev)))
            worst = comp.worst_violation(s_lin)
            if feasibility_only and worst <= opts.feas_tol:
                status = OPTIMAL
                break
            eps_pri = np.sqrt(comp.rows) * opts.eps_abs + opts.eps_rel * max(
                float(np.linalg.norm(s_lin)), float(np.linalg.norm(z)), comp.g_norm
            )
            eps_dua = np.sqrt(n) * opts.eps_abs + opts.eps_rel * sigma * float(
                np.linalg.norm(A.T @ u)
            )
            if worst <= opts.feas_tol and r_p <= eps_pri and r_d <= eps_dua:
                status = OPTIMAL
                break
            # primal infeasibility certificate from the dual increment
            dv = u - u_mark
            u_mark = u.copy()
            nv = float(np.linalg.norm(dv))
            if worst > opts.feas_tol and nv > 1e-12:
                at_defect = float(np.linalg.norm(A.T @ dv)) / nv
                cone_defect = float(np.linalg.norm(comp.project_nsd(dv))) / nv
                gain = float(g @ dv)
                if (
                    at_defect <= opts.cert_tol
                    and cone_defect <= opts.cert_tol
                    and gain > 1e-10 * (comp.g_norm + 1.0) * nv
                ):
                    cert_hits += 1
                    if cert_hits >= opts.cert_consecutive:
                        status = INFEASIBLE
                        break
                else:
                    cert_hits = 0
            else:
                cert_hits = 0

        if it % opts.balance_every == 0:
            r_d_now = sigma * float(np.linalg.norm(A.T @ (z - z_prev)))
            if r_p > opts.balance_ratio * r_d_now and sigma < 1e6:
                sigma *= opts.balance_factor
                u /= opts.balance_factor
                u_mark = u.copy()
                cert_hits = 0
                chol = _factor(Pd, AtA, sigma, opts.ridge)
            elif r_d_now > opts.balance_ratio * r_p and sigma > 1e-6:
                sigma /= opts.balance_factor
                u *= opts.balance_factor
                u_mark = u.copy()
                cert_hits = 0
                chol = _factor(Pd, AtA, sigma, opts.ridge)

    if not np.isfinite(worst):
        worst = comp.worst_violation(A @ x + g)
    x_out = x * d
    return ConicSolution(
        x=x_out,
        status=status,
        primal_residual=r_p,
        dual_residual=r_d if np.isfinite(r_d) else float("nan"),
        iterations=it,
        # report against the original (untightened) blocks
        worst_violation=worst - opts.tighten,
        objective=prob.objective(x_out),
        state=WarmState(x=x, z=z, u=u, sigma=sigma),
    )


def check_feasible(x, prob, tol=1e-6):
    """Evaluate all blocks at ``x``; returns ``(ok, worst_violation)``.

    The worst violation is the largest block eigenvalue (positive means the
    constraint is violated by that amount); bound constraints contribute
    ``lower_i - x_i``.
    """
    x = np.asarray(x, dtype=float)
    worst = -np.inf
    for blk in prob.blocks:
        vals = np.linalg.eigvalsh(symmetrize(blk.evaluate(x)))
        worst = max(worst, float(vals[-1]))
    if prob.lower is not None:
        finite = np.isfinite(prob.lower)
        if finite.any():
            worst = max(worst, float((prob.lower[finite] - x[finite]).max()))
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# plain-text dump for cross-checking against external solvers
#
# Format (all matrices row-major, whitespace-separated):
#   conic-problem v1
#   nvars N
#   c0 VALUE
#   q
#   <N entries on one line>
#   lower            (only if bounds present; -inf spelled "-inf")
#   <N entries>
#   P none | P dense
#   <N rows>
#   blocks NB
#   block DIM NNZ    (NNZ = number of nonzero coefficient matrices)
#   G0
#   <DIM rows>
#   G VARINDEX
#   <DIM rows>       (repeated NNZ times)


def _write_matrix(fh, mat):
    for row in np.atleast_2d(mat):
        fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def dump_problem(prob, path):
    """Write the canonical problem to a documented plain-text format."""
    with open(path, "w") as fh:
        fh.write("conic-problem v1\n")
        fh.write(f"nvars {prob.nvars}\n")
        fh.write(f"c0 {prob.c0:.17g}\n")
        fh.write("q\n")
        _write_matrix(fh, prob.q)
        if prob.lower is not None:
            fh.write("lower\n")
            fh.write(" ".join(format(v, ".17g") for v in prob.lower) + "\n")
        if prob.P is None:
            fh.write("P none\n")
        else:
            fh.write("P dense\n")
            _write_matrix(fh, prob.P)
        fh.write(f"blocks {len(prob.blocks)}\n")
        for blk in prob.blocks:
            nnz = [i for i in range(blk.nvars) if np.any(blk.basis[i])]
            fh.write(f"block {blk.dim} {len(nnz)}\n")
            fh.write("G0\n")
            _write_matrix(fh, blk.G0)
            for i in nnz:
                fh.write(f"G {i}\n")
                _write_matrix(fh, blk.basis[i])


def _parse_row(line):
    return np.array(line.split(), dtype=float)


def _read_matrix(lines, rows):
    return np.vstack([_parse_row(next(lines)) for _ in range(rows)])


def load_problem(path):
    """Parse a file written by :func:`dump_problem`."""
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    if next(lines) != "conic-problem v1":
        raise ValueError("not a conic-problem dump")
    nvars = int(next(lines).split()[1])
    c0 = float(next(lines).split()[1])
    assert next(lines) == "q"
    q = _parse_row(next(lines))
    line = next(lines)
    lower = None
    if line == "lower":
        lower = _parse_row(next(lines))
        line = next(lines)
    P = None
    if line == "P dense":
        P = _read_matrix(lines, nvars)
    elif line != "P none":
        raise ValueError(f"unexpected line {line!r}")
    nb = int(next(lines).split()[1])
    blocks = []
    for _ in range(nb):
        _, dim, nnz = next(lines).split()
        dim, nnz = int(dim), int(nnz)
        assert next(lines) == "G0"
        G0 = _read_matrix(lines, dim)
        basis = np.zeros((nvars, dim, dim))
        for _ in range(nnz):
            idx = int(next(lines).split()[1])
            basis[idx] = _read_matrix(lines, dim)
        blocks.append(AffineBlock(dim=dim, G0=G0, basis=basis))
    return ConicProblem(nvars=nvars, P=P, q=q, blocks=blocks, lower=lower, c0=c0)
