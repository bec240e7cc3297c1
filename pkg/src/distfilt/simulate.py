"""Closed-loop validation of a synthesized filter network.

Integrates the joint dynamics of the plant and all estimators with a
fixed-step fourth-order scheme, tracks the per-node estimation errors and
the estimator disagreement, and computes the empirical energy-gain ratios
that the synthesis certifies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pulse",
    "DampedNoise",
    "ZeroSignal",
    "disturbance_signals",
    "Scenario",
    "SimulationTrace",
    "integrate",
    "disagreement",
    "HinfMetrics",
    "hinf_metrics",
]


# ---------------------------------------------------------------------------
# disturbance signals (all finite-energy by construction)


@dataclass(frozen=True)
class ZeroSignal:
    dim: int = 1

    def values(self, times):
        return np.zeros((len(times), self.dim))


@dataclass(frozen=True)
class Pulse:
    """Rectangular pulse of the given amplitude on every channel."""

    t0: float
    t1: float
    amplitude: float
    dim: int = 1

    def values(self, times):
        times = np.asarray(times)
        mask = (times >= self.t0) & (times < self.t1)
        out = np.zeros((len(times), self.dim))
        out[mask] = self.amplitude
        return out


@dataclass(frozen=True)
class DampedNoise:
    """Piecewise-constant noise with an exponentially decaying envelope.

    Values are held for ``hold`` seconds; the draws depend only on the
    seed, so any two queries agree wherever they overlap.
    """

    amplitude: float
    decay: float
    seed: int
    dim: int = 1
    hold: float = 0.1

    def __post_init__(self):
        if self.decay <= 0:
            raise ValueError("damped noise needs a positive decay rate")
        if self.hold <= 0:
            raise ValueError("hold interval must be positive")

    def values(self, times):
        times = np.asarray(times)
        idx = np.floor(times / self.hold).astype(int)
        idx = np.maximum(idx, 0)
        draws = np.random.default_rng(self.seed).standard_normal((idx.max() + 1, self.dim))
        return self.amplitude * draws[idx] * np.exp(-self.decay * times)[:, None]


def disturbance_signals(spec, seed, dim=1):
    """Build a signal from a spec tuple.

    ``("zero",)``, ``("pulse", t0, t1, amplitude)``, or
    ``("damped_noise", amplitude, decay)``; the seed only matters for the
    noise spec.
    """
    kind = spec[0]
    if kind == "zero":
        return ZeroSignal(dim=dim)
    if kind == "pulse":
        return Pulse(t0=spec[1], t1=spec[2], amplitude=spec[3], dim=dim)
    if kind == "damped_noise":
        return DampedNoise(amplitude=spec[1], decay=spec[2], seed=seed, dim=dim)
    raise ValueError(f"unknown disturbance spec {spec!r}")


# ---------------------------------------------------------------------------
# scenario and trace


@dataclass
class Scenario:
    """One closed-loop experiment: model, gains, horizon, disturbances."""

    plant: object
    nodes: list
    graph: object
    gains: object
    x0: np.ndarray
    horizon: float
    dt: float = 1e-3
    xi: object = None
    etas: list = None

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < self.dt:
            raise ValueError("need dt > 0 and horizon >= dt")
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.xi is None:
            self.xi = ZeroSignal(dim=self.plant.m)
        if self.etas is None:
            self.etas = [ZeroSignal(dim=node.s) for node in self.nodes]


@dataclass
class SimulationTrace:
    """Sampled trajectories plus running energy integrals."""

    times: np.ndarray
    x: np.ndarray  # (T, n)
    xhat: np.ndarray  # (N, T, n)
    psi: np.ndarray  # (T,)
    error_energy: np.ndarray  # (N,) integral of ||e_k||^2
    psi_integral: float
    xi_energy: float
    eta_energy: np.ndarray  # (N,)

    @property
    def errors(self):
        return self.x[None, :, :] - self.xhat

    def to_csv(self, path):
        n = self.x.shape[1]
        n_nodes = self.xhat.shape[0]
        cols = ["time"]
        cols += [f"x{i + 1}" for i in range(n)]
        for k in range(n_nodes):
            cols += [f"xhat{k + 1}_{i + 1}" for i in range(n)]
        cols += ["psi"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for t in range(len(self.times)):
                row = [f"{self.times[t]:.17g}"]
                row += [f"{v:.17g}" for v in self.x[t]]
                for k in range(n_nodes):
                    row += [f"{v:.17g}" for v in self.xhat[k, t]]
                row.append(f"{self.psi[t]:.17g}")
                fh.write(",".join(row) + "\n")


def disagreement(xhat_all, graph):
    """Average squared disagreement of neighboring estimates.

    ``xhat_all`` is an ``(N, n)`` array of the estimates at one time.
    """
    xhat_all = np.asarray(xhat_all)
    n_nodes = xhat_all.shape[0]
    total = 0.0
    for k in range(1, n_nodes + 1):
        for j in graph.in_neighbors(k):
            diff = xhat_all[j - 1] - xhat_all[k - 1]
            total += float(diff @ diff)
    return total / n_nodes


def _joint_system(plant, nodes, graph, gains):
    """Stacked linear dynamics of [x; xhat_1; ...; xhat_N] driven by
    [xi; eta_1; ...; eta_N]."""
    n = plant.n
    n_nodes = len(nodes)
    dim = n * (n_nodes + 1)
    wdim = plant.m + sum(node.s for node in nodes)
    M = np.zeros((dim, dim))
    G = np.zeros((dim, wdim))
    M[:n, :n] = plant.A
    G[:n, : plant.m] = plant.B
    eta_off = plant.m
    for idx, node in enumerate(nodes):
        k = node.index
        r0 = n * (idx + 1)
        L = gains.L[idx]
        K = gains.K[idx]
        sources = sorted(graph.in_neighbors(k))
        M[r0 : r0 + n, r0 : r0 + n] = plant.A - L @ node.C - len(sources) * K
        M[r0 : r0 + n, :n] = L @ node.C
        for j in sources:
            c0 = n * j
            M[r0 : r0 + n, c0 : c0 + n] += K
        G[r0 : r0 + n, : plant.m] = L @ node.D
        G[r0 : r0 + n, eta_off : eta_off + node.s] = L @ node.Dbar
        eta_off += node.s
    return M, G


def integrate(scn):
    """Fixed-step RK4 integration of the joint closed loop.

    Disturbances are sampled at the stage times (a refined half-step
    grid); all energy integrals use the trapezoid rule on the output
    grid.  Raises on non-finite states with the offending time.
    """
    plant, nodes, graph, gains = scn.plant, scn.nodes, scn.graph, scn.gains
    n = plant.n
    n_nodes = len(nodes)
    steps = int(round(scn.horizon / scn.dt))
    times = scn.dt * np.arange(steps + 1)

    M, G = _joint_system(plant, nodes, graph, gains)
    half_grid = scn.dt / 2.0 * np.arange(2 * steps + 1)
    w_parts = [scn.xi.values(half_grid)]
    for node, eta in zip(nodes, scn.etas):
        if eta.values(half_grid[:1]).shape[1] != node.s:
            raise ValueError(f"eta signal for node {node.index} has wrong width")
        w_parts.append(eta.values(half_grid))
    w_half = np.hstack(w_parts)  # (2*steps + 1, wdim)

    z = np.zeros(n * (n_nodes + 1))
    z[:n] = scn.x0
    out = np.empty((steps + 1, z.size))
    out[0] = z
    h = scn.dt
    for i in range(steps):
        w0 = w_half[2 * i]
        wm = w_half[2 * i + 1]
        w1 = w_half[2 * i + 2]
        k1 = M @ z + G @ w0
        k2 = M @ (z + 0.5 * h * k1) + G @ wm
        k3 = M @ (z + 0.5 * h * k2) + G @ wm
        k4 = M @ (z + h * k3) + G @ w1
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = z
        if i % 200 == 0 and not np.all(np.isfinite(z)):
            raise FloatingPointError(
                f"state diverged (non-finite) at t = {times[i + 1]:.6f} s"
            )
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("state diverged (non-finite) before the horizon")

    x = out[:, :n]
    xhat = np.stack([out[:, n * (k + 1) : n * (k + 2)] for k in range(n_nodes)])

    # disagreement over the full trajectory (vectorized over edges)
    psi = np.zeros(steps + 1)
    for k in range(1, n_nodes + 1):
        for j in graph.in_neighbors(k):
            diff = xhat[j - 1] - xhat[k - 1]
            psi += np.einsum("ti,ti->t", diff, diff)
    psi /= n_nodes

    err = x[None, :, :] - xhat
    err_sq = np.einsum("kti,kti->kt", err, err)
    w_grid = w_half[::2]
    xi_sq = np.einsum("ti,ti->t", w_grid[:, : plant.m], w_grid[:, : plant.m])
    eta_energy = []
    off = plant.m
    for node in nodes:
        seg = w_grid[:, off : off + node.s]
        eta_energy.append(float(np.trapezoid(np.einsum("ti,ti->t", seg, seg), times)))
        off += node.s
    return SimulationTrace(
        times=times,
        x=x,
        xhat=xhat,
        psi=psi,
        error_energy=np.trapezoid(err_sq, times, axis=1),
        psi_integral=float(np.trapezoid(psi, times)),
        xi_energy=float(np.trapezoid(xi_sq, times)),
        eta_energy=np.array(eta_energy),
    )


@dataclass
class HinfMetrics:
    """Empirical energy-gain ratios of one simulation."""

    consensus_ratio: float
    error_ratio: float
    gamma: float
    denominator: float
    passed: bool


def hinf_metrics(trace, P, beta, margin=0.05):
    """Empirical check of the certified disagreement gain.

    The consensus ratio compares the integrated disagreement against the
    total excitation energy (weighted initial state plus disturbance
    energies); it must stay below ``1/beta`` up to the numerical margin.
    The error ratio is reported for monitoring only: its theoretical bound
    exists but is not computed.
    """
    x0 = trace.x[0]
    n_nodes = trace.xhat.shape[0]
    denom = float(x0 @ (P @ x0)) + float(np.mean(trace.eta_energy)) + trace.xi_energy
    if denom <= 0.0:
        raise ZeroDivisionError(
            "zero excitation: initial state and disturbances are all zero"
        )
    consensus_ratio = trace.psi_integral / denom
    error_ratio = float(np.mean(trace.error_energy)) / denom
    gamma = 1.0 / beta
    return HinfMetrics(
        consensus_ratio=consensus_ratio,
        error_ratio=error_ratio,
        gamma=gamma,
        denominator=denom,
        passed=bool(consensus_ratio <= gamma * (1.0 + margin)),
    )
