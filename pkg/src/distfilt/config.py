"""Scenario files: a line-based text format with named matrix blocks.

A scenario collects the plant, the per-node sensor models, the
communication graph, the synthesis parameters, and the simulation battery
in one human-editable file:

    [plant]
    A =
      0.38 0
      0.30 0.35
    B = @plant_b.csv          # matrices may live in external CSV files

    [node 1]
    alpha = 2.0
    C =
      1 0
    Dbar =
      0.01

    [graph]
    nodes = 2
    edges =
      1 2
      2 1

Scalar entries are ``key = value`` lines; matrix entries open with
``key =`` and continue with one whitespace-separated row per indented
line.  ``D`` may be omitted (zero direct feedthrough).  Node sections
must be numbered consecutively from 1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .lmis import SynthesisParams
from .model import CommGraph, Plant, SensorNode

__all__ = ["ConfigError", "SimulationSpec", "ScenarioConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Raised on malformed scenario text, with line context."""


@dataclass
class SimulationSpec:
    """Validation battery: horizon, step, seeds, disturbance shapes."""

    horizon: float = 50.0
    dt: float = 1e-3
    x0: np.ndarray | None = None
    battery: int = 20
    xi: tuple = ("damped_noise", 1.0, 0.1)
    eta: tuple = ("damped_noise", 1.0, 0.1)
    decay_horizon: float = 20.0
    decay_runs: int = 10


@dataclass
class ScenarioConfig:
    plant: Plant
    nodes: list
    graph: CommGraph
    params: SynthesisParams = field(default_factory=SynthesisParams)
    c: float = 1.0
    beta_mode: str = "fixed"  # fixed | optimize
    beta_value: float = 100.0
    mode: str = "full"
    consensus: str = "exact"
    max_iter: int = 70
    tol: float = 1e-2
    seed: int = 20240501
    pad_eps: float = 0.0  # 0 disables the controllability padding hook
    sim: SimulationSpec = field(default_factory=SimulationSpec)

    def to_text(self):
        out = []

        def matrix(name, m):
            out.append(f"{name} =")
            for row in np.atleast_2d(m):
                out.append("  " + " ".join(format(v, ".17g") for v in row))

        out.append("[plant]")
        matrix("A", self.plant.A)
        matrix("B", self.plant.B)
        out.append("")
        for node in self.nodes:
            out.append(f"[node {node.index}]")
            out.append(f"alpha = {node.alpha:.17g}")
            matrix("C", node.C)
            if np.any(node.D):
                matrix("D", node.D)
            matrix("Dbar", node.Dbar)
            out.append("")
        out.append("[graph]")
        out.append(f"nodes = {self.graph.n_nodes}")
        out.append("edges =")
        for j, k in sorted(self.graph.edges):
            out.append(f"  {j} {k}")
        out.append("")
        out.append("[params]")
        out.append(f"rho = {self.params.rho:.17g}")
        out.append(f"delta = {self.params.delta:.17g}")
        out.append(f"delta_pd = {self.params.delta_pd:.17g}")
        out.append(f"c = {self.c:.17g}")
        out.append(f"beta = {self.beta_mode} {self.beta_value:.17g}")
        out.append(f"mode = {self.mode}")
        out.append(f"consensus = {self.consensus}")
        out.append(f"max_iter = {self.max_iter}")
        out.append(f"tol = {self.tol:.17g}")
        out.append(f"seed = {self.seed}")
        if self.pad_eps:
            out.append(f"pad_disturbances = on {self.pad_eps:.17g}")
        out.append("")
        out.append("[simulation]")
        out.append(f"T = {self.sim.horizon:.17g}")
        out.append(f"dt = {self.sim.dt:.17g}")
        if self.sim.x0 is not None:
            out.append("x0 = " + " ".join(format(v, ".17g") for v in self.sim.x0))
        out.append(f"battery = {self.sim.battery}")
        out.append("xi = " + " ".join(str(v) for v in self.sim.xi))
        out.append("eta = " + " ".join(str(v) for v in self.sim.eta))
        out.append(f"decay_T = {self.sim.decay_horizon:.17g}")
        out.append(f"decay_runs = {self.sim.decay_runs}")
        out.append("")
        return "\n".join(out)


def _parse_sections(text):
    """Split into sections of (key, scalar-or-rows) entries, keeping line
    numbers for error messages."""
    sections = []
    current = None
    pending = None  # (key, rows) while collecting matrix rows
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line.lstrip().startswith("["):
            header = line.strip()
            if not header.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {header!r}")
            current = {"name": header[1:-1].strip(), "entries": [], "line": lineno}
            sections.append(current)
            pending = None
            continue
        if current is None:
            raise ConfigError(f"line {lineno}: content before the first section")
        if raw[:1] in (" ", "\t"):
            if pending is None:
                raise ConfigError(f"line {lineno}: indented row without a matrix key")
            pending[1].append((lineno, line.strip()))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value:
            current["entries"].append((lineno, key, value))
            pending = None
        else:
            pending = (key, [])
            current["entries"].append((lineno, key, pending[1]))
    return sections


def _rows_to_matrix(rows, lineno, key, base_dir):
    if isinstance(rows, str):
        if not rows.startswith("@"):
            # single-line vector
            try:
                return np.array([[float(v) for v in rows.split()]])
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad number in {key!r}: {exc}") from None
        path = os.path.join(base_dir, rows[1:])
        if not os.path.exists(path):
            raise ConfigError(f"line {lineno}: matrix file {path!r} not found")
        return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
    mat = []
    width = None
    for ln, row in rows:
        try:
            vals = [float(v) for v in row.split()]
        except ValueError as exc:
            raise ConfigError(f"line {ln}: bad number in {key!r}: {exc}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ConfigError(f"line {ln}: row width {len(vals)} != {width} in {key!r}")
        mat.append(vals)
    if not mat:
        raise ConfigError(f"line {lineno}: matrix {key!r} has no rows")
    return np.array(mat)


def _entries_dict(section):
    out = {}
    for lineno, key, value in section["entries"]:
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = (lineno, value)
    return out


def _cast(lineno, key, value, cast):
    try:
        return cast(value)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None


def _spec_tuple(text, lineno, what):
    parts = text.split()
    kind = parts[0]
    if kind == "zero":
        return ("zero",)
    if kind == "pulse":
        if len(parts) != 4:
            raise ConfigError(f"line {lineno}: pulse needs t0 t1 amplitude")
        return ("pulse", float(parts[1]), float(parts[2]), float(parts[3]))
    if kind == "damped_noise":
        if len(parts) != 3:
            raise ConfigError(f"line {lineno}: damped_noise needs amplitude decay")
        return ("damped_noise", float(parts[1]), float(parts[2]))
    raise ConfigError(f"line {lineno}: unknown {what} signal {kind!r}")


def parse_config(text, base_dir="."):
    """Parse scenario text into a :class:`ScenarioConfig`."""
    sections = _parse_sections(text)
    by_name = {}
    node_sections = []
    for sec in sections:
        if sec["name"].startswith("node"):
            node_sections.append(sec)
        elif sec["name"] in by_name:
            raise ConfigError(f"line {sec['line']}: duplicate section [{sec['name']}]")
        else:
            by_name[sec["name"]] = sec

    def need(name):
        if name not in by_name:
            raise ConfigError(f"missing required section [{name}]")
        return _entries_dict(by_name[name])

    plant_e = need("plant")
    for key in ("A", "B"):
        if key not in plant_e:
            raise ConfigError(f"[plant] is missing {key}")
    A = _rows_to_matrix(plant_e["A"][1], plant_e["A"][0], "A", base_dir)
    B = _rows_to_matrix(plant_e["B"][1], plant_e["B"][0], "B", base_dir)
    plant = Plant(A=A, B=B)

    graph_e = need("graph")
    if "nodes" not in graph_e:
        raise ConfigError("[graph] is missing nodes")
    n_nodes = int(graph_e["nodes"][1])
    edges = set()
    if "edges" in graph_e:
        rows = graph_e["edges"][1]
        if not isinstance(rows, list):
            raise ConfigError(f"line {graph_e['edges'][0]}: edges must be an indented list")
        for ln, row in rows:
            parts = row.split()
            if len(parts) != 2:
                raise ConfigError(f"line {ln}: edge rows need exactly two node indices")
            edges.add((int(parts[0]), int(parts[1])))
    graph = CommGraph(n_nodes=n_nodes, edges=frozenset(edges))

    nodes = []
    seen = set()
    for sec in node_sections:
        parts = sec["name"].split()
        if len(parts) != 2:
            raise ConfigError(f"line {sec['line']}: node sections are '[node K]'")
        k = int(parts[1])
        if k in seen:
            raise ConfigError(f"line {sec['line']}: duplicate [node {k}]")
        seen.add(k)
        e = _entries_dict(sec)
        for key in ("alpha", "C", "Dbar"):
            if key not in e:
                raise ConfigError(f"[node {k}] is missing {key}")
        C = _rows_to_matrix(e["C"][1], e["C"][0], "C", base_dir)
        Dbar = _rows_to_matrix(e["Dbar"][1], e["Dbar"][0], "Dbar", base_dir)
        if "D" in e:
            D = _rows_to_matrix(e["D"][1], e["D"][0], "D", base_dir)
        else:
            D = np.zeros((C.shape[0], plant.m))
        alpha = _cast(e["alpha"][0], "alpha", e["alpha"][1], float)
        nodes.append(SensorNode(index=k, C=C, D=D, Dbar=Dbar, alpha=alpha))
    nodes.sort(key=lambda nd: nd.index)
    if [nd.index for nd in nodes] != list(range(1, n_nodes + 1)):
        raise ConfigError(
            f"need node sections 1..{n_nodes}, got {[nd.index for nd in nodes]}"
        )

    cfg = ScenarioConfig(plant=plant, nodes=nodes, graph=graph)
    if "params" in by_name:
        e = _entries_dict(by_name["params"])

        def scalar(key, cast, default):
            if key not in e:
                return default
            return _cast(e[key][0], key, e[key][1], cast)

        cfg.params = SynthesisParams(
            rho=scalar("rho", float, cfg.params.rho),
            delta=scalar("delta", float, cfg.params.delta),
            delta_pd=scalar("delta_pd", float, cfg.params.delta_pd),
        )
        cfg.c = scalar("c", float, cfg.c)
        if "beta" in e:
            lineno, value = e["beta"]
            parts = value.split()
            if len(parts) != 2 or parts[0] not in ("fixed", "optimize"):
                raise ConfigError(f"line {lineno}: beta must be 'fixed V' or 'optimize V0'")
            cfg.beta_mode = parts[0]
            cfg.beta_value = float(parts[1])
        cfg.mode = scalar("mode", str, cfg.mode)
        if cfg.mode not in ("full", "neighborhood"):
            raise ConfigError(f"unknown copy-set mode {cfg.mode!r}")
        cfg.consensus = scalar("consensus", str, cfg.consensus)
        cfg.max_iter = scalar("max_iter", int, cfg.max_iter)
        cfg.tol = scalar("tol", float, cfg.tol)
        cfg.seed = scalar("seed", int, cfg.seed)
        if "pad_disturbances" in e:
            lineno, value = e["pad_disturbances"]
            parts = value.split()
            if parts[0] == "on":
                cfg.pad_eps = float(parts[1]) if len(parts) > 1 else 1e-6
            elif parts[0] != "off":
                raise ConfigError(f"line {lineno}: pad_disturbances is 'on [eps]' or 'off'")

    if "simulation" in by_name:
        e = _entries_dict(by_name["simulation"])
        sim = SimulationSpec()
        if "T" in e:
            sim.horizon = _cast(e["T"][0], "T", e["T"][1], float)
        if "dt" in e:
            sim.dt = _cast(e["dt"][0], "dt", e["dt"][1], float)
        if "x0" in e:
            sim.x0 = _rows_to_matrix(e["x0"][1], e["x0"][0], "x0", base_dir).ravel()
        if "battery" in e:
            sim.battery = _cast(e["battery"][0], "battery", e["battery"][1], int)
        if "xi" in e:
            sim.xi = _spec_tuple(e["xi"][1], e["xi"][0], "xi")
        if "eta" in e:
            sim.eta = _spec_tuple(e["eta"][1], e["eta"][0], "eta")
        if "decay_T" in e:
            sim.decay_horizon = _cast(e["decay_T"][0], "decay_T", e["decay_T"][1], float)
        if "decay_runs" in e:
            sim.decay_runs = _cast(e["decay_runs"][0], "decay_runs", e["decay_runs"][1], int)
        cfg.sim = sim
    return cfg


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
