"""Exact static solve of the PDN conductance system.

Voltage sources are enforced by node elimination (fixed node voltages),
which keeps the reduced system a symmetric positive definite weighted
graph Laplacian. Small systems go through a sparse direct factorization;
large ones use Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .spice import Element, ElementKind, NodeRef, PdnNetlist

DIRECT_SOLVE_LIMIT = 10_000  # unknowns below this go through sparse LU


class SolverError(Exception):
    pass


class FloatingSubgraph(SolverError):
    def __init__(self, nodes: list[NodeRef]):
        preview = ", ".join(n.name() for n in nodes[:5])
        super().__init__(f"{len(nodes)} node(s) with no resistive path to a "
                         f"fixed voltage: {preview}")
        self.nodes = nodes


class NoConvergence(SolverError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"CG stalled after {iterations} iterations, "
                         f"residual {residual:.3e} V")
        self.iterations = iterations
        self.residual = residual


class UnsupportedSource(SolverError):
    pass


@dataclass(frozen=True)
class NodeSolution:
    voltages: np.ndarray  # indexed by netlist node index, volts
    ir_drop: np.ndarray  # supply(component) - voltage, volts
    supply: float  # reference rail voltage (max over sources)
    residual_inf_norm: float


def _fixed_voltages(nl: PdnNetlist) -> dict[int, float]:
    """Ground plus every voltage-source terminal, as node-index -> volts."""
    fixed: dict[int, float] = {}
    for ref, i in nl.node_index.items():
        if ref.is_ground:
            fixed[i] = 0.0
    for e in nl.elements_of(ElementKind.VOLTAGE_SOURCE):
        # V a b val constrains v(a) - v(b) = val; one terminal must be ground.
        if e.b.is_ground:
            fixed[nl.node_index[e.a]] = e.value
        elif e.a.is_ground:
            fixed[nl.node_index[e.b]] = -e.value
        else:
            raise UnsupportedSource(
                f"voltage source {e.name!r} has no ground terminal")
    return fixed


def assemble_system(nl: PdnNetlist):
    """Build the reduced SPD system over non-fixed nodes.

    Returns (G, rhs, unknowns, fixed) where `unknowns` maps reduced row
    -> netlist node index and `fixed` maps node index -> volts.
    """
    fixed = _fixed_voltages(nl)
    n_nodes = len(nl.node_index)
    unknowns = [i for i in range(n_nodes) if i not in fixed]
    reduced = {node: row for row, node in enumerate(unknowns)}
    n = len(unknowns)

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs = np.zeros(n)

    for e in nl.elements:
        ia, ib = nl.node_index[e.a], nl.node_index[e.b]
        if e.kind == ElementKind.RESISTOR:
            g = 1.0 / e.value
            for u, v in ((ia, ib), (ib, ia)):
                if u in fixed:
                    continue
                ru = reduced[u]
                rows.append(ru)
                cols.append(ru)
                vals.append(g)
                if v in fixed:
                    rhs[ru] += g * fixed[v]
                else:
                    rows.append(ru)
                    cols.append(reduced[v])
                    vals.append(-g)
        elif e.kind == ElementKind.CURRENT_SOURCE:
            # `I name a b val` draws val amperes out of a into b.
            if ia not in fixed:
                rhs[reduced[ia]] -= e.value
            if ib not in fixed:
                rhs[reduced[ib]] += e.value

    G = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    # Singularity check: every unknown needs a resistive path to a fixed node.
    floating = _floating_nodes(nl, fixed)
    if floating:
        return_names = sorted(floating)
        refs = list(nl.node_index)
        raise FloatingSubgraph([refs[i] for i in return_names])
    return G, rhs, unknowns, fixed


def _resistor_adjacency(nl: PdnNetlist) -> sp.csr_matrix:
    n = len(nl.node_index)
    rows, cols = [], []
    for e in nl.elements_of(ElementKind.RESISTOR):
        ia, ib = nl.node_index[e.a], nl.node_index[e.b]
        rows += [ia, ib]
        cols += [ib, ia]
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

def _floating_nodes(nl: PdnNetlist, fixed: dict[int, float]) -> list[int]:
    adj = _resistor_adjacency(nl)
    n_comp, labels = connected_components(adj, directed=False)
    anchored = {labels[i] for i in fixed}
    return [i for i in range(adj.shape[0])
            if labels[i] not in anchored and i not in fixed]


def _jacobi_pcg(G: sp.csr_matrix, rhs: np.ndarray, tol: float,
                max_iter: int) -> np.ndarray:
    """Deterministic Jacobi-preconditioned CG, inf-norm stopping rule."""
    inv_diag = 1.0 / G.diagonal()
    x = np.zeros_like(rhs)
    r = rhs - G @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return x
        Gp = G @ p
        alpha = rz / (p @ Gp)
        x += alpha * p
        r -= alpha * Gp
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.max(np.abs(rhs - G @ x)))
    if res > tol:
        raise NoConvergence(max_iter, res)
    return x


def _component_supplies(nl: PdnNetlist, fixed: dict[int, float]) -> np.ndarray:
    """Per-node rail voltage: max source value in the node's resistive component."""
    adj = _resistor_adjacency(nl)
    n = adj.shape[0]
    _, labels = connected_components(adj, directed=False)
    comp_supply: dict[int, float] = {}
    source_nodes = set()
    for e in nl.elements_of(ElementKind.VOLTAGE_SOURCE):
        term = e.a if not e.a.is_ground else e.b
        source_nodes.add(nl.node_index[term])
    for i in source_nodes:
        lab = labels[i]
        comp_supply[lab] = max(comp_supply.get(lab, -math.inf), fixed[i])
    return np.array([comp_supply.get(labels[i], 0.0) for i in range(n)])


def solve_static(nl: PdnNetlist, tol: float = 1e-9,
                 max_iter: int | None = None) -> NodeSolution:
    G, rhs, unknowns, fixed = assemble_system(nl)
    n = len(unknowns)
    if n == 0:
        x = np.zeros(0)
    elif n < DIRECT_SOLVE_LIMIT:
        lu = spla.splu(G.tocsc())
        x = lu.solve(rhs)
    else:
        if max_iter is None:
            max_iter = int(20 * math.sqrt(n)) + 10
        x = _jacobi_pcg(G, rhs, tol, max_iter)
    residual = float(np.max(np.abs(rhs - G @ x))) if n else 0.0
    if residual > tol:
        # one Jacobi-CG polish pass on top of the factorization result
        x = _jacobi_pcg(G, rhs, tol, int(20 * math.sqrt(n)) + 10)
        residual = float(np.max(np.abs(rhs - G @ x)))

    voltages = np.zeros(len(nl.node_index))
    for i, v in fixed.items():
        voltages[i] = v
    for row, i in enumerate(unknowns):
        voltages[i] = x[row]

    supplies = _component_supplies(nl, fixed)
    ir_drop = supplies - voltages
    # ground and source-free components carry no meaningful drop
    for ref, i in nl.node_index.items():
        if ref.is_ground:
            ir_drop[i] = 0.0
    return NodeSolution(voltages=voltages, ir_drop=ir_drop,
                        supply=float(supplies.max(initial=0.0)),
                        residual_inf_norm=residual)


def verify_kcl(nl: PdnNetlist, sol: NodeSolution) -> float:
    """Max KCL residual over non-fixed nodes, recomputed element by element.

    Independent of assemble_system: walks the element list and sums branch
    currents by Ohm's law plus source injections.
    """
    fixed = _fixed_voltages(nl)
    n = len(nl.node_index)
    net_current = np.zeros(n)  # net current flowing OUT of each node
    v = sol.voltages
    for e in nl.elements:
        ia, ib = nl.node_index[e.a], nl.node_index[e.b]
        if e.kind == ElementKind.RESISTOR:
            i_ab = (v[ia] - v[ib]) / e.value
            net_current[ia] += i_ab
            net_current[ib] -= i_ab
        elif e.kind == ElementKind.CURRENT_SOURCE:
            net_current[ia] += e.value
            net_current[ib] -= e.value
    residuals = [abs(net_current[i]) for i in range(n) if i not in fixed]
    return max(residuals, default=0.0)


def node_report_csv(nl: PdnNetlist, sol: NodeSolution) -> str:
    """CSV node report: layer,x_nm,y_nm,voltage,ir_drop, sorted by node index."""
    lines = ["layer,x_nm,y_nm,voltage,ir_drop"]
    for ref, i in nl.node_index.items():
        lines.append(f"{ref.layer},{ref.x},{ref.y},"
                     f"{float(sol.voltages[i])!r},{float(sol.ir_drop[i])!r}")
    return "\n".join(lines) + "\n"
