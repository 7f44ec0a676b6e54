"""Value iteration for the optimal stopping problem on a simplex grid.

The optimal cost-to-go V solves V = min(h, c*(1 - pi_0) + T V) where T is
the one-step expectation operator of the posterior chain.  We approximate V
on a regular lattice of the simplex: nodes are the rational points k/Q with
k a nonnegative integer vector summing to Q, and functions are extended off
the nodes by barycentric interpolation over a Kuhn (union-jack) subdivision
of the lattice cells.  Because updating every node's posterior lands on
points whose interpolation stencils never change, the whole sweep collapses
to one sparse matrix-vector product.

The sweep count needed for a target accuracy comes with a guarantee: the
N-sweep table overshoots the fixed point by at most (|h|^2/c + |h|/p)/N in
sup norm, where |h| is the largest value of the stopping cost over the
simplex.  Iteration stops when either the sup-norm change or that bound
drops below the tolerance.

Lattice interpolation notes.  Kuhn subdivision on raw simplex coordinates
can place a query's stencil outside the simplex; we therefore triangulate
in cumulative coordinates v_i = Q * sum(pi_j for j >= i), i = 1..M, where
the simplex becomes the monotone staircase Q >= v_1 >= ... >= v_M >= 0 and
the standard floor/sort construction stays inside it (zero-weight stencil
corners are the only ones that may fall outside, and those are discarded).
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
from scipy.optimize import linprog

from .model import ProblemSpec, spec_from_dict, spec_to_dict
from .posterior import d_vector, h_costs

__all__ = [
    "GridSizeError",
    "SimplexGrid",
    "ValueTable",
    "build_grid",
    "interpolate",
    "interpolate_many",
    "transition_matrix",
    "stopping_cost_sup",
    "apply_T",
    "apply_M",
    "value_iterate",
    "save_table",
    "load_table",
]

#: Refuse to build grids beyond this many nodes (memory guard).
DEFAULT_MAX_NODES = 3_000_000

#: Lattice-unit tolerance for snapping near-integer cumulative coordinates.
SNAP_TOL = 1e-9

_MAGIC = b"CDVT"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIId8sdddB")


class GridSizeError(ValueError):
    """Requested discretization exceeds the configured node budget."""


@dataclass(frozen=True)
class SimplexGrid:
    """Regular lattice discretization of the M-dimensional simplex.

    Attributes:
        M: simplex dimension (posteriors have M+1 coordinates).
        Q: lattice resolution; node coordinates are multiples of 1/Q.
        lattice: integer coordinates, shape (n_nodes, M+1), rows summing
            to Q, in ascending lexicographic order.
        nodes: lattice / Q as float64.
        lookup: dense index array of shape (Q+1,)*M mapping the tail
            coordinates (k_1, ..., k_M) to the node id (k_0 is implied).
    """

    M: int
    Q: int
    lattice: np.ndarray
    nodes: np.ndarray
    lookup: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.lattice.shape[0]


def _compositions(total: int, parts: int) -> np.ndarray:
    """Nonnegative integer vectors of length ``parts`` summing to ``total``,
    in ascending lexicographic order."""
    if parts == 1:
        return np.array([[total]], dtype=np.int32)
    blocks = []
    for first in range(total + 1):
        tail = _compositions(total - first, parts - 1)
        head = np.full((tail.shape[0], 1), first, dtype=np.int32)
        blocks.append(np.hstack([head, tail]))
    return np.vstack(blocks)


def build_grid(M: int, Q: int, max_nodes: int = DEFAULT_MAX_NODES) -> SimplexGrid:
    """Enumerate the lattice {k/Q} on the M-simplex.

    Raises:
        GridSizeError: if C(Q+M, M) exceeds ``max_nodes``.
    """
    if M < 1 or Q < 1:
        raise ValueError(f"need M >= 1 and Q >= 1, got M={M}, Q={Q}")
    count = math.comb(Q + M, M)
    if count > max_nodes:
        raise GridSizeError(
            f"grid M={M}, Q={Q} has {count} nodes, over the cap {max_nodes}"
        )
    lattice = _compositions(Q, M + 1)
    nodes = lattice.astype(np.float64) / Q
    lookup = np.full((Q + 1,) * M, -1, dtype=np.int32)
    lookup[tuple(lattice[:, j] for j in range(1, M + 1))] = np.arange(
        count, dtype=np.int32
    )
    lattice.setflags(write=False)
    nodes.setflags(write=False)
    lookup.setflags(write=False)
    return SimplexGrid(M=M, Q=Q, lattice=lattice, nodes=nodes, lookup=lookup)


def _stencil(grid: SimplexGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interpolation stencils for a batch of simplex points.

    :param points: array of shape (n, M+1) of simplex coordinates.
    :return: (node ids of shape (n, M+1), barycentric weights of the same
        shape); weights are nonnegative and sum to 1 per row.
    """
    M, Q = grid.M, grid.Q
    n = points.shape[0]

    # Cumulative tail sums, scaled to lattice units, then forced into the
    # monotone staircase that the triangulation lives on.
    v = np.cumsum(points[:, ::-1], axis=1)[:, ::-1][:, 1:] * Q
    nearest = np.rint(v)
    v = np.where(np.abs(v - nearest) <= SNAP_TOL, nearest, v)
    v = np.clip(v, 0.0, Q)
    v = np.minimum.accumulate(v, axis=1)

    base = np.floor(v).astype(np.int64)
    frac = v - base

    order = np.argsort(-frac, axis=1, kind="stable")
    frac_sorted = np.take_along_axis(frac, order, axis=1)

    weights = np.empty((n, M + 1))
    weights[:, 0] = 1.0 - frac_sorted[:, 0]
    if M > 1:
        weights[:, 1:M] = frac_sorted[:, : M - 1] - frac_sorted[:, 1:]
    weights[:, M] = frac_sorted[:, M - 1]

    corners = np.empty((n, M + 1, M), dtype=np.int64)
    corners[:, 0, :] = base
    bump = np.zeros((n, M), dtype=np.int64)
    rows = np.arange(n)
    for t in range(M):
        bump[rows, order[:, t]] += 1
        corners[:, t + 1, :] = base + bump

    # Zero-weight corners may step outside the staircase; remap them to the
    # (always valid) base corner so the lookup below cannot go out of range.
    corners = np.where(weights[:, :, None] > 0.0, corners, base[:, None, :])

    tail = np.empty((n, M + 1, M), dtype=np.int64)
    if M > 1:
        tail[:, :, : M - 1] = corners[:, :, : M - 1] - corners[:, :, 1:]
    tail[:, :, M - 1] = corners[:, :, M - 1]

    ids = grid.lookup[tuple(tail[:, :, j] for j in range(M))]
    if ids.min() < 0:
        raise RuntimeError("interpolation stencil left the simplex lattice")
    return ids, weights


def interpolate_many(
    grid: SimplexGrid, values: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Piecewise-linear interpolation of per-node values at many points."""
    ids, weights = _stencil(grid, np.atleast_2d(points))
    return np.einsum("nk,nk->n", values[ids], weights)


def interpolate(table: "ValueTable", pi: np.ndarray) -> float:
    """Interpolated table value at a single posterior."""
    return float(interpolate_many(table.grid, table.values, pi[None, :])[0])


def transition_matrix(
    spec: ProblemSpec, grid: SimplexGrid
) -> scipy.sparse.csr_matrix:
    """One-step expectation operator restricted to the grid.

    Row k holds, for every symbol with positive predictive probability at
    node k, that probability spread over the interpolation stencil of the
    updated posterior.  Rows sum to 1, so (T f) at the nodes is one sparse
    product, and constants are reproduced exactly.
    """
    nodes = grid.nodes
    n = grid.n_nodes
    rows, cols, vals = [], [], []
    growth = nodes[:, :1] * spec.p * spec.nu[None, :]
    for x in range(spec.alphabet_size):
        num = np.empty_like(nodes)
        num[:, 0] = (1.0 - spec.p) * nodes[:, 0] * spec.f[0, x]
        num[:, 1:] = (nodes[:, 1:] + growth) * spec.f[1:, x][None, :]
        total = num.sum(axis=1)
        live = total > 0.0
        if not np.any(live):
            continue
        updated = num[live] / total[live, None]
        ids, weights = _stencil(grid, updated)
        k = ids.shape[1]
        rows.append(np.repeat(np.flatnonzero(live), k))
        cols.append(ids.ravel())
        vals.append((total[live, None] * weights).ravel())
    T = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return T.tocsr()


def stopping_cost_sup(spec: ProblemSpec) -> float:
    """Largest value of the stopping cost h over the whole simplex.

    h is a minimum of affine functions, hence concave, so its maximum need
    not sit at a simplex corner; it is the value of the small linear
    program max t subject to t <= h_j(pi) for all j and pi in the simplex.
    """
    M = spec.num_types
    # Variables (pi_0 .. pi_M, t); maximize t.
    c_obj = np.zeros(M + 2)
    c_obj[-1] = -1.0
    A_ub = np.hstack([-spec.a.T, np.ones((M, 1))])  # t - h_j(pi) <= 0
    b_ub = np.zeros(M)
    A_eq = np.hstack([np.ones((1, M + 1)), np.zeros((1, 1))])
    b_eq = np.ones(1)
    bounds = [(0.0, 1.0)] * (M + 1) + [(None, None)]
    res = linprog(c_obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds)
    if not res.success:
        raise RuntimeError(f"stopping-cost LP failed: {res.message}")
    return float(-res.fun)


@dataclass
class ValueTable:
    """Result of value iteration on a grid.

    ``values`` approximates the optimal cost-to-go at the nodes; ``labels``
    holds the induced action per node (0 = continue, j = stop and announce
    type j, 1-based), computed at ``stop_tol``.  ``continuation`` caches the
    final continuation costs c*(1-pi_0) + (T V) when available in memory;
    it is not persisted and is None after loading a table from disk.
    """

    grid: SimplexGrid
    values: np.ndarray
    labels: np.ndarray
    iterations: int
    sup_change: float
    error_bound: float
    tol: float
    criterion: str
    converged: bool
    stop_tol: float
    continuation: np.ndarray | None = field(default=None, repr=False)


def apply_T(spec: ProblemSpec, table: ValueTable, pi: np.ndarray) -> float:
    """One-step expected table value after observing one more symbol."""
    total = 0.0
    for x in range(spec.alphabet_size):
        d = d_vector(spec, pi, x)
        if d[-1] > 0.0:
            total += d[-1] * interpolate(table, d[:-1] / d[-1])
    return total


def apply_M(
    spec: ProblemSpec, table: ValueTable, pi: np.ndarray
) -> tuple[float, int | None]:
    """One dynamic-programming backup at ``pi``.

    :return: (backed-up value, action) where action is None to continue or
        the 1-based type to announce.  Ties go to stopping.
    """
    _, h, j = h_costs(spec, pi)
    cont = spec.c * (1.0 - pi[0]) + apply_T(spec, table, pi)
    if h <= cont:
        return h, j + 1
    return cont, None


def value_iterate(
    spec: ProblemSpec,
    grid: SimplexGrid,
    tol: float = 1e-4,
    max_iter: int = 100_000,
) -> ValueTable:
    """Iterate the backup operator from V = h until convergence.

    Stops when the sup-norm sweep change drops below ``tol`` (criterion
    "delta"), when the a priori truncation bound (|h|^2/c + |h|/p)/N drops
    below ``tol`` (criterion "bound"), or at ``max_iter`` sweeps (criterion
    "max_iter", table flagged not converged but still returned).

    Per-node values are non-increasing across sweeps; this is a property of
    the exact operator that could be broken at rounding scale by the sparse
    product, so each sweep is clamped by the previous one.
    """
    if tol <= 0.0:
        raise ValueError(f"tol={tol} must be positive")
    if max_iter < 1:
        raise ValueError(f"max_iter={max_iter} must be at least 1")

    nodes = grid.nodes
    h_all = nodes @ spec.a
    h = h_all.min(axis=1)
    delay = spec.c * (1.0 - nodes[:, 0])
    T = transition_matrix(spec, grid)

    sup_h = stopping_cost_sup(spec)
    bound_const = sup_h * sup_h / spec.c + sup_h / spec.p

    V = h.copy()
    sup_change = math.inf
    criterion = "max_iter"
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        V_new = np.minimum(h, delay + T @ V)
        np.minimum(V_new, V, out=V_new)
        sup_change = float(np.max(np.abs(V - V_new)))
        V = V_new
        if sup_change < tol:
            criterion = "delta"
            converged = True
            break
        if bound_const / sweeps < tol:
            criterion = "bound"
            converged = True
            break

    continuation = delay + T @ V
    stop_tol = sup_change if math.isfinite(sup_change) else tol
    labels = np.where(
        h <= continuation + stop_tol, h_all.argmin(axis=1) + 1, 0
    ).astype(np.int8)

    return ValueTable(
        grid=grid,
        values=V,
        labels=labels,
        iterations=sweeps,
        sup_change=sup_change,
        error_bound=bound_const / max(sweeps, 1),
        tol=tol,
        criterion=criterion,
        converged=converged,
        stop_tol=stop_tol,
        continuation=continuation,
    )


# ---------------------------------------------------------------------------
# Persistence: binary table + JSON sidecar
# ---------------------------------------------------------------------------


def _sidecar_path(path: str) -> str:
    return path + ".json"


def save_table(table: ValueTable, spec: ProblemSpec, path: str) -> None:
    """Write the table to ``path`` and a JSON sidecar to ``path``.json.

    The binary layout is a fixed-size header followed by the node values as
    little-endian float64 in grid node order, then one action byte per
    node.  The sidecar duplicates the header fields and embeds the problem
    instance so downstream commands can run from the table alone.
    """
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        table.grid.M,
        table.grid.Q,
        spec.alphabet_size,
        table.iterations,
        table.tol,
        table.criterion.encode("ascii").ljust(8, b"\x00"),
        table.sup_change,
        table.error_bound,
        table.stop_tol,
        int(table.converged),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(table.values, dtype="<f8").tobytes())
        fh.write(np.asarray(table.labels, dtype=np.uint8).tobytes())
    sidecar = {
        "magic": _MAGIC.decode("ascii"),
        "version": _VERSION,
        "M": table.grid.M,
        "Q": table.grid.Q,
        "alphabet_size": spec.alphabet_size,
        "iterations": table.iterations,
        "tol": table.tol,
        "criterion": table.criterion,
        "sup_change": table.sup_change,
        "error_bound": table.error_bound,
        "stop_tol": table.stop_tol,
        "converged": table.converged,
        "n_nodes": table.grid.n_nodes,
        "model": spec_to_dict(spec),
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_table(path: str) -> tuple[ValueTable, ProblemSpec | None]:
    """Read a table written by save_table.

    Returns the table and, when the sidecar is readable, the problem
    instance it embeds (None otherwise; commands that need the model then
    fail with a clear message instead of guessing).
    """
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        (
            magic,
            version,
            M,
            Q,
            alphabet_size,
            iterations,
            tol,
            criterion_raw,
            sup_change,
            error_bound,
            stop_tol,
            converged,
        ) = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a value-table file (bad magic)")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        grid = build_grid(M, Q)
        n = grid.n_nodes
        values = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
        labels = np.frombuffer(fh.read(n), dtype=np.uint8).astype(np.int8)
        if values.shape[0] != n or labels.shape[0] != n:
            raise ValueError(f"{path}: truncated node data")

    table = ValueTable(
        grid=grid,
        values=values,
        labels=labels,
        iterations=iterations,
        sup_change=sup_change,
        error_bound=error_bound,
        tol=tol,
        criterion=criterion_raw.rstrip(b"\x00").decode("ascii"),
        converged=bool(converged),
        stop_tol=stop_tol,
    )
    spec = None
    sidecar = _sidecar_path(path)
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            doc = json.load(fh)
        if "model" in doc:
            spec = spec_from_dict(doc["model"])
    return table, spec
