"""Stopping-region extraction, structural checks, and plot-ready export.

A solved value table partitions the grid into a continuation set and one
stopping set per announceable type: stop at a node when the best terminal
cost h is no larger than the continuation cost there, announcing the type
with the smallest terminal cost.  The theory says each per-type stopping
set is convex, closed, non-empty, shrinks as the horizon grows, and
contains its own simplex corner; this module extracts the sets, verifies
those statements in their grid form, counts connected components (the
published figures differ qualitatively in exactly this), and exports rows
for plotting, including the planar embedding of the 2-type simplex and the
spatial embedding of the 3-type simplex.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from .model import ProblemSpec
from .solver import SimplexGrid, ValueTable, _stencil, build_grid, transition_matrix

__all__ = [
    "StoppingRegion",
    "extract_region",
    "check_region_properties",
    "embed",
    "export_region",
    "import_region",
    "boundary_nodes",
    "nearest_node",
    "corner_node",
]

_SQRT3 = math.sqrt(3.0)


@dataclass
class StoppingRegion:
    """Per-node stop/continue labeling induced by a value table.

    ``labels[k]`` is 0 to continue at node k, or the 1-based type to
    announce.  ``h_all`` and ``values`` are kept alongside for export and
    for relabeling at other tolerances.
    """

    grid: SimplexGrid
    labels: np.ndarray
    values: np.ndarray
    h_all: np.ndarray
    N_used: int
    stop_tol: float

    def mask(self, j: int) -> np.ndarray:
        """Boolean node mask of the stopping set for type ``j`` (1-based)."""
        return self.labels == j


def extract_region(
    spec: ProblemSpec, table: ValueTable, stop_tol: float | None = None
) -> StoppingRegion:
    """Label every grid node stop/continue against the table's values.

    A node stops when h(node) <= c*(1 - pi_0) + (T V)(node) + stop_tol; the
    tolerance (defaulting to the table's final sweep change) absorbs the
    fact that V is itself only tol-converged.  Ties go to stopping and the
    announced type is the smallest index attaining the minimum of h.
    """
    if stop_tol is None:
        stop_tol = table.stop_tol
    grid = table.grid
    h_all = grid.nodes @ spec.a
    h = h_all.min(axis=1)
    cont = table.continuation
    if cont is None:
        delay = spec.c * (1.0 - grid.nodes[:, 0])
        cont = delay + transition_matrix(spec, grid) @ table.values
    labels = np.where(h <= cont + stop_tol, h_all.argmin(axis=1) + 1, 0).astype(
        np.int8
    )
    return StoppingRegion(
        grid=grid,
        labels=labels,
        values=table.values,
        h_all=h_all,
        N_used=table.iterations,
        stop_tol=float(stop_tol),
    )


def corner_node(grid: SimplexGrid, coord: int) -> int:
    """Node id of the simplex corner with all mass on ``coord``."""
    tail = [0] * grid.M
    if coord > 0:
        tail[coord - 1] = grid.Q
    return int(grid.lookup[tuple(tail)])


def nearest_node(grid: SimplexGrid, pi: np.ndarray) -> int:
    """Node id carrying the largest barycentric weight for ``pi``."""
    ids, weights = _stencil(grid, np.atleast_2d(pi))
    return int(ids[0, int(np.argmax(weights[0]))])


def _neighbor_ids(grid: SimplexGrid) -> np.ndarray:
    """Lattice neighbors of every node along directions e_a - e_b.

    Returns an int32 array of shape (n_nodes, (M+1)*M) with -1 where the
    step leaves the simplex.
    """
    lattice = grid.lattice
    M, Q = grid.M, grid.Q
    cols = []
    for a in range(M + 1):
        for b in range(M + 1):
            if a == b:
                continue
            valid = (lattice[:, a] <= Q - 1) & (lattice[:, b] >= 1)
            shifted = lattice[valid].astype(np.int64)
            shifted[:, a] += 1
            shifted[:, b] -= 1
            ids = np.full(grid.n_nodes, -1, dtype=np.int32)
            ids[valid] = grid.lookup[tuple(shifted[:, j] for j in range(1, M + 1))]
            cols.append(ids)
    return np.stack(cols, axis=1)


def _component_count(grid: SimplexGrid, mask: np.ndarray, neighbors: np.ndarray) -> int:
    """Number of connected components of the masked node set under lattice
    adjacency (steps of the form e_a - e_b)."""
    ids = np.flatnonzero(mask)
    if ids.size == 0:
        return 0
    renumber = np.full(grid.n_nodes, -1, dtype=np.int64)
    renumber[ids] = np.arange(ids.size)
    nbr = neighbors[ids]
    ok = nbr >= 0
    ok[ok] = mask[nbr[ok]]
    rows = np.repeat(np.arange(ids.size), ok.sum(axis=1))
    cols = renumber[nbr[ok]]
    adj = scipy.sparse.coo_matrix(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)),
        shape=(ids.size, ids.size),
    ).tocsr()
    count, _ = connected_components(adj, directed=False)
    return int(count)


def check_region_properties(
    region: StoppingRegion,
    region_coarser_N: StoppingRegion | None = None,
    max_pairs: int = 2000,
    seed: int = 0,
) -> dict:
    """Verify the structural claims about the stopping sets on the grid.

    Checks, per announceable type j: non-emptiness, containment of the
    corner node, connected-component count, and discrete convexity (lattice
    points on segments between sampled same-label node pairs carry the same
    label).  Convexity violations are split into strict ones, whose segment
    endpoints both lie strictly inside the stopping set, and boundary ones,
    which one lattice cell of labeling noise can explain.  Component counts
    are also reported for the union of all stopping sets and for the
    continuation set, since a figure may show the individual sets merging or
    pinching off a pocket of continuation nodes.  When a second region from
    a shorter horizon is given, also checks that every stopping node of the
    longer horizon stops in the shorter one.

    Returns a plain dict (JSON-ready); it reports rather than raises.
    """
    grid = region.grid
    M = grid.M
    neighbors = _neighbor_ids(grid)
    rng = np.random.default_rng(seed)
    report: dict = {
        "labels": {},
        "stopping_components": None,
        "continuation_components": None,
        "nested": None,
    }

    # A node is strictly inside its stopping set when every lattice
    # neighbor carries the same label.
    same = np.take(region.labels, np.where(neighbors >= 0, neighbors, 0))
    same = (same == region.labels[:, None]) | (neighbors < 0)
    interior = same.all(axis=1)

    for j in range(1, M + 1):
        mask = region.mask(j)
        ids = np.flatnonzero(mask)
        entry = {
            "nonempty": bool(ids.size > 0),
            "contains_corner": bool(mask[corner_node(grid, j)]),
            "num_components": _component_count(grid, mask, neighbors),
            "convexity_pairs": 0,
            "convexity_violations": 0,
            "strict_violations": 0,
        }
        if ids.size >= 2:
            total = ids.size * (ids.size - 1) // 2
            if total <= max_pairs:
                pairs = [
                    (u, w) for i, u in enumerate(ids) for w in ids[i + 1 :]
                ]
            else:
                pick = rng.integers(0, ids.size, size=(max_pairs, 2))
                pairs = [(ids[u], ids[w]) for u, w in pick if u != w]
            violations = 0
            strict = 0
            for u, w in pairs:
                diff = grid.lattice[w].astype(np.int64) - grid.lattice[u]
                g = int(np.gcd.reduce(np.abs(diff)))
                bad = False
                for m in range(1, g):
                    point = grid.lattice[u] + (diff // g) * m
                    pid = int(grid.lookup[tuple(point[1:])])
                    if region.labels[pid] != j:
                        bad = True
                        break
                if bad:
                    violations += 1
                    if interior[u] and interior[w]:
                        strict += 1
            entry["convexity_pairs"] = len(pairs)
            entry["convexity_violations"] = violations
            entry["strict_violations"] = strict
        report["labels"][j] = entry

    report["stopping_components"] = _component_count(
        grid, region.labels > 0, neighbors
    )
    report["continuation_components"] = _component_count(
        grid, region.labels == 0, neighbors
    )

    if region_coarser_N is not None:
        if region_coarser_N.grid.Q != grid.Q or region_coarser_N.grid.M != M:
            raise ValueError("nestedness check requires regions on one grid")
        bad = 0
        for j in range(1, M + 1):
            bad += int(np.sum(region.mask(j) & ~region_coarser_N.mask(j)))
        report["nested"] = {
            "ok": bad == 0,
            "violations": bad,
            "N_fine": region.N_used,
            "N_coarse": region_coarser_N.N_used,
        }
    return report


def embed(pi: np.ndarray, M: int | None = None) -> np.ndarray:
    """Map simplex points into the plane (M=2) or space (M=3) for plotting.

    The 2-type simplex goes to the equilateral triangle with corners
    (0,0), (2/sqrt(3),0), (1/sqrt(3),1); the 3-type simplex to a regular
    tetrahedron.  Both maps preserve Euclidean distances up to the common
    scale used by the polar boundary representation.

    Accepts a single point of shape (M+1,) or a batch of shape (n, M+1).
    """
    arr = np.asarray(pi, dtype=np.float64)
    single = arr.ndim == 1
    P = np.atleast_2d(arr)
    if M is None:
        M = P.shape[1] - 1
    if M == 2:
        out = np.stack([(2.0 * P[:, 1] + P[:, 2]) / _SQRT3, P[:, 2]], axis=1)
    elif M == 3:
        u = math.sqrt(1.5)
        w = math.sqrt(0.5)
        out = np.stack(
            [
                u * (P[:, 1] + 0.5 * P[:, 2] + 0.5 * P[:, 3]),
                w * (1.5 * P[:, 2] + 0.5 * P[:, 3]),
                P[:, 3],
            ],
            axis=1,
        )
    else:
        raise ValueError(f"embedding defined for 2 or 3 types, not M={M}")
    return out[0] if single else out


def boundary_nodes(region: StoppingRegion, j: int) -> np.ndarray:
    """Stop(j) nodes with at least one continuation neighbor, ascending."""
    neighbors = _neighbor_ids(region.grid)
    mask = region.mask(j)
    nbr_labels = np.take(region.labels, np.where(neighbors >= 0, neighbors, 0))
    touches_cont = ((nbr_labels == 0) & (neighbors >= 0)).any(axis=1)
    return np.flatnonzero(mask & touches_cont)


# ---------------------------------------------------------------------------
# CSV export / import
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_region(region: StoppingRegion, path: str, fmt: str = "embedded") -> None:
    """Write one CSV row per node, in node order.

    ``fmt`` is "embedded" (adds plot coordinates, M must be 2 or 3) or
    "raw" (lattice and simplex coordinates only, any M).  The first line is
    a comment carrying the grid shape and extraction parameters so the file
    round-trips through import_region.
    """
    grid = region.grid
    M = grid.M
    if fmt not in ("embedded", "raw"):
        raise ValueError(f"unknown export format {fmt!r}")
    if fmt == "embedded" and M not in (2, 3):
        raise ValueError(f"embedded export needs 2 or 3 types, grid has M={M}")

    coords = embed(grid.nodes, M) if fmt == "embedded" else None
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# changediag-region M={M} Q={grid.Q} N={region.N_used} "
            f"stop_tol={_fmt(region.stop_tol)} format={fmt}\n"
        )
        writer = csv.writer(fh)
        header = [f"k{i}" for i in range(M + 1)]
        header += [f"pi{i}" for i in range(M + 1)]
        if fmt == "embedded":
            header += ["x", "y", "z"][: M if M == 3 else 2]
        header += ["label", "value", "h"]
        header += [f"h{j}" for j in range(1, M + 1)]
        writer.writerow(header)
        h = region.h_all.min(axis=1)
        for k in range(grid.n_nodes):
            row = [str(int(v)) for v in grid.lattice[k]]
            row += [_fmt(v) for v in grid.nodes[k]]
            if coords is not None:
                row += [_fmt(v) for v in coords[k]]
            row += [str(int(region.labels[k])), _fmt(region.values[k]), _fmt(h[k])]
            row += [_fmt(v) for v in region.h_all[k]]
            writer.writerow(row)


def import_region(path: str) -> StoppingRegion:
    """Rebuild a StoppingRegion from an exported CSV."""
    with open(path, newline="") as fh:
        head = fh.readline()
        if not head.startswith("# changediag-region"):
            raise ValueError(f"{path}: not a region export")
        meta = dict(part.split("=", 1) for part in head[2:].split()[1:])
        M = int(meta["M"])
        Q = int(meta["Q"])
        grid = build_grid(M, Q)
        reader = csv.reader(fh)
        header = next(reader)
        col = {name: i for i, name in enumerate(header)}
        labels = np.zeros(grid.n_nodes, dtype=np.int8)
        values = np.zeros(grid.n_nodes)
        h_all = np.zeros((grid.n_nodes, M))
        for k, row in enumerate(reader):
            tail = tuple(int(row[col[f"k{i}"]]) for i in range(1, M + 1))
            node = int(grid.lookup[tail])
            if node != k:
                raise ValueError(f"{path}: rows out of node order at line {k + 3}")
            labels[k] = int(row[col["label"]])
            values[k] = float(row[col["value"]])
            for j in range(1, M + 1):
                h_all[k, j - 1] = float(row[col[f"h{j}"]])
    return StoppingRegion(
        grid=grid,
        labels=labels,
        values=values,
        h_all=h_all,
        N_used=int(meta["N"]),
        stop_tol=float(meta["stop_tol"]),
    )
