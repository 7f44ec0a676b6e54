"""Compressed stopping-set boundaries for fast online membership.

Deciding whether the running posterior sits in a stopping set by value
interpolation requires the whole table at query time.  For the 2-type
problem the stopping sets are star-shaped around their own corners, so
each boundary compresses to a single function r = g_j(beta): the distance
from the corner to the boundary, as a function of the angle at which the
posterior is seen from that corner, both measured in the plane embedding
of the simplex.  A posterior is then in the stopping set of its own best
decision exactly when its radius is below the fitted curve, and the online
check costs one angle, one spline evaluation, and one comparison.

The squared corner distance has a closed form in the simplex coordinates:
r_i(pi)^2 = c_M * ((1 + sum(pi^2))/2 - pi_i), with c_M = 4/3 for two types
and 3/2 for three.  Angles are arcsin(pi_j / r_i) for designated
coordinates j, one per remaining degree of freedom; the designation is a
fixed convention recorded with every fitted boundary.

Curves are penalized least-squares cubic splines: minimize the sum of
squared residuals plus lambda times the integrated squared second
derivative, over splines on K uniform segments spanning the samples.  The
basis is the clamped cubic B-spline family (K+3 functions); the roughness
matrix is exact (two-point Gauss quadrature on each segment integrates the
piecewise-quadratic integrand exactly).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

import numpy as np
from scipy.interpolate import BSpline

from .model import ProblemSpec
from .posterior import h_costs
from .regions import StoppingRegion, boundary_nodes

__all__ = [
    "DegenerateCorner",
    "InsufficientBoundary",
    "PolarPoint",
    "SplineBoundary",
    "corner_radius",
    "to_polar",
    "from_polar",
    "boundary_samples",
    "fit_spline",
    "fit_boundary",
    "evaluate_boundary",
    "fast_member",
    "is_concave",
    "save_boundary",
    "save_boundaries",
    "load_boundaries",
]

#: Scale constants of the distance form, per simplex dimension M.
C_M = {2: 4.0 / 3.0, 3: 1.5}

#: Smoothing-parameter grid searched by cross-validation.
LAMBDA_GRID = np.logspace(-9.0, 1.0, 21)


class DegenerateCorner(ValueError):
    """Polar coordinates requested at the corner itself (radius zero)."""


class InsufficientBoundary(ValueError):
    """Too few boundary samples to determine the spline basis."""


@dataclass(frozen=True)
class PolarPoint:
    """A posterior seen from one simplex corner.

    ``beta`` holds arcsin(pi_j / r) for each designated coordinate j; the
    designation drops the largest non-corner index (for M=2 this leaves
    the single coordinate (corner+2) mod 3).
    """

    corner: int
    r: float
    beta: tuple[float, ...]


def _designated(M: int, corner: int) -> tuple[list[int], int]:
    """Coordinates encoded as angles, and the coordinate left implicit."""
    if M == 2:
        keep = [(corner + 2) % 3]
        dropped = 3 - corner - keep[0]
    elif M == 3:
        others = sorted(set(range(4)) - {corner})
        keep, dropped = others[:2], others[2]
    else:
        raise ValueError(f"polar coordinates defined for 2 or 3 types, not M={M}")
    return keep, dropped


def corner_radius(pi: np.ndarray, corner: int) -> float:
    """Embedded Euclidean distance from ``pi`` to the corner."""
    pi = np.asarray(pi, dtype=np.float64)
    M = pi.shape[-1] - 1
    sq = (1.0 + np.sum(pi * pi, axis=-1)) / 2.0 - pi[..., corner]
    return np.sqrt(C_M[M] * np.maximum(sq, 0.0))


def to_polar(pi: np.ndarray, corner: int) -> PolarPoint:
    """Express a posterior as (radius, angles) at one corner.

    Raises:
        DegenerateCorner: at the corner itself, where angles are undefined.
    """
    pi = np.asarray(pi, dtype=np.float64)
    M = pi.shape[0] - 1
    keep, _ = _designated(M, corner)
    r = float(corner_radius(pi, corner))
    if r <= 0.0:
        raise DegenerateCorner(f"posterior sits at corner {corner}")
    beta = tuple(float(np.arcsin(min(max(pi[j] / r, 0.0), 1.0))) for j in keep)
    return PolarPoint(corner=corner, r=r, beta=beta)


def from_polar(point: PolarPoint) -> np.ndarray:
    """Invert to_polar.

    The designated coordinates come straight from the angles; the corner
    coordinate solves a quadratic whose smaller root is the only one inside
    the simplex, and the dropped coordinate takes the remaining mass.
    """
    M = len(point.beta) + 1
    keep, dropped = _designated(M, point.corner)
    pi = np.zeros(M + 1)
    if point.r <= 0.0:
        pi[point.corner] = 1.0
        return pi
    known = point.r * np.sin(np.asarray(point.beta))
    t = 1.0 - float(known.sum())
    q = float(np.dot(known, known))
    const = (t * t + 1.0 + q - 2.0 * point.r * point.r / C_M[M]) / 2.0
    disc = (t + 1.0) ** 2 - 4.0 * const
    u = ((t + 1.0) - np.sqrt(max(disc, 0.0))) / 2.0
    pi[keep] = known
    pi[point.corner] = u
    pi[dropped] = t - u
    np.clip(pi, 0.0, None, out=pi)
    return pi / pi.sum()


def boundary_samples(
    region: StoppingRegion, j: int, node_ids: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Polar samples (beta, r) of the type-j stopping boundary, beta-sorted.

    Samples are the Stop(j) nodes adjacent to the continuation set (or an
    explicit node subset, for held-out evaluation), seen from corner j.
    The corner node itself, should it ever surface as a boundary node, has
    no angle and is dropped.
    """
    if region.grid.M != 2:
        raise ValueError("boundary curves are defined for the 2-type problem")
    if node_ids is None:
        node_ids = boundary_nodes(region, j)
    keep, _ = _designated(2, j)
    pts = region.grid.nodes[node_ids]
    r = np.sqrt(
        C_M[2]
        * np.maximum((1.0 + np.sum(pts * pts, axis=1)) / 2.0 - pts[:, j], 0.0)
    )
    live = r > 0.0
    pts, r = pts[live], r[live]
    beta = np.arcsin(np.clip(pts[:, keep[0]] / r, 0.0, 1.0))
    order = np.argsort(beta, kind="stable")
    return beta[order], r[order]


# ---------------------------------------------------------------------------
# Penalized spline machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplineBoundary:
    """Fitted boundary curve r = g(beta) for one stopping set.

    ``knots`` are the K+1 uniform breakpoints of a K-segment clamped cubic
    spline, so ``coefficients`` has K+3 entries.  Outside the knot span the
    curve continues linearly from the end value and slope.
    """

    corner: int
    knots: np.ndarray
    coefficients: np.ndarray
    lam: float
    rms: float

    def __call__(self, beta):
        return evaluate_boundary(self, beta)


def _full_knots(breaks: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [np.repeat(breaks[0], 3), breaks, np.repeat(breaks[-1], 3)]
    )


def _design(t: np.ndarray, x: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Evaluate every cubic B-spline basis function (column) at ``x``."""
    nb = t.size - 4
    x = np.clip(x, t[0], t[-1])
    cols = np.empty((x.size, nb))
    for i in range(nb):
        coef = np.zeros(nb)
        coef[i] = 1.0
        spl = BSpline(t, coef, 3)
        if deriv:
            spl = spl.derivative(deriv)
        cols[:, i] = spl(x)
    return cols


def _curvature_rows(t: np.ndarray, breaks: np.ndarray) -> np.ndarray:
    """Quadrature root G of the roughness matrix (omega = G.T @ G).

    Two-point Gauss rows per segment integrate the piecewise-quadratic
    products of basis second derivatives exactly.
    """
    mid = (breaks[1:] + breaks[:-1]) / 2.0
    half = (breaks[1:] - breaks[:-1]) / 2.0
    g = 1.0 / np.sqrt(3.0)
    xs = np.concatenate([mid - half * g, mid + half * g])
    ws = np.concatenate([half, half])
    d2 = _design(t, xs, deriv=2)
    return np.sqrt(ws)[:, None] * d2


def _solve_penalized(
    phi: np.ndarray, curvature: np.ndarray, r: np.ndarray, lam: float
) -> np.ndarray:
    # stacked least squares keeps the data block alive however large lam
    # gets, so the smooth limit is the least-squares line rather than the
    # rounded-off normal equations
    stacked = np.vstack([phi, np.sqrt(lam) * curvature])
    rhs = np.concatenate([r, np.zeros(curvature.shape[0])])
    return np.linalg.lstsq(stacked, rhs, rcond=None)[0]


def fit_spline(
    beta: np.ndarray,
    r: np.ndarray,
    K: int,
    lam: float | None = None,
) -> tuple[np.ndarray, np.ndarray, float, float, float | None]:
    """Fit the penalized cubic spline to samples (beta, r).

    With ``lam`` None, picks the smoothing parameter by 5-fold
    cross-validation on a fixed log grid; folds are round-robin over the
    beta-sorted samples so every fold spans the angular range, and the
    whole procedure is deterministic.

    :param K: number of uniform spline segments over the sample range.
    :return: (breakpoints, coefficients, lam, rms of fitted residuals,
        cross-validation SSE of the chosen lam, or None when lam was given).
    """
    beta = np.asarray(beta, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if beta.size < K + 4:
        raise InsufficientBoundary(
            f"{beta.size} samples cannot determine a {K}-segment spline "
            f"(needs at least {K + 4})"
        )
    lo, hi = float(beta.min()), float(beta.max())
    if hi <= lo:
        raise InsufficientBoundary("all samples share one angle")
    breaks = np.linspace(lo, hi, K + 1)
    t = _full_knots(breaks)
    phi = _design(t, beta)
    curvature = _curvature_rows(t, breaks)

    cv_score = None
    if lam is None:
        order = np.argsort(beta, kind="stable")
        best, best_score = LAMBDA_GRID[0], np.inf
        for cand in LAMBDA_GRID:
            sse = 0.0
            for fold in range(5):
                val = order[fold::5]
                train = np.setdiff1d(order, val)
                coef = _solve_penalized(phi[train], curvature, r[train], cand)
                resid = r[val] - phi[val] @ coef
                sse += float(resid @ resid)
            if sse <= best_score:
                best, best_score = cand, sse
        lam = float(best)
        cv_score = float(best_score)

    coef = _solve_penalized(phi, curvature, r, lam)
    resid = r - phi @ coef
    rms = float(np.sqrt(np.mean(resid * resid)))
    return breaks, coef, float(lam), rms, cv_score


def fit_boundary(
    region: StoppingRegion,
    j: int,
    K: int,
    lam: float | None = None,
    node_ids: np.ndarray | None = None,
) -> SplineBoundary:
    """Extract boundary samples for type ``j`` and fit their polar curve.

    Raises:
        InsufficientBoundary: fewer than K+4 usable boundary samples.
    """
    beta, r = boundary_samples(region, j, node_ids)
    breaks, coef, lam_used, rms, _ = fit_spline(beta, r, K, lam)
    return SplineBoundary(
        corner=j, knots=breaks, coefficients=coef, lam=lam_used, rms=rms
    )


def evaluate_boundary(sb: SplineBoundary, beta) -> np.ndarray | float:
    """Fitted radius at the given angle(s), linear beyond the end knots."""
    x = np.asarray(beta, dtype=np.float64)
    single = x.ndim == 0
    x = np.atleast_1d(x)
    t = _full_knots(sb.knots)
    spl = BSpline(t, sb.coefficients, 3)
    dspl = spl.derivative(1)
    lo, hi = sb.knots[0], sb.knots[-1]
    out = spl(np.clip(x, lo, hi))
    left = x < lo
    if np.any(left):
        out[left] = spl(lo) + dspl(lo) * (x[left] - lo)
    right = x > hi
    if np.any(right):
        out[right] = spl(hi) + dspl(hi) * (x[right] - hi)
    return float(out[0]) if single else out


def is_concave(sb: SplineBoundary, eps: float = 1e-6) -> bool:
    """Whether the fitted curve's second differences at the knots stay
    below ``eps`` (the knots are uniform, so this is a shape check)."""
    g = evaluate_boundary(sb, sb.knots)
    d2 = g[2:] - 2.0 * g[1:-1] + g[:-2]
    return bool(np.all(d2 <= eps))


def fast_member(
    spec: ProblemSpec, boundaries: Mapping[int, SplineBoundary], pi: np.ndarray
) -> int | None:
    """Online stopping check: the announced type, or None to continue.

    Computes the cheapest terminal decision i, then tests membership in
    that single stopping set by comparing the posterior's corner radius to
    the fitted boundary radius at its angle.  Exactly one curve is
    consulted per call; at the corner itself the answer is immediate since
    every stopping set contains its own corner.
    """
    if pi.shape[0] != 3:
        raise ValueError("fast membership is built for the 2-type problem")
    _, _, col = h_costs(spec, pi)
    i = col + 1
    try:
        pp = to_polar(pi, i)
    except DegenerateCorner:
        return i
    if pp.r <= float(evaluate_boundary(boundaries[i], pp.beta[0])):
        return i
    return None


# ---------------------------------------------------------------------------
# JSON persistence
# ---------------------------------------------------------------------------


def _sb_to_dict(sb: SplineBoundary) -> dict:
    return {
        "corner": sb.corner,
        "knots": sb.knots.tolist(),
        "coefficients": sb.coefficients.tolist(),
        "lambda": sb.lam,
        "rms": sb.rms,
    }


def _sb_from_dict(doc: Mapping) -> SplineBoundary:
    return SplineBoundary(
        corner=int(doc["corner"]),
        knots=np.asarray(doc["knots"], dtype=np.float64),
        coefficients=np.asarray(doc["coefficients"], dtype=np.float64),
        lam=float(doc["lambda"]),
        rms=float(doc["rms"]),
    )


def save_boundary(sb: SplineBoundary, fp: IO[str] | str) -> None:
    doc = _sb_to_dict(sb)
    if isinstance(fp, str):
        with open(fp, "w") as handle:
            json.dump(doc, handle, indent=2)
            handle.write("\n")
    else:
        json.dump(doc, fp)


def save_boundaries(boundaries: Iterable[SplineBoundary], fp: IO[str] | str) -> None:
    """Write several fitted curves as one JSON array (one per corner)."""
    doc = [_sb_to_dict(sb) for sb in boundaries]
    if isinstance(fp, str):
        with open(fp, "w") as handle:
            json.dump(doc, handle, indent=2)
            handle.write("\n")
    else:
        json.dump(doc, fp)


def load_boundaries(fp: IO[str] | str) -> dict[int, SplineBoundary]:
    """Read one curve or an array of curves; returns them keyed by corner."""
    if isinstance(fp, str):
        with open(fp) as handle:
            doc = json.load(handle)
    else:
        doc = json.load(fp)
    entries = doc if isinstance(doc, list) else [doc]
    out = {}
    for entry in entries:
        sb = _sb_from_dict(entry)
        out[sb.corner] = sb
    return out
