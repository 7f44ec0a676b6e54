import io
import json
import math

import numpy as np
import pytest

import changediag as cd
from changediag import boundary as B

import instances


@pytest.fixture(scope="module")
def split_boundaries(solve200):
    spec, table = solve200("split")
    region = cd.extract_region(spec, table)
    fitted = {j: cd.fit_boundary(region, j, K=12) for j in (1, 2)}
    return spec, region, fitted


def test_corner_distances_from_polar():
    e0 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 0.0, 1.0])
    pp0 = cd.to_polar(e0, 1)
    pp2 = cd.to_polar(e2, 1)
    assert pp0.r == pytest.approx(2 / math.sqrt(3), abs=1e-15)
    assert pp2.r == pytest.approx(2 / math.sqrt(3), abs=1e-15)
    # the two far corners bracket the 60-degree wedge seen from corner 1
    assert pp2.beta[0] == 0.0
    assert pp0.beta[0] == pytest.approx(math.pi / 3, abs=1e-12)


def test_radius_equals_embedded_distance():
    rng = np.random.default_rng(23)
    for _ in range(50):
        pi = rng.dirichlet(np.ones(3))
        for corner in (1, 2):
            want = np.linalg.norm(cd.embed(pi) - cd.embed(np.eye(3)[corner]))
            assert B.corner_radius(pi, corner) == pytest.approx(want, abs=1e-12)


def test_polar_round_trip_two_types():
    rng = np.random.default_rng(6)
    for _ in range(200):
        pi = rng.dirichlet(np.ones(3))
        for corner in (1, 2):
            back = cd.from_polar(cd.to_polar(pi, corner))
            assert back == pytest.approx(pi, abs=1e-12)


def test_polar_round_trip_three_types():
    rng = np.random.default_rng(9)
    for _ in range(200):
        pi = rng.dirichlet(np.ones(4))
        for corner in (1, 2, 3):
            back = cd.from_polar(cd.to_polar(pi, corner))
            assert back == pytest.approx(pi, abs=1e-12)


def test_polar_at_corner_raises():
    with pytest.raises(cd.DegenerateCorner):
        cd.to_polar(np.array([0.0, 1.0, 0.0]), 1)


def test_fit_constant_radius_is_exact():
    beta = np.linspace(0.0, 0.5, 30)
    r = np.full(30, 0.7)
    breaks, coef, lam, rms, _ = B.fit_spline(beta, r, K=6, lam=1e-3)
    assert rms < 1e-12
    sb = cd.SplineBoundary(1, breaks, coef, lam, rms)
    assert B.evaluate_boundary(sb, np.array([0.05, 0.25, 0.49])) == pytest.approx(
        np.full(3, 0.7), abs=1e-12
    )
    assert cd.boundary.is_concave(sb)


def test_fit_reproduces_straight_line_at_any_smoothing():
    beta = np.linspace(0.0, 0.6, 40)
    r = 0.8 - 0.3 * beta
    for lam in (0.0, 1e-6, 10.0, 1e12):
        _, _, _, rms, _ = B.fit_spline(beta, r, K=8, lam=lam)
        assert rms < 1e-8


def test_heavy_smoothing_tends_to_least_squares_line():
    rng = np.random.default_rng(1)
    beta = np.linspace(0.0, 0.6, 40)
    r = 0.8 - 0.3 * beta + rng.normal(0.0, 0.01, 40)
    breaks, coef, lam, rms, _ = B.fit_spline(beta, r, K=8, lam=1e12)
    sb = cd.SplineBoundary(1, breaks, coef, lam, rms)
    line = np.polyfit(beta, r, 1)
    probe = np.linspace(0.0, 0.6, 13)
    assert B.evaluate_boundary(sb, probe) == pytest.approx(
        np.polyval(line, probe), abs=1e-6
    )


def test_cross_validation_is_deterministic():
    rng = np.random.default_rng(12)
    beta = np.sort(rng.uniform(0.0, 0.5, 80))
    r = 0.6 + 0.1 * np.sin(6 * beta) + rng.normal(0.0, 0.005, 80)
    first = B.fit_spline(beta, r, K=10)
    second = B.fit_spline(beta, r, K=10)
    assert first[2] == second[2]
    assert np.array_equal(first[1], second[1])
    assert first[4] is not None and first[4] > 0.0


def test_insufficient_samples_rejected():
    beta = np.linspace(0.0, 0.5, 5)
    with pytest.raises(cd.InsufficientBoundary):
        B.fit_spline(beta, np.full(5, 0.7), K=12)
    with pytest.raises(cd.InsufficientBoundary):
        B.fit_spline(np.full(30, 0.25), np.full(30, 0.7), K=4)


def test_extrapolation_is_linear():
    beta = np.linspace(0.1, 0.5, 30)
    r = 0.7 - 0.2 * beta + 0.3 * beta**2
    breaks, coef, lam, rms, _ = B.fit_spline(beta, r, K=6, lam=0.0)
    sb = cd.SplineBoundary(1, breaks, coef, lam, rms)
    for probes in (np.array([0.5, 0.6, 0.7, 0.8]), np.array([0.1, 0.05, 0.0, -0.05])):
        vals = np.asarray(B.evaluate_boundary(sb, probes))
        second_diff = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        assert np.abs(second_diff[1:]).max() < 1e-10


def test_is_concave_tracks_curvature_sign():
    beta = np.linspace(0.0, 1.0, 50)
    cap = 0.8 - 0.5 * (beta - 0.5) ** 2
    cup = 0.4 + 0.5 * (beta - 0.5) ** 2
    for samples, expected in ((cap, True), (cup, False)):
        breaks, coef, lam, rms, _ = B.fit_spline(beta, samples, K=8, lam=1e-6)
        sb = cd.SplineBoundary(1, breaks, coef, lam, rms)
        assert B.is_concave(sb) is expected


def test_boundary_samples_are_sorted_frontier(solve200):
    spec, table = solve200("split")
    region = cd.extract_region(spec, table)
    beta, r = cd.boundary.boundary_samples(region, 1)
    assert beta.size == cd.regions.boundary_nodes(region, 1).size
    assert (np.diff(beta) >= 0).all()
    assert (r > 0).all() and (r < 2 / math.sqrt(3)).all()


def test_fit_boundary_describes_the_region(split_boundaries):
    spec, region, fitted = split_boundaries
    for j in (1, 2):
        sb = fitted[j]
        assert sb.corner == j
        assert sb.knots.size == 13
        assert sb.coefficients.size == 15
        assert sb.rms < 0.02


def test_fast_member_matches_region_labels(split_boundaries):
    spec, region, fitted = split_boundaries
    grid = region.grid
    rng = np.random.default_rng(3)
    ids = rng.choice(grid.n_nodes, size=2000, replace=False)
    agree = 0
    for node_id in ids:
        got = cd.fast_member(spec, fitted, grid.nodes[node_id])
        want = int(region.labels[node_id])
        agree += (got or 0) == want
    assert agree / ids.size >= 0.99


def test_fast_member_basic_decisions(split_boundaries):
    spec, _, fitted = split_boundaries
    assert cd.fast_member(spec, fitted, np.array([0.98, 0.01, 0.01])) is None
    assert cd.fast_member(spec, fitted, np.array([0.02, 0.93, 0.05])) == 1
    assert cd.fast_member(spec, fitted, np.array([0.02, 0.05, 0.93])) == 2


def test_fast_member_at_exact_corner(split_boundaries):
    spec, _, fitted = split_boundaries
    assert cd.fast_member(spec, fitted, np.array([0.0, 1.0, 0.0])) == 1
    assert cd.fast_member(spec, fitted, np.array([0.0, 0.0, 1.0])) == 2


def test_fast_member_consults_only_the_best_decision(split_boundaries):
    """The procedure picks the cheapest decision first and asks only that
    corner's curve, so one curve suffices for posteriors leaning its way."""
    spec, _, fitted = split_boundaries
    only_one = {1: fitted[1]}
    assert cd.fast_member(spec, only_one, np.array([0.02, 0.93, 0.05])) == 1
    assert cd.fast_member(spec, only_one, np.array([0.6, 0.3, 0.1])) is None


def test_fast_member_requires_two_types(split_boundaries):
    spec, _, fitted = split_boundaries
    with pytest.raises(ValueError):
        cd.fast_member(spec, fitted, np.array([0.5, 0.5]))


def test_boundary_json_round_trip(tmp_path, split_boundaries):
    _, _, fitted = split_boundaries
    path = tmp_path / "boundaries.json"
    cd.save_boundaries(fitted.values(), str(path))
    loaded = cd.load_boundaries(str(path))
    assert sorted(loaded) == [1, 2]
    for j in (1, 2):
        assert np.array_equal(loaded[j].knots, fitted[j].knots)
        assert np.array_equal(loaded[j].coefficients, fitted[j].coefficients)
        assert loaded[j].lam == fitted[j].lam
        assert loaded[j].rms == fitted[j].rms


def test_boundary_json_shapes(split_boundaries):
    _, _, fitted = split_boundaries
    buf = io.StringIO()
    cd.save_boundary(fitted[1], buf)
    doc = json.loads(buf.getvalue())
    assert sorted(doc) == ["coefficients", "corner", "knots", "lambda", "rms"]
    # a single-curve document loads just as well as the list form
    single = cd.load_boundaries(io.StringIO(buf.getvalue()))
    assert sorted(single) == [1]
    assert np.array_equal(single[1].coefficients, fitted[1].coefficients)
