import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyntex.primitives import grid_mesh, hemisphere_cap, icosphere
from dyntex.uvmap import (BoundaryMap, ParameterizationError, boundary_loop, harmonic_uv,
                          signed_uv_areas, square_boundary)


def dense_mean_value_oracle(vertices, triangles, loop, targets):
    """Assemble mean-value weights with explicit loops and solve densely."""
    n = len(vertices)
    W = np.zeros((n, n))
    for tri in triangles:
        for k in range(3):
            i, j, l = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            a = vertices[j] - vertices[i]
            b = vertices[l] - vertices[i]
            angle = math.atan2(np.linalg.norm(np.cross(a, b)), float(a @ b))
            t = math.tan(angle / 2)
            W[i, j] += t / np.linalg.norm(a)
            W[i, l] += t / np.linalg.norm(b)
    fixed = {int(v): targets[k] for k, v in enumerate(loop)}
    free = [v for v in range(n) if v not in fixed]
    idx = {v: k for k, v in enumerate(free)}
    A = np.zeros((len(free), len(free)))
    rhs = np.zeros((len(free), 2))
    for v in free:
        r = idx[v]
        A[r, r] = W[v].sum()
        for j in np.nonzero(W[v])[0]:
            if j in fixed:
                rhs[r] += W[v, j] * fixed[j]
            else:
                A[r, idx[j]] -= W[v, j]
    uv = np.zeros((n, 2))
    for v, t in fixed.items():
        uv[v] = t
    uv[free] = np.linalg.solve(A, rhs)
    return uv


def max_distortion(d):
    return float(np.max(np.maximum(d, 1.0 / d)))


@pytest.mark.parametrize("weights", ["uniform", "mean-value", "cotangent"])
def test_planar_grid_identity_boundary_reproduces_positions(weights):
    v, t = grid_mesh(6, 6)
    loop = boundary_loop(t)
    bm = BoundaryMap(loop, v[loop, :2])
    res = harmonic_uv(v, t, bm, weights=weights, quasi_iterations=0)
    np.testing.assert_allclose(res.uv, v[:, :2], atol=1e-9)


def test_star_interior_is_centroid_of_neighbours():
    ang = np.arange(6) * np.pi / 3
    v = np.vstack([[0.0, 0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang), np.zeros(6)])])
    t = np.array([[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)])
    res = harmonic_uv(v, t, weights="uniform", quasi_iterations=0)
    np.testing.assert_allclose(res.uv[0], res.uv[1:].mean(axis=0), atol=1e-12)


def test_hemisphere_cap_matches_dense_oracle():
    v, t = hemisphere_cap(5)
    bm = square_boundary(v, boundary_loop(t))
    res = harmonic_uv(v, t, bm, weights="mean-value", quasi_iterations=0)
    oracle = dense_mean_value_oracle(v, t, bm.loop, bm.targets)
    np.testing.assert_allclose(res.uv, oracle, atol=1e-9)


def test_boundary_targets_exact_and_monotone():
    v, t = hemisphere_cap(7)
    bm = square_boundary(v, boundary_loop(t))
    res = harmonic_uv(v, t, bm)
    np.testing.assert_array_equal(res.uv[bm.loop], bm.targets)
    # perimeter parameter increases around the loop
    x, y = bm.targets.T
    s = np.where(y == 0, x, np.where(x == 1, 1 + y, np.where(y == 1, 3 - x, 4 - y)))
    assert s[0] == 0 and np.all(np.diff(s) > 0)
    corners = {(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)}
    assert corners <= set(map(tuple, bm.targets))


def test_boundary_ears_land_on_corners():
    v, t = grid_mesh(5, 5)
    loop = boundary_loop(t)
    bm = square_boundary(v, loop, t)
    ear_vertices = {int(loop[k]) for k in [k for k in range(len(loop))
                                            if {int(loop[k - 1]), int(loop[k]), int(loop[(k + 1) % len(loop)])}
                                            in [set(x) for x in t.tolist()]]}
    assert len(ear_vertices) == 2
    corner_vertices = {int(bm.loop[k]) for k in range(len(bm.loop))
                       if tuple(bm.targets[k]) in {(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)}}
    assert ear_vertices <= corner_vertices


def test_quasi_harmonic_reduces_max_area_distortion():
    v, t = hemisphere_cap(5)
    plain = harmonic_uv(v, t, quasi_iterations=0)
    quasi = harmonic_uv(v, t, quasi_iterations=3)
    assert max_distortion(quasi.distortion) <= max_distortion(plain.distortion)
    assert np.mean(np.abs(np.log(quasi.distortion))) < np.mean(np.abs(np.log(plain.distortion)))


def test_non_disk_rejected():
    v, t = icosphere(1)
    with pytest.raises(ParameterizationError, match="disk|boundary"):
        harmonic_uv(v, t)
    # annulus: 3x3 grid with the centre quad removed
    v, t = grid_mesh(3, 3)
    keep = [k for k in range(len(t)) if k // 2 != 4]
    with pytest.raises(ParameterizationError, match="disk"):
        harmonic_uv(v, t[keep])


def test_mismatched_boundary_rejected():
    v, t = grid_mesh(3, 3)
    loop = boundary_loop(t)[:-1]
    with pytest.raises(ParameterizationError, match="boundary"):
        harmonic_uv(v, t, BoundaryMap(loop, np.zeros((len(loop), 2))))


def test_cotangent_failure_recommends_mean_value():
    v, t = grid_mesh(4, 4)
    v = v.copy()
    v[6, 1] = 1e-12   # interior vertex squashed onto the boundary edge below it
    with pytest.raises(ParameterizationError, match="mean-value"):
        harmonic_uv(v, t, weights="cotangent", quasi_iterations=0)


def test_diagnostics_json(tmp_path):
    v, t = hemisphere_cap(5)
    res = harmonic_uv(v, t)
    res.write_diagnostics(tmp_path / "d.json")
    d = json.loads((tmp_path / "d.json").read_text())
    assert d["residual"] < 1e-8 and d["quasi_iterations"] == 3
    assert sum(d["log2_distortion_histogram"]["counts"]) == len(t)


@st.composite
def bumpy_grids(draw):
    n = draw(st.integers(3, 8))
    seed = draw(st.integers(0, 2 ** 31))
    rng = np.random.default_rng(seed)
    v, t = grid_mesh(n, n)
    v = v.copy()
    h = 0.3 / n
    interior = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    v[interior, :2] += rng.uniform(-0.3 * h, 0.3 * h, size=(interior.sum(), 2))
    v[:, 2] = rng.uniform(-0.5, 0.5) * np.sin(3 * v[:, 0]) + rng.uniform(-0.5, 0.5) * v[:, 1] ** 2
    return v, t


@settings(max_examples=40, deadline=None)
@given(bumpy_grids(), st.sampled_from(["uniform", "mean-value"]), st.integers(0, 3))
def test_tutte_properties(mesh, weights, iters):
    v, t = mesh
    bm = square_boundary(v, boundary_loop(t), t)
    res = harmonic_uv(v, t, bm, weights=weights, quasi_iterations=iters)
    assert res.residual < 1e-8
    np.testing.assert_array_equal(res.uv[bm.loop], bm.targets)
    interior = np.setdiff1d(np.arange(len(v)), bm.loop)
    assert np.all(res.uv[interior] > 0) and np.all(res.uv[interior] < 1)
    assert np.all(signed_uv_areas(res.uv, t) > 0)
