"""Harmonic and quasi-harmonic parameterisation of disk-topology meshes onto [0, 1]^2."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

WEIGHT_KINDS = ("uniform", "mean-value", "cotangent")
DISTORTION_CLAMP = (1e-3, 1e3)


class ParameterizationError(ValueError):
    pass


@dataclass
class BoundaryMap:
    loop: np.ndarray        # boundary vertex indices, interior on the left
    targets: np.ndarray     # (len(loop), 2) positions on the unit-square boundary

    def __post_init__(self):
        self.loop = np.asarray(self.loop, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if len(self.loop) != len(self.targets):
            raise ValueError("boundary loop and targets differ in length")
        if len(set(self.loop.tolist())) != len(self.loop):
            raise ValueError("boundary loop visits a vertex twice")


@dataclass
class UVResult:
    uv: np.ndarray
    residual: float
    iterations: int
    distortion: np.ndarray = field(repr=False)

    def diagnostics(self) -> dict:
        d = np.maximum(self.distortion, 1.0 / self.distortion)
        hist, edges = np.histogram(np.log2(d), bins=10)
        return {"residual": self.residual, "quasi_iterations": self.iterations,
                "max_area_distortion": float(d.max()),
                "log2_distortion_histogram": {"counts": hist.tolist(), "edges": edges.tolist()}}

    def write_diagnostics(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.diagnostics(), fh, indent=2)


# ---------------------------------------------------------------- topology

def _edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return e


def boundary_loop(triangles: np.ndarray) -> np.ndarray:
    """The single boundary cycle, oriented so the surface lies on its left."""
    directed = _edges(np.asarray(triangles))
    keys = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise ParameterizationError("non-manifold edge (shared by more than two triangles)")
    bnd = directed[counts[inverse] == 1]
    if len(bnd) == 0:
        raise ParameterizationError("mesh has no boundary; cut it to a disk first")
    nxt = {}
    for a, b in bnd:
        if a in nxt:
            raise ParameterizationError("boundary is not a simple cycle")
        nxt[int(a)] = int(b)
    start = int(bnd[0, 0])
    loop = [start]
    while True:
        v = nxt[loop[-1]]
        if v == start:
            break
        loop.append(v)
        if len(loop) > len(bnd):
            raise ParameterizationError("boundary is not a simple cycle")
    if len(loop) != len(bnd):
        raise ParameterizationError(f"mesh has more than one boundary loop ({len(bnd)} boundary edges, "
                                    f"first loop has {len(loop)})")
    return np.array(loop, dtype=np.int64)


def check_disk(n_vertices: int, triangles: np.ndarray) -> None:
    tri = np.asarray(triangles)
    used = np.unique(tri)
    n_edges = len(np.unique(np.sort(_edges(tri), axis=1), axis=0))
    chi = len(used) - n_edges + len(tri)
    if chi != 1:
        raise ParameterizationError(f"mesh is not a topological disk (V - E + F = {chi}, expected 1)")
    if len(used) != n_vertices:
        raise ParameterizationError("mesh has vertices not referenced by any triangle")
    boundary_loop(tri)


def boundary_ears(loop: np.ndarray, triangles: np.ndarray) -> list[int]:
    """Loop positions k whose triangle (loop[k-1], loop[k], loop[k+1]) exists.

    Unless loop[k] lands on a corner, such a triangle collapses onto one
    side of the square.
    """
    n = len(loop)
    tri_sets = {frozenset(t) for t in np.asarray(triangles).tolist()}
    return [k for k in range(n)
            if frozenset((int(loop[k - 1]), int(loop[k]), int(loop[(k + 1) % n]))) in tri_sets]


def square_boundary(vertices: np.ndarray, loop: np.ndarray, triangles: np.ndarray | None = None) -> BoundaryMap:
    """Arc-length targets on the unit square, counter-clockwise from (0, 0).

    Corners go first to boundary ears (when triangles are given), then to the
    loop vertices nearest the quarter points of the arc length; the rest are
    spaced by arc length along each side.
    """
    loop = np.asarray(loop, dtype=np.int64)
    n = len(loop)
    if n < 4:
        raise ParameterizationError("boundary needs at least 4 vertices")
    ears = boundary_ears(loop, triangles) if triangles is not None else []
    if len(ears) > 4:
        raise ParameterizationError(f"{len(ears)} boundary ears; at most 4 can sit on square corners")
    p = vertices[loop]
    seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]

    def circ(a, b):
        d = abs(s[a] - s[b])
        return min(d, total - d)

    corners = list(ears)
    quarter = [int(np.argmin(np.abs(s[:n] - q * total))) for q in (0.0, 0.25, 0.5, 0.75)]
    while len(corners) < 4:
        cand = [k for k in quarter if k not in corners] or [k for k in range(n) if k not in corners]
        corners.append(max(cand, key=lambda k: min((circ(k, c) for c in corners), default=0.0)))
    corners.sort()
    shift = corners[0]
    loop = np.roll(loop, -shift)
    s = np.concatenate([s[shift:n] - s[shift], s[:shift] + total - s[shift], [total]])
    corners = [c - shift for c in corners] + [n]
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    targets = np.zeros((n, 2))
    for side in range(4):
        a, b = corners[side], corners[side + 1]
        frac = (s[a:b] - s[a]) / (s[b] - s[a])
        targets[a:b] = square[side] + frac[:, None] * (square[side + 1] - square[side])
    return BoundaryMap(loop, targets)


# ---------------------------------------------------------------- weights

def _corner_angles(vertices, triangles):
    v = vertices[triangles]
    ang = np.zeros(triangles.shape)
    for k in range(3):
        a = v[:, (k + 1) % 3] - v[:, k]
        b = v[:, (k + 2) % 3] - v[:, k]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        ang[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    return ang


def edge_weights(vertices: np.ndarray, triangles: np.ndarray, kind: str = "mean-value") -> sp.csr_matrix:
    """Sparse matrix W with W[i, j] = w_ij for every mesh edge (not symmetric for mean-value)."""
    if kind not in WEIGHT_KINDS:
        raise ValueError(f"unknown weight kind {kind!r}; choose from {WEIGHT_KINDS}")
    vertices = np.asarray(vertices, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    n = len(vertices)
    rows, cols, vals = [], [], []
    if kind == "uniform":
        e = np.unique(np.sort(_edges(tri), axis=1), axis=0)
        rows, cols = np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ang = _corner_angles(vertices, tri)
    for k in range(3):
        i, j, l = tri[:, k], tri[:, (k + 1) % 3], tri[:, (k + 2) % 3]
        if kind == "cotangent":
            # angle at corner k is opposite edge (j, l)
            with np.errstate(divide="ignore"):
                c = 0.5 / np.tan(ang[:, k])
            rows += [j, l]
            cols += [l, j]
            vals += [c, c]
        else:
            t = np.tan(0.5 * ang[:, k])
            rows += [i, i]
            cols += [j, l]
            vals += [t / np.linalg.norm(vertices[j] - vertices[i], axis=1),
                     t / np.linalg.norm(vertices[l] - vertices[i], axis=1)]
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    W.sum_duplicates()
    return W


# ---------------------------------------------------------------- solve

DIRECT_FALLBACK = 1e-10   # Krylov results with a larger max residual are re-solved by sparse LU


class _NoConvergence(Exception):
    pass


def _solve(W: sp.csr_matrix, boundary: BoundaryMap, n: int, symmetric: bool) -> tuple[np.ndarray, float]:
    """Eliminate the fixed boundary, then solve the interior block per coordinate.

    Symmetric weights use conjugate gradients; mean-value weights are not
    symmetric, so BiCGSTAB is used.  A sparse LU solve backs up either one.
    """
    interior = np.setdiff1d(np.arange(n), boundary.loop)
    L = (W - sp.diags(np.asarray(W.sum(axis=1)).ravel())).tocsr()
    uv = np.zeros((n, 2))
    uv[boundary.loop] = boundary.targets
    if len(interior):
        A = (-L[interior][:, interior]).tocsr()
        rhs = L[interior][:, boundary.loop] @ boundary.targets
        diag = A.diagonal()
        if np.any(diag <= 0) or not np.all(np.isfinite(A.data)):
            raise _NoConvergence("interior system has a non-positive diagonal")
        M = sp.diags(1.0 / diag)
        maxiter = 10 * n
        for c in range(2):
            if symmetric:
                x, info = spla.cg(A, rhs[:, c], rtol=1e-12, atol=0.0, maxiter=maxiter, M=M)
            else:
                x, info = spla.bicgstab(A, rhs[:, c], rtol=1e-12, atol=0.0, maxiter=maxiter, M=M)
            if info != 0 or not np.all(np.isfinite(x)) or np.max(np.abs(A @ x - rhs[:, c])) > DIRECT_FALLBACK:
                x, info = spla.spsolve(A.tocsc(), rhs[:, c]), 0
            if info != 0 or not np.all(np.isfinite(x)):
                raise _NoConvergence(f"Krylov solve stopped with info={info}")
            uv[interior, c] = x
    return uv, laplace_residual(W, uv, interior)


def laplace_residual(W: sp.csr_matrix, uv: np.ndarray, interior: np.ndarray) -> float:
    """Max-norm of sum_j w_ij (u_j - u_i) over interior vertices."""
    if len(interior) == 0:
        return 0.0
    Wi = W[interior]
    deg = np.asarray(Wi.sum(axis=1)).ravel()
    with np.errstate(all="ignore"):
        r = Wi @ uv - deg[:, None] * uv[interior]
    return float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else float("inf")


def area_distortion(vertices: np.ndarray, triangles: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Per-triangle (uv area share) / (surface area share); 1 means area preserving."""
    a3 = 0.5 * np.linalg.norm(np.cross(vertices[triangles[:, 1]] - vertices[triangles[:, 0]],
                                       vertices[triangles[:, 2]] - vertices[triangles[:, 0]]), axis=1)
    a2 = np.abs(signed_uv_areas(uv, triangles))
    return (a2 / a2.sum()) / (a3 / a3.sum())


def signed_uv_areas(uv: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = uv[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _vertex_distortion(vertices, triangles, uv):
    n = len(vertices)
    a3 = 0.5 * np.linalg.norm(np.cross(vertices[triangles[:, 1]] - vertices[triangles[:, 0]],
                                       vertices[triangles[:, 2]] - vertices[triangles[:, 0]]), axis=1)
    a2 = np.abs(signed_uv_areas(uv, triangles))
    A3, A2 = np.zeros(n), np.zeros(n)
    for k in range(3):
        np.add.at(A3, triangles[:, k], a3)
        np.add.at(A2, triangles[:, k], a2)
    ratio = (A2 / A2.sum()) / np.maximum(A3 / A3.sum(), 1e-300)
    return np.clip(ratio, *DISTORTION_CLAMP)


def harmonic_uv(vertices: np.ndarray, triangles: np.ndarray, boundary: BoundaryMap | None = None,
                weights: str = "mean-value", quasi_iterations: int = 3) -> UVResult:
    """Map a disk-topology mesh onto the unit square.

    Boundary vertices go to their targets; every interior vertex becomes the
    weighted average of its neighbours.  Each quasi-harmonic iteration
    multiplies every edge weight by the geometric mean of its end points'
    area-distortion ratios (uv share over surface share, clamped), which
    stiffens over-expanded regions and relaxes compressed ones, then
    re-solves.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    n = len(vertices)
    check_disk(n, tri)
    if boundary is None:
        boundary = square_boundary(vertices, boundary_loop(tri), tri)
    loop_set = set(boundary_loop(tri).tolist())
    if set(boundary.loop.tolist()) != loop_set:
        raise ParameterizationError("boundary map does not match the mesh boundary")
    if quasi_iterations < 0:
        raise ValueError("quasi_iterations must be >= 0")

    W = edge_weights(vertices, tri, weights)
    symmetric = weights != "mean-value"
    for it in range(quasi_iterations + 1):
        if it:
            sigma = np.sqrt(_vertex_distortion(vertices, tri, uv))
            Wc = W.tocoo()
            W = sp.csr_matrix((Wc.data * sigma[Wc.row] * sigma[Wc.col], (Wc.row, Wc.col)), shape=W.shape)
        try:
            uv, residual = _solve(W, boundary, n, symmetric)
        except _NoConvergence as exc:
            residual, reason = float("inf"), str(exc)
        else:
            reason = f"residual {residual:.3g}"
        if not np.isfinite(residual) or residual > 1e-8:
            hint = "; use mean-value weights instead" if weights == "cotangent" else ""
            raise ParameterizationError(f"{weights} Laplace system did not converge ({reason}){hint}")
    uv = np.clip(uv, 0.0, 1.0)
    return UVResult(uv, residual, quasi_iterations, area_distortion(vertices, tri, uv))
