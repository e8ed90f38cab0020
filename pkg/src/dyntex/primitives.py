"""Small procedural meshes used by the actor builder and the test-suite."""
from __future__ import annotations

import numpy as np


def grid_mesh(nx: int, ny: int, size=(1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Planar (nx+1) x (ny+1) vertex grid in the z=0 plane, CCW seen from +z."""
    xs = np.linspace(0.0, size[0], nx + 1)
    ys = np.linspace(0.0, size[1], ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 1, a + nx + 2
            tris += [(a, b, d), (a, d, c)]
    return verts, np.array(tris, dtype=np.int64)


def cube_with_face_centers(half: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Cube whose faces are each split into four triangles around a centre vertex."""
    corners = np.array([[x, y, z] for x in (-half, half) for y in (-half, half) for z in (-half, half)])
    verts = [c for c in corners]
    tris = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            ids = [i for i, c in enumerate(corners) if c[axis] == sign * half]
            center = np.zeros(3)
            center[axis] = sign * half
            verts.append(center)
            ci = len(verts) - 1
            # order the 4 corners CCW as seen from outside
            u, v = [k for k in range(3) if k != axis]
            ang = [np.arctan2(corners[i][v], corners[i][u]) for i in ids]
            ring = [ids[k] for k in np.argsort(ang)]
            normal = np.zeros(3)
            normal[axis] = sign
            for k in range(4):
                a, b = ring[k], ring[(k + 1) % 4]
                n = np.cross(corners[a] - center, corners[b] - center)
                tris.append((ci, a, b) if n @ normal > 0 else (ci, b, a))
    return np.array(verts, dtype=np.float64), np.array(tris, dtype=np.int64)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts) * radius, np.array(faces, dtype=np.int64)


def hemisphere_cap(n: int = 5, radius: float = 1.0, extent: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """An n x n grid patch lifted onto the upper hemisphere (a topological disk)."""
    verts, tris = grid_mesh(n - 1, n - 1, size=(2.0 * extent, 2.0 * extent))
    xy = verts[:, :2] - extent
    # radial squash keeps every lifted point strictly inside the hemisphere
    r = np.linalg.norm(xy, axis=1)
    rmax = extent * np.sqrt(2.0)
    scale = np.where(r > 0, np.sin(0.5 * np.pi * r / rmax * 0.95) / np.maximum(r, 1e-300), 0.0)
    p = xy * scale[:, None]
    z = np.sqrt(np.maximum(1.0 - (p ** 2).sum(axis=1), 0.0))
    return np.column_stack([p, z]) * radius, tris


def uv_sphere(n_lat: int = 16, n_lon: int = 32, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
    """Latitude-longitude sphere with duplicated seam and pole vertices.

    Returns (vertices, triangles, uv) with an injective uv layout on [0,1]^2;
    pole triangles are degenerate in 3D by construction.
    """
    i, j = np.meshgrid(np.arange(n_lat + 1), np.arange(n_lon + 1), indexing="ij")
    polar = np.pi * i / n_lat
    azim = 2 * np.pi * j / n_lon
    verts = np.stack([np.sin(polar) * np.sin(azim), np.cos(polar), np.sin(polar) * np.cos(azim)], axis=-1)
    verts = verts.reshape(-1, 3) * radius + np.asarray(center, dtype=np.float64)
    uv = np.stack([j / n_lon, i / n_lat], axis=-1).reshape(-1, 2).astype(np.float64)
    idx = lambda a, b: a * (n_lon + 1) + b
    tris = []
    for a in range(n_lat):
        for b in range(n_lon):
            p, q, r, s = idx(a, b), idx(a, b + 1), idx(a + 1, b), idx(a + 1, b + 1)
            tris += [(p, r, s), (p, s, q)]
    return verts, np.array(tris, dtype=np.int64), uv
