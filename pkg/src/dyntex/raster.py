"""Pinhole software rasterizer.

Conventions: camera space is right-handed and looks down -z; pixel (col, row)
has its centre at (col + 0.5, row + 0.5) and rows grow downwards.  Texture
coordinate u maps to columns and v to rows, texel centres at (c + 0.5) / res.
All colour math is linear; PNG files hold sRGB.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np
from PIL import Image

NEAR = 1e-4
DEPTH_EPS = 1e-3


# ---------------------------------------------------------------- camera

@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray          # world -> camera
    translation: np.ndarray

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), focal=100.0, width=64, height=64) -> "Camera":
        eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
        z = eye - target
        z /= np.linalg.norm(z)
        x = np.cross(up, z)
        if np.linalg.norm(x) < 1e-12:
            raise ValueError("up vector parallel to viewing direction")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(focal, focal, width / 2.0, height / 2.0, width, height, R, -R @ eye)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project_camera(self, pc: np.ndarray):
        """Camera-space points -> (px, py, depth) with depth = -z."""
        w = -pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = self.cx + self.fx * pc[..., 0] / w
            py = self.cy - self.fy * pc[..., 1] / w
        return px, py, w

    def project(self, points: np.ndarray):
        return self.project_camera(self.to_camera(points))

    def ray_directions(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """Camera-space ray directions scaled to unit depth (z = -1)."""
        return np.stack([(px - self.cx) / self.fx, -(py - self.cy) / self.fy, -np.ones_like(px)], axis=-1)

    def scaled(self, factor: int) -> "Camera":
        return Camera(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
                      self.width * factor, self.height * factor, self.rotation, self.translation)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width,
                "height": self.height, "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)


# ---------------------------------------------------------------- outputs

@dataclass
class RenderOutput:
    color: np.ndarray       # (H, W, 3)
    depth: np.ndarray       # (H, W), +inf on background
    mask: np.ndarray        # (H, W) bool
    pixel_uv: np.ndarray    # (H, W, 2), NaN on background
    tri_id: np.ndarray      # (H, W) int, -1 on background
    bary: np.ndarray        # (H, W, 3) perspective-correct barycentrics


@dataclass
class PartialNormalMap:
    normals: np.ndarray        # (R, R, 3), zero where invisible
    mask: np.ndarray
    source_pixel: np.ndarray   # (R, R, 2) int (col, row); -1 where invisible


@dataclass
class PartialTextureMap:
    rgb: np.ndarray
    mask: np.ndarray
    source_pixel: np.ndarray


# ---------------------------------------------------------------- kernels

@numba.njit(cache=True)
def _raster_kernel(sx, sy, sw, tris, tri_ok, H, W, zbuf, tri_id, bary):
    for t in range(tris.shape[0]):
        if not tri_ok[t]:
            continue
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0, x1, y1, x2, y2 = sx[i0], sy[i0], sx[i1], sy[i1], sx[i2], sy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        c0 = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        c1 = min(int(np.ceil(max(x0, x1, x2) - 0.5)), W - 1)
        r0 = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        r1 = min(int(np.ceil(max(y0, y1, y2) - 0.5)), H - 1)
        iw0, iw1, iw2 = 1.0 / sw[i0], 1.0 / sw[i1], 1.0 / sw[i2]
        for r in range(r0, r1 + 1):
            py = r + 0.5
            for c in range(c0, c1 + 1):
                px = c + 0.5
                l0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                l1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                l2 = 1.0 - l0 - l1
                if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                    continue
                q0, q1, q2 = l0 * iw0, l1 * iw1, l2 * iw2
                s = q0 + q1 + q2
                depth = 1.0 / s
                if depth < zbuf[r, c]:
                    zbuf[r, c] = depth
                    tri_id[r, c] = t
                    bary[r, c, 0] = q0 / s
                    bary[r, c, 1] = q1 / s
                    bary[r, c, 2] = q2 / s


@numba.njit(cache=True)
def _uv_raster_kernel(ux, uy, tris, R, tri_id, bary):
    overlaps = 0
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0, x1, y1, x2, y2 = ux[i0], uy[i0], ux[i1], uy[i1], ux[i2], uy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-14:
            continue
        c0 = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        c1 = min(int(np.ceil(max(x0, x1, x2) - 0.5)), R - 1)
        r0 = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        r1 = min(int(np.ceil(max(y0, y1, y2) - 0.5)), R - 1)
        for r in range(r0, r1 + 1):
            py = r + 0.5
            for c in range(c0, c1 + 1):
                px = c + 0.5
                l0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                l1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                l2 = 1.0 - l0 - l1
                if l0 < -1e-12 or l1 < -1e-12 or l2 < -1e-12:
                    continue
                if tri_id[r, c] >= 0:
                    # shared edges and vertices are fine; a strict interior hit twice is not
                    inner = min(l0, l1, l2) > 1e-7
                    prev = min(bary[r, c, 0], bary[r, c, 1], bary[r, c, 2]) > 1e-7
                    if inner or prev:
                        overlaps += 1
                    continue
                tri_id[r, c] = t
                bary[r, c, 0] = l0
                bary[r, c, 1] = l1
                bary[r, c, 2] = l2
    return overlaps


@numba.njit(cache=True)
def _capsule_kernel(dirs, seg_a, seg_b, radius, depth, bone_id, along):
    H, W = dirs.shape[0], dirs.shape[1]
    for r in range(H):
        for c in range(W):
            d = dirs[r, c]
            norm = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            rd = d / norm
            for k in range(seg_a.shape[0]):
                a, b = seg_a[k], seg_b[k]
                ba = b - a
                oa = -a
                baba = ba @ ba
                bard = ba @ rd
                baoa = ba @ oa
                rdoa = rd @ oa
                oaoa = oa @ oa
                qa = baba - bard * bard
                qb = baba * rdoa - baoa * bard
                qc = baba * oaoa - baoa * baoa - radius * radius * baba
                hit = -1.0
                y = 0.0
                h = qb * qb - qa * qc
                if qa > 1e-14 and h >= 0.0:
                    t = (-qb - np.sqrt(h)) / qa
                    y = baoa + t * bard
                    if y > 0.0 and y < baba and t > 0.0:
                        hit = t
                if hit < 0.0:
                    # spherical caps
                    for e in range(2):
                        cen = a if e == 0 else b
                        oc = -cen
                        hb = rd @ oc
                        hc = oc @ oc - radius * radius
                        hh = hb * hb - hc
                        if hh >= 0.0:
                            t = -hb - np.sqrt(hh)
                            if t > 0.0 and (hit < 0.0 or t < hit):
                                hit = t
                                y = 0.0 if e == 0 else baba
                if hit > 0.0:
                    z = hit / norm          # depth along the view axis
                    if z < depth[r, c]:
                        depth[r, c] = z
                        bone_id[r, c] = k
                        along[r, c] = min(max(y / baba, 0.0), 1.0)


# ---------------------------------------------------------------- helpers

def _as_triangles(mesh) -> np.ndarray:
    tris = getattr(mesh, "triangles", mesh)
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample img at continuous pixel coordinates (centres at integers), clamping to the edge."""
    H, W = img.shape[:2]
    x = np.clip(x, 0.0, W - 1.0)
    y = np.clip(y, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), W - 2) if W > 1 else np.zeros(x.shape, np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), H - 2) if H > 1 else np.zeros(y.shape, np.int64)
    x1, y1 = np.minimum(x0 + 1, W - 1), np.minimum(y0 + 1, H - 1)
    fx, fy = x - x0, y - y0
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def sample_bilinear_masked(img: np.ndarray, mask: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample whose weights are renormalised over taps inside ``mask``.

    Keeps background colour from bleeding into silhouette samples; falls back
    to the plain bilinear value when no tap is inside the mask.
    """
    H, W = img.shape[:2]
    x = np.clip(x, 0.0, W - 1.0)
    y = np.clip(y, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(H - 2, 0))
    x1, y1 = np.minimum(x0 + 1, W - 1), np.minimum(y0 + 1, H - 1)
    fx, fy = x - x0, y - y0
    taps = [(y0, x0, (1 - fx) * (1 - fy)), (y0, x1, fx * (1 - fy)), (y1, x0, (1 - fx) * fy), (y1, x1, fx * fy)]
    acc = np.zeros(x.shape + img.shape[2:])
    wsum = np.zeros(x.shape)
    for yy, xx, wt in taps:
        wt = wt * mask[yy, xx]
        acc += img[yy, xx] * (wt[..., None] if img.ndim == 3 else wt)
        wsum += wt
    plain = sample_bilinear(img, x, y)
    ok = wsum > 1e-12
    safe = np.where(ok, wsum, 1.0)
    out = acc / (safe[..., None] if img.ndim == 3 else safe)
    return np.where(ok[..., None] if img.ndim == 3 else ok, out, plain)


def sample_texture(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    H, W = texture.shape[:2]
    return sample_bilinear(texture, uv[..., 0] * W - 0.5, uv[..., 1] * H - 0.5)


def triangle_status(tris: np.ndarray, vcam: np.ndarray, camera: Camera):
    """(front-facing, survives near-plane) flags per triangle."""
    if len(tris) == 0:
        return np.zeros(0, bool), np.zeros(0, bool)
    z = vcam[:, 2]
    near_ok = np.all(z[tris] <= -NEAR, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = vcam[:, 0] / -z
        b = vcam[:, 1] / -z
    pa, pb = a[tris], b[tris]
    cross = (pa[:, 1] - pa[:, 0]) * (pb[:, 2] - pb[:, 0]) - (pa[:, 2] - pa[:, 0]) * (pb[:, 1] - pb[:, 0])
    front = near_ok & (cross > 0)
    return front, near_ok


def rasterize(mesh, vertices: np.ndarray, camera: Camera):
    """Z-buffer pass: (depth, tri_id, bary, front flags)."""
    tris = _as_triangles(mesh)
    H, W = camera.height, camera.width
    zbuf = np.full((H, W), np.inf)
    tri_id = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    vertices = np.asarray(vertices, dtype=np.float64)
    if len(tris) == 0:
        return zbuf, tri_id, bary, np.zeros(0, bool)
    if not np.all(np.isfinite(vertices)):
        raise ValueError("posed vertices must be finite")
    vcam = camera.to_camera(vertices)
    front, near_ok = triangle_status(tris, vcam, camera)
    if not near_ok.any():
        warnings.warn("every triangle crosses the near plane; nothing rendered", RuntimeWarning, stacklevel=2)
    sx, sy, sw = camera.project_camera(vcam)
    sx, sy, sw = (np.nan_to_num(a, nan=0.0, posinf=0.0, neginf=0.0) for a in (sx, sy, sw))
    _raster_kernel(sx, sy, np.where(sw > 0, sw, 1.0), tris, front, H, W, zbuf, tri_id, bary)
    return zbuf, tri_id, bary, front


def render(mesh, vertices: np.ndarray, uv: np.ndarray, texture: np.ndarray, camera: Camera,
           background: np.ndarray | None = None) -> RenderOutput:
    texture = np.asarray(texture, dtype=np.float64)
    if texture.ndim != 3 or texture.shape[0] < 2 or texture.shape[1] < 2:
        raise ValueError(f"texture must be at least 2x2xC, got {texture.shape}")
    tris = _as_triangles(mesh)
    depth, tri_id, bary, _ = rasterize(tris, vertices, camera)
    mask = tri_id >= 0
    H, W = mask.shape
    color = np.zeros((H, W, texture.shape[2])) if background is None else np.array(background, dtype=np.float64)
    pixel_uv = np.full((H, W, 2), np.nan)
    if mask.any():
        t = tri_id[mask]
        puv = np.einsum("mk,mkc->mc", bary[mask], np.asarray(uv, dtype=np.float64)[tris[t]])
        pixel_uv[mask] = puv
        color[mask] = sample_texture(texture, puv)
    return RenderOutput(color, depth, mask, pixel_uv, tri_id, bary)


def supersampled_render(mesh, vertices, uv, texture, camera: Camera, factor: int = 4,
                        background: np.ndarray | None = None) -> RenderOutput:
    """Box-filtered render at factor x factor samples per pixel; mask = fully covered pixels."""
    bg = None if background is None else np.repeat(np.repeat(background, factor, 0), factor, 1)
    hi = render(mesh, vertices, uv, texture, camera.scaled(factor), bg)
    H, W = camera.height, camera.width

    def pool(a):
        return a.reshape(H, factor, W, factor, *a.shape[2:]).mean(axis=(1, 3))

    cover = pool(hi.mask.astype(np.float64))
    lo = render(mesh, vertices, uv, texture, camera)
    lo.color = pool(hi.color)
    lo.mask = lo.mask & (cover == 1.0)
    return lo


# ---------------------------------------------------------------- texel atlas and visibility

@dataclass
class TexelAtlas:
    """Which triangle (and where inside it) each texel centre belongs to."""
    tri_id: np.ndarray    # (R, R), -1 outside the atlas
    bary: np.ndarray      # (R, R, 3) affine barycentrics in UV space
    res: int

    @property
    def mask(self) -> np.ndarray:
        return self.tri_id >= 0


class UVOverlapError(ValueError):
    pass


def texel_atlas(mesh, uv: np.ndarray, texture_res: int) -> TexelAtlas:
    tris = _as_triangles(mesh)
    uv = np.asarray(uv, dtype=np.float64)
    tri_id = np.full((texture_res, texture_res), -1, dtype=np.int64)
    bary = np.zeros((texture_res, texture_res, 3))
    overlaps = _uv_raster_kernel(uv[:, 0] * texture_res, uv[:, 1] * texture_res, tris, texture_res, tri_id, bary)
    if overlaps:
        raise UVOverlapError(f"{overlaps} texels are covered by more than one triangle; the UV atlas must be injective")
    return TexelAtlas(tri_id, bary, texture_res)


def triangle_adjacency(tris: np.ndarray) -> np.ndarray:
    """(T, 3) index of the triangle across each edge, -1 on boundary edges."""
    T = len(tris)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    owner = np.tile(np.arange(T), 3)
    slot = np.repeat(np.arange(3), T)
    key = np.sort(e, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    adj = np.full((T, 3), -1, dtype=np.int64)
    i = np.nonzero(same)[0]
    a, b = order[i], order[i + 1]
    adj[owner[a], slot[a]] = owner[b]
    adj[owner[b], slot[b]] = owner[a]
    return adj


def surface_visibility(tris, vcam, camera: Camera, tri_idx, bary, zbuf_tri, front):
    """Shared depth test for surface points given as (triangle, barycentric) pairs.

    A point is visible when its triangle faces the camera, it projects inside
    the image, and no z-buffer winner of the 3x3 pixel block around its
    projection is hit by the exact ray through it more than DEPTH_EPS in
    front of the point.  Returns (visible, px, py, col, row, camera-space point).
    """
    P = np.einsum("mk,mkc->mc", bary, vcam[tris[tri_idx]])
    px, py, w = camera.project_camera(P)
    H, W = zbuf_tri.shape
    ok = front[tri_idx] & np.isfinite(px) & np.isfinite(py) & (px >= 0) & (px < W) & (py >= 0) & (py < H)
    col = np.where(ok, np.floor(np.where(ok, px, 0)).astype(np.int64), -1)
    row = np.where(ok, np.floor(np.where(ok, py, 0)).astype(np.int64), -1)
    col = np.minimum(col, W - 1)
    row = np.minimum(row, H - 1)
    visible = ok.copy()
    idx = np.nonzero(ok)[0]
    if len(idx):
        ray = camera.ray_directions(px[idx], py[idx])           # unit depth, so hit t == depth
        front_depth = np.full(len(idx), np.inf)
        adj = triangle_adjacency(tris)
        block = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr = np.clip(row[idx] + dr, 0, H - 1)
                cc = np.clip(col[idx] + dc, 0, W - 1)
                block.append(zbuf_tri[rr, cc])
        block = np.stack(block, axis=1)
        # winners plus two rings of edge neighbours: occluding facets narrower than a
        # pixel can hide between pixel centres near silhouettes
        nb = np.where(block[..., None] >= 0, adj[np.maximum(block, 0)], -1).reshape(len(idx), -1)
        nb2 = np.where(nb[..., None] >= 0, adj[np.maximum(nb, 0)], -1).reshape(len(idx), -1)
        cands = np.concatenate([block, nb, nb2], axis=1)
        cands.sort(axis=1)
        cands[:, 1:][cands[:, 1:] == cands[:, :-1]] = -1     # test each distinct triangle once
        for j in range(cands.shape[1]):
            cand = cands[:, j]
            has = cand >= 0
            has &= front[np.maximum(cand, 0)]
            k = np.where(has, cand, 0)
            A, B, C = vcam[tris[k, 0]], vcam[tris[k, 1]], vcam[tris[k, 2]]
            e1, e2 = B - A, C - A
            pv = np.cross(ray, e2)
            det = np.einsum("mc,mc->m", e1, pv)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / det
                sv = -A
                u = np.einsum("mc,mc->m", sv, pv) * inv
                qv = np.cross(sv, e1)
                v = np.einsum("mc,mc->m", ray, qv) * inv
                t = np.einsum("mc,mc->m", e2, qv) * inv
                tol = 1e-9
                hit = has & (np.abs(det) > 1e-300) & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > 0)
            front_depth = np.where(hit, np.minimum(front_depth, t), front_depth)
        visible[idx] = w[idx] <= front_depth + DEPTH_EPS
    return visible, px, py, col, row, P


def _texel_visibility(mesh, vertices, uv, camera, texture_res, atlas=None):
    tris = _as_triangles(mesh)
    atlas = atlas if atlas is not None else texel_atlas(tris, uv, texture_res)
    if atlas.res != texture_res:
        raise ValueError("atlas resolution does not match texture_res")
    zbuf, zbuf_tri, _, front = rasterize(tris, vertices, camera)
    vcam = camera.to_camera(np.asarray(vertices, dtype=np.float64))
    inside = atlas.mask
    vis = np.zeros_like(inside)
    src = np.full(inside.shape + (2,), -1, dtype=np.int64)
    out = {"inside": inside, "tris": tris, "vcam": vcam}
    if inside.any() and len(tris):
        v, px, py, col, row, P = surface_visibility(tris, vcam, camera, atlas.tri_id[inside],
                                                    atlas.bary[inside], zbuf_tri, front)
        vis[inside] = v
        src[inside] = np.where(v[:, None], np.stack([col, row], axis=1), -1)
        out.update(px=px, py=py, P=P, visible=v)
    out.update(mask=vis, source_pixel=src, atlas=atlas)
    return out


def bake_partial_normal_map(mesh, vertices, normals, uv, camera: Camera, texture_res: int,
                            atlas: TexelAtlas | None = None) -> PartialNormalMap:
    """Camera-space unit normals, flipped toward the camera, on visible texels; zero elsewhere."""
    return _bake_normals(_texel_visibility(mesh, vertices, uv, camera, texture_res, atlas), normals, camera,
                         texture_res)


def _bake_normals(info, normals, camera, texture_res):
    out = np.zeros((texture_res, texture_res, 3))
    mask = info["mask"]
    if mask.any():
        atlas, tris, inside = info["atlas"], info["tris"], info["inside"]
        vis = info["visible"]
        t = atlas.tri_id[inside][vis]
        b = atlas.bary[inside][vis]
        n = np.einsum("mk,mkc->mc", b, np.asarray(normals, dtype=np.float64)[tris[t]]) @ camera.rotation.T
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        toward = -info["P"][vis]
        n *= np.where(np.einsum("mc,mc->m", n, toward) < 0, -1.0, 1.0)[:, None]
        out[mask] = n
    return PartialNormalMap(out, mask, info["source_pixel"])


def backproject_texture(frame: np.ndarray, fg_mask: np.ndarray, mesh, vertices, uv, camera: Camera,
                        texture_res: int, atlas: TexelAtlas | None = None) -> PartialTextureMap:
    frame, fg_mask = _check_frame(frame, fg_mask, camera)
    return _backproject(_texel_visibility(mesh, vertices, uv, camera, texture_res, atlas), frame, fg_mask,
                        texture_res)


def extract_partial_maps(frame, fg_mask, mesh, vertices, normals, uv, camera: Camera, texture_res: int,
                         atlas: TexelAtlas | None = None) -> tuple[PartialNormalMap, PartialTextureMap]:
    """Normal map and back-projected texture from one shared visibility pass."""
    frame, fg_mask = _check_frame(frame, fg_mask, camera)
    info = _texel_visibility(mesh, vertices, uv, camera, texture_res, atlas)
    return _bake_normals(info, normals, camera, texture_res), _backproject(info, frame, fg_mask, texture_res)


def _check_frame(frame, fg_mask, camera):
    frame = np.asarray(frame, dtype=np.float64)
    fg_mask = np.asarray(fg_mask, dtype=bool)
    if frame.shape[:2] != (camera.height, camera.width) or fg_mask.shape != frame.shape[:2]:
        raise ValueError(f"frame {frame.shape[:2]} / mask {fg_mask.shape} do not match camera "
                         f"{(camera.height, camera.width)}")
    return frame, fg_mask


def _backproject(info, frame, fg_mask, texture_res):
    rgb = np.zeros((texture_res, texture_res, frame.shape[2]))
    mask = info["mask"].copy()
    src = info["source_pixel"]
    if mask.any():
        col, row = src[mask, 0], src[mask, 1]
        keep = fg_mask[row, col]
        sel = np.argwhere(mask)
        vis = info["visible"]
        px, py = info["px"][vis], info["py"][vis]
        colors = sample_bilinear_masked(frame, fg_mask, px - 0.5, py - 0.5)
        drop = sel[~keep]
        mask[drop[:, 0], drop[:, 1]] = False
        rgb[sel[keep, 0], sel[keep, 1]] = colors[keep]
        src = src.copy()
        src[drop[:, 0], drop[:, 1]] = -1
    return PartialTextureMap(rgb, mask, src)


def analytic_flow(posed_prev: np.ndarray, posed_next: np.ndarray, mesh, camera: Camera,
                  prev_render: RenderOutput | None = None):
    """Per-pixel motion of the surface seen at t-1, plus its co-visibility at t.

    Returns (flow (H, W, 2) as (dx, dy) in pixels, covis (H, W) bool).
    """
    tris = _as_triangles(mesh)
    posed_prev = np.asarray(posed_prev, dtype=np.float64)
    posed_next = np.asarray(posed_next, dtype=np.float64)
    if posed_prev.shape != posed_next.shape:
        raise ValueError("both frames must share the same topology")
    if prev_render is None:
        _, tri_prev, bary_prev, _ = rasterize(tris, posed_prev, camera)
    else:
        tri_prev, bary_prev = prev_render.tri_id, prev_render.bary
    H, W = tri_prev.shape
    flow = np.zeros((H, W, 2))
    covis = np.zeros((H, W), dtype=bool)
    m = tri_prev >= 0
    if not m.any():
        return flow, covis
    _, tri_next, _, front_next = rasterize(tris, posed_next, camera)
    vcam = camera.to_camera(posed_next)
    vis, px, py, *_ = surface_visibility(tris, vcam, camera, tri_prev[m], bary_prev[m], tri_next, front_next)
    rows, cols = np.nonzero(m)
    flow[m, 0] = np.where(np.isfinite(px), px - (cols + 0.5), 0.0)
    flow[m, 1] = np.where(np.isfinite(py), py - (rows + 0.5), 0.0)
    covis[m] = vis
    return flow, covis


def flow_warp_error(prev_color: np.ndarray, next_color: np.ndarray, next_mask: np.ndarray,
                    flow: np.ndarray, covis: np.ndarray) -> float:
    """Mean |prev(p) - next(p + flow(p))| over co-visible p, next sampled inside its mask."""
    ys, xs = np.nonzero(covis)
    if len(ys) == 0:
        return 0.0
    warped = sample_bilinear_masked(next_color, next_mask, xs + 0.0 + flow[ys, xs, 0], ys + 0.0 + flow[ys, xs, 1])
    return float(np.abs(warped - prev_color[ys, xs]).mean())


# ---------------------------------------------------------------- skeleton render

def bone_colors(n: int) -> np.ndarray:
    import colorsys
    return np.array([colorsys.hsv_to_rgb((k * 0.618034) % 1.0, 0.85, 0.95) for k in range(n)])


def render_skeleton(skeleton, theta, camera: Camera, bone_radius: float = 0.04,
                    background: np.ndarray | None = None) -> RenderOutput:
    """Bones as depth-tested capsules, one distinct colour per bone.

    pixel_uv holds (position along the bone, bone index / bone count).
    """
    from .character import forward_kinematics
    _, pos = forward_kinematics(skeleton, theta)
    bones = [(p, c) for c, p in enumerate(skeleton.parents) if p >= 0]
    pc = camera.to_camera(pos)
    seg_a = np.array([pc[p] for p, _ in bones]).reshape(-1, 3)
    seg_b = np.array([pc[c] for _, c in bones]).reshape(-1, 3)
    H, W = camera.height, camera.width
    cols, rows = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    dirs = camera.ray_directions(cols, rows)
    depth = np.full((H, W), np.inf)
    bone_id = np.full((H, W), -1, dtype=np.int64)
    along = np.zeros((H, W))
    if len(bones):
        _capsule_kernel(np.ascontiguousarray(dirs), seg_a, seg_b, float(bone_radius), depth, bone_id, along)
    mask = bone_id >= 0
    color = np.zeros((H, W, 3)) if background is None else np.array(background, dtype=np.float64)
    color[mask] = bone_colors(len(bones))[bone_id[mask]]
    pixel_uv = np.full((H, W, 2), np.nan)
    pixel_uv[mask, 0] = along[mask]
    pixel_uv[mask, 1] = bone_id[mask] / max(len(bones), 1)
    return RenderOutput(color, depth, mask, pixel_uv, bone_id, np.zeros((H, W, 3)))


# ---------------------------------------------------------------- image IO

def srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(linear, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    x = np.clip(encoded, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def save_png(path, linear_rgb: np.ndarray) -> None:
    img = np.round(srgb_encode(linear_rgb) * 255.0).astype(np.uint8)
    Image.fromarray(img).save(path)


def load_png(path) -> np.ndarray:
    return srgb_decode(np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0)


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128
