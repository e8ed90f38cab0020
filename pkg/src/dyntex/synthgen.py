"""Procedural ground truth: an articulated capsule actor with pose-dependent surface bands.

The actor is the zero set of a smooth union of per-bone capsules, meshed with
marching cubes, cut open along a tree of back-side seams into a disk and
mapped to the unit square.  Frames are the actor rendered over a static
textured plane; the texture darkens in sinusoidal bands whose strength grows
with how far nearby joints are bent.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import distance_transform_edt
from scipy.sparse.csgraph import connected_components, dijkstra
from skimage.measure import marching_cubes

from .character import (MotionClip, PoseVector, SkinnedMesh, Skeleton, humanoid_skeleton, pose_mesh,
                        save_clip, save_skeleton, save_skin, triangle_areas, write_obj)
from .nn.serialization import save_tensor
from .raster import Camera, render, save_mask, save_png, texel_atlas
from .uvmap import UVResult, boundary_loop, check_disk, harmonic_uv, square_boundary

MAX_INFLUENCES = 4
FRONT_PENALTY = 20.0     # seam edges with z > 0 (the side the camera sees at rest) cost this much more


class ActorSpecError(ValueError):
    pass


# ---------------------------------------------------------------- spec

@dataclass
class WrinkleModel:
    amplitude: float = 0.6             # darkening per radian of bend at full influence
    frequency: float = 6.0             # band cycles across the unit UV square
    orientation: float = 0.35          # band normal direction in UV, radians
    falloff: float = 0.15              # metres; Gaussian reach of a joint's influence
    influence: dict = field(default_factory=dict)   # joint name -> weight; missing articulated joints get 1


@dataclass
class CameraPathSpec:
    kind: str = "static"               # "static" or "orbit"
    distance: float = 3.5
    height: float = 0.95
    target_height: float = 0.95
    focal: float = 100.0               # pixels at 64 px width; scaled with width
    width: int = 64
    height_px: int = 64
    degrees_per_frame: float = 0.0     # orbit only


@dataclass
class BackgroundSpec:
    kind: str = "plane"                # "plane" (textured quad behind the actor) or "gradient"
    seed: int = 1
    plane_distance: float = 1.5        # metres behind the actor
    plane_size: float = 9.0
    top: tuple = (0.55, 0.65, 0.80)
    bottom: tuple = (0.30, 0.28, 0.25)


@dataclass
class SyntheticActorSpec:
    skeleton: dict | None = None       # Skeleton.to_dict(); None selects the default humanoid
    radii: dict = field(default_factory=dict)   # bone (child joint name) -> capsule radius
    default_radius: float = 0.05
    grid_spacing: float = 0.02         # marching-cubes cell size in metres
    blend: float = 0.03                # smooth-union width in metres
    skin_sigma: float = 0.04           # skinning falloff in metres
    texture_res: int = 128
    base_texture_seed: int = 0
    wrinkles: WrinkleModel = field(default_factory=WrinkleModel)
    camera: CameraPathSpec = field(default_factory=CameraPathSpec)
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    seed: int = 0
    noise_sigma: float = 0.0           # rad; Gaussian noise on the emitted joint angles only

    def build_skeleton(self) -> Skeleton:
        return humanoid_skeleton() if self.skeleton is None else Skeleton.from_dict(self.skeleton)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticActorSpec":
        d = dict(d)
        d["wrinkles"] = WrinkleModel(**d.get("wrinkles", {}))
        d["camera"] = CameraPathSpec(**d.get("camera", {}))
        bg = dict(d.get("background", {}))
        for k in ("top", "bottom"):
            if k in bg:
                bg[k] = tuple(bg[k])
        d["background"] = BackgroundSpec(**bg)
        return cls(**d)


def default_humanoid_spec(**overrides) -> SyntheticActorSpec:
    radii = {"spine": 0.11, "neck": 0.12, "head_top": 0.09,
             "l_shoulder": 0.06, "r_shoulder": 0.06, "l_elbow": 0.05, "r_elbow": 0.05,
             "l_wrist": 0.04, "r_wrist": 0.04, "l_hand": 0.035, "r_hand": 0.035,
             "l_hip": 0.08, "r_hip": 0.08, "l_knee": 0.055, "r_knee": 0.055,
             "l_ankle": 0.045, "r_ankle": 0.045, "l_toe": 0.035, "r_toe": 0.035}
    spec = SyntheticActorSpec(radii=radii)
    for k, v in overrides.items():
        setattr(spec, k, v)
    return spec


def save_spec(path, spec: SyntheticActorSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2))


def load_spec(path) -> SyntheticActorSpec:
    return SyntheticActorSpec.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- capsule geometry

def _bones(sk: Skeleton) -> list[tuple[int, int]]:
    return [(int(p), c) for c, p in enumerate(sk.parents) if p >= 0]


def bone_radii(spec: SyntheticActorSpec, sk: Skeleton) -> np.ndarray:
    names = sk.names
    unknown = set(spec.radii) - set(names)
    if unknown:
        raise ActorSpecError(f"radii given for unknown bones {sorted(unknown)}")
    r = np.array([float(spec.radii.get(names[c], spec.default_radius)) for _, c in _bones(sk)])
    if np.any(r <= 0):
        raise ActorSpecError("capsule radii must be positive")
    return r


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(points)) if denom == 0 else np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def _segment_segment_distance(p0, p1, q0, q1, samples: int = 64) -> float:
    t = np.linspace(0.0, 1.0, samples)[:, None]
    pts = p0 + t * (p1 - p0)
    d = segment_distance(pts, q0, q1)
    k = int(np.argmin(d))
    # refine on the bracketing interval
    lo, hi = t[max(k - 1, 0), 0], t[min(k + 1, samples - 1), 0]
    for _ in range(40):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        d1 = segment_distance((p0 + m1 * (p1 - p0))[None], q0, q1)[0]
        d2 = segment_distance((p0 + m2 * (p1 - p0))[None], q0, q1)[0]
        if d1 < d2:
            hi = m2
        else:
            lo = m1
    return float(segment_distance((p0 + 0.5 * (lo + hi) * (p1 - p0))[None], q0, q1)[0])


def check_capsule_overlaps(sk: Skeleton, radii: np.ndarray) -> None:
    """Capsules more than one bone apart in the skeleton must not touch."""
    bones = _bones(sk)
    nb = len(bones)
    adj = np.zeros((nb, nb), dtype=bool)
    for i, (a0, a1) in enumerate(bones):
        for j, (b0, b1) in enumerate(bones):
            adj[i, j] = i != j and bool({a0, a1} & {b0, b1})
    hops = dijkstra(sp.csr_matrix(adj.astype(float)), unweighted=True)
    rest = sk.rest_positions
    for i in range(nb):
        for j in range(i + 1, nb):
            if hops[i, j] <= 2:
                continue
            (a0, a1), (b0, b1) = bones[i], bones[j]
            d = _segment_segment_distance(rest[a0], rest[a1], rest[b0], rest[b1])
            if d <= radii[i] + radii[j]:
                raise ActorSpecError(f"capsules {sk.names[a1]!r} and {sk.names[b1]!r} intersect "
                                     f"(axis distance {d:.3f} <= {radii[i] + radii[j]:.3f})")


def _smin(a, b, k):
    if k <= 0:
        return np.minimum(a, b)
    h = np.maximum(k - np.abs(a - b), 0.0) / k
    return np.minimum(a, b) - h * h * k * 0.25


def capsule_sdf(points: np.ndarray, segments: np.ndarray, radii: np.ndarray, blend: float) -> np.ndarray:
    f = segment_distance(points, segments[0, 0], segments[0, 1]) - radii[0]
    for (a, b), r in zip(segments[1:], radii[1:]):
        f = _smin(f, segment_distance(points, a, b) - r, blend)
    return f


def _project_to_surface(v, segments, radii, blend, iterations=6, h=1e-6):
    v = v.copy()
    for _ in range(iterations):
        f = capsule_sdf(v, segments, radii, blend)
        g = np.stack([(capsule_sdf(v + e, segments, radii, blend) - capsule_sdf(v - e, segments, radii, blend))
                      / (2 * h) for e in np.eye(3) * h], axis=1)
        v -= (f / np.maximum((g * g).sum(axis=1), 1e-12))[:, None] * g
    return v


def _euler_characteristic(tris: np.ndarray) -> int:
    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    return len(np.unique(tris)) - len(np.unique(e, axis=0)) + len(tris)


def capsule_union_mesh(segments: np.ndarray, radii: np.ndarray, spacing: float, blend: float):
    """Closed genus-0 triangle mesh (outward CCW) of the smooth capsule union."""
    pad = radii.max() + blend + 3 * spacing
    lo = segments.reshape(-1, 3).min(axis=0) - pad
    hi = segments.reshape(-1, 3).max(axis=0) + pad
    axes = [np.arange(l, h + spacing, spacing) for l, h in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vol = capsule_sdf(grid.reshape(-1, 3), segments, radii, blend).reshape(grid.shape[:3])
    verts, faces, _, _ = marching_cubes(vol, 0.0, spacing=(spacing,) * 3, allow_degenerate=False)
    verts = verts.astype(np.float64) + lo
    faces = faces.astype(np.int64)
    verts = _project_to_surface(verts, segments, radii, blend)
    p = verts[faces]
    signed_vol = np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum()
    if signed_vol < 0:
        faces = faces[:, [0, 2, 1]]
    n_comp, _ = connected_components(_adjacency(len(verts), faces))
    if n_comp != 1 or _euler_characteristic(faces) != 2:
        raise ActorSpecError(f"capsule union is not a single sphere-like surface "
                             f"({n_comp} components, Euler characteristic {_euler_characteristic(faces)})")
    areas = triangle_areas(verts, faces)
    if np.any(areas <= 1e-12):
        raise ActorSpecError("meshing produced degenerate triangles; change grid_spacing")
    return verts, faces


def _adjacency(n, tris, weights=None):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    w = np.ones(len(e)) if weights is None else weights
    A = sp.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    return A.maximum(A.T)


# ---------------------------------------------------------------- seams

def seam_tree(verts: np.ndarray, tris: np.ndarray, root: int, tips: list[int]) -> set[frozenset]:
    """Union of front-penalised shortest paths from root to each tip (a tree)."""
    e = np.unique(np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1), axis=0)
    length = np.linalg.norm(verts[e[:, 0]] - verts[e[:, 1]], axis=1)
    mid_z = 0.5 * (verts[e[:, 0], 2] + verts[e[:, 1], 2])
    w = length * np.where(mid_z > 0, FRONT_PENALTY, 1.0)
    n = len(verts)
    G = sp.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    G = G.maximum(G.T)
    _, pred = dijkstra(G, indices=root, return_predecessors=True)
    cut = set()
    for t in tips:
        v = t
        while v != root:
            p = pred[v]
            if p < 0:
                raise ActorSpecError("seam tip is not connected to the seam root")
            cut.add(frozenset((int(v), int(p))))
            v = p
    return cut


def cut_along(verts: np.ndarray, tris: np.ndarray, cut: set[frozenset]):
    """Open a closed mesh along a tree of edges; returns (verts, tris, original index per vertex)."""
    degree: dict[int, int] = {}
    for e in cut:
        for v in e:
            degree[v] = degree.get(v, 0) + 1
    tris = tris.copy()
    corners: dict[int, list[tuple[int, int]]] = {}
    for v in degree:
        corners[v] = []
    for t, tri in enumerate(tris):
        for k in range(3):
            if int(tri[k]) in corners:
                corners[int(tri[k])].append((t, k))
    new_verts = [verts]
    origin = list(range(len(verts)))
    n = len(verts)
    replace = []
    for v, d in degree.items():
        if d < 2:
            continue
        by_a = {}
        for t, k in corners[v]:
            a, b = int(tris[t, (k + 1) % 3]), int(tris[t, (k + 2) % 3])
            by_a[a] = (t, k, b)
        start = next(a for a in by_a if frozenset((v, a)) in cut)
        wedge, a = 0, start
        while True:
            t, k, b = by_a[a]
            if wedge > 0:
                replace.append((t, k, n + wedge - 1))
            if frozenset((v, b)) in cut:
                wedge += 1
            a = b
            if a == start:
                break
        if wedge != d:
            raise ActorSpecError(f"seam vertex {v}: found {wedge} wedges for {d} seam edges (non-manifold fan)")
        new_verts.append(np.repeat(verts[v][None], d - 1, axis=0))
        origin.extend([v] * (d - 1))
        n += d - 1
    for t, k, nv in replace:
        tris[t, k] = nv
    return np.concatenate(new_verts), tris, np.array(origin)


# ---------------------------------------------------------------- actor

@dataclass
class SyntheticActor:
    spec: SyntheticActorSpec
    skeleton: Skeleton
    mesh: SkinnedMesh
    uv_result: UVResult
    texel_mask: np.ndarray        # (R, R) texels covered by the chart
    texel_points: np.ndarray      # (R, R, 3) rest-pose surface point per texel (nearest chart texel outside)
    albedo: np.ndarray            # (R, R, 3) linear RGB in [0, 1]
    influence: np.ndarray         # (R, R, J) wrinkle influence of every joint
    band: np.ndarray              # (R, R) in [0, 1]
    background_texture: np.ndarray

    @property
    def texture_res(self) -> int:
        return self.spec.texture_res


def skin_weights(verts: np.ndarray, sk: Skeleton, sigma: float):
    """Per-vertex (joints, weights): Gaussian falloff in the distance beyond the nearest bone.

    A bone parent->child moves with the parent joint, so each joint's distance is
    the minimum over the bones it drives.
    """
    bones = _bones(sk)
    rest = sk.rest_positions
    d = np.full((len(verts), len(sk)), np.inf)
    for p, c in bones:
        d[:, p] = np.minimum(d[:, p], segment_distance(verts, rest[p], rest[c]))
    dmin = d.min(axis=1, keepdims=True)
    w = np.exp(-((d - dmin) / sigma) ** 2)
    k = min(MAX_INFLUENCES, len(sk))
    idx = np.argsort(-w, axis=1, kind="stable")[:, :k]
    ww = np.take_along_axis(w, idx, axis=1)
    ww /= ww.sum(axis=1, keepdims=True)
    return idx, ww


def _seam_points(verts, sk, radii):
    bones = _bones(sk)
    rest = sk.rest_positions
    leaves = [c for p, c in bones if not sk.children(c)]
    tips = []
    for p, c in bones:
        if c in leaves:
            r = radii[bones.index((p, c))]
            d = rest[c] - rest[p]
            d = d / max(np.linalg.norm(d), 1e-12)
            tips.append(int(np.argmin(np.linalg.norm(verts - (rest[c] + r * d), axis=1))))
    p0, c0 = bones[0]
    mid = 0.5 * (rest[p0] + rest[c0])
    back = mid - np.array([0.0, 0.0, radii[0]])
    root = int(np.argmin(np.linalg.norm(verts - back, axis=1)))
    return root, sorted(set(tips) - {root})


def build_actor(spec: SyntheticActorSpec) -> SyntheticActor:
    sk = spec.build_skeleton()
    bones = _bones(sk)
    if not bones:
        raise ActorSpecError("skeleton has no bones")
    radii = bone_radii(spec, sk)
    check_capsule_overlaps(sk, radii)
    rest = sk.rest_positions
    segments = np.array([[rest[p], rest[c]] for p, c in bones])
    verts, tris = capsule_union_mesh(segments, radii, spec.grid_spacing, spec.blend)
    root, tips = _seam_points(verts, sk, radii)
    if not tips:
        raise ActorSpecError("no seam tips found")
    verts_c, tris_c, _ = cut_along(verts, tris, seam_tree(verts, tris, root, tips))
    check_disk(len(verts_c), tris_c)
    boundary = square_boundary(verts_c, boundary_loop(tris_c), tris_c)
    uvr = harmonic_uv(verts_c, tris_c, boundary, weights="mean-value", quasi_iterations=3)
    joints, weights = skin_weights(verts_c, sk, spec.skin_sigma)
    mesh = SkinnedMesh(verts_c, tris_c, uvr.uv, joints, weights)
    mesh.validate(sk)

    R = spec.texture_res
    atlas = texel_atlas(tris_c, uvr.uv, R)
    inside = atlas.mask
    pts = np.zeros((R, R, 3))
    pts[inside] = np.einsum("mk,mkc->mc", atlas.bary[inside], verts_c[tris_c[atlas.tri_id[inside]]])
    _, (ri, ci) = distance_transform_edt(~inside, return_indices=True)
    pts = pts[ri, ci]
    albedo = base_albedo(pts, sk, segments, spec.base_texture_seed)
    influence = wrinkle_influence(pts, sk, spec.wrinkles)
    band = wrinkle_band(R, spec.wrinkles)
    bg = background_texture(spec.background)
    return SyntheticActor(spec, sk, mesh, uvr, inside, pts, albedo, influence, band, bg)


# ---------------------------------------------------------------- appearance

def base_albedo(points: np.ndarray, sk: Skeleton, segments: np.ndarray, seed: int) -> np.ndarray:
    """Smooth per-bone colours, soft-blended by distance, with stripes and low-frequency variation."""
    rng = np.random.default_rng([seed, 0xA1BE])
    flat = points.reshape(-1, 3)
    nb = len(segments)
    palette = rng.uniform(0.15, 0.85, size=(4, 3))
    bone_color = palette[rng.integers(0, len(palette), size=nb)]
    d = np.stack([segment_distance(flat, a, b) for a, b in segments], axis=1)
    w = np.exp(-((d - d.min(axis=1, keepdims=True)) / 0.05) ** 2)
    w /= w.sum(axis=1, keepdims=True)
    color = w @ bone_color
    stripe_dir = rng.normal(size=3)
    stripe_dir /= np.linalg.norm(stripe_dir)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * flat @ stripe_dir / 0.25 + rng.uniform(0, 2 * np.pi))
    color *= (0.8 + 0.2 * stripes)[:, None]
    for _ in range(3):
        k = rng.normal(size=3) * 4.0
        color += 0.04 * np.sin(flat @ k + rng.uniform(0, 2 * np.pi))[:, None] * rng.uniform(-1, 1, size=3)
    return np.clip(color, 0.0, 1.0).reshape(points.shape)


def joint_influence_weights(sk: Skeleton, model: WrinkleModel) -> np.ndarray:
    unknown = set(model.influence) - set(sk.names)
    if unknown:
        raise ActorSpecError(f"wrinkle influence given for unknown joints {sorted(unknown)}")
    return np.array([float(model.influence.get(j.name, 1.0 if len(j.axes) else 0.0)) for j in sk.joints])


def wrinkle_influence(points: np.ndarray, sk: Skeleton, model: WrinkleModel) -> np.ndarray:
    w = joint_influence_weights(sk, model)
    d = np.linalg.norm(points[..., None, :] - sk.rest_positions, axis=-1)
    return w * np.exp(-(d / model.falloff) ** 2)


def wrinkle_band(R: int, model: WrinkleModel) -> np.ndarray:
    c = (np.arange(R) + 0.5) / R
    u, v = np.meshgrid(c, c)          # u -> column, v -> row
    phase = u * np.cos(model.orientation) + v * np.sin(model.orientation)
    return 0.5 + 0.5 * np.sin(2 * np.pi * model.frequency * phase)


def joint_bends(sk: Skeleton, theta: PoseVector) -> np.ndarray:
    """Euclidean norm of each joint's angles (0 for joints without hinge axes)."""
    return np.array([float(np.linalg.norm(sk.joint_angles(theta, i))) for i in range(len(sk))])


def wrinkle_amplitude(actor: SyntheticActor, theta: PoseVector) -> np.ndarray:
    return actor.spec.wrinkles.amplitude * actor.influence @ joint_bends(actor.skeleton, theta)


def pose_dependent_appearance(actor: SyntheticActor, theta: PoseVector) -> np.ndarray:
    """Albedo darkened in UV bands; darkening = min(amplitude, 1) * band."""
    amp = np.minimum(wrinkle_amplitude(actor, theta), 1.0)
    return actor.albedo * (1.0 - amp * actor.band)[..., None]


# ---------------------------------------------------------------- camera and background

def camera_at(path: CameraPathSpec, angle_deg: float = 0.0) -> Camera:
    a = np.deg2rad(angle_deg)
    eye = (path.distance * np.sin(a), path.height, path.distance * np.cos(a))
    focal = path.focal * path.width / 64.0
    return Camera.look_at(eye, (0.0, path.target_height, 0.0), focal=focal, width=path.width,
                          height=path.height_px)


def frame_camera(path: CameraPathSpec, frame: int) -> Camera:
    if path.kind == "static":
        return camera_at(path, 0.0)
    if path.kind == "orbit":
        return camera_at(path, path.degrees_per_frame * frame)
    raise ActorSpecError(f"unknown camera path kind {path.kind!r}")


def background_texture(bg: BackgroundSpec, res: int = 64) -> np.ndarray:
    rng = np.random.default_rng([bg.seed, 0xB6])
    c = (np.arange(res) + 0.5) / res
    u, v = np.meshgrid(c, c)
    base = np.asarray(bg.bottom)[None, None] + (1 - v)[..., None] * (np.asarray(bg.top) - np.asarray(bg.bottom))
    check = ((np.floor(u * 8) + np.floor(v * 8)) % 2)[..., None]
    tint = rng.uniform(0.85, 1.0, size=3)
    return np.clip(base * (0.85 + 0.15 * check) * tint, 0.0, 1.0)


def background_image(actor: SyntheticActor, camera: Camera) -> np.ndarray:
    bg = actor.spec.background
    H, W = camera.height, camera.width
    rows = (np.arange(H) + 0.5) / H
    grad = np.asarray(bg.top)[None] * (1 - rows)[:, None] + np.asarray(bg.bottom)[None] * rows[:, None]
    img = np.repeat(grad[:, None, :], W, axis=1)
    if bg.kind == "gradient":
        return img
    if bg.kind != "plane":
        raise ActorSpecError(f"unknown background kind {bg.kind!r}")
    s, z = bg.plane_size / 2, -bg.plane_distance
    quad = np.array([[-s, -0.2, z], [s, -0.2, z], [s, 2 * s - 0.2, z], [-s, 2 * s - 0.2, z]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    uv = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    out = render(tris, quad, uv, actor.background_texture, camera, background=img)
    return out.color


# ---------------------------------------------------------------- motion

def procedural_clip(sk: Skeleton, n_frames: int, seed: int = 0, fps: float = 30.0,
                    amplitude: float = 0.45, turn: float = 0.35) -> MotionClip:
    """Sums of incommensurate sinusoids per DOF with a lowered-arm bias; gentle turning about y."""
    rng = np.random.default_rng([seed, 0x0C11])
    t = np.arange(n_frames) / fps
    freqs = rng.uniform(0.15, 0.6, size=(sk.dof, 2))
    phases = rng.uniform(0, 2 * np.pi, size=(sk.dof, 2))
    amps = amplitude * rng.uniform(0.3, 1.0, size=(sk.dof, 2)) / 2
    bias = np.zeros(sk.dof)
    for i, j in enumerate(sk.joints):
        if j.name.endswith("shoulder") and len(j.axes) == 3:
            side = np.sign(j.offset[0]) or 1.0
            bias[sk.dof_start[i] + 2] = -1.1 * side          # lower the arms from the T-pose
    angles = bias[None] + np.einsum("dk,tdk->td", amps, np.sin(2 * np.pi * freqs[None] * t[:, None, None] + phases[None]))
    yaw = turn * np.sin(2 * np.pi * 0.07 * t + rng.uniform(0, 2 * np.pi))
    sway = 0.03 * np.sin(2 * np.pi * 0.2 * t)
    poses = [PoseVector(np.array([sway[k], 0.0, 0.0]), np.array([0.0, yaw[k], 0.0]), angles[k])
             for k in range(n_frames)]
    return MotionClip(fps, poses)


# ---------------------------------------------------------------- dataset

@dataclass
class SyntheticFrame:
    image: np.ndarray
    mask: np.ndarray
    true_pose: PoseVector
    emitted_pose: PoseVector
    texture: np.ndarray
    camera: Camera


def render_frame(actor: SyntheticActor, theta: PoseVector, camera: Camera, background=None):
    texture = pose_dependent_appearance(actor, theta)
    verts = pose_mesh(actor.mesh, actor.skeleton, theta)
    bg = background_image(actor, camera) if background is None else background
    out = render(actor.mesh.triangles, verts, actor.mesh.uv, texture, camera, background=bg)
    return out, texture


def noisy_pose(theta: PoseVector, sigma: float, seed: int, frame: int) -> PoseVector:
    if sigma <= 0:
        return theta.copy()
    rng = np.random.default_rng([seed, frame])
    return PoseVector(theta.translation.copy(), theta.rotation.copy(),
                      theta.joint_angles + rng.normal(0.0, sigma, size=theta.joint_angles.shape))


def generate_frames(actor: SyntheticActor, clip: MotionClip):
    """Yields SyntheticFrame per clip pose (the image always uses the true pose)."""
    spec = actor.spec
    for p in clip.poses:
        if len(p.joint_angles) != actor.skeleton.dof:
            raise ValueError(f"clip pose has {len(p.joint_angles)} angles, actor skeleton needs {actor.skeleton.dof}")
    bg_cache = {}
    for f, theta in enumerate(clip.poses):
        cam = frame_camera(spec.camera, f)
        key = json.dumps(cam.to_dict())
        if key not in bg_cache:
            bg_cache = {key: background_image(actor, cam)}
        out, tex = render_frame(actor, theta, cam, bg_cache[key])
        yield SyntheticFrame(out.color, out.mask, theta, noisy_pose(theta, spec.noise_sigma, spec.seed, f), tex, cam)


def generate_sequence(spec: SyntheticActorSpec, clip: MotionClip, out_dir, actor: SyntheticActor | None = None):
    """Write frames/, masks/, gt_textures/, poses.json (emitted poses) and the actor files."""
    actor = build_actor(spec) if actor is None else actor
    d = Path(out_dir)
    for sub in ("frames", "masks", "gt_textures"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    cams = []
    true_poses, emitted = [], []
    for f, fr in enumerate(generate_frames(actor, clip)):
        save_png(d / "frames" / f"{f:05d}.png", fr.image)
        save_mask(d / "masks" / f"{f:05d}.png", fr.mask)
        save_tensor(d / "gt_textures" / f"{f:05d}.tnsr", fr.texture.astype(np.float32))
        cams.append(fr.camera.to_dict())
        true_poses.append(fr.true_pose)
        emitted.append(fr.emitted_pose)
    save_tensor(d / "gt_textures" / "static.tnsr", actor.albedo.astype(np.float32))
    save_clip(d / "poses.json", MotionClip(clip.fps, emitted))
    save_clip(d / "true_poses.json", MotionClip(clip.fps, true_poses))
    (d / "cameras.json").write_text(json.dumps(cams))
    write_actor(d / "actor", actor)
    save_spec(d / "spec.json", spec)
    return actor


def write_actor(directory, actor: SyntheticActor) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_obj(d / "mesh.obj", actor.mesh.vertices, actor.mesh.triangles, actor.mesh.uv)
    save_skin(d / "skin.json", actor.mesh)
    save_skeleton(d / "skeleton.json", actor.skeleton)
