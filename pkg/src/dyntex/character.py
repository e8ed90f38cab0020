"""Skeleton, pose parameterisation, and linear blend skinning."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * np.pi
MAX_INFLUENCES = 4


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    return np.pi - np.mod(np.pi - a, TWO_PI)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rotation matrix for a rotation of ``angle`` about unit ``axis`` (Rodrigues)."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def rotvec_matrix(rotvec) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-15:
        return np.eye(3)
    return axis_angle_matrix(rotvec / angle, angle)


def matrix_rotvec(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotvec_matrix` (angle in [0, pi])."""
    return Rotation.from_matrix(R).as_rotvec()


# ---------------------------------------------------------------- skeleton

@dataclass
class Joint:
    name: str
    parent: int
    offset: np.ndarray
    axes: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(3)
        self.axes = np.asarray(self.axes, dtype=np.float64).reshape(-1, 3)


class Skeleton:
    """Joint tree in topological order; joint 0 is the root.

    Each joint rotates about up to three hinge axes, applied in listed order.
    The root's ``offset`` is its rest position in world space; every other
    offset is relative to the parent joint.
    """

    def __init__(self, joints: Sequence[Joint]):
        self.joints = list(joints)
        if not self.joints:
            raise ValueError("skeleton needs at least one joint")
        roots = [i for i, j in enumerate(self.joints) if j.parent < 0]
        if roots != [0]:
            raise ValueError(f"skeleton must have exactly one root at index 0, got roots {roots}")
        for i, j in enumerate(self.joints[1:], start=1):
            if not 0 <= j.parent < i:
                raise ValueError(f"joint {j.name!r}: parent {j.parent} must precede it")
        for j in self.joints:
            if len(j.axes) > 3:
                raise ValueError(f"joint {j.name!r} has {len(j.axes)} axes (max 3)")
            norms = np.linalg.norm(j.axes, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError(f"joint {j.name!r} has non-unit hinge axes")
        counts = [len(j.axes) for j in self.joints]
        self.dof_start = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)
        self.dof = int(sum(counts))
        self.parents = np.array([j.parent for j in self.joints])
        rest = np.zeros((len(self.joints), 3))
        for i, j in enumerate(self.joints):
            rest[i] = j.offset if i == 0 else rest[j.parent] + j.offset
        self.rest_positions = rest

    def __len__(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def children(self, i: int) -> list[int]:
        return [k for k, j in enumerate(self.joints) if j.parent == i]

    def joint_angles(self, theta: "PoseVector", i: int) -> np.ndarray:
        s = self.dof_start[i]
        return theta.joint_angles[s:s + len(self.joints[i].axes)]

    def scaled(self, factor: float) -> "Skeleton":
        return Skeleton([Joint(j.name, j.parent, j.offset * factor, j.axes.copy()) for j in self.joints])

    def to_dict(self) -> dict:
        return {"joints": [{"name": j.name, "parent": int(j.parent), "offset": j.offset.tolist(),
                            "axes": j.axes.tolist()} for j in self.joints]}

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls([Joint(j["name"], j["parent"], j["offset"], j.get("axes", [])) for j in d["joints"]])


X, Y, Z = np.eye(3)


def humanoid_skeleton(scale: float = 1.0) -> Skeleton:
    """Default 20-joint, 27-DOF humanoid in a T-pose (y up, facing +z)."""
    J = []

    def add(name, parent, offset, axes=()):
        J.append(Joint(name, parent, np.asarray(offset) * scale, np.array(axes).reshape(-1, 3)))
        return len(J) - 1

    pelvis = add("pelvis", -1, (0.0, 0.95, 0.0))
    spine = add("spine", pelvis, (0.0, 0.10, 0.0), (X, Y, Z))
    neck = add("neck", spine, (0.0, 0.50, 0.0), (X, Z))
    add("head_top", neck, (0.0, 0.27, 0.0))
    for side, s in (("l", 1.0), ("r", -1.0)):
        sh = add(f"{side}_shoulder", spine, (0.20 * s, 0.45, 0.0), (X, Y, Z))
        el = add(f"{side}_elbow", sh, (0.28 * s, 0.0, 0.0), (Y,))
        wr = add(f"{side}_wrist", el, (0.25 * s, 0.0, 0.0), (Y, Z))
        add(f"{side}_hand", wr, (0.10 * s, 0.0, 0.0))
    for side, s in (("l", 1.0), ("r", -1.0)):
        hp = add(f"{side}_hip", pelvis, (0.10 * s, -0.05, 0.0), (X, Y, Z))
        kn = add(f"{side}_knee", hp, (0.0, -0.42, 0.0), (X,))
        an = add(f"{side}_ankle", kn, (0.0, -0.40, 0.0), (X,))
        add(f"{side}_toe", an, (0.0, -0.06, 0.13))
    return Skeleton(J)


# ---------------------------------------------------------------- pose

@dataclass
class PoseVector:
    """Global translation (m), global axis-angle rotation (rad), joint angles (rad).

    Joint angles are wrapped into (-pi, pi] on construction.
    """

    translation: np.ndarray
    rotation: np.ndarray
    joint_angles: np.ndarray

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.joint_angles = wrap_angle(np.asarray(self.joint_angles, dtype=np.float64).reshape(-1))

    @classmethod
    def zeros(cls, n_joint_dof: int) -> "PoseVector":
        return cls(np.zeros(3), np.zeros(3), np.zeros(n_joint_dof))

    @classmethod
    def from_array(cls, arr) -> "PoseVector":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[:3], arr[3:6], arr[6:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation, self.joint_angles])

    def __len__(self) -> int:
        return 6 + len(self.joint_angles)

    def copy(self) -> "PoseVector":
        return PoseVector(self.translation.copy(), self.rotation.copy(), self.joint_angles.copy())


def _check_theta(skeleton: Skeleton, theta: PoseVector) -> None:
    if len(theta.joint_angles) != skeleton.dof:
        raise ValueError(f"pose has {len(theta.joint_angles)} joint angles, skeleton needs {skeleton.dof}")


def forward_kinematics(skeleton: Skeleton, theta: PoseVector) -> tuple[np.ndarray, np.ndarray]:
    """Global 4x4 joint transforms and world joint positions.

    The global rigid rotation pivots about the root joint's rest position.
    """
    _check_theta(skeleton, theta)
    n = len(skeleton)
    G = np.zeros((n, 4, 4))
    for i, joint in enumerate(skeleton.joints):
        R = np.eye(3)
        for axis, a in zip(joint.axes, skeleton.joint_angles(theta, i)):
            R = R @ axis_angle_matrix(axis, a)
        local = np.eye(4)
        if i == 0:
            local[:3, :3] = rotvec_matrix(theta.rotation) @ R
            local[:3, 3] = joint.offset + theta.translation
            G[i] = local
        else:
            local[:3, :3] = R
            local[:3, 3] = joint.offset
            G[i] = G[joint.parent] @ local
    return G, G[:, :3, 3].copy()


def skinning_transforms(skeleton: Skeleton, theta: PoseVector) -> np.ndarray:
    """Per-joint transforms mapping rest-pose points to posed points."""
    G, _ = forward_kinematics(skeleton, theta)
    A = G.copy()
    A[:, :3, 3] -= np.einsum("nij,nj->ni", G[:, :3, :3], skeleton.rest_positions)
    return A


# ---------------------------------------------------------------- mesh

@dataclass
class SkinnedMesh:
    vertices: np.ndarray                # (n, 3) rest positions
    triangles: np.ndarray               # (m, 3) vertex indices, CCW = outward
    uv: np.ndarray                      # (n, 2) in [0, 1]^2
    skin_joints: np.ndarray             # (n, 4) joint indices
    skin_weights: np.ndarray            # (n, 4) weights, rows sum to 1

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.skin_joints = np.asarray(self.skin_joints, dtype=np.int64)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def validate(self, skeleton: Skeleton | None = None) -> None:
        n = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise ValueError("triangle references a nonexistent vertex")
        if self.uv.shape != (n, 2):
            raise ValueError(f"uv shape {self.uv.shape} does not match {n} vertices")
        if np.any(self.uv < 0) or np.any(self.uv > 1):
            raise ValueError("uv coordinates must lie in the unit square")
        if self.skin_weights.shape != self.skin_joints.shape or self.skin_weights.shape[0] != n:
            raise ValueError("skin weight arrays must be (n, k) and match each other")
        if self.skin_weights.shape[1] > MAX_INFLUENCES:
            raise ValueError(f"at most {MAX_INFLUENCES} influences per vertex")
        if np.any(self.skin_weights < 0):
            raise ValueError("negative skin weight")
        if np.any(np.abs(self.skin_weights.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("skin weights must sum to 1 per vertex")
        if skeleton is not None:
            used = self.skin_joints[self.skin_weights > 0]
            if used.size and (used.min() < 0 or used.max() >= len(skeleton)):
                raise ValueError("skin weight references a nonexistent joint")
        areas = triangle_areas(self.vertices, self.triangles)
        if np.any(areas <= 1e-12):
            bad = int(np.argmin(areas))
            raise ValueError(f"degenerate triangle {bad} (area {areas[bad]:.3g} m^2)")


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def pose_mesh(mesh: SkinnedMesh, skeleton: Skeleton, theta: PoseVector) -> np.ndarray:
    """Linear blend skinning: v_i = sum_j w_ij A_j(theta) v_i^rest."""
    A = skinning_transforms(skeleton, theta)
    Ai = A[mesh.skin_joints]                                    # n, k, 4, 4
    M = np.einsum("nk,nkij->nij", mesh.skin_weights, Ai)        # n, 4, 4
    return np.einsum("nij,nj->ni", M[:, :3, :3], mesh.vertices) + M[:, :3, 3]


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray, report: list | None = None) -> np.ndarray:
    """Area-weighted vertex normals (CCW winding = outward).

    Vertices touched by no triangle get a zero normal; their indices are
    appended to ``report`` when one is given.
    """
    v = np.asarray(vertices, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    fn = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]])   # 2 * area * n
    if np.any(np.linalg.norm(fn, axis=1) <= 2e-12):
        raise ValueError("degenerate triangle (area <= 1e-12) in vertex_normals")
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, tri[:, k], fn)
    norm = np.linalg.norm(acc, axis=1)
    isolated = norm == 0
    if report is not None:
        report.extend(np.nonzero(isolated)[0].tolist())
    out = np.zeros_like(v)
    out[~isolated] = acc[~isolated] / norm[~isolated, None]
    return out


# ---------------------------------------------------------------- file formats

def write_obj(path, vertices, triangles, uv=None) -> None:
    """Wavefront OBJ with one ``vt`` per vertex (``v`` up, as OBJ expects)."""
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
    if uv is not None:
        lines += [f"vt {u:.17g} {1.0 - v:.17g}" for u, v in uv]
        lines += [f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in triangles]
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read the v / vt / f subset.  Each vertex must carry a single UV."""
    verts, tex, faces, face_uv = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "vt":
            tex.append([float(parts[1]), 1.0 - float(parts[2])])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise ValueError("only triangular faces are supported")
            idx = [p.split("/") for p in parts[1:]]
            faces.append([int(i[0]) - 1 for i in idx])
            if len(idx[0]) > 1 and idx[0][1]:
                face_uv.append([int(i[1]) - 1 for i in idx])
    verts, faces = np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3)
    if not face_uv:
        return verts, faces, None
    uv = np.full((len(verts), 2), np.nan)
    tex = np.array(tex)
    for f, fu in zip(faces, face_uv):
        for vi, ti in zip(f, fu):
            if not np.isnan(uv[vi, 0]) and not np.allclose(uv[vi], tex[ti]):
                raise ValueError(f"vertex {vi} carries more than one uv; split seams into separate vertices")
            uv[vi] = tex[ti]
    return verts, faces, uv


def save_skeleton(path, skeleton: Skeleton) -> None:
    Path(path).write_text(json.dumps(skeleton.to_dict(), indent=2))


def load_skeleton(path) -> Skeleton:
    return Skeleton.from_dict(json.loads(Path(path).read_text()))


def save_skin(path, mesh: SkinnedMesh) -> None:
    Path(path).write_text(json.dumps({"joints": mesh.skin_joints.tolist(),
                                      "weights": mesh.skin_weights.tolist()}))


def load_skin(path) -> tuple[np.ndarray, np.ndarray]:
    d = json.loads(Path(path).read_text())
    return np.array(d["joints"], dtype=np.int64), np.array(d["weights"])


@dataclass
class MotionClip:
    fps: float
    poses: list

    def __len__(self) -> int:
        return len(self.poses)

    def to_dict(self) -> dict:
        return {"fps": self.fps, "poses": [p.as_array().tolist() for p in self.poses]}

    @classmethod
    def from_dict(cls, d: dict) -> "MotionClip":
        return cls(float(d["fps"]), [PoseVector.from_array(p) for p in d["poses"]])

    def reversed(self) -> "MotionClip":
        return MotionClip(self.fps, self.poses[::-1])


def save_clip(path, clip: MotionClip) -> None:
    Path(path).write_text(json.dumps(clip.to_dict()))


def load_clip(path) -> MotionClip:
    return MotionClip.from_dict(json.loads(Path(path).read_text()))
