"""Keypoint inverse kinematics for moving a clip between skeletons with different proportions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .character import MotionClip, PoseVector, Skeleton, forward_kinematics, wrap_angle

JACOBIAN_STEP = 1e-6
MAX_DAMPING = 1e12
MAX_STEP = 0.5     # rad or m; larger trial steps count as rejected so the rest-pose basin is kept


@dataclass
class KeypointCorrespondence:
    pairs: list[tuple[int, int, float]]     # (source joint, target joint, weight)

    def __post_init__(self):
        self.pairs = [(int(s), int(t), float(w)) for s, t, w in self.pairs]

    @property
    def source(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=np.int64)

    @property
    def target(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([p[2] for p in self.pairs])

    def validate(self, source: Skeleton, target: Skeleton) -> None:
        if len(self.pairs) < 4:
            raise ValueError(f"need at least 4 correspondences, got {len(self.pairs)}")
        w = self.weights
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative and not all zero")
        for s, t, _ in self.pairs:
            if not (0 <= s < len(source)) or not (0 <= t < len(target)):
                raise ValueError(f"correspondence ({s}, {t}) references a nonexistent joint")
        if not _spans_two_branches(target, self.target):
            raise ValueError("correspondences lie on a single kinematic chain; need at least two branches")

    @classmethod
    def by_name(cls, source: Skeleton, target: Skeleton, weight: float = 1.0) -> "KeypointCorrespondence":
        common = [n for n in target.names if n in source.names]
        return cls([(source.index(n), target.index(n), weight) for n in common])

    def to_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs]}

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointCorrespondence":
        return cls([tuple(p) for p in d["pairs"]])


def _ancestors(sk: Skeleton, j: int) -> set[int]:
    out = set()
    while j >= 0:
        out.add(j)
        j = sk.parents[j]
    return out


def _spans_two_branches(sk: Skeleton, joints: np.ndarray) -> bool:
    """True unless every joint lies on one root-to-leaf path."""
    js = sorted(set(int(j) for j in joints))
    for a in js:
        for b in js:
            if a not in _ancestors(sk, b) and b not in _ancestors(sk, a):
                return True
    return False


def save_correspondence(path, corr: KeypointCorrespondence) -> None:
    Path(path).write_text(json.dumps(corr.to_dict(), indent=2))


def load_correspondence(path) -> KeypointCorrespondence:
    return KeypointCorrespondence.from_dict(json.loads(Path(path).read_text()))


@dataclass
class IKResult:
    theta: PoseVector
    cost: float          # weighted sum of squared keypoint errors
    rmse: float          # unweighted keypoint RMSE in metres
    iterations: int
    flagged: bool
    cost_history: list[float] = field(default_factory=list, repr=False)


def _canonical_rotvec(r: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(r).as_rotvec()


def _unpack(x: np.ndarray, base: np.ndarray, free: np.ndarray) -> PoseVector:
    full = base.copy()
    full[free] = x
    return PoseVector.from_array(full)


def solve_ik(skeleton: Skeleton, joints: Sequence[int], targets: np.ndarray, weights=None,
             init: PoseVector | None = None, fixed_global: bool = False, max_iter: int = 50,
             rel_tol: float = 1e-9, damping: float = 1e-3, fail_threshold: float = 1e-2,
             max_step: float = MAX_STEP) -> IKResult:
    """Levenberg-Marquardt fit of the pose so the given joints reach the target points."""
    joints = np.asarray(joints, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64).reshape(len(joints), 3)
    weights = np.ones(len(joints)) if weights is None else np.asarray(weights, dtype=np.float64)
    sqrt_w = np.sqrt(weights)[:, None]
    init = init if init is not None else PoseVector.zeros(skeleton.dof)
    if len(init.joint_angles) != skeleton.dof:
        raise ValueError(f"initial pose has {len(init.joint_angles)} angles, skeleton needs {skeleton.dof}")
    base = init.as_array()
    free = np.arange(6 if fixed_global else 0, len(base))

    def residual(x):
        _, pos = forward_kinematics(skeleton, _unpack(x, base, free))
        return (sqrt_w * (targets - pos[joints])).ravel()

    def jacobian(x):
        J = np.empty((3 * len(joints), len(x)))
        for k in range(len(x)):
            e = np.zeros_like(x)
            e[k] = JACOBIAN_STEP
            J[:, k] = (residual(x + e) - residual(x - e)) / (2 * JACOBIAN_STEP)
        return J

    def tidy(x):
        p = _unpack(x, base, free)
        p.rotation = _canonical_rotvec(p.rotation)
        return p.as_array()[free]

    x = base[free].copy()
    r = residual(x)
    cost = float(r @ r)
    history = [cost]
    lam = damping
    it = 0
    # one iteration = one accepted step; rejected trials only raise the damping
    while it < max_iter and cost > 0.0 and lam <= MAX_DAMPING:
        J = jacobian(x)
        A = J.T @ J
        g = J.T @ r
        accepted = False
        while lam <= MAX_DAMPING:
            try:
                step = np.linalg.solve(A + lam * np.eye(len(x)), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            if np.max(np.abs(step)) > max_step:
                lam *= 10
                continue
            x_new = tidy(x + step)
            r_new = residual(x_new)
            new_cost = float(r_new @ r_new)
            if new_cost < cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            break
        it += 1
        decrease = (cost - new_cost) / cost
        x, r, cost = x_new, r_new, new_cost
        history.append(cost)
        lam = max(lam / 10, 1e-15)
        if decrease < rel_tol:
            break
    theta = _unpack(x, base, free)
    _, pos = forward_kinematics(skeleton, theta)
    rmse = float(np.sqrt(np.mean(np.sum((targets - pos[joints]) ** 2, axis=1))))
    return IKResult(theta, cost, rmse, it, rmse > fail_threshold, history)


def retarget_pose(source: Skeleton, source_theta: PoseVector, target: Skeleton, corr: KeypointCorrespondence,
                  init_theta: PoseVector | None = None, validate: bool = True, **kw) -> IKResult:
    if validate:
        corr.validate(source, target)
    _, src_pos = forward_kinematics(source, source_theta)
    return solve_ik(target, corr.target, src_pos[corr.source], corr.weights, init_theta, **kw)


def retarget_clip(clip: MotionClip, source: Skeleton, target: Skeleton, corr: KeypointCorrespondence,
                  **kw) -> tuple[MotionClip, list[IKResult]]:
    """Frame 0 starts from the rest pose, every later frame from its predecessor's solution."""
    if len(clip.poses) == 0:
        raise ValueError("clip is empty")
    corr.validate(source, target)
    results = []
    init = PoseVector.zeros(target.dof)
    for pose in clip.poses:
        res = retarget_pose(source, pose, target, corr, init, validate=False, **kw)
        results.append(res)
        init = res.theta
    return MotionClip(clip.fps, [r.theta for r in results]), results


def wrapped_angle_error(a: PoseVector, b: PoseVector) -> float:
    return float(np.max(np.abs(wrap_angle(np.asarray(a.joint_angles) - np.asarray(b.joint_angles)))))
