import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyntex.character import (Joint, MotionClip, PoseVector, Skeleton, SkinnedMesh,
                              forward_kinematics, humanoid_skeleton, load_clip, load_skeleton,
                              pose_mesh, read_obj, save_clip, save_skeleton, vertex_normals,
                              wrap_angle, write_obj)
from dyntex.primitives import cube_with_face_centers, grid_mesh, icosphere

Z = (0.0, 0.0, 1.0)


def two_bone():
    sk = Skeleton([Joint("root", -1, (0, 0, 0)), Joint("elbow", 0, (1, 0, 0), [Z])])
    verts = np.array([[0.2, 0.1, 0.0], [0.5, -0.1, 0.3], [0.8, 0.0, 0.1],
                      [1.5, 0.0, 0.0], [2.0, 0.1, 0.0], [1.3, -0.2, 0.4]])
    joints = np.array([[0, 0, 0, 0]] * 3 + [[1, 0, 0, 0]] * 3)
    weights = np.array([[1.0, 0, 0, 0]] * 6)
    mesh = SkinnedMesh(verts, [[0, 1, 2], [3, 4, 5]], np.full((6, 2), 0.5), joints, weights)
    return sk, mesh


def random_mesh_for(sk, rng, n=40):
    verts = rng.normal(size=(n, 3))
    joints = np.stack([rng.choice(len(sk), size=4, replace=False) for _ in range(n)])
    w = rng.random((n, 4))
    w /= w.sum(axis=1, keepdims=True)
    tris = np.array([[i, i + 1, i + 2] for i in range(0, n - 2, 3)])
    return SkinnedMesh(verts, tris, rng.random((n, 2)), joints, w)


def random_pose(sk, rng, scale=1.0, rigid=True):
    return PoseVector(rng.normal(size=3) * rigid, rng.normal(size=3) * rigid,
                      rng.normal(size=sk.dof) * scale)


# ---------------------------------------------------------------- skeleton & pose

def test_default_humanoid_has_33_dof():
    sk = humanoid_skeleton()
    assert sk.dof == 27
    assert len(PoseVector.zeros(sk.dof)) == 33


def test_skeleton_validation():
    with pytest.raises(ValueError):
        Skeleton([Joint("a", -1, (0, 0, 0)), Joint("b", -1, (1, 0, 0))])
    with pytest.raises(ValueError):
        Skeleton([Joint("a", -1, (0, 0, 0)), Joint("b", 2, (1, 0, 0)), Joint("c", 0, (0, 1, 0))])
    with pytest.raises(ValueError):
        Skeleton([Joint("a", -1, (0, 0, 0), [(0, 0, 2.0)])])


def test_wrap_angle_range():
    a = wrap_angle(np.array([np.pi, -np.pi, 3 * np.pi, 0.0, -0.5]))
    np.testing.assert_allclose(a, [np.pi, np.pi, np.pi, 0.0, -0.5], atol=1e-15)


@given(st.lists(st.floats(-20, 20), min_size=27, max_size=27), st.integers(0, 26))
def test_angle_wrap_adding_two_pi(angles, k):
    base = PoseVector(np.zeros(3), np.zeros(3), angles)
    shifted = np.array(angles)
    shifted[k] += 2 * np.pi
    other = PoseVector(np.zeros(3), np.zeros(3), shifted)
    assert np.all(other.joint_angles > -np.pi) and np.all(other.joint_angles <= np.pi)
    np.testing.assert_allclose(base.joint_angles, other.joint_angles, atol=1e-12)


# ---------------------------------------------------------------- forward kinematics

def test_fk_zero_pose_gives_cumulative_offsets():
    sk = humanoid_skeleton()
    _, pos = forward_kinematics(sk, PoseVector.zeros(sk.dof))
    expect = np.zeros((len(sk), 3))
    for i, j in enumerate(sk.joints):
        expect[i] = j.offset + (expect[j.parent] if j.parent >= 0 else 0)
    np.testing.assert_allclose(pos, expect, atol=1e-15)


def test_fk_root_rotation_pi_about_y_mirrors_xz():
    sk = humanoid_skeleton()
    _, rest = forward_kinematics(sk, PoseVector.zeros(sk.dof))
    _, pos = forward_kinematics(sk, PoseVector(np.zeros(3), (0, np.pi, 0), np.zeros(sk.dof)))
    root = rest[0]
    expect = root + (rest - root) * np.array([-1.0, 1.0, -1.0])
    np.testing.assert_allclose(pos, expect, atol=1e-12)


def test_fk_three_joint_chain_middle_hinge():
    sk = Skeleton([Joint("j0", -1, (0, 0, 0)), Joint("j1", 0, (1, 0, 0)),
                   Joint("j2", 1, (1, 0, 0), [Z]), Joint("j3", 2, (1, 0, 0))])
    _, pos = forward_kinematics(sk, PoseVector(np.zeros(3), np.zeros(3), [np.pi / 2]))
    # j3 = j2 + (cos 90, sin 90) * 1
    np.testing.assert_allclose(pos[3], [2.0, 1.0, 0.0], atol=1e-12)


# ---------------------------------------------------------------- skinning

def test_pose_mesh_identity():
    sk = humanoid_skeleton()
    mesh = random_mesh_for(sk, np.random.default_rng(0))
    np.testing.assert_allclose(pose_mesh(mesh, sk, PoseVector.zeros(sk.dof)), mesh.vertices, atol=1e-15)


def test_pose_mesh_pure_translation():
    sk = humanoid_skeleton()
    mesh = random_mesh_for(sk, np.random.default_rng(1))
    t = np.array([0.3, -1.2, 2.5])
    out = pose_mesh(mesh, sk, PoseVector(t, np.zeros(3), np.zeros(sk.dof)))
    np.testing.assert_allclose(out, mesh.vertices + t, atol=1e-14)


def test_pose_mesh_two_bone_elbow():
    sk, mesh = two_bone()
    out = pose_mesh(mesh, sk, PoseVector(np.zeros(3), np.zeros(3), [np.pi / 2]))
    np.testing.assert_allclose(out[:3], mesh.vertices[:3], atol=1e-12)
    # rotation by +90 deg about z through pivot (1,0,0): (x, y) -> (1 - y, x - 1)
    expect = np.array([[1.0, 0.5, 0.0], [0.9, 1.0, 0.0], [1.2, 0.3, 0.4]])
    np.testing.assert_allclose(out[3:], expect, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_rigid_pose_is_isometry(seed):
    rng = np.random.default_rng(seed)
    sk = humanoid_skeleton()
    mesh = random_mesh_for(sk, rng, n=25)
    theta = PoseVector(rng.normal(size=3) * 2, rng.normal(size=3) * 2, np.zeros(sk.dof))
    out = pose_mesh(mesh, sk, theta)
    d0 = np.linalg.norm(mesh.vertices[:, None] - mesh.vertices[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    assert np.max(np.abs(d0 - d1)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_skinning_is_convex_combination_of_rigid_copies(seed):
    from dyntex.character import skinning_transforms
    rng = np.random.default_rng(seed)
    sk = humanoid_skeleton()
    mesh = random_mesh_for(sk, rng, n=25)
    theta = random_pose(sk, rng)
    out = pose_mesh(mesh, sk, theta)
    A = skinning_transforms(sk, theta)
    for i in range(mesh.n_vertices):
        copies = [A[j, :3, :3] @ mesh.vertices[i] + A[j, :3, 3] for j in mesh.skin_joints[i]]
        w = mesh.skin_weights[i]
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
        np.testing.assert_allclose(out[i], np.tensordot(w, copies, axes=1), atol=1e-12)


def test_mesh_validation_errors():
    sk, mesh = two_bone()
    mesh.validate(sk)
    bad = SkinnedMesh(mesh.vertices, mesh.triangles, mesh.uv, mesh.skin_joints + 5, mesh.skin_weights)
    with pytest.raises(ValueError, match="nonexistent joint"):
        bad.validate(sk)
    degenerate = SkinnedMesh(mesh.vertices, [[0, 0, 1]], mesh.uv, mesh.skin_joints, mesh.skin_weights)
    with pytest.raises(ValueError, match="degenerate"):
        degenerate.validate(sk)
    unnormalised = SkinnedMesh(mesh.vertices, mesh.triangles, mesh.uv, mesh.skin_joints,
                               mesh.skin_weights * 0.9)
    with pytest.raises(ValueError, match="sum to 1"):
        unnormalised.validate(sk)


# ---------------------------------------------------------------- normals

def test_normals_flat_quad():
    verts, tris = grid_mesh(1, 1)
    np.testing.assert_allclose(vertex_normals(verts, tris), np.tile([0, 0, 1.0], (4, 1)), atol=1e-15)


def test_normals_cube_corners_and_face_centres():
    verts, tris = cube_with_face_centers()
    n = vertex_normals(verts, tris)
    corners = verts[:8]
    np.testing.assert_allclose(n[:8], np.sign(corners) / np.sqrt(3), atol=1e-12)
    np.testing.assert_allclose(n[8:], verts[8:] / 0.5, atol=1e-12)


def test_normals_icosphere():
    verts, tris = icosphere(4)
    n = vertex_normals(verts, tris)
    assert np.max(np.linalg.norm(n - verts / np.linalg.norm(verts, axis=1, keepdims=True), axis=1)) < 1e-2


def test_normals_isolated_vertex_reported():
    verts, tris = grid_mesh(1, 1)
    verts = np.vstack([verts, [[5.0, 5.0, 5.0]]])
    report = []
    n = vertex_normals(verts, tris, report=report)
    assert report == [4]
    np.testing.assert_array_equal(n[4], 0.0)


# ---------------------------------------------------------------- file formats

def test_obj_round_trip(tmp_path):
    verts, tris = grid_mesh(3, 2)
    uv = verts[:, :2] / verts[:, :2].max(axis=0)
    write_obj(tmp_path / "m.obj", verts, tris, uv)
    v2, t2, uv2 = read_obj(tmp_path / "m.obj")
    np.testing.assert_array_equal(v2, verts)
    np.testing.assert_array_equal(t2, tris)
    np.testing.assert_allclose(uv2, uv, atol=1e-15)


def test_skeleton_and_clip_json_round_trip(tmp_path):
    sk = humanoid_skeleton()
    save_skeleton(tmp_path / "s.json", sk)
    sk2 = load_skeleton(tmp_path / "s.json")
    assert sk2.names == sk.names and sk2.dof == sk.dof
    np.testing.assert_array_equal(sk2.rest_positions, sk.rest_positions)
    rng = np.random.default_rng(0)
    clip = MotionClip(30.0, [random_pose(sk, rng) for _ in range(4)])
    save_clip(tmp_path / "c.json", clip)
    clip2 = load_clip(tmp_path / "c.json")
    assert clip2.fps == 30.0
    for a, b in zip(clip.poses, clip2.poses):
        np.testing.assert_array_equal(a.as_array(), b.as_array())
