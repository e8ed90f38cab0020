"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Criteria 7-9 train the full pipeline three times over and dominate the runtime.
"""
import dataclasses
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dyntex.character import Joint, PoseVector, Skeleton, forward_kinematics, humanoid_skeleton, pose_mesh
from dyntex.nn import GeneratorNet, PatchDiscriminator, Tensor, cgan_losses, warp_loss
from dyntex.nn import autograd as ag
from dyntex.nn.gradcheck import check_gradients
from dyntex.nn.serialization import load_tensor
from dyntex.pipeline import PipelineConfig, StageCache, foreground_l2, load_sequence, run_benchmark, run_pipeline
from dyntex.pipeline.data import extract
from dyntex.primitives import hemisphere_cap, uv_sphere
from dyntex.raster import (Camera, analytic_flow, backproject_texture, bake_partial_normal_map,
                           flow_warp_error, render, supersampled_render)
from dyntex.retarget import KeypointCorrespondence, retarget_pose, solve_ik, wrapped_angle_error
from dyntex.synthgen import build_actor, default_humanoid_spec, generate_sequence, procedural_clip
from dyntex.texpipe import (AverageTexture, PrototypePalette, average_texture, filter_textures, kmeans_palette,
                            nearest_pose_index)
from dyntex.uvmap import boundary_loop, harmonic_uv, signed_uv_areas, square_boundary

from oracles import raycast_visibility
from test_character import random_mesh_for, two_bone
from test_metrics import loop_l2
from test_nn import LAYER_CASES, naive_conv, naive_warp_loss
from test_raster import smooth_texture, two_spheres
from test_retarget import closed_form_two_link, moderate_pose
from test_texpipe import partial, random_stack
from test_uvmap import max_distortion

# Desk-scale benchmark: 64 px frames and textures, width-8 networks, 1000 Adam steps per network,
# L1 weight 100 so GAN noise at this step count does not swamp the conditioning differences.
BENCH = PipelineConfig(n_frames=800, image_res=64, texture_res=64, base_width=8, lr=1e-3, lambda_rec=100.0,
                       epochs=1000, max_steps=1000)
SEEDS = (0, 1, 2)


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1. gradients

def test_criterion_1_gradients(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    errs = {}
    for name, fn in sorted(LAYER_CASES.items()):
        x = Tensor(rng.normal(size=(2, 2, 8, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 2, 3, 3)) * 0.5, requires_grad=True)
        target = rng.normal(size=fn(x, w).shape)
        errs[name] = check_gradients(lambda: ag.mul(fn(x, w), target).sum(), [x, w])

    a = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    b = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    flow = rng.uniform(-1.5, 1.5, size=(8, 8, 2))
    covis = rng.random((8, 8)) < 0.7
    errs["warp_loss"] = check_gradients(lambda: warp_loss(a, b, flow, covis), [a, b])

    gen = GeneratorNet(3, 3, base=16, depth=3, seed=1, dtype=np.float64)
    x = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    target = rng.random((1, 3, 8, 8))
    errs["generator"] = check_gradients(lambda: ag.abs_(gen(x) - target).mean(), [x] + gen.parameters(),
                                        max_entries=6, rng=rng)

    disc = PatchDiscriminator(6, base=16, seed=2, dtype=np.float64)
    xd = Tensor(rng.random((1, 6, 8, 8)), requires_grad=True)
    target = rng.normal(size=disc(xd).shape)
    errs["discriminator"] = check_gradients(lambda: ag.mul(disc(xd), target).sum(), [xd] + disc.parameters(),
                                            max_entries=6, rng=rng)

    fake = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    real, cond = Tensor(rng.random((1, 3, 8, 8))), Tensor(rng.random((1, 3, 8, 8)))
    errs["cgan_generator"] = check_gradients(lambda: cgan_losses(fake, real, cond, disc)[0],
                                             [fake] + disc.parameters(), max_entries=6, rng=rng)
    elapsed = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-6 and elapsed < 120
    verdict(capsys, 1, ok, f"max rel err {errs[worst]:.2e} ({worst}), {len(errs)} checks, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2. oracle equivalence

def batched_lloyd_inertia(x, inits, iters=100):
    """Plain Lloyd from every initialisation at once; returns every final inertia."""
    c = inits.copy()                                   # (R, k, 3)
    for _ in range(iters):
        d = ((x[None, :, None] - c[:, None]) ** 2).sum(-1)      # (R, n, k)
        lab = d.argmin(-1)
        onehot = lab[..., None] == np.arange(c.shape[1])        # (R, n, k)
        cnt = onehot.sum(1)
        sums = np.einsum("rnk,nd->rkd", onehot, x)
        new = np.where(cnt[..., None] > 0, sums / np.maximum(cnt, 1)[..., None], c)
        if np.array_equal(new, c):
            break
        c = new
    d = ((x[None, :, None] - c[:, None]) ** 2).sum(-1)
    return d.min(-1).sum(-1)


def loop_filter(stack, centroids, rare, min_obs):
    """Per-texel histogram and keep/drop decision with explicit loops."""
    res = stack[0].mask.shape[0]
    keep = [p.mask.copy() for p in stack]
    for r in range(res):
        for c in range(res):
            labels = {}
            for f, p in enumerate(stack):
                if p.mask[r, c]:
                    d = [sum((p.rgb[r, c, ch] - cen[ch]) ** 2 for ch in range(3)) for cen in centroids]
                    labels[f] = int(np.argmin(d))
            n = len(labels)
            if n < min_obs:
                continue
            for f, lab in labels.items():
                if list(labels.values()).count(lab) < rare * n:
                    keep[f][r, c] = False
    return keep


def test_criterion_2_oracles(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    N = 100
    fails = {}

    def check(name, ok):
        fails[name] = fails.get(name, 0) + (not ok)

    for _ in range(N):
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x, w, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        got = ag.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
        check("conv", np.max(np.abs(got - naive_conv(x, w, b, stride, pad))) < 1e-12)

        p, q = rng.random((1, 3, 6, 5)), rng.random((1, 3, 6, 5))
        flow = rng.normal(scale=1.5, size=(6, 5, 2))
        covis = rng.random((6, 5)) < 0.6
        got = float(warp_loss(Tensor(p), Tensor(q), flow, covis).data)
        check("warp", abs(got - naive_warp_loss(p, q, flow, covis)) < 1e-10)

        stack = random_stack(rng, n=10, res=4)
        avg = average_texture(stack)
        ok = True
        for r in range(4):
            for c in range(4):
                obs = [s.rgb[r, c] for s in stack if s.mask[r, c]]
                expect = np.mean(obs, axis=0) if obs else np.zeros(3)
                ok &= np.max(np.abs(avg.rgb[r, c] - expect)) < 1e-12 and avg.count[r, c] == len(obs)
        check("average", ok)

        colors = rng.random((4, 3))
        stack = random_stack(rng, n=15, res=3, p=0.8, colors=colors)
        cents = colors[:int(rng.integers(2, 5))]
        rare, min_obs = float(rng.uniform(0.05, 0.4)), int(rng.integers(1, 12))
        out, _ = filter_textures(stack, PrototypePalette(cents), rare, min_obs)
        expect = loop_filter(stack, cents, rare, min_obs)
        check("filter", all(np.array_equal(o.mask, e) for o, e in zip(out, expect)))

        pts = rng.random((50, 3))
        pal = kmeans_palette(AverageTexture(pts.reshape(5, 10, 3), np.ones((5, 10), int)), k=4, seed=0)
        ours = ((pts - pal.centroids[pal.assign(pts)]) ** 2).sum()
        inits = np.stack([pts[rng.choice(50, 4, replace=False)] for _ in range(1000)])
        check("kmeans", ours <= 1.05 * batched_lloyd_inertia(pts, inits).min())

        db = [PoseVector(np.zeros(3), np.zeros(3), rng.uniform(-np.pi, np.pi, 27)) for _ in range(20)]
        q = rng.uniform(-np.pi, np.pi, 27)
        best, best_d = -1, np.inf
        for k, pz in enumerate(db):
            diff = [(u - v + np.pi) % (2 * np.pi) - np.pi for u, v in zip(q, pz.joint_angles)]
            d = sum(z * z for z in diff) ** 0.5
            if d < best_d:
                best, best_d = k, d
        check("nn_pose", nearest_pose_index(PoseVector(np.zeros(3), np.zeros(3), q), db)[0] == best)

        h, wd = rng.integers(2, 10, size=2)
        pa, ga = rng.random((h, wd, 3)), rng.random((h, wd, 3))
        m = rng.random((h, wd)) < 0.6
        m[0, 0] = True
        check("l2", abs(foreground_l2(pa, ga, m) - loop_l2(pa, ga, m)) < 1e-9)

    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in fails.items() if v}
    ok = not bad and len(fails) == 7 and elapsed < 300
    verdict(capsys, 2, ok, f"{len(fails)} oracles x {N} instances, failures {bad or 'none'}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 3. geometry

def test_criterion_3_geometry(capsys):
    v, t = hemisphere_cap(9)
    bm = square_boundary(v, boundary_loop(t), t)
    plain = harmonic_uv(v, t, bm, weights="mean-value", quasi_iterations=0)
    flips = int((signed_uv_areas(plain.uv, t) <= 0).sum())
    vq, tq = hemisphere_cap(5)
    d_plain = max_distortion(harmonic_uv(vq, tq, quasi_iterations=0).distortion)
    d_quasi = max_distortion(harmonic_uv(vq, tq, quasi_iterations=3).distortion)

    rng = np.random.default_rng(3)
    sk = humanoid_skeleton()
    iso = 0.0
    for _ in range(20):
        mesh = random_mesh_for(sk, rng, n=25)
        theta = PoseVector(rng.normal(size=3) * 2, rng.normal(size=3) * 2, np.zeros(sk.dof))
        out = pose_mesh(mesh, sk, theta)
        d0 = np.linalg.norm(mesh.vertices[:, None] - mesh.vertices[None], axis=-1)
        d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
        iso = max(iso, float(np.max(np.abs(d0 - d1))))
    sk2, mesh2 = two_bone()
    out = pose_mesh(mesh2, sk2, PoseVector(np.zeros(3), np.zeros(3), [np.pi / 2]))
    # +90 deg about z through the elbow at (1, 0, 0): (x, y, z) -> (1 - y, x - 1, z)
    v2 = mesh2.vertices
    expect = np.vstack([v2[:3], np.column_stack([1 - v2[3:, 1], v2[3:, 0] - 1, v2[3:, 2]])])
    rot = float(np.max(np.abs(out - expect)))

    ok = plain.residual < 1e-8 and flips == 0 and d_quasi < d_plain and iso < 1e-9 and rot < 1e-12
    verdict(capsys, 3, ok, f"uv residual {plain.residual:.1e}, flips {flips}, max distortion {d_plain:.3f} -> "
                           f"{d_quasi:.3f}, isometry {iso:.1e}, 2-bone {rot:.1e}")


# ---------------------------------------------------------------- 4. rendering

def test_criterion_4_rendering(capsys):
    v, t, uv = uv_sphere(24, 48, radius=0.9)
    tex = smooth_texture(64)
    cam = Camera.look_at((0.5, 0.4, 3.0), (0, 0, 0), focal=96, width=96, height=96)
    ss = supersampled_render(t, v, uv, tex, cam, factor=4)
    part = backproject_texture(ss.color, ss.mask, t, v, uv, cam, 64)
    rt_err = float(np.abs(part.rgb[part.mask] - tex[part.mask]).mean())

    vs, ts, uvs = two_spheres()
    cam2 = Camera.look_at((0.4, 0.3, 3.0), (0, 0, 0), focal=60, width=64, height=64)
    pm = bake_partial_normal_map(ts, vs, vs, uvs, cam2, 96)

    def project(P):
        px, py, _ = cam2.project(P[None])
        return px[0], py[0]

    oracle, tri_of = raycast_visibility(vs, ts, uvs, cam2.center, project, 64, 64, 96)
    agree = float((pm.mask == oracle)[tri_of >= 0].mean())

    vf, tf, uvf = uv_sphere(32, 64, radius=0.9)
    cam3 = Camera.look_at((0.3, 0.4, 3.0), (0, 0, 0), focal=64, width=64, height=64)
    vf2 = vf @ Rotation.from_euler("y", 6, degrees=True).as_matrix().T + [0.03, 0, 0]
    a, b = render(tf, vf, uvf, tex, cam3), render(tf, vf2, uvf, tex, cam3)
    flow, covis = analytic_flow(vf, vf2, tf, cam3, a)
    warp_err = float(flow_warp_error(a.color, b.color, b.mask, flow, covis))

    ok = rt_err < 2 / 255 and agree >= 0.995 and warp_err < 2 / 255
    verdict(capsys, 4, ok, f"round trip {rt_err * 255:.2f}/255, visibility agreement {agree:.4f}, "
                           f"flow warp {warp_err * 255:.2f}/255")


# ---------------------------------------------------------------- 5. filtering efficacy

def mean_distance(partials, gt):
    d = [np.linalg.norm(p.rgb[p.mask] - g[p.mask], axis=-1) for p, g in zip(partials, gt)]
    return float(np.concatenate(d).mean())


@pytest.mark.slow
def test_criterion_5_filtering_efficacy(capsys, tmp_path_factory):
    base = default_humanoid_spec(noise_sigma=0.05)
    actor = build_actor(base)
    res = actor.texture_res                  # partials at the GT texture resolution; no resampling
    gaps = []
    for s in SEEDS:
        d = tmp_path_factory.mktemp(f"noisy{s}")
        noisy = dataclasses.replace(actor, spec=dataclasses.replace(base, seed=s))
        generate_sequence(noisy.spec, procedural_clip(actor.skeleton, 200, seed=s), d, noisy)
        seq = load_sequence(d)
        gt = [load_tensor(d / "gt_textures" / f"{i:05d}.tnsr") for i in range(len(seq))]
        _, raw = extract(seq, range(len(seq)), res)
        palette = kmeans_palette(average_texture(raw), k=BENCH.k, seed=s)
        filtered, report = filter_textures(raw, palette, BENCH.rare_fraction, BENCH.min_obs)
        gaps.append((mean_distance(raw, gt), mean_distance(filtered, gt), report.total))
    med_raw = float(np.median([g[0] for g in gaps]))
    med_filt = float(np.median([g[1] for g in gaps]))
    verdict(capsys, 5, med_filt < med_raw,
            f"median distance to GT unfiltered {med_raw:.5f} vs filtered {med_filt:.5f} "
            f"(per seed {[(round(a, 5), round(b, 5), n) for a, b, n in gaps]})")


# ---------------------------------------------------------------- 6. retargeting

def test_criterion_6_retargeting(capsys):
    sk = humanoid_skeleton()
    ident = KeypointCorrespondence.by_name(sk, sk)
    rng = np.random.default_rng(0)
    rmse = max(retarget_pose(sk, moderate_pose(rng), sk, ident).rmse for _ in range(5))

    z = (0.0, 0.0, 1.0)
    l1, l2 = 1.0, 0.8
    arm = Skeleton([Joint("shoulder", -1, (0, 0, 0), [z]), Joint("elbow", 0, (l1, 0, 0), [z]),
                    Joint("tip", 1, (l2, 0, 0))])
    two_link = 0.0
    for target, sign in [((1.2, 0.9), -1), ((0.4, -1.1), -1), ((1.0, 1.0), 1), ((-0.7, 0.8), 1)]:
        t1, t2 = closed_form_two_link(*target, l1, l2, sign)
        res = solve_ik(arm, [2], np.array([[*target, 0.0]]), init=PoseVector(np.zeros(3), np.zeros(3),
                                                                             [0.0, 0.5 * sign]),
                       fixed_global=True)
        two_link = max(two_link, abs(wrapped_angle_error(res.theta, PoseVector(np.zeros(3), np.zeros(3),
                                                                                [t1, t2]))))

    big = sk.scaled(2.0)
    corr = KeypointCorrespondence.by_name(sk, big)
    scale = 0.0
    for _ in range(5):
        src = moderate_pose(rng, 0.2)
        _, pos = forward_kinematics(sk, src)
        res = solve_ik(big, corr.target, 2.0 * pos[corr.source], corr.weights)
        scale = max(scale, wrapped_angle_error(res.theta, src))

    ok = rmse < 1e-5 and two_link < 1e-6 and scale < 1e-4
    verdict(capsys, 6, ok, f"identical rmse {rmse:.1e} m, 2-link {two_link:.1e} rad, scale {scale:.1e} rad")


# ---------------------------------------------------------------- 7-9. end-to-end benchmark

@pytest.fixture(scope="module")
def bench_seq(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench") / "data"
    spec = default_humanoid_spec(noise_sigma=BENCH.noise_sigma)
    actor = build_actor(spec)
    generate_sequence(spec, procedural_clip(actor.skeleton, BENCH.n_frames, seed=BENCH.data_seed), d, actor)
    return load_sequence(d)


@pytest.fixture(scope="module")
def bench_cache():
    return StageCache()


@pytest.fixture(scope="module")
def bench_run(bench_seq, bench_cache, tmp_path_factory):
    cfg = BENCH.replace(work_dir=str(tmp_path_factory.mktemp("bench_work")))
    t0 = time.perf_counter()
    reports = run_benchmark(cfg, bench_seq, seeds=SEEDS, cache=bench_cache)
    return reports, time.perf_counter() - t0


def metric_table(reports):
    return {m: ([r.mean_l2 for r in rs], [r.mean_ssim for r in rs]) for m, rs in reports.items()}


@pytest.mark.slow
def test_criterion_7_ablation_ordering(capsys, bench_run):
    reports, elapsed = bench_run
    med = {m: (float(np.median(l2)), float(np.median(ss))) for m, (l2, ss) in metric_table(reports).items()}
    dyn, sta, ske = med["dynamic"], med["static"], med["skeleton"]
    ok = dyn[0] < sta[0] and dyn[0] < ske[0] and dyn[1] > sta[1] and dyn[1] > ske[1]
    table = ", ".join(f"{m} L2 {v[0]:.3f} SSIM {v[1]:.4f}" for m, v in med.items())
    verdict(capsys, 7, ok, f"medians over seeds {list(SEEDS)}: {table}; {elapsed / 60:.1f} min on this machine")


@pytest.mark.slow
def test_criterion_8_dataset_size_trend(capsys, bench_run, bench_seq, bench_cache, tmp_path_factory):
    reports, _ = bench_run
    full = [r.mean_l2 for r in reports["dynamic"]]
    cfg = BENCH.replace(work_dir=str(tmp_path_factory.mktemp("quarter")), mode="dynamic", train_fraction=0.25)
    quarter = [run_pipeline(cfg.replace(seed=s), bench_seq, bench_cache).report.mean_l2 for s in SEEDS]
    ok = np.median(full) <= np.median(quarter)
    verdict(capsys, 8, ok, f"median L2 100% {np.median(full):.3f} vs 25% {np.median(quarter):.3f} "
                           f"(per seed {[round(x, 3) for x in full]} vs {[round(x, 3) for x in quarter]})")


@pytest.mark.slow
def test_criterion_9_determinism(capsys, bench_run, bench_seq, tmp_path_factory):
    first = metric_table(bench_run[0])
    cfg = BENCH.replace(work_dir=str(tmp_path_factory.mktemp("bench_repeat")))
    again = metric_table(run_benchmark(cfg, bench_seq, seeds=SEEDS, cache=StageCache()))
    ok = first == again
    verdict(capsys, 9, ok, f"{sum(len(v[0]) for v in first.values())} runs repeated from scratch, "
                           f"metrics {'bit-identical' if ok else 'differ'}")
