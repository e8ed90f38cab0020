"""The three stages (TexNet, conditioning render, RefNet), synthesis, and the ablation harness."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..character import MotionClip, PoseVector, Skeleton, SkinnedMesh, pose_mesh, vertex_normals
from ..raster import Camera, PartialTextureMap, analytic_flow, bake_partial_normal_map, render, render_skeleton, \
    save_png, texel_atlas
from ..retarget import KeypointCorrespondence, retarget_clip
from ..synthgen import CameraPathSpec, camera_at
from ..texpipe import AverageTexture, complete_texture
from .config import PipelineConfig, split_indices
from .data import Sequence, TextureDataset, build_texture_dataset
from .metrics import EvalReport, evaluate
from .training import Networks, TrainingSet, from_display_nchw, make_networks, predict, to_display_nchw, \
    to_nchw, train

ORBIT_ANGLES = 8
ORBIT_STEP_DEG = 45.0
REFNET_SEED_OFFSET = 100


def _train_kwargs(cfg: PipelineConfig) -> dict:
    return dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, lambda_flow=cfg.lambda_flow,
                lambda_rec=cfg.lambda_rec, epochs=cfg.epochs, batch=cfg.batch, max_steps=cfg.max_steps)


# ---------------------------------------------------------------- stage 1

def texnet_training_set(tds: TextureDataset) -> TrainingSet:
    """Normal map -> partial texture pairs, supervised on each target's visible texels only."""
    masks = np.stack([p.mask for p in tds.partials])
    R = tds.texture_res
    zero = np.zeros((R, R, 2))
    return TrainingSet(to_nchw([n.normals for n in tds.normals]), to_display_nchw([p.rgb for p in tds.partials]),
                       [zero] * (len(masks) - 1), [masks[i] & masks[i + 1] for i in range(len(masks) - 1)], masks)


def run_stage1_texnet(cfg: PipelineConfig, tds: TextureDataset, out_dir=None, callback=None):
    nets = make_networks(3, cfg.base_width, cfg.depth, cfg.seed)
    rows = train(nets, texnet_training_set(tds), seed=cfg.seed, out_dir=out_dir, callback=callback,
                 meta={"texture_res": tds.texture_res}, **_train_kwargs(cfg))
    return nets, rows


# ---------------------------------------------------------------- stage 2

@dataclass
class ConditioningModel:
    """Everything stage 2 needs to turn a pose and camera into a conditioning render."""
    mode: str
    skeleton: Skeleton
    mesh: SkinnedMesh
    texture_res: int
    texnet: object = None                      # GeneratorNet for the dynamic modes
    average: AverageTexture | None = None
    static_texture: np.ndarray | None = None
    _atlas: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode in ("dynamic", "unfiltered-dynamic"):
            if self.texnet is None or self.average is None:
                raise ValueError(f"mode {self.mode} needs a trained TexNet and the average texture")
            if self.average.rgb.shape[0] != self.texture_res:
                raise ValueError(f"average texture is {self.average.rgb.shape[0]} px, expected {self.texture_res}")
        elif self.mode == "static" and self.static_texture is None:
            raise ValueError("mode static needs the ground-truth static texture")
        elif self.mode == "average" and self.average is None:
            raise ValueError("mode average needs the average texture")

    @property
    def atlas(self):
        if self._atlas is None:
            self._atlas = texel_atlas(self.mesh, self.mesh.uv, self.texture_res)
        return self._atlas

    def textures(self, poses, cameras) -> list[np.ndarray]:
        if self.mode == "static":
            return [self.static_texture] * len(poses)
        if self.mode == "average":
            empty = PartialTextureMap(np.zeros_like(self.average.rgb), np.zeros(self.average.mask.shape, bool), None)
            return [complete_texture(empty, self.average)] * len(poses)
        nmaps = []
        for theta, cam in zip(poses, cameras):
            v = pose_mesh(self.mesh, self.skeleton, theta)
            nmaps.append(bake_partial_normal_map(self.mesh, v, vertex_normals(v, self.mesh.triangles), self.mesh.uv,
                                                 cam, self.texture_res, self.atlas))
        pred = from_display_nchw(predict(self.texnet, to_nchw([n.normals for n in nmaps])))
        return [complete_texture(PartialTextureMap(p, n.mask, None), self.average) for p, n in zip(pred, nmaps)]

    def render(self, poses, cameras) -> list[np.ndarray]:
        """Linear-RGB conditioning images on a black background."""
        if self.mode == "skeleton":
            return [render_skeleton(self.skeleton, th, cam).color for th, cam in zip(poses, cameras)]
        out = []
        for th, cam, tex in zip(poses, cameras, self.textures(poses, cameras)):
            v = pose_mesh(self.mesh, self.skeleton, th)
            out.append(render(self.mesh.triangles, v, self.mesh.uv, tex, cam).color)
        return out


def run_stage2_render(model: ConditioningModel, poses, cameras, out_dir=None) -> list[np.ndarray]:
    imgs = model.render(poses, cameras)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for k, im in enumerate(imgs):
            save_png(d / f"{k:05d}.png", im)
    return imgs


# ---------------------------------------------------------------- stage 3

def sequence_flows(seq: Sequence, indices):
    """Analytic image-space flow and co-visibility between consecutive listed frames."""
    flows, covis = [], []
    for a, b in zip(indices[:-1], indices[1:]):
        f, c = analytic_flow(seq.posed(a), seq.posed(b), seq.mesh, seq.cameras[a])
        flows.append(f)
        covis.append(c)
    return flows, covis


def refnet_training_set(seq: Sequence, indices, conditioning, flows=None) -> TrainingSet:
    indices = list(indices)
    flows, covis = sequence_flows(seq, indices) if flows is None else flows
    return TrainingSet(to_display_nchw(conditioning), to_display_nchw([seq.frames[i] for i in indices]),
                       flows, covis, None)


def run_stage3_refnet(cfg: PipelineConfig, data: TrainingSet, out_dir=None, callback=None):
    nets = make_networks(data.cond.shape[1], cfg.base_width, cfg.depth, cfg.seed + REFNET_SEED_OFFSET)
    rows = train(nets, data, seed=cfg.seed + REFNET_SEED_OFFSET, out_dir=out_dir, callback=callback,
                 meta={"image_res": data.cond.shape[2]}, **_train_kwargs(cfg))
    return nets, rows


# ---------------------------------------------------------------- synthesis

@dataclass
class PipelineModel:
    conditioning: ConditioningModel
    refnet: object
    image_res: int

    def synthesize(self, poses, cameras) -> list[np.ndarray]:
        for cam in cameras:
            if (cam.height, cam.width) != (self.image_res, self.image_res):
                raise ValueError(f"camera is {cam.width}x{cam.height}, RefNet was trained at {self.image_res}")
        cond = self.conditioning.render(poses, cameras)
        return from_display_nchw(predict(self.refnet, to_display_nchw(cond)))


def synthesize(model: PipelineModel, poses, cameras) -> list[np.ndarray]:
    return model.synthesize(list(poses), list(cameras))


def orbit_cameras(path: CameraPathSpec, n: int = ORBIT_ANGLES, step_deg: float = ORBIT_STEP_DEG) -> list[Camera]:
    return [camera_at(path, k * step_deg) for k in range(n)]


def synthesize_orbit(model: PipelineModel, theta: PoseVector, path: CameraPathSpec,
                     n: int = ORBIT_ANGLES, step_deg: float = ORBIT_STEP_DEG) -> list[np.ndarray]:
    cams = orbit_cameras(path, n, step_deg)
    return model.synthesize([theta] * len(cams), cams)


def same_skeleton(a: Skeleton, b: Skeleton) -> bool:
    return a.to_dict() == b.to_dict()


def transfer_motion(model: PipelineModel, source: Skeleton, clip: MotionClip, cameras,
                    corr: KeypointCorrespondence | None = None, **ik):
    """Retarget a driving clip onto the actor and synthesize it.  Returns (frames, IK results or None)."""
    target = model.conditioning.skeleton
    if corr is None:
        if not same_skeleton(source, target):
            raise ValueError("driving skeleton differs from the actor's; a keypoint correspondence is required")
        return synthesize(model, clip.poses, cameras), None
    moved, results = retarget_clip(clip, source, target, corr, **ik)
    return synthesize(model, moved.poses, cameras), results


# ---------------------------------------------------------------- experiment harness

@dataclass
class RunResult:
    config: PipelineConfig
    report: EvalReport
    model: PipelineModel
    texnet_rows: list
    refnet_rows: list


class StageCache:
    """Texture datasets and TexNets shared between modes and seeds within one process."""

    def __init__(self):
        self.datasets: dict = {}
        self.texnets: dict = {}

    def dataset(self, cfg: PipelineConfig, seq: Sequence, train_idx, filtered: bool) -> TextureDataset:
        key = (filtered, tuple(train_idx), cfg.texture_res, cfg.k, cfg.rare_fraction, cfg.min_obs, cfg.data_seed)
        if key not in self.datasets:
            self.datasets[key] = build_texture_dataset(seq, train_idx, cfg.texture_res, cfg.k, cfg.rare_fraction,
                                                       cfg.min_obs, seed=cfg.data_seed, filtered=filtered)
        return self.datasets[key]

    def texnet(self, cfg: PipelineConfig, tds: TextureDataset, filtered: bool, out_dir):
        key = (filtered, tuple(tds.indices), json.dumps({**cfg.to_dict(), "mode": None, "work_dir": None},
                                                        sort_keys=True))
        if key not in self.texnets:
            self.texnets[key] = run_stage1_texnet(cfg, tds, out_dir)
        return self.texnets[key]


def run_pipeline(cfg: PipelineConfig, seq: Sequence, cache: StageCache | None = None,
                 write: bool = True) -> RunResult:
    """Stages 1-3 on the training prefix, then synthesis and evaluation on the held-out tail."""
    t0 = time.perf_counter()
    cache = cache if cache is not None else StageCache()
    train_idx, test_idx = split_indices(len(seq), cfg.test_fraction, cfg.train_fraction)
    if seq.image_res != cfg.image_res:
        raise ValueError(f"sequence frames are {seq.image_res} px, config says {cfg.image_res}")
    run_dir = Path(cfg.work_dir) / "runs" / f"{cfg.mode}-seed{cfg.seed}-{cfg.config_hash()}" if write else None

    texnet, average, rows1 = None, None, []
    if cfg.mode != "skeleton":
        filtered = cfg.mode != "unfiltered-dynamic"
        tds = cache.dataset(cfg, seq, train_idx, filtered)
        average = tds.average
        if cfg.mode in ("dynamic", "unfiltered-dynamic"):
            tex_dir = Path(cfg.work_dir) / "texnet" / f"seed{cfg.seed}-{'f' if filtered else 'u'}-{len(train_idx)}" \
                if write else None
            nets1, rows1 = cache.texnet(cfg, tds, filtered, tex_dir)
            texnet = nets1.gen
    cond_model = ConditioningModel(cfg.mode, seq.skeleton, seq.mesh, cfg.texture_res, texnet, average,
                                   seq.static_texture)
    cond_train = run_stage2_render(cond_model, [seq.poses[i] for i in train_idx],
                                   [seq.cameras[i] for i in train_idx])
    nets3, rows3 = run_stage3_refnet(cfg, refnet_training_set(seq, train_idx, cond_train),
                                     run_dir / "refnet" if run_dir else None)
    model = PipelineModel(cond_model, nets3.gen, cfg.image_res)
    pred = model.synthesize([seq.poses[i] for i in test_idx], [seq.cameras[i] for i in test_idx])
    report = evaluate(cfg, pred, [seq.frames[i] for i in test_idx], [seq.masks[i] for i in test_idx], test_idx,
                      label=cfg.mode)
    report.runtime_s = time.perf_counter() - t0
    report.extra = {"n_train": len(train_idx), "n_test": len(test_idx),
                    "texnet_steps": len(rows1), "refnet_steps": len(rows3)}
    if run_dir is not None:
        report.write(run_dir)
    return RunResult(cfg, report, model, rows1, rows3)


def run_benchmark(cfg: PipelineConfig, seq: Sequence, modes=("dynamic", "static", "skeleton"), seeds=(0, 1, 2),
                  cache: StageCache | None = None, write: bool = True) -> dict:
    """{mode: [EvalReport per seed]} with every mode sharing the same stage-3 code path."""
    cache = cache if cache is not None else StageCache()
    out = {m: [] for m in modes}
    for s in seeds:
        for m in modes:
            out[m].append(run_pipeline(cfg.replace(mode=m, seed=s), seq, cache, write).report)
    return out
