"""Loading a generated sequence and building the per-frame texture-space dataset."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..character import PoseVector, SkinnedMesh, Skeleton, load_clip, load_skeleton, load_skin, pose_mesh, \
    read_obj, vertex_normals
from ..nn.serialization import load_tensor, save_tensor
from ..raster import Camera, PartialNormalMap, PartialTextureMap, bake_partial_normal_map, extract_partial_maps, \
    load_mask, load_png, texel_atlas
from ..texpipe import AverageTexture, PrototypePalette, average_texture, filter_textures, kmeans_palette


@dataclass
class Sequence:
    root: Path
    frames: list[np.ndarray]          # linear RGB in [0, 1]
    masks: list[np.ndarray]
    poses: list[PoseVector]           # the emitted (possibly noisy) tracking poses
    cameras: list[Camera]
    skeleton: Skeleton
    mesh: SkinnedMesh
    static_texture: np.ndarray | None = None
    _posed: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def image_res(self) -> int:
        return self.frames[0].shape[0]

    def posed(self, i: int) -> np.ndarray:
        if i not in self._posed:
            self._posed[i] = pose_mesh(self.mesh, self.skeleton, self.poses[i])
        return self._posed[i]


def load_actor(directory) -> tuple[Skeleton, SkinnedMesh]:
    d = Path(directory)
    verts, tris, uv = read_obj(d / "mesh.obj")
    if uv is None:
        raise ValueError(f"{d / 'mesh.obj'} has no texture coordinates")
    joints, weights = load_skin(d / "skin.json")
    sk = load_skeleton(d / "skeleton.json")
    mesh = SkinnedMesh(verts, tris, uv, joints, weights)
    mesh.validate(sk)
    return sk, mesh


def load_sequence(directory) -> Sequence:
    d = Path(directory)
    frame_files = sorted((d / "frames").glob("*.png"))
    mask_files = sorted((d / "masks").glob("*.png"))
    poses = load_clip(d / "poses.json").poses
    cameras = [Camera.from_dict(c) for c in json.loads((d / "cameras.json").read_text())]
    counts = {"frames": len(frame_files), "masks": len(mask_files), "poses": len(poses), "cameras": len(cameras)}
    if len(set(counts.values())) != 1 or counts["frames"] == 0:
        raise ValueError(f"inconsistent sequence in {d}: {counts}")
    sk, mesh = load_actor(d / "actor")
    static = d / "gt_textures" / "static.tnsr"
    return Sequence(d, [load_png(f) for f in frame_files], [load_mask(f) for f in mask_files], poses, cameras,
                    sk, mesh, load_tensor(static).astype(np.float64) if static.exists() else None)


# ---------------------------------------------------------------- texture-space dataset

@dataclass
class TextureDataset:
    indices: list[int]                      # sequence frame indices, in order
    normals: list[PartialNormalMap]
    partials: list[PartialTextureMap]       # filtered unless built unfiltered
    average: AverageTexture
    palette: PrototypePalette | None
    report: dict

    @property
    def texture_res(self) -> int:
        return self.average.rgb.shape[0]


def extract(seq: Sequence, indices, texture_res: int):
    """Partial normal maps and back-projected partial textures for the given frames."""
    atlas = texel_atlas(seq.mesh, seq.mesh.uv, texture_res)
    normals, partials = [], []
    for i in indices:
        v = seq.posed(i)
        n, p = extract_partial_maps(seq.frames[i], seq.masks[i], seq.mesh, v,
                                    vertex_normals(v, seq.mesh.triangles), seq.mesh.uv, seq.cameras[i],
                                    texture_res, atlas)
        normals.append(n)
        partials.append(p)
    return normals, partials


def normal_maps(seq: Sequence, indices, texture_res: int, poses=None, cameras=None) -> list[PartialNormalMap]:
    """Normal maps from pose and camera alone; the frames are never read."""
    atlas = texel_atlas(seq.mesh, seq.mesh.uv, texture_res)
    out = []
    for k, i in enumerate(indices):
        theta = seq.poses[i] if poses is None else poses[k]
        cam = seq.cameras[i] if cameras is None else cameras[k]
        v = seq.posed(i) if poses is None else pose_mesh(seq.mesh, seq.skeleton, theta)
        out.append(bake_partial_normal_map(seq.mesh, v, vertex_normals(v, seq.mesh.triangles), seq.mesh.uv, cam,
                                           texture_res, atlas))
    return out


def build_texture_dataset(seq: Sequence, indices, texture_res: int, k: int = 16, rare_fraction: float = 0.02,
                          min_obs: int = 10, seed: int = 0, filtered: bool = True) -> TextureDataset:
    indices = list(indices)
    normals, raw = extract(seq, indices, texture_res)
    avg = average_texture(raw)
    if not filtered:
        return TextureDataset(indices, normals, raw, avg, None, {"filtered": False})
    palette = kmeans_palette(avg, k=k, seed=seed)
    partials, report = filter_textures(raw, palette, rare_fraction, min_obs)
    return TextureDataset(indices, normals, partials, avg, palette, {"filtered": True, **report.to_dict()})


def save_texture_dataset(directory, ds: TextureDataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, (n, p) in enumerate(zip(ds.normals, ds.partials)):
        save_tensor(d / f"{k:05d}.normal.tnsr", n.normals.astype(np.float32))
        save_tensor(d / f"{k:05d}.rgb.tnsr", p.rgb.astype(np.float32))
        save_tensor(d / f"{k:05d}.mask.tnsr", np.stack([n.mask, p.mask]).astype(np.float32))
    save_tensor(d / "average.tnsr", ds.average.rgb.astype(np.float32))
    save_tensor(d / "average_count.tnsr", ds.average.count.astype(np.float32))
    meta = {"indices": ds.indices, "report": ds.report,
            "palette": ds.palette.to_dict() if ds.palette is not None else None}
    (d / "dataset.json").write_text(json.dumps(meta, indent=2))


def load_texture_dataset(directory) -> TextureDataset:
    d = Path(directory)
    meta = json.loads((d / "dataset.json").read_text())
    normals, partials = [], []
    for k in range(len(meta["indices"])):
        m = load_tensor(d / f"{k:05d}.mask.tnsr") > 0.5
        normals.append(PartialNormalMap(load_tensor(d / f"{k:05d}.normal.tnsr").astype(np.float64), m[0], None))
        partials.append(PartialTextureMap(load_tensor(d / f"{k:05d}.rgb.tnsr").astype(np.float64), m[1], None))
    avg = AverageTexture(load_tensor(d / "average.tnsr").astype(np.float64),
                         np.round(load_tensor(d / "average_count.tnsr")).astype(np.int64))
    pal = PrototypePalette.from_dict(meta["palette"]) if meta["palette"] else None
    return TextureDataset(meta["indices"], normals, partials, avg, pal, meta["report"])


def refilter(ds: TextureDataset, k: int, rare_fraction: float, min_obs: int, seed: int = 0) -> TextureDataset:
    palette = kmeans_palette(ds.average, k=k, seed=seed)
    partials, report = filter_textures(ds.partials, palette, rare_fraction, min_obs)
    return TextureDataset(ds.indices, ds.normals, partials, ds.average, palette,
                          {"filtered": True, **report.to_dict()})
