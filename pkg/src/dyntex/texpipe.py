"""Dynamic-texture dataset construction: averaging, prototype-colour filtering, completion."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from .character import PoseVector, wrap_angle
from .nn.serialization import load_tensor, save_tensor
from .raster import PartialTextureMap

NEUTRAL_GRAY = 0.5


@dataclass
class AverageTexture:
    rgb: np.ndarray      # (R, R, 3), zero where count == 0
    count: np.ndarray    # (R, R) visible observations

    @property
    def mask(self) -> np.ndarray:
        return self.count > 0


@dataclass
class PrototypePalette:
    centroids: np.ndarray   # (k, 3)
    inertia: float = float("nan")

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        if len(self.centroids) < 1 or not np.all(np.isfinite(self.centroids)):
            raise ValueError("palette needs at least one finite centroid")

    @property
    def k(self) -> int:
        return len(self.centroids)

    def assign(self, colors: np.ndarray, chunk: int = 1 << 18) -> np.ndarray:
        """Index of the nearest centroid (Euclidean RGB); ties go to the lower index."""
        flat = colors.reshape(-1, 3)
        out = np.empty(len(flat), dtype=np.int64)
        c2 = (self.centroids ** 2).sum(axis=1)
        for s in range(0, len(flat), chunk):
            x = flat[s:s + chunk]
            d = c2[None, :] - 2.0 * x @ self.centroids.T
            out[s:s + chunk] = np.argmin(d, axis=1)
        return out.reshape(colors.shape[:-1])

    def to_dict(self) -> dict:
        return {"k": self.k, "centroids": self.centroids.tolist(), "inertia": self.inertia}

    @classmethod
    def from_dict(cls, d: dict) -> "PrototypePalette":
        return cls(np.array(d["centroids"]), d.get("inertia", float("nan")))


@dataclass
class DiscardReport:
    per_frame: list[int]
    insignificant_texel_prototypes: int
    filtered_texels: int
    rare_fraction: float
    min_obs: int
    histogram_shape: tuple = field(default=())

    @property
    def total(self) -> int:
        return int(sum(self.per_frame))

    def to_dict(self) -> dict:
        return {"total_discarded": self.total, "per_frame": self.per_frame,
                "insignificant_texel_prototypes": self.insignificant_texel_prototypes,
                "texels_with_discards": self.filtered_texels,
                "rare_fraction": self.rare_fraction, "min_obs": self.min_obs}


def _stack(partials: Sequence[PartialTextureMap]):
    if len(partials) == 0:
        raise ValueError("need at least one partial texture")
    shapes = {p.rgb.shape for p in partials}
    if len(shapes) != 1:
        raise ValueError(f"partial textures differ in resolution: {sorted(shapes)}")
    rgb = np.stack([p.rgb for p in partials]).astype(np.float64)
    mask = np.stack([p.mask for p in partials]).astype(bool)
    return rgb, mask


def average_texture(partials: Sequence[PartialTextureMap]) -> AverageTexture:
    rgb, mask = _stack(partials)
    count = mask.sum(axis=0)
    total = np.einsum("nhwc,nhw->hwc", rgb, mask.astype(np.float64))
    avg = np.zeros_like(total)
    seen = count > 0
    avg[seen] = total[seen] / count[seen, None]
    return AverageTexture(avg, count)


def kmeans_palette(avg: AverageTexture, k: int = 16, seed: int = 0, max_iter: int = 300,
                   n_init: int = 10) -> PrototypePalette:
    """Prototype colours of the visible average-texture texels (Lloyd, k-means++ seeding)."""
    colors = avg.rgb[avg.mask]
    if len(colors) == 0:
        raise ValueError("average texture has no visible texels")
    distinct = len(np.unique(colors, axis=0))
    if distinct < k:
        warnings.warn(f"only {distinct} distinct colours; reducing k from {k} to {distinct}", RuntimeWarning,
                      stacklevel=2)
        k = distinct
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=max_iter, tol=0.0,
                random_state=seed, algorithm="lloyd")
    km.fit(colors)
    return PrototypePalette(km.cluster_centers_, float(km.inertia_))


def texel_histogram(partials: Sequence[PartialTextureMap], palette: PrototypePalette) -> np.ndarray:
    """(R, R, k) counts of nearest prototypes over each texel's visible frames."""
    rgb, mask = _stack(partials)
    labels = palette.assign(rgb)
    return _histogram(labels, mask, palette.k)


def _histogram(labels, mask, k):
    hist = np.zeros(mask.shape[1:] + (k,), dtype=np.int64)
    for j in range(k):
        hist[..., j] = ((labels == j) & mask).sum(axis=0)
    return hist


def filter_textures(partials: Sequence[PartialTextureMap], palette: PrototypePalette,
                    rare_fraction: float = 0.02, min_obs: int = 10):
    """Drop every observation whose prototype is rare at that texel.

    A prototype is rare at a texel seen in n >= min_obs frames when fewer than
    rare_fraction * n of those observations map to it.  Returns the filtered
    partials and a DiscardReport.
    """
    rgb, mask = _stack(partials)
    labels = palette.assign(rgb)
    hist = _histogram(labels, mask, palette.k)
    n = mask.sum(axis=0)
    insignificant = (hist < rare_fraction * n[..., None]) & (n[..., None] >= min_obs)
    R1, R2 = mask.shape[1:]
    rows, cols = np.meshgrid(np.arange(R1), np.arange(R2), indexing="ij")
    drop = mask & insignificant[rows[None], cols[None], labels]
    out, per_frame = [], []
    for f, p in enumerate(partials):
        d = drop[f]
        keep = p.mask & ~d
        new_rgb = np.where(keep[..., None], p.rgb, 0.0)
        src = np.where(keep[..., None], p.source_pixel, -1) if p.source_pixel is not None else None
        out.append(PartialTextureMap(new_rgb, keep, src))
        per_frame.append(int(d.sum()))
    report = DiscardReport(per_frame, int((insignificant & (hist > 0)).sum()), int(drop.any(axis=0).sum()),
                           rare_fraction, min_obs)
    return out, report


def complete_texture(partial: PartialTextureMap, avg: AverageTexture) -> np.ndarray:
    if partial.rgb.shape != avg.rgb.shape:
        raise ValueError(f"partial {partial.rgb.shape} and average {avg.rgb.shape} differ in resolution")
    out = np.full(avg.rgb.shape, NEUTRAL_GRAY)
    out[avg.mask] = avg.rgb[avg.mask]
    out[partial.mask] = partial.rgb[partial.mask]
    return out


def pose_distance(a: PoseVector, b: PoseVector) -> float:
    return float(np.linalg.norm(wrap_angle(np.asarray(a.joint_angles) - np.asarray(b.joint_angles))))


def nearest_pose_index(query: PoseVector, db_poses: Sequence[PoseVector]) -> tuple[int, float]:
    if len(db_poses) == 0:
        raise ValueError("pose database is empty")
    angles = np.stack([p.joint_angles for p in db_poses])
    d = np.linalg.norm(wrap_angle(angles - np.asarray(query.joint_angles)[None]), axis=1)
    i = int(np.argmin(d))           # first minimum: ties go to the smaller frame index
    return i, float(d[i])


def nn_texture_baseline(query: PoseVector, db_poses: Sequence[PoseVector],
                        db_partials: Sequence[PartialTextureMap], avg: AverageTexture) -> np.ndarray:
    i, _ = nearest_pose_index(query, db_poses)
    return complete_texture(db_partials[i], avg)


# ---------------------------------------------------------------- on-disk layout

def save_partials(directory, partials: Sequence[PartialTextureMap]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(partials):
        save_tensor(d / f"{i:05d}.rgb.tnsr", p.rgb.astype(np.float32))
        save_tensor(d / f"{i:05d}.mask.tnsr", p.mask.astype(np.float32))


def load_partials(directory) -> list[PartialTextureMap]:
    d = Path(directory)
    out = []
    for f in sorted(d.glob("*.rgb.tnsr")):
        stem = f.name[: -len(".rgb.tnsr")]
        rgb = load_tensor(f).astype(np.float64)
        mask = load_tensor(d / f"{stem}.mask.tnsr") > 0.5
        out.append(PartialTextureMap(rgb, mask, None))
    return out


def save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))
