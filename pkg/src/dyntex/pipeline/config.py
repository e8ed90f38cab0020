from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

MODES = ("dynamic", "static", "average", "skeleton", "unfiltered-dynamic")


@dataclass
class PipelineConfig:
    work_dir: str = "work"
    data_dir: str | None = None          # None -> <work_dir>/data
    # synthetic data
    n_frames: int = 800
    image_res: int = 64
    texture_res: int = 128
    noise_sigma: float = 0.0
    data_seed: int = 0
    # texture dataset
    k: int = 16
    rare_fraction: float = 0.02
    min_obs: int = 10
    # training
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.99
    lambda_flow: float = 10.0
    lambda_rec: float = 10.0
    epochs: int = 1
    batch: int = 1
    max_steps: int | None = None         # caps every training run when set
    base_width: int = 16
    depth: int = 3
    seed: int = 0
    # protocol
    mode: str = "dynamic"
    test_fraction: float = 0.25
    train_fraction: float = 1.0          # leading share of the training frames actually used

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")
        for name in ("image_res", "texture_res"):
            if getattr(self, name) % (2 ** self.depth):
                raise ValueError(f"{name} must be divisible by 2**depth = {2 ** self.depth}")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be >= 1")

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.work_dir) / "data"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "PipelineConfig":
        d = self.to_dict()
        d.update(kw)
        return PipelineConfig.from_dict(d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def save_config(path, cfg: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))


def load_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


def split_indices(n: int, test_fraction: float = 0.25, train_fraction: float = 1.0):
    """Contiguous tail for testing; the training share is a prefix of the rest."""
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"{n} frames cannot be split with test fraction {test_fraction}")
    n_train_all = n - n_test
    n_train = max(3, int(round(n_train_all * train_fraction)))
    if n_train > n_train_all:
        raise ValueError("training share needs at least 3 frames")
    return list(range(n_train)), list(range(n_train_all, n))
