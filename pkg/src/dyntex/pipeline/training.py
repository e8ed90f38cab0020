"""Shared adversarial training loop for TexNet and RefNet."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..nn import Adam, GeneratorNet, NonFiniteGradientError, PatchDiscriminator, Tensor, frozen, load_checkpoint, \
    save_checkpoint, temporal_objective
from ..raster import srgb_decode, srgb_encode

LOSS_COLUMNS = ("step", "epoch", "gen_total", "disc_frm", "disc_vid", "frm", "vid", "flow", "rec")
WINDOW = 3


class TrainingDivergedError(FloatingPointError):
    """Raised after restoring and saving the last finite parameters."""


@dataclass
class TrainingSet:
    cond: np.ndarray               # (N, Cin, H, W) float32
    target: np.ndarray             # (N, 3, H, W) float32, display-encoded colours
    flows: list                    # N - 1 fields, flows[i] maps frame i to i + 1
    covis: list
    masks: np.ndarray | None = None   # (N, H, W) bool; None supervises every pixel

    def __post_init__(self):
        n = len(self.cond)
        if n < WINDOW:
            raise ValueError(f"training needs at least {WINDOW} consecutive frames, got {n}")
        if len(self.target) != n or len(self.flows) != n - 1 or len(self.covis) != n - 1:
            raise ValueError("conditioning, targets, flows and co-visibility masks do not line up")
        if self.masks is not None and len(self.masks) != n:
            raise ValueError("one mask per frame is required")

    def __len__(self) -> int:
        return len(self.cond)


@dataclass
class Networks:
    gen: GeneratorNet
    d_frm: PatchDiscriminator
    d_vid: PatchDiscriminator


def make_networks(in_ch: int, base: int, depth: int, seed: int) -> Networks:
    out_ch = 3
    return Networks(GeneratorNet(in_ch, out_ch, base=base, depth=depth, seed=seed),
                    PatchDiscriminator(in_ch + out_ch, base=base, seed=seed + 1),
                    PatchDiscriminator(WINDOW * (in_ch + out_ch), base=base, seed=seed + 2))


def to_nchw(images) -> np.ndarray:
    return np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2), dtype=np.float32)


def to_display_nchw(linear_images) -> np.ndarray:
    return to_nchw([srgb_encode(im) for im in linear_images])


def from_display_nchw(batch: np.ndarray) -> list[np.ndarray]:
    return [srgb_decode(x.transpose(1, 2, 0).astype(np.float64)) for x in batch]


def window_start(anchor: int, n: int) -> int:
    """First frame of the stride-1 window centred on the anchor, shifted inward at the ends."""
    return min(max(anchor - 1, 0), n - WINDOW)


def steps_per_epoch(n: int, batch: int) -> int:
    return math.ceil(n / batch)


def _snapshot(modules):
    return [[(p.data.copy(), p.adam_m.copy(), p.adam_v.copy(), p.step_count) for p in m.parameters()]
            for m in modules]


def _restore(modules, snap):
    for m, s in zip(modules, snap):
        for p, (d, am, av, c) in zip(m.parameters(), s):
            p.data, p.adam_m, p.adam_v, p.step_count = d, am, av, c
            p.grad = np.zeros_like(d)


def _window_losses(nets: Networks, data: TrainingSet, s: int, lambda_flow: float, lambda_rec: float):
    idx = range(s, s + WINDOW)
    gen = [nets.gen(Tensor(data.cond[i:i + 1])) for i in idx]
    real = [Tensor(data.target[i:i + 1]) for i in idx]
    cond = [Tensor(data.cond[i:i + 1]) for i in idx]
    masks = None if data.masks is None else [data.masks[i] for i in idx]
    return temporal_objective(gen, real, cond, data.flows[s:s + 2], data.covis[s:s + 2], nets.d_frm, nets.d_vid,
                              lambda_flow, lambda_rec, masks=masks)


def train(nets: Networks, data: TrainingSet, *, lr=2e-4, beta1=0.5, beta2=0.99, lambda_flow=10.0,
          lambda_rec=10.0, epochs=1, batch=1, max_steps=None, seed=0, out_dir=None,
          callback: Callable[[int, Networks], None] | None = None, meta: dict | None = None) -> list[dict]:
    """Alternating generator / discriminator Adam steps over shuffled 3-frame windows.

    One step per batch of anchor frames, so an epoch is ceil(N / batch) steps.
    Writes loss.csv (one row per step) and checkpoints under out_dir.
    """
    d_params = nets.d_frm.parameters() + nets.d_vid.parameters()
    opt_g = Adam(nets.gen.parameters(), lr, beta1, beta2)
    opt_d = Adam(d_params, lr, beta1, beta2)
    opt_g.zero_grad()
    opt_d.zero_grad()
    modules = (nets.gen, nets.d_frm, nets.d_vid)
    rng = np.random.default_rng([seed, 0x7A1])
    n = len(data)
    rows = []
    step = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        for epoch in range(epochs):
            order = rng.permutation(n)
            for b0 in range(0, n, batch):
                if max_steps is not None and step >= max_steps:
                    break
                anchors = order[b0:b0 + batch]
                snap = _snapshot(modules)
                scale = 1.0 / len(anchors)
                losses = [_window_losses(nets, data, window_start(int(a), n), lambda_flow, lambda_rec)
                          for a in anchors]
                totals = {k: float(np.mean([L.scalars()[k] for L in losses])) for k in LOSS_COLUMNS[2:]}
                try:
                    if not all(math.isfinite(v) for v in totals.values()):
                        raise NonFiniteGradientError(f"non-finite loss at step {step + 1}: {totals}")
                    with frozen(d_params):
                        for L in losses:
                            (L.gen_total * scale).backward()
                    for L in losses:
                        ((L.disc_frm + L.disc_vid) * scale).backward()
                    opt_g.step()
                    opt_d.step()
                except NonFiniteGradientError as e:
                    _restore(modules, snap)
                    if out is not None:
                        save_networks(out, nets, {**(meta or {}), "step": step, "diverged": True})
                    raise TrainingDivergedError(f"{e}; restored parameters from step {step}") from e
                step += 1
                rows.append({"step": step, "epoch": epoch + 1, **totals})
                if callback is not None:
                    callback(step, nets)
    finally:
        if out is not None:
            write_loss_csv(out / "loss.csv", rows)
    if out is not None:
        save_networks(out, nets, {**(meta or {}), "step": step})
    return rows


def write_loss_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def save_networks(directory, nets: Networks, extra: dict | None = None) -> None:
    d = Path(directory)
    meta = {"in_ch": nets.gen.in_ch, "base": nets.gen.base, "depth": nets.gen.depth, **(extra or {})}
    save_checkpoint(d / "generator", nets.gen, meta)
    save_checkpoint(d / "d_frm", nets.d_frm)
    save_checkpoint(d / "d_vid", nets.d_vid)


def load_generator(directory) -> tuple[GeneratorNet, dict]:
    d = Path(directory) / "generator"
    meta = json.loads((d / "manifest.json").read_text()).get("extra", {})
    gen = GeneratorNet(meta["in_ch"], 3, base=meta["base"], depth=meta["depth"])
    load_checkpoint(d, gen)
    return gen, meta


def predict(gen: GeneratorNet, cond: np.ndarray, chunk: int = 8) -> np.ndarray:
    """Forward pass without building a graph; returns (N, 3, H, W) float32."""
    out = []
    with frozen(gen.parameters()):
        for s in range(0, len(cond), chunk):
            out.append(gen(Tensor(cond[s:s + chunk])).data)
    return np.concatenate(out)


def masked_l1(gen: GeneratorNet, data: TrainingSet, indices=None) -> float:
    """Mean |G(x) - y| over supervised pixels and channels."""
    idx = np.arange(len(data)) if indices is None else np.asarray(indices)
    pred = predict(gen, data.cond[idx]).astype(np.float64)
    err = np.abs(pred - data.target[idx])
    if data.masks is None:
        return float(err.mean())
    m = data.masks[idx][:, None].astype(np.float64)
    return float((err * m).sum() / max(m.sum() * err.shape[1], 1.0))
