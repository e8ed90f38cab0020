"""Conditional-GAN and temporal losses shared by TexNet and RefNet."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import PatchDiscriminator


def cgan_losses(gen_out: Tensor, real: Tensor, conditioning: Tensor, disc: PatchDiscriminator):
    """Non-saturating logistic cGAN losses averaged over the score map.

    Returns ``(gen_loss, disc_loss)``.  ``disc_loss`` sees a detached copy of
    ``gen_out`` so it never routes gradient into the generator.
    """
    for name, t in (("gen_out", gen_out), ("real", real)):
        if t.shape[2:] != conditioning.shape[2:] or t.shape[0] != conditioning.shape[0]:
            raise ValueError(f"{name} {t.shape} and conditioning {conditioning.shape} do not line up")
    cond = conditioning.detach()
    real_logit = disc(ag.concat([cond, real.detach()], axis=1))
    fake_logit_d = disc(ag.concat([cond, gen_out.detach()], axis=1))
    # -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
    disc_loss = ag.softplus(-real_logit).mean() + ag.softplus(fake_logit_d).mean()
    fake_logit_g = disc(ag.concat([cond, gen_out], axis=1))
    gen_loss = ag.softplus(-fake_logit_g).mean()
    return gen_loss, disc_loss


def warp_loss(prev: Tensor, cur: Tensor, flow: np.ndarray, covis: np.ndarray) -> Tensor:
    """Mean |prev(p) - cur(p + flow(p))| over co-visible pixels p, cur sampled bilinearly.

    ``prev`` and ``cur`` are (1, C, H, W); ``flow`` is (H, W, 2) in pixels
    (x, y); ``covis`` is an (H, W) boolean mask.  Targets that land outside
    the pixel-centre grid are dropped.  An empty mask gives zero.
    """
    h, w = covis.shape
    ys, xs = np.nonzero(covis)
    tx = xs + flow[ys, xs, 0]
    ty = ys + flow[ys, xs, 1]
    ok = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    ys, xs, tx, ty = ys[ok], xs[ok], tx[ok], ty[ok]
    if len(ys) == 0:
        return Tensor(np.zeros((), dtype=prev.dtype))
    x0 = np.minimum(np.floor(tx).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ty).astype(np.intp), max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (tx - x0)[:, None], (ty - y0)[:, None]
    zeros = np.zeros(len(ys), dtype=np.intp)
    a = ag.gather_pixels(prev, zeros, ys, xs)
    b = (ag.gather_pixels(cur, zeros, y0, x0) * ((1 - fx) * (1 - fy))
         + ag.gather_pixels(cur, zeros, y0, x1) * (fx * (1 - fy))
         + ag.gather_pixels(cur, zeros, y1, x0) * ((1 - fx) * fy)
         + ag.gather_pixels(cur, zeros, y1, x1) * (fx * fy))
    return ag.abs_(a - b).mean()


@dataclass
class TemporalLosses:
    gen_total: Tensor
    disc_frm: Tensor
    disc_vid: Tensor
    frm: Tensor
    vid: Tensor
    flow: Tensor
    rec: Tensor

    def scalars(self) -> dict:
        return {k: float(getattr(self, k).data) for k in
                ("gen_total", "disc_frm", "disc_vid", "frm", "vid", "flow", "rec")}


def temporal_objective(gen_frames: Sequence[Tensor], real_frames: Sequence[Tensor],
                       conditionings: Sequence[Tensor], flows: Sequence[np.ndarray],
                       covis: Sequence[np.ndarray], d_frm: PatchDiscriminator,
                       d_vid: PatchDiscriminator, lambda_flow: float = 10.0,
                       lambda_rec: float = 10.0, masks: Sequence[np.ndarray] | None = None
                       ) -> TemporalLosses:
    """Per-frame + video cGAN terms, warp consistency, and an L1 stabiliser.

    Each frame tensor is (1, C, H, W).  ``flows[k]`` / ``covis[k]`` map frame
    k to frame k + 1 (two entries for a window of three).  When ``masks``
    (H, W) are given, generated and real frames are restricted to them before
    every term, which limits supervision to observed texels.
    """
    if not (len(gen_frames) == len(real_frames) == len(conditionings) == 3):
        raise ValueError(f"temporal window must hold exactly 3 frames, got {len(gen_frames)}")
    if len(flows) != 2 or len(covis) != 2:
        raise ValueError("a 3-frame window needs 2 flow fields and 2 co-visibility masks")
    gen = list(gen_frames)
    real = list(real_frames)
    if masks is not None:
        m = [np.asarray(mk, dtype=gen[0].dtype)[None, None] for mk in masks]
        gen = [ag.mul(g, mk) for g, mk in zip(gen, m)]
        real = [ag.mul(r, mk) for r, mk in zip(real, m)]

    frm_g, frm_d = [], []
    for g, r, c in zip(gen, real, conditionings):
        lg, ld = cgan_losses(g, r, c, d_frm)
        frm_g.append(lg)
        frm_d.append(ld)
    frm = frm_g[0] + frm_g[1] + frm_g[2]
    disc_frm = frm_d[0] + frm_d[1] + frm_d[2]

    stack = lambda xs: ag.concat(list(xs), axis=1)
    vid, disc_vid = cgan_losses(stack(gen), stack(real), stack(conditionings), d_vid)

    flow = warp_loss(gen[0], gen[1], flows[0], covis[0]) + warp_loss(gen[1], gen[2], flows[1], covis[1])

    rec_terms = [ag.abs_(g - r) for g, r in zip(gen, real)]
    if masks is not None:
        denom = max(float(sum(np.asarray(mk).sum() for mk in masks)) * gen[0].shape[1], 1.0)
        rec = (rec_terms[0].sum() + rec_terms[1].sum() + rec_terms[2].sum()) * (1.0 / denom)
    else:
        rec = (rec_terms[0].mean() + rec_terms[1].mean() + rec_terms[2].mean()) * (1.0 / 3.0)

    total = frm + vid + flow * lambda_flow + rec * lambda_rec
    return TemporalLosses(total, disc_frm, disc_vid, frm, vid, flow, rec)
