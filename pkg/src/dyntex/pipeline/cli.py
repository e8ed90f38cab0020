"""Command-line entry point: one subcommand per pipeline step."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from ..character import load_clip, load_skeleton, save_clip
from ..raster import save_png
from ..retarget import load_correspondence, retarget_clip
from ..synthgen import build_actor, default_humanoid_spec, generate_sequence, load_spec, procedural_clip
from .config import MODES, PipelineConfig, load_config, save_config, split_indices
from .data import build_texture_dataset, load_sequence, load_texture_dataset, refilter, save_texture_dataset
from .metrics import evaluate
from .stages import ConditioningModel, PipelineModel, refnet_training_set, run_stage1_texnet, run_stage2_render, \
    run_stage3_refnet, synthesize_orbit, transfer_motion
from .training import load_generator


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config; flags given explicitly override it")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float}.get(str(f.type).split(" ")[0], str)
        if f.name == "mode":
            p.add_argument(flag, choices=MODES, default=None)
        else:
            p.add_argument(flag, type=kind, default=None)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = {f.name: getattr(args, f.name) for f in fields(PipelineConfig) if getattr(args, f.name, None) is not None}
    return cfg.replace(**over)


def _work(cfg: PipelineConfig, *parts) -> Path:
    return Path(cfg.work_dir).joinpath(*parts)


def _texture_dir(cfg: PipelineConfig, filtered: bool) -> Path:
    return _work(cfg, "filtered" if filtered else "extracted")


def _conditioning_model(cfg: PipelineConfig, seq) -> ConditioningModel:
    texnet, average = None, None
    if cfg.mode != "skeleton":
        average = load_texture_dataset(_texture_dir(cfg, cfg.mode != "unfiltered-dynamic")).average
    if cfg.mode in ("dynamic", "unfiltered-dynamic"):
        texnet, meta = load_generator(_work(cfg, "texnet", cfg.mode))
        if meta["texture_res"] != cfg.texture_res:
            raise ValueError(f"TexNet checkpoint is {meta['texture_res']} px, config asks for {cfg.texture_res}")
    return ConditioningModel(cfg.mode, seq.skeleton, seq.mesh, cfg.texture_res, texnet, average, seq.static_texture)


def _pipeline_model(cfg: PipelineConfig, seq) -> PipelineModel:
    refnet, meta = load_generator(_work(cfg, "refnet", cfg.mode))
    if meta["image_res"] != cfg.image_res:
        raise ValueError(f"RefNet checkpoint is {meta['image_res']} px, config asks for {cfg.image_res}")
    return PipelineModel(_conditioning_model(cfg, seq), refnet, cfg.image_res)


def _write_frames(directory, frames) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, im in enumerate(frames):
        save_png(d / f"{k:05d}.png", im)


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(cfg, args):
    spec = load_spec(args.spec) if args.spec else default_humanoid_spec(noise_sigma=cfg.noise_sigma,
                                                                         seed=cfg.data_seed)
    spec.camera.width = spec.camera.height_px = cfg.image_res
    spec.texture_res = cfg.texture_res
    actor = build_actor(spec)
    clip = procedural_clip(actor.skeleton, cfg.n_frames, seed=cfg.data_seed)
    generate_sequence(spec, clip, cfg.data_path, actor)
    print(f"wrote {cfg.n_frames} frames to {cfg.data_path}")


def cmd_extract(cfg, args):
    seq = load_sequence(cfg.data_path)
    train_idx, _ = split_indices(len(seq), cfg.test_fraction, cfg.train_fraction)
    tds = build_texture_dataset(seq, train_idx, cfg.texture_res, filtered=False)
    save_texture_dataset(_texture_dir(cfg, False), tds)
    print(f"extracted {len(train_idx)} training frames at {cfg.texture_res} px")


def cmd_filter(cfg, args):
    tds = refilter(load_texture_dataset(_texture_dir(cfg, False)), cfg.k, cfg.rare_fraction, cfg.min_obs,
                   seed=cfg.data_seed)
    save_texture_dataset(_texture_dir(cfg, True), tds)
    print(f"discarded {tds.report['total_discarded']} observations")


def cmd_train_texnet(cfg, args):
    if cfg.mode not in ("dynamic", "unfiltered-dynamic"):
        raise SystemExit(f"mode {cfg.mode} does not use a TexNet")
    tds = load_texture_dataset(_texture_dir(cfg, cfg.mode == "dynamic"))
    out = _work(cfg, "texnet", cfg.mode)
    _, rows = run_stage1_texnet(cfg, tds, out)
    print(f"trained TexNet for {len(rows)} steps -> {out}")


def _split_views(cfg, seq, which):
    train_idx, test_idx = split_indices(len(seq), cfg.test_fraction, cfg.train_fraction)
    return {"train": train_idx, "test": test_idx}[which]


def cmd_render(cfg, args):
    seq = load_sequence(cfg.data_path)
    idx = _split_views(cfg, seq, args.split)
    model = _conditioning_model(cfg, seq)
    run_stage2_render(model, [seq.poses[i] for i in idx], [seq.cameras[i] for i in idx],
                      _work(cfg, "renders", cfg.mode, args.split))
    print(f"rendered {len(idx)} {args.split} frames in mode {cfg.mode}")


def cmd_train_refnet(cfg, args):
    seq = load_sequence(cfg.data_path)
    idx = _split_views(cfg, seq, "train")
    cond = _conditioning_model(cfg, seq).render([seq.poses[i] for i in idx], [seq.cameras[i] for i in idx])
    out = _work(cfg, "refnet", cfg.mode)
    _, rows = run_stage3_refnet(cfg, refnet_training_set(seq, idx, cond), out)
    print(f"trained RefNet for {len(rows)} steps -> {out}")


def cmd_synthesize(cfg, args):
    seq = load_sequence(cfg.data_path)
    model = _pipeline_model(cfg, seq)
    if args.clip:
        clip = load_clip(args.clip)
        src = load_skeleton(args.source_skeleton) if args.source_skeleton else seq.skeleton
        corr = load_correspondence(args.correspondence) if args.correspondence else None
        cams = [seq.cameras[0]] * len(clip)
        frames, _ = transfer_motion(model, src, clip, cams, corr)
    else:
        idx = _split_views(cfg, seq, "test")
        frames = model.synthesize([seq.poses[i] for i in idx], [seq.cameras[i] for i in idx])
    out = Path(args.out) if args.out else _work(cfg, "synth", cfg.mode)
    _write_frames(out, frames)
    print(f"wrote {len(frames)} frames to {out}")


def cmd_orbit(cfg, args):
    seq = load_sequence(cfg.data_path)
    model = _pipeline_model(cfg, seq)
    spec = load_spec(cfg.data_path / "spec.json")
    frames = synthesize_orbit(model, seq.poses[args.frame], spec.camera)
    out = Path(args.out) if args.out else _work(cfg, "orbit", cfg.mode)
    _write_frames(out, frames)
    print(f"wrote {len(frames)} orbit frames to {out}")


def cmd_retarget(cfg, args):
    clip = load_clip(args.clip)
    src, dst = load_skeleton(args.source_skeleton), load_skeleton(args.target_skeleton)
    moved, results = retarget_clip(clip, src, dst, load_correspondence(args.correspondence))
    save_clip(args.out, moved)
    flagged = sum(r.flagged for r in results)
    print(f"retargeted {len(results)} poses, max keypoint RMSE {max(r.rmse for r in results):.3g} m, "
          f"{flagged} flagged")


def cmd_evaluate(cfg, args):
    from ..raster import load_mask, load_png
    seq = load_sequence(cfg.data_path)
    idx = _split_views(cfg, seq, "test")
    src = Path(args.frames) if args.frames else _work(cfg, "synth", cfg.mode)
    files = sorted(src.glob("*.png"))
    pred = [load_png(f) for f in files]
    report = evaluate(cfg, pred, [seq.frames[i] for i in idx], [seq.masks[i] for i in idx], idx, label=cfg.mode)
    out = Path(args.out) if args.out else _work(cfg, "eval", cfg.mode)
    report.write(out)
    print(f"{cfg.mode}: L2 {report.mean_l2:.3f}  SSIM {report.mean_ssim:.4f}  ({len(pred)} frames) -> {out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dyntex", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    cmds = {
        "gen-data": cmd_gen_data, "extract": cmd_extract, "filter": cmd_filter, "train-texnet": cmd_train_texnet,
        "render": cmd_render, "train-refnet": cmd_train_refnet, "synthesize": cmd_synthesize, "orbit": cmd_orbit,
        "retarget": cmd_retarget, "evaluate": cmd_evaluate,
    }
    for name, fn in cmds.items():
        p = sub.add_parser(name)
        _add_config_flags(p)
        p.set_defaults(func=fn)
        if name == "gen-data":
            p.add_argument("--spec", help="synthetic actor spec JSON")
        if name == "render":
            p.add_argument("--split", choices=("train", "test"), default="train")
        if name in ("synthesize", "orbit", "evaluate", "retarget"):
            p.add_argument("--out")
        if name in ("synthesize", "retarget"):
            p.add_argument("--clip", required=name == "retarget", help="driving motion clip JSON")
            p.add_argument("--source-skeleton", required=name == "retarget")
            p.add_argument("--correspondence", required=name == "retarget")
        if name == "retarget":
            p.add_argument("--target-skeleton", required=True)
        if name == "orbit":
            p.add_argument("--frame", type=int, default=0, help="sequence frame whose pose is held fixed")
        if name == "evaluate":
            p.add_argument("--frames", help="directory of synthesized PNGs (defaults to the synth output)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config(args)
    Path(cfg.work_dir).mkdir(parents=True, exist_ok=True)
    save_config(Path(cfg.work_dir) / f"{args.command}.config.json", cfg)
    args.func(cfg, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
