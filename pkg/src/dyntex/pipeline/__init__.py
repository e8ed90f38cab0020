from .config import MODES, PipelineConfig, load_config, save_config, split_indices
from .data import Sequence, TextureDataset, build_texture_dataset, load_sequence
from .metrics import EvalReport, evaluate, foreground_l2, ssim
from .stages import (ConditioningModel, PipelineModel, StageCache, run_benchmark, run_pipeline, run_stage1_texnet,
                     run_stage2_render, run_stage3_refnet, synthesize, synthesize_orbit, transfer_motion)
from .training import TrainingDivergedError, TrainingSet, masked_l1, train

__all__ = [
    "MODES", "PipelineConfig", "load_config", "save_config", "split_indices", "Sequence", "TextureDataset",
    "build_texture_dataset", "load_sequence", "EvalReport", "evaluate", "foreground_l2", "ssim",
    "ConditioningModel", "PipelineModel", "StageCache", "run_benchmark", "run_pipeline", "run_stage1_texnet",
    "run_stage2_render", "run_stage3_refnet", "synthesize", "synthesize_orbit", "transfer_motion",
    "TrainingDivergedError", "TrainingSet", "masked_l1", "train",
]
