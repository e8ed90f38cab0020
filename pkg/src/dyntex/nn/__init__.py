from .autograd import Tensor, frozen
from .layers import Conv2d, GeneratorNet, InstanceNorm2d, Module, Parameter, PatchDiscriminator
from .losses import TemporalLosses, cgan_losses, temporal_objective, warp_loss
from .optim import Adam, NonFiniteGradientError, adam_step
from .serialization import load_checkpoint, load_tensor, save_checkpoint, save_tensor

__all__ = [
    "Tensor", "frozen", "Conv2d", "GeneratorNet", "InstanceNorm2d", "Module", "Parameter",
    "PatchDiscriminator", "TemporalLosses", "cgan_losses", "temporal_objective", "warp_loss",
    "Adam", "NonFiniteGradientError", "adam_step", "load_checkpoint", "load_tensor",
    "save_checkpoint", "save_tensor",
]
