"""Parameters, modules, and the two network families (generator, patch critic)."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor that also carries its Adam state."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0


class Module:
    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{name}.{i}", item))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, dtype=np.float32, bias: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, kernel, kernel))
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class InstanceNorm2d(Module):
    """Instance normalisation followed by a per-channel affine map.

    A 1x1 feature map has no spatial statistics; it passes through
    un-normalised (only the affine map applies).
    """

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Parameter(np.ones((1, channels, 1, 1), dtype=dtype))
        self.beta = Parameter(np.zeros((1, channels, 1, 1), dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[2] * x.shape[3] > 1:
            x = ag.instance_norm(x, self.eps)
        return ag.add(ag.mul(x, self.gamma), self.beta)


class ConvBlock(Module):
    """conv -> instance norm -> leaky ReLU (the norm makes a conv bias redundant)."""

    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng, dtype, slope=0.2):
        self.conv = Conv2d(in_ch, out_ch, kernel, stride, padding, rng=rng, dtype=dtype, bias=False)
        self.norm = InstanceNorm2d(out_ch, dtype=dtype)
        self.slope = slope

    def forward(self, x):
        return ag.leaky_relu(self.norm(self.conv(x)), self.slope)


class GeneratorNet(Module):
    """U-Net style encoder/decoder with skip connections and a sigmoid head.

    ``depth`` stride-2 downsampling stages; channel width doubles per stage
    from ``base`` and is capped at ``4 * base``.  Input height and width must
    be divisible by ``2 ** depth``.
    """

    def __init__(self, in_ch: int = 3, out_ch: int = 3, base: int = 16, depth: int = 3,
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.in_ch, self.out_ch, self.base, self.depth = in_ch, out_ch, base, depth
        widths = [min(base * 2 ** i, 4 * base) for i in range(depth + 1)]
        self.stem = ConvBlock(in_ch, widths[0], 3, 1, 1, rng, dtype)
        self.down = [ConvBlock(widths[i], widths[i + 1], 4, 2, 1, rng, dtype) for i in range(depth)]
        self.mid = ConvBlock(widths[-1], widths[-1], 3, 1, 1, rng, dtype)
        self.up = []
        ch = widths[-1]
        for i in reversed(range(depth)):
            self.up.append(ConvBlock(ch + widths[i], widths[i], 3, 1, 1, rng, dtype))
            ch = widths[i]
        self.head = Conv2d(ch, out_ch, 3, 1, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        f = 2 ** self.depth
        if h % f or w % f:
            raise ValueError(f"generator input {x.shape} must have H, W divisible by {f}")
        skips = [self.stem(x)]
        for blk in self.down:
            skips.append(blk(skips[-1]))
        y = self.mid(skips.pop())
        for blk in self.up:
            y = blk(ag.concat([ag.upsample2x(y), skips.pop()], axis=1))
        return ag.sigmoid(self.head(y))


class PatchDiscriminator(Module):
    """Strided conv stack emitting one logit per receptive-field patch."""

    def __init__(self, in_ch: int, base: int = 16, n_layers: int = 2, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.first = Conv2d(in_ch, base, 4, 2, 1, rng=rng, dtype=dtype)
        self.blocks = []
        ch = base
        for _ in range(n_layers - 1):
            self.blocks.append(ConvBlock(ch, ch * 2, 4, 2, 1, rng, dtype))
            ch *= 2
        self.out = Conv2d(ch, 1, 3, 1, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = ag.leaky_relu(self.first(x), 0.2)
        for blk in self.blocks:
            y = blk(y)
        return self.out(y)
