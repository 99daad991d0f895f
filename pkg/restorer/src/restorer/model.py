"""Spatial-adaptive restoration network.

A UNet with four stride-2 downsamplings whose decoder stages use deformable
residual blocks driven by learned offsets that are upsampled and refined
stage by stage, plus a dilated-convolution context block at the bottleneck.
The degraded image is concatenated with a two-channel field-of-view map so
the network can condition on sensor position; a global residual keeps the
mapping close to identity at initialization.

Every piece is switchable for ablations: the FOV input, the deformable
blocks (falling back to plain residual blocks), and the context block.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.ops import deform_conv2d


@dataclass(frozen=True)
class NetworkConfig:
    image_channels: int = 3
    widths: tuple = (32, 64, 128, 256, 512)
    deform_blocks: int = 2          # deformable ResBlocks per decoder stage
    dilations: tuple = (1, 2, 3, 4)
    kernel_size: int = 3
    use_fov: bool = True
    use_deform: bool = True
    use_context: bool = True

    @property
    def in_channels(self) -> int:
        return self.image_channels + (2 if self.use_fov else 0)

    @property
    def scales(self) -> int:
        return len(self.widths) - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkConfig":
        doc = dict(doc)
        doc["widths"] = tuple(doc["widths"])
        doc["dilations"] = tuple(doc["dilations"])
        return cls(**doc)


def build_fov_map(height: int, width: int, device=None) -> torch.Tensor:
    """(2, H, W) map of normalized (x, y) coordinates in [-1, 1].

    Matches the dataset generator's definition: corners at (+-1, +-1), a
    lone pixel maps to 0.
    """
    if height < 1 or width < 1:
        raise ValueError("dimensions must be positive")
    # Same arithmetic as the dataset generator: 2*i/(n-1) - 1 in double.
    xs = (2.0 * torch.arange(width, dtype=torch.float64) / (width - 1) - 1.0
          if width > 1 else torch.zeros(1, dtype=torch.float64))
    ys = (2.0 * torch.arange(height, dtype=torch.float64) / (height - 1) - 1.0
          if height > 1 else torch.zeros(1, dtype=torch.float64))
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy]).to(device=device, dtype=torch.float32)


class ResBlock(nn.Module):
    """Plain residual block; the branch's last conv starts at zero so the
    block is an identity mapping at initialization."""

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel_size, padding=pad)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size, padding=pad)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class DeformableResBlock(nn.Module):
    """Residual block whose first convolution samples at learned offsets."""

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__()
        self.kernel_size = kernel_size
        pad = kernel_size // 2
        self.weight = nn.Parameter(
            torch.empty(channels, channels, kernel_size, kernel_size))
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)
        self.bias = nn.Parameter(torch.zeros(channels))
        self.conv2 = nn.Conv2d(channels, channels, kernel_size, padding=pad)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x, offsets):
        pad = self.kernel_size // 2
        branch = deform_conv2d(x, offsets, self.weight, self.bias,
                               padding=(pad, pad))
        return x + self.conv2(F.relu(branch))


class DecoderStage(nn.Module):
    """Upsample, merge the skip, refine the offset field, run the blocks.

    The incoming offset field (from the coarser stage) is upsampled,
    concatenated with the stage features, and refined by one convolution;
    the refined offsets drive this stage's deformable blocks and are passed
    on to the next stage.
    """

    def __init__(self, in_ch: int, skip_ch: int, out_ch: int, n_blocks: int,
                 kernel_size: int, use_deform: bool):
        super().__init__()
        self.use_deform = use_deform
        self.offset_ch = 2 * kernel_size * kernel_size
        self.up = nn.ConvTranspose2d(in_ch, out_ch, 2, stride=2)
        self.fuse = nn.Conv2d(out_ch + skip_ch, out_ch, 3, padding=1)
        if use_deform:
            self.offset_refine = nn.Conv2d(out_ch + self.offset_ch,
                                           self.offset_ch, 3, padding=1)
            nn.init.zeros_(self.offset_refine.weight)
            nn.init.zeros_(self.offset_refine.bias)
            self.blocks = nn.ModuleList(
                [DeformableResBlock(out_ch, kernel_size) for _ in range(n_blocks)])
        else:
            self.blocks = nn.ModuleList(
                [ResBlock(out_ch, kernel_size) for _ in range(n_blocks)])

    def forward(self, x, skip, offsets):
        x = self.up(x)
        x = F.relu(self.fuse(torch.cat([x, skip], dim=1)))
        if not self.use_deform:
            return x, None
        if offsets is None:
            offsets = x.new_zeros(x.shape[0], self.offset_ch, *x.shape[2:])
        else:
            offsets = F.interpolate(offsets, size=x.shape[2:], mode="bilinear",
                                    align_corners=False)
        offsets = self.offset_refine(torch.cat([x, offsets], dim=1)) + offsets
        for block in self.blocks:
            x = block(x, offsets)
        return x, offsets


class ContextBlock(nn.Module):
    """Parallel dilated convolutions, concatenated and fused back."""

    def __init__(self, channels: int, dilations):
        super().__init__()
        self.branches = nn.ModuleList([
            nn.Conv2d(channels, channels, 3, padding=d, dilation=d)
            for d in dilations
        ])
        self.fuse = nn.Conv2d(channels * len(dilations), channels, 1)

    def forward(self, x):
        feats = [F.relu(branch(x)) for branch in self.branches]
        return x + self.fuse(torch.cat(feats, dim=1))


class RestorationNet(nn.Module):
    """UNet restorer: 5-channel stem (image + FOV), deformable decoder."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        w = config.widths
        self.stem = nn.Conv2d(config.in_channels, w[0], 3, padding=1)
        self.down = nn.ModuleList()
        for i in range(config.scales):
            self.down.append(nn.Sequential(
                nn.Conv2d(w[i], w[i + 1], 3, stride=2, padding=1),
                nn.ReLU(inplace=True),
                nn.Conv2d(w[i + 1], w[i + 1], 3, padding=1),
                nn.ReLU(inplace=True),
            ))
        self.context = (ContextBlock(w[-1], config.dilations)
                        if config.use_context else nn.Identity())
        self.up = nn.ModuleList()
        for i in reversed(range(config.scales)):
            self.up.append(DecoderStage(w[i + 1], w[i], w[i],
                                        config.deform_blocks,
                                        config.kernel_size,
                                        config.use_deform))
        self.head = nn.Conv2d(w[0], config.image_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, image, fov=None):
        """Restore ``image`` (N, 3, H, W); H and W must divide by 16.

        ``fov`` is the (N, 2, H, W) coordinate map; when omitted it is
        built from the input geometry.  With the FOV input ablated the map
        is ignored entirely.
        """
        n, _, h, w = image.shape
        stride = 2 ** self.config.scales
        if h % stride or w % stride:
            raise ValueError(f"input size must be divisible by {stride}")
        if self.config.use_fov:
            if fov is None:
                fov = build_fov_map(h, w, device=image.device).expand(n, -1, -1, -1)
            x = torch.cat([image, fov], dim=1)
        else:
            x = image
        x = F.relu(self.stem(x))
        skips = []
        for stage in self.down:
            skips.append(x)
            x = stage(x)
        x = self.context(x)
        offsets = None
        for stage, skip in zip(self.up, reversed(skips)):
            x, offsets = stage(x, skip, offsets)
        return image + self.head(x)
