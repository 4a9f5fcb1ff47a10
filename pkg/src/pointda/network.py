"""Point proposal network and the fully convolutional domain discriminator.

Tensors follow torch's ``(B, C, rows, cols)`` convention inside the
modules; everything they return is re-laid out to the map convention of
:mod:`pointda.geometry`, ``(B, W, H, ...)`` with ``W`` the column axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .errors import InvalidArgumentError, InvalidInputError
from .geometry import AnchorGrid, build_anchor_grid

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


@dataclass(frozen=True)
class BackboneConfig:
    stride: int = 8
    channels: int = 64
    variant: str = "tiny"  # "tiny" | "vgg-like"
    slots_per_cell: int = 4
    disc_channels: int = 32

    def __post_init__(self):
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise InvalidArgumentError(f"stride must be a power of two, got {self.stride}")
        if self.variant not in ("tiny", "vgg-like"):
            raise InvalidArgumentError(f"unknown backbone variant {self.variant!r}")
        if self.slots_per_cell < 1 or self.channels < 1 or self.disc_channels < 1:
            raise InvalidArgumentError("slots_per_cell, channels and disc_channels must be positive")

    @property
    def depth(self) -> int:
        """Number of stride-2 stages."""
        return int(math.log2(self.stride))


@dataclass
class PredictionMaps:
    offsets: torch.Tensor  # (B, W, H, D, 2), in [-1, 1]
    cls: torch.Tensor  # (B, W, H, D, 2), (pos, neg) probabilities

    def detach(self) -> "PredictionMaps":
        return PredictionMaps(self.offsets.detach(), self.cls.detach())

    def __getitem__(self, idx) -> "PredictionMaps":
        return PredictionMaps(self.offsets[idx], self.cls[idx])


def _tiny_backbone(cfg: BackboneConfig) -> nn.Sequential:
    layers = []
    in_ch = 3
    widths = [max(cfg.channels // 2 ** (cfg.depth - 1 - n), 8) for n in range(cfg.depth)]
    for width in widths:
        layers += [
            nn.Conv2d(in_ch, width, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
        ]
        in_ch = width
    layers += [nn.Conv2d(in_ch, cfg.channels, 3, padding=1), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


def _vgg_backbone(cfg: BackboneConfig) -> nn.Sequential:
    layers = []
    in_ch = 3
    widths = [min(64 * 2**n, 512) for n in range(cfg.depth + 1)]
    for n, width in enumerate(widths):
        convs = 2 if n < 2 else 3
        for _ in range(convs):
            layers += [nn.Conv2d(in_ch, width, 3, padding=1), nn.ReLU(inplace=True)]
            in_ch = width
        if n < cfg.depth:
            layers.append(nn.MaxPool2d(2, ceil_mode=True))
    layers += [nn.Conv2d(in_ch, cfg.channels, 1), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


def _to_map(t: torch.Tensor, slots: int) -> torch.Tensor:
    # (B, 2D, rows, cols) -> (B, W=cols, H=rows, D, 2)
    b, _, rows, cols = t.shape
    return t.view(b, slots, 2, rows, cols).permute(0, 4, 3, 1, 2)


class PointProposalNet(nn.Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = _tiny_backbone(cfg) if cfg.variant == "tiny" else _vgg_backbone(cfg)
        d = cfg.slots_per_cell
        self.reg_head = nn.Conv2d(cfg.channels, 2 * d, 1)
        self.cls_head = nn.Conv2d(cfg.channels, 2 * d, 1)
        for head in (self.reg_head, self.cls_head):
            nn.init.normal_(head.weight, std=0.01)
            nn.init.zeros_(head.bias)

    def grid_for(self, image_h: int, image_w: int) -> AnchorGrid:
        return build_anchor_grid(image_w, image_h, self.cfg.stride, self.cfg.slots_per_cell)

    def logits(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw head outputs as maps: offset pre-activations and (pos, neg) logits."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise InvalidInputError(f"expected RGB batch (B, 3, rows, cols), got {tuple(images.shape)}")
        feats = self.backbone((images - PIXEL_MEAN) / PIXEL_STD)
        d = self.cfg.slots_per_cell
        return _to_map(self.reg_head(feats), d), _to_map(self.cls_head(feats), d)

    def forward(self, images: torch.Tensor) -> PredictionMaps:
        """``images``: float ``(B, 3, rows, cols)`` in [0, 1]."""
        reg, logits = self.logits(images)
        return PredictionMaps(offsets=torch.tanh(reg), cls=torch.softmax(logits, dim=-1))


def forward_main(model: PointProposalNet, images: torch.Tensor) -> PredictionMaps:
    return model(images)


def concat_predictions(maps: PredictionMaps) -> torch.Tensor:
    """Stack offsets and class probabilities along one channel axis.

    Result is ``(B, W, H, 4D)``: channels ``2k, 2k+1`` are slot ``k``'s
    offsets, channels ``2D + 2k, 2D + 2k + 1`` its (pos, neg) probabilities.
    """
    off, cls = maps.offsets, maps.cls
    if off.shape != cls.shape:
        raise InvalidArgumentError(f"offset map {tuple(off.shape)} and class map {tuple(cls.shape)} differ")
    lead = off.shape[:-2]
    return torch.cat((off.reshape(*lead, -1), cls.reshape(*lead, -1)), dim=-1)


def split_predictions(concat: torch.Tensor) -> PredictionMaps:
    c = concat.shape[-1]
    if c % 4:
        raise InvalidArgumentError(f"channel count {c} is not a multiple of 4")
    d = c // 4
    lead = concat.shape[:-1]
    return PredictionMaps(
        offsets=concat[..., : 2 * d].reshape(*lead, d, 2),
        cls=concat[..., 2 * d :].reshape(*lead, d, 2),
    )


class DomainDiscriminator(nn.Module):
    """Four stride-2 convolutions ending in a per-patch (source, target) softmax."""

    def __init__(self, slots_per_cell: int = 4, channels: int = 32, negative_slope: float = 0.2):
        super().__init__()
        self.in_channels = 4 * slots_per_cell
        widths = [channels, channels * 2, channels * 4]
        layers = []
        in_ch = self.in_channels
        for width in widths:
            layers += [nn.Conv2d(in_ch, width, 3, stride=2, padding=1), nn.LeakyReLU(negative_slope)]
            in_ch = width
        layers.append(nn.Conv2d(in_ch, 2, 3, stride=2, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, concat: torch.Tensor) -> torch.Tensor:
        """``(B, W, H, 4D)`` -> ``(B, W', H', 2)`` probabilities, ``W' = ceil(W / 16)``."""
        if concat.ndim != 4 or concat.shape[-1] != self.in_channels:
            raise InvalidInputError(
                f"discriminator expects (B, W, H, {self.in_channels}), got {tuple(concat.shape)}"
            )
        x = concat.permute(0, 3, 2, 1)  # -> (B, C, rows, cols)
        out = self.net(x).permute(0, 3, 2, 1)
        return F.softmax(out, dim=-1)


def forward_discriminator(disc: DomainDiscriminator, concat: torch.Tensor) -> torch.Tensor:
    return disc(concat)
