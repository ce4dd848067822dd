"""Trainable image-transformation networks.

Two backbones with the same contract (RGB in, same-size RGB in [0,1] out):

* `unet`: a per-style encoder-decoder with skip connections, trained from
  scratch or from a pretrained checkpoint for each style.
* `adain`: a frozen vgg19_trim encoder whose relu4_1 features are re-scaled
  to the style's channel statistics, followed by a trainable decoder.

Only TransferNet parameters are ever optimized; the AdaIN encoder is the
shared frozen perceptual stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, LoadError, ValidationError
from .perceptual import PerceptualExtractor, _prepare_image

CHECKPOINT_FORMAT = "muviecast-checkpoint"
CHECKPOINT_VERSION = 1

_UNET_WIDTH = 28          # tuned so the trainable count sits near 1.7M
_ADAIN_EPS = 1e-5


def _conv(in_ch, out_ch, stride=1):
    return nn.Sequential(
        nn.ReflectionPad2d(1),
        nn.Conv2d(in_ch, out_ch, 3, stride=stride),
        nn.InstanceNorm2d(out_ch, affine=True),
    )


class _ResidualBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.c1 = _conv(ch, ch)
        self.c2 = _conv(ch, ch)

    def forward(self, x):
        return x + self.c2(F.relu(self.c1(x)))


class UNetBackbone(nn.Module):
    """3-level encoder-decoder with concat skips and a residual bottleneck."""

    def __init__(self, width=_UNET_WIDTH, residual_blocks=1):
        super().__init__()
        w = width
        self.stem = _conv(3, w)
        self.down1 = _conv(w, 2 * w, stride=2)
        self.down2 = _conv(2 * w, 4 * w, stride=2)
        self.down3 = _conv(4 * w, 8 * w, stride=2)
        self.bottleneck = nn.Sequential(
            *[_ResidualBlock(8 * w) for _ in range(residual_blocks)])
        self.up3 = _conv(8 * w, 4 * w)
        self.fuse3 = _conv(8 * w, 4 * w)
        self.up2 = _conv(4 * w, 2 * w)
        self.fuse2 = _conv(4 * w, 2 * w)
        self.up1 = _conv(2 * w, w)
        self.fuse1 = _conv(2 * w, w)
        self.out = nn.Sequential(nn.ReflectionPad2d(1), nn.Conv2d(w, 3, 3))

    def forward(self, x):
        s0 = F.relu(self.stem(x))
        s1 = F.relu(self.down1(s0))
        s2 = F.relu(self.down2(s1))
        x = F.relu(self.down3(s2))
        x = self.bottleneck(x)
        x = F.relu(self.up3(F.interpolate(x, scale_factor=2, mode="nearest")))
        x = F.relu(self.fuse3(torch.cat([x, s2], dim=1)))
        x = F.relu(self.up2(F.interpolate(x, scale_factor=2, mode="nearest")))
        x = F.relu(self.fuse2(torch.cat([x, s1], dim=1)))
        x = F.relu(self.up1(F.interpolate(x, scale_factor=2, mode="nearest")))
        x = F.relu(self.fuse1(torch.cat([x, s0], dim=1)))
        return torch.sigmoid(self.out(x))


def adain_map(content_features: torch.Tensor,
              style_features: torch.Tensor) -> torch.Tensor:
    """Re-scale content features to the style's per-channel mean and std.

    The denominator is clamped below at a small epsilon rather than shifted
    by it, so the output statistics equal the style statistics exactly
    whenever the content spread is non-degenerate, and style==content is an
    exact identity.
    """
    squeeze = content_features.dim() == 3
    c = content_features.unsqueeze(0) if squeeze else content_features
    s = style_features.unsqueeze(0) if style_features.dim() == 3 else style_features
    if c.shape[1] == 0 or s.shape[1] == 0:
        raise ValidationError("zero channel count")
    if c.shape[1] != s.shape[1]:
        raise ValidationError("channel count mismatch")
    mu_c = c.mean(dim=(2, 3), keepdim=True)
    mu_s = s.mean(dim=(2, 3), keepdim=True)
    sd_c = c.var(dim=(2, 3), keepdim=True, unbiased=False).sqrt()
    sd_s = s.var(dim=(2, 3), keepdim=True, unbiased=False).sqrt()
    out = sd_s * (c - mu_c) / sd_c.clamp(min=_ADAIN_EPS) + mu_s
    return out.squeeze(0) if squeeze else out


class AdainDecoder(nn.Module):
    """Mirror of the vgg19_trim encoder: 512 channels at 1/8 scale back to RGB."""

    def __init__(self):
        super().__init__()
        def c(i, o):
            return nn.Sequential(nn.ReflectionPad2d(1), nn.Conv2d(i, o, 3))
        self.blocks = nn.ModuleList([
            c(512, 256),                       # then upsample
            c(256, 256), c(256, 256), c(256, 256), c(256, 128),   # upsample
            c(128, 128), c(128, 64),                              # upsample
            c(64, 64),
        ])
        self.final = c(64, 3)
        self._upsample_after = {0, 4, 6}

    def forward(self, x):
        for i, blk in enumerate(self.blocks):
            x = F.relu(blk(x))
            if i in self._upsample_after:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
        return torch.sigmoid(self.final(x))

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())


@dataclass
class TransferConfig:
    backbone: str = "unet"
    init_weights_path: str = None
    style_image: np.ndarray = None

    def __post_init__(self):
        if self.backbone not in ("unet", "adain"):
            raise ConfigError(f"unknown transfer backbone {self.backbone!r}")
        if self.style_image is not None:
            arr = np.asarray(self.style_image)
            if arr.min() < 0 or arr.max() > 1:
                raise ValidationError("style_image must be in [0, 1]")


class TransferNet(nn.Module):
    """Facade over both backbones with a single transform() entry point."""

    def __init__(self, config: TransferConfig,
                 encoder: PerceptualExtractor = None):
        super().__init__()
        self.backbone = config.backbone
        if self.backbone == "unet":
            self.net = UNetBackbone()
            self.encoder = None
        else:
            if config.style_image is None:
                raise ConfigError("adain backbone requires a style image")
            self.encoder = encoder if encoder is not None \
                else PerceptualExtractor("vgg19_trim")
            if self.encoder.backbone_id != "vgg19_trim":
                raise ConfigError("adain encoder must be vgg19_trim")
            self.net = AdainDecoder()
            with torch.no_grad():
                feats = self.encoder(_prepare_image(config.style_image),
                                     ["relu4_1"])
            self.register_buffer("style_features",
                                 feats["relu4_1"].detach(), persistent=True)
        if config.init_weights_path is not None:
            load_checkpoint_into(self, config.init_weights_path)

    def trainable_parameters(self):
        return list(self.net.parameters())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.trainable_parameters())

    def transform(self, images) -> torch.Tensor:
        """Stylize a batch. Accepts (B,3,H,W), (3,H,W), or a list of images;
        H and W must be divisible by 8."""
        x = _as_batch(images)
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ValidationError(
                f"image dims must be divisible by 8, got {x.shape[2]}x{x.shape[3]}")
        if self.backbone == "unet":
            return self.net(x)
        content = self.encoder(x, ["relu4_1"])["relu4_1"]
        style = self.style_features.to(dtype=content.dtype)
        return self.net(adain_map(content, style))

    def forward(self, images):
        return self.transform(images)


def _as_batch(images) -> torch.Tensor:
    if isinstance(images, (list, tuple)):
        prepared = [_prepare_image(im)[0] for im in images]
        shapes = {tuple(p.shape) for p in prepared}
        if len(shapes) > 1:
            raise ValidationError(f"mixed shapes within batch: {sorted(shapes)}")
        return torch.stack(prepared)
    return _prepare_image(images)


def save_checkpoint(net: TransferNet, path, style_id: str = "style",
                    extra: dict = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "backbone": net.backbone,
        "style_id": style_id,
        "state": net.net.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint_into(net: TransferNet, path) -> dict:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"not a recognized checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise LoadError(f"unsupported checkpoint version {payload.get('version')}")
    if payload.get("backbone") != net.backbone:
        raise ConfigError(
            f"checkpoint is for backbone {payload.get('backbone')!r}, "
            f"net is {net.backbone!r}")
    net.net.load_state_dict(payload["state"])
    return payload
