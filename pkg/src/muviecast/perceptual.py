"""Frozen convolutional feature extractor for content and style taps.

Two trimmed VGG-style stacks are provided: `vgg16_trim` ends at relu4_3,
`vgg19_trim` ends at relu4_1. Weights load from a local file when a path is
given; with no path the stack is filled by a fixed-seed random init, which
keeps every loss well-defined and deterministic (documented fallback for
environments without pretrained weights; see README for supplying real
ones). The extractor is never trained: parameters are created with
requires_grad=False and the trainer asserts its checksum never changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, LoadError, ValidationError

# channel progression per backbone; "M" is a 2x2 max-pool
_CONFIGS = {
    "vgg16_trim": (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512),
    "vgg19_trim": (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512),
}

# ImageNet pixel statistics: the standard input mapping for these stacks
_NORM_MEAN = (0.485, 0.456, 0.406)
_NORM_STD = (0.229, 0.224, 0.225)

_INIT_SEEDS = {"vgg16_trim": 160001, "vgg19_trim": 190001}


def _layer_names(config) -> list:
    names, block, idx = [], 1, 1
    for entry in config:
        if entry == "M":
            block += 1
            idx = 1
        else:
            names.append(f"relu{block}_{idx}")
            idx += 1
    return names


TAP_NAMES = {k: _layer_names(v) for k, v in _CONFIGS.items()}

DEFAULT_TAPS = {
    "vgg16_trim": {"content": ["relu3_3"],
                   "style": ["relu1_2", "relu2_2", "relu3_3", "relu4_3"]},
    "vgg19_trim": {"content": ["relu4_1"],
                   "style": ["relu1_1", "relu2_1", "relu3_1", "relu4_1"]},
}


@dataclass
class FeatureTapSpec:
    backbone_id: str
    content_layers: list = None
    style_layers: list = None

    def __post_init__(self):
        if self.backbone_id not in _CONFIGS:
            raise ConfigError(f"unknown backbone {self.backbone_id!r}")
        defaults = DEFAULT_TAPS[self.backbone_id]
        if self.content_layers is None:
            self.content_layers = list(defaults["content"])
        if self.style_layers is None:
            self.style_layers = list(defaults["style"])
        valid = set(TAP_NAMES[self.backbone_id])
        for name in [*self.content_layers, *self.style_layers]:
            if name not in valid:
                raise ConfigError(
                    f"layer {name!r} not available in {self.backbone_id}")

    @property
    def all_layers(self) -> list:
        seen, out = set(), []
        for name in [*self.content_layers, *self.style_layers]:
            if name not in seen:
                seen.add(name)
                out.append(name)
        return out


@dataclass
class FeatureSet:
    """Tapped activations keyed by layer name, in tap order."""
    layers: dict

    def __getitem__(self, name):
        if name not in self.layers:
            raise ValidationError(f"layer {name!r} missing from feature set")
        return self.layers[name]

    def __contains__(self, name):
        return name in self.layers

    def names(self):
        return list(self.layers)

    def detach(self) -> "FeatureSet":
        return FeatureSet({k: v.detach() for k, v in self.layers.items()})


class PerceptualExtractor(nn.Module):
    def __init__(self, backbone_id: str, weights_path=None):
        super().__init__()
        if backbone_id not in _CONFIGS:
            raise ConfigError(f"unknown backbone {backbone_id!r}")
        self.backbone_id = backbone_id
        ops, name_of = [], {}
        in_ch = 3
        for entry in _CONFIGS[backbone_id]:
            if entry == "M":
                ops.append(nn.MaxPool2d(2, 2))
            else:
                ops.append(nn.Conv2d(in_ch, entry, 3, padding=1))
                ops.append(nn.ReLU(inplace=False))
                name_of[len(ops) - 1] = None
                in_ch = entry
        names = _layer_names(_CONFIGS[backbone_id])
        for pos, nm in zip(sorted(name_of), names):
            name_of[pos] = nm
        self.features = nn.ModuleList(ops)
        self._tap_of_index = name_of
        if weights_path is not None:
            self._load_weights(weights_path)
        else:
            self._seeded_init()
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _seeded_init(self):
        gen = torch.Generator().manual_seed(_INIT_SEEDS[self.backbone_id])
        with torch.no_grad():
            for m in self.features:
                if isinstance(m, nn.Conv2d):
                    fan_in = m.weight[0].numel()
                    w = torch.randn(m.weight.shape, generator=gen)
                    m.weight.copy_(w * (2.0 / fan_in) ** 0.5)
                    m.bias.zero_()

    def _load_weights(self, path):
        path = Path(path)
        if not path.exists():
            raise LoadError(f"weights file not found: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        if not isinstance(state, dict):
            raise LoadError(f"unrecognized weights file format: {path}")
        # accept bare ModuleList dumps next to full-model checkpoints
        if not any(k.startswith("features.") for k in state):
            state = {f"features.{k}": v for k, v in state.items()}
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        if missing:
            raise LoadError(f"weights file {path} lacks keys {missing[:4]}...")
        try:
            self.load_state_dict({k: state[k] for k in own})
        except RuntimeError as exc:
            raise LoadError(f"weights file {path} does not fit: {exc}") from exc

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, image: torch.Tensor, taps) -> FeatureSet:
        """Run the stack and collect the named activations.

        Stops after the deepest requested tap; inputs are mapped to the
        pretraining normalization here so callers stay in [0, 1].
        """
        x = _prepare_image(image)
        mean = torch.tensor(_NORM_MEAN, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        std = torch.tensor(_NORM_STD, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        x = (x - mean) / std

        wanted = set(taps)
        unknown = wanted - set(TAP_NAMES[self.backbone_id])
        if unknown:
            raise ConfigError(f"unknown layer name(s) {sorted(unknown)}")
        last = max(i for i, nm in self._tap_of_index.items() if nm in wanted)
        got = {}
        for i, op in enumerate(self.features):
            if isinstance(op, nn.Conv2d):
                w = op.weight.to(x.dtype)
                b = op.bias.to(x.dtype)
                x = nn.functional.conv2d(x, w, b, padding=1)
            else:
                x = op(x)
            nm = self._tap_of_index.get(i)
            if nm in wanted:
                got[nm] = x
            if i == last:
                break
        ordered = [n for n in TAP_NAMES[self.backbone_id] if n in wanted]
        return FeatureSet({n: got[n] for n in ordered})


def _prepare_image(image) -> torch.Tensor:
    if isinstance(image, np.ndarray):
        if image.ndim == 3 and image.shape[2] == 3:
            image = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
        else:
            raise ValidationError(f"expected HxWx3 array, got {image.shape}")
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[1] != 3:
        raise ValidationError(f"expected RGB image tensor, got {tuple(image.shape)}")
    if image.shape[2] < 32 or image.shape[3] < 32:
        raise ValidationError("image must be at least 32x32")
    if not image.dtype.is_floating_point:
        image = image.float()
    return image


def extract(image, spec: FeatureTapSpec, extractor: PerceptualExtractor = None,
            taps=None) -> FeatureSet:
    """Tap activations for an image under a FeatureTapSpec.

    An existing extractor can be passed to reuse loaded weights; otherwise
    one is built on the fly (seeded init).
    """
    if extractor is None:
        extractor = PerceptualExtractor(spec.backbone_id)
    elif extractor.backbone_id != spec.backbone_id:
        raise ConfigError("extractor backbone does not match spec")
    return extractor(image, taps if taps is not None else spec.all_layers)
