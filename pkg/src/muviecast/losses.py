"""Differentiable objectives: perceptual, edge-map, and depth-consistency.

All functions are pure and dtype/device-following: kernels are built on the
fly to match their inputs, so the same code runs the float64 finite
difference checks and float32 training. Images are channel-first torch
tensors in [0, 1], features are (C, H, W) or (B, C, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, ValidationError


@dataclass
class LossWeights:
    """Scalar multipliers for every objective term.

    The three edge operators have their own inner weights; `style_loss_kind`
    selects between the channel co-occurrence and the channel-statistics
    style terms. `tv` and `nnfm` are optional extras, off by default.
    """
    content: float = 1.0
    style: float = 1.0
    imgeom: float = 1.0
    volume: float = 1.0
    depth: float = 1.0
    grad_weight: float = 1.0       # inner weight of the Sobel term
    laplace_weight: float = 1.0
    canny_weight: float = 1.0
    style_loss_kind: str = "gram"
    tv: float = 0.0
    nnfm: float = 0.0

    def __post_init__(self):
        for name in ("content", "style", "imgeom", "volume", "depth",
                     "grad_weight", "laplace_weight", "canny_weight",
                     "tv", "nnfm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if self.style_loss_kind not in ("gram", "in_stats"):
            raise ConfigError(f"unknown style_loss_kind {self.style_loss_kind!r}")


def smooth_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean Huber difference, quadratic inside |x| < 1, linear outside."""
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.numel() == 0:
        raise ValidationError("smooth_l1 on empty arrays")
    return F.smooth_l1_loss(a, b, beta=1.0, reduction="mean")


def _get_layer(features, name):
    try:
        return features[name]
    except (KeyError, TypeError) as e:
        raise ValidationError(f"layer {name!r} missing from feature set") from e


def content_loss(target_features, reference_features, content_layers) -> torch.Tensor:
    """Mean squared feature difference, summed over the given layers."""
    total = None
    for name in content_layers:
        ft = _get_layer(target_features, name)
        fr = _get_layer(reference_features, name)
        if ft.shape != fr.shape:
            raise ValidationError(f"layer {name!r} shape mismatch")
        term = ((ft - fr) ** 2).mean()
        total = term if total is None else total + term
    if total is None:
        raise ValidationError("no content layers given")
    return total


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """Channel co-occurrence matrix of a (C, H, W) map, scaled by 1/(C*H*W)."""
    if feat.dim() == 4:
        if feat.shape[0] != 1:
            raise ValidationError("gram_matrix expects a single feature map")
        feat = feat[0]
    c, h, w = feat.shape
    flat = feat.reshape(c, h * w)
    return flat @ flat.T / (c * h * w)


def gram_style_loss(target_features, style_features, style_layers) -> torch.Tensor:
    total = None
    for name in style_layers:
        gt = gram_matrix(_get_layer(target_features, name))
        gs = gram_matrix(_get_layer(style_features, name))
        if gt.shape != gs.shape:
            raise ValidationError(f"layer {name!r} channel count mismatch")
        term = ((gt - gs) ** 2).mean()        # mean over C*C entries
        total = term if total is None else total + term
    if total is None:
        raise ValidationError("no style layers given")
    return total


def _channel_stats(feat: torch.Tensor, eps: float = 1e-8):
    """Per-channel spatial mean and population std of a (C, H, W) map."""
    if feat.dim() == 4:
        if feat.shape[0] != 1:
            raise ValidationError("expected a single feature map")
        feat = feat[0]
    c = feat.shape[0]
    flat = feat.reshape(c, -1)
    mu = flat.mean(dim=1)
    var = flat.var(dim=1, unbiased=False)
    return mu, torch.sqrt(var + eps)


def in_stats_style_loss(target_features, style_features, style_layers) -> torch.Tensor:
    """Squared distance between per-channel feature means and stds,
    summed over channels and layers."""
    total = None
    for name in style_layers:
        mt, st = _channel_stats(_get_layer(target_features, name))
        ms, ss = _channel_stats(_get_layer(style_features, name))
        if mt.shape != ms.shape:
            raise ValidationError(f"layer {name!r} channel count mismatch")
        term = ((mt - ms) ** 2).sum() + ((st - ss) ** 2).sum()
        total = term if total is None else total + term
    if total is None:
        raise ValidationError("no style layers given")
    return total


# ---------------------------------------------------------------------------
# edge operators

_LUMA = (0.299, 0.587, 0.114)


def _as_gray_batch(image: torch.Tensor) -> torch.Tensor:
    """(C,H,W) or (B,C,H,W) with C in {1,3} -> (B,1,H,W) luminance."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4:
        raise ValidationError(f"expected image tensor, got shape {tuple(image.shape)}")
    b, c, h, w = image.shape
    if c == 3:
        wvec = torch.tensor(_LUMA, dtype=image.dtype, device=image.device)
        return (image * wvec.view(1, 3, 1, 1)).sum(dim=1, keepdim=True)
    if c == 1:
        return image
    raise ValidationError(f"expected 1 or 3 channels, got {c}")


def _conv_reflect(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    pad = kernel.shape[-1] // 2
    return F.conv2d(F.pad(x, (pad,) * 4, mode="reflect"),
                    kernel.to(dtype=x.dtype, device=x.device))


_SOBEL_X = torch.tensor([[-1., 0., 1.], [-2., 0., 2.], [-1., 0., 1.]]).view(1, 1, 3, 3)
_SOBEL_Y = _SOBEL_X.transpose(-1, -2).contiguous()
_LAPLACE = torch.tensor([[0., 1., 0.], [1., -4., 1.], [0., 1., 0.]]).view(1, 1, 3, 3)


def sobel_map(image: torch.Tensor) -> torch.Tensor:
    """Gradient magnitude of the luminance, (B,1,H,W)."""
    g = _as_gray_batch(image)
    gx = _conv_reflect(g, _SOBEL_X)
    gy = _conv_reflect(g, _SOBEL_Y)
    return torch.sqrt(gx * gx + gy * gy + 1e-12)


def laplace_map(image: torch.Tensor) -> torch.Tensor:
    return _conv_reflect(_as_gray_batch(image), _LAPLACE)


def _gaussian_kernel2d(sigma: float, radius: int) -> torch.Tensor:
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k1 = torch.exp(-0.5 * (x / sigma) ** 2)
    k1 = k1 / k1.sum()
    return (k1.view(-1, 1) @ k1.view(1, -1)).view(1, 1, 2 * radius + 1, -1)


_CANNY_BLUR = _gaussian_kernel2d(1.0, 2)
_CANNY_SLOPE = 50.0


def canny_map(image: torch.Tensor) -> torch.Tensor:
    """Smooth relaxation of the Canny edge pipeline.

    Blur, Sobel gradients, then non-maximum suppression done softly: the
    magnitude at each pixel is compared via steep sigmoids against bilinear
    samples one pixel along +/- the gradient direction, and a soft double
    threshold at 0.1/0.2 of the max magnitude gates the result. Every stage
    is differentiable.
    """
    g = _conv_reflect(_as_gray_batch(image), _CANNY_BLUR)
    gx = _conv_reflect(g, _SOBEL_X)
    gy = _conv_reflect(g, _SOBEL_Y)
    mag = torch.sqrt(gx * gx + gy * gy + 1e-12)

    b, _, h, w = mag.shape
    dtype, device = mag.dtype, mag.device
    ux = gx / mag
    uy = gy / mag
    ys, xs = torch.meshgrid(torch.arange(h, dtype=dtype, device=device),
                            torch.arange(w, dtype=dtype, device=device),
                            indexing="ij")
    # normalized sample grids one pixel along the gradient, clamped at borders
    def sample_at(px, py):
        gxn = 2 * px / max(w - 1, 1) - 1
        gyn = 2 * py / max(h - 1, 1) - 1
        grid = torch.stack([gxn, gyn], dim=-1).view(b, h, w, 2)
        return F.grid_sample(mag, grid, mode="bilinear",
                             padding_mode="border", align_corners=True)

    ahead = sample_at(xs + ux[:, 0], ys + uy[:, 0])
    behind = sample_at(xs - ux[:, 0], ys - uy[:, 0])
    keep = torch.sigmoid(_CANNY_SLOPE * (mag - ahead)) \
        * torch.sigmoid(_CANNY_SLOPE * (mag - behind))
    nms = mag * keep

    peak = mag.reshape(b, -1).max(dim=1).values.view(b, 1, 1, 1)
    low = 0.1 * peak
    high = 0.2 * peak
    gate = 0.5 * (torch.sigmoid(_CANNY_SLOPE * (nms - low))
                  + torch.sigmoid(_CANNY_SLOPE * (nms - high)))
    return nms * gate


def _edge_loss(op, reference: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if reference.shape != target.shape:
        raise ValidationError("edge loss needs matching image shapes")
    return smooth_l1(op(reference), op(target))


def sobel_loss(reference, target):
    return _edge_loss(sobel_map, reference, target)


def laplace_loss(reference, target):
    return _edge_loss(laplace_map, reference, target)


def canny_loss(reference, target):
    return _edge_loss(canny_map, reference, target)


def image_geometry_loss(reference, target, grad_weight=1.0, laplace_weight=1.0,
                        canny_weight=1.0) -> torch.Tensor:
    """Weighted sum of the three edge-preservation terms.

    Terms with zero weight are skipped entirely, which matters for speed:
    the soft Canny is by far the most expensive operator here.
    """
    if min(grad_weight, laplace_weight, canny_weight) < 0:
        raise ConfigError("edge loss weights must be >= 0")
    total = reference.new_zeros(())
    if grad_weight > 0:
        total = total + grad_weight * sobel_loss(reference, target)
    if laplace_weight > 0:
        total = total + laplace_weight * laplace_loss(reference, target)
    if canny_weight > 0:
        total = total + canny_weight * canny_loss(reference, target)
    return total


# ---------------------------------------------------------------------------
# depth-consistency terms

def stage_weight(level: int) -> float:
    """Coarse-to-fine weighting: level 0 is finest and weighs the most."""
    return 2.0 ** (3 - level)


def _stages(estimate):
    return getattr(estimate, "stages", estimate)


def volume_loss(reference_estimate, target_estimate) -> torch.Tensor:
    """Stage-weighted Huber distance between probability volumes.

    The reference branch is detached: it serves as a fixed target. Stages
    without a probability volume (external adapters may omit them) are
    skipped.
    """
    ref_stages, tgt_stages = _stages(reference_estimate), _stages(target_estimate)
    if len(ref_stages) != len(tgt_stages):
        raise ValidationError("stage count mismatch between estimates")
    total = None
    for level, (rs, ts) in enumerate(zip(ref_stages, tgt_stages)):
        rv, tv = rs.probability_volume, ts.probability_volume
        if rv is None or tv is None:
            continue
        term = stage_weight(level) * smooth_l1(tv, rv.detach())
        total = term if total is None else total + term
    if total is None:
        total = tgt_stages[0].depth_map.new_zeros(())
    return total


def depth_loss(reference_estimate, target_estimate) -> torch.Tensor:
    """Stage-weighted Huber distance between depth maps (reference detached)."""
    ref_stages, tgt_stages = _stages(reference_estimate), _stages(target_estimate)
    if len(ref_stages) != len(tgt_stages):
        raise ValidationError("stage count mismatch between estimates")
    total = None
    for level, (rs, ts) in enumerate(zip(ref_stages, tgt_stages)):
        term = stage_weight(level) * smooth_l1(ts.depth_map, rs.depth_map.detach())
        total = term if total is None else total + term
    return total


def tv_loss(image: torch.Tensor) -> torch.Tensor:
    """Mean squared forward difference over both axes combined."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    dx = image[..., :, 1:] - image[..., :, :-1]
    dy = image[..., 1:, :] - image[..., :-1, :]
    n = dx.numel() + dy.numel()
    if n == 0:
        return image.new_zeros(())
    return ((dx * dx).sum() + (dy * dy).sum()) / n


def nnfm_loss(target_layer: torch.Tensor, style_layer: torch.Tensor) -> torch.Tensor:
    """Mean over target positions of the nearest-neighbor cosine distance
    to the style feature vectors."""
    if target_layer.dim() == 4:
        target_layer = target_layer[0]
    if style_layer.dim() == 4:
        style_layer = style_layer[0]
    c = target_layer.shape[0]
    if style_layer.shape[0] != c:
        raise ValidationError("channel count mismatch")
    t = target_layer.reshape(c, -1)
    s = style_layer.reshape(c, -1)
    if s.shape[1] == 0:
        raise ValidationError("empty style feature map")
    tn = t / (t.norm(dim=0, keepdim=True) + 1e-12)
    sn = s / (s.norm(dim=0, keepdim=True) + 1e-12)
    cos = tn.T @ sn                        # targets x style positions
    return (1.0 - cos.max(dim=1).values).mean()


_COMPONENT_WEIGHTS = {
    "content": "content", "style": "style", "imgeom": "imgeom",
    "volume": "volume", "depth": "depth", "tv": "tv", "nnfm": "nnfm",
}


def total_loss(components: dict, weights: LossWeights) -> torch.Tensor:
    """Weighted combination of named loss components.

    NaN components abort with the offending name: a silent NaN here would
    poison the whole optimization without a trace.
    """
    total = None
    for name, value in components.items():
        if name not in _COMPONENT_WEIGHTS:
            raise ConfigError(f"unknown loss component {name!r}")
        v = value if torch.is_tensor(value) else torch.as_tensor(float(value))
        if torch.isnan(v).any():
            raise ValidationError(f"loss component {name!r} is NaN")
        term = getattr(weights, _COMPONENT_WEIGHTS[name]) * v
        total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return total
