"""Cross-view photometric consistency scoring.

A stylized image set is multi-view consistent when the same surface point
receives the same color in every view. This module measures that directly:
reference pixels are unprojected with a depth map, reprojected into a second
view, sampled there, and compared. Occluded pixels are dropped with a
forward-backward depth check. Scores are RMSEs over valid pixels, computed
after each image set is normalized to shared reference moments so that a
global color shift applied identically to all views does not change them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import CameraParams, make_sample
from .errors import ValidationError
from .geometry import _projection_matrix

_OCCLUSION_REL_DEPTH = 0.01
_REF_MEAN = 0.5
_REF_STD = 0.2


@dataclass
class PairScore:
    ref_view: int
    src_view: int
    rmse: float          # None when the pair has no valid pixels
    valid_fraction: float
    flagged: bool = False

    def to_dict(self):
        return {"ref_view": self.ref_view, "src_view": self.src_view,
                "rmse": self.rmse, "valid_fraction": self.valid_fraction,
                "flagged": self.flagged}


@dataclass
class ConsistencyReport:
    pair_scores: list = field(default_factory=list)
    mean_rmse: float = None
    median_rmse: float = None
    mean_valid_fraction: float = 0.0

    def to_dict(self):
        return {"pairs": [p.to_dict() for p in self.pair_scores],
                "mean_rmse": self.mean_rmse,
                "median_rmse": self.median_rmse,
                "mean_valid_fraction": self.mean_valid_fraction}


@dataclass
class SetComparison:
    input_report: ConsistencyReport
    stylized_report: ConsistencyReport
    ratio: float
    depth_source: str

    def to_dict(self):
        return {"input": self.input_report.to_dict(),
                "stylized": self.stylized_report.to_dict(),
                "rmse_ratio": self.ratio,
                "depth_source": self.depth_source}


def _normalize_set(images):
    """Map the whole set to shared per-channel reference moments."""
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    mean = stack.mean(axis=(0, 1, 2))
    std = stack.std(axis=(0, 1, 2))
    std = np.maximum(std, 1e-6)
    return [(im - mean) / std * _REF_STD + _REF_MEAN for im in stack]


def _as_depth(depth, h, w):
    d = torch.as_tensor(np.asarray(depth), dtype=torch.float32)
    if d.shape != (h, w):
        d = F.interpolate(d.reshape(1, 1, *d.shape), size=(h, w),
                          mode="bilinear", align_corners=False).reshape(h, w)
    return d


def _pair_rmse(img_i, img_j, cam_i: CameraParams, cam_j: CameraParams,
               depth_i, depth_j):
    """Masked RMSE between view i and view j resampled into view i."""
    h, w = img_i.shape[:2]
    di = _as_depth(depth_i, h, w)
    dj = _as_depth(depth_j, h, w)
    if (di <= 0).any() or (dj <= 0).any():
        raise ValidationError("depths must be positive")
    proj = _projection_matrix(cam_j, 1.0, torch.float64) @ \
        torch.inverse(_projection_matrix(cam_i, 1.0, torch.float64))
    rot, trans = proj[:3, :3].float(), proj[:3, 3].float()
    y, x = torch.meshgrid(torch.arange(h, dtype=torch.float32),
                          torch.arange(w, dtype=torch.float32), indexing="ij")
    xyz = torch.stack([x, y, torch.ones_like(x)])
    p = torch.einsum("rc,chw->rhw", rot, xyz) * di + trans.reshape(3, 1, 1)
    z = p[2]
    zc = z.clamp(min=1e-6)
    px, py = p[0] / zc, p[1] / zc
    gx = 2 * px / (w - 1) - 1
    gy = 2 * py / (h - 1) - 1
    grid = torch.stack([gx, gy], dim=-1).reshape(1, h, w, 2)
    tj = torch.as_tensor(np.asarray(img_j, dtype=np.float32)).permute(2, 0, 1)
    sampled = F.grid_sample(tj.unsqueeze(0), grid, mode="bilinear",
                            padding_mode="zeros", align_corners=True).squeeze(0)
    dj_at = F.grid_sample(dj.reshape(1, 1, h, w), grid, mode="bilinear",
                          padding_mode="zeros", align_corners=True).reshape(h, w)
    in_bounds = (gx.abs() <= 1) & (gy.abs() <= 1) & (z > 1e-6)
    not_occluded = (z - dj_at).abs() <= _OCCLUSION_REL_DEPTH * zc
    valid = in_bounds & not_occluded
    frac = float(valid.float().mean())
    if not valid.any():
        return None, frac
    ti = torch.as_tensor(np.asarray(img_i, dtype=np.float32)).permute(2, 0, 1)
    diff2 = ((ti - sampled) ** 2).mean(dim=0)
    return float(diff2[valid].mean().sqrt()), frac


def default_pairs(num_views: int):
    """Each view against its immediate neighbors, both directions."""
    pairs = []
    for i in range(num_views):
        for j in (i - 1, i + 1):
            if 0 <= j < num_views:
                pairs.append((i, j))
    return pairs


def consistency_score(images, cameras, depths, pairs=None,
                      normalize: bool = True) -> ConsistencyReport:
    """Score cross-view photometric agreement of one image set.

    depths holds one per-view depth map (any resolution; resized to the
    image grid). pairs defaults to immediate neighbors in both directions.
    Pairs without a single valid pixel are flagged and left out of the
    aggregates.
    """
    if not (len(images) == len(cameras) == len(depths)):
        raise ValidationError("images, cameras, depths lengths differ")
    if pairs is None:
        pairs = default_pairs(len(images))
    imgs = _normalize_set(images) if normalize else \
        [np.asarray(im, dtype=np.float64) for im in images]
    scores = []
    for i, j in pairs:
        rmse, frac = _pair_rmse(imgs[i], imgs[j], cameras[i], cameras[j],
                                depths[i], depths[j])
        scores.append(PairScore(i, j, rmse, frac, flagged=rmse is None))
    usable = [p.rmse for p in scores if not p.flagged]
    report = ConsistencyReport(pair_scores=scores)
    if usable:
        report.mean_rmse = float(np.mean(usable))
        report.median_rmse = float(np.median(usable))
    report.mean_valid_fraction = float(np.mean([p.valid_fraction for p in scores])) \
        if scores else 0.0
    return report


def _estimate_depths(images, cameras, backend, window: int):
    from .geometry import BackendSpec, build_backend
    if backend is None:
        backend = build_backend(BackendSpec())
    depths = []
    n = len(images)
    for ref in range(n):
        order = sorted((k for k in range(n) if k != ref),
                       key=lambda k: (abs(k - ref), k))
        src = order[:max(1, window - 1)]
        est = backend.estimate_images(
            [images[ref]] + [images[k] for k in src],
            [cameras[ref]] + [cameras[k] for k in src],
            cameras[ref].depth_hypotheses())
        depths.append(est.stages[0].depth_map.detach())
    return depths


def compare_sets(input_images, stylized_images, cameras,
                 depth_source: str = "from_input", pairs=None,
                 depths=None, backend=None, window: int = 3) -> SetComparison:
    """Score both sets under one shared depth source and report the ratio.

    depth_source picks which set the depths are estimated from
    ("from_input" or "from_stylized"); pass precomputed per-view depths to
    skip estimation.
    """
    if len(input_images) != len(stylized_images):
        raise ValidationError("input and stylized counts differ")
    if len(input_images) != len(cameras):
        raise ValidationError("camera count mismatch")
    if depth_source not in ("from_input", "from_stylized"):
        raise ValidationError(f"unknown depth_source {depth_source!r}")
    if depths is None:
        src = input_images if depth_source == "from_input" else stylized_images
        depths = _estimate_depths(src, cameras, backend, window)
    rep_in = consistency_score(input_images, cameras, depths, pairs)
    rep_st = consistency_score(stylized_images, cameras, depths, pairs)
    if rep_in.mean_rmse is None or rep_st.mean_rmse is None:
        raise ValidationError("no scorable pairs in one of the sets")
    if rep_in.mean_rmse < 1e-12 and rep_st.mean_rmse < 1e-12:
        ratio = 1.0
    else:
        ratio = rep_st.mean_rmse / max(rep_in.mean_rmse, 1e-12)
    return SetComparison(rep_in, rep_st, float(ratio), depth_source)
