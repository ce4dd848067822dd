"""Frozen multi-view-stereo depth backend.

The reference backend sweeps fronto-parallel depth hypotheses, scores them
with group-wise feature correlation, and turns the per-pixel scores into a
probability volume by softmax; depth is the probability-weighted expectation
over hypotheses. Three coarse-to-fine stages halve the hypothesis interval
while narrowing the search around the previous stage's depth.

Matching uses two frozen random-weight feature branches:

* a shallow zero-mean branch at half resolution, which carries almost all of
  the photometric matching signal;
* a deeper feature-pyramid branch evaluated at each stage's resolution,
  which contributes context at a small weight.

Shallow correlations are computed at half resolution for every stage and
pooled (scores and in-bounds weights together) down to the stage grid, so
coarse stages aggregate rather than skip high-frequency evidence.

Everything is differentiable with respect to the images; weights are frozen
at construction. External estimators plug in through `build_backend` with a
``external:<module>`` spec kind.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import CameraParams, MultiViewSample
from .errors import ConfigError, LoadError, ValidationError

_CORR_GROUPS_DEFAULT = 8
_CORR_CHANNELS = 32
_CONTEXT_WEIGHT = 0.25     # deep-branch correlation weight vs shallow branch
_SOFTMAX_TEMPERATURE = 20.0
_COST_SMOOTH_RADIUS = 1

_BINOM = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_BLUR_5X5 = (_BINOM.reshape(-1, 1) @ _BINOM.reshape(1, -1)).reshape(1, 1, 5, 5)


def binomial_downsample(x: torch.Tensor) -> torch.Tensor:
    """5x5 binomial blur + stride-2 decimation of a (B,C,H,W) tensor.

    Output pixel j sits at input pixel 2j, which matches how intrinsics
    scale under diag(s,s,1); plain average pooling would drift half a pixel
    per level.
    """
    C = x.shape[1]
    k = _BLUR_5X5.expand(C, 1, 5, 5).to(dtype=x.dtype, device=x.device)
    return F.conv2d(F.pad(x, (2, 2, 2, 2), mode="replicate"), k, stride=2, groups=C)


class _SharpBranch(nn.Module):
    """Two zero-mean random convs at half resolution.

    Zero-mean kernels respond to texture, not brightness, which is what
    gives the correlation its localization contrast.
    """

    def __init__(self, out_channels, generator):
        super().__init__()
        self.c1 = nn.Conv2d(3, out_channels, 3, padding=1)
        self.c2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        with torch.no_grad():
            for c in (self.c1, self.c2):
                w = torch.randn(c.weight.shape, generator=generator)
                w = w * (2.0 / c.weight[0].numel()) ** 0.5
                w = w - w.mean(dim=(1, 2, 3), keepdim=True)
                c.weight.copy_(w)
                c.bias.zero_()

    def forward(self, x):
        return self.c2(F.relu(self.c1(binomial_downsample(x))))


class _ContextPyramid(nn.Module):
    """Strided conv pyramid with a top-down pathway; outputs at 1/2, 1/4, 1/8."""

    def __init__(self, base, out_channels):
        super().__init__()

        def c(i, o, k=3, s=1):
            return nn.Conv2d(i, o, k, stride=s, padding=k // 2)

        b, f = base, out_channels
        self.stem = nn.Sequential(c(3, b), nn.ReLU(), c(b, b), nn.ReLU())
        self.l1 = nn.Sequential(c(b, 2 * b, s=2), nn.ReLU(),
                                c(2 * b, 2 * b), nn.ReLU(),
                                c(2 * b, 2 * b), nn.ReLU())
        self.l2 = nn.Sequential(c(2 * b, 4 * b, s=2), nn.ReLU(),
                                c(4 * b, 4 * b), nn.ReLU(),
                                c(4 * b, 4 * b), nn.ReLU())
        self.l3 = nn.Sequential(c(4 * b, 8 * b, s=2), nn.ReLU(),
                                c(8 * b, 8 * b), nn.ReLU(),
                                c(8 * b, 8 * b), nn.ReLU())
        self.out2 = c(8 * b, f, 1)
        self.inner1 = c(4 * b, 8 * b, 1)
        self.out1 = c(8 * b, f)
        self.inner0 = c(2 * b, 8 * b, 1)
        self.out0 = c(8 * b, f)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, x):
        s = self.stem(x)
        f1 = self.l1(s)
        f2 = self.l2(f1)
        f3 = self.l3(f2)
        o2 = self.out2(f3)
        up = F.interpolate(f3, scale_factor=2, mode="nearest") + self.inner1(f2)
        o1 = self.out1(up)
        up = F.interpolate(up, scale_factor=2, mode="nearest") + self.inner0(f1)
        o0 = self.out0(up)
        return [o0, o1, o2]


@dataclass
class BackendSpec:
    """Configuration for a depth backend.

    kind is either "plane_sweep_ref" or "external:<module path>"; the module
    named by the latter must expose build_backend(spec) or estimate(sample).
    stage_hypotheses[l] is the refined hypothesis count at stage l; None at
    the coarsest stage means "use the sample's own hypothesis list".
    """

    kind: str = "plane_sweep_ref"
    num_stages: int = 3
    stage_hypotheses: tuple = (9, 9, None)
    groupwise_groups: int = _CORR_GROUPS_DEFAULT
    feature_base: int = 21
    init_seed: int = 3407
    weights_path: str = None

    def __post_init__(self):
        if self.num_stages < 1:
            raise ConfigError("num_stages must be >= 1")
        if len(self.stage_hypotheses) != self.num_stages:
            raise ConfigError("stage_hypotheses must list one entry per stage")
        if _CORR_CHANNELS % self.groupwise_groups:
            raise ConfigError(
                f"groupwise_groups must divide {_CORR_CHANNELS}, "
                f"got {self.groupwise_groups}")
        if not (self.kind == "plane_sweep_ref" or self.kind.startswith("external:")):
            raise ConfigError(f"unknown backend kind {self.kind!r}")


@dataclass
class StageEstimate:
    """One pyramid level of a depth estimate."""

    depth_map: torch.Tensor                 # (H_l, W_l)
    probability_volume: torch.Tensor        # (D_l, H_l, W_l) or None
    hypotheses: torch.Tensor                # (D_l, H_l, W_l) or None
    valid_mask: torch.Tensor                # (H_l, W_l) bool
    interval: float

    def detach(self):
        return StageEstimate(
            self.depth_map.detach(),
            None if self.probability_volume is None else self.probability_volume.detach(),
            None if self.hypotheses is None else self.hypotheses.detach(),
            self.valid_mask,
            self.interval,
        )


@dataclass
class DepthEstimate:
    """Per-stage depths and probability volumes, stages[0] finest."""

    stages: list = field(default_factory=list)

    def detach(self):
        return DepthEstimate([s.detach() for s in self.stages])

    @property
    def depth_map(self):
        return self.stages[0].depth_map


def _projection_matrix(cam: CameraParams, scale: float,
                       dtype=torch.float32) -> torch.Tensor:
    K = np.diag([scale, scale, 1.0]) @ cam.intrinsics
    P = np.eye(4)
    P[:3, :3] = K @ cam.rotation
    P[:3, 3] = K @ cam.translation
    return torch.tensor(P, dtype=dtype)


def _warp(src_fea: torch.Tensor, src_proj: torch.Tensor, ref_proj: torch.Tensor,
          depth_values: torch.Tensor):
    """Sample src_fea (C,Hs,Ws) at the reprojection of each reference pixel.

    depth_values is (D,h,w) in the reference frame; the reference grid is
    h x w. Returns (C,D,h,w) samples and a (D,h,w) in-bounds mask.
    """
    C, Hs, Ws = src_fea.shape
    D, h, w = depth_values.shape
    proj = src_proj @ torch.inverse(ref_proj)
    rot, trans = proj[:3, :3], proj[:3, 3:4]
    y, x = torch.meshgrid(
        torch.arange(h, dtype=src_proj.dtype),
        torch.arange(w, dtype=src_proj.dtype), indexing="ij")
    xyz = torch.stack([x.reshape(-1), y.reshape(-1), torch.ones(h * w, dtype=src_proj.dtype)])
    rx = rot @ xyz
    pz = rx.unsqueeze(1) * depth_values.reshape(1, D, h * w) + trans.reshape(3, 1, 1)
    z = pz[2].clamp(min=1e-6)
    px, py = pz[0] / z, pz[1] / z
    gx = 2 * px / (Ws - 1) - 1
    gy = 2 * py / (Hs - 1) - 1
    grid = torch.stack([gx, gy], -1).reshape(1, D * h, w, 2)
    sampled = F.grid_sample(src_fea.unsqueeze(0), grid.to(src_fea.dtype),
                            mode="bilinear", padding_mode="zeros",
                            align_corners=True)
    mask = ((gx.abs() <= 1) & (gy.abs() <= 1) & (pz[2] > 1e-6))
    return sampled.reshape(C, D, h, w), mask.reshape(D, h, w).to(src_fea.dtype)


def homography_warp(source, src_cam: CameraParams, ref_cam: CameraParams, depth):
    """Warp a source image or feature map onto the reference view at `depth`.

    source: HxWx3 / HxW numpy array or (C,H,W) tensor. depth: positive scalar
    or (H,W) array of reference-view depths. Returns (warped, mask) with the
    same container type and reference-sized spatial dims.
    """
    for cam in (src_cam, ref_cam):
        if abs(np.linalg.det(cam.intrinsics)) < 1e-12:
            raise ValidationError("singular intrinsics")
    is_numpy = isinstance(source, np.ndarray)
    if is_numpy:
        arr = np.asarray(source, dtype=np.float32)
        fea = torch.from_numpy(arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1))
    else:
        fea = source if source.dim() == 3 else source.unsqueeze(0)
    h, w = fea.shape[-2:]
    dv = torch.as_tensor(depth, dtype=torch.float32)
    if (dv <= 0).any():
        raise ValidationError("depth must be positive")
    if dv.dim() == 0:
        dv = dv.expand(h, w)
    dv = dv.reshape(1, *dv.shape)
    warped, mask = _warp(fea, _projection_matrix(src_cam, 1.0),
                         _projection_matrix(ref_cam, 1.0), dv)
    warped = warped.reshape(fea.shape[0], h, w)
    mask = mask.reshape(h, w)
    if is_numpy:
        out = warped.numpy()
        out = out[0] if np.asarray(source).ndim == 2 else out.transpose(1, 2, 0)
        return out, mask.numpy()
    return warped, mask


def _group_correlation(ref: torch.Tensor, sam: torch.Tensor, groups: int):
    """Mean over groups of per-group normalized dot products.

    ref (C,h,w), sam (C,D,h,w) -> (D,h,w).
    """
    C, h, w = ref.shape
    D = sam.shape[1]
    cg = C // groups
    rg = ref.reshape(groups, cg, 1, h, w)
    rg = rg / (rg.norm(dim=1, keepdim=True) + 1e-6)
    sg = sam.reshape(groups, cg, D, h, w)
    sg = sg / (sg.norm(dim=1, keepdim=True) + 1e-6)
    return (rg * sg).sum(1).mean(0)


def _smooth_cost(vol: torch.Tensor, radius: int, sigma: float = 1.0):
    if radius == 0:
        return vol
    D, h, w = vol.shape
    x = torch.arange(-radius, radius + 1, dtype=vol.dtype)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    k = (k / k.sum()).reshape(1, 1, 1, -1)
    v = vol.reshape(D, 1, h, w)
    v = F.conv2d(F.pad(v, (radius, radius, 0, 0), mode="replicate"), k)
    v = F.conv2d(F.pad(v, (0, 0, radius, radius), mode="replicate"),
                 k.reshape(1, 1, -1, 1))
    return v.reshape(D, h, w)


class PlaneSweepBackend(nn.Module):
    """Differentiable plane-sweep depth estimator with frozen random weights."""

    estimate_calls = 0      # process-wide, for contracts that forbid invocation

    def __init__(self, spec: BackendSpec = None):
        super().__init__()
        spec = spec if spec is not None else BackendSpec()
        if spec.kind != "plane_sweep_ref":
            raise ConfigError("PlaneSweepBackend requires kind plane_sweep_ref")
        if spec.num_stages != 3:
            raise ConfigError("the reference backend is fixed at 3 stages")
        if spec.stage_hypotheses[-1] is not None:
            raise ConfigError("coarsest stage must take hypotheses from the sample")
        self.spec = spec
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(spec.init_seed)
            self.context = _ContextPyramid(spec.feature_base, _CORR_CHANNELS)
            gen = torch.Generator().manual_seed(spec.init_seed)
            self.sharp = _SharpBranch(_CORR_CHANNELS, gen)
        if spec.weights_path is not None:
            self._load_weights(spec.weights_path)
        self.requires_grad_(False)
        self.eval()

    def _load_weights(self, path):
        from pathlib import Path
        if not Path(path).exists():
            raise LoadError(f"backend weights not found: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        try:
            self.load_state_dict(state)
        except RuntimeError as exc:
            raise LoadError(f"incompatible backend weights: {exc}") from exc

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @property
    def downsample_factor(self) -> int:
        # finest feature grid is 1/2 res, coarsest stage 1/8; the extra two
        # levels keep every stage's dims even
        return 2 ** (self.spec.num_stages + 2)

    def _features(self, image: torch.Tensor):
        x = image.unsqueeze(0) if image.dim() == 3 else image
        if x.shape[1] != 3:
            raise ValidationError("backend expects 3-channel images")
        sharp = self.sharp(x).squeeze(0)
        ctx = [o.squeeze(0) for o in self.context(x)]
        return sharp, ctx

    def _stage(self, sharp, ctx, projs_half, projs_stage, hyps, level):
        """Score hypotheses for one stage.

        Shallow correlations are computed on the half-res grid against
        hypotheses upsampled to it, then score and in-bounds weight are
        jointly binomial-pooled `level` times down to the stage grid.
        """
        groups = self.spec.groupwise_groups
        D, hl, wl = hyps.shape
        h0, w0 = sharp[0].shape[1:]
        dv0 = F.interpolate(hyps.reshape(1, D, hl, wl), size=(h0, w0),
                            mode="bilinear", align_corners=False).reshape(D, h0, w0)
        csum = sharp[0].new_zeros(D, h0, w0)
        wsum = sharp[0].new_zeros(D, h0, w0)
        for i in range(1, len(sharp)):
            sam, mask = _warp(sharp[i], projs_half[i], projs_half[0], dv0)
            csum = csum + _group_correlation(sharp[0], sam, groups) * mask
            wsum = wsum + mask
        v = torch.stack([csum, wsum])
        for _ in range(level):
            flat = v.reshape(2 * D, 1, *v.shape[-2:])
            v = binomial_downsample(flat).reshape(2, D, *[s // 2 for s in v.shape[-2:]])
        cost = v[0] / (v[1] + 1e-6)
        pooled_w = v[1]
        if _CONTEXT_WEIGHT > 0:
            c2 = hyps.new_zeros(D, hl, wl)
            w2 = hyps.new_zeros(D, hl, wl)
            for i in range(1, len(ctx)):
                sam, mask = _warp(ctx[i], projs_stage[i], projs_stage[0], hyps)
                c2 = c2 + _group_correlation(ctx[0], sam, groups) * mask
                w2 = w2 + mask
            cost = (cost + _CONTEXT_WEIGHT * c2 / (w2 + 1e-6)) / (1 + _CONTEXT_WEIGHT)
        cost = _smooth_cost(cost, _COST_SMOOTH_RADIUS)
        prob = torch.softmax(_SOFTMAX_TEMPERATURE * cost, dim=0)
        depth = (prob * hyps).sum(0)
        valid = (pooled_w > 0.5).all(0)
        return depth, prob, valid

    def estimate_images(self, images, cameras, hypotheses) -> DepthEstimate:
        """images: list of HxWx3 arrays or (3,H,W) tensors, reference first."""
        PlaneSweepBackend.estimate_calls += 1
        if len(images) < 2:
            raise ValidationError("need at least 2 views")
        tensors = []
        for im in images:
            t = torch.as_tensor(np.asarray(im).transpose(2, 0, 1)) \
                if isinstance(im, np.ndarray) else im
            tensors.append(t.squeeze(0) if t.dim() == 4 else t)
        H, W = tensors[0].shape[-2:]
        factor = self.downsample_factor
        if H % factor or W % factor:
            raise ValidationError(
                f"image dims must be divisible by {factor}, got {H}x{W}")
        hyp = torch.as_tensor(np.asarray(hypotheses), dtype=torch.float32)
        if hyp.numel() < 1 or (hyp <= 0).any() or not torch.isfinite(hyp).all():
            raise ValidationError("hypotheses must be finite and in (0, inf)")

        feats = [self._features(t) for t in tensors]
        sharp = [f[0] for f in feats]
        ctxs = [f[1] for f in feats]
        projs_half = [_projection_matrix(c, 0.5) for c in cameras]

        n_stage = self.spec.num_stages
        results = {}
        level = n_stage - 1
        scale = 0.5 ** n_stage
        hl, wl = int(H * scale), int(W * scale)
        interval = float(hyp[1] - hyp[0]) if hyp.numel() > 1 else float(hyp[0])
        dv = hyp.reshape(-1, 1, 1).expand(-1, hl, wl).contiguous()
        projs = [_projection_matrix(c, scale) for c in cameras]
        d, p, v = self._stage(sharp, [c[level] for c in ctxs],
                              projs_half, projs, dv, level)
        results[level] = StageEstimate(d, p, dv, v, interval)
        prev, prev_int = d, interval
        for level in range(n_stage - 2, -1, -1):
            scale = 0.5 ** (level + 1)
            hl, wl = int(H * scale), int(W * scale)
            intv = prev_int / 2
            n = self.spec.stage_hypotheses[level]
            center = F.interpolate(prev.reshape(1, 1, *prev.shape), size=(hl, wl),
                                   mode="bilinear", align_corners=False).reshape(hl, wl)
            offs = (torch.arange(n, dtype=center.dtype) - (n - 1) / 2) * intv
            dv = (center.unsqueeze(0) + offs.reshape(-1, 1, 1)).clamp(min=1e-3)
            projs = [_projection_matrix(c, scale) for c in cameras]
            d, p, v = self._stage(sharp, [c[level] for c in ctxs],
                                  projs_half, projs, dv, level)
            results[level] = StageEstimate(d, p, dv, v, intv)
            prev, prev_int = d, intv
        return DepthEstimate([results[l] for l in range(n_stage)])

    def estimate(self, sample: MultiViewSample) -> DepthEstimate:
        return self.estimate_images(sample.images, sample.cameras,
                                    sample.depth_hypotheses)


class _ExternalBackend:
    """Adapter around a user module exposing build_backend(spec) or estimate()."""

    def __init__(self, spec: BackendSpec):
        module_path = spec.kind.split(":", 1)[1]
        try:
            mod = importlib.import_module(module_path)
        except ImportError as exc:
            raise LoadError(f"cannot import backend module {module_path!r}: {exc}") from exc
        if hasattr(mod, "build_backend"):
            self._impl = mod.build_backend(spec)
            self._fn = self._impl.estimate
        elif hasattr(mod, "estimate"):
            self._impl = mod
            self._fn = mod.estimate
        else:
            raise LoadError(
                f"backend module {module_path!r} exposes neither "
                "build_backend(spec) nor estimate(sample)")
        self.spec = spec

    def parameter_count(self):
        counter = getattr(self._impl, "parameter_count", None)
        return counter() if callable(counter) else 0

    def estimate(self, sample) -> DepthEstimate:
        return _coerce_estimate(self._fn(sample))

    def estimate_images(self, images, cameras, hypotheses) -> DepthEstimate:
        fn = getattr(self._impl, "estimate_images", None)
        if fn is not None:
            return _coerce_estimate(fn(images, cameras, hypotheses))
        sample = MultiViewSample(
            ref_index=0, source_indices=list(range(1, len(images))),
            ref_image=images[0], source_images=list(images[1:]),
            ref_camera=cameras[0], source_cameras=list(cameras[1:]),
            depth_hypotheses=np.asarray(hypotheses, dtype=np.float64))
        return self.estimate(sample)


def _coerce_estimate(result) -> DepthEstimate:
    """Normalize adapter output; stages may omit probability volumes."""
    if isinstance(result, DepthEstimate):
        return result
    stages = []
    for entry in result:
        if isinstance(entry, StageEstimate):
            stages.append(entry)
            continue
        if isinstance(entry, dict):
            depth = entry["depth_map"]
            vol = entry.get("probability_volume")
            hyp = entry.get("hypotheses")
            valid = entry.get("valid_mask")
            intv = entry.get("interval", 1.0)
        else:
            depth, vol = entry[0], entry[1] if len(entry) > 1 else None
            hyp, valid, intv = None, None, 1.0
        depth = torch.as_tensor(depth)
        vol = None if vol is None else torch.as_tensor(vol)
        if valid is None:
            valid = torch.ones(depth.shape, dtype=torch.bool)
        stages.append(StageEstimate(depth, vol,
                                    None if hyp is None else torch.as_tensor(hyp),
                                    torch.as_tensor(valid), float(intv)))
    return DepthEstimate(stages)


def build_backend(spec: BackendSpec = None):
    """Instantiate the backend named by spec.kind."""
    spec = spec if spec is not None else BackendSpec()
    if spec.kind == "plane_sweep_ref":
        return PlaneSweepBackend(spec)
    if spec.kind.startswith("external:"):
        return _ExternalBackend(spec)
    raise ConfigError(f"unknown backend kind {spec.kind!r}")


def estimate(sample: MultiViewSample, spec: BackendSpec = None) -> DepthEstimate:
    """One-shot depth estimation; builds (and caches) the backend for spec."""
    spec = spec if spec is not None else BackendSpec()
    key = (spec.kind, spec.num_stages, spec.stage_hypotheses,
           spec.groupwise_groups, spec.feature_base, spec.init_seed,
           spec.weights_path)
    backend = _BACKEND_CACHE.get(key)
    if backend is None:
        backend = build_backend(spec)
        _BACKEND_CACHE[key] = backend
    return backend.estimate(sample)


_BACKEND_CACHE = {}
