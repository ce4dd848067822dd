"""Optimization loop: stylize views, score them, update the TransferNet.

Only the TransferNet learns. The feature extractor and the depth backend
are frozen; their state checksums are recorded before and after every run
so the contract is checkable. One training step consumes one multi-view
sample (a reference view plus its window-1 nearest sources); the reference
cycles through all views each epoch.

Per-reference quantities that do not depend on the current TransferNet
state (input-branch features and depth estimates, style features) are
computed once and cached across epochs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checksums import state_checksum
from .color import apply_color_map, fit_color_map
from .config import ARCH_PRESETS, resolve_weights_path
from .dataset import (IMAGE_EXTENSIONS, Scene, make_sample, read_image,
                      scale_sample, write_image)
from .errors import ConfigError, ValidationError
from .geometry import BackendSpec, build_backend
from .losses import (LossWeights, content_loss, depth_loss, gram_style_loss,
                     image_geometry_loss, in_stats_style_loss, nnfm_loss,
                     total_loss, tv_loss, volume_loss)
from .perceptual import FeatureTapSpec, PerceptualExtractor
from .transfer import TransferConfig, TransferNet, save_checkpoint

TRACE_COMPONENTS = ("content", "style", "imgeom", "volume", "depth",
                    "tv", "nnfm", "total")
ABLATION_LOSS_NAMES = ("content", "style", "imgeom", "geometry3d")


@dataclass
class TrainConfig:
    arch: str = "casmvsnet_unet"
    epochs: int = 10
    window: int = 3
    batch_size: int = 1
    seed: int = 0
    device: str = "cpu"
    optimizer: str = "adam"
    learning_rate: float = None         # None -> the arch preset's rate
    resolution_scale: float = 1.0       # lower to cut memory use
    weights: LossWeights = None         # None -> defaults with preset style kind
    geometry_backend: str = "plane_sweep_ref"
    geometry_weights_path: str = None
    perceptual_weights_path: str = None
    init_weights_path: str = None       # warm-start TransferNet checkpoint
    pair_ranking: dict = None

    def __post_init__(self):
        if self.arch not in ARCH_PRESETS:
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.device != "cpu":
            raise ConfigError(
                "this build runs on cpu only; lower resolution_scale "
                "instead if memory is tight")
        if self.weights is None:
            self.weights = LossWeights(
                style_loss_kind=ARCH_PRESETS[self.arch]["style_loss"])

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return ARCH_PRESETS[self.arch]["learning_rate"]

    @classmethod
    def from_mapping(cls, cfg: dict) -> "TrainConfig":
        """Build from a resolved configuration mapping (config.load_config)."""
        loss = cfg["loss"]
        weights = LossWeights(
            content=loss["content"], style=loss["style"], imgeom=loss["imgeom"],
            volume=loss["volume"], depth=loss["depth"],
            grad_weight=loss["grad"], laplace_weight=loss["laplace"],
            canny_weight=loss["canny"], tv=loss["tv"], nnfm=loss["nnfm"],
            style_loss_kind=ARCH_PRESETS[cfg["arch"]]["style_loss"])
        return cls(
            arch=cfg["arch"], epochs=cfg["epochs"], window=cfg["window"],
            batch_size=cfg["batch_size"], seed=cfg["seed"], device=cfg["device"],
            optimizer=cfg["optimizer"], learning_rate=cfg["learning_rate"],
            resolution_scale=cfg["resolution_scale"], weights=weights,
            geometry_backend=cfg["geometry"]["backend"],
            geometry_weights_path=cfg["geometry"]["weights_path"],
            perceptual_weights_path=cfg["perceptual"]["weights_path"],
            init_weights_path=cfg["transfer"]["init_weights_path"])


@dataclass
class RunReport:
    arch: str = ""
    epochs: int = 0
    steps_per_epoch: int = 0
    traces: dict = field(default_factory=dict)
    loss_weights: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0
    checksums: dict = field(default_factory=dict)
    output_paths: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "epochs": self.epochs,
            "steps_per_epoch": self.steps_per_epoch,
            "traces": self.traces,
            "loss_weights": self.loss_weights,
            "wall_time_seconds": self.wall_time_seconds,
            "checksums": self.checksums,
            "output_paths": list(self.output_paths),
        }

    def epoch_means(self, component: str = "total") -> list:
        trace = self.traces[component]
        n = self.steps_per_epoch
        return [float(np.mean(trace[e * n:(e + 1) * n]))
                for e in range(self.epochs)]


def _weights_dict(w: LossWeights) -> dict:
    return {"content": w.content, "style": w.style, "imgeom": w.imgeom,
            "volume": w.volume, "depth": w.depth, "grad": w.grad_weight,
            "laplace": w.laplace_weight, "canny": w.canny_weight,
            "tv": w.tv, "nnfm": w.nnfm, "style_loss_kind": w.style_loss_kind}


def _build_modules(cfg: TrainConfig, style):
    """Frozen extractor + backend, trainable TransferNet, tap spec."""
    preset = ARCH_PRESETS[cfg.arch]
    extractor = PerceptualExtractor(
        preset["perceptual"],
        resolve_weights_path(cfg.perceptual_weights_path,
                             preset["perceptual"] + ".pt"))
    taps = FeatureTapSpec(backbone_id=preset["perceptual"])
    backend_spec = BackendSpec(
        kind=cfg.geometry_backend,
        feature_base=preset["feature_base"],
        weights_path=resolve_weights_path(
            cfg.geometry_weights_path,
            f"plane_sweep_b{preset['feature_base']}.pt"))
    backend = build_backend(backend_spec)
    tconf = TransferConfig(
        backbone=preset["transfer"],
        init_weights_path=cfg.init_weights_path,
        style_image=style if preset["transfer"] == "adain" else None)
    net = TransferNet(tconf, encoder=extractor
                      if preset["transfer"] == "adain" else None)
    return extractor, taps, backend, net


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))


def _style_features(extractor, taps, style):
    with torch.no_grad():
        feats = extractor(_to_tensor(np.asarray(style, dtype=np.float32)),
                          taps.style_layers)
    return feats.detach()


class _RefCache:
    """Input-branch values for one reference view, fixed across epochs."""

    def __init__(self, sample, extractor, taps, backend, need_geometry):
        self.sample = sample
        self.ref_tensor = _to_tensor(sample.ref_image)
        with torch.no_grad():
            self.content_feats = extractor(self.ref_tensor,
                                           taps.content_layers).detach()
        self.input_estimate = None
        if need_geometry:
            with torch.no_grad():
                est = backend.estimate_images(
                    sample.images, sample.cameras, sample.depth_hypotheses)
            self.input_estimate = est.detach()


def _loss_components(net, extractor, taps, backend, cache, style_feats,
                     weights: LossWeights):
    """One step's loss components for one reference view."""
    sample = cache.sample
    batch = torch.stack([_to_tensor(im) for im in sample.images])
    need_geometry = weights.volume > 0 or weights.depth > 0
    out = net.transform(batch if need_geometry else batch[:1])
    stylized_ref = out[0]

    needed = list(dict.fromkeys(taps.content_layers + taps.style_layers))
    feats_t = extractor(stylized_ref.unsqueeze(0), needed)

    components = {}
    components["content"] = content_loss(feats_t, cache.content_feats,
                                         taps.content_layers)
    style_fn = gram_style_loss if weights.style_loss_kind == "gram" \
        else in_stats_style_loss
    components["style"] = style_fn(feats_t, style_feats, taps.style_layers)
    if weights.imgeom > 0:
        components["imgeom"] = image_geometry_loss(
            cache.ref_tensor, stylized_ref, weights.grad_weight,
            weights.laplace_weight, weights.canny_weight)
    if need_geometry:
        est_t = backend.estimate_images(list(out), sample.cameras,
                                        sample.depth_hypotheses)
        if weights.volume > 0:
            components["volume"] = volume_loss(cache.input_estimate, est_t)
        if weights.depth > 0:
            components["depth"] = depth_loss(cache.input_estimate, est_t)
    if weights.tv > 0:
        components["tv"] = tv_loss(stylized_ref)
    if weights.nnfm > 0:
        layer = taps.style_layers[-1]
        components["nnfm"] = nnfm_loss(feats_t[layer], style_feats[layer])
    return components


def _record(traces: dict, components: dict, total):
    for name in TRACE_COMPONENTS:
        if name == "total":
            traces[name].append(float(total))
        else:
            value = components.get(name)
            traces[name].append(
                float(value.detach()) if value is not None else 0.0)


def train(scene: Scene, style, cfg: TrainConfig = None):
    """Optimize a TransferNet for one scene and style.

    Returns (net, RunReport). Only net parameters change; the extractor and
    backend checksums are recorded before and after as proof.
    """
    cfg = cfg if cfg is not None else TrainConfig()
    if np.asarray(style).ndim != 3:
        raise ValidationError("style must be an HxWx3 image")
    start = time.time()
    torch.manual_seed(cfg.seed)
    extractor, taps, backend, net = _build_modules(cfg, style)
    weights = cfg.weights

    frozen_before = {"perceptual": state_checksum(extractor)}
    if isinstance(backend, torch.nn.Module):
        frozen_before["geometry"] = state_checksum(backend)

    window = min(cfg.window, len(scene))
    need_geometry = weights.volume > 0 or weights.depth > 0
    style_feats = _style_features(extractor, taps, style)
    caches = []
    for ref in range(len(scene)):
        sample = make_sample(scene, ref, window, cfg.pair_ranking)
        sample = scale_sample(sample, cfg.resolution_scale)
        caches.append(_RefCache(sample, extractor, taps, backend, need_geometry))

    opt = torch.optim.Adam(net.trainable_parameters(),
                           lr=cfg.effective_learning_rate)
    traces = {name: [] for name in TRACE_COMPONENTS}
    for _epoch in range(cfg.epochs):
        for cache in caches:
            components = _loss_components(net, extractor, taps, backend,
                                          cache, style_feats, weights)
            loss = total_loss(components, weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            _record(traces, components, loss.detach())

    checksums = {
        "perceptual_before": frozen_before["perceptual"],
        "perceptual_after": state_checksum(extractor),
        "transfer_final": state_checksum(net.net),
    }
    if "geometry" in frozen_before:
        checksums["geometry_before"] = frozen_before["geometry"]
        checksums["geometry_after"] = state_checksum(backend)

    report = RunReport(
        arch=cfg.arch, epochs=cfg.epochs, steps_per_epoch=len(caches),
        traces=traces, loss_weights=_weights_dict(weights),
        wall_time_seconds=time.time() - start, checksums=checksums)
    return net, report


def stylize_all(scene: Scene, net: TransferNet, cfg: TrainConfig = None):
    """Stylize every view at its native resolution; deterministic in eval."""
    net.eval()
    outputs = []
    with torch.no_grad():
        for image in scene.images:
            t = _to_tensor(image).unsqueeze(0)
            h, w = t.shape[-2:]
            ph, pw = (-h) % 8, (-w) % 8
            if ph or pw:
                t = torch.nn.functional.pad(t, (0, pw, 0, ph), mode="reflect")
            out = net.transform(t)[0, :, :h, :w]
            outputs.append(out.permute(1, 2, 0).numpy().astype(np.float32))
    return outputs


def pretrain_transfernet(image_folder, style, cfg: TrainConfig = None,
                         net: TransferNet = None):
    """Fit a TransferNet to a style with content+style losses only.

    The depth backend is never built or invoked here. Pass an existing net
    to fine-tune it toward a new style. Returns (net, RunReport).
    """
    cfg = cfg if cfg is not None else TrainConfig()
    folder = Path(image_folder)
    paths = sorted(p for p in folder.glob("*")
                   if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not paths:
        raise ValidationError(f"no images found in {folder}")
    start = time.time()
    torch.manual_seed(cfg.seed)
    preset = ARCH_PRESETS[cfg.arch]
    extractor = PerceptualExtractor(
        preset["perceptual"],
        resolve_weights_path(cfg.perceptual_weights_path,
                             preset["perceptual"] + ".pt"))
    taps = FeatureTapSpec(backbone_id=preset["perceptual"])
    if net is None:
        tconf = TransferConfig(
            backbone=preset["transfer"],
            init_weights_path=cfg.init_weights_path,
            style_image=style if preset["transfer"] == "adain" else None)
        net = TransferNet(tconf, encoder=extractor
                          if preset["transfer"] == "adain" else None)
    weights = replace(cfg.weights, imgeom=0.0, volume=0.0, depth=0.0)
    perceptual_before = state_checksum(extractor)

    style_feats = _style_features(extractor, taps, style)
    images = []
    content_feats = []
    for p in paths:
        img = read_image(p)
        h8, w8 = img.shape[0] - img.shape[0] % 8, img.shape[1] - img.shape[1] % 8
        img = img[:h8, :w8]
        t = _to_tensor(img)
        images.append(t)
        with torch.no_grad():
            content_feats.append(extractor(t, taps.content_layers).detach())

    opt = torch.optim.Adam(net.trainable_parameters(),
                           lr=cfg.effective_learning_rate)
    style_fn = gram_style_loss if weights.style_loss_kind == "gram" \
        else in_stats_style_loss
    needed = list(dict.fromkeys(taps.content_layers + taps.style_layers))
    traces = {name: [] for name in TRACE_COMPONENTS}
    for _epoch in range(cfg.epochs):
        for t, cfeats in zip(images, content_feats):
            out = net.transform(t.unsqueeze(0))[0]
            feats_t = extractor(out.unsqueeze(0), needed)
            components = {
                "content": content_loss(feats_t, cfeats, taps.content_layers),
                "style": style_fn(feats_t, style_feats, taps.style_layers),
            }
            loss = total_loss(components, weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            _record(traces, components, loss.detach())

    report = RunReport(
        arch=cfg.arch, epochs=cfg.epochs, steps_per_epoch=len(images),
        traces=traces, loss_weights=_weights_dict(weights),
        wall_time_seconds=time.time() - start,
        checksums={"perceptual_before": perceptual_before,
                   "perceptual_after": state_checksum(extractor),
                   "transfer_final": state_checksum(net.net)})
    return net, report


def ablate(scene: Scene, style, cfg: TrainConfig, enabled_losses):
    """Train once per enabled loss alone, plus once with all of them.

    enabled_losses is a subset of {content, style, imgeom, geometry3d};
    geometry3d switches the volume and depth terms together as one unified
    3D term. Returns {run name: RunReport} with a "combined" entry.
    """
    enabled = list(dict.fromkeys(enabled_losses))
    if not enabled:
        raise ValidationError("no losses enabled")
    unknown = [n for n in enabled if n not in ABLATION_LOSS_NAMES]
    if unknown:
        raise ConfigError(f"unknown ablation loss name(s) {unknown}; "
                          f"choose from {list(ABLATION_LOSS_NAMES)}")

    def restrict(active) -> LossWeights:
        base = cfg.weights
        return replace(
            base,
            content=base.content if "content" in active else 0.0,
            style=base.style if "style" in active else 0.0,
            imgeom=base.imgeom if "imgeom" in active else 0.0,
            volume=base.volume if "geometry3d" in active else 0.0,
            depth=base.depth if "geometry3d" in active else 0.0,
            tv=0.0, nnfm=0.0)

    runs = [(name, [name]) for name in enabled]
    runs.append(("combined", enabled))
    reports = {}
    for name, active in runs:
        run_cfg = replace(cfg, weights=restrict(active))
        _net, report = train(scene, style, run_cfg)
        reports[name] = report
    return reports


def stylize_pipeline(scene: Scene, style, cfg: TrainConfig, out_root,
                     style_id: str = "style", color_adjust: str = "off"):
    """Full run: optional color pre-pass, train, stylize, write outputs.

    Writes out_root/<scene>/<style>/stylized/NNNNNNNN.png, report.json and
    checkpoint.pt; returns (net, report, output image paths).
    """
    if color_adjust not in ("pre", "post", "off"):
        raise ConfigError("color_adjust must be pre, post, or off")
    style = np.asarray(style, dtype=np.float32)
    work_scene = scene
    if color_adjust == "pre":
        cmap = fit_color_map(np.concatenate([im.reshape(-1, 3)
                                             for im in scene.images]), style)
        work_scene = Scene([apply_color_map(im, cmap) for im in scene.images],
                           [c.copy() for c in scene.cameras], scene.scene_id)

    net, report = train(work_scene, style, cfg)
    outputs = stylize_all(work_scene, net, cfg)
    if color_adjust == "post":
        cmap = fit_color_map(np.concatenate([im.reshape(-1, 3)
                                             for im in outputs]), style)
        outputs = [apply_color_map(im, cmap) for im in outputs]

    run_dir = Path(out_root) / scene.scene_id / style_id
    img_dir = run_dir / "stylized"
    img_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, im in enumerate(outputs):
        p = img_dir / f"{i:08d}.png"
        write_image(p, im)
        paths.append(str(p))
    report.output_paths = paths
    save_checkpoint(net, run_dir / "checkpoint.pt", style_id,
                    extra={"arch": cfg.arch})
    (run_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2))
    return net, report, paths
