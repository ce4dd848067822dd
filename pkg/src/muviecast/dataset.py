"""Calibrated multi-view scene loading and training-sample assembly.

A scene is a directory of `images/NNNNNNNN.png` plus `cams/NNNNNNNN_cam.txt`
text files in the MVSNet convention (4x4 world-to-camera extrinsic, 3x3
intrinsic, then `depth_min depth_interval num_hypotheses`). Images are kept
as float32 RGB in [0, 1] everywhere in this package.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import LoadError, ValidationError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class CameraParams:
    intrinsics: np.ndarray          # 3x3, pixels
    extrinsics: np.ndarray          # 4x4 world-to-camera
    depth_min: float
    depth_interval: float
    num_depth_hypotheses: int

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64)
        self.validate()

    def validate(self):
        K, E = self.intrinsics, self.extrinsics
        if K.shape != (3, 3) or E.shape != (4, 4):
            raise ValidationError(f"camera matrix shapes {K.shape}, {E.shape}")
        if abs(K[2, 2] - 1.0) > 1e-9:
            raise ValidationError("intrinsics[2][2] must be 1")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValidationError("focal lengths must be positive")
        if abs(np.linalg.det(K)) < 1e-12:
            raise ValidationError("intrinsics not invertible")
        R = E[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-4):
            raise ValidationError("extrinsic rotation not orthonormal")
        if self.depth_min <= 0:
            raise ValidationError("depth_min must be > 0")
        if self.depth_interval <= 0:
            raise ValidationError("depth_interval must be > 0")
        if self.num_depth_hypotheses < 1:
            raise ValidationError("num_depth_hypotheses must be >= 1")

    def depth_hypotheses(self) -> np.ndarray:
        """Uniform-in-depth sweep: depth_min + k * depth_interval."""
        k = np.arange(self.num_depth_hypotheses, dtype=np.float64)
        return self.depth_min + k * self.depth_interval

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:3, 3]

    def scaled(self, factor: float) -> "CameraParams":
        K = self.intrinsics.copy()
        K[0, :] *= factor
        K[1, :] *= factor
        return CameraParams(K, self.extrinsics.copy(), self.depth_min,
                            self.depth_interval, self.num_depth_hypotheses)

    def copy(self) -> "CameraParams":
        return CameraParams(self.intrinsics.copy(), self.extrinsics.copy(),
                            self.depth_min, self.depth_interval,
                            self.num_depth_hypotheses)


@dataclass
class Scene:
    images: list                    # float32 HxWx3 in [0,1], shared H,W
    cameras: list
    scene_id: str = "scene"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if len(self.images) != len(self.cameras):
            raise ValidationError("images and cameras length mismatch")
        if len(self.images) < 2:
            raise ValidationError("need >= 2 views")
        shape0 = self.images[0].shape
        for i, img in enumerate(self.images):
            if img.shape != shape0:
                raise ValidationError(f"view {i} shape {img.shape} != {shape0}")
            if img.ndim != 3 or img.shape[2] != 3:
                raise ValidationError(f"view {i} is not HxWx3")

    def __len__(self):
        return len(self.images)

    @property
    def height(self):
        return self.images[0].shape[0]

    @property
    def width(self):
        return self.images[0].shape[1]


@dataclass
class MultiViewSample:
    ref_index: int
    source_indices: list
    ref_image: np.ndarray
    source_images: list
    ref_camera: CameraParams
    source_cameras: list
    depth_hypotheses: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.depth_hypotheses is None:
            self.depth_hypotheses = self.ref_camera.depth_hypotheses()
        if self.ref_index in self.source_indices:
            raise ValidationError("ref_index cannot be a source index")
        d = np.asarray(self.depth_hypotheses, dtype=np.float64)
        if len(d) != self.ref_camera.num_depth_hypotheses:
            raise ValidationError("depth hypothesis count mismatch")
        if np.any(np.diff(d) <= 0):
            raise ValidationError("depth hypotheses must be strictly increasing")
        self.depth_hypotheses = d

    @property
    def images(self):
        return [self.ref_image] + list(self.source_images)

    @property
    def cameras(self):
        return [self.ref_camera] + list(self.source_cameras)


def _format_matrix(m: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in m)


def read_camera_file(path) -> CameraParams:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 11:
        raise LoadError(f"camera file too short: {path}")
    try:
        E = np.array([[float(v) for v in lines[1 + r].split()] for r in range(4)])
        K = np.array([[float(v) for v in lines[7 + r].split()] for r in range(3)])
        tail = [ln for ln in lines[10:] if ln.strip()]
        parts = tail[-1].split()
        dmin, dint = float(parts[0]), float(parts[1])
        nhyp = int(round(float(parts[2]))) if len(parts) > 2 else 192
    except (ValueError, IndexError) as e:
        raise LoadError(f"malformed camera file {path}: {e}") from e
    return CameraParams(K, E, dmin, dint, nhyp)


def write_camera_file(path, cam: CameraParams):
    text = "extrinsic\n{}\n\nintrinsic\n{}\n\n{:.17g} {:.17g} {}\n".format(
        _format_matrix(cam.extrinsics), _format_matrix(cam.intrinsics),
        cam.depth_min, cam.depth_interval, cam.num_depth_hypotheses)
    Path(path).write_text(text)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def write_image(path, image: np.ndarray):
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def _view_index(stem: str) -> int:
    m = re.search(r"(\d+)$", stem)
    if m is None:
        raise LoadError(f"image name has no view index: {stem}")
    return int(m.group(1))


def load_scene(root_path) -> Scene:
    """Read `images/` and `cams/` under root_path into a Scene.

    View order follows the numeric index embedded in the file names; every
    image must have a matching `<index>_cam.txt`.
    """
    root = Path(root_path)
    img_dir, cam_dir = root / "images", root / "cams"
    if not img_dir.is_dir():
        raise LoadError(f"missing images directory: {img_dir}")
    files = sorted(
        (p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS),
        key=lambda p: _view_index(p.stem))
    if len(files) < 2:
        raise ValidationError(f"need >= 2 views, found {len(files)} in {img_dir}")
    images, cameras = [], []
    for p in files:
        idx = _view_index(p.stem)
        cam_path = cam_dir / f"{idx:08d}_cam.txt"
        if not cam_path.exists():
            raise LoadError(f"missing camera file for view {idx}: {cam_path}")
        images.append(read_image(p))
        cameras.append(read_camera_file(cam_path))
    return Scene(images, cameras, scene_id=root.name)


def write_scene(scene: Scene, root_path):
    root = Path(root_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "cams").mkdir(parents=True, exist_ok=True)
    for i, (img, cam) in enumerate(zip(scene.images, scene.cameras)):
        write_image(root / "images" / f"{i:08d}.png", img)
        write_camera_file(root / "cams" / f"{i:08d}_cam.txt", cam)
    return root


def read_pair_file(path) -> dict:
    """Ranked neighbor lists: {view_id: [best, second, ...]}."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        n = int(lines[0])
        ranking = {}
        pos = 1
        for _ in range(n):
            vid = int(lines[pos])
            toks = lines[pos + 1].split()
            k = int(toks[0])
            ranking[vid] = [int(toks[1 + 2 * j]) for j in range(k)]
            pos += 2
    except (ValueError, IndexError) as e:
        raise LoadError(f"malformed pair file {path}: {e}") from e
    return ranking


def select_neighbors(scene: Scene, ref_index: int, window: int,
                     pair_ranking: dict | None = None) -> list:
    """Choose window-1 source views for a reference view.

    With a pair ranking, take its first window-1 entries. Otherwise take the
    views nearest to ref_index in index order, ties broken toward the
    smaller index.
    """
    n = len(scene)
    if not 2 <= window <= n:
        raise ValidationError(f"window must be in [2, {n}], got {window}")
    if not 0 <= ref_index < n:
        raise ValidationError(f"ref_index {ref_index} out of range")
    if pair_ranking is not None:
        if ref_index not in pair_ranking:
            raise ValidationError(f"pair file has no entry for view {ref_index}")
        ranked = pair_ranking[ref_index]
        bad = [v for v in ranked if not 0 <= v < n]
        if bad:
            raise ValidationError(f"pair file references unknown view(s) {bad}")
        if len(ranked) < window - 1:
            raise ValidationError(
                f"pair file lists {len(ranked)} neighbors for view {ref_index}, "
                f"window {window} needs {window - 1}")
        return list(ranked[:window - 1])
    others = [i for i in range(n) if i != ref_index]
    others.sort(key=lambda i: (abs(i - ref_index), i))
    return others[:window - 1]


def make_sample(scene: Scene, ref_index: int, window: int,
                pair_ranking: dict | None = None) -> MultiViewSample:
    src = select_neighbors(scene, ref_index, window, pair_ranking)
    return MultiViewSample(
        ref_index=ref_index,
        source_indices=src,
        ref_image=scene.images[ref_index],
        source_images=[scene.images[i] for i in src],
        ref_camera=scene.cameras[ref_index],
        source_cameras=[scene.cameras[i] for i in src],
    )


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    import torch
    import torch.nn.functional as F
    t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0)
    r = F.interpolate(t, size=(out_h, out_w), mode="bilinear", align_corners=False)
    return r.squeeze(0).permute(1, 2, 0).contiguous().numpy()


def scale_sample(sample: MultiViewSample, factor: float) -> MultiViewSample:
    """Resample images by `factor` and scale intrinsics to match.

    Extrinsics and depth hypotheses are resolution-independent and pass
    through unchanged. factor=1 returns the sample as-is.
    """
    if not 0 < factor <= 1:
        raise ValidationError(f"scale factor must be in (0, 1], got {factor}")
    if factor == 1.0:
        return sample
    h, w = sample.ref_image.shape[:2]
    out_h, out_w = h * factor, w * factor
    if abs(out_h - round(out_h)) > 1e-9 or abs(out_w - round(out_w)) > 1e-9:
        raise ValidationError(
            f"factor {factor} gives non-integral dims {out_h}x{out_w}")
    out_h, out_w = int(round(out_h)), int(round(out_w))
    return MultiViewSample(
        ref_index=sample.ref_index,
        source_indices=list(sample.source_indices),
        ref_image=_resize_bilinear(sample.ref_image, out_h, out_w),
        source_images=[_resize_bilinear(s, out_h, out_w) for s in sample.source_images],
        ref_camera=sample.ref_camera.scaled(factor),
        source_cameras=[c.scaled(factor) for c in sample.source_cameras],
        depth_hypotheses=sample.depth_hypotheses.copy(),
    )
