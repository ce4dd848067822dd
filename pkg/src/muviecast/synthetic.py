"""Synthetic calibrated scenes with known geometry, for tests and demos.

Two fixtures: a fronto-parallel textured plane seen from a small translation
rig, and a textured cube over a background plane seen from an arc of
inward-looking cameras. Both return ground-truth per-view depth maps from
the ray tracer, which makes depth-recovery and reprojection claims checkable
without any real dataset.
"""

from __future__ import annotations

import numpy as np

from .dataset import CameraParams, Scene


def multi_octave_texture(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    """Bilinearly interpolated value noise summed over four octaves.

    u, v are continuous plane coordinates; output is HxWx3 in [0.05, 0.95].
    Texture has structure at every matching scale the backend sees.
    """
    rng = np.random.default_rng(seed)
    out = np.zeros(u.shape + (3,))
    total = 0.0
    for freq, amp in ((0.5, 1.0), (1.0, 0.7), (2.0, 0.5), (4.0, 0.35)):
        g = 64
        lattice = rng.uniform(0.0, 1.0, size=(g, g, 3))
        x = (u * freq) % g
        y = (v * freq) % g
        x0 = np.floor(x).astype(int) % g
        y0 = np.floor(y).astype(int) % g
        x1 = (x0 + 1) % g
        y1 = (y0 + 1) % g
        fx = (x - np.floor(x))[..., None]
        fy = (y - np.floor(y))[..., None]
        val = (lattice[y0, x0] * (1 - fx) * (1 - fy) + lattice[y0, x1] * fx * (1 - fy)
               + lattice[y1, x0] * (1 - fx) * fy + lattice[y1, x1] * fx * fy)
        out += amp * val
        total += amp
    return (0.05 + 0.9 * out / total).astype(np.float64)


def look_at_extrinsics(position, target) -> np.ndarray:
    """4x4 world-to-camera matrix for a camera at `position` facing `target`.

    y-down image convention: camera y stays aligned with world +y so that a
    camera on the z axis matches the identity pose (no roll).
    """
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z = z / np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ position
    return E


def _pixel_rays(K: np.ndarray, E: np.ndarray, height: int, width: int):
    """World-space ray origin and per-pixel directions for a camera."""
    u, v = np.meshgrid(np.arange(width, dtype=np.float64),
                       np.arange(height, dtype=np.float64))
    pix = np.stack([u, v, np.ones_like(u)], -1) @ np.linalg.inv(K).T
    R, t = E[:3, :3], E[:3, 3]
    dirs = pix @ R        # row-vector form of R^T @ ray
    origin = -R.T @ t
    return origin, dirs


def quantize_to_8bit(image: np.ndarray) -> np.ndarray:
    """Snap to the PNG-representable grid so file round-trips are exact."""
    return (np.round(np.clip(image, 0, 1) * 255.0) / 255.0).astype(np.float32)


def make_plane_scene(height: int = 128, width: int = 160,
                     plane_depth: float = 3.6, depth_min: float = 3.2,
                     depth_interval: float = 0.1, num_hypotheses: int = 17,
                     baseline: float = 0.8, focal: float = 240.0,
                     seed: int = 7):
    """Textured plane z = plane_depth viewed from three x-translated cameras.

    plane_depth is deliberately off the hypothesis-range midpoint so a depth
    estimate cannot score well by collapsing to the sweep mean. Returns
    (Scene, [ground-truth depth per view]).
    """
    K = np.array([[focal, 0.0, width / 2 - 0.5],
                  [0.0, focal, height / 2 - 0.5],
                  [0.0, 0.0, 1.0]])
    images, cameras, gt_depths = [], [], []
    for i, tx in enumerate((0.0, baseline, -baseline)):
        E = np.eye(4)
        E[:3, 3] = [-tx, -0.04 * (i == 2), 0.0]   # t = -R @ position, R = I
        origin, dirs = _pixel_rays(K, E, height, width)
        s = (plane_depth - origin[2]) / dirs[..., 2]
        pts = origin[None, None] + s[..., None] * dirs
        img = multi_octave_texture(pts[..., 0] * 8.0, pts[..., 1] * 8.0, seed)
        depth = (pts @ E[:3, :3].T + E[:3, 3])[..., 2]
        images.append(quantize_to_8bit(img))
        cameras.append(CameraParams(K.copy(), E, depth_min, depth_interval,
                                    num_hypotheses))
        gt_depths.append(depth.astype(np.float32))
    return Scene(images, cameras, scene_id="plane"), gt_depths


def _intersect_cube(origin, dirs, half: float):
    """Slab intersection with the axis-aligned cube [-half, half]^3.

    Returns (hit mask, entry distance, face index 0..5) with faces ordered
    -x,+x,-y,+y,-z,+z.
    """
    inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t0 = (-half - origin) * inv
    t1 = (half - origin) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    tn = tmin.max(-1)
    tf = tmax.min(-1)
    hit = (tn <= tf) & (tf > 0) & (tn > 0)
    axis = tmin.argmax(-1)
    sign_neg = np.take_along_axis(dirs, axis[..., None], -1)[..., 0] > 0
    face = axis * 2 + np.where(sign_neg, 0, 1)
    return hit, tn, face


def make_cube_scene(height: int = 128, width: int = 160, num_views: int = 4,
                    cube_half: float = 0.8, camera_z: float = -4.0,
                    background_z: float = 1.6, depth_min: float = 2.4,
                    depth_interval: float = 0.14, num_hypotheses: int = 32,
                    focal: float = 240.0, seed: int = 11):
    """Textured cube over a textured background plane, cameras on an arc.

    Cameras sit on a line at z = camera_z, spread over x, each looking at the
    origin, so neighboring views overlap heavily while still exercising
    rotation in the warps. Returns (Scene, [ground-truth depth per view]).
    """
    K = np.array([[focal, 0.0, width / 2 - 0.5],
                  [0.0, focal, height / 2 - 0.5],
                  [0.0, 0.0, 1.0]])
    xs = np.linspace(-1.2, 1.2, num_views)
    images, cameras, gt_depths = [], [], []
    for vi, x in enumerate(xs):
        E = look_at_extrinsics([x, 0.15, camera_z], [0.0, 0.0, 0.0])
        origin, dirs = _pixel_rays(K, E, height, width)
        hit, tn, face = _intersect_cube(origin, dirs, cube_half)

        # background plane z = background_z fills every miss
        s_bg = (background_z - origin[2]) / dirs[..., 2]
        dist = np.where(hit, tn, s_bg)
        pts = origin[None, None] + dist[..., None] * dirs

        img = multi_octave_texture(pts[..., 0] * 6.0 + 31.0,
                                   pts[..., 1] * 6.0, seed)
        for f in range(6):
            m = hit & (face == f)
            if not m.any():
                continue
            drop = f // 2              # the face's constant axis
            uv = pts[m][:, [a for a in range(3) if a != drop]]
            img[m] = multi_octave_texture(uv[:, 0] * 10.0, uv[:, 1] * 10.0,
                                          seed + 1 + f)
        depth = (pts @ E[:3, :3].T + E[:3, 3])[..., 2]
        images.append(quantize_to_8bit(img))
        cameras.append(CameraParams(K.copy(), E, depth_min, depth_interval,
                                    num_hypotheses))
        gt_depths.append(depth.astype(np.float32))
    return Scene(images, cameras, scene_id="cube"), gt_depths


def make_style_image(height: int = 128, width: int = 160, seed: int = 3) -> np.ndarray:
    """Saturated synthetic style image with color statistics far from the
    gray-ish scene textures, so style terms have real signal."""
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.linspace(0, 8, width), np.linspace(0, 8, height))
    base = multi_octave_texture(u * 3.0, v * 3.0, seed)[..., 0]
    phases = rng.uniform(0, 2 * np.pi, size=3)
    freqs = rng.uniform(2.0, 5.0, size=3)
    img = np.stack([0.5 + 0.45 * np.sin(freqs[c] * base * 2 * np.pi + phases[c])
                    for c in range(3)], axis=-1)
    return quantize_to_8bit(img)
