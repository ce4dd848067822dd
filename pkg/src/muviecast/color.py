"""Affine RGB color mapping between pixel distributions.

Matches the mean and covariance of a content pixel cloud to a style cloud
with a single 3x3 matrix + offset, fitted from the SVDs of the two color
covariance matrices. Covariances are PSD, so the SVD factors coincide and
identical distributions map to the exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_COV_EPS = 1e-8


@dataclass
class ColorMap:
    matrix: np.ndarray   # 3x3
    offset: np.ndarray   # 3

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        if self.matrix.shape != (3, 3) or self.offset.shape != (3,):
            raise ValidationError("color map must be 3x3 matrix + 3-vector")
        if not (np.isfinite(self.matrix).all() and np.isfinite(self.offset).all()):
            raise ValidationError("color map contains non-finite values")


def _pixels(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 3:
        a = a.reshape(-1, 3)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValidationError(f"expected Nx3 pixels or HxWx3 image, got {a.shape}")
    return a


def _cov_sqrt_factors(pixels: np.ndarray, eps: float):
    cov = np.cov(pixels, rowvar=False) + eps * np.eye(3)
    U, s, Vt = np.linalg.svd(cov)
    return U, s, Vt


def fit_color_map(content_pixels, style_pixels, eps: float = _COV_EPS) -> ColorMap:
    """Fit M, t so mapped content matches the style mean and covariance.

    M = U_s diag(sqrt(l_s)) V_s^T  U_c diag(1/sqrt(l_c)) V_c^T from the
    covariance SVDs, t = mu_s - M mu_c.
    """
    c = _pixels(content_pixels)
    s = _pixels(style_pixels)
    if len(c) < 4 or len(s) < 4:
        raise ValidationError("need at least 4 pixels on each side")
    mu_c = c.mean(axis=0)
    mu_s = s.mean(axis=0)
    Uc, lc, Vct = _cov_sqrt_factors(c, eps)
    Us, ls, Vst = _cov_sqrt_factors(s, eps)
    # constant-color content: covariance ~ eps*I, whitening blows up;
    # the floor is absolute so an explicit larger eps lifts past it
    if lc.min() < 10 * _COV_EPS:
        raise ValidationError(
            "content colors are degenerate (near-constant); "
            "increase the regularization eps to fit anyway")
    M = (Us @ np.diag(np.sqrt(ls)) @ Vst) @ (Uc @ np.diag(1.0 / np.sqrt(lc)) @ Vct)
    t = mu_s - M @ mu_c
    return ColorMap(M, t)


def apply_color_map(image, cmap: ColorMap, clamp: bool = True) -> np.ndarray:
    """Apply c' = Mc + t per pixel; optionally clamp the result to [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    shape = arr.shape
    out = _pixels(arr) @ cmap.matrix.T + cmap.offset
    out = out.reshape(shape)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32)


def identity_color_map() -> ColorMap:
    return ColorMap(np.eye(3), np.zeros(3))
