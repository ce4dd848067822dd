"""Affine color-moment transfer between two images.

Fits a 3x3 matrix + offset so the content image's RGB mean and covariance
match the style image's, then applies it. Useful as a cheap pre- or
post-processing step around the neural stylization.
"""

from pathlib import Path

import numpy as np

from muviecast import apply_color_map, fit_color_map, write_image
from muviecast.synthetic import make_style_image

out = Path(__file__).parent / "out" / "color_transfer"
out.mkdir(parents=True, exist_ok=True)

content = make_style_image(seed=12)
style = make_style_image(seed=3)

cmap = fit_color_map(content, style)
mapped = apply_color_map(content, cmap)

def moments(img):
    px = img.reshape(-1, 3).astype(np.float64)
    return px.mean(axis=0), np.cov(px, rowvar=False)

for name, img in [("content", content), ("style", style), ("mapped", mapped)]:
    mu, cov = moments(img)
    print(f"{name:<8} mean {np.round(mu, 3)}  cov diag {np.round(np.diag(cov), 4)}")

mu_s, cov_s = moments(style)
mu_m, cov_m = moments(mapped)
print(f"\nmean gap after mapping: {np.abs(mu_m - mu_s).max():.2e}"
      " (clamping to [0,1] costs a little)")

print("\nfitted matrix:")
print(np.array_str(cmap.matrix, precision=3, suppress_small=True))
print("offset:", np.round(cmap.offset, 3))

write_image(out / "content.png", content)
write_image(out / "style.png", style)
write_image(out / "mapped.png", mapped)
print(f"\nimages written under {out}")
