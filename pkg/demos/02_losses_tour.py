"""Tour of the loss terms on small synthetic tensors.

Each term is computed twice: once on identical inputs (must be zero) and
once on perturbed ones. Everything is differentiable, so the last section
checks a gradient actually reaches the input.
"""

from types import SimpleNamespace

import torch

from muviecast import (LossWeights, canny_loss, content_loss, depth_loss,
                       gram_style_loss, image_geometry_loss,
                       in_stats_style_loss, laplace_loss, nnfm_loss,
                       sobel_loss, stage_weight, total_loss, tv_loss,
                       volume_loss)

torch.manual_seed(0)

img = torch.rand(3, 64, 80)
shifted = (img + 0.1 * torch.randn_like(img)).clamp(0, 1)
feats = {"relu2_2": torch.rand(128, 16, 20), "relu3_3": torch.rand(256, 8, 10)}
moved = {k: v + 0.05 * torch.randn_like(v) for k, v in feats.items()}

stage = lambda d, v: SimpleNamespace(depth_map=d, probability_volume=v)
depth = 2.0 + torch.rand(32, 40)
vol = torch.softmax(torch.rand(8, 32, 40), dim=0)
est_a = [stage(depth, vol)]
est_b = [stage(depth + 0.1, (vol + 0.02).clamp(min=0))]

rows = [
    ("content", content_loss(feats, feats, ["relu2_2"]),
     content_loss(moved, feats, ["relu2_2"])),
    ("gram style", gram_style_loss(feats, feats, list(feats)),
     gram_style_loss(moved, feats, list(feats))),
    ("mean/std style", in_stats_style_loss(feats, feats, list(feats)),
     in_stats_style_loss(moved, feats, list(feats))),
    ("sobel", sobel_loss(img, img), sobel_loss(img, shifted)),
    ("laplace", laplace_loss(img, img), laplace_loss(img, shifted)),
    ("canny", canny_loss(img, img), canny_loss(img, shifted)),
    ("image geometry", image_geometry_loss(img, img),
     image_geometry_loss(img, shifted)),
    ("volume", volume_loss(est_a, est_a), volume_loss(est_a, est_b)),
    ("depth", depth_loss(est_a, est_a), depth_loss(est_a, est_b)),
    ("tv", tv_loss(torch.full((3, 16, 16), 0.3)), tv_loss(img)),
    ("nnfm", nnfm_loss(feats["relu3_3"], feats["relu3_3"]),
     nnfm_loss(moved["relu3_3"], feats["relu3_3"])),
]
print(f"{'term':<16}{'identical':>12}{'perturbed':>12}")
for name, zero, moved_val in rows:
    print(f"{name:<16}{float(zero):>12.2e}{float(moved_val):>12.4f}")

print("\ncoarse-to-fine stage weights:",
      [stage_weight(l) for l in range(3)])

weights = LossWeights(content=1.0, style=500.0, imgeom=80.0,
                      volume=0.3, depth=0.2)
components = {"content": torch.tensor(0.8), "style": torch.tensor(0.002),
              "imgeom": torch.tensor(0.01), "volume": torch.tensor(0.4),
              "depth": torch.tensor(0.5)}
print("weighted total:", float(total_loss(components, weights)))

# gradients flow to the stylized image through any of these
x = shifted.clone().requires_grad_(True)
image_geometry_loss(img, x).backward()
print("grad norm through image-geometry loss:", float(x.grad.norm()))
