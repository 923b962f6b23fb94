"""Bake the analytic shiny sphere into grids and check it round-trips.

make_scene() gives analytic ground truth (closed-form geometry, sRGB
shading).  oracle_fields() samples that same scene into the voxel-grid
representation the trainer optimizes.  Rendering the baked grids and
scoring them against the analytic images bounds what any optimizer can
hope to reach at this grid resolution: reconstruction error below this
line is representation error, not a training failure.

Writes gt_view0.png / oracle_view0.png / oracle_normals0.png next to
this script.
"""

import os

import numpy as np

from normalfield.imageio import write_png
from normalfield.metrics import mae_degrees, psnr
from normalfield.rendering import RenderConfig, render_image
from normalfield.scenes import make_scene, oracle_fields, render_ground_truth

HERE = os.path.dirname(os.path.abspath(__file__))

scene = make_scene("shiny_sphere", n_views=4, resolution=96, seed=0)
fields = oracle_fields(scene, resolution=48, sh_degree=3)

cfg = RenderConfig(samples_per_ray=192)
psnrs, maes = [], []
for i, cam in enumerate(scene.cameras):
    gt_rgb, gt_normal, gt_alpha, _ = render_ground_truth(scene, cam)
    out = render_image(fields, cam, cfg)
    psnrs.append(psnr(out.color, gt_rgb))
    mae, fg = mae_degrees(out.normal_trans, out.valid_trans, gt_normal, gt_alpha)
    maes.append(mae)
    print(f"view {i}: psnr {psnrs[-1]:6.2f} dB   trans-normal mae {mae:5.2f} deg "
          f"({fg} px foreground)")
    if i == 0:
        write_png(os.path.join(HERE, "gt_view0.png"), gt_rgb)
        write_png(os.path.join(HERE, "oracle_view0.png"), out.color)
        nvis = np.where(out.valid_trans[..., None], (out.normal_trans + 1) * 0.5, 0.0)
        write_png(os.path.join(HERE, "oracle_normals0.png"), nvis)

print(f"\nmean: {np.mean(psnrs):.2f} dB, {np.mean(maes):.2f} deg over "
      f"{len(scene.cameras)} views")
print("most of the residual sits on the 1-pixel silhouette ring where the")
print("trilinear density ramp cannot reproduce a hard analytic edge.")
