"""PSNR and normal mean angular error, plus the per-view report table."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

PSNR_CAP = 99.0


def psnr(pred, gt):
    """-10 log10(MSE) over all pixels/channels of unit-range images."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = np.mean((pred - gt) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(-10.0 * np.log10(mse))


def mae_degrees(pred_normals, pred_valid, gt_normals, gt_alpha):
    """Mean angular error over foreground, in degrees.

    Foreground = gt_alpha > 0.5.  A foreground pixel with no prediction
    counts as a 90 degree miss rather than being dropped, so an estimator
    cannot improve its score by abstaining.  Returns (mae, n_foreground).
    """
    fg = np.asarray(gt_alpha) > 0.5
    if not fg.any():
        raise DataError("no foreground pixels to evaluate MAE on")
    pv = np.asarray(pred_valid, dtype=bool)
    cos = np.sum(
        np.asarray(pred_normals, dtype=np.float64) * np.asarray(gt_normals), axis=-1
    )
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    ang = np.where(pv, ang, 90.0)
    return float(ang[fg].mean()), int(fg.sum())


@dataclass
class MetricReport:
    """Per-view PSNR/MAE rows plus aggregate means."""

    views: list = field(default_factory=list)  # (view id, psnr, mae, fg count)

    def add(self, view_id, psnr_db, mae_deg, fg_count):
        self.views.append((int(view_id), float(psnr_db), float(mae_deg), int(fg_count)))

    @property
    def mean_psnr(self):
        return float(np.mean([r[1] for r in self.views]))

    @property
    def mean_mae(self):
        return float(np.mean([r[2] for r in self.views]))

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("view,psnr_db,mae_deg,foreground_px\n")
            for vid, p, m, c in self.views:
                f.write(f"{vid},{p:.10g},{m:.10g},{c}\n")
            f.write(f"mean,{self.mean_psnr:.10g},{self.mean_mae:.10g},\n")
