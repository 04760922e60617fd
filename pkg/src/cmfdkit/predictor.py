"""Copy-move probability mask from fit residuals and offset fields.

Replaces a learned decoder with a deterministic fusion: low affine-fit
residual plus a closed matching loop (the offset at the landing point
leads back to the start) is what separates duplicated regions from the
noisy background, so the mask is a sigmoid of the best area-normalized
residual over the consistent fields, followed by a size-based cleanup.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dlf import DLF_RHOS
from .imagecore import sample_map


@dataclass(frozen=True)
class PredictorConfig:
    error_scale: float = 0.5       # mean squared residual (px^2) at p = 0.5
    sharpness: float = 8.0
    min_region_area: int = 64
    consistency_tol: float = 2.0   # round-trip slack in pixels
    binarize_threshold: float = 0.5

    def __post_init__(self):
        for name in ("error_scale", "sharpness", "min_region_area",
                     "consistency_tol", "binarize_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def consistency_map(field, tol):
    """True where following the offset, then the offset sampled at the
    landing point, returns within tol pixels of the start."""
    field = np.asarray(field, dtype=np.float64)
    h, w, _ = field.shape
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    back = sample_map(field, jj + field[:, :, 0], ii + field[:, :, 1])
    rx = field[:, :, 0] + back[:, :, 0]
    ry = field[:, :, 1] + back[:, :, 1]
    return np.hypot(rx, ry) <= tol


def evidence(maps, rhos=DLF_RHOS):
    """Best area-normalized residual across window sizes; the window sum
    grows with the window area, so dividing by rho^2 puts all scales on
    a common mean-squared-residual footing."""
    parts = [e / float(r * r) for e, r in zip(maps.as_tuple(), rhos)]
    return np.minimum(np.minimum(parts[0], parts[1]), parts[2])


def predict(maps1, field1, maps2, field2, cfg=None):
    """Fuse two matching runs into one probability mask.

    Per pixel the evidence is the smallest normalized residual among the
    fields whose round trip closes; pixels with no consistent field get
    probability zero. The sigmoid is centered at error_scale with slope
    sharpness, then small components are dropped and small interior
    holes raised to the binarization threshold.
    """
    if cfg is None:
        cfg = PredictorConfig()
    shape = np.asarray(field1).shape[:2]
    for maps, field in ((maps1, field1), (maps2, field2)):
        if np.asarray(field).shape[:2] != shape:
            raise ValueError("field dimensions differ")
        for err in maps.as_tuple():
            if err.shape != shape:
                raise ValueError("error map dimensions differ")
    e = np.full(shape, np.inf)
    for maps, field in ((maps1, field1), (maps2, field2)):
        ok = consistency_map(field, cfg.consistency_tol)
        ev = np.where(ok, evidence(maps), np.inf)
        e = np.minimum(e, ev)
    with np.errstate(over="ignore"):
        m = 1.0 / (1.0 + np.exp(cfg.sharpness * (e - cfg.error_scale)))
    return cleanup(m, cfg.min_region_area, cfg.binarize_threshold)


def cleanup(m, min_area, threshold=0.5):
    """Drop 8-connected mask components smaller than min_area and raise
    interior holes smaller than min_area to the threshold."""
    out = np.array(m, dtype=np.float64, copy=True)
    support = out >= threshold
    lab, n = ndimage.label(support, structure=np.ones((3, 3), dtype=int))
    if n:
        areas = np.bincount(lab.ravel())
        small = areas < min_area
        small[0] = False
        out[small[lab]] = 0.0
        support = out >= threshold
    lab, n = ndimage.label(~support)
    if n:
        areas = np.bincount(lab.ravel())
        border = np.zeros(n + 1, dtype=bool)
        for edge in (lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]):
            border[edge] = True
        fill = (areas < min_area) & ~border
        fill[0] = False
        sel = fill[lab]
        out[sel] = np.maximum(out[sel], threshold)
    return out


def refine_max(m1, m2):
    """Element-wise max of two masks (hook for a learned refiner)."""
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    if m1.shape != m2.shape:
        raise ValueError("mask dimensions differ")
    return np.maximum(m1, m2)


def binarize(m, threshold=0.5):
    """Threshold a probability mask; ties go to foreground."""
    return (np.asarray(m, dtype=np.float64) >= threshold).astype(np.uint8)
