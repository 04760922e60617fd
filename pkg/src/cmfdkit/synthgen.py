"""Synthetic copy-move forgery generator with exact ground truth.

A polygonal region of a base image is rotated, scaled, and pasted
elsewhere; masks come from the transformed geometry itself (rasterized
at pixel centers), never from pixel differences, so labels stay exact on
flat regions.
"""

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as _PILImage
from scipy import ndimage

from .imagecore import sample_map

ROTATION_RANGE = (-180.0, 180.0)
SCALE_RANGE = (0.5, 2.0)


@dataclass(frozen=True)
class ForgerySpec:
    region: tuple            # polygon vertices ((x, y), ...)
    rotation: float = 0.0    # degrees
    scale: float = 1.0
    paste_center: tuple = (0.0, 0.0)
    seed: int = 0
    allow_overlap: bool = False

    def __post_init__(self):
        if len(self.region) < 3:
            raise ValueError("region needs at least three vertices")
        if not (ROTATION_RANGE[0] <= self.rotation <= ROTATION_RANGE[1]):
            raise ValueError("rotation outside [-180, 180]")
        if not (SCALE_RANGE[0] <= self.scale <= SCALE_RANGE[1]):
            raise ValueError("scale outside [0.5, 2]")

    def to_dict(self):
        return {"region": [list(v) for v in self.region],
                "rotation": self.rotation, "scale": self.scale,
                "paste_center": list(self.paste_center), "seed": self.seed,
                "allow_overlap": self.allow_overlap}

    @staticmethod
    def from_dict(d):
        return ForgerySpec(region=tuple(tuple(v) for v in d["region"]),
                           rotation=d["rotation"], scale=d["scale"],
                           paste_center=tuple(d["paste_center"]),
                           seed=d["seed"],
                           allow_overlap=d.get("allow_overlap", False))


@dataclass(frozen=True)
class LabeledForgery:
    image: np.ndarray
    m_gt: np.ndarray    # binary source-or-target
    mc_gt: np.ndarray   # labels 0 background / 1 source / 2 target
    mt_gt: np.ndarray   # binary target only


def rect_region(x0, y0, w, h):
    """Polygon covering exactly the pixels [y0, y0+h) x [x0, x0+w):
    vertices sit half a pixel outside the covered centers."""
    return ((x0 - 0.5, y0 - 0.5), (x0 + w - 0.5, y0 - 0.5),
            (x0 + w - 0.5, y0 + h - 0.5), (x0 - 0.5, y0 + h - 0.5))


def polygon_centroid(vertices):
    v = np.asarray(vertices, dtype=np.float64)
    return v.mean(axis=0)


def rasterize(vertices, h, w):
    """Binary mask of pixel centers inside the polygon (even-odd rule)."""
    v = np.asarray(vertices, dtype=np.float64)
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    inside = np.zeros((h, w), dtype=bool)
    n = len(v)
    for k in range(n):
        x1, y1 = v[k]
        x2, y2 = v[(k + 1) % n]
        crosses = (y1 > ii) != (y2 > ii)
        with np.errstate(divide="ignore", invalid="ignore"):
            xhit = x1 + (ii - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (jj < xhit)
    return inside


def _transform(spec):
    """Source-to-target map v -> R * s * (v - centroid) + paste_center."""
    theta = np.deg2rad(spec.rotation)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    c = polygon_centroid(spec.region)
    p = np.asarray(spec.paste_center, dtype=np.float64)
    return rot * spec.scale, c, p


def generate(base, spec):
    """Apply a forgery spec to a base image; returns image plus exact
    masks. Raises when the paste exits the image or overlaps the source
    without the overlap flag."""
    base = np.asarray(base, dtype=np.float64)
    h, w = base.shape[:2]
    mat, c, p = _transform(spec)
    src_poly = np.asarray(spec.region, dtype=np.float64)
    tgt_poly = (src_poly - c) @ mat.T + p
    if (tgt_poly[:, 0].min() < 0 or tgt_poly[:, 0].max() > w - 1
            or tgt_poly[:, 1].min() < 0 or tgt_poly[:, 1].max() > h - 1):
        raise ValueError("paste would exit the image")
    src_mask = rasterize(src_poly, h, w)
    tgt_mask = rasterize(tgt_poly, h, w)
    if not spec.allow_overlap and (src_mask & tgt_mask).any():
        raise ValueError("source and paste regions overlap")

    inv = np.linalg.inv(mat)
    ti, tj = np.nonzero(tgt_mask)
    rel = np.stack([tj, ti], axis=-1).astype(np.float64) - p
    src_pts = rel @ inv.T + c
    out = base.copy()
    out[ti, tj] = sample_map(base, src_pts[:, 0], src_pts[:, 1])

    mc = np.zeros((h, w), dtype=np.uint8)
    mc[src_mask] = 1
    mc[tgt_mask] = 2  # target wins when overlap is allowed
    return LabeledForgery(image=out,
                          m_gt=(mc > 0).astype(np.uint8),
                          mc_gt=mc,
                          mt_gt=tgt_mask.astype(np.uint8))


def degrade(img, noise_sigma=0.0, jpeg_quality=None, seed=0):
    """Additive Gaussian noise (clamped to [0,1]) and an optional JPEG
    round trip."""
    if noise_sigma < 0:
        raise ValueError("noise sigma must be nonnegative")
    out = np.asarray(img, dtype=np.float64)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + noise_sigma * rng.standard_normal(out.shape)
    out = np.clip(out, 0.0, 1.0)
    if jpeg_quality is not None:
        buf = io.BytesIO()
        eight = np.rint(out * 255.0).astype(np.uint8)
        # 4:4:4 keeps recompression at the same quality near-idempotent
        _PILImage.fromarray(eight).save(buf, format="JPEG",
                                        quality=int(jpeg_quality),
                                        subsampling=0)
        buf.seek(0)
        out = np.asarray(_PILImage.open(buf).convert("RGB"),
                         dtype=np.float64) / 255.0
    return out


def make_texture(h, w, seed=0, smoothness=7.0):
    """Random RGB texture: broad blurred noise plus a faint fine-detail
    layer, stretched to cover most of the intensity range.

    The broad blur sets the width of the patch-matching basin (sharper
    texture makes near-miss offsets score no better than random ones,
    which starves the matcher of usable seeds); the fine layer keeps
    windows distinctive without eating into that basin."""
    rng = np.random.default_rng(seed)
    out = np.empty((h, w, 3))
    for ch in range(3):
        noise = rng.standard_normal((h, w))
        sm = ndimage.gaussian_filter(noise, smoothness, mode="reflect")
        fine = ndimage.gaussian_filter(rng.standard_normal((h, w)), 0.8,
                                       mode="reflect")
        fine /= max(fine.std(), 1e-12)
        sm = sm + 0.1 * sm.std() * fine
        lo, hi = sm.min(), sm.max()
        out[:, :, ch] = 0.05 + 0.9 * (sm - lo) / max(hi - lo, 1e-12)
    return out


def blob_region(center, radius, points=8, seed=0):
    """Star-convex polygon around a center: random radii at evenly
    spaced angles."""
    rng = np.random.default_rng(seed)
    cx, cy = center
    angles = np.linspace(0.0, 2.0 * np.pi, points, endpoint=False)
    radii = radius * rng.uniform(0.6, 1.0, size=points)
    return tuple((cx + r * np.cos(a), cy + r * np.sin(a))
                 for r, a in zip(radii, angles))


def random_spec(h, w, rng, rotation_range=(0.0, 0.0),
                scale_range=(1.0, 1.0), min_side=64, max_tries=200):
    """Draw a forgery spec whose paste stays inside an h x w image and
    clear of the source region."""
    for _ in range(max_tries):
        side = int(rng.integers(min_side, min_side + min_side // 2 + 1))
        if rng.uniform() < 0.5:
            half = side // 2 + 2
            cx = float(rng.integers(half, w - half))
            cy = float(rng.integers(half, h - half))
            region = rect_region(int(cx - side // 2), int(cy - side // 2),
                                 side, side)
        else:
            # radius sized so even an all-minimum-radii blob covers about
            # min_side^2 pixels (the area check below enforces it exactly)
            radius = 0.85 * side
            half = int(radius) + 2
            cx = float(rng.integers(half, w - half))
            cy = float(rng.integers(half, h - half))
            region = blob_region((cx, cy), radius,
                                 seed=int(rng.integers(1 << 31)))
        rotation = float(rng.uniform(*rotation_range))
        scale = float(rng.uniform(*scale_range))
        half = side // 2 + 2
        px = float(rng.integers(half, w - half))
        py = float(rng.integers(half, h - half))
        spec = ForgerySpec(region=region, rotation=rotation, scale=scale,
                           paste_center=(px, py),
                           seed=int(rng.integers(1 << 31)))
        try:
            mat, c, p = _transform(spec)
            verts = np.asarray(region)
            src = verts - c
            tgt = src @ mat.T + p
            if (verts[:, 0].min() < 0 or verts[:, 0].max() > w - 1
                    or verts[:, 1].min() < 0 or verts[:, 1].max() > h - 1):
                continue
            if (tgt[:, 0].min() < 0 or tgt[:, 0].max() > w - 1
                    or tgt[:, 1].min() < 0 or tgt[:, 1].max() > h - 1):
                continue
            src_m = rasterize(verts, h, w)
            if src_m.sum() < min_side * min_side:
                continue
            tgt_m = rasterize(tgt, h, w)
            if (src_m & tgt_m).any():
                continue
            return spec
        except ValueError:
            continue
    raise ValueError("could not place a forgery inside the image")
