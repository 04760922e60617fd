"""Source/target discrimination by pairwise ranking.

A copy-move mask says which pixels were duplicated but not which side is
the clone. Ranking settles that per matched pair: score both endpoints
with a shared scorer and compare. Positive rank difference labels the
pixel source, negative labels it target.

The scorer here is a linear-sigmoid model over hand-crafted per-pixel
features; the feature vector concatenates local image statistics with
the same statistics warped to the matched position (interpolation
artifacts at a resampled clone make the two halves differ), gated by the
detection mask so background contributes nothing.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import (_corner_setup, read_tensor, sample_map, save_image,
                        to_grayscale, write_tensor)

LABEL_BACKGROUND = 0
LABEL_SOURCE = 1
LABEL_TARGET = 2

# render convention: background blue, source green, target red
_LABEL_COLORS = np.array([[0.0, 0.0, 1.0],
                          [0.0, 1.0, 0.0],
                          [1.0, 0.0, 0.0]])

FEATURE_DIM = 8


@dataclass
class ScorerParams:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.isfinite(self.weights).all() or not np.isfinite(self.bias):
            raise ValueError("scorer parameters must be finite")


def zero_params(dim=FEATURE_DIM):
    return ScorerParams(weights=np.zeros(dim), bias=0.0)


def save_params(params, path):
    write_tensor(np.concatenate([params.weights, [params.bias]]), path)


def load_params(path):
    vec = read_tensor(path)
    if vec.ndim != 1 or vec.size < 2:
        raise ValueError("scorer parameter file must hold one vector")
    return ScorerParams(weights=vec[:-1].astype(np.float64),
                        bias=float(vec[-1]))


def fuse_offsets(field1, field2, mb):
    """Pick field1 where both the pixel and its field1 correspondence lie
    inside the binary mask (nearest-pixel lookup, out of bounds counts as
    outside); field2 elsewhere."""
    field1 = np.asarray(field1, dtype=np.float64)
    field2 = np.asarray(field2, dtype=np.float64)
    mb = np.asarray(mb)
    h, w = mb.shape
    if field1.shape != (h, w, 2) or field2.shape != (h, w, 2):
        raise ValueError("field dimensions differ")
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    tx = np.floor(jj + field1[:, :, 0] + 0.5).astype(np.intp)
    ty = np.floor(ii + field1[:, :, 1] + 0.5).astype(np.intp)
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    landed = np.zeros((h, w), dtype=bool)
    landed[inside] = mb[ty[inside], tx[inside]] > 0
    use1 = (mb > 0) & landed
    return np.where(use1[:, :, None], field1, field2)


def warp_features(fm, field):
    """Resample a feature map at each pixel's matched position."""
    fm = np.asarray(fm, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    h, w = fm.shape[:2]
    if field.shape[:2] != (h, w):
        raise ValueError("field dimensions differ")
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    return sample_map(fm, jj + field[:, :, 0], ii + field[:, :, 1])


def _local_statistics(img, dlf_maps):
    gray = to_grayscale(img) if np.asarray(img).ndim == 3 else np.asarray(img)
    gray = gray.astype(np.float64)
    mean = ndimage.uniform_filter(gray, size=5, mode="reflect")
    meansq = ndimage.uniform_filter(gray * gray, size=5, mode="reflect")
    variance = np.maximum(meansq - mean * mean, 0.0)
    lap = ndimage.laplace(gray, mode="reflect")
    err = np.minimum(np.minimum(dlf_maps.eps1, dlf_maps.eps2), dlf_maps.eps3)
    return gray, variance, lap * lap, err


def build_features(img, dlf_maps, field, mask):
    """Per-pixel discrimination features, gated by the detection mask.

    Channels 0..3: 5x5 luminance variance, 3x3 Laplacian energy, best
    fit residual across window sizes, distance to the mask boundary.
    Channels 4..7: the same values warped to the matched position.
    """
    mask = np.asarray(mask, dtype=np.float64)
    _, variance, lap_energy, err = _local_statistics(img, dlf_maps)
    support = mask >= 0.5
    dist = ndimage.distance_transform_edt(support)
    base = np.stack([variance, lap_energy, err, dist], axis=-1)
    warped = warp_features(base, field)
    return np.concatenate([base, warped], axis=-1) * mask[:, :, None]


def score_map(feats, params):
    """Per-pixel sigmoid(w . x + b)."""
    feats = np.asarray(feats, dtype=np.float64)
    z = feats @ params.weights + params.bias
    return 1.0 / (1.0 + np.exp(-z))


def rank_map(sf, field):
    """Score difference between each pixel and its matched position."""
    return np.asarray(sf, dtype=np.float64) - warp_features(sf, field)


def three_channel(sr, mb):
    """Label map from rank signs: background outside the mask, source
    where the rank is positive, target otherwise (ties included)."""
    sr = np.asarray(sr, dtype=np.float64)
    mb = np.asarray(mb)
    if sr.shape != mb.shape:
        raise ValueError("mask dimensions differ")
    labels = np.full(sr.shape, LABEL_BACKGROUND, dtype=np.uint8)
    inside = mb > 0
    labels[inside & (sr > 0)] = LABEL_SOURCE
    labels[inside & (sr <= 0)] = LABEL_TARGET
    return labels


def render_three_channel(labels, path=None):
    """RGB rendering (and optional PNG write) of a label map."""
    rgb = _LABEL_COLORS[np.asarray(labels)]
    if path is not None:
        save_image(rgb, path)
    return rgb


def labels_from_render(rgb):
    """Inverse of render_three_channel for evaluation round trips."""
    rgb = np.asarray(rgb, dtype=np.float64)
    dist = ((rgb[:, :, None, :] - _LABEL_COLORS[None, None, :, :]) ** 2
            ).sum(axis=-1)
    return np.argmin(dist, axis=-1).astype(np.uint8)


def _warp_adjoint(grad, field):
    """Transpose of warp_features: scatter each gradient entry to the
    four corners it interpolated from."""
    grad = np.asarray(grad, dtype=np.float64)
    h, w = grad.shape
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    x0, y0, x1, y1, wx, wy = _corner_setup(
        grad, jj + field[:, :, 0], ii + field[:, :, 1])
    out = np.zeros((h, w))
    np.add.at(out, (y0, x0), grad * (1.0 - wx) * (1.0 - wy))
    np.add.at(out, (y0, x1), grad * wx * (1.0 - wy))
    np.add.at(out, (y1, x0), grad * (1.0 - wx) * wy)
    np.add.at(out, (y1, x1), grad * wx * wy)
    return out


def scorer_loss(params, feats, field, weight, gt_single, tau=None):
    """Discrimination loss of the scorer on one instance, with the full
    analytic gradient w.r.t. (weights, bias).

    The chain runs loss -> rank map -> score map -> parameters; the rank
    map's warp term backpropagates through the bilinear corner weights.
    """
    from .losses import MARGIN_TAU, discrimination_loss
    if tau is None:
        tau = MARGIN_TAU
    feats = np.asarray(feats, dtype=np.float64)
    sf = score_map(feats, params)
    sr = rank_map(sf, field)
    loss, g_sr = discrimination_loss(sr, weight, gt_single, tau=tau)
    g_sf = g_sr - _warp_adjoint(g_sr, field)
    g_z = g_sf * sf * (1.0 - sf)
    g_w = np.tensordot(g_z, feats, axes=([0, 1], [0, 1]))
    g_b = float(g_z.sum())
    return loss, g_w, g_b


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    tau: float = -0.05

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 0:
            raise ValueError("learning rate and epochs must be nonnegative")


def train_scorer(batches, cfg=None, params=None):
    """Full-batch gradient descent on the discrimination loss.

    batches: iterable of (features, fused field, label mask, binary mask)
    tuples. Returns (params, per-epoch loss trace). Raises on divergence.
    """
    from .losses import make_weight
    cfg = cfg or TrainConfig()
    batches = [(np.asarray(f, dtype=np.float64), fld,
                make_weight(lab), np.asarray(gt, dtype=np.float64))
               for f, fld, lab, gt in batches]
    if params is None:
        params = zero_params(batches[0][0].shape[-1])
    w = params.weights.copy()
    b = params.bias
    trace = []
    for _ in range(cfg.epochs):
        total = 0.0
        gw = np.zeros_like(w)
        gb = 0.0
        for feats, field, weight, gate in batches:
            loss, g_w, g_b = scorer_loss(
                ScorerParams(w, b), feats, field, weight, gate, tau=cfg.tau)
            total += loss
            gw += g_w
            gb += g_b
        if not np.isfinite(total):
            raise ValueError("training diverged: loss is not finite")
        trace.append(total)
        w = w - cfg.learning_rate * gw
        b = b - cfg.learning_rate * gb
    return ScorerParams(w, b), trace
