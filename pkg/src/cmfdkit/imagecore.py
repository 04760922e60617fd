"""Image primitives shared by every stage of the detector.

Conventions (used consistently across the package):

* images are float64 in [0, 1]; color is (H, W, 3), single channel is (H, W)
* feature maps are float64 (H, W, D)
* pixel (i, j) = (row, col); continuous sample coordinates are (x, y) with
  x along columns and y along rows, so pixel (i, j) sits at (x=j, y=i)
* bilinear sampling clamps coordinates to the border (no wraparound)
* resizing is align-corners-false: output pixel k samples the input at
  (k + 0.5) / scale - 0.5
"""

import os
import struct

import numpy as np
from PIL import Image as _PILImage

# Tensor file format: magic, then u32 LE rank, u32 LE dims, f32 LE row-major.
TENSOR_MAGIC = b"DPRLTNSR"

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])  # ITU-R 601 luma


def load_image(path):
    """Load an image file as float64 (H, W, 3) in [0, 1].

    Grayscale inputs are expanded to three channels; alpha is dropped.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    with _PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(img, path):
    """Write a float image in [0, 1] to disk as 8-bit PNG/JPEG (by extension)."""
    arr = np.asarray(img, dtype=np.float64)
    out = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    tmp = path + ".tmp"
    _PILImage.fromarray(out).save(tmp, format=_format_for(path))
    os.replace(tmp, path)


def _format_for(path):
    ext = os.path.splitext(path)[1].lower()
    if ext in (".jpg", ".jpeg"):
        return "JPEG"
    return "PNG"


def to_grayscale(img):
    """ITU-R 601 luma. (H, W, 3) -> (H, W); single-channel passes through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ _GRAY_WEIGHTS
    raise ValueError(f"expected (H, W[, 1|3]) image, got shape {arr.shape}")


def round_half_up(x):
    """Round with ties away from zero toward +inf (3.5 -> 4, 4.5 -> 5)."""
    return int(np.floor(x + 0.5))


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize with align-corners-false coordinates and border clamp.

    Works on (H, W) and (H, W, C) arrays. Output dims must be >= 1.
    """
    arr = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be positive")
    h, w = arr.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    xg, yg = np.meshgrid(xs, ys)
    return sample_map(arr, xg, yg)


def scale_image(img, factor):
    """Resize by a scale factor; output dims are round-half-up(factor * dim)."""
    h, w = np.asarray(img).shape[:2]
    return resize_bilinear(img, round_half_up(factor * h), round_half_up(factor * w))


class ScalePyramid:
    """Three resampled copies of an image: down, base (unchanged), up.

    The down/up factors default to 0.75 / 1.5. levels() yields
    (array, scale) pairs in (down, base, up) order; scale is the factor
    that maps base-grid coordinates onto that level's grid.
    """

    def __init__(self, down, base, up, scale_down, scale_up):
        self.down = down
        self.base = base
        self.up = up
        self.scale_down = scale_down
        self.scale_up = scale_up

    def levels(self):
        return (
            (self.down, self.scale_down),
            (self.base, 1.0),
            (self.up, self.scale_up),
        )


def build_pyramid(img, scale_down=0.75, scale_up=1.5):
    arr = np.asarray(img, dtype=np.float64)
    return ScalePyramid(
        scale_image(arr, scale_down),
        arr,
        scale_image(arr, scale_up),
        scale_down,
        scale_up,
    )


def _corner_setup(fm, x, y):
    """Shared clamp/floor/weight logic for bilinear sampling.

    Returns (x0, y0, x1, y1, wx, wy) with integer corner indices already
    clamped to the map. Coordinates outside the map clamp to the border,
    so the interpolation weight goes to zero there.
    """
    h, w = fm.shape[:2]
    xf = np.clip(x, 0.0, w - 1.0)
    yf = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xf).astype(np.intp)
    y0 = np.floor(yf).astype(np.intp)
    wx = xf - x0
    wy = yf - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return x0, y0, x1, y1, wx, wy


def sample_map(fm, x, y):
    """Bilinear lookup of a feature map at arbitrary (x, y) coordinate arrays.

    fm is (H, W) or (H, W, D); x and y broadcast to the output grid shape.
    Returns x.shape (+ (D,) when fm has channels).
    """
    fm = np.asarray(fm, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0, y0, x1, y1, wx, wy = _corner_setup(fm, x, y)
    if fm.ndim == 3:
        wx = wx[..., None]
        wy = wy[..., None]
    f00 = fm[y0, x0]
    f01 = fm[y0, x1]
    f10 = fm[y1, x0]
    f11 = fm[y1, x1]
    top = f00 * (1.0 - wx) + f01 * wx
    bot = f10 * (1.0 - wx) + f11 * wx
    return top * (1.0 - wy) + bot * wy


class BilinearSample:
    """A single bilinear lookup plus everything needed for its gradients.

    value      sampled vector (D,) (or scalar for 2-D maps)
    corners    four (row, col) index pairs, row-major order 00, 01, 10, 11
    weights    matching interpolation weights, sum to 1
    dx, dy     derivative of the value w.r.t. the sample coordinates
    """

    def __init__(self, value, corners, weights, dx, dy):
        self.value = value
        self.corners = corners
        self.weights = weights
        self.dx = dx
        self.dy = dy


def sample_bilinear(fm, x, y):
    """Scalar-point version of sample_map that also reports corner weights.

    The corner/weight report is what makes scores differentiable w.r.t.
    the feature maps: d(value)/d(fm[corner]) = weight.
    """
    fm = np.asarray(fm, dtype=np.float64)
    x0, y0, x1, y1, wx, wy = _corner_setup(fm, np.float64(x), np.float64(y))
    x0 = int(x0)
    y0 = int(y0)
    x1 = int(x1)
    y1 = int(y1)
    wx = float(wx)
    wy = float(wy)
    f00 = fm[y0, x0]
    f01 = fm[y0, x1]
    f10 = fm[y1, x0]
    f11 = fm[y1, x1]
    value = (
        f00 * (1.0 - wx) * (1.0 - wy)
        + f01 * wx * (1.0 - wy)
        + f10 * (1.0 - wx) * wy
        + f11 * wx * wy
    )
    # Coordinate derivatives vanish where the clamp is active; the corner
    # weights already encode that (x1 == x0 there, so the terms cancel).
    dx = (f01 - f00) * (1.0 - wy) + (f11 - f10) * wy
    dy = (f10 - f00) * (1.0 - wx) + (f11 - f01) * wx
    corners = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))
    weights = (
        (1.0 - wx) * (1.0 - wy),
        wx * (1.0 - wy),
        (1.0 - wx) * wy,
        wx * wy,
    )
    return BilinearSample(value, corners, weights, dx, dy)


def write_tensor(arr, path):
    """Serialize an array to the exchange tensor format.

    Layout: 8-byte magic, u32 LE rank, u32 LE dims, float32 LE payload in
    row-major order. Values are stored as float32; pass float32 data when
    bit-exact round-trips matter.
    """
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    for d in arr.shape:
        if d >= 2**32:
            raise ValueError("dimension overflow: tensor dims must fit in u32")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype("<f4", copy=False).tobytes(order="C")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_tensor(path):
    """Read a tensor file written by write_tensor. Returns float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(TENSOR_MAGIC) + 4:
        raise ValueError("corrupt tensor file: truncated header")
    if blob[: len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        raise ValueError("magic number mismatch: not a tensor file")
    off = len(TENSOR_MAGIC)
    (rank,) = struct.unpack_from("<I", blob, off)
    off += 4
    if rank > 32:
        raise ValueError(f"corrupt tensor file: implausible rank {rank}")
    if len(blob) < off + 4 * rank:
        raise ValueError("corrupt tensor file: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    count = 1
    for d in dims:
        count *= d
    if count * 4 != len(blob) - off:
        raise ValueError("corrupt tensor file: payload size mismatch")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    return data.reshape(dims).astype(np.float32, copy=True)
