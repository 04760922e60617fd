"""Dense local affine fitting of offset fields.

Duplicated regions produce offset fields that are locally affine (a clone
moved by any affine map sends a window of pixels to offsets lying in the
span of the window coordinates), while unmatched background produces
noisy offsets. Fitting a 3-parameter affine model over a small window and
keeping the residual therefore turns the offset field into a per-pixel
forgery-evidence map: small residual = coherent region.

The residual is computed densely with correlation passes instead of a
per-window solve: with Q an orthonormal basis of the window coordinate
span, eps_c^2 = sum(delta_c^2) - sum_i (delta_c . q_i)^2, so one box sum
and three kernel correlations per component cover every window.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import save_image

DLF_RHOS = (7, 9, 11)


@dataclass(frozen=True)
class DlfBasis:
    """Orthonormal basis of the affine span over a rho x rho window."""
    rho: int
    Q: np.ndarray          # (rho*rho, 3), orthonormal columns
    kernels: np.ndarray    # (3, rho, rho), columns reshaped for correlation


@dataclass(frozen=True)
class DlfErrorMaps:
    eps1: np.ndarray  # rho = 7
    eps2: np.ndarray  # rho = 9
    eps3: np.ndarray  # rho = 11

    def as_tuple(self):
        return (self.eps1, self.eps2, self.eps3)


def build_basis(rho):
    """Orthonormalize the homogeneous window coordinates [x, y, 1].

    Rows scan the window row-major, coordinates relative to the center.
    """
    if rho < 3 or rho % 2 == 0:
        raise ValueError("window side must be an odd integer >= 3")
    r = rho // 2
    ii, jj = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1),
                         indexing="ij")
    P = np.stack([jj.ravel(), ii.ravel(), np.ones(rho * rho)], axis=1)
    Q, _ = np.linalg.qr(P)
    kernels = Q.T.reshape(3, rho, rho).copy()
    return DlfBasis(rho=int(rho), Q=Q, kernels=kernels)


def fitting_error(field, basis):
    """Per-pixel squared residual of the windowed affine fit, x and y
    components summed.

    Borders use odd reflection (linear extrapolation about the edge
    value): even reflection would fold the field's gradient back on
    itself and charge every affine field a spurious border residual.
    """
    field = np.asarray(field, dtype=np.float64)
    h, w, _ = field.shape
    if min(h, w) < basis.rho:
        raise ValueError("field smaller than the fitting window")
    r = basis.rho // 2
    box = np.ones((basis.rho, basis.rho))
    total = np.zeros((h, w))
    for c in range(2):
        # constants lie in the fit span, so removing the global mean is
        # exact and tames the cancellation for large offsets
        comp = field[:, :, c] - field[:, :, c].mean()
        pad = np.pad(comp, r, mode="reflect", reflect_type="odd")
        sq = ndimage.correlate(pad * pad, box, mode="constant")[r:-r, r:-r]
        proj = np.zeros((h, w))
        for k in range(3):
            pk = ndimage.correlate(pad, basis.kernels[k],
                                   mode="constant")[r:-r, r:-r]
            proj += pk * pk
        total += sq - proj
    return np.maximum(total, 0.0)


def multiscale(field, rhos=DLF_RHOS):
    """Fitting error at the three window sides (7, 9, 11 by default)."""
    if len(rhos) != 3:
        raise ValueError("expected exactly three window sides")
    errs = [fitting_error(field, build_basis(rho)) for rho in rhos]
    return DlfErrorMaps(eps1=errs[0], eps2=errs[1], eps3=errs[2])


def render_heatmap(err, path, vmax=None):
    """Write an error map as an 8-bit grayscale PNG, linear from 0 to
    vmax (map maximum when not given)."""
    err = np.asarray(err, dtype=np.float64)
    if vmax is None:
        vmax = float(err.max())
    if vmax <= 0.0:
        vmax = 1.0
    gray = np.clip(err / vmax, 0.0, 1.0)
    save_image(np.stack([gray] * 3, axis=-1), path)
