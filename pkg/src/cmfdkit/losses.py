"""Training losses with analytic gradients, and the finite-difference
gradient checker used across modules."""

import numpy as np

DICE_EPS = 1e-6
MARGIN_TAU = -0.05


def dice_loss(m, gt):
    """Overlap loss 1 - (2*sum(gt*m) + eps) / (sum(gt) + sum(m) + eps).

    Returns (loss, gradient w.r.t. m). The epsilon keeps empty masks
    defined and bounds the loss near [0, 1].
    """
    m = np.asarray(m, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if m.shape != gt.shape:
        raise ValueError("mask dimensions differ")
    num = 2.0 * float((gt * m).sum()) + DICE_EPS
    den = float(gt.sum() + m.sum()) + DICE_EPS
    loss = 1.0 - num / den
    grad = -(2.0 * gt * den - num) / (den * den)
    return loss, grad


def make_weight(labels):
    """Weight matrix from a 3-channel label mask: source -1, target +1,
    background 0."""
    labels = np.asarray(labels)
    w = np.zeros(labels.shape, dtype=np.float64)
    w[labels == 1] = -1.0
    w[labels == 2] = 1.0
    return w


def discrimination_loss(sr, weight, gt_single, tau=MARGIN_TAU):
    """Hinge penalty sum over copy-move pixels of max(0, sr*weight - tau).

    Correctly ranked pixels have sr*weight <= tau < 0 and contribute
    nothing; background (gt_single = 0) is ignored. Returns (loss,
    gradient w.r.t. sr); the hinge kink uses the zero subgradient.
    """
    sr = np.asarray(sr, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    gate = np.asarray(gt_single, dtype=np.float64)
    if not (sr.shape == weight.shape == gate.shape):
        raise ValueError("mask dimensions differ")
    tilted = sr * weight
    active = (tilted > tau) & (gate > 0)
    loss = float((tilted - tau)[active].sum())
    grad = np.where(active, weight, 0.0)
    return loss, grad


def fused_loss(l_dfm, l_mrd, l_dis):
    """Unweighted sum of the three training losses."""
    return l_dfm + l_mrd + l_dis


def grad_check_directional(f, x, h=1e-5, directions=100, rng=None):
    """Max relative error between analytic directional derivatives g.v
    and central differences along random unit directions.

    Preferred for objectives whose individual coordinates can have
    near-zero derivatives: the direction aggregates the whole gradient,
    so the comparison never divides by roundoff noise.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    _, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != x.shape:
        raise ValueError("gradient length does not match the input")
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for _ in range(directions):
        v = rng.standard_normal(x.size)
        v /= np.linalg.norm(v)
        fp, _ = f(x + h * v)
        fm, _ = f(x - h * v)
        fd = (fp - fm) / (2.0 * h)
        if not np.isfinite(fd):
            raise ValueError("non-finite value in gradient check")
        err = abs(float(grad @ v) - fd) / max(1e-8, abs(fd))
        worst = max(worst, err)
    return worst


def grad_check(f, x, h=1e-5, max_coords=None, rng=None):
    """Max relative error between the analytic gradient of f and central
    finite differences.

    f maps a flat vector to (value, gradient). When max_coords is given,
    only that many randomly chosen coordinates are probed.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    _, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != x.shape:
        raise ValueError("gradient length does not match the input")
    coords = np.arange(x.size)
    if max_coords is not None and x.size > max_coords:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(x.size, size=max_coords, replace=False)
    worst = 0.0
    for i in coords:
        xp = x.copy()
        xp[i] += h
        fp, _ = f(xp)
        xm = x.copy()
        xm[i] -= h
        fm, _ = f(xm)
        fd = (fp - fm) / (2.0 * h)
        if not np.isfinite(fd) or not np.isfinite(grad[i]):
            raise ValueError("non-finite value in gradient check")
        err = abs(grad[i] - fd) / max(1e-8, abs(fd))
        worst = max(worst, err)
    return worst
