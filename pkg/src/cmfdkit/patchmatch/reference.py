"""Reference soft evaluation with analytic gradients w.r.t. the feature maps.

Scalar loops, no vectorization: this is the readable ground-truth picture
of the evaluation layer, and the path the gradient checks exercise. The
production engines must agree with it numerically.

The objective form used for checking is a projection of the soft offsets:
value = sum_ij proj(i,j) . soft_offset(i,j). Its gradient w.r.t. every
feature entry is assembled by routing softmax and L1 subgradients through
the bilinear corner weights of both the source and target lookups.
"""

import numpy as np

from ..imagecore import sample_bilinear


def soft_objective(cands, feats, cfg, proj):
    """Returns (value, grads) with one gradient array per feature level."""
    cands = np.asarray(cands, dtype=np.float64)
    h, w, k_count, _ = cands.shape
    proj = np.asarray(proj, dtype=np.float64)
    maps = feats.maps
    scales = feats.scales
    grads = [np.zeros_like(m) for m in maps]
    excl = float(cfg.exclusion_radius)
    beta = float(cfg.beta)
    value = 0.0

    for i in range(h):
        for j in range(w):
            src = [sample_bilinear(maps[n], j * scales[n], i * scales[n]) for n in range(3)]
            cand_scores = np.full(k_count, -np.inf)
            routing = [None] * k_count  # (n, m, signs, tgt_sample)
            for k in range(k_count):
                dx, dy = cands[i, j, k]
                if max(abs(dx), abs(dy)) < excl:
                    continue
                best = -np.inf
                route = None
                for m in range(3):
                    tgt = sample_bilinear(maps[m], (j + dx) * scales[m], (i + dy) * scales[m])
                    for n in range(3):
                        diff = src[n].value - tgt.value
                        s_nm = -np.abs(diff).sum()
                        if s_nm > best:
                            best = s_nm
                            route = (n, m, np.sign(diff), tgt)
                cand_scores[k] = best
                routing[k] = route

            top = cand_scores.max()
            if top == -np.inf:
                # everything excluded: carry-over wins with zero gradient
                value += float(proj[i, j] @ cands[i, j, 0])
                continue
            weights = np.exp(beta * (cand_scores - top))
            weights /= weights.sum()
            soft = (weights[:, None] * cands[i, j]).sum(axis=0)
            value += float(proj[i, j] @ soft)

            # d(value)/d(S_k) through the softmax
            cand_proj = cands[i, j] @ proj[i, j]
            soft_proj = float(weights @ cand_proj)
            for k in range(k_count):
                if routing[k] is None or weights[k] == 0.0:
                    continue
                g_s = beta * weights[k] * (cand_proj[k] - soft_proj)
                n, m, signs, tgt = routing[k]
                # S = -sum_c |src_n_c - tgt_c|
                for (ci, cj), wgt in zip(src[n].corners, src[n].weights):
                    grads[n][ci, cj, :] -= g_s * wgt * signs
                for (ci, cj), wgt in zip(tgt.corners, tgt.weights):
                    grads[m][ci, cj, :] += g_s * wgt * signs
    return value, grads


def soft_offsets(cands, feats, cfg):
    """Loop-based soft offsets only (no gradients), for engine comparison."""
    h, w = cands.shape[:2]
    out = np.zeros((h, w, 2))
    cands = np.asarray(cands, dtype=np.float64)
    maps, scales = feats.maps, feats.scales
    excl = float(cfg.exclusion_radius)
    for i in range(h):
        for j in range(w):
            src = [sample_bilinear(maps[n], j * scales[n], i * scales[n]) for n in range(3)]
            k_count = cands.shape[2]
            sc = np.full(k_count, -np.inf)
            for k in range(k_count):
                dx, dy = cands[i, j, k]
                if max(abs(dx), abs(dy)) < excl:
                    continue
                best = -np.inf
                for m in range(3):
                    tgt = sample_bilinear(maps[m], (j + dx) * scales[m], (i + dy) * scales[m])
                    for n in range(3):
                        s_nm = -np.abs(src[n].value - tgt.value).sum()
                        if s_nm > best:
                            best = s_nm
                sc[k] = best
            top = sc.max()
            if top == -np.inf:
                out[i, j] = cands[i, j, 0]
                continue
            wgt = np.exp(cfg.beta * (sc - top))
            wgt /= wgt.sum()
            out[i, j] = (wgt[:, None] * cands[i, j]).sum(axis=0)
    return out
