"""NumPy fallback evaluation engine.

Semantics must stay bit-compatible with the compiled kernel up to float
summation order: per candidate, score = max over the 9 (n, m) scale pairs
of the negated L1 feature distance, with the (n, m) scan running m-outer /
n-inner and strict-greater updates so the first best pair wins ties.
"""

import numpy as np

from ..imagecore import sample_map
from ._core import MatchResult


def evaluate_numpy(cands, feats, cfg):
    cands = np.asarray(cands, dtype=np.float64)
    h, w, k_count, _ = cands.shape
    src = feats.source_vectors()
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")

    scores = np.empty((h, w, k_count))
    pairs = np.zeros((h, w, k_count, 2), dtype=np.uint8)
    excl = float(cfg.exclusion_radius)
    for k in range(k_count):
        dx = cands[:, :, k, 0]
        dy = cands[:, :, k, 1]
        best = np.full((h, w), -np.inf)
        bn = np.zeros((h, w), dtype=np.uint8)
        bm = np.zeros((h, w), dtype=np.uint8)
        for m, (fm, s) in enumerate(zip(feats.maps, feats.scales)):
            tgt = sample_map(fm, (jj + dx) * s, (ii + dy) * s)
            for n in range(3):
                s_nm = -np.abs(src[n] - tgt).sum(axis=-1)
                upd = s_nm > best
                best[upd] = s_nm[upd]
                bn[upd] = n
                bm[upd] = m
        excluded = np.maximum(np.abs(dx), np.abs(dy)) < excl
        best[excluded] = -np.inf
        scores[:, :, k] = best
        pairs[:, :, k, 0] = bn
        pairs[:, :, k, 1] = bm

    kbest = np.argmax(scores, axis=2)  # first max -> lowest candidate index
    gather = (np.arange(h)[:, None], np.arange(w)[None, :], kbest)
    best_scores = scores[gather]
    best_pair = pairs[gather]

    if cfg.mode == "hard":
        offsets = cands[gather]
    else:
        finite = best_scores > -np.inf
        ref = np.where(finite, best_scores, 0.0)
        shifted = cfg.beta * (scores - ref[:, :, None])  # -inf stays -inf
        weights = np.exp(shifted)
        # no admissible candidate anywhere: fall back to the carry-over
        weights[~finite] = 0.0
        weights[~finite, 0] = 1.0
        total = weights.sum(axis=2)
        offsets = (cands * (weights / total[:, :, None])[..., None]).sum(axis=2)

    return MatchResult(np.ascontiguousarray(offsets), best_scores, best_pair)
