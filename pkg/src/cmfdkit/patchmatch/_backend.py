"""Evaluation backend selection.

The compiled Cython kernel is preferred when its extension module built;
otherwise the NumPy engine takes over. CMFDKIT_BACKEND=python|compiled
forces the choice (forcing "compiled" without the extension is an error).
"""

import os

import numpy as np

from ._core import MatchResult
from ._engine_py import evaluate_numpy

try:
    from . import _pm_kernel
except ImportError:
    _pm_kernel = None

_forced = os.environ.get("CMFDKIT_BACKEND", "").strip().lower()
if _forced == "python":
    ACTIVE_BACKEND = "python"
elif _forced == "compiled":
    if _pm_kernel is None:
        raise ImportError(
            "CMFDKIT_BACKEND=compiled but the compiled kernel is unavailable"
        )
    ACTIVE_BACKEND = "compiled"
elif _forced:
    raise ValueError(f"unknown CMFDKIT_BACKEND value: {_forced!r}")
else:
    ACTIVE_BACKEND = "compiled" if _pm_kernel is not None else "python"


def available_backends():
    return ("python",) if _pm_kernel is None else ("python", "compiled")


def evaluate(cands, feats, cfg, threads=1, backend=None, prev=None):
    """Score a candidate stack and pick per-pixel offsets.

    backend overrides the module default ("python" or "compiled");
    threads only affects the compiled kernel. prev, if given, is the
    MatchResult of the previous iteration whose offsets produced the
    candidate stack's carry-over entry: in hard mode the compiled kernel
    then reuses the known carry score, and looks repeat candidates up in
    the per-pixel score memo carried on that result, instead of
    recomputing them (scoring is deterministic, so results are bitwise
    identical either way).
    """
    which = backend or ACTIVE_BACKEND
    if which == "python":
        return evaluate_numpy(cands, feats, cfg)
    if which != "compiled" or _pm_kernel is None:
        raise ValueError(f"backend unavailable: {which!r}")

    cands = np.ascontiguousarray(cands, dtype=np.float64)
    h, w, k_count, _ = cands.shape
    src = feats.source_vectors()
    offsets = np.empty((h, w, 2))
    scores = np.empty((h, w))
    pairs = np.zeros((h, w, 2), dtype=np.uint8)
    cscores = np.empty((h, w, k_count))
    cpairs = np.zeros((h, w, k_count, 2), dtype=np.uint8)
    cexact = np.zeros((h, w, k_count), dtype=np.uint8)
    m0, m1, m2 = feats.maps
    s0, s1, s2 = feats.scales
    use_prev = int(prev is not None and cfg.mode == "hard")
    if use_prev:
        prev_score = np.ascontiguousarray(prev.scores, dtype=np.float64)
        prev_pair = np.ascontiguousarray(prev.scale_pair, dtype=np.uint8)
    else:
        prev_score = np.empty((1, 1))
        prev_pair = np.zeros((1, 1, 2), dtype=np.uint8)
    memo = getattr(prev, "memo", None) if use_prev else None
    use_memo = int(memo is not None)
    if use_memo:
        memo_cands, memo_score, memo_pair, memo_exact = memo
    else:
        memo_cands = np.empty((1, 1, 1, 2))
        memo_score = np.empty((1, 1, 1))
        memo_pair = np.zeros((1, 1, 1, 2), dtype=np.uint8)
        memo_exact = np.zeros((1, 1, 1), dtype=np.uint8)
    norms = getattr(feats, "_pm_norms", None)
    if norms is None:
        # L1-norm maps for the reverse-triangle prune; reused across
        # iterations since the features never change within a run
        norms = tuple(np.abs(m).sum(axis=-1) for m in feats.maps)
        norms = norms + (np.ascontiguousarray(np.abs(src).sum(axis=-1)),)
        feats._pm_norms = norms
    _pm_kernel.evaluate_kernel(
        cands, src, m0, m1, m2, s0, s1, s2,
        float(cfg.beta), float(cfg.exclusion_radius),
        1 if cfg.mode == "soft" else 0, int(max(1, threads)),
        prev_score, prev_pair, use_prev,
        memo_cands, memo_score, memo_pair, memo_exact, use_memo,
        norms[0], norms[1], norms[2], norms[3],
        offsets, scores, pairs, cscores, cpairs, cexact,
    )
    result = MatchResult(offsets, scores, pairs)
    if cfg.mode == "hard":
        result.memo = (cands, cscores, cpairs, cexact)
    return result
