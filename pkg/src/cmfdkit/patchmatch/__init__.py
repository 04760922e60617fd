"""Cross-scale PatchMatch over dense feature maps.

The engine alternates propagation (neighbors vote with zero- and
first-order extrapolated offsets), random search on shrinking tiers, and
cross-scale evaluation that scores every candidate against all 9 scale
pairs and keeps the best. Soft mode blends candidates with a softmax over
scores (differentiable); hard mode picks the argmax.
"""

from ._backend import ACTIVE_BACKEND, available_backends, evaluate
from ._core import (
    CANDIDATE_COUNT,
    MatchResult,
    PMConfig,
    ScaleFeatures,
    assemble_candidates,
    clamp_valid,
    init_offsets,
    propagate,
    random_search,
)

__all__ = [
    "ACTIVE_BACKEND",
    "CANDIDATE_COUNT",
    "MatchResult",
    "PMConfig",
    "ScaleFeatures",
    "assemble_candidates",
    "available_backends",
    "clamp_valid",
    "evaluate",
    "init_offsets",
    "propagate",
    "random_search",
    "run",
]


def run(feats, cfg, threads=1, backend=None):
    """Full PatchMatch: init, then iterations of propagate/search/evaluate.

    The evaluation output feeds the next iteration's propagation, so in
    hard mode per-pixel scores are non-decreasing (the carry-over
    candidate preserves the incumbent).
    """
    field = init_offsets(feats.height, feats.width, cfg)
    result = None
    for it in range(cfg.iterations):
        cands = assemble_candidates(field, cfg, it)
        result = evaluate(cands, feats, cfg, threads=threads,
                          backend=backend, prev=result)
        field = result.offsets
    return result
