"""Copy-move forgery detection toolkit.

Matches duplicated regions with cross-scale PatchMatch over dense Zernike
moments, turns offset-field coherence into a localization mask, and splits
the mask into source and target via pairwise ranking.
"""

__version__ = "0.1.0"
