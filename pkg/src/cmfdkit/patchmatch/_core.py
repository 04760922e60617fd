"""Shared PatchMatch machinery: config, feature pyramid wrapper, counter RNG,
initialization, propagation, and random search.

Randomness is counter-based (splitmix64 finalizer over a keyed state) so
every draw is a pure function of (seed, stream, iteration, pixel, counter).
That makes init and search deterministic under any evaluation schedule or
thread count.

Offset convention: offsets[..., 0] = dx (columns), offsets[..., 1] = dy
(rows); pixel (i, j) matches (i + dy, j + dx).
"""

from dataclasses import dataclass

import numpy as np

from ..imagecore import sample_map

U64 = np.uint64
_GOLD = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)

STREAM_INIT = 1
STREAM_SEARCH = 2

# stencil directions clockwise from "up"; zero-order propagation uses the
# 4 axis neighbors a, c, e, g; first-order uses all 8
_DIRS8 = (
    (-1, 0),   # a
    (-1, 1),   # b
    (0, 1),    # c
    (1, 1),    # d
    (1, 0),    # e
    (1, -1),   # f
    (0, -1),   # g
    (-1, -1),  # h
)
_DIRS4 = (_DIRS8[0], _DIRS8[2], _DIRS8[4], _DIRS8[6])

CANDIDATE_COUNT = 17


def _mix(z):
    # splitmix64 finalizer; u64 arithmetic wraps by design
    with np.errstate(over="ignore"):
        z = (z ^ (z >> U64(30))) * _MIX1
        z = (z ^ (z >> U64(27))) * _MIX2
        return z ^ (z >> U64(31))


def _mix_owned(z):
    # in-place splitmix64 over an owned u64 array; same values as _mix
    # without the temporary churn (this runs 17 times per iteration)
    t = np.empty_like(z)
    with np.errstate(over="ignore"):
        np.right_shift(z, U64(30), out=t)
        z ^= t
        z *= _MIX1
        np.right_shift(z, U64(27), out=t)
        z ^= t
        z *= _MIX2
        np.right_shift(z, U64(31), out=t)
        z ^= t
    return z


def _chain(state, value):
    """Absorb one u64 (scalar or array) into a hash state."""
    with np.errstate(over="ignore"):
        return _mix(state + _GOLD * (value + U64(1)))


_PIXEL_INDEX_CACHE = {}


def _pixel_index(h, w):
    got = _PIXEL_INDEX_CACHE.get((h, w))
    if got is None:
        ii, jj = np.meshgrid(
            np.arange(h, dtype=np.uint64), np.arange(w, dtype=np.uint64),
            indexing="ij")
        got = ii * U64(w) + jj
        _PIXEL_INDEX_CACHE.clear()  # one working size at a time
        _PIXEL_INDEX_CACHE[(h, w)] = got
    return got


def _pixel_states(seed, stream, iteration, h, w):
    """(H, W) u64 hash states, one independent stream per pixel."""
    s = _mix(U64(seed & 0xFFFFFFFFFFFFFFFF))
    s = _chain(s, U64(stream))
    s = _chain(s, U64(iteration))
    with np.errstate(over="ignore"):
        z = _pixel_index(h, w) + U64(1)
        z *= _GOLD
        z += s
    return _mix_owned(z)


def _draw(states, counter):
    """counter-th u64 drawn from each state."""
    with np.errstate(over="ignore"):
        z = states + _GOLD * U64(counter + 1)
    return _mix_owned(z)


@dataclass
class PMConfig:
    iterations: int = 10
    beta: float = 20.0
    search_radius: int = 50
    exclusion_radius: int = 8
    mode: str = "soft"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.search_radius < 0 or self.exclusion_radius < 0:
            raise ValueError("radii must be >= 0")
        if self.mode not in ("soft", "hard"):
            raise ValueError("mode must be 'soft' or 'hard'")


class ScaleFeatures:
    """Per-scale feature maps sharing the scale-1 coordinate frame.

    maps[k] has its own native dims; a lookup of base-frame coordinates
    (x, y) into level k samples at (x * scales[k], y * scales[k]).
    Exactly three levels; scales must include 1.0 (the reference grid).
    """

    def __init__(self, maps, scales):
        if len(maps) != 3 or len(scales) != 3:
            raise ValueError("expected exactly three scale levels")
        self.maps = tuple(np.ascontiguousarray(m, dtype=np.float64) for m in maps)
        self.scales = tuple(float(s) for s in scales)
        if 1.0 not in self.scales:
            raise ValueError("one level must have scale 1.0")
        depths = {m.shape[2] for m in self.maps}
        if len(depths) != 1:
            raise ValueError("levels must share feature depth")
        ref = self.maps[self.scales.index(1.0)]
        self.height, self.width = ref.shape[:2]
        self.depth = ref.shape[2]
        self._sources = None

    @classmethod
    def from_pyramid_maps(cls, down, base, up, scale_down=0.75, scale_up=1.5):
        return cls((down, base, up), (scale_down, 1.0, scale_up))

    def source_vectors(self):
        """(3, H, W, D): each level sampled at the base grid, cached."""
        if self._sources is None:
            h, w = self.height, self.width
            ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
            src = np.empty((3, h, w, self.depth))
            for k, (fm, s) in enumerate(zip(self.maps, self.scales)):
                if s == 1.0 and fm.shape[:2] == (h, w):
                    src[k] = fm
                else:
                    src[k] = sample_map(fm, jj * s, ii * s)
            self._sources = np.ascontiguousarray(src)
        return self._sources


class MatchResult:
    """Output of one evaluation: chosen offsets, best scores, scale pair.

    offsets     (H, W, 2) float64, [dx, dy]
    scores      (H, W) float64, best matching score per pixel (<= 0)
    scale_pair  (H, W, 2) uint8, (n, m) level indices of the winning pair
    """

    def __init__(self, offsets, scores, scale_pair):
        self.offsets = offsets
        self.scores = scores
        self.scale_pair = scale_pair
        # per-candidate score table the compiled backend carries between
        # iterations so repeat candidates skip re-evaluation
        self.memo = None


def clamp_valid(cands, h, w):
    """Clamp offsets so the target (i+dy, j+dx) stays inside the image.

    Accepts (H, W, 2) or (H, W, K, 2); the leading two axes are the grid.
    """
    out = np.array(cands, dtype=np.float64, copy=True)
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    extra = out.ndim - 3
    ii = ii.reshape((h, w) + (1,) * extra)
    jj = jj.reshape((h, w) + (1,) * extra)
    out[..., 0] = np.clip(jj + out[..., 0], 0.0, w - 1.0) - jj
    out[..., 1] = np.clip(ii + out[..., 1], 0.0, h - 1.0) - ii
    return out


def init_offsets(h, w, cfg):
    """Uniform random valid offsets with the self-match zone excluded.

    Every pixel draws a target uniformly over grid positions at Chebyshev
    distance >= exclusion_radius from itself (rejection sampling on the
    pixel's own counter stream, so the field is schedule-independent).
    """
    if h < 2 or w < 2:
        raise ValueError("image must be at least 2x2")
    excl = int(cfg.exclusion_radius)
    # the center pixel has the smallest max Chebyshev reach
    reach = max(h - 1 - (h - 1) // 2, w - 1 - (w - 1) // 2)
    if reach < excl:
        raise ValueError("image too small to satisfy the exclusion radius")
    states = _pixel_states(cfg.seed, STREAM_INIT, 0, h, w)
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    ti = np.zeros((h, w))
    tj = np.zeros((h, w))
    pending = np.ones((h, w), dtype=bool)
    ctr = 0
    while pending.any():
        ci = (_draw(states, 2 * ctr) % U64(h)).astype(np.float64)
        cj = (_draw(states, 2 * ctr + 1) % U64(w)).astype(np.float64)
        ok = pending & (
            np.maximum(np.abs(ci - ii), np.abs(cj - jj)) >= excl
        )
        ti[ok] = ci[ok]
        tj[ok] = cj[ok]
        pending &= ~ok
        ctr += 1
    return np.stack([tj - jj, ti - ii], axis=-1)


def propagate(field):
    """12 propagation candidates: 4 zero-order shifts, 8 first-order
    extrapolations 2*d(neighbor) - d(neighbor2), realized as circular
    whole-map shifts and clamped to validity."""
    f = np.asarray(field, dtype=np.float64)
    h, w = f.shape[:2]
    out = []
    # rolled[i, j] = f[i + di, j + dj] needs shift (-di, -dj)
    for di, dj in _DIRS4:
        out.append(np.roll(f, (-di, -dj), axis=(0, 1)))
    for di, dj in _DIRS8:
        n1 = np.roll(f, (-di, -dj), axis=(0, 1))
        n2 = np.roll(f, (-2 * di, -2 * dj), axis=(0, 1))
        out.append(2.0 * n1 - n2)
    return [clamp_valid(c, h, w) for c in out]


def random_search(field, cfg, iter_index):
    """4 search candidates: integer perturbations, two at the full search
    radius and two fine tiers at 4 px and 1 px (capped by the radius).

    The full-radius draws reseed long displacements; the fine tiers snap
    near-miss offsets onto the exact match, which neighbor propagation
    alone cannot do (it copies offsets but never adjusts them)."""
    f = np.asarray(field, dtype=np.float64)
    h, w = f.shape[:2]
    states = _pixel_states(cfg.seed, STREAM_SEARCH, iter_index, h, w)
    base = int(cfg.search_radius)
    out = []
    for c, radius in enumerate((base, base, min(4, base), min(1, base))):
        span = U64(2 * radius + 1)
        ddy = (_draw(states, 2 * c) % span).astype(np.float64) - radius
        ddx = (_draw(states, 2 * c + 1) % span).astype(np.float64) - radius
        out.append(clamp_valid(f + np.stack([ddx, ddy], axis=-1), h, w))
    return out


def _roll_into(dst, f, di, dj):
    # dst[i, j] = f[(i + di) % h, (j + dj) % w] without a temp copy
    np.copyto(dst, np.roll(f, (-di, -dj), axis=(0, 1)))


def assemble_candidates(field, cfg, iter_index):
    """(H, W, 17, 2) candidate stack: carry-over, 12 propagation, 4 search.

    Produces the same values as clamp_valid/propagate/random_search but
    builds into one preallocated array and clamps in a single pass, which
    matters at 17 full-map candidates per iteration.
    """
    f = np.asarray(field, dtype=np.float64)
    h, w = f.shape[:2]
    out = np.empty((h, w, CANDIDATE_COUNT, 2), dtype=np.float64)
    out[:, :, 0] = f
    for k, (di, dj) in enumerate(_DIRS4):
        _roll_into(out[:, :, 1 + k], f, di, dj)
    for k, (di, dj) in enumerate(_DIRS8):
        n1 = np.roll(f, (-di, -dj), axis=(0, 1))
        n2 = np.roll(f, (-2 * di, -2 * dj), axis=(0, 1))
        np.copyto(out[:, :, 5 + k], 2.0 * n1 - n2)
    states = _pixel_states(cfg.seed, STREAM_SEARCH, iter_index, h, w)
    base = int(cfg.search_radius)
    for c, radius in enumerate((base, base, min(4, base), min(1, base))):
        span = U64(2 * radius + 1)
        ddy = (_draw(states, 2 * c) % span).astype(np.float64) - radius
        ddx = (_draw(states, 2 * c + 1) % span).astype(np.float64) - radius
        out[:, :, 13 + c, 0] = f[:, :, 0] + ddx
        out[:, :, 13 + c, 1] = f[:, :, 1] + ddy
    jj = np.arange(w, dtype=np.float64)[None, :, None]
    ii = np.arange(h, dtype=np.float64)[:, None, None]
    out[..., 0] += jj
    np.clip(out[..., 0], 0.0, w - 1.0, out=out[..., 0])
    out[..., 0] -= jj
    out[..., 1] += ii
    np.clip(out[..., 1], 0.0, h - 1.0, out=out[..., 1])
    out[..., 1] -= ii
    return out
