"""End-to-end copy-move detection, evaluation, and fixture generation.

Dataflow per image: resize to the working size, build a three-level
scale pyramid, extract dense moment features per level, run the matcher
twice (full complex features, then rotation-invariant magnitudes), fit
both offset fields, fuse everything into a probability mask, then rank
matched pairs to split the mask into source and target.
"""

import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import dlf, patchmatch, predictor, ranking, synthgen, zernike
from .imagecore import (build_pyramid, load_image, resize_bilinear,
                        save_image, to_grayscale)
from .patchmatch import PMConfig, ScaleFeatures
from .predictor import PredictorConfig


@dataclass(frozen=True)
class PipelineConfig:
    input_size: int = 448
    scale_down: float = 0.75
    scale_up: float = 1.5
    moment_order: int = 5
    moment_diameter: int = 17
    iterations: int = 10
    beta: float = 20.0
    # image-wide: the top random-search tier then reseeds globally every
    # iteration, which long displacements need (candidates clamp to the
    # image, so an over-wide radius costs nothing)
    search_radius: int = 448
    exclusion_radius: int = 8
    mode: str = "hard"
    seed: int = 0
    threads: int = 1
    # tuned on the synthetic fixture suite: duplicate interiors sit at
    # <= 1 px^2 fitting error, random background above ~100 px^2
    error_scale: float = 8.0
    sharpness: float = 8.0
    min_region_area: int = 64
    consistency_tol: float = 2.0
    binarize_threshold: float = 0.5
    scorer_params: str = ""    # tensor file path; empty = neutral scorer

    def pm_config(self):
        return PMConfig(iterations=self.iterations, beta=self.beta,
                        search_radius=self.search_radius,
                        exclusion_radius=self.exclusion_radius,
                        mode=self.mode, seed=self.seed)

    def predictor_config(self):
        return PredictorConfig(
            error_scale=self.error_scale, sharpness=self.sharpness,
            min_region_area=self.min_region_area,
            consistency_tol=self.consistency_tol,
            binarize_threshold=self.binarize_threshold)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def parse_config_file(path):
    """key=value lines, # comments; values typed by the config field."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    return values


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def config_from_mapping(values, base=None):
    base = base or PipelineConfig()
    converted = {}
    for key, val in values.items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key: {key}")
        kind = _FIELD_TYPES[key]
        if isinstance(val, str):
            if kind == "int":
                val = int(val)
            elif kind == "float":
                val = float(val)
        converted[key] = val
    return replace(base, **converted)


def _atomic_json(obj, path):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _scale_features(pyramid, kernels, view):
    maps = []
    for level, _scale in pyramid.levels():
        feats = zernike.extract(level, kernels)
        maps.append(getattr(feats, view))
    return ScaleFeatures(maps=tuple(maps),
                         scales=(pyramid.scale_down, 1.0, pyramid.scale_up))


def _min_error_maps(a, b):
    return dlf.DlfErrorMaps(eps1=np.minimum(a.eps1, b.eps1),
                            eps2=np.minimum(a.eps2, b.eps2),
                            eps3=np.minimum(a.eps3, b.eps3))


class StageFailure(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage


def detect(image_path, cfg=None, out_dir=None):
    """Run the full pipeline on one image.

    Writes m.png (probability, gray), m_b.png (binary), m_c.png
    (background blue / source green / target red) and report.json under
    out_dir, and returns the report dict.
    """
    cfg = cfg or PipelineConfig()
    timings = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:
            raise StageFailure(name, exc) from exc
        timings[name] = (time.perf_counter() - t0) * 1000.0
        return out

    def load_stage():
        img = load_image(image_path)
        gray = to_grayscale(img)
        return resize_bilinear(gray, cfg.input_size, cfg.input_size)

    gray = stage("load", load_stage)
    pyramid = stage("pyramid",
                    lambda: build_pyramid(gray, cfg.scale_down, cfg.scale_up))
    kernels = zernike.make_kernels(cfg.moment_order, cfg.moment_diameter)
    feats1 = stage("features_complex",
                   lambda: _scale_features(pyramid, kernels, "complex_map"))
    feats2 = stage("features_magnitude",
                   lambda: _scale_features(pyramid, kernels, "magnitude_map"))
    pm_cfg = cfg.pm_config()
    match1 = stage("match_complex",
                   lambda: patchmatch.run(feats1, pm_cfg, threads=cfg.threads))
    match2 = stage("match_magnitude",
                   lambda: patchmatch.run(feats2, pm_cfg, threads=cfg.threads))
    maps1 = stage("fit_complex", lambda: dlf.multiscale(match1.offsets))
    maps2 = stage("fit_magnitude", lambda: dlf.multiscale(match2.offsets))

    def predict_stage():
        m = predictor.predict(maps1, match1.offsets, maps2, match2.offsets,
                              cfg.predictor_config())
        # target-branch refinement hook; a learned refiner can slot in here
        m = predictor.refine_max(m, np.zeros_like(m))
        return m, predictor.binarize(m, cfg.binarize_threshold)

    prob, mb = stage("predict", predict_stage)

    def ranking_stage():
        fused = ranking.fuse_offsets(match1.offsets, match2.offsets, mb)
        feats = ranking.build_features(gray, _min_error_maps(maps1, maps2),
                                       fused, prob)
        params = (ranking.load_params(cfg.scorer_params)
                  if cfg.scorer_params else
                  ranking.zero_params(feats.shape[-1]))
        sr = ranking.rank_map(ranking.score_map(feats, params), fused)
        return ranking.three_channel(sr, mb)

    labels = stage("ranking", ranking_stage)

    report = {
        "image": str(image_path),
        "input_size": cfg.input_size,
        "config": cfg.to_dict(),
        "timings_ms": timings,
        "foreground_pixels": int(mb.sum()),
        "label_pixels": {"background": int((labels == 0).sum()),
                         "source": int((labels == 1).sum()),
                         "target": int((labels == 2).sum())},
        "outputs": {},
    }
    if out_dir is not None:
        def write_stage():
            os.makedirs(out_dir, exist_ok=True)
            paths = {"m": os.path.join(out_dir, "m.png"),
                     "m_b": os.path.join(out_dir, "m_b.png"),
                     "m_c": os.path.join(out_dir, "m_c.png"),
                     "report": os.path.join(out_dir, "report.json")}
            save_image(np.stack([prob] * 3, axis=-1), paths["m"])
            save_image(np.stack([mb.astype(np.float64)] * 3, axis=-1),
                       paths["m_b"])
            ranking.render_three_channel(labels, paths["m_c"])
            report["outputs"] = {k: v for k, v in paths.items()
                                 if k != "report"}
            _atomic_json(report, paths["report"])

        stage("write", write_stage)
        report["timings_ms"] = timings
    return report


def binary_metrics(pred, gt):
    """Pixel precision/recall/F1 with the empty-mask conventions: a
    metric whose denominator is zero is 1 when the other set is also
    empty, else 0."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    tp = float((pred & gt).sum())
    np_pred = float(pred.sum())
    np_gt = float(gt.sum())
    if np_pred == 0:
        precision = 1.0 if np_gt == 0 else 0.0
    else:
        precision = tp / np_pred
    if np_gt == 0:
        recall = 1.0 if np_pred == 0 else 0.0
    else:
        recall = tp / np_gt
    if precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


def label_metrics(pred_labels, gt_labels):
    """Per-class binary metrics over a 3-way label map."""
    names = {0: "background", 1: "source", 2: "target"}
    return {name: binary_metrics(pred_labels == lab, gt_labels == lab)
            for lab, name in names.items()}


def _mean_metrics(per_image):
    if not per_image:
        return {}
    keys = per_image[0].keys()
    return {k: float(np.mean([m[k] for m in per_image])) for k in keys}


def evaluate(pred_dir, gt_dir, out_path=None):
    """Compare detection outputs with fixture ground truth, averaging
    per-image metrics (not pooled pixels)."""
    names = sorted(d for d in os.listdir(gt_dir)
                   if os.path.isfile(os.path.join(gt_dir, d, "m_gt.png")))
    if not names:
        raise ValueError(f"no fixtures with ground truth under {gt_dir}")
    per_image = {}
    singles = []
    classes = []
    for name in names:
        pdir = os.path.join(pred_dir, name)
        if not os.path.isfile(os.path.join(pdir, "m_b.png")):
            raise FileNotFoundError(f"missing prediction for {name}")
        pred_mb = to_grayscale(load_image(os.path.join(pdir, "m_b.png")))
        gt_mb = to_grayscale(load_image(os.path.join(gt_dir, name,
                                                     "m_gt.png")))
        if pred_mb.shape != gt_mb.shape:
            # predictions come back at the working size; compare in the
            # ground-truth frame
            pred_mb = resize_bilinear(pred_mb, *gt_mb.shape)
        single = binary_metrics(pred_mb >= 0.5, gt_mb >= 0.5)
        entry = {"single_channel": single}
        singles.append(single)
        gt_mc_path = os.path.join(gt_dir, name, "mc_gt.png")
        pred_mc_path = os.path.join(pdir, "m_c.png")
        if os.path.isfile(gt_mc_path) and os.path.isfile(pred_mc_path):
            pred_mc = load_image(pred_mc_path)
            gt_mc = load_image(gt_mc_path)
            if pred_mc.shape != gt_mc.shape:
                pred_mc = resize_bilinear(pred_mc, *gt_mc.shape[:2])
            pred_lab = ranking.labels_from_render(pred_mc)
            gt_lab = ranking.labels_from_render(gt_mc)
            entry["three_channel"] = label_metrics(pred_lab, gt_lab)
            classes.append(entry["three_channel"])
        per_image[name] = entry
    result = {
        "images": per_image,
        "mean_single_channel": _mean_metrics(singles),
    }
    if classes:
        result["mean_three_channel"] = {
            cls: _mean_metrics([c[cls] for c in classes])
            for cls in ("background", "source", "target")}
    if out_path:
        _atomic_json(result, out_path)
    return result


FIXTURE_KINDS = ("translation", "rotation-scale", "full", "degraded",
                 "pristine")


def _spec_for_kind(kind, size, rng, min_side):
    if kind == "translation":
        return synthgen.random_spec(size, size, rng, min_side=min_side)
    if kind == "rotation-scale":
        return synthgen.random_spec(size, size, rng,
                                    rotation_range=(-45.0, 45.0),
                                    scale_range=(0.8, 1.25),
                                    min_side=min_side)
    if kind == "full":
        return synthgen.random_spec(size, size, rng,
                                    rotation_range=(-180.0, 180.0),
                                    scale_range=(0.5, 2.0),
                                    min_side=min_side)
    if kind == "degraded":
        return synthgen.random_spec(size, size, rng, min_side=min_side)
    raise ValueError(f"unknown fixture kind: {kind}")


def gen_fixtures(count, out_dir, seed=0, kind="translation", size=448,
                 min_side=64):
    """Write labeled forgery fixtures: image.png plus exact masks and the
    spec, one directory per fixture, enumerated in specs.json."""
    if kind not in FIXTURE_KINDS:
        raise ValueError(f"unknown fixture kind: {kind}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    index = []
    for i in range(count):
        name = f"fixture_{i:03d}"
        fdir = os.path.join(out_dir, name)
        os.makedirs(fdir, exist_ok=True)
        base_seed = int(rng.integers(1 << 31))
        base = synthgen.make_texture(size, size, seed=base_seed)
        entry = {"name": name, "kind": kind, "base_seed": base_seed}
        if kind == "pristine":
            image = base
            h = w = size
            m_gt = np.zeros((h, w), dtype=np.uint8)
            mc_gt = np.zeros((h, w), dtype=np.uint8)
            mt_gt = np.zeros((h, w), dtype=np.uint8)
        else:
            spec = _spec_for_kind(kind, size, rng, min_side)
            forged = synthgen.generate(base, spec)
            image = forged.image
            m_gt, mc_gt, mt_gt = forged.m_gt, forged.mc_gt, forged.mt_gt
            entry["spec"] = spec.to_dict()
            _atomic_json(spec.to_dict(), os.path.join(fdir, "spec.json"))
        if kind == "degraded":
            noise_seed = int(rng.integers(1 << 31))
            image = synthgen.degrade(image, noise_sigma=0.02,
                                     jpeg_quality=90, seed=noise_seed)
            entry["degrade"] = {"noise_sigma": 0.02, "jpeg_quality": 90,
                                "seed": noise_seed}
        save_image(image, os.path.join(fdir, "image.png"))
        save_image(np.stack([m_gt.astype(np.float64)] * 3, axis=-1),
                   os.path.join(fdir, "m_gt.png"))
        ranking.render_three_channel(mc_gt, os.path.join(fdir, "mc_gt.png"))
        save_image(np.stack([mt_gt.astype(np.float64)] * 3, axis=-1),
                   os.path.join(fdir, "mt_gt.png"))
        index.append(entry)
    _atomic_json({"seed": seed, "kind": kind, "size": size,
                  "fixtures": index}, os.path.join(out_dir, "specs.json"))
    return index


def train_scorer_on_fixtures(fixture_dir, cfg=None, train_cfg=None):
    """Collect training instances from labeled fixtures and fit the
    scorer. Ground-truth masks gate the features and provide labels;
    offset fields come from the real matching front end."""
    cfg = cfg or PipelineConfig()
    train_cfg = train_cfg or ranking.TrainConfig()
    names = sorted(d for d in os.listdir(fixture_dir)
                   if os.path.isfile(os.path.join(fixture_dir, d,
                                                  "image.png")))
    if not names:
        raise ValueError(f"no fixtures under {fixture_dir}")
    kernels = zernike.make_kernels(cfg.moment_order, cfg.moment_diameter)
    batches = []
    for name in names:
        fdir = os.path.join(fixture_dir, name)
        gray = resize_bilinear(
            to_grayscale(load_image(os.path.join(fdir, "image.png"))),
            cfg.input_size, cfg.input_size)
        gt_mb = predictor.binarize(resize_bilinear(
            to_grayscale(load_image(os.path.join(fdir, "m_gt.png"))),
            cfg.input_size, cfg.input_size))
        labels = ranking.labels_from_render(resize_bilinear(
            load_image(os.path.join(fdir, "mc_gt.png")),
            cfg.input_size, cfg.input_size))
        if not gt_mb.any():
            continue
        pyramid = build_pyramid(gray, cfg.scale_down, cfg.scale_up)
        feats1 = _scale_features(pyramid, kernels, "complex_map")
        feats2 = _scale_features(pyramid, kernels, "magnitude_map")
        pm_cfg = cfg.pm_config()
        match1 = patchmatch.run(feats1, pm_cfg, threads=cfg.threads)
        match2 = patchmatch.run(feats2, pm_cfg, threads=cfg.threads)
        maps1 = dlf.multiscale(match1.offsets)
        maps2 = dlf.multiscale(match2.offsets)
        fused = ranking.fuse_offsets(match1.offsets, match2.offsets, gt_mb)
        feats = ranking.build_features(gray, _min_error_maps(maps1, maps2),
                                       fused, gt_mb.astype(np.float64))
        batches.append((feats, fused, labels, gt_mb.astype(np.float64)))
    if not batches:
        raise ValueError("no usable training fixtures (all pristine)")
    return ranking.train_scorer(batches, train_cfg)


def run_grad_checks(seed=0):
    """Gradient checks for every differentiable piece; returns the max
    relative error per target."""
    from . import losses
    from .patchmatch import reference as pm_ref
    rng = np.random.default_rng(seed)
    results = {}

    h = w = 6
    d = 4
    maps = tuple(rng.standard_normal(
        (int(np.floor(s * h + 0.5)), int(np.floor(s * w + 0.5)), d))
        for s in (0.75, 1.0, 1.5))
    feats = ScaleFeatures(maps=maps, scales=(0.75, 1.0, 1.5))
    cands = rng.uniform(-3.0, 3.0, size=(h, w, 5, 2))
    cands[:, :, 0] = (9.0, 9.0)  # keep at least one candidate unexcluded
    cfg = PMConfig(mode="soft", beta=4.0, exclusion_radius=2)
    proj = rng.standard_normal((h, w, 2))
    shapes = [m.shape for m in maps]

    def soft_eval(x):
        parts = []
        offset = 0
        for shape in shapes:
            n = int(np.prod(shape))
            parts.append(x[offset:offset + n].reshape(shape))
            offset += n
        fs = ScaleFeatures(maps=tuple(parts), scales=(0.75, 1.0, 1.5))
        value, grads = pm_ref.soft_objective(cands, fs, cfg, proj)
        return value, np.concatenate([g.ravel() for g in grads])

    x0 = np.concatenate([m.ravel() for m in maps])
    results["soft_evaluate"] = losses.grad_check_directional(
        soft_eval, x0, directions=100, rng=rng)

    gt = (rng.uniform(size=(10, 10)) > 0.5).astype(np.float64)

    def dice(x):
        loss, grad = losses.dice_loss(x.reshape(10, 10), gt)
        return loss, grad.ravel()

    results["dice_loss"] = losses.grad_check(dice, rng.uniform(size=100),
                                             max_coords=100, rng=rng)

    weight = losses.make_weight(rng.integers(0, 3, size=(10, 10)))
    gate = (rng.uniform(size=(10, 10)) > 0.3).astype(np.float64)

    def disc(x):
        loss, grad = losses.discrimination_loss(x.reshape(10, 10), weight,
                                                gate)
        return loss, grad.ravel()

    results["discrimination_loss"] = losses.grad_check(
        disc, rng.standard_normal(100), max_coords=100, rng=rng)

    sfeat = rng.standard_normal((8, 12, 5))
    fld = np.zeros((8, 12, 2))
    fld[:, :6, 0] = 6.0
    fld[:, 6:, 0] = -6.0
    lab = np.full((8, 12), ranking.LABEL_SOURCE, dtype=np.uint8)
    lab[:, 6:] = ranking.LABEL_TARGET
    wmat = losses.make_weight(lab)
    ones = np.ones((8, 12))

    def scorer(x):
        params = ranking.ScorerParams(x[:-1], float(x[-1]))
        loss, gw, gb = ranking.scorer_loss(params, sfeat, fld, wmat, ones)
        return loss, np.concatenate([gw, [gb]])

    results["score_map_params"] = losses.grad_check(
        scorer, rng.standard_normal(6), max_coords=100, rng=rng)
    return results
