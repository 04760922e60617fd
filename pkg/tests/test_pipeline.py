"""Pipeline plumbing: config parsing, metrics conventions, fixture
generation, and a small end-to-end detect/evaluate round trip."""

import json
import os

import numpy as np
import pytest

from cmfdkit import pipeline
from cmfdkit.imagecore import load_image, save_image, to_grayscale
from cmfdkit.pipeline import (PipelineConfig, StageFailure, binary_metrics,
                              config_from_mapping, gen_fixtures,
                              label_metrics, parse_config_file)


def test_parse_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# comment line\n"
        "iterations = 12\n"
        "beta=5.5   # trailing comment\n"
        "\n"
        "mode = soft\n")
    vals = parse_config_file(str(p))
    assert vals == {"iterations": "12", "beta": "5.5", "mode": "soft"}


def test_parse_config_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("iterations\n")
    with pytest.raises(ValueError, match="expected key=value"):
        parse_config_file(str(p))


def test_config_from_mapping_types_and_override():
    cfg = config_from_mapping({"iterations": "7", "beta": "3.25",
                               "mode": "soft"})
    assert cfg.iterations == 7 and isinstance(cfg.iterations, int)
    assert cfg.beta == 3.25 and isinstance(cfg.beta, float)
    assert cfg.mode == "soft"
    # later mappings override an explicit base
    base = PipelineConfig(iterations=3)
    cfg2 = config_from_mapping({"seed": "9"}, base=base)
    assert cfg2.iterations == 3 and cfg2.seed == 9


def test_config_from_mapping_unknown_key():
    with pytest.raises(ValueError, match="unknown config key"):
        config_from_mapping({"iteraions": "7"})


def test_config_fans_out_to_module_configs():
    cfg = PipelineConfig(iterations=4, beta=2.0, search_radius=30,
                         exclusion_radius=5, mode="soft", seed=11,
                         error_scale=1.5, sharpness=4.0, min_region_area=32,
                         consistency_tol=3.0, binarize_threshold=0.6)
    pm = cfg.pm_config()
    assert (pm.iterations, pm.beta, pm.search_radius, pm.exclusion_radius,
            pm.mode, pm.seed) == (4, 2.0, 30, 5, "soft", 11)
    pc = cfg.predictor_config()
    assert (pc.error_scale, pc.sharpness, pc.min_region_area,
            pc.consistency_tol, pc.binarize_threshold) \
        == (1.5, 4.0, 32, 3.0, 0.6)


def test_binary_metrics_conventions():
    z = np.zeros((4, 4), bool)
    o = np.ones((4, 4), bool)
    both_empty = binary_metrics(z, z)
    assert both_empty == {"precision": 1.0, "recall": 1.0, "f1": 1.0}
    miss = binary_metrics(z, o)
    assert miss == {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    spurious = binary_metrics(o, z)
    assert spurious == {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    exact = binary_metrics(o, o)
    assert exact == {"precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_binary_metrics_partial_overlap():
    pred = np.zeros((1, 8), bool)
    gt = np.zeros((1, 8), bool)
    pred[0, :4] = True       # 4 predicted
    gt[0, 2:8] = True        # 6 true, 2 overlap
    m = binary_metrics(pred, gt)
    assert m["precision"] == pytest.approx(2 / 4)
    assert m["recall"] == pytest.approx(2 / 6)
    assert m["f1"] == pytest.approx(2 * 0.5 * (1 / 3) / (0.5 + 1 / 3))


def test_label_metrics_three_way():
    gt = np.array([[0, 1, 2, 2]])
    pred = np.array([[0, 1, 1, 2]])
    m = label_metrics(pred, gt)
    assert m["background"]["f1"] == 1.0
    assert m["source"]["recall"] == 1.0 and m["source"]["precision"] == 0.5
    assert m["target"]["recall"] == 0.5 and m["target"]["precision"] == 1.0


def test_gen_fixtures_layout_and_determinism(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    idx1 = gen_fixtures(2, str(out1), seed=5, size=128, min_side=24)
    idx2 = gen_fixtures(2, str(out2), seed=5, size=128, min_side=24)
    assert [e["name"] for e in idx1] == ["fixture_000", "fixture_001"]
    for name in ("fixture_000", "fixture_001"):
        for f in ("image.png", "m_gt.png", "mc_gt.png", "mt_gt.png",
                  "spec.json"):
            assert (out1 / name / f).is_file()
        # same seed, same bytes
        a = (out1 / name / "image.png").read_bytes()
        b = (out2 / name / "image.png").read_bytes()
        assert a == b
    index = json.loads((out1 / "specs.json").read_text())
    assert index["seed"] == 5 and index["kind"] == "translation"
    assert len(index["fixtures"]) == 2


def test_gen_fixtures_region_size_floor(tmp_path):
    gen_fixtures(3, str(tmp_path), seed=1, size=128, min_side=24)
    for i in range(3):
        gt = to_grayscale(load_image(
            str(tmp_path / f"fixture_{i:03d}" / "m_gt.png"))) > 0.5
        # source and target each at least min_side^2 pixels
        assert gt.sum() >= 2 * 24 * 24


def test_gen_fixtures_pristine(tmp_path):
    gen_fixtures(1, str(tmp_path), seed=3, kind="pristine", size=96)
    gt = load_image(str(tmp_path / "fixture_000" / "m_gt.png"))
    assert not (gt > 0).any()
    assert not (tmp_path / "fixture_000" / "spec.json").exists()


def test_gen_fixtures_unknown_kind(tmp_path):
    with pytest.raises(ValueError, match="unknown fixture kind"):
        gen_fixtures(1, str(tmp_path), kind="mirrored")


def test_detect_stage_failure_names_stage(tmp_path):
    with pytest.raises(StageFailure, match="stage load failed"):
        pipeline.detect(str(tmp_path / "missing.png"))


SMALL = PipelineConfig(input_size=96, iterations=8, search_radius=96,
                       min_region_area=16, seed=3)


@pytest.fixture(scope="module")
def small_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("fx")
    gen_fixtures(1, str(root), seed=8, size=96, min_side=28)
    return root / "fixture_000"


def test_detect_writes_all_outputs(small_fixture, tmp_path):
    out = tmp_path / "det"
    report = pipeline.detect(str(small_fixture / "image.png"), SMALL,
                             str(out))
    for f in ("m.png", "m_b.png", "m_c.png", "report.json"):
        assert (out / f).is_file()
    assert report["foreground_pixels"] > 0
    assert set(report["label_pixels"]) == {"background", "source", "target"}
    stages = set(report["timings_ms"])
    assert {"load", "match_complex", "predict", "ranking",
            "write"} <= stages
    saved = json.loads((out / "report.json").read_text())
    assert saved["config"]["iterations"] == SMALL.iterations
    # binary mask is actually binary on disk
    mb = to_grayscale(load_image(str(out / "m_b.png")))
    assert set(np.unique(mb)) <= {0.0, 1.0}


def test_detect_finds_the_duplicate(small_fixture, tmp_path):
    out = tmp_path / "det"
    pipeline.detect(str(small_fixture / "image.png"), SMALL, str(out))
    pred = to_grayscale(load_image(str(out / "m_b.png"))) >= 0.5
    gt = to_grayscale(load_image(str(small_fixture / "m_gt.png"))) >= 0.5
    m = binary_metrics(pred, gt)
    assert m["precision"] >= 0.8
    assert m["recall"] >= 0.3


def test_evaluate_round_trip(small_fixture, tmp_path):
    # ground truth used as its own prediction scores a perfect 1.0
    pred_root = tmp_path / "pred"
    pdir = pred_root / "fixture_000"
    os.makedirs(pdir)
    gt = load_image(str(small_fixture / "m_gt.png"))
    save_image(gt, str(pdir / "m_b.png"))
    res = pipeline.evaluate(str(pred_root), str(small_fixture.parent),
                            out_path=str(tmp_path / "eval.json"))
    assert res["mean_single_channel"]["f1"] == 1.0
    assert (tmp_path / "eval.json").is_file()
    assert "fixture_000" in res["images"]


def test_evaluate_missing_prediction(small_fixture, tmp_path):
    with pytest.raises(FileNotFoundError, match="missing prediction"):
        pipeline.evaluate(str(tmp_path), str(small_fixture.parent))


def test_evaluate_no_ground_truth(tmp_path):
    with pytest.raises(ValueError, match="no fixtures"):
        pipeline.evaluate(str(tmp_path), str(tmp_path))
