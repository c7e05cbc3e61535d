import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from touchstream.backbone import BackboneConfig
from touchstream.environment import TaskSpec
from touchstream.harness.baseline import (
    RidgeRegressor,
    bbox_baseline,
    box_targets,
    center_box,
    mean_iou,
    targets_to_boxes,
)
from touchstream.harness.config import ConfigError, RunConfig, load_config
from touchstream.harness.metrics import (
    auc,
    mean_trials_to_threshold,
    normalize_auc,
    summarize,
    trials_to_threshold,
)
from touchstream.harness.report import emit_report, pixel_grid, read_curves, reward_heatmaps, write_pgm
from touchstream.harness.training import (
    Curve,
    dataset_for,
    evaluate,
    features_for,
    frozen_tensors,
    run_switch,
    run_training,
    train_seed,
)
from touchstream.imagery import Box
from touchstream.modules import build_module, load_checkpoint

SMALL = dict(train_per_class=8, val_per_class=4, loc_train=40, loc_val=20)


def _cfg(name="LRS", variant="two_way", kind="SR", **kw):
    task = TaskSpec(kind, variant, **SMALL)
    run = dict(trials=60, cadence=30, val_trials=40, seeds=(0, 1), candidates=32)
    run.update(kw)
    return RunConfig.build(task, name, backbone=BackboneConfig(dim=40), **run)


# -- config ----------------------------------------------------------------------

def test_config_json_round_trip(tmp_path):
    cfg = _cfg("CReZ-CReS", width=4)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert load_config(str(path)) == cfg


@pytest.mark.parametrize("patch", [
    {"extra": {}},
    {"task": {"kind": "SR", "variant": "two_way", "colour": 1}},
    {"run": {"trials": 10, "freeze": "everything"}},
    {"run": {"cadence": 0}},
    {"module": {"width": 8}},
    {"module": {"name": "LQ"}},
    {"backbone": {"size": 32}},
])
def test_config_rejects_bad_input(patch):
    d = _cfg().to_json()
    d.update(patch)
    with pytest.raises(ConfigError):
        RunConfig.from_json(d)


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    with pytest.raises(OSError):
        load_config(str(tmp_path / "missing.json"))


def test_reference_learning_rate_filled():
    assert _cfg("LRS").optimizer.lr > 0
    d = _cfg().to_json()
    del d["optimizer"]
    assert RunConfig.from_json(d).optimizer.lr == _cfg().optimizer.lr


# -- metrics ---------------------------------------------------------------------

def test_auc_examples():
    assert auc([(0, 0), (10, 1)]) == pytest.approx(5)
    assert auc([(0, 0.5), (5, 0.5), (10, 1.0)]) == pytest.approx(2.5 + 3.75)
    with pytest.raises(ValueError):
        auc([(0, 1)])
    with pytest.raises(ValueError):
        auc([(5, 1), (0, 1)])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=8), st.floats(0.01, 1000))
def test_normalized_auc_scale_free(values, scale):
    d = {f"m{i}": v for i, v in enumerate(values)}
    n = normalize_auc(d)
    assert max(n.values()) == 1.0 and all(0 < v <= 1 for v in n.values())
    scaled = normalize_auc({k: v * scale for k, v in d.items()})
    for k in d:
        assert scaled[k] == pytest.approx(n[k], rel=1e-12)


def test_normalize_rejects_nonpositive():
    with pytest.raises(ValueError):
        normalize_auc({"a": 0.0})


def test_trials_to_threshold():
    pts = [(0, 0.5), (100, 0.8), (200, 0.95), (300, 0.85)]
    assert trials_to_threshold(pts, 0.9) == 200
    assert trials_to_threshold(pts, 0.99) == float("inf")
    curves = [Curve(0, [(t, {"reward": v}) for t, v in pts]), Curve(1, [(0, {"reward": 0.5}), (100, {"reward": 0.6})])]
    assert mean_trials_to_threshold(curves, 0.9, budget=400) == 300
    assert mean_trials_to_threshold(curves, 0.9) == float("inf")


def test_summarize():
    a = Curve(0, [(0, {"reward": 0.5}), (10, {"reward": 1.0})])
    b = Curve(1, [(0, {"reward": 0.5}), (10, {"reward": 0.0})])
    s = summarize([a, b])
    np.testing.assert_allclose(s.mean, [0.5, 0.5])
    np.testing.assert_allclose(s.stderr, [0, 0.5])
    assert s.auc == pytest.approx(5.0) and s.final == 0.5
    with pytest.raises(ValueError):
        summarize([a, Curve(2, [(0, {"reward": 0.5}), (20, {"reward": 1.0})])])


# -- box baseline ----------------------------------------------------------------

def test_box_target_round_trip():
    task = TaskSpec("LOC", "default", **SMALL)
    recs = dataset_for(task).split("train")
    y = box_targets(recs, task.size)
    assert np.all(np.abs(y) <= 1)
    assert targets_to_boxes(y, task.size) == [r.box for r in recs]
    assert mean_iou([r.box for r in recs], [r.box for r in recs]) == 1.0


def test_targets_to_boxes_orders_and_clips():
    b = targets_to_boxes(np.array([[0.5, 2.0, -3.0, -0.5]]), 64)[0]
    assert b.x_min < b.x_max and b.y_min < b.y_max
    assert 0 <= b.x_min and b.x_max <= 64 and 0 <= b.y_min and b.y_max <= 64


def test_ridge_matches_lstsq_oracle():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(50, 6)), rng.normal(size=(50, 2))
    r = RidgeRegressor(1e-12).fit(X, Y)
    A = np.hstack([X, np.ones((50, 1))])
    ref = np.linalg.lstsq(A, Y, rcond=None)[0]
    np.testing.assert_allclose(r.predict(X), A @ ref, atol=1e-9)
    big = RidgeRegressor(1e9).fit(X, Y)
    np.testing.assert_allclose(big.predict(X), np.broadcast_to(Y.mean(0), Y.shape), atol=1e-5)


def test_baseline_on_oracle_beats_nulls():
    task = TaskSpec("LOC", "default", **{**SMALL, "loc_train": 300})
    feats = features_for(BackboneConfig(dim=40), task)
    res = bbox_baseline(task, dataset_for(task), feats)
    assert res.ridge_iou > 0.9 > 0.5 > res.center_iou
    assert res.ridge_iou > res.shuffled_iou
    assert res.n_train == 300 and res.n_val == 20
    cb = center_box(dataset_for(task).split("train"), 64)
    assert isinstance(cb, Box)
    with pytest.raises(ValueError):
        bbox_baseline(TaskSpec("SR", "two_way", **SMALL), None, feats)


# -- training --------------------------------------------------------------------

def test_evaluate_does_not_touch_params():
    cfg = _cfg()
    task = cfg.task
    m = build_module(cfg.module_spec, task.vocab, 0)
    m.params.flat[:] = np.random.default_rng(0).normal(size=m.params.size)
    before = m.params.flat.tobytes()
    feats = features_for(cfg.backbone, task)
    a = evaluate(m, task, feats, 50, seed=3, candidates=16)
    assert m.params.flat.tobytes() == before
    assert a == evaluate(m, task, feats, 50, seed=3, candidates=16)


def test_evaluate_rejects_mismatched_module():
    cfg = _cfg()
    loc = TaskSpec("LOC", "default", **SMALL)
    m = build_module(cfg.module_spec, cfg.task.vocab, 0)
    with pytest.raises(ConfigError):
        evaluate(m, loc, features_for(cfg.backbone, loc), 5)


def test_training_curve_shape_and_determinism(tmp_path):
    cfg = _cfg()
    a = run_training(cfg, str(tmp_path / "a"))
    b = run_training(cfg, str(tmp_path / "b"))
    assert [t for t, _ in a.curves[0].points] == [0, 30, 60]
    for f in ("curves.csv", "seed0.tsck", "seed1.tsck", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert a.curves[0].points != a.curves[1].points


def test_loc_curves_record_iou(tmp_path):
    cfg = _cfg("LRS", "default", "LOC", trials=10, cadence=10, val_trials=10, seeds=(0,), width=8)
    res = run_training(cfg, str(tmp_path))
    assert set(res.curves[0].points[-1][1]) == {"reward", "iou"}
    assert ("0", "iou") not in read_curves(str(tmp_path)) and (0, "iou") in read_curves(str(tmp_path))


@pytest.mark.parametrize("preset,name,frozen", [
    ("lrs_bottleneck_only", "LRS", {"W_1", "b_1", "W_2", "b_2", "H_1", "c_1", "H_2", "c_2"}),
    ("lbx_v1", "LBR", {"H_1", "c_1", "H_2", "c_2"}),
    ("lbx_v2", "LBR", {"W_2", "b_2", "H_1", "c_1", "H_2", "c_2"}),
    ("none", "LBR", set()),
])
def test_freeze_presets(preset, name, frozen):
    m = build_module(_cfg(name).module_spec, (0.0, 1.0), 0)
    assert set(frozen_tensors(preset, m)) == frozen


def test_freeze_preset_misuse():
    m = build_module(_cfg("LBR").module_spec, (0.0, 1.0), 0)
    with pytest.raises(ConfigError):
        frozen_tensors("lrs_bottleneck_only", m)


def test_switch_keeps_frozen_bytes_and_base():
    cfg = _cfg("LRS")
    base = train_seed(cfg, 0).module
    snapshot = base.params.flat.tobytes()
    rev = TaskSpec("SR", "two_way", classes=(1, 0), **SMALL)
    res = run_switch(base, rev, "lrs_bottleneck_only", cfg, seeds=[0])
    warm = res.runs[0].module
    assert base.params.flat.tobytes() == snapshot
    frozen = frozen_tensors("lrs_bottleneck_only", warm)
    assert warm.params.checksum(frozen) == base.params.checksum(frozen)
    assert warm.params["W_0"].tobytes() != base.params["W_0"].tobytes()


def test_switch_with_no_trials_reproduces_base_evaluation():
    cfg = _cfg("LRS")
    seed_run = train_seed(cfg, 0)
    res = run_switch(seed_run.module, cfg.task, "none", cfg.with_(trials=0), seeds=[0])
    assert res.curves[0].points == [(0, seed_run.curve.points[-1][1])]


# -- report ----------------------------------------------------------------------

def test_pixel_grid():
    g = pixel_grid(4)
    assert g.shape == (16, 2)
    np.testing.assert_allclose(g[:4, 0], [-0.75, -0.25, 0.25, 0.75])
    np.testing.assert_allclose(g[:4, 1], -0.75)
    np.testing.assert_allclose(g[4::4, 1], [-0.25, 0.25, 0.75])


def test_write_pgm(tmp_path):
    write_pgm(str(tmp_path / "a.pgm"), np.array([[0.0, 1.0], [0.5, 0.25]]))
    blob = (tmp_path / "a.pgm").read_bytes()
    assert blob.startswith(b"P5\n2 2\n255\n") and list(blob[-4:]) == [0, 255, 128, 64]
    write_pgm(str(tmp_path / "b.pgm"), np.ones((2, 2)))
    assert set((tmp_path / "b.pgm").read_bytes()[-4:]) == {128}


def test_emit_report(tmp_path):
    cfg = _cfg()
    runs = tmp_path / "runs"
    run_training(cfg, str(runs / "lrs"))
    run_training(cfg.with_(module_name="LBR"), str(runs / "lbr"))
    out = emit_report(str(runs), str(tmp_path / "rep"))
    rep = tmp_path / "rep"
    rows = (rep / "curves.csv").read_text().splitlines()
    assert rows[0] == "run,trial,seed,split,metric,value" and len(rows) == 1 + 2 * 2 * 3
    auc_rows = (rep / "auc.csv").read_text().splitlines()
    assert len(auc_rows) == 1 + 4
    norm = [l.split(",") for l in (rep / "normalized_auc.csv").read_text().splitlines()[1:]]
    assert len(norm) == 2 and max(float(r[3]) for r in norm) == 1.0
    grid = np.loadtxt(rep / "lrs_m1.txt")
    assert grid.shape == (64, 64)
    assert (rep / "lrs.svg").read_text().startswith("<svg")
    assert len(out["runs"]) == 2


def test_trained_heatmap_prefers_correct_half():
    task = TaskSpec("SR", "two_way")
    cfg = RunConfig.build(task, "LRS", backbone=BackboneConfig(dim=64), trials=3000, cadence=3000,
                          val_trials=50, seeds=(0,), candidates=64)
    run = train_seed(cfg, 0)
    assert run.curve.final() >= 0.9
    feats = features_for(cfg.backbone, task)
    rec = dataset_for(task).split("val")[0]
    from touchstream.imagery import Frame
    frame = Frame("sr", 64, rec.cls, rec.instance_seed)
    maps = reward_heatmaps(run.module, feats, frame, 64)
    m1 = maps[0]
    correct, wrong = (m1[:, :32], m1[:, 32:]) if rec.cls == task.classes[0] else (m1[:, 32:], m1[:, :32])
    assert correct.mean() > wrong.mean()


@pytest.mark.parametrize("task,module,lr", [
    ("SR:two_way", "LRS", 1e-3), ("SR:two_way", "LBT-small", 1e-4), ("SR:four_way_quadrant", "LE", 1e-4),
    ("MTS:4way_4shown_permuted", "LRS", 2e-4), ("MTS:2way_stationary", "CReZ-CReS", 5e-4),
    ("MTS:4way_4shown_permuted", "LBSig-small", 1e-3), ("LOC:default", "LBR-large", 1e-4),
])
def test_learning_rate_table(task, module, lr):
    from touchstream.reference import default_learning_rate
    assert default_learning_rate(task, module) == lr


def test_unlisted_learning_rates():
    from touchstream.reference import DEFAULT_LR, default_learning_rate
    assert default_learning_rate("SR:two_way", "Obvious") == 1e-2
    assert default_learning_rate("SR:two_way", "LBS") == DEFAULT_LR
