import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artrack.fusion import params_from_json
from artrack.matching import Box, LossWeights
from artrack.synth import (BACKGROUND_CHANNEL, BLOCK, POS_START, VOCAB, ExpressionSpec, SceneSpec,
                           attribute_code, generate_scene, make_expressions, referent_records,
                           synth_features, to_pixels)
from artrack.train import TrainConfig, load_config, save_model, train_toy

# -- scenes ------------------------------------------------------------------------


def test_same_seed_same_scene():
    a, b = generate_scene(SceneSpec(seed=3)), generate_scene(SceneSpec(seed=3))
    assert a.records == b.records
    assert a.to_dict() == b.to_dict()


def test_different_seed_different_scene():
    assert generate_scene(SceneSpec(seed=1)).records != generate_scene(SceneSpec(seed=2)).records


def test_record_count():
    scene = generate_scene(SceneSpec(n_objects=5, n_frames=10))
    assert len(scene.records) == 50
    assert {r.frame for r in scene.records} == set(range(1, 11))


def test_zero_objects_rejected():
    with pytest.raises(ValueError):
        SceneSpec(n_objects=0)


def test_attributes_from_vocabulary():
    scene = generate_scene(SceneSpec(n_objects=20, seed=4))
    for row in scene.attribute_table():
        assert set(row) == set(VOCAB)
        for name, value in row.items():
            assert value in VOCAB[name]


def test_boxes_follow_linear_trajectories():
    scene = generate_scene(SceneSpec(n_objects=3, n_frames=8, seed=5))
    for obj in scene.objects:
        xs = [r.x for r in scene.records if r.track_id == obj.track_id]
        np.testing.assert_allclose(np.diff(xs, n=2), 0.0, atol=1e-9)


def test_pixel_conversion():
    spec = SceneSpec(image_width=100.0, image_height=50.0)
    assert to_pixels(Box(0.5, 0.5, 0.2, 0.4), spec) == pytest.approx((40.0, 15.0, 20.0, 20.0))


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_referents_match_predicate_oracle(seed, n_terms):
    scene = generate_scene(SceneSpec(n_objects=8, seed=seed))
    for expr in make_expressions(scene, 3, np.random.default_rng(seed), n_terms):
        table = scene.attribute_table()
        oracle = [i + 1 for i, row in enumerate(table)
                  if all(row[k] == v for k, v in expr.predicate.items())]
        assert expr.referents(scene) == oracle
        assert oracle, "expressions are anchored on an existing object"
        assert {r.track_id for r in referent_records(scene, expr)} == set(oracle)


def test_expression_text():
    assert ExpressionSpec("e", {"class": "car", "color": "red"}).text() == "red car"


# -- features -------------------------------------------------------------------------


def scene_and_expr(seed=0):
    scene = generate_scene(SceneSpec(n_objects=4, seed=seed))
    return scene, make_expressions(scene, 1, np.random.default_rng(seed))[0]


def test_noise_free_features_are_exact():
    scene, expr = scene_and_expr()
    feats = synth_features(scene, expr, 1, 0.0, np.random.default_rng(0), t_v=8, t_a=3, channels=32)
    assert feats.visual.shape == (8, 32) and feats.audio.shape == (3, 32)
    for i, obj in enumerate(scene.objects):
        for name, (lo, hi) in BLOCK.items():
            block = feats.visual[i, lo:hi]
            assert block.sum() == 1.0 and block[VOCAB[name].index(obj.attributes[name])] == 1.0
    np.testing.assert_array_equal(feats.visual[4:, BACKGROUND_CHANNEL], 1.0)
    np.testing.assert_array_equal(feats.visual[:4, BACKGROUND_CHANNEL], 0.0)
    np.testing.assert_array_equal(feats.audio, np.tile(attribute_code(expr.predicate, 32), (3, 1)))
    assert feats.slots == [1, 2, 3, 4]


def test_single_attribute_difference_touches_one_block():
    a = {"class": "car", "color": "red", "motion": "turning", "side": "left"}
    b = dict(a, color="blue")
    diff = np.flatnonzero(attribute_code(a, 32) != attribute_code(b, 32))
    lo, hi = BLOCK["color"]
    assert len(diff) == 2 and np.all((diff >= lo) & (diff < hi))


def test_noise_is_zero_mean_and_seeded():
    scene, expr = scene_and_expr(1)
    clean = synth_features(scene, expr, 2, 0.0, np.random.default_rng(0))
    noisy = synth_features(scene, expr, 2, 0.05, np.random.default_rng(0))
    again = synth_features(scene, expr, 2, 0.05, np.random.default_rng(0))
    np.testing.assert_array_equal(noisy.visual, again.visual)
    resid = noisy.visual - clean.visual
    assert abs(resid.mean()) < 0.01 and 0.03 < resid.std() < 0.07


def test_feature_size_checks():
    scene, expr = scene_and_expr()
    with pytest.raises(ValueError):
        synth_features(scene, expr, 1, 0.0, np.random.default_rng(0), channels=POS_START)
    with pytest.raises(ValueError):
        synth_features(scene, expr, 1, 0.0, np.random.default_rng(0), t_v=2)


# -- config ---------------------------------------------------------------------------


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.t_v, cfg.t_a, cfg.channels, cfg.n_queries) == (16, 8, 32, 16)
    assert cfg.weights == LossWeights()
    assert (cfg.class_threshold, cfg.referring_threshold) == (0.7, 0.5)


def test_config_round_trip(tmp_path):
    cfg = TrainConfig(seed=4, steps=12, lr=0.1, noise=0.0, weights=LossWeights(lambda_act=1.0))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg


def test_config_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"stepz": 3})


@pytest.mark.parametrize("kw", [{"steps": 0}, {"lr": 0.0}, {"noise": -1.0}, {"lr_drop_at": 1.5}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_learning_rate_schedule():
    cfg = TrainConfig(steps=10, lr=0.3, lr_drop_at=0.5)
    assert [cfg.lr_at(s) for s in (0, 4)] == [0.3, 0.3]
    assert [cfg.lr_at(s) for s in (5, 9)] == pytest.approx([0.03, 0.03])


# -- training ------------------------------------------------------------------------


SHORT = TrainConfig(steps=40, n_objects=4, n_frames=6)


@pytest.fixture(scope="module")
def short_run():
    return train_toy(SHORT)


def test_trace_finite(short_run):
    assert len(short_run.loss_trace) == SHORT.steps
    assert np.all(np.isfinite(short_run.loss_trace))


def test_loss_decreases(short_run):
    assert short_run.loss_trace[-1] < short_run.loss_trace[0]


def test_training_is_deterministic(short_run):
    again = train_toy(SHORT)
    assert again.loss_trace == short_run.loss_trace
    assert again.predictions == short_run.predictions
    assert again.summary() == short_run.summary()


def test_summary_fields(short_run):
    s = short_run.summary()
    assert 0.0 <= s["referring_accuracy"] <= 1.0
    assert s["initial_loss"] == short_run.loss_trace[0]
    assert len(short_run.per_object) == SHORT.n_objects * SHORT.n_frames


def test_predictions_are_valid_records(short_run):
    for r in short_run.predictions:
        assert 1 <= r.frame <= SHORT.n_frames and 1 <= r.track_id <= SHORT.n_queries
        assert r.w >= 0 and r.h >= 0


def test_model_save(short_run, tmp_path):
    save_model(short_run.model, tmp_path / "m.json")
    arrays = params_from_json((tmp_path / "m.json").read_text())
    for name, t in short_run.model.named_parameters():
        np.testing.assert_array_equal(arrays[name], t.data)


@pytest.mark.parametrize("seed", range(5))
def test_trace_finite_for_several_seeds(seed):
    result = train_toy(TrainConfig(seed=seed, steps=5, n_objects=3, n_frames=4))
    assert np.all(np.isfinite(result.loss_trace))
