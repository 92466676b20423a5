import numpy as np
import pytest

import synthetic_task
from oov_forge.episode import Episode, char_sequence
from oov_forge.errors import FormatError, TrainingError
from oov_forge.model import HiceConfig, HiceModel
from oov_forge.tensor import Graph, backward, constant, parameter, sum_all
from oov_forge.training import (Adam, TrainConfig, episode_loss,
                                load_checkpoint, load_checkpoint_config,
                                save_checkpoint, train)


def small_task(**kw):
    defaults = dict(n_topics=6, words_per_topic=8, n_sentences=700, dim=8,
                    seed=0, min_count=2)
    defaults.update(kw)
    return synthetic_task.planted_task(**defaults)


def small_model_config(dim=8):
    return HiceConfig(embed_dim=dim, n_heads=2, char_emb_dim=4, char_filters=3,
                      seed=0)


class _StubModel:
    """predict() returns a fixed vector per word; for loss-shape tests."""

    def __init__(self, outputs):
        self.outputs = outputs

    def predict(self, ep, vocab=None, use_morph=None):
        return constant(self.outputs[ep.target_word])


def _episode(word, oracle):
    return Episode(word, 0, [[EpisodeMask := -1]], char_sequence(word),
                   np.asarray(oracle, dtype=np.float32))


# ---------------------------------------------------------------------------
# episode_loss
# ---------------------------------------------------------------------------

def test_loss_is_minus_one_for_perfect_prediction():
    ep = _episode("w", [1.0, 2.0, 0.5])
    stub = _StubModel({"w": np.array([1.0, 2.0, 0.5])})
    loss, mean_cos = episode_loss(stub, [ep])
    assert loss.item() == pytest.approx(-1.0, abs=1e-12)
    assert mean_cos == pytest.approx(1.0, abs=1e-12)


def test_loss_is_zero_for_orthogonal_prediction():
    ep = _episode("w", [1.0, 0.0])
    stub = _StubModel({"w": np.array([0.0, 1.0])})
    loss, _ = episode_loss(stub, [ep])
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_loss_batch_mean():
    eps = [_episode("a", [1.0, 0.0]), _episode("b", [1.0, 0.0])]
    stub = _StubModel({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])})
    loss, mean_cos = episode_loss(stub, eps)
    assert loss.item() == pytest.approx(-0.5, abs=1e-12)
    assert mean_cos == pytest.approx(0.5, abs=1e-12)


def test_loss_rejects_zero_norm_oracle():
    ep = _episode("weird", [0.0, 0.0])
    stub = _StubModel({"weird": np.array([1.0, 0.0])})
    with pytest.raises(TrainingError, match="weird"):
        episode_loss(stub, [ep])


def test_loss_requires_oracle():
    ep = Episode("w", 0, [[-1]], char_sequence("w"), None)
    with pytest.raises(TrainingError):
        episode_loss(_StubModel({"w": np.zeros(2)}), [ep])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_minimizes_quadratic():
    p = parameter(np.array([5.0, -3.0]))
    opt = Adam([("p", p)], lr=0.1)
    for _ in range(300):
        with Graph():
            backward(sum_all(p * p))
        opt.step()
        opt.zero_grads()
    assert np.abs(p.data).max() < 1e-3


def test_adam_gradient_clipping():
    p = parameter(np.zeros(4))
    opt = Adam([("p", p)], lr=1.0, grad_clip=1.0)
    p.grad = np.full(4, 100.0)
    opt.step()
    # clipped global norm is 1, so the first Adam step magnitude stays ~lr
    assert np.abs(p.data).max() <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_zero_steps_returns_initial_params():
    vocab, store, table, oracle, _ = small_task()
    cfg = TrainConfig(steps=0, seed=1)
    model, report = train(cfg, vocab, store, oracle,
                          model_config=small_model_config())
    fresh = HiceModel.from_table(small_model_config(), oracle)
    for (_, a), (_, b) in zip(model.parameters(), fresh.parameters()):
        assert np.array_equal(a.data, b.data)
    assert report.points == []
    assert report.best_step == 0


def test_train_learns_synthetic_task_and_is_deterministic():
    vocab, store, table, oracle, _ = small_task()
    cfg = TrainConfig(steps=80, batch_episodes=8, validation_every=20,
                      k_min=2, k_max=4, seed=3, patience=10)

    def run():
        model, report = train(cfg, vocab, store, oracle,
                              model_config=small_model_config())
        return model, report

    model1, report1 = run()
    model2, report2 = run()
    assert report1.best_val > 0.8  # the planted task is easy
    assert report1.points == report2.points
    assert report1.best_val == report2.best_val
    steps = [p[0] for p in report1.points]
    assert steps == sorted(steps)  # validation points monotone in step
    for (_, a), (_, b) in zip(model1.parameters(), model2.parameters()):
        assert np.array_equal(a.data, b.data)


def test_training_cosine_windows_non_decreasing():
    vocab, store, table, oracle, _ = small_task()
    cfg = TrainConfig(steps=75, batch_episodes=8, validation_every=25,
                      k_min=2, k_max=4, seed=0, patience=10)
    _, report = train(cfg, vocab, store, oracle,
                      model_config=small_model_config())
    # 200-episode windows = 25 steps of 8 episodes
    w = [np.mean(report.step_cosines[i * 25:(i + 1) * 25]) for i in range(3)]
    assert w[0] <= w[1] <= w[2]


def test_validation_words_never_targeted_in_training():
    vocab, store, table, oracle, _ = small_task()
    from oov_forge.corpus import split_words
    from oov_forge.episode import eligible_targets, episode_stream
    words = eligible_targets(vocab, store, oracle)
    train_words, val_words = split_words(words)
    assert not set(train_words) & set(val_words)
    stream = episode_stream(vocab, store, oracle, (2, 4), seed=0, words=train_words)
    targets = {next(stream).target_word for _ in range(300)}
    assert not targets & set(val_words)


def test_divergence_aborts_with_step_number(monkeypatch):
    vocab, store, table, oracle, _ = small_task()
    from oov_forge.errors import NumericError
    import oov_forge.training as training_mod

    calls = {"n": 0}
    real = training_mod.episode_loss

    def exploding(model, episodes, use_morph=None, vocab=None):
        calls["n"] += 1
        if calls["n"] >= 3:
            raise NumericError("cosine: non-finite value produced")
        return real(model, episodes, use_morph, vocab)

    monkeypatch.setattr(training_mod, "episode_loss", exploding)
    cfg = TrainConfig(steps=5, batch_episodes=2, validation_every=5, seed=0)
    with pytest.raises(TrainingError, match="step 3"):
        train(cfg, vocab, store, oracle, model_config=small_model_config())


def test_train_report_csv_shape():
    vocab, store, table, oracle, _ = small_task()
    cfg = TrainConfig(steps=20, batch_episodes=4, validation_every=10, seed=0)
    _, report = train(cfg, vocab, store, oracle, model_config=small_model_config())
    csv = report.to_csv()
    lines = csv.strip().splitlines()
    assert lines[0] == "step,train_cos,val_cos"
    assert len(lines) == 1 + len(report.points)
    step, train_cos, val_cos = lines[1].split(",")
    assert int(step) == report.points[0][0]
    assert float(train_cos) == report.points[0][1]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_float32_identical(tmp_path):
    vocab, store, table, oracle, _ = small_task()
    model = HiceModel.from_table(small_model_config(), oracle, vocab)
    path = tmp_path / "model.hice"
    save_checkpoint(model, path, extra_config={"note": "unit-test"})
    loaded = load_checkpoint(path)
    for (name_a, a), (name_b, b) in zip(model.parameters(), loaded.parameters()):
        assert name_a == name_b
        assert np.array_equal(a.data.astype(np.float32), b.data.astype(np.float32))
    assert np.array_equal(model.frozen, loaded.frozen)
    assert loaded.frozen_words == model.frozen_words
    # a second save is byte-identical (float32 is the fixed point)
    path2 = tmp_path / "model2.hice"
    save_checkpoint(loaded, path2, extra_config={"note": "unit-test"})
    a = path.read_bytes()
    b = path2.read_bytes()
    assert a == b


def test_checkpoint_config_survives_textually(tmp_path):
    vocab, store, table, oracle, _ = small_task()
    model = HiceModel.from_table(small_model_config(), oracle, vocab)
    path = tmp_path / "model.hice"
    save_checkpoint(model, path, extra_config={"run.note": "abc def", "adapted": "true"})
    config = load_checkpoint_config(path)
    assert config["run.note"] == "abc def"
    assert config["adapted"] == "true"
    assert config["embed_dim"] == "8"


def test_checkpoint_truncation_is_a_typed_error(tmp_path):
    vocab, store, table, oracle, _ = small_task()
    model = HiceModel.from_table(small_model_config(), oracle, vocab)
    path = tmp_path / "model.hice"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    for cut in (3, 12, len(blob) // 2, len(blob) - 5):
        bad = tmp_path / f"cut{cut}.hice"
        bad.write_bytes(blob[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(bad)


def test_checkpoint_magic_mismatch(tmp_path):
    path = tmp_path / "bad.hice"
    path.write_bytes(b"\x05NOPE1" + b"\x00" * 32)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_checkpointing_during_training_keeps_best(tmp_path):
    vocab, store, table, oracle, _ = small_task()
    path = tmp_path / "best.hice"
    cfg = TrainConfig(steps=40, batch_episodes=8, validation_every=10,
                      seed=2, checkpoint_path=str(path), patience=10)
    model, report = train(cfg, vocab, store, oracle,
                          model_config=small_model_config())
    assert path.exists()
    best = load_checkpoint(path)
    cfgd = load_checkpoint_config(path)
    assert float(cfgd["best_val"]) == pytest.approx(report.best_val)
    for (_, a), (_, b) in zip(model.parameters(), best.parameters()):
        assert np.array_equal(a.data.astype(np.float32), b.data.astype(np.float32))
