import numpy as np
import pytest

from svrbench.embeddings import EmbeddingSet
from svrbench.errors import DimensionMismatch, InsufficientData, NumericalDivergence
from svrbench.network import identity_parameters, init_parameters
from svrbench.simulate import WorldConfig, generate_world
from svrbench.training import (
    PairedData,
    TrainConfig,
    reconstruct,
    reconstruction_error,
    sample_pair_batch,
    sample_pairs,
    save_loss_curve,
    train,
)


@pytest.fixture
def identity_data():
    world = generate_world(WorldConfig(dim=8, n_speakers=40, utts_per_speaker=5, seed=3))
    return PairedData(world, world)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(same_speaker_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(hidden_dims=(16, 0))


def test_paired_data_aligns_high_to_low(small_world):
    shuffled = small_world.subset(reversed(small_world.utterance_ids))
    data = PairedData(small_world.without_speakers(), shuffled)
    assert data.high.utterance_ids == small_world.utterance_ids
    assert data.speaker_ids == small_world.speaker_ids
    assert data.n_speakers == 20


def test_paired_data_needs_matching_utterances(small_world):
    with pytest.raises(InsufficientData):
        PairedData(small_world, small_world.subset(small_world.utterance_ids[:-1]))


def test_sampled_pairs_have_correct_flags(small_world):
    data = PairedData(small_world, small_world)
    cfg = TrainConfig(same_speaker_fraction=0.25)
    rng = np.random.default_rng(0)
    samples = sample_pairs(data, 40, cfg, rng)
    assert sum(s.same_speaker for s in samples) == 10

    speaker_of = {tuple(v): s for v, s in zip(small_world.matrix, small_world.speaker_ids)}
    for s in samples:
        same = speaker_of[tuple(s.x1_high)] == speaker_of[tuple(s.x2_high)]
        assert same == s.same_speaker
        if s.same_speaker:
            assert not np.array_equal(s.x1_high, s.x2_high)


def test_pair_polarities_need_enough_speakers():
    one_speaker = EmbeddingSet(["a", "b"], np.eye(2), ["s", "s"])
    with pytest.raises(InsufficientData):
        sample_pair_batch(PairedData(one_speaker, one_speaker), 4, TrainConfig(), np.random.default_rng(0))

    singletons = EmbeddingSet(["a", "b"], np.eye(2), ["s", "t"])
    with pytest.raises(InsufficientData):
        sample_pair_batch(PairedData(singletons, singletons), 4, TrainConfig(), np.random.default_rng(0))


def test_training_learns_the_identity(identity_data):
    cfg = TrainConfig(hidden_dims=(32, 32), learning_rate=5e-3, steps=500, seed=42, log_every=0)
    result = train(identity_data, cfg)
    assert len(result.losses) == 500
    assert np.mean(result.losses[-50:]) < 0.1 * result.initial_loss


def test_training_is_deterministic_for_a_seed(identity_data):
    cfg = TrainConfig(hidden_dims=(16,), steps=30, seed=9, log_every=0)
    first = train(identity_data, cfg)
    second = train(identity_data, cfg)
    assert first.params == second.params
    np.testing.assert_array_equal(first.losses, second.losses)

    other = train(identity_data, TrainConfig(hidden_dims=(16,), steps=30, seed=10, log_every=0))
    assert other.params != first.params


def test_huge_learning_rate_diverges(identity_data):
    cfg = TrainConfig(hidden_dims=(8,), steps=200, optimizer="sgd", learning_rate=1e6, log_every=0)
    with np.errstate(all="ignore"):
        with pytest.raises(NumericalDivergence):
            train(identity_data, cfg)


def test_reconstruct_keeps_ids_and_checks_dimension(small_world):
    params = identity_parameters(8)
    rebuilt = reconstruct(params, small_world)
    assert rebuilt == small_world
    assert reconstruction_error(params, PairedData(small_world, small_world)) == 0.0
    with pytest.raises(DimensionMismatch):
        reconstruct(identity_parameters(4), small_world)


def test_loss_curve_csv(tmp_path):
    path = tmp_path / "svr_loss.csv"
    save_loss_curve([2.5, 0.5], path)
    assert path.read_text() == "step,loss\n1,2.5\n2,0.5\n"


def test_same_speaker_pairs_are_uniform_over_pairs():
    # speaker "big" has C(4, 2) = 6 pairs, "small" has 1
    ids = ["b1", "b2", "b3", "b4", "s1", "s2"]
    world = EmbeddingSet(ids, np.eye(6), ["big"] * 4 + ["small"] * 2)
    data = PairedData(world, world)
    rows1, rows2 = data.same_speaker_rows(7000, np.random.default_rng(5))
    assert np.all(rows1 != rows2)
    from_big = np.mean(rows1 < 4)
    assert from_big == pytest.approx(6 / 7, abs=0.03)


def test_training_on_an_empty_dataset_fails():
    empty = EmbeddingSet([], np.zeros((0, 4)), [], dim=4)
    with pytest.raises(InsufficientData):
        train(PairedData(empty, empty), TrainConfig(steps=5, log_every=0))


def test_training_undoes_an_invertible_affine_degradation():
    world = generate_world(WorldConfig(dim=8, n_speakers=50, utts_per_speaker=8, seed=21))
    rng = np.random.default_rng(22)
    a = np.eye(8) + 0.2 * rng.normal(size=(8, 8)) / np.sqrt(8)
    b = 0.5 * rng.normal(size=8)
    degraded = world.with_matrix(world.matrix @ a.T + b)

    train_ids = [u for u, s in zip(world.utterance_ids, world.speaker_ids) if int(s[3:]) < 40]
    held_ids = [u for u, s in zip(world.utterance_ids, world.speaker_ids) if int(s[3:]) >= 40]
    train_data = PairedData(degraded.subset(train_ids), world.subset(train_ids))
    held_out = PairedData(degraded.subset(held_ids), world.subset(held_ids))

    cfg = TrainConfig(hidden_dims=(32, 32), steps=2000, seed=23, log_every=0)
    untrained = init_parameters(8, cfg.hidden_dims, cfg.activation, np.random.default_rng(cfg.seed))
    result = train(train_data, cfg)
    assert reconstruction_error(result.params, held_out) < reconstruction_error(untrained, held_out)
