import numpy as np
import pytest

from svrbench.embeddings import EmbeddingSet, ScoreSet, Trial, cosine_similarity
from svrbench.errors import (
    ConfigError,
    DegenerateCohort,
    DimensionMismatch,
    FormatError,
    InsufficientData,
    MissingUtterance,
    ZeroVector,
)
from svrbench.network import init_parameters, mlp_forward
from svrbench.plda import plda_score, plda_train_em
from svrbench.scoring import Cohort, CosineBackend, PldaBackend, ScoringOptions, score_trials, snorm


def _all_pairs(embeddings, enroll, test):
    trials = []
    for e in enroll:
        for t in test:
            same = embeddings.speaker_of(e) == embeddings.speaker_of(t)
            trials.append(Trial(e, t, "target" if same else "nontarget"))
    return trials


def test_cosine_backend_scores_identical_vectors_as_one(tiny_set):
    scores = score_trials(CosineBackend(), tiny_set, [Trial("c", "c"), Trial("a", "b")])
    assert scores.scores[0] == pytest.approx(1.0, abs=1e-15)
    assert scores.scores[1] == 0.0


def test_cosine_backend_rejects_zero_vectors():
    embeddings = EmbeddingSet(["a", "z"], [[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ZeroVector):
        score_trials(CosineBackend(), embeddings, [Trial("a", "z")])


def test_unknown_utterance_is_reported(tiny_set):
    with pytest.raises(MissingUtterance):
        score_trials(CosineBackend(), tiny_set, [Trial("a", "nobody")])


def test_duplicate_trials_are_rejected(tiny_set):
    with pytest.raises(FormatError):
        score_trials(CosineBackend(), tiny_set, [Trial("a", "b"), Trial("a", "b")])


def test_empty_trial_list_gives_empty_scores(tiny_set):
    assert len(score_trials(CosineBackend(), tiny_set, [])) == 0


def test_labels_are_copied_from_trials(tiny_set):
    scores = score_trials(CosineBackend(), tiny_set, [Trial("a", "b", "target"), Trial("a", "c", "nontarget")])
    assert scores.labels == ["target", "nontarget"]


def test_scores_do_not_depend_on_trial_order(small_world, rng):
    ids = small_world.utterance_ids
    trials = _all_pairs(small_world, ids[:10], ids[50:70])
    shuffled = [trials[i] for i in rng.permutation(len(trials))]
    first = score_trials(CosineBackend(), small_world, trials)
    second = score_trials(CosineBackend(), small_world, shuffled)
    assert first.as_dict() == second.as_dict()
    assert [e.key for e in second] == [t.key for t in shuffled]


def test_reconstructing_the_test_side(small_world, rng):
    params = init_parameters(8, (12,), "tanh", rng)
    params = params.unflatten(params.flatten() + rng.normal(scale=0.1, size=params.size))
    ids = small_world.utterance_ids
    trials = _all_pairs(small_world, ids[:3], ids[10:14])
    scores = score_trials(CosineBackend(), small_world, trials, ScoringOptions(reconstruct_test=True, svr=params))
    for entry in scores:
        expected = cosine_similarity(small_world.vector(entry.enroll_utt), mlp_forward(params, small_world.vector(entry.test_utt)))
        assert entry.score == pytest.approx(expected, abs=1e-12)


def test_reconstruction_needs_a_network():
    with pytest.raises(ConfigError):
        ScoringOptions(reconstruct_enroll=True)


def test_plda_backend_matches_single_trial_scoring(small_world):
    model, _ = plda_train_em(small_world, iters=3)
    ids = small_world.utterance_ids
    trials = _all_pairs(small_world, ids[:4], ids[20:25])
    scores = score_trials(PldaBackend(model), small_world, trials)
    for entry in scores:
        expected = plda_score(model, small_world.vector(entry.enroll_utt), small_world.vector(entry.test_utt))
        assert entry.score == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_plda_backend_checks_dimension(small_world):
    model, _ = plda_train_em(small_world, iters=2)
    other = EmbeddingSet(["a", "b"], np.eye(2))
    with pytest.raises(DimensionMismatch):
        score_trials(PldaBackend(model), other, [Trial("a", "b")])


def _first_coordinate(a, b):
    return a[:, 0] * b[:, 0]


def test_snorm_is_identity_for_unit_cohort_statistics():
    embeddings = EmbeddingSet(["e", "t"], [[1.0, 0.3], [1.0, -2.0]])
    cohort = Cohort(EmbeddingSet(["c1", "c2"], [[1.0, 5.0], [-1.0, 7.0]]), top_k=0)
    raw = ScoreSet.from_trials([Trial("e", "t")], [0.37])
    normalized = snorm(raw, _first_coordinate, embeddings, cohort)
    assert normalized.scores[0] == 0.37


def test_snorm_rejects_a_constant_cohort():
    embeddings = EmbeddingSet(["e", "t"], [[1.0, 0.3], [1.0, -2.0]])
    cohort = Cohort(EmbeddingSet(["c1", "c2"], [[2.0, 5.0], [2.0, 7.0]]), top_k=0)
    raw = ScoreSet.from_trials([Trial("e", "t")], [0.37])
    with pytest.raises(DegenerateCohort):
        snorm(raw, _first_coordinate, embeddings, cohort)


def test_snorm_is_invariant_to_affine_score_maps(small_world):
    ids = small_world.utterance_ids
    cohort = Cohort(small_world.subset(ids[80:]), top_k=3)
    trials = _all_pairs(small_world, ids[:5], ids[40:50])
    backend = CosineBackend()
    raw = score_trials(backend, small_world, trials)

    def affine(a, b):
        return 2.5 * backend(a, b) - 4.0

    raw_affine = raw.with_scores(2.5 * raw.scores - 4.0)
    plain = snorm(raw, backend, small_world, cohort)
    mapped = snorm(raw_affine, affine, small_world, cohort)
    np.testing.assert_allclose(mapped.scores, plain.scores, atol=1e-10)


def test_snorm_through_score_trials(small_world):
    ids = small_world.utterance_ids
    cohort = Cohort(small_world.subset(ids[80:]), top_k=10)
    trials = _all_pairs(small_world, ids[:5], ids[40:50])
    direct = snorm(score_trials(CosineBackend(), small_world, trials), CosineBackend(), small_world, cohort)
    combined = score_trials(CosineBackend(), small_world, trials, ScoringOptions(cohort=cohort))
    np.testing.assert_array_equal(combined.scores, direct.scores)


def test_cohort_validation(tiny_set):
    with pytest.raises(InsufficientData):
        Cohort(tiny_set.subset([]))
    with pytest.raises(ValueError):
        Cohort(tiny_set, top_k=-1)
    assert Cohort(tiny_set, top_k=0).effective_k == 4
    assert Cohort(tiny_set, top_k=2).effective_k == 2
    assert Cohort(tiny_set).effective_k == 4
