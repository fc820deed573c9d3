import io

import numpy as np
import pytest

from conftest import finite_difference
from svrbench.errors import DimensionMismatch, FormatError, ZeroVector
from svrbench.network import (
    MlpParameters,
    PairBatch,
    PairSample,
    _forward_cache,
    batch_loss,
    batch_loss_and_grad,
    identity_parameters,
    init_parameters,
    load_model,
    mlp_forward,
    save_model,
    svr_pair_grad,
    svr_pair_loss,
)


def _random_sample(rng, dim, same_speaker):
    return PairSample(*(rng.normal(size=dim) for _ in range(4)), same_speaker=same_speaker)


def _near_kink(params, sample, margin=1e-3):
    _, _, pre = _forward_cache(params, np.vstack([sample.x1_low, sample.x2_low]))
    return any(np.any(np.abs(z) < margin) for z in pre[:-1])


def _relative_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return np.max(np.abs(analytic - numeric)) / scale


def test_forward_shapes_and_identity():
    params = identity_parameters(4)
    x = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_array_equal(mlp_forward(params, x), x)
    batch = np.arange(8.0).reshape(2, 4)
    np.testing.assert_array_equal(mlp_forward(params, batch), batch)
    with pytest.raises(DimensionMismatch):
        mlp_forward(params, np.ones(3))


def test_zero_network_outputs_zero(rng):
    params = MlpParameters((np.zeros((5, 3)), np.zeros((3, 5))), (np.zeros(5), np.zeros(3)))
    np.testing.assert_array_equal(mlp_forward(params, rng.normal(size=(4, 3))), np.zeros((4, 3)))


def test_one_dimensional_net_by_hand():
    params = MlpParameters((np.array([[2.0]]), np.array([[3.0]])), (np.array([-1.0]), np.array([0.0])), "relu")
    # relu(2 * 1 - 1) = 1, then 3 * 1
    np.testing.assert_array_equal(mlp_forward(params, np.array([1.0])), [3.0])
    np.testing.assert_array_equal(mlp_forward(params, np.array([0.25])), [0.0])


def test_init_parameters_layout(rng):
    params = init_parameters(8, (16, 12), "tanh", rng)
    assert params.layer_dims == [8, 16, 12, 8]
    assert params.size == 8 * 16 + 16 + 16 * 12 + 12 + 12 * 8 + 8
    assert all(np.all(b == 0.0) for b in params.biases)
    assert params.unflatten(params.flatten()) == params


def test_parameters_reject_mismatched_layers():
    with pytest.raises(DimensionMismatch):
        MlpParameters((np.ones((3, 2)), np.ones((2, 4))), (np.zeros(3), np.zeros(2)))
    with pytest.raises(DimensionMismatch):
        MlpParameters((np.ones((3, 2)),), (np.zeros(3),))
    with pytest.raises(ValueError):
        MlpParameters((np.eye(2),), (np.zeros(2),), "sigmoid")


def test_loss_is_zero_for_perfect_reconstruction_of_one_speaker():
    params = identity_parameters(3)
    x = np.array([1.0, 2.0, -1.0])
    result = svr_pair_loss(params, PairSample(x, x, x, x, True))
    assert result.loss == pytest.approx(0.0, abs=1e-15)
    assert result.terms.recon1 == 0.0
    assert result.terms.recon2 == 0.0


def test_loss_terms_by_hand():
    params = identity_parameters(2)
    sample = PairSample([1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 2.0], True)
    result = svr_pair_loss(params, sample, weights=(0.5, 2.0))
    assert result.terms.recon1 == pytest.approx(1.0)
    assert result.terms.recon2 == pytest.approx(1.0)
    # outputs are orthogonal, so the cosine term is (0 - 1)^2
    assert result.terms.cos_term == pytest.approx(1.0)
    assert result.loss == pytest.approx(0.5 * 2.0 + 2.0 * 1.0)


def test_loss_is_symmetric_in_the_two_branches(rng):
    params = init_parameters(6, (10,), "relu", rng)
    sample = _random_sample(rng, 6, False)
    assert svr_pair_loss(params, sample).loss == pytest.approx(svr_pair_loss(params, sample.swapped()).loss, rel=1e-14)


def test_zero_output_raises_zero_vector():
    params = MlpParameters((np.zeros((3, 3)),), (np.zeros(3),))
    sample = PairSample(np.ones(3), np.ones(3), np.ones(3), np.ones(3), False)
    with pytest.raises(ZeroVector):
        svr_pair_loss(params, sample)


def test_sample_dimension_must_match_network(rng):
    params = identity_parameters(4)
    with pytest.raises(DimensionMismatch):
        svr_pair_loss(params, _random_sample(rng, 3, True))
    with pytest.raises(DimensionMismatch):
        PairSample(np.ones(3), np.ones(3), np.ones(2), np.ones(3), True)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(2024)
    template = init_parameters(8, (16, 16), activation, rng)
    weights = (1.0, 1.0)
    draws = 100 if activation == "relu" else 20
    checked = 0
    while checked < draws:
        params = template.unflatten(rng.normal(scale=0.4, size=template.size))
        sample = _random_sample(rng, 8, bool(rng.integers(2)))
        if activation == "relu" and _near_kink(params, sample):
            continue
        analytic = svr_pair_grad(params, sample, weights).flatten()

        def loss_at(flat):
            return svr_pair_loss(params.unflatten(flat), sample, weights).loss

        numeric = finite_difference(loss_at, params.flatten(), h=1e-5)
        assert _relative_error(analytic, numeric) < 1e-4
        checked += 1


def test_gradient_vanishes_at_zero_loss():
    params = identity_parameters(3)
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    sample = PairSample(e1, e1, e2, e2, same_speaker=False)
    assert svr_pair_loss(params, sample).loss == 0.0
    grad = svr_pair_grad(params, sample)
    for g in grad.weights + grad.biases:
        np.testing.assert_array_equal(g, np.zeros_like(g))


def test_batch_gradient_is_the_mean_of_pair_gradients(rng):
    params = init_parameters(5, (7,), "tanh", rng)
    samples = [_random_sample(rng, 5, i % 2 == 0) for i in range(4)]
    loss, grad = batch_loss_and_grad(params, PairBatch.stack(samples))
    expected = np.mean([svr_pair_grad(params, s).flatten() for s in samples], axis=0)
    np.testing.assert_allclose(grad.flatten(), expected, rtol=1e-12, atol=1e-14)
    assert loss == pytest.approx(np.mean([svr_pair_loss(params, s).loss for s in samples]), rel=1e-14)
    assert batch_loss(params, samples) == pytest.approx(loss, rel=1e-14)


def test_model_file_round_trips_bit_exactly(tmp_path, rng):
    params = init_parameters(6, (9, 4), "tanh", rng)
    params = params.unflatten(params.flatten() + rng.normal(scale=1e-3, size=params.size))
    path = tmp_path / "svr_model.txt"
    save_model(params, path)
    assert load_model(path) == params


def test_model_file_rejects_bad_header():
    with pytest.raises(FormatError):
        load_model(io.StringIO("# something else\nactivation relu\ndims 2 2\n"))
