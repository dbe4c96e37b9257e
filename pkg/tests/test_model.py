import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypnrsfm import layout
from hypnrsfm.errors import DimensionError, UsageError
from hypnrsfm.geometry import Camera, is_rotation
from hypnrsfm.model import (
    NoiseBatch,
    backbone_forward,
    draw_noise,
    estimate_coefficients,
    estimate_rotation,
    forward,
    init_params,
    reconstruct,
    reconstruct_batch,
    synthesize_hypotheses,
)

N_P, K_B, K_D, DIM_Z, WIDTH = 6, 2, 3, 4, 16


@pytest.fixture
def params():
    return init_params(N_P, K_B, K_D, DIM_Z, WIDTH, np.random.default_rng(0))


def centred(rng, n_p=N_P):
    w = rng.standard_normal((2, n_p))
    return w - w.mean(axis=1, keepdims=True)


def test_k_b_must_be_smaller():
    with pytest.raises(UsageError):
        init_params(N_P, 3, 3, DIM_Z, WIDTH)


def test_backbone_zero_input_and_determinism(params):
    feat = backbone_forward(params, np.zeros((2, N_P)))
    assert feat.shape == (WIDTH, 1)
    assert np.all(np.isfinite(feat.value))
    w = centred(np.random.default_rng(1))
    assert np.array_equal(backbone_forward(params, w).value, backbone_forward(params, w).value)


def test_backbone_rejects_uncentred(params):
    with pytest.raises(UsageError, match="center_frames"):
        backbone_forward(params, np.ones((2, N_P)))


def test_zero_rotation_head_gives_identity(params):
    feat = backbone_forward(params, centred(np.random.default_rng(2)))
    np.testing.assert_array_equal(estimate_rotation(params, feat).value, np.eye(3))


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_rotation_head_is_proper(seed):
    rng = np.random.default_rng(seed)
    p = init_params(N_P, K_B, K_D, DIM_Z, WIDTH, rng)
    p.arrays["rotation.W"] = rng.standard_normal((3, WIDTH))
    feat = backbone_forward(p, centred(rng))
    assert is_rotation(estimate_rotation(p, feat).value, 1e-6)


def test_alpha_ignores_noise(params):
    rng = np.random.default_rng(3)
    feat = backbone_forward(params, centred(rng))
    a1, _ = estimate_coefficients(params, feat, NoiseBatch.draw(4, DIM_Z, rng))
    a2, _ = estimate_coefficients(params, feat, NoiseBatch.draw(4, DIM_Z, rng))
    assert np.array_equal(a1.value, a2.value)
    z = NoiseBatch(np.zeros((1, DIM_Z)))
    b1 = estimate_coefficients(params, feat, z)[1].value
    b2 = estimate_coefficients(params, feat, z)[1].value
    assert np.array_equal(b1, b2)
    with pytest.raises(UsageError):
        estimate_coefficients(params, feat, np.zeros((2, DIM_Z + 1)))


def test_zero_deformation_layer(params):
    params.arrays["deform.W"][:] = 0.0
    rng = np.random.default_rng(4)
    w = centred(rng)
    hyp = reconstruct(params, w, n_m=5, seed=1)
    for s in hyp.hypotheses:
        np.testing.assert_array_equal(s.value, hyp.basis.value)
    assert hyp.best_index == 0


def test_single_hypothesis_and_seed_repeat(params):
    w = centred(np.random.default_rng(5))
    hyp = reconstruct(params, w, n_m=1)
    assert hyp.n_m == 1 and hyp.best_index == 0
    a, b = reconstruct(params, w, n_m=4, seed=9), reconstruct(params, w, n_m=4, seed=9)
    for x, y in zip(a.hypotheses, b.hypotheses):
        assert np.array_equal(x.value, y.value)


@given(st.integers(0, 10_000), st.integers(1, 6))
@settings(max_examples=25, deadline=None)
def test_hypothesis_invariants(seed, n_m):
    rng = np.random.default_rng(seed)
    p = init_params(N_P, K_B, K_D, DIM_Z, WIDTH, rng)
    w = centred(rng)
    hyp = reconstruct(p, w, n_m=n_m, seed=seed)
    assert hyp.n_m == n_m
    assert hyp.reproj_errors[hyp.best_index] == hyp.reproj_errors.min()
    for s, d in zip(hyp.hypotheses, hyp.deformations):
        np.testing.assert_allclose(s.value, hyp.basis.value + d.value, atol=1e-15)
        np.testing.assert_allclose(s.value.mean(axis=1), 0.0, atol=1e-12)


def test_best_index_tie_goes_low(params):
    feat = backbone_forward(params, np.zeros((2, N_P)))
    rot = estimate_rotation(params, feat)
    alpha, betas = estimate_coefficients(params, feat, NoiseBatch(np.zeros((3, DIM_Z))))
    hyp = synthesize_hypotheses(params, alpha, betas, rot, Camera(), np.zeros((2, N_P)))
    assert hyp.best_index == 0


def test_synthesize_checks_shape(params):
    feat = backbone_forward(params, np.zeros((2, N_P)))
    rot = estimate_rotation(params, feat)
    alpha, betas = estimate_coefficients(params, feat, NoiseBatch(np.zeros((1, DIM_Z))))
    with pytest.raises(DimensionError):
        synthesize_hypotheses(params, alpha, betas, rot, Camera(), np.zeros((2, N_P + 1)))


def test_batched_forward_matches_per_frame(params):
    rng = np.random.default_rng(6)
    ws = [centred(rng) for _ in range(3)]
    rec = reconstruct_batch(params, ws, n_m=4, seed=11)
    noise = draw_noise(3, 4, DIM_Z, np.random.default_rng(11))
    out = forward(params, layout.flatten(ws), noise)
    for b, w in enumerate(ws):
        vectors = noise[:, b::3].T
        feat = backbone_forward(params, w)
        alpha, betas = estimate_coefficients(params, feat, NoiseBatch(vectors))
        hyp = synthesize_hypotheses(params, alpha, betas, estimate_rotation(params, feat), Camera(), w)
        np.testing.assert_allclose(rec.basis[b], hyp.basis.value, atol=1e-12)
        np.testing.assert_allclose(rec.reproj_errors[b], hyp.reproj_errors, atol=1e-12)
        assert rec.best_index[b] == hyp.best_index
    np.testing.assert_allclose(out.reproj_errors().T, rec.reproj_errors, atol=1e-12)
