import numpy as np
import pytest

from hypnrsfm.dataio import Frame, SynthConfig, center_frames, generate_synthetic
from hypnrsfm.errors import ConfigError, NumericError
from hypnrsfm.model import init_params
from hypnrsfm.trainer import (
    Moments,
    TrainConfig,
    adam_update,
    config_from_mapping,
    fit,
    load_checkpoint,
    save_checkpoint,
    train_step,
)

TINY = TrainConfig(n_p=8, k_b=2, k_d=4, n_m=3, dim_z=4, feature_width=24, batch_size=8, epochs=2)


@pytest.fixture(scope="module")
def frames():
    return center_frames(generate_synthetic(SynthConfig(n_f=24, n_p=8, k_b=2, k_d=4, seed=1)))


def params_for(config, seed=0):
    return init_params(config.n_p, config.k_b, config.k_d, config.dim_z, config.feature_width,
                       np.random.default_rng(seed))


def test_config_invariants():
    with pytest.raises(ConfigError) as info:
        TrainConfig(lambda_b=0.5, lambda_f=0.2)
    assert info.value.field == "lambda_f"
    with pytest.raises(ConfigError):
        TrainConfig(k_b=8, k_d=8)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(strategy="median")
    with pytest.raises(ConfigError):
        config_from_mapping({"colour": "red"})


def test_adam_examples():
    cfg = TrainConfig(learning_rate=0.01)
    p = np.array([[1.0, -2.0]])
    out, _ = adam_update(p, np.zeros_like(p), Moments.zeros_like(p), cfg)
    np.testing.assert_array_equal(out, p)
    grad = np.array([[0.3, -7.0]])
    out, _ = adam_update(p, grad, Moments.zeros_like(p), cfg)
    # bias correction makes the first step lr * g / |g|
    np.testing.assert_allclose(p - out, 0.01 * np.sign(grad), rtol=1e-6)
    m = Moments.zeros_like(p)
    q = p
    for _ in range(20):
        q, m = adam_update(q, grad, m, cfg)
    assert np.all(np.sign(q - p) == -np.sign(grad))
    with pytest.raises(NumericError):
        adam_update(p, np.array([[np.nan, 0.0]]), Moments.zeros_like(p), cfg)


def test_zero_learning_rate_is_null(frames):
    cfg = TINY.replace(learning_rate=0.0)
    params = params_for(cfg)
    new, _, _ = train_step(params, frames[:8], cfg, np.random.default_rng(0))
    for name in params.names:
        assert np.array_equal(new.arrays[name], params.arrays[name])


def test_step_deterministic(frames):
    a = train_step(params_for(TINY), frames[:8], TINY, np.random.default_rng(3))[0]
    b = train_step(params_for(TINY), frames[:8], TINY, np.random.default_rng(3))[0]
    for name in a.names:
        assert np.array_equal(a.arrays[name], b.arrays[name])


def test_step_rejects_wrong_point_count(frames):
    with pytest.raises(ConfigError):
        train_step(params_for(TINY), [Frame(np.zeros((2, 5)))], TINY, np.random.default_rng(0))


def test_rigid_toy_descends():
    rng = np.random.default_rng(4)
    base = rng.standard_normal((3, 8))
    base -= base.mean(axis=1, keepdims=True)
    toy = [Frame(base[:2].copy()), Frame(base[:2].copy())]
    cfg = TINY.replace(lambda_b=1.0, lambda_f=0.0, lambda_res=0.0, lambda_cano=0.0, n_m=1,
                       learning_rate=1e-2)
    params, moments = params_for(cfg), None
    step_rng = np.random.default_rng(0)
    losses = []
    for _ in range(50):
        params, moments, out = train_step(params, toy, cfg, step_rng, moments)
        losses.append(out["data"])
    assert losses[-1] <= losses[0] / 10


def test_fit_zero_epochs(frames):
    params, history = fit(frames, TINY.replace(epochs=0))
    ref = params_for(TINY)
    assert len(history) == 0
    assert params.names == ref.names


def test_fit_records_and_touches_every_parameter(frames):
    params, history = fit(frames, TINY)
    assert len(history) == 2
    touched = set(history.touched[-1])
    assert touched == set(params.names)
    assert history.to_text().startswith("epoch data")


def test_checkpoint_round_trip(frames, tmp_path):
    params, _ = fit(frames, TINY, checkpoint_dir=tmp_path)
    loaded, config, epoch = load_checkpoint(tmp_path / "last")
    assert (config, epoch) == (TINY, 2)
    for name in params.names:
        assert np.array_equal(loaded.arrays[name], params.arrays[name])
    save_checkpoint(tmp_path / "again", loaded, config, epoch)
    assert (tmp_path / "again").read_bytes() == (tmp_path / "last").read_bytes()
