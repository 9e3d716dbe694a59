"""Denoiser network: forward pass, hand-written gradients, optimizer,
checkpoint format."""

import numpy as np
import pytest

import flipdiff as fd
from flipdiff.model import loss_and_grad

LAM, T_F = 1.0, 3.0
SMALL = fd.ModelConfig(d=4, blocks=2, width=24, time_embed_dim=12, seed=3)


def _random_batch(d, n, seed):
    rng = np.random.default_rng(seed)
    x0 = fd.sawtooth_params(d).sample(n, rng).samples
    return fd.make_batch(x0, LAM, T_F, rng)


def test_fresh_model_predicts_half():
    params = fd.init_params(SMALL)
    rng = np.random.default_rng(0)
    out = fd.predict_batch(params, SMALL, rng.uniform(0, T_F, 5),
                           rng.integers(0, 2, (5, 4)).astype(float))
    assert np.allclose(out, 0.5)


def test_outputs_in_unit_interval_and_deterministic():
    rng = np.random.default_rng(1)
    params = fd.init_params(SMALL) + rng.normal(0, 0.3, fd.param_count(SMALL))
    ts = rng.uniform(0, T_F, 100)
    xs = rng.integers(0, 2, (100, 4)).astype(float)
    out = fd.predict_batch(params, SMALL, ts, xs)
    assert np.isfinite(out).all()
    assert ((out > 0) & (out < 1)).all()
    again = fd.predict_batch(params, SMALL, ts, xs)
    assert (out == again).all()


def test_single_state_predict_matches_batch():
    rng = np.random.default_rng(2)
    params = fd.init_params(SMALL) + rng.normal(0, 0.2, fd.param_count(SMALL))
    x = np.array([1, 0, 0, 1])
    single = fd.predict(params, SMALL, 0.7, x)
    batch = fd.predict_batch(params, SMALL, np.array([0.7]), x[None, :].astype(float))[0]
    assert np.allclose(single, batch, atol=0)


def test_corrupt_params_rejected():
    params = fd.init_params(SMALL)
    params[10] = np.nan
    with pytest.raises(fd.ModelCorruptError):
        fd.predict(params, SMALL, 0.5, [0, 1, 0, 1])


@pytest.mark.parametrize("spec", [
    fd.LossSpec(1, 0, 0), fd.LossSpec(0, 1, 0), fd.LossSpec(0, 0, 1),
    fd.LossSpec(1, 0, 0, w_scaled=True), fd.LossSpec(0.4, 0.3, 0.3, w_scaled=True),
])
def test_gradient_matches_finite_differences(spec):
    rng = np.random.default_rng(5)
    params = fd.init_params(SMALL) + rng.normal(0, 0.05, fd.param_count(SMALL))
    batch = _random_batch(4, 12, 7)
    _, grad, _ = loss_and_grad(params, SMALL, batch, spec)
    step = 1e-6
    for i in rng.choice(params.size, 20, replace=False):
        basis = np.zeros_like(params)
        basis[i] = step
        up, _, _ = loss_and_grad(params + basis, SMALL, batch, spec)
        down, _, _ = loss_and_grad(params - basis, SMALL, batch, spec)
        numeric = (up - down) / (2 * step)
        assert abs(grad[i] - numeric) / (abs(numeric) + 1e-8) < 1e-4


def test_bias_gradient_on_constant_model():
    """With the zeroed output layer the only active gradient path for the
    squared-error loss is the output bias; check it against finite
    differences."""
    params = fd.init_params(SMALL)
    batch = _random_batch(4, 30, 11)
    _, grad, _ = loss_and_grad(params, SMALL, batch, fd.LossSpec(1, 0, 0))
    views_offset = params.size - SMALL.d  # output bias sits at the tail
    step = 1e-6
    for j in range(SMALL.d):
        basis = np.zeros_like(params)
        basis[views_offset + j] = step
        up, _, _ = loss_and_grad(params + basis, SMALL, batch, fd.LossSpec(1, 0, 0))
        down, _, _ = loss_and_grad(params - basis, SMALL, batch, fd.LossSpec(1, 0, 0))
        numeric = (up - down) / (2 * step)
        assert abs(grad[views_offset + j] - numeric) < 1e-6


def test_overfit_fixed_batch():
    batch = _random_batch(4, 64, 13)
    params = fd.init_params(SMALL)
    state = fd.OptimizerState(lr=1e-2)
    losses = []
    for _ in range(200):
        loss, grad, _ = loss_and_grad(params, SMALL, batch, fd.LossSpec(1, 0, 0))
        params = fd.optimizer_step(params, grad, state)
        losses.append(loss)
    assert losses[-1] < 0.1 * losses[0]


def test_optimizer_identity_on_zero_grad():
    params = np.array([1.0, -2.0, 3.0])
    state = fd.OptimizerState(lr=0.1, weight_decay=0.0)
    out = fd.optimizer_step(params, np.zeros(3), state)
    assert (out == params).all()
    assert state.step == 1


def test_optimizer_quadratic_toy():
    theta = np.array([1.0])
    state = fd.OptimizerState(lr=1e-2)
    for _ in range(1000):
        theta = fd.optimizer_step(theta, 2 * theta, state)
    assert abs(theta[0]) < 1e-3
    assert state.step == 1000


def test_optimizer_rejects_nonfinite_grad():
    state = fd.OptimizerState()
    with pytest.raises(fd.TrainingError):
        fd.optimizer_step(np.zeros(2), np.array([np.inf, 0.0]), state)


def test_optimizer_lr_decay_schedule():
    state = fd.OptimizerState(lr=1.0, decay_every=10, decay_rate=0.5)
    assert state.current_lr() == 1.0
    state.step = 10
    assert state.current_lr() == 0.5
    state.step = 25
    assert state.current_lr() == 0.25


def _meta(**overrides):
    base = dict(lam=LAM, t_f=T_F, d=4, w1=1.0, w2=0.0, w3=0.0,
                w_scaled=True, seed=9, steps=123, config_hash="abcd1234")
    base.update(overrides)
    return fd.CheckpointMeta(**base)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    params = fd.init_params(SMALL) + rng.normal(0, 0.1, fd.param_count(SMALL))
    path = tmp_path / "model.bin"
    fd.save_checkpoint(path, params, SMALL, _meta())
    loaded, config, meta = fd.load_checkpoint(path)
    assert (loaded == params).all()
    assert config == SMALL
    assert meta.steps == 123 and meta.w_scaled is True
    assert meta.config_hash == "abcd1234"
    ts = rng.uniform(0, T_F, 100)
    xs = rng.integers(0, 2, (100, 4)).astype(float)
    assert (fd.predict_batch(params, SMALL, ts, xs)
            == fd.predict_batch(loaded, config, ts, xs)).all()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "model.bin"
    fd.save_checkpoint(path, fd.init_params(SMALL), SMALL, _meta())
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(fd.CheckpointFormatError):
        fd.load_checkpoint(path)


def test_checkpoint_bad_version(tmp_path):
    path = tmp_path / "model.bin"
    fd.save_checkpoint(path, fd.init_params(SMALL), SMALL, _meta())
    raw = bytearray(path.read_bytes())
    raw[8:12] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(fd.CheckpointVersionError):
        fd.load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "model.bin"
    fd.save_checkpoint(path, fd.init_params(SMALL), SMALL, _meta())
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 64])
    with pytest.raises(fd.CheckpointFormatError):
        fd.load_checkpoint(path)


def test_checkpoint_config_mismatch(tmp_path):
    path = tmp_path / "model.bin"
    fd.save_checkpoint(path, fd.init_params(SMALL), SMALL, _meta(t_f=3.0))
    _, _, meta = fd.load_checkpoint(path)
    with pytest.raises(fd.ConfigMismatchError):
        fd.check_compatible(meta, t_f=10.0)
    with pytest.raises(fd.ConfigMismatchError):
        fd.check_compatible(meta, d=8)
    with pytest.raises(fd.ConfigMismatchError):
        fd.LearnedScoreSource.from_checkpoint(path, t_f=10.0)
    src = fd.LearnedScoreSource.from_checkpoint(path, d=4, lam=LAM, t_f=3.0)
    assert src.d == 4


def test_checkpoint_meta_d_must_match_model():
    with pytest.raises(fd.ConfigMismatchError):
        fd.save_checkpoint("/dev/null", fd.init_params(SMALL), SMALL, _meta(d=6))
