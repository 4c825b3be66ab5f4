from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fourier_downscale.features import FourierConfig
from fourier_downscale.ingest import MultiResolutionDataset, NormalizationStats
from fourier_downscale.model import ModelConfig, ModelParams, forward_sequence, init_params
from fourier_downscale.train import (
    AdamState,
    DivergenceError,
    TrainConfig,
    adam_step,
    backward,
    clip_gradients,
    evaluate_loss,
    fit,
    loss_data,
    loss_harm,
)

from conftest import gradient_check, perturbed_params, small_problem


def dataset(x0, y):
    n = len(x0)
    return MultiResolutionDataset(np.arange(n), np.asarray(x0, float), np.asarray(y, float),
                                  np.zeros(n, "datetime64[s]"), NormalizationStats(0, 1, 0, 1), "train")


# ---- losses ----

def test_loss_data_examples():
    y = np.array([[1.0, 2.0]])
    assert loss_data(y, y) == 0.0
    assert loss_data(y + [3.0, 4.0], y) == 25.0
    assert loss_data(np.array([[1.0, 0.0], [0.0, 2.0]]), np.zeros((2, 2))) == 2.5


def test_loss_data_shape_checks():
    with pytest.raises(ValueError):
        loss_data(np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        loss_data(np.zeros((0, 2)), np.zeros((0, 2)))


def harm_cfg():
    return ModelConfig(L=1, D=2, n_heads=1, K=2, harmonics=(2,))


def test_loss_harm_examples():
    cfg = harm_cfg()
    p = ModelParams(V=np.ones((4, 1)))
    assert loss_harm(p, cfg, 1.0) == 10.0
    assert loss_harm(p, cfg, 0.0) == 0.0
    assert loss_harm(ModelParams(V=np.zeros((4, 1))), cfg, 1.0) == 0.0


def test_loss_harm_off_without_fourier():
    cfg = replace(harm_cfg(), use_fourier=False)
    assert loss_harm(ModelParams(V=np.ones((4, 1))), cfg, 1.0) == 0.0


def test_harm_gradient_closed_form(small_cfg):
    p = perturbed_params(small_cfg)
    x0, feats, y = small_problem(small_cfg)
    _, g0, _ = backward(x0, feats, y, p, small_cfg, TrainConfig(lambda_f=0.0))
    _, g1, _ = backward(x0, feats, y, p, small_cfg, TrainConfig(lambda_f=0.3))
    w = np.array([1, 1, 2, 2], dtype=float)
    np.testing.assert_allclose(g1["V"] - g0["V"], 2 * 0.3 * w[:, None] ** 2 * p["V"], atol=1e-14)


def test_zero_residual_zero_head_gradient(small_cfg):
    p = perturbed_params(small_cfg)
    x0, feats, _ = small_problem(small_cfg)
    y = forward_sequence(x0, feats, p, small_cfg).yhat
    loss, g, _ = backward(x0, feats, y, p, small_cfg, TrainConfig(lambda_f=0.0))
    assert loss == 0.0
    assert not g["A"].any() and not g["c"].any()


# ---- gradients vs finite differences ----

@pytest.mark.parametrize("use_fourier", [True, False])
@pytest.mark.parametrize("use_attention", [True, False])
@pytest.mark.parametrize("cell", ["gru", "elman"])
def test_gradients_match_finite_differences(use_fourier, use_attention, cell):
    cfg = ModelConfig(L=5, D=4, n_heads=2, K=3, harmonics=(2,) if use_fourier else (),
                      use_fourier=use_fourier, use_attention=use_attention, cell=cell)
    worst, max_abs = gradient_check(cfg, T=4, seed=3)
    assert max(worst.values()) < 1e-4, (worst, max_abs)


def test_h_init_blocks_h0_gradient(small_cfg):
    p = perturbed_params(small_cfg)
    x0, feats, y = small_problem(small_cfg)
    _, g, h_last = backward(x0, feats, y, p, small_cfg, TrainConfig(), h_init=np.zeros(small_cfg.L))
    assert not g["h0"].any()
    assert h_last.shape == (small_cfg.L,)


def test_non_finite_loss_raises(small_cfg):
    p = perturbed_params(small_cfg)
    x0, feats, y = small_problem(small_cfg)
    y[0, 0] = np.nan
    with pytest.raises(DivergenceError):
        backward(x0, feats, y, p, small_cfg, TrainConfig(), step=7)


# ---- clipping ----

def test_clip_below_threshold_unchanged():
    g = ModelParams(a=np.array([0.3, 0.4]))
    assert clip_gradients(g, 1.0) is g


def test_clip_scales_to_unit():
    out = clip_gradients(ModelParams(a=np.array([3.0, 4.0])), 1.0)
    np.testing.assert_allclose(out["a"], [0.6, 0.8], atol=1e-15)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(1e-3, 10))
def test_clip_bounds_norm(values, clip):
    v = np.array(values)
    g = ModelParams(a=v[: len(v) // 2 + 1], b=v[len(v) // 2 + 1:])
    out = clip_gradients(g, clip)
    if g.global_norm() <= clip:
        assert out is g
    else:
        assert out.global_norm() <= clip + 1e-12


# ---- Adam ----

def test_adam_zero_grad_no_move():
    p = ModelParams(w=np.array([1.0, -2.0]))
    new, state = adam_step(p, p.zeros_like(), AdamState.zeros(p), TrainConfig())
    np.testing.assert_array_equal(new["w"], p["w"])
    assert state.step == 1


def test_adam_first_step_closed_form():
    tc = TrainConfig(lr=1e-3, eps=1e-8)
    p = ModelParams(w=np.array([1.0]))
    new, _ = adam_step(p, ModelParams(w=np.array([1.0])), AdamState.zeros(p), tc, step_index=1)
    np.testing.assert_allclose(new["w"] - 1.0, -1e-3 / (1 + 1e-8), rtol=1e-12)


def test_adam_does_not_mutate_inputs():
    p = ModelParams(w=np.array([1.0]))
    st0 = AdamState.zeros(p)
    adam_step(p, ModelParams(w=np.array([2.0])), st0, TrainConfig())
    assert p["w"][0] == 1.0 and st0.m["w"][0] == 0.0 and st0.step == 0


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    gs = [ModelParams(w=rng.normal(size=3)) for _ in range(5)]

    def run():
        p = ModelParams(w=np.ones(3))
        s = AdamState.zeros(p)
        for g in gs:
            p, s = adam_step(p, g, s, TrainConfig())
        return p["w"]

    assert run().tobytes() == run().tobytes()


def test_adam_step_index_validated():
    p = ModelParams(w=np.ones(1))
    with pytest.raises(ValueError):
        adam_step(p, p, AdamState.zeros(p), TrainConfig(), step_index=0)


def test_clipping_invariance_below_threshold():
    p = ModelParams(w=np.ones(3))
    g = ModelParams(w=np.array([0.1, -0.2, 0.05]))
    tc = TrainConfig(clip_norm=1.0)
    a, _ = adam_step(p, g, AdamState.zeros(p), tc)
    b, _ = adam_step(p, clip_gradients(g, tc.clip_norm), AdamState.zeros(p), tc)
    assert a["w"].tobytes() == b["w"].tobytes()


# ---- fit ----

def linear_problem(n=60, K=4, seed=0):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=n)
    y = np.outer(x0, np.linspace(0.5, 1.5, K)) + 0.05 * rng.normal(size=(n, K))
    return dataset(x0, y)


def test_fit_zero_epochs_returns_init():
    cfg = ModelConfig(L=4, D=4, n_heads=1, K=4, use_fourier=False, use_attention=False)
    tc = TrainConfig(epochs=0, seed=5)
    params, hist = fit(linear_problem(), cfg, [], tc)
    assert hist == []
    ref = init_params(cfg, np.random.default_rng(5))
    assert all(np.array_equal(params[k], ref[k]) for k in ref)


def test_fit_reduces_mse_plain_rnn():
    cfg = ModelConfig(L=8, D=4, n_heads=1, K=4, use_fourier=False, use_attention=False)
    ds = linear_problem()
    params, hist = fit(ds, cfg, [], TrainConfig(lr=1e-2, epochs=30, seq_len=10))
    assert len(hist) == 31
    assert [h[0] for h in hist] == list(range(31))
    assert hist[-1][1] < 0.5 * hist[0][1]


def test_fit_same_seed_same_history():
    cfg = ModelConfig(L=6, D=4, n_heads=2, K=4, harmonics=(2,))
    fourier = [FourierConfig(7.0, 2, 4)]
    tc = TrainConfig(lr=1e-2, epochs=5, seq_len=7, seed=3)
    p1, h1 = fit(linear_problem(), cfg, fourier, tc)
    p2, h2 = fit(linear_problem(), cfg, fourier, tc)
    assert h1 == h2
    assert p1.flatten().tobytes() == p2.flatten().tobytes()


def test_fit_rejects_mismatched_fourier():
    cfg = ModelConfig(L=4, D=4, n_heads=1, K=4, harmonics=(3,))
    with pytest.raises(ValueError, match="Fourier"):
        fit(linear_problem(), cfg, [FourierConfig(7.0, 2, 4)], TrainConfig(epochs=1))


def test_fit_history_matches_evaluate_loss():
    cfg = ModelConfig(L=4, D=4, n_heads=1, K=4, harmonics=(1,))
    fourier = [FourierConfig(7.0, 1, 4)]
    ds = linear_problem(n=20)
    tc = TrainConfig(epochs=2, lambda_f=0.1)
    params, hist = fit(ds, cfg, fourier, tc)
    from fourier_downscale.train import dataset_features
    ld, lh = evaluate_loss(params, cfg, tc, ds.x0, dataset_features(ds, fourier), ds.y)
    assert hist[-1][1:] == (ld, lh, ld + lh)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10))
def test_monotone_penalty(l1, l2):
    cfg = ModelConfig(L=4, D=4, n_heads=1, K=3, harmonics=(2,))
    p = perturbed_params(cfg)
    x0, feats, y = small_problem(cfg)
    lo, hi = sorted((l1, l2))
    a, _, _ = backward(x0, feats, y, p, cfg, TrainConfig(lambda_f=lo))
    b, _, _ = backward(x0, feats, y, p, cfg, TrainConfig(lambda_f=hi))
    assert b >= a


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(seq_len=0)
    tc = TrainConfig(lr=0.01, betas=(0.8, 0.9))
    assert TrainConfig.from_dict(tc.to_dict()) == tc
