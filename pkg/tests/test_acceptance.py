"""End-to-end acceptance checks. Each test records a PASS/FAIL line that is
printed in the terminal summary, then asserts."""

import json
import math
import time

import numpy as np
import pytest

from fourier_downscale.cli import dispatch
from fourier_downscale.evaluation import (
    DEFAULT_SYNTH,
    AblationSettings,
    WindowSpec,
    fit_variant,
    prepare_data,
    run_ablation_suite,
    synth_generate,
)
from fourier_downscale.features import FourierConfig, build_features
from fourier_downscale.hierarchy import BlendConfig, StageSpec, downscale, hierarchy_pairs, train_pipeline
from fourier_downscale.model import ModelConfig
from fourier_downscale.train import TrainConfig
from fourier_downscale.uncertainty import estimate_residual_model, intervals, rejection_rates

from conftest import ACCEPTANCE_RESULTS, gradient_check


def record(name, ok, detail):
    ACCEPTANCE_RESULTS[name] = (bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def test_gradient_oracle():
    start = time.perf_counter()
    worst = {}
    for use_fourier in (True, False):
        for use_attention in (True, False):
            cfg = ModelConfig(L=8, D=8, n_heads=2, K=4, harmonics=(2,) if use_fourier else (),
                              use_fourier=use_fourier, use_attention=use_attention)
            errs, max_abs = gradient_check(cfg, T=5, seed=0, lambda_f=1e-2)
            worst[(use_fourier, use_attention)] = (max(errs.values()), max_abs)
    elapsed = time.perf_counter() - start
    ok = all(rel < 1e-4 for rel, _ in worst.values()) and elapsed < 120
    detail = ", ".join(f"fourier={f} attn={a}: rel {rel:.1e} abs {ab:.1e}" for (f, a), (rel, ab) in worst.items())
    record("gradient oracle", ok, f"{detail} (rel counted where abs > 1e-8); {elapsed:.1f}s")


# exact sin(m*pi/12) for m = 0..6
_SIN_TWELFTHS = [0.0, (math.sqrt(6) - math.sqrt(2)) / 4, 0.5, math.sqrt(2) / 2, math.sqrt(3) / 2,
                 (math.sqrt(6) + math.sqrt(2)) / 4, 1.0]


def exact_sin_twelfths(m):
    m %= 24
    if m <= 6:
        return _SIN_TWELFTHS[m]
    if m <= 12:
        return _SIN_TWELFTHS[12 - m]
    return -exact_sin_twelfths(m - 12)


def test_fourier_exactness():
    # P=12, K=2: every angle 2 pi k (t + s/2) / 12 is a multiple of pi/12
    cfg = FourierConfig(12.0, 3, 2)
    worst = 0.0
    for t in range(-30, 31):
        X = build_features(t, cfg)
        for s in range(2):
            for k in range(1, 4):
                m = k * (2 * t + s)
                worst = max(worst, abs(X[s, 2 * k - 2] - exact_sin_twelfths(m)),
                            abs(X[s, 2 * k - 1] - exact_sin_twelfths(m + 6)))
    quarter = build_features(1, FourierConfig(4.0, 1, 1))[0]
    worst = max(worst, abs(quarter[0] - 1.0), abs(quarter[1]))

    rng = np.random.default_rng(0)
    pair = 0.0
    for _ in range(300):
        X = build_features(rng.uniform(-1e4, 1e4), FourierConfig(rng.uniform(0.5, 400), 5, 24),
                           rng.uniform(-1, 1))
        pair = max(pair, float(np.max(np.abs(X[:, 0::2] ** 2 + X[:, 1::2] ** 2 - 1.0))))
    record("Fourier exactness", worst <= 1e-12 and pair <= 1e-12,
           f"max error at rational phases {worst:.1e}, max |sin^2+cos^2-1| {pair:.1e}")


def test_covariance_oracle():
    r = np.array([[1.0, 2.0], [3.0, 0.0], [2.0, 4.0]])
    rm = estimate_residual_model(r, np.zeros_like(r))
    hand = np.array([[1.0, -1.0], [-1.0, 4.0]])
    err = float(np.max(np.abs(rm.sigma - hand)))
    rng = np.random.default_rng(1)
    worst_ratio = 0.0
    for _ in range(200):
        n, K = rng.integers(2, 60), rng.integers(1, 30)
        res = rng.normal(size=(n, K)) @ rng.normal(size=(K, K)) * rng.uniform(0.01, 1e3)
        s = estimate_residual_model(res, np.zeros_like(res)).sigma
        worst_ratio = min(worst_ratio, float(np.linalg.eigvalsh(s).min() / max(np.trace(s), 1e-300)))
    record("covariance oracle", err <= 1e-12 and worst_ratio >= -1e-10,
           f"hand fixture error {err:.1e}; min eigenvalue / trace {worst_ratio:.1e} over 200 fixtures")


def test_calibration_property():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    K, n_train, W = 24, 2000, 600
    hours = np.arange(K)
    scale = 5.0 + 3.0 * np.sin(2 * np.pi * hours / K)
    cov = scale[:, None] * scale[None, :] * 0.8 ** np.abs(hours[:, None] - hours[None, :])
    chol = np.linalg.cholesky(cov)
    train_fit = rng.normal(100, 10, size=(n_train, K))
    train_y = train_fit + rng.normal(size=(n_train, K)) @ chol.T
    rm = estimate_residual_model(train_y, train_fit)
    yhat = rng.normal(100, 10, size=(W, K))
    y = yhat + rng.normal(size=(W, K)) @ chol.T
    _, s = rejection_rates(y, intervals(yhat, rm, alpha=0.05))
    elapsed = time.perf_counter() - start
    ok = 0.03 <= s["mean"] <= 0.07 and s["min"] <= s["mean"] <= s["max"] and elapsed < 60
    record("calibration property", ok,
           f"{W} windows, rejection min {s['min']:.3f} mean {s['mean']:.3f} max {s['max']:.3f}; {elapsed:.1f}s")


ABLATION = AblationSettings(L=32, D=16, n_heads=2, train_fraction=0.8, fourier=((7.0, 3),),
                            train=TrainConfig(lr=5e-3, epochs=100, seq_len=14, lambda_f=1e-4),
                            windows=WindowSpec(n_windows=70, stride=1))


def test_ablation_ordering():
    start = time.perf_counter()
    beats_simple = lowest = 0
    rows = []
    for seed in range(3):
        raw = synth_generate(**DEFAULT_SYNTH, n_days=365, seed=100 + seed)
        reps = {r.variant: r for r in run_ablation_suite(
            raw, [seed], ["simple_rnn", "rnn_attn", "fourier_rnn"], ABLATION)}
        m = {k: r.mean_rmse for k, r in reps.items()}
        beats_simple += m["fourier_rnn"] < m["simple_rnn"]
        lowest += m["fourier_rnn"] == min(m.values())
        rows.append(" ".join(f"{k}={v:.3f}" for k, v in m.items()))
    elapsed = time.perf_counter() - start
    ok = beats_simple >= 2 and lowest >= 2 and elapsed < 15 * 60
    record("ablation ordering", ok,
           f"fourier_rnn < simple_rnn in {beats_simple}/3 seeds, lowest in {lowest}/3 "
           f"[{'; '.join(rows)}]; {elapsed:.0f}s")


def test_hierarchy_shape_and_consistency():
    raw = synth_generate(harmonics=[(20, 24, 0), (6, 168, 10), (60, 8760, 2000)], slope=0.0005,
                         noise_sd=2, day_noise_sd=5, n_days=365 * 4, seed=1, level=500)
    datasets = hierarchy_pairs(raw, (365, 24))
    stages = [
        StageSpec("year_to_day", 365, ModelConfig(L=16, D=8, K=365, harmonics=(3,)),
                  [FourierConfig(1.0, 3, 365)], TrainConfig(lr=5e-3, epochs=30, seq_len=14)),
        StageSpec("day_to_hour", 24, ModelConfig(L=16, D=8, K=24, harmonics=(3,)),
                  [FourierConfig(7.0, 3, 24)], TrainConfig(lr=5e-3, epochs=20, seq_len=14)),
    ]
    pipeline = train_pipeline(stages, datasets, BlendConfig(0.5))
    yearly = datasets[0].x0
    out, per_stage = downscale(pipeline, yearly, reconcile=True, return_stages=True)
    gaps = [float(np.max(np.abs(fine.mean(axis=1) - drivers))) for drivers, fine in per_stage]
    single = downscale(pipeline, yearly[:1], reconcile=True)
    ok = len(single) == 8760 and len(out) == 8760 * len(yearly) and max(gaps) <= 1e-9
    record("hierarchical shape/consistency", ok,
           f"{len(single)} values per yearly input; max block aggregate gap per stage "
           f"{', '.join(f'{g:.1e}' for g in gaps)}")


def test_determinism(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": {"L": 16, "D": 8}, "train": {"epochs": 15},
                               "eval": {"windows": 20, "stride": 24}, "seed": 11}))
    data = tmp_path / "load.csv"
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        codes = [
            dispatch(["synth", "--days", "120", "--seed", "5", "--out", str(data)]),
            dispatch(["train", "--data", str(data), "--config", str(cfg), "--out", str(d / "model.json")]),
            dispatch(["evaluate", "--checkpoint", str(d / "model.json"), "--out", str(d / "report.json")]),
        ]
        assert codes == [0, 0, 0]
        outputs.append(((d / "model.json").read_bytes(), (d / "report.json").read_bytes()))
    same_ckpt = outputs[0][0] == outputs[1][0]
    same_report = outputs[0][1] == outputs[1][1]
    record("determinism", same_ckpt and same_report,
           f"checkpoints identical: {same_ckpt}, reports identical: {same_report}")


def test_loss_decrease():
    raw = synth_generate(**DEFAULT_SYNTH, n_days=120, seed=7)
    settings = AblationSettings(L=32, D=16, n_heads=2, train_fraction=0.8,
                                train=TrainConfig(lr=5e-3, epochs=60, seq_len=14, lambda_f=1e-4, seed=0))
    train, _ = prepare_data(raw, settings)
    fm = fit_variant("fourier_rnn", train, settings, seed=0)
    hist = fm.meta["history"]
    first, last = hist[0][3], hist[-1][3]
    record("loss decrease", last <= 0.5 * first,
           f"fourier_rnn total training loss {first:.3f} -> {last:.3f} "
           f"({100 * (1 - last / first):.1f}% reduction over {len(hist) - 1} epochs)")
