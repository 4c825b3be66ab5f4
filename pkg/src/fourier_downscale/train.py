"""Loss, analytic gradients, clipping, Adam and the training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .features import FourierConfig, feature_tensor
from .ingest import MultiResolutionDataset
from .model import (
    Gradients,
    LatentTrace,
    ModelConfig,
    ModelParams,
    _forward,
    backward_sequence,
    init_params,
)

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, msg: str, step: int | None = None):
        super().__init__(msg)
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 1.0
    lambda_f: float = 1e-4
    epochs: int = 100
    seq_len: int = 14
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.lambda_f < 0:
            raise ValueError("lambda_f must be >= 0")
        if self.seq_len < 1 or self.epochs < 0:
            raise ValueError("seq_len must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def loss_data(trace: LatentTrace | np.ndarray, y: np.ndarray) -> float:
    """Squared error summed over the K sub-periods, averaged over periods."""
    yhat = trace.yhat if isinstance(trace, LatentTrace) else np.asarray(trace)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("loss_data needs T >= 1")
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch {yhat.shape} vs {y.shape}")
    r = yhat - y
    return float(np.sum(r * r) / len(y))


def loss_harm(params: ModelParams, cfg: ModelConfig, lambda_f: float) -> float:
    """Harmonic-order-weighted ridge on the Fourier projection rows."""
    if not cfg.use_fourier or lambda_f == 0 or params["V"].size == 0:
        return 0.0
    w2 = cfg.harmonic_weights() ** 2
    return float(lambda_f * np.sum(params["V"] ** 2 * w2[:, None]))


def _harm_grad(params, cfg, lambda_f):
    w2 = cfg.harmonic_weights() ** 2
    return 2.0 * lambda_f * w2[:, None] * params["V"]


def backward(x0_seq, feats, y, params: ModelParams, cfg: ModelConfig, train_cfg: TrainConfig,
             h_init: np.ndarray | None = None, step: int | None = None):
    """Total loss and exact gradients for one sequence.

    When ``h_init`` is given the sequence starts from that (detached) state and
    ``h0`` receives no gradient. Returns ``(loss, grads, final_hidden)``.
    """
    y = np.asarray(y, dtype=np.float64)
    trace, cache = _forward(x0_seq, feats, params, cfg, h_init)
    ld = loss_data(trace, y)
    lh = loss_harm(params, cfg, train_cfg.lambda_f)
    loss = ld + lh
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {step}", step)
    dY = 2.0 * (trace.yhat - y) / len(y)
    grads = backward_sequence(dY, trace, cache, feats, params, cfg, from_h0=h_init is None)
    if cfg.use_fourier and train_cfg.lambda_f:
        grads["V"] += _harm_grad(params, cfg, train_cfg.lambda_f)
    h_last = trace.h[-1].copy() if len(trace) else cache.h_init
    return loss, grads, h_last


def clip_gradients(grads: Gradients, clip_norm: float) -> Gradients:
    norm = grads.global_norm()
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return Gradients({k: v * scale for k, v in grads.items()})


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(params: ModelParams, grads: Gradients, state: AdamState, train_cfg: TrainConfig,
              step_index: int | None = None) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam. Returns new params and state; inputs are not mutated."""
    t = state.step + 1 if step_index is None else step_index
    if t < 1:
        raise ValueError("step_index must be >= 1")
    b1, b2 = train_cfg.betas
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = ModelParams(), ModelParams(), ModelParams()
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - train_cfg.lr * (m / c1) / (np.sqrt(v / c2) + train_cfg.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


def dataset_features(ds: MultiResolutionDataset, fourier: Sequence[FourierConfig],
                     phase0: float = 0.0) -> np.ndarray:
    if not fourier:
        return np.zeros((len(ds), ds.K, 0))
    return feature_tensor(ds.t, fourier, phase0)


def evaluate_loss(params, cfg, train_cfg, x0, feats, y) -> tuple[float, float]:
    trace, _ = _forward(x0, feats, params, cfg)
    return loss_data(trace, y), loss_harm(params, cfg, train_cfg.lambda_f)


def fit(dataset: MultiResolutionDataset, cfg: ModelConfig, fourier: Sequence[FourierConfig],
        train_cfg: TrainConfig, phase0: float = 0.0, params: ModelParams | None = None):
    """Truncated-BPTT training over chunks of ``seq_len`` periods.

    The hidden state is carried (detached) from one chunk to the next within an
    epoch. Returns ``(params, history)`` where history rows are
    ``(epoch, loss_data, loss_harm, loss_total)`` measured on the full training
    sequence before training (epoch 0) and after each epoch; empty when
    ``epochs == 0``.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    if sum(c.F for c in fourier) != sum(cfg.harmonics):
        raise ValueError("Fourier blocks do not match ModelConfig.harmonics")
    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = init_params(cfg, rng)
    params = params.copy()
    history: list[tuple[int, float, float, float]] = []
    if train_cfg.epochs == 0:
        return params, history

    x0, y = dataset.x0, dataset.y
    feats = dataset_features(dataset, fourier, phase0)
    n, T = len(x0), train_cfg.seq_len
    chunks = [slice(i, min(i + T, n)) for i in range(0, n, T)]

    def record(epoch):
        ld, lh = evaluate_loss(params, cfg, train_cfg, x0, feats, y)
        if not np.isfinite(ld + lh):
            raise DivergenceError(f"non-finite loss after epoch {epoch}", epoch)
        history.append((epoch, ld, lh, ld + lh))

    record(0)
    state = AdamState.zeros(params)
    for epoch in range(1, train_cfg.epochs + 1):
        h = None
        for sl in chunks:
            try:
                _, grads, h = backward(x0[sl], feats[sl], y[sl], params, cfg, train_cfg,
                                       h_init=h, step=state.step + 1)
            except DivergenceError as exc:
                raise DivergenceError(f"divergence in epoch {epoch}: {exc}", epoch) from exc
            grads = clip_gradients(grads, train_cfg.clip_norm)
            params, state = adam_step(params, grads, state, train_cfg)
        record(epoch)
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.6g", epoch, history[-1][3])
    return params, history
