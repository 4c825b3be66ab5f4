"""Fourier-enhanced recurrent downscaler: forward pass and per-layer backward
passes.

Per period t the network computes

    h_t  = cell(h_{t-1}, x0_t)                    recurrent path, x0 only
    f_t  = (X_f,t V)^T softmax(a_logits)          seasonal path
    z_t  = h_t + f_t
    zt_t = z_t + sigmoid(G z_t) * attn(z_t)       gated self-attention over the L latent tokens
    yhat = A zt_t + c

Everything except the recurrence is independent across t, so those layers are
vectorized over the time axis. Backward functions mirror each forward and
return gradients into a dict keyed like :class:`ModelParams`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .features import harmonic_weights_from_orders

GRU_NAMES = ("W_z", "u_z", "b_z", "W_r", "u_r", "b_r", "W_n", "u_n", "b_n")
ELMAN_NAMES = ("W_h", "w_x", "b")
ATTN_NAMES = (
    "E", "Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo",
    "ln1_g", "ln1_b", "W1", "b1", "W2", "b2", "ln2_g", "ln2_b", "w_out", "G",
)


@dataclass(frozen=True)
class ModelConfig:
    L: int = 32
    D: int = 16
    n_heads: int = 2
    K: int = 24
    harmonics: tuple[int, ...] = ()  # F of each Fourier block, in feature-column order
    use_attention: bool = True
    use_fourier: bool = True
    cell: str = "gru"
    d_ff: int | None = None
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "harmonics", tuple(int(h) for h in self.harmonics))
        if min(self.L, self.D, self.K, self.n_heads) < 1:
            raise ValueError("L, D, K and n_heads must be >= 1")
        if self.D % self.n_heads:
            raise ValueError(f"D={self.D} not divisible by n_heads={self.n_heads}")
        if self.cell not in ("gru", "elman"):
            raise ValueError(f"cell must be 'gru' or 'elman', got {self.cell!r}")

    @property
    def feat_width(self) -> int:
        return 2 * sum(self.harmonics)

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.D

    @property
    def head_dim(self) -> int:
        return self.D // self.n_heads

    def harmonic_weights(self) -> np.ndarray:
        return harmonic_weights_from_orders(self.harmonics)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["harmonics"] = list(self.harmonics)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "harmonics": tuple(d.get("harmonics", ()))})


class ModelParams(dict):
    """Named float64 tensors. Iteration order is fixed by :func:`param_shapes`
    so the flattened view is stable."""

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams({k: np.zeros_like(v) for k, v in self.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values()])

    def unflatten(self, vec: np.ndarray) -> "ModelParams":
        out, i = ModelParams(), 0
        for k, v in self.items():
            out[k] = np.asarray(vec[i:i + v.size], dtype=np.float64).reshape(v.shape).copy()
            i += v.size
        return out

    @property
    def size(self) -> int:
        return sum(v.size for v in self.values())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(v * v)) for v in self.values())))


Gradients = ModelParams


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    L, D, K, Fw, Dff = cfg.L, cfg.D, cfg.K, cfg.feat_width, cfg.ff_width
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.cell == "gru":
        for g in "zrn":
            shapes[f"W_{g}"] = (L, L)
            shapes[f"u_{g}"] = (L,)
            shapes[f"b_{g}"] = (L,)
    else:
        shapes.update(W_h=(L, L), w_x=(L,), b=(L,))
    shapes["h0"] = (L,)
    shapes["V"] = (Fw, L)
    shapes["a_logits"] = (K,)
    shapes.update(
        E=(L, D), Wq=(D, D), bq=(D,), Wk=(D, D), bk=(D,), Wv=(D, D), bv=(D,),
        Wo=(D, D), bo=(D,), ln1_g=(D,), ln1_b=(D,), W1=(D, Dff), b1=(Dff,),
        W2=(Dff, D), b2=(D,), ln2_g=(D,), ln2_b=(D,), w_out=(D,), G=(L, L),
    )
    shapes["A"] = (K, L)
    shapes["c"] = (K,)
    return shapes


# fan-in used for uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; other tensors start at 0 (or 1 for LN scales)
def _fan_in(name: str, cfg: ModelConfig) -> int | None:
    L, D = cfg.L, cfg.D
    table = {
        "W_z": L, "W_r": L, "W_n": L, "W_h": L,
        "u_z": 1, "u_r": 1, "u_n": 1, "w_x": 1,
        "V": max(cfg.feat_width, 1), "E": 1,
        "Wq": D, "Wk": D, "Wv": D, "Wo": D,
        "W1": D, "W2": cfg.ff_width, "w_out": D, "G": L, "A": L,
    }
    return table.get(name)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    params = ModelParams()
    for name, shape in param_shapes(cfg).items():
        fan = _fan_in(name, cfg)
        if fan is not None:
            bound = 1.0 / np.sqrt(fan)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name in ("ln1_g", "ln2_g"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# recurrent cell
# --------------------------------------------------------------------------

def _rnn_step(h_prev, x0, p, cell):
    if cell == "elman":
        h = np.tanh(p["W_h"] @ h_prev + p["w_x"] * x0 + p["b"])
        return h, (h_prev, x0, h)
    z = sigmoid(p["W_z"] @ h_prev + p["u_z"] * x0 + p["b_z"])
    r = sigmoid(p["W_r"] @ h_prev + p["u_r"] * x0 + p["b_r"])
    rh = r * h_prev
    n = np.tanh(p["W_n"] @ rh + p["u_n"] * x0 + p["b_n"])
    h = (1.0 - z) * h_prev + z * n
    return h, (h_prev, x0, z, r, rh, n)


def rnn_step(h_prev: np.ndarray, x0: float, params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """One recurrent update from ``x0`` only.

    GRU: ``h = (1 - z) * h_prev + z * n`` with ``n = tanh(W_n (r * h_prev) + u_n x0 + b_n)``,
    so a closed update gate (z -> 0) keeps the previous state.
    """
    return _rnn_step(np.asarray(h_prev, dtype=np.float64), float(x0), params, cfg.cell)[0]


def _rnn_step_backward(dh, cache, p, g, cell):
    """Accumulate parameter grads into ``g``; return grad wrt h_prev."""
    if cell == "elman":
        h_prev, x0, h = cache
        da = dh * (1.0 - h * h)
        g["W_h"] += np.outer(da, h_prev)
        g["w_x"] += da * x0
        g["b"] += da
        return p["W_h"].T @ da
    h_prev, x0, z, r, rh, n = cache
    dz = dh * (n - h_prev)
    dn = dh * z
    dh_prev = dh * (1.0 - z)

    dan = dn * (1.0 - n * n)
    g["W_n"] += np.outer(dan, rh)
    g["u_n"] += dan * x0
    g["b_n"] += dan
    drh = p["W_n"].T @ dan
    dh_prev += drh * r
    dr = drh * h_prev

    daz = dz * z * (1.0 - z)
    g["W_z"] += np.outer(daz, h_prev)
    g["u_z"] += daz * x0
    g["b_z"] += daz
    dh_prev += p["W_z"].T @ daz

    dar = dr * r * (1.0 - r)
    g["W_r"] += np.outer(dar, h_prev)
    g["u_r"] += dar * x0
    g["b_r"] += dar
    dh_prev += p["W_r"].T @ dar
    return dh_prev


# --------------------------------------------------------------------------
# Fourier projection
# --------------------------------------------------------------------------

def fourier_project(X_f: np.ndarray, params: ModelParams) -> np.ndarray:
    """Softmax-weighted combination of the K rows of ``X_f @ V``.

    Accepts a single K x W matrix or a stack (T, K, W)."""
    V = params["V"]
    a_logits = params["a_logits"]
    if X_f.shape[-1] != V.shape[0] or X_f.shape[-2] != a_logits.shape[0]:
        raise ValueError(f"feature shape {X_f.shape} does not match V {V.shape} / K={a_logits.shape[0]}")
    G = X_f @ V
    a = softmax(a_logits)
    return np.einsum("...kl,k->...l", G, a)


def _fourier_backward(df, X_f, p, g):
    a = softmax(p["a_logits"])
    G = X_f @ p["V"]  # (T, K, L)
    dG = a[None, :, None] * df[:, None, :]
    g["V"] += np.einsum("tkf,tkl->fl", X_f, dG)
    da = np.einsum("tkl,tl->k", G, df)
    g["a_logits"] += a * (da - a @ da)


# --------------------------------------------------------------------------
# attention block
# --------------------------------------------------------------------------

def _layer_norm(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def _layer_norm_backward(dy, cache, gamma):
    xhat, inv = cache
    red = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=red)
    dbeta = np.sum(dy, axis=red)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _split_heads(x, n_heads):
    T, L, D = x.shape
    return x.reshape(T, L, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    T, nh, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(T, L, nh * dh)


def _attention_forward(Z, p, cfg):
    """Z: (T, L) -> (Zt, Delta, cache)."""
    tok = Z[:, :, None] * p["E"][None, :, :]  # (T, L, D): token l = z_l * E[l]
    Q = tok @ p["Wq"] + p["bq"]
    Kk = tok @ p["Wk"] + p["bk"]
    Vv = tok @ p["Wv"] + p["bv"]
    Qh, Kh, Vh = (_split_heads(m, cfg.n_heads) for m in (Q, Kk, Vv))
    scale = 1.0 / np.sqrt(cfg.head_dim)
    P = softmax(Qh @ Kh.transpose(0, 1, 3, 2) * scale, axis=-1)
    O = _merge_heads(P @ Vh)
    U = O @ p["Wo"] + p["bo"]
    H, ln1 = _layer_norm(tok + U, p["ln1_g"], p["ln1_b"], cfg.ln_eps)
    A1 = H @ p["W1"] + p["b1"]
    R = np.maximum(A1, 0.0)
    Fo = R @ p["W2"] + p["b2"]
    N2, ln2 = _layer_norm(H + Fo, p["ln2_g"], p["ln2_b"], cfg.ln_eps)
    delta = N2 @ p["w_out"]  # (T, L)
    gate = sigmoid(Z @ p["G"].T)
    Zt = Z + gate * delta
    cache = (Z, tok, Qh, Kh, Vh, P, O, H, ln1, A1, R, N2, ln2, delta, gate)
    return Zt, cache


def _attention_backward(dZt, cache, p, g, cfg):
    Z, tok, Qh, Kh, Vh, P, O, H, ln1, A1, R, N2, ln2, delta, gate = cache
    dZ = dZt.copy()
    dgl = dZt * delta * gate * (1.0 - gate)
    ddelta = dZt * gate
    g["G"] += np.einsum("tl,tm->lm", dgl, Z)
    dZ += dgl @ p["G"]

    g["w_out"] += np.einsum("tld,tl->d", N2, ddelta)
    dN2 = ddelta[:, :, None] * p["w_out"]
    dX2, dg2, db2 = _layer_norm_backward(dN2, ln2, p["ln2_g"])
    g["ln2_g"] += dg2
    g["ln2_b"] += db2

    dH = dX2.copy()
    g["W2"] += np.einsum("tlf,tld->fd", R, dX2)
    g["b2"] += dX2.sum(axis=(0, 1))
    dA1 = (dX2 @ p["W2"].T) * (A1 > 0)
    g["W1"] += np.einsum("tld,tlf->df", H, dA1)
    g["b1"] += dA1.sum(axis=(0, 1))
    dH += dA1 @ p["W1"].T

    dX1, dg1, db1 = _layer_norm_backward(dH, ln1, p["ln1_g"])
    g["ln1_g"] += dg1
    g["ln1_b"] += db1
    dtok = dX1.copy()
    dU = dX1
    g["Wo"] += np.einsum("tle,tld->ed", O, dU)
    g["bo"] += dU.sum(axis=(0, 1))
    dOh = _split_heads(dU @ p["Wo"].T, cfg.n_heads)

    dP = dOh @ Vh.transpose(0, 1, 3, 2)
    dVh = P.transpose(0, 1, 3, 2) @ dOh
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True)) / np.sqrt(cfg.head_dim)
    dQh = dS @ Kh
    dKh = dS.transpose(0, 1, 3, 2) @ Qh
    for name, dh_ in (("q", dQh), ("k", dKh), ("v", dVh)):
        dm = _merge_heads(dh_)
        g[f"W{name}"] += np.einsum("tle,tld->ed", tok, dm)
        g[f"b{name}"] += dm.sum(axis=(0, 1))
        dtok += dm @ p[f"W{name}"].T

    g["E"] += np.einsum("tld,tl->ld", dtok, Z)
    dZ += np.einsum("tld,ld->tl", dtok, p["E"])
    return dZ


def attention_block(z: np.ndarray, params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """Gated self-attention refinement of a latent vector (L,) or stack (T, L).
    Returns ``z`` unchanged when attention is disabled."""
    z = np.asarray(z, dtype=np.float64)
    if not cfg.use_attention:
        return z.copy()
    Zt, _ = _attention_forward(np.atleast_2d(z), params, cfg)
    return Zt.reshape(z.shape)


def output_head(zt: np.ndarray, params: ModelParams) -> np.ndarray:
    return zt @ params["A"].T + params["c"]


# --------------------------------------------------------------------------
# full sequence
# --------------------------------------------------------------------------

class LatentTrace(NamedTuple):
    h: np.ndarray  # (T, L)
    f: np.ndarray
    z: np.ndarray
    zt: np.ndarray
    yhat: np.ndarray  # (T, K)

    def __len__(self) -> int:
        return len(self.yhat)


@dataclass
class _Cache:
    h_init: np.ndarray
    steps: list = field(default_factory=list)
    attn: tuple | None = None


def _forward(x0_seq, feats, params, cfg, h_init=None):
    x0_seq = np.asarray(x0_seq, dtype=np.float64).ravel()
    T, L = len(x0_seq), cfg.L
    if cfg.use_fourier:
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape != (T, cfg.K, cfg.feat_width):
            raise ValueError(f"feats shape {feats.shape} != {(T, cfg.K, cfg.feat_width)}")
    h_prev = params["h0"].copy() if h_init is None else np.asarray(h_init, dtype=np.float64).copy()
    cache = _Cache(h_init=h_prev.copy())
    H = np.empty((T, L))
    for t in range(T):
        h_prev, c = _rnn_step(h_prev, x0_seq[t], params, cfg.cell)
        H[t] = h_prev
        cache.steps.append(c)
    Fv = fourier_project(feats, params) if (cfg.use_fourier and T) else np.zeros((T, L))
    Z = H + Fv
    if cfg.use_attention and T:
        Zt, cache.attn = _attention_forward(Z, params, cfg)
    else:
        Zt = Z.copy()
    Y = output_head(Zt, params) if T else np.zeros((0, cfg.K))
    return LatentTrace(H, Fv, Z, Zt, Y), cache


def forward_sequence(x0_seq, feats, params: ModelParams, cfg: ModelConfig,
                     h_init: np.ndarray | None = None) -> LatentTrace:
    """Run the network over T periods. ``feats`` is (T, K, feat_width) and is
    ignored when the Fourier path is disabled. ``h_init`` overrides the
    learnable initial state."""
    if cfg.use_fourier and feats is not None and len(feats) != len(np.ravel(x0_seq)):
        raise ValueError("x0_seq and feats have different lengths")
    return _forward(x0_seq, feats, params, cfg, h_init)[0]


def backward_sequence(dY, trace: LatentTrace, cache: _Cache, feats, params: ModelParams,
                      cfg: ModelConfig, from_h0: bool = True) -> Gradients:
    """Reverse pass for one sequence given dLoss/dyhat (T, K)."""
    g = params.zeros_like()
    T = len(dY)
    if T == 0:
        return g
    g["A"] += dY.T @ trace.zt
    g["c"] += dY.sum(axis=0)
    dZt = dY @ params["A"]
    dZ = _attention_backward(dZt, cache.attn, params, g, cfg) if cfg.use_attention else dZt
    if cfg.use_fourier:
        _fourier_backward(dZ, feats, params, g)
    dh = np.zeros(cfg.L)
    for t in range(T - 1, -1, -1):
        dh = _rnn_step_backward(dZ[t] + dh, cache.steps[t], params, g, cfg.cell)
    if from_h0:
        g["h0"] += dh
    return g
