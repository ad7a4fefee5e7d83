"""Dense MLP kernel: forward pass, manual reverse-mode gradients, AdamW.

The velocity network is a plain fully connected stack over the
concatenation [time embedding | flattened chunk | observation]. Everything
runs in float64 — the nets are tiny and the quadrature diagnostics
downstream want the headroom. Parameter containers are treated as
immutable values: every update returns fresh arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, NumericError
from .validation import check_unit_time

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; identical (seed, stream) gives identical draws."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(seq))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _gelu(z):
    phi = 0.5 * (1.0 + erf(z / _SQRT2))
    return z * phi


def _gelu_grad(z):
    phi = 0.5 * (1.0 + erf(z / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return phi + z * pdf


def _tanh(z):
    return np.tanh(z)


def _tanh_grad(z):
    th = np.tanh(z)
    return 1.0 - th * th


ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "tanh": (_tanh, _tanh_grad),
}


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of times in [0, 1], shape (B, dim).

    Log-spaced angular frequencies from 1 to 1e4; no learnable parameters.
    """
    if dim % 2 != 0 or dim < 2:
        raise ConfigurationError(f"time embedding dim must be even and >= 2, got {dim}")
    tv = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.power(10000.0, np.arange(half) / max(half - 1, 1))
    ang = tv[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpParams:
    """Weights/biases for L fully connected layers plus the input layout.

    weights[l] has shape (fan_in, fan_out); the activation is applied
    between layers but not after the last one.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    chunk_shape: tuple[int, int]          # (prediction length P, action dim d_a)
    obs_dim: int
    time_embed_dim: int = 128
    activation: str = "gelu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("weights and biases must be parallel, non-empty")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        dim = self.in_dim
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ConfigurationError(f"layer {l}: inconsistent weight/bias shapes")
            if w.shape[0] != dim:
                raise ConfigurationError(
                    f"layer {l}: fan_in {w.shape[0]} does not chain from {dim}")
            dim = w.shape[1]
        if dim != self.out_dim:
            raise ConfigurationError(
                f"last layer emits {dim}, expected {self.out_dim}")
        for l, arr in enumerate(self.arrays()):
            if not np.all(np.isfinite(arr)):
                raise NumericError("non-finite parameter", layer=l // 2)

    @property
    def chunk_size(self) -> int:
        return self.chunk_shape[0] * self.chunk_shape[1]

    @property
    def in_dim(self) -> int:
        return self.time_embed_dim + self.chunk_size + self.obs_dim

    @property
    def out_dim(self) -> int:
        return self.chunk_size

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def arrays(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] in a fixed order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "MlpParams":
        ws = tuple(arrays[0::2])
        bs = tuple(arrays[1::2])
        return replace(self, weights=ws, biases=bs)


def init_mlp(chunk_shape: tuple[int, int], obs_dim: int, rng: np.random.Generator,
             hidden_width: int = 1024, n_layers: int = 4, time_embed_dim: int = 128,
             activation: str = "gelu") -> MlpParams:
    """Fan-in-scaled uniform init for an L-layer stack in -> W -> ... -> out."""
    if n_layers < 1:
        raise ConfigurationError("need at least one layer")
    p, d_a = chunk_shape
    in_dim = time_embed_dim + p * d_a + obs_dim
    out_dim = p * d_a
    dims = [in_dim] + [hidden_width] * (n_layers - 1) + [out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(tuple(weights), tuple(biases), (p, d_a), obs_dim,
                     time_embed_dim, activation)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _assemble_inputs(params: MlpParams, t, a_t, o):
    """Stack (t, a_t, o) into the network input matrix. Returns (X, single?)."""
    a = np.asarray(a_t, dtype=np.float64)
    obs = np.asarray(o, dtype=np.float64)
    tv = check_unit_time(t)
    single = a.ndim == 2
    if single:
        a = a[None]
        obs = obs[None]
    if a.shape[1:] != params.chunk_shape:
        raise ConfigurationError(
            f"chunk shape {a.shape[1:]} does not match params {params.chunk_shape}")
    if obs.ndim != 2 or obs.shape[1] != params.obs_dim:
        raise ConfigurationError(
            f"observation dim {obs.shape[-1] if obs.ndim else '?'} "
            f"does not match params obs_dim={params.obs_dim}")
    b = a.shape[0]
    if tv.ndim == 0:
        tv = np.full(b, float(tv))
    if tv.shape != (b,):
        raise ConfigurationError(f"t has shape {tv.shape}, expected ({b},)")
    if obs.shape[0] != b:
        raise ConfigurationError("batch sizes of a_t and o differ")
    emb = time_embedding(tv, params.time_embed_dim)
    x = np.concatenate([emb, a.reshape(b, -1), obs], axis=1)
    return x, single


def _forward(params: MlpParams, x: np.ndarray):
    """Forward pass keeping per-layer caches for backprop."""
    act, _ = ACTIVATIONS[params.activation]
    hs = [x]      # layer inputs
    zs = []       # pre-activations of hidden layers
    h = x
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activation at layer {l}", layer=l)
        if l < last:
            zs.append(z)
            h = act(z)
            hs.append(h)
        else:
            h = z
    return h, hs, zs


def mlp_forward(params: MlpParams, t, a_t, o) -> np.ndarray:
    """Velocity prediction with the shape of a_t.

    Accepts a single chunk (P, d_a) with scalar t, or a batch
    (B, P, d_a) with t of shape (B,).
    """
    x, single = _assemble_inputs(params, t, a_t, o)
    y, _, _ = _forward(params, x)
    out = y.reshape(-1, *params.chunk_shape)
    return out[0] if single else out


def loss_and_grad(params: MlpParams, t, a_t, o, target_velocity):
    """Mean-squared-error loss over a batch and its exact parameter gradient.

    Returns (loss, grads) with grads a flat list parallel to
    params.arrays(). The loss is the mean over all batch elements and
    coordinates, so duplicating the batch leaves both outputs unchanged.
    """
    x, single = _assemble_inputs(params, t, a_t, o)
    if single:
        raise ConfigurationError("loss_and_grad expects a batch (B, P, d_a)")
    tgt = np.asarray(target_velocity, dtype=np.float64)
    if tgt.shape != np.asarray(a_t).shape:
        raise ConfigurationError(
            f"target shape {tgt.shape} does not match a_t {np.asarray(a_t).shape}")
    b = x.shape[0]
    y, hs, zs = _forward(params, x)
    resid = y - tgt.reshape(b, -1)
    n_elem = resid.size
    loss = float(np.mean(resid * resid))

    _, act_grad = ACTIVATIONS[params.activation]
    dz = (2.0 / n_elem) * resid
    grads: list[np.ndarray | None] = [None] * (2 * params.n_layers)
    for l in range(params.n_layers - 1, -1, -1):
        grads[2 * l] = hs[l].T @ dz
        grads[2 * l + 1] = dz.sum(axis=0)
        if l > 0:
            dh = dz @ params.weights[l].T
            dz = dh * act_grad(zs[l - 1])
    return loss, grads


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    """First/second-moment accumulators plus hyperparameters (decoupled decay)."""

    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.step < 0:
            raise ConfigurationError("Adam step counter must be >= 0")


def init_adam(params: MlpParams, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> AdamState:
    zeros = tuple(np.zeros_like(a) for a in params.arrays())
    return AdamState(zeros, tuple(np.zeros_like(a) for a in params.arrays()),
                     0, lr, beta1, beta2, eps, weight_decay)


def adam_step(state: AdamState, params: MlpParams, grads: list[np.ndarray]):
    """One AdamW update. Returns (new params, new state)."""
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ConfigurationError("gradient list does not match parameter list")
    step = state.step + 1
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step
    new_arrays, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ConfigurationError(
                f"gradient shape {g.shape} does not match parameter {p.shape}")
        m2 = state.beta1 * m + (1.0 - state.beta1) * g
        v2 = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        update = (m2 / bc1) / (np.sqrt(v2 / bc2) + state.eps)
        new_arrays.append(p - state.lr * (update + state.weight_decay * p))
        new_m.append(m2)
        new_v.append(v2)
    new_state = replace(state, m=tuple(new_m), v=tuple(new_v), step=step)
    return params.with_arrays(new_arrays), new_state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_SCHEMA = 1


def save_checkpoint(path, params: MlpParams, adam: AdamState | None = None,
                    step: int = 0, config_hash: str = "", extra: dict | None = None):
    """Versioned npz container: parameters, optimizer state, step, config hash."""
    payload: dict[str, np.ndarray] = {}
    for i, arr in enumerate(params.arrays()):
        payload[f"p{i}"] = arr
    if adam is not None:
        for i, arr in enumerate(adam.m):
            payload[f"m{i}"] = arr
        for i, arr in enumerate(adam.v):
            payload[f"v{i}"] = arr
    meta = {
        "schema_version": CHECKPOINT_SCHEMA,
        "step": int(step),
        "config_hash": config_hash,
        "arch": {
            "chunk_shape": list(params.chunk_shape),
            "obs_dim": params.obs_dim,
            "time_embed_dim": params.time_embed_dim,
            "activation": params.activation,
            "n_layers": params.n_layers,
        },
        "adam": None if adam is None else {
            "step": adam.step, "lr": adam.lr, "beta1": adam.beta1,
            "beta2": adam.beta2, "eps": adam.eps,
            "weight_decay": adam.weight_decay,
        },
        "extra": extra or {},
    }
    payload["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **payload)


def load_checkpoint(path):
    """Inverse of save_checkpoint. Returns (params, adam or None, step, meta)."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("schema_version") != CHECKPOINT_SCHEMA:
            raise ConfigurationError(
                f"unsupported checkpoint schema {meta.get('schema_version')!r}")
        arch = meta["arch"]
        n = 2 * arch["n_layers"]
        arrays = [data[f"p{i}"] for i in range(n)]
        params = MlpParams(tuple(arrays[0::2]), tuple(arrays[1::2]),
                           tuple(arch["chunk_shape"]), arch["obs_dim"],
                           arch["time_embed_dim"], arch["activation"])
        adam = None
        if meta["adam"] is not None:
            a = meta["adam"]
            adam = AdamState(tuple(data[f"m{i}"] for i in range(n)),
                             tuple(data[f"v{i}"] for i in range(n)),
                             a["step"], a["lr"], a["beta1"], a["beta2"],
                             a["eps"], a["weight_decay"])
    return params, adam, meta["step"], meta
