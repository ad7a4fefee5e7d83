"""Flow-matching mechanics: interpolant, loss target, training step, and
an explicit Euler sampler with full path recording."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericError
from .nets import AdamState, MlpParams, adam_step, loss_and_grad, mlp_forward
from .prior import PriorSpec

# Training times are rejected above this cap: the regression target is
# fine there for the linear interpolant, but the diagnostics reuse the
# same draws and their 1/(1-t)^2 weighting is fragile at t ~ 1.
T_CAP = 1.0 - 1e-6


@dataclass(frozen=True)
class Interpolant:
    """Path coefficients a_t = alpha(t) a0 + beta(t) a1 and their derivatives."""

    alpha: Callable
    beta: Callable
    alpha_dot: Callable
    beta_dot: Callable
    tag: str = "custom"

    def check_endpoints(self, atol: float = 1e-12) -> None:
        for name, fn, t, want in (("alpha", self.alpha, 0.0, 1.0),
                                  ("alpha", self.alpha, 1.0, 0.0),
                                  ("beta", self.beta, 0.0, 0.0),
                                  ("beta", self.beta, 1.0, 1.0)):
            got = float(fn(np.float64(t)))
            if abs(got - want) > atol:
                raise ConfigurationError(f"{name}({t}) = {got}, expected {want}")


def linear_interpolant() -> Interpolant:
    return Interpolant(alpha=lambda t: 1.0 - t,
                       beta=lambda t: t + np.zeros_like(np.asarray(t, dtype=np.float64)),
                       alpha_dot=lambda t: -1.0 + np.zeros_like(np.asarray(t, dtype=np.float64)),
                       beta_dot=lambda t: 1.0 + np.zeros_like(np.asarray(t, dtype=np.float64)),
                       tag="linear")


LINEAR = linear_interpolant()


def _coeff(fn, t, batch_ndim: int):
    """Evaluate a coefficient and shape it to broadcast over chunk axes."""
    c = np.asarray(fn(np.asarray(t, dtype=np.float64)), dtype=np.float64)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * batch_ndim)


def interpolate(interp: Interpolant, a0: np.ndarray, a1: np.ndarray, t) -> np.ndarray:
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    if a0.shape != a1.shape:
        raise ConfigurationError(f"a0 {a0.shape} and a1 {a1.shape} differ in shape")
    nd = 2 if a0.ndim == 3 else 0
    return _coeff(interp.alpha, t, nd) * a0 + _coeff(interp.beta, t, nd) * a1


def target_velocity(interp: Interpolant, a0: np.ndarray, a1: np.ndarray, t) -> np.ndarray:
    """Regression target alpha_dot(t) a0 + beta_dot(t) a1 (a1 - a0 when linear)."""
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    if a0.shape != a1.shape:
        raise ConfigurationError(f"a0 {a0.shape} and a1 {a1.shape} differ in shape")
    nd = 2 if a0.ndim == 3 else 0
    return _coeff(interp.alpha_dot, t, nd) * a0 + _coeff(interp.beta_dot, t, nd) * a1


def sample_time(rng: np.random.Generator, n: int, cap: float = T_CAP) -> np.ndarray:
    """Uniform draws on [0, 1] with rejection of values above the cap."""
    t = rng.uniform(0.0, 1.0, size=n)
    bad = t > cap
    while np.any(bad):
        t[bad] = rng.uniform(0.0, 1.0, size=int(bad.sum()))
        bad = t > cap
    return t


# ---------------------------------------------------------------------------
# ODE integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowPath:
    """Recorded integration path from t=0 to t=1."""

    times: np.ndarray          # (K+1,), strictly increasing, 0 .. 1
    states: np.ndarray         # (K+1, P, d_a)
    velocities: np.ndarray     # (K, P, d_a)

    def __post_init__(self):
        if self.times[0] != 0.0 or self.times[-1] != 1.0:
            raise ConfigurationError("path must span t=0 .. t=1")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("path times must be strictly increasing")
        if len(self.states) != len(self.times) or len(self.velocities) != len(self.times) - 1:
            raise ConfigurationError("path arrays are inconsistent")

    def write_csv(self, path, config_hash: str = "", seed: int = 0,
                  path_id: int = 0, append: bool = False) -> None:
        """Columns (path, t, coord, value): one row per state coordinate."""
        mode = "a" if append else "w"
        with open(path, mode, newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(["path", "t", "coord", "value", "config_hash", "seed"])
            flat = self.states.reshape(len(self.times), -1)
            for k, t in enumerate(self.times):
                for c in range(flat.shape[1]):
                    w.writerow([path_id, repr(float(t)), c, repr(float(flat[k, c])),
                                config_hash, seed])


def integrate_field(field: Callable, a0: np.ndarray, nfe: int):
    """Uniform-step explicit Euler for da/dt = field(t, a). Returns the final
    state and the full FlowPath. field maps (t scalar, state) -> velocity."""
    if nfe < 1:
        raise ConfigurationError("nfe must be >= 1")
    x = np.asarray(a0, dtype=np.float64)
    states = [x]
    vels = []
    dt = 1.0 / nfe
    for k in range(nfe):
        v = np.asarray(field(k * dt, x), dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite velocity at integration step {k}", step=k)
        x = x + dt * v
        states.append(x)
        vels.append(v)
    times = np.arange(nfe + 1, dtype=np.float64) / nfe
    times[-1] = 1.0
    return x, FlowPath(times, np.stack(states), np.stack(vels))


def euler_sample(params: MlpParams, a0: np.ndarray, o: np.ndarray, nfe: int):
    """Integrate the learned field from a0 under observation o."""
    return integrate_field(lambda t, x: mlp_forward(params, t, x, o), a0, nfe)


def euler_sample_batch(params: MlpParams, a0: np.ndarray, o: np.ndarray, nfe: int):
    """Vectorized Euler over a batch of starting points/observations.

    Returns (final states (B, P, d_a), velocities (nfe, B, P, d_a)).
    """
    if nfe < 1:
        raise ConfigurationError("nfe must be >= 1")
    x = np.asarray(a0, dtype=np.float64)
    if x.ndim != 3:
        raise ConfigurationError("euler_sample_batch expects a (B, P, d_a) batch")
    b = x.shape[0]
    dt = 1.0 / nfe
    vels = np.empty((nfe,) + x.shape)
    for k in range(nfe):
        t = np.full(b, k * dt)
        v = mlp_forward(params, t, x, o)
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite velocity at integration step {k}", step=k)
        vels[k] = v
        x = x + dt * v
    return x, vels


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def build_train_prior(prior: PriorSpec, a1: np.ndarray, idx: np.ndarray,
                      episode_starts: np.ndarray, buffer_actions: np.ndarray,
                      eps: np.ndarray) -> np.ndarray:
    """Vectorized training-time source construction for a batch.

    a1: (B, P, d_a) targets; idx: (B,) window-start buffer indices; eps:
    (B, P, d_a) standard normal. Past windows crossing an episode boundary
    fall back to the plain Gaussian source.
    """
    a0 = eps.copy()
    h = prior.chunk_len
    if prior.variant == "past":
        ep = np.searchsorted(episode_starts, idx, side="right") - 1
        warm = (idx - h) >= episode_starts[ep]
        if np.any(warm):
            rows = idx[warm, None] - h + np.arange(h)[None, :]
            a0[warm] = buffer_actions[rows] + prior.sigma * eps[warm]
    elif prior.variant == "preview":
        a0[:, :h] = a1[:, :h] + prior.sigma * eps[:, :h]
    return a0


def fm_train_step(params: MlpParams, adam: AdamState, dataset, prior: PriorSpec,
                  rng: np.random.Generator, batch_size: int = 256,
                  interp: Interpolant = LINEAR, hook: Callable | None = None):
    """One training iteration: sample windows, build the source, regress the
    velocity onto the interpolant derivative, take an AdamW step.

    Returns (new params, new adam state, loss).
    """
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    if dataset.prediction_len != prior.prediction_len:
        raise ConfigurationError(
            f"dataset windows have P={dataset.prediction_len}, prior wants "
            f"{prior.prediction_len}")
    b = min(batch_size, len(dataset))
    sel = rng.integers(0, len(dataset), size=b)
    obs = dataset.obs[sel]
    a1 = dataset.targets[sel]
    idx = dataset.start_idx[sel]
    eps = rng.standard_normal(a1.shape)
    a0 = build_train_prior(prior, a1, idx, dataset.buffer.episode_starts,
                           dataset.buffer.actions, eps)
    t = sample_time(rng, b)
    a_t = interpolate(interp, a0, a1, t)
    v_t = target_velocity(interp, a0, a1, t)
    loss, grads = loss_and_grad(params, t, a_t, obs, v_t)
    new_params, new_adam = adam_step(adam, params, grads)
    if hook is not None:
        hook({"a0": a0, "a1": a1, "eps": eps, "t": t, "idx": idx, "obs": obs,
              "loss": loss})
    return new_params, new_adam, loss
