"""Flow-matching action-chunk policy with an sklearn-style estimator API.

fit() behavior-clones a velocity network on a ChunkDataset; predict()
generates the next action chunk for one observation, threading the
warm-start state the caller passes in. All randomness flows through
explicit numpy Generators, so fitted policies are reusable across
processes and rollouts can be replayed bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator

from . import flow
from .errors import ConfigurationError
from .nets import init_adam, init_mlp, make_rng
from .prior import PriorSpec, WarmMean, default_sigma, infer_mean, sample_prior
from .validation import as_float_array, check_fitted
from .worlds import ChunkDataset


class WarmFlowPolicy(BaseEstimator):
    """Generative action-chunk policy trained with flow matching.

    Parameters
    ----------
    variant : "gaussian", "past", or "preview" source distribution.
    sigma : residual noise scale on warm positions; None picks the
        per-variant default (0.5 past, 1.0 preview).
    chunk_len : actions executed per inference (H); preview predicts 2H.
    hidden_width, n_layers, time_embed_dim, activation : network shape.
    lr, weight_decay, beta1, beta2, eps : AdamW settings.
    train_iters, batch_size : behavior-cloning schedule.
    nfe : default number of Euler steps at inference.
    seed : RNG seed for init, batching, and source draws during training.
    """

    def __init__(self, variant: str = "gaussian", sigma: float | None = None,
                 chunk_len: int = 8, hidden_width: int = 1024, n_layers: int = 4,
                 time_embed_dim: int = 128, activation: str = "gelu",
                 lr: float = 1e-4, weight_decay: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 train_iters: int = 5000, batch_size: int = 256,
                 nfe: int = 9, seed: int = 0):
        self.variant = variant
        self.sigma = sigma
        self.chunk_len = chunk_len
        self.hidden_width = hidden_width
        self.n_layers = n_layers
        self.time_embed_dim = time_embed_dim
        self.activation = activation
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.train_iters = train_iters
        self.batch_size = batch_size
        self.nfe = nfe
        self.seed = seed

    # -- configuration ---------------------------------------------------

    def effective_sigma(self) -> float:
        return default_sigma(self.variant) if self.sigma is None else float(self.sigma)

    def make_prior_spec(self, action_dim: int) -> PriorSpec:
        return PriorSpec(self.variant, self.effective_sigma(), self.chunk_len,
                         action_dim)

    # -- training ----------------------------------------------------------

    def fit(self, dataset: ChunkDataset, callback=None, hook=None) -> "WarmFlowPolicy":
        """Behavior-clone on sliding-window tuples (o, a1, i).

        callback(iteration, loss) is invoked every iteration when given;
        hook receives the per-step training internals (testing aid).
        """
        if not isinstance(dataset, ChunkDataset):
            raise ConfigurationError("fit expects a ChunkDataset")
        spec = self.make_prior_spec(dataset.action_dim)
        if dataset.chunk_len != self.chunk_len:
            raise ConfigurationError(
                f"dataset built for H={dataset.chunk_len}, policy wants H={self.chunk_len}")
        if dataset.prediction_len != spec.prediction_len:
            raise ConfigurationError(
                f"dataset windows have P={dataset.prediction_len}, variant "
                f"{self.variant!r} needs P={spec.prediction_len}")
        rng = make_rng(self.seed, stream=0)
        params = init_mlp((spec.prediction_len, dataset.action_dim),
                          dataset.obs_dim, rng, self.hidden_width, self.n_layers,
                          self.time_embed_dim, self.activation)
        adam = init_adam(params, self.lr, self.beta1, self.beta2, self.eps,
                         self.weight_decay)
        losses = np.empty(self.train_iters)
        for it in range(self.train_iters):
            params, adam, loss = flow.fm_train_step(
                params, adam, dataset, spec, rng, self.batch_size, hook=hook)
            losses[it] = loss
            if callback is not None:
                callback(it, loss)
        self.params_ = params
        self.adam_ = adam
        self.prior_spec_ = spec
        self.loss_history_ = losses
        self.n_obs_features_ = dataset.obs_dim
        self.action_low_ = dataset.buffer.action_low.copy()
        self.action_high_ = dataset.buffer.action_high.copy()
        return self

    # -- inference ---------------------------------------------------------

    def sample_chunk(self, obs, warm: WarmMean, rng: np.random.Generator,
                     nfe: int | None = None, return_path: bool = False):
        """One generation: draw the source around `warm` and integrate."""
        check_fitted(self)
        obs = as_float_array(obs, "obs", (self.n_obs_features_,))
        a0 = sample_prior(self.prior_spec_, warm, rng)
        return self.map_source(a0, obs, nfe=nfe, return_path=return_path)

    def map_source(self, a0, obs, nfe: int | None = None, return_path: bool = False):
        """Deterministic ODE map from an explicit source sample a0."""
        check_fitted(self)
        spec = self.prior_spec_
        a0 = as_float_array(a0, "a0", (spec.prediction_len, spec.action_dim))
        obs = as_float_array(obs, "obs", (self.n_obs_features_,))
        chunk, path = flow.euler_sample(self.params_, a0, obs,
                                        self.nfe if nfe is None else nfe)
        return (chunk, path) if return_path else chunk

    def predict(self, obs, prev=None, rng: np.random.Generator | None = None,
                nfe: int | None = None):
        """Next action chunk given the observation and the threaded warm
        state: the previously executed chunk (past) or the previous full
        prediction (preview); None means first chunk of an episode."""
        check_fitted(self)
        if rng is None:
            rng = make_rng(self.seed, stream=1)
        warm = infer_mean(self.prior_spec_, prev)
        return self.sample_chunk(obs, warm, rng, nfe=nfe)

    # -- helpers -----------------------------------------------------------

    def denormalize(self, actions: np.ndarray) -> np.ndarray:
        check_fitted(self)
        span = self.action_high_ - self.action_low_
        return self.action_low_ + 0.5 * (np.asarray(actions) + 1.0) * span

    def params_hash(self) -> str:
        """Digest of the fitted parameters; lets callers verify frozenness."""
        check_fitted(self)
        digest = hashlib.sha256()
        for arr in self.params_.arrays():
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()
