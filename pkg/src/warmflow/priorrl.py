"""Prior-space residual reinforcement learning on top of a frozen policy.

The RL agent never touches actions directly: it proposes the source
sample a0 of the frozen flow policy, which maps it deterministically to
an action chunk. The residual learner emits a bounded correction around
an anchor: the warm mean carried over from the previous chunk (ours), or
the origin with a larger bound (the vanilla noise-space baseline). The
learner itself is a cross-entropy method over per-chunk residuals with a
small policy network distilled from the elite episodes each generation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .flow import euler_sample
from .nets import adam_step, init_adam, init_mlp, make_rng, mlp_forward
from .prior import WarmMean
from .validation import check_fitted
from .worlds import NavWorld, nav_rollout_step


@dataclass(frozen=True)
class ResidualSpec:
    """Residual bound and anchoring. Warm anchors also append the anchor to
    the learner's observation so the chunk-to-chunk dependency lives in the
    state and the decision problem stays Markovian."""

    delta: float = 0.5
    anchor: str = "warm"              # "warm" | "origin"
    augment_obs: bool = True

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigurationError("delta must be > 0")
        if self.anchor not in ("warm", "origin"):
            raise ConfigurationError(f"unknown anchor {self.anchor!r}")


@dataclass(frozen=True)
class NoiseSpaceMdp:
    """Frozen flow policy + environment, exposing the prior as action space."""

    policy: object                    # fitted WarmFlowPolicy
    world: NavWorld
    nfe: int = 1
    max_steps: int = 200
    progress_weight: float = 0.5      # shaping: fraction of track completed

    def __post_init__(self):
        check_fitted(self.policy)
        if self.policy.prior_spec_.variant == "preview":
            raise ConfigurationError(
                "the noise-space MDP needs a prediction length equal to the "
                "executed chunk; use a past- or gaussian-variant policy")

    @property
    def chunk_len(self) -> int:
        return self.policy.prior_spec_.chunk_len

    @property
    def action_dim(self) -> int:
        return self.policy.prior_spec_.action_dim

    def learner_obs_dim(self, spec: ResidualSpec) -> int:
        base = self.policy.n_obs_features_
        if spec.anchor == "warm" and spec.augment_obs:
            base += self.chunk_len * self.action_dim
        return base


def noise_to_action(policy, a0: np.ndarray, obs: np.ndarray, nfe: int) -> np.ndarray:
    """Deterministic map from a prior sample to the executed chunk via the
    frozen policy's ODE sampler."""
    check_fitted(policy)
    chunk, _ = euler_sample(policy.params_, a0, obs, nfe)
    return chunk


class ResidualLearner:
    """Small MLP over the (possibly anchor-augmented) observation emitting a
    residual clipped to the box [-delta, delta] per coordinate."""

    def __init__(self, obs_dim: int, chunk_len: int, action_dim: int,
                 delta: float, hidden_width: int = 64, n_layers: int = 2,
                 lr: float = 3e-3, seed: int = 0):
        self.delta = delta
        self.chunk_shape = (chunk_len, action_dim)
        rng = make_rng(seed, stream=900)
        self.params = init_mlp(self.chunk_shape, obs_dim, rng,
                               hidden_width=hidden_width, n_layers=n_layers,
                               time_embed_dim=2)
        self.adam = init_adam(self.params, lr=lr)

    def act(self, obs_aug: np.ndarray) -> np.ndarray:
        # The kernel expects a (t, chunk, obs) input layout; the residual
        # policy only consumes the observation, so feed fixed zeros.
        zeros = np.zeros(self.chunk_shape)
        raw = mlp_forward(self.params, 0.0, zeros, obs_aug)
        return np.clip(raw, -self.delta, self.delta)

    def distill(self, obs_batch: np.ndarray, delta_batch: np.ndarray,
                steps: int = 200, batch_size: int = 64,
                rng: np.random.Generator | None = None) -> float:
        """Regress the policy net onto elite (obs, residual) pairs."""
        from .nets import loss_and_grad
        rng = rng or make_rng(0, stream=901)
        n = len(obs_batch)
        zeros = np.zeros((min(batch_size, n),) + self.chunk_shape)
        t = np.zeros(min(batch_size, n))
        last = 0.0
        for _ in range(steps):
            sel = rng.integers(0, n, size=min(batch_size, n))
            loss, grads = loss_and_grad(self.params, t, zeros, obs_batch[sel],
                                        delta_batch[sel])
            self.params, self.adam = adam_step(self.adam, self.params, grads)
            last = loss
        return last


def _augmented_obs(spec: ResidualSpec, obs: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    if spec.anchor == "warm" and spec.augment_obs:
        return np.concatenate([obs, anchor.ravel()])
    return obs


def residual_episode(learner: ResidualLearner, mdp: NoiseSpaceMdp,
                     spec: ResidualSpec, rng: np.random.Generator,
                     explore_std: float = 0.0, hook=None):
    """One episode acting through the frozen policy.

    Per chunk: anchor = previous executed chunk (warm; zeros at the first
    chunk) or zeros (origin); residual = clipped policy output plus
    optional exploration noise; a0 = anchor + residual. Returns
    (shaped return, success flag, transitions [(obs_aug, residual)]).
    """
    policy = mdp.policy
    h = mdp.chunk_len
    world = mdp.world
    state = world.initial_state()
    prev_state = state
    prev_exec = None
    transitions = []
    steps = 0
    done = False
    collided = False
    while not done and steps < mdp.max_steps:
        obs = world.make_obs(prev_state, state)
        if spec.anchor == "warm" and prev_exec is not None:
            anchor = prev_exec
        else:
            anchor = np.zeros((h, mdp.action_dim))
        obs_aug = _augmented_obs(spec, obs, anchor)
        delta = learner.act(obs_aug)
        if explore_std > 0:
            delta = np.clip(delta + explore_std * rng.standard_normal(delta.shape),
                            -spec.delta, spec.delta)
        a0 = anchor + delta
        chunk = noise_to_action(policy, a0, obs, mdp.nfe)
        executed = chunk[:h]
        transitions.append((obs_aug, delta))
        if hook is not None:
            hook({"anchor": anchor, "delta": delta, "a0": a0, "obs": obs})
        env_actions = policy.denormalize(executed)
        for k in range(h):
            prev_state = state
            state, hit, done = nav_rollout_step(world, state, env_actions[k:k + 1])
            steps += 1
            collided = collided or hit
            if done or steps >= mdp.max_steps:
                break
        if collided:
            break
        prev_exec = executed.copy()
    success = bool(done and not collided)
    progress = float(state[0])
    ret = float(success) + mdp.progress_weight * progress
    return ret, success, transitions


@dataclass(frozen=True)
class LearningCurve:
    """Greedy evaluation checkpoints per seed: (seed, env steps, success rate)."""

    rows: tuple[tuple[int, int, float], ...]
    diverged: bool = False

    def seeds(self) -> list[int]:
        return sorted({r[0] for r in self.rows})

    def curve(self, seed: int) -> list[tuple[int, float]]:
        return [(r[1], r[2]) for r in self.rows if r[0] == seed]

    def final_sr(self, seed: int) -> float:
        return self.curve(seed)[-1][1]

    def steps_to_fraction(self, seed: int, fraction: float) -> int:
        """First env-step count whose eval SR reaches fraction * final SR."""
        pts = self.curve(seed)
        threshold = fraction * pts[-1][1]
        for steps, sr in pts:
            if sr >= threshold:
                return steps
        return pts[-1][0]

    def write_csv(self, path, variant: str = "", config_hash: str = "") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "env_steps", "eval_sr", "config_hash"])
            for seed, steps, sr in self.rows:
                w.writerow([variant, seed, steps, repr(float(sr)), config_hash])


@dataclass(frozen=True)
class RlBudget:
    generations: int = 10
    population: int = 24
    elite_frac: float = 0.25
    distill_steps: int = 200
    eval_episodes: int = 20
    eval_every: int = 1
    explore_std0: float = 0.5         # relative to delta
    explore_floor: float = 0.1

    def __post_init__(self):
        if self.generations < 1 or self.population < 2:
            raise ConfigurationError("budget too small")
        if not (0.0 < self.elite_frac <= 1.0):
            raise ConfigurationError("elite_frac must lie in (0, 1]")


def evaluate_greedy(learner: ResidualLearner, mdp: NoiseSpaceMdp,
                    spec: ResidualSpec, episodes: int, seed: int) -> float:
    wins = 0
    for ep in range(episodes):
        _, success, _ = residual_episode(learner, mdp, spec,
                                         make_rng(seed, stream=10_000 + ep))
        wins += int(success)
    return wins / episodes


def train_residual(mdp: NoiseSpaceMdp, spec: ResidualSpec, budget: RlBudget,
                   seeds) -> LearningCurve:
    """Cross-entropy search over per-chunk residuals.

    Each generation collects a population of exploratory episodes, keeps
    the top elite fraction by shaped return, refits the exploration scale
    from the elites, and distills the elite (obs, residual) pairs into the
    policy net. Greedy success rate is evaluated every eval_every
    generations, which yields the learning curve.
    """
    rows = []
    diverged = False
    frozen_before = mdp.policy.params_hash()
    for seed in seeds:
        learner = ResidualLearner(mdp.learner_obs_dim(spec), mdp.chunk_len,
                                  mdp.action_dim, spec.delta, seed=seed)
        rng = make_rng(seed, stream=800)
        explore = budget.explore_std0 * spec.delta
        env_steps = 0
        sr0 = evaluate_greedy(learner, mdp, spec, budget.eval_episodes, seed)
        rows.append((int(seed), 0, sr0))
        for gen in range(budget.generations):
            episodes = []
            for _ in range(budget.population):
                ret, _, transitions = residual_episode(learner, mdp, spec, rng,
                                                       explore_std=explore)
                if not np.isfinite(ret):
                    diverged = True
                    break
                env_steps += sum(1 for _ in transitions) * mdp.chunk_len
                episodes.append((ret, transitions))
            if diverged:
                break
            episodes.sort(key=lambda e: e[0], reverse=True)
            n_elite = max(2, int(round(budget.elite_frac * len(episodes))))
            elite = episodes[:n_elite]
            obs_batch = np.stack([o for _, tr in elite for o, _ in tr])
            delta_batch = np.stack([d for _, tr in elite for _, d in tr])
            learner.distill(obs_batch, delta_batch, steps=budget.distill_steps,
                            rng=rng)
            resid = delta_batch - np.stack(
                [learner.act(o) for o in obs_batch])
            explore = float(np.clip(resid.std(), budget.explore_floor * spec.delta,
                                    budget.explore_std0 * spec.delta))
            if (gen + 1) % budget.eval_every == 0 or gen == budget.generations - 1:
                sr = evaluate_greedy(learner, mdp, spec, budget.eval_episodes, seed)
                rows.append((int(seed), env_steps, sr))
        if diverged:
            break
    if mdp.policy.params_hash() != frozen_before:
        raise ConfigurationError("frozen policy parameters were mutated during RL")
    return LearningCurve(tuple(rows), diverged)
