"""Closed-loop evaluation: chunked execution with warm-start threading,
success statistics under a Beta posterior, and mode-switch counting."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma

import numpy as np
from scipy.special import betaincinv

from .errors import ConfigurationError
from .nets import make_rng
from .prior import PriorSpec, infer_mean, sample_prior
from .validation import check_fitted
from .worlds import NavWorld, nav_rollout_step


@dataclass(frozen=True)
class RolloutConfig:
    prior: PriorSpec
    nfe: int = 9
    max_steps: int = 200
    stop_on_collision: bool = True

    def __post_init__(self):
        if self.nfe < 1:
            raise ConfigurationError("nfe must be >= 1")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")


@dataclass(frozen=True)
class ChunkRecord:
    """Instrumentation payload handed to run_episode hooks, one per chunk."""

    index: int
    warm_len: int
    warm_mean: np.ndarray | None
    a0: np.ndarray
    prediction: np.ndarray
    obs: np.ndarray


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    collided: bool
    steps: int
    n_chunks: int
    trajectory: np.ndarray            # (steps+1, 2) visited states
    switch_count: int
    mean_discontinuity: float         # chunk-boundary jump, normalized units


def run_episode(policy, world: NavWorld, config: RolloutConfig,
                rng: np.random.Generator, hook=None) -> EpisodeResult:
    """One closed-loop episode.

    Per chunk: build the warm mean from the threaded state (always empty
    at the first chunk), draw the source, integrate the learned field,
    execute the first H actions, then thread the executed chunk (past) or
    the full prediction (preview) into the next chunk's mean.
    """
    check_fitted(policy)
    spec = config.prior
    if spec.prediction_len != policy.prior_spec_.prediction_len:
        raise ConfigurationError("rollout prior shape does not match the policy")
    h = spec.chunk_len
    state = world.initial_state()
    prev_state = state
    prev = None                      # threaded warm state, variant-dependent
    traj = [state.copy()]
    steps = 0
    chunks = 0
    collided = False
    done = False
    disconts = []
    last_exec_action = None
    while not done and steps < config.max_steps:
        obs = world.make_obs(prev_state, state)
        warm = infer_mean(spec, prev)
        a0 = sample_prior(spec, warm, rng)
        prediction = policy.map_source(a0, obs, nfe=config.nfe)
        if hook is not None:
            hook(ChunkRecord(chunks, warm.warm_len, warm.mean, a0, prediction, obs))
        executed = prediction[:h]
        if last_exec_action is not None:
            disconts.append(float(np.linalg.norm(executed[0] - last_exec_action)))
        env_actions = policy.denormalize(executed)
        for k in range(h):
            prev_state = state
            state, hit, done = nav_rollout_step(world, state, env_actions[k:k + 1])
            traj.append(state.copy())
            steps += 1
            collided = collided or hit
            if done or steps >= config.max_steps:
                break
            if hit and config.stop_on_collision:
                break
        if collided and config.stop_on_collision:
            break
        last_exec_action = executed[min(h, len(executed)) - 1]
        prev = executed.copy() if spec.variant == "past" else prediction.copy()
        chunks += 1
    trajectory = np.asarray(traj)
    return EpisodeResult(
        success=bool(done and not collided),
        collided=collided,
        steps=steps,
        n_chunks=chunks if not (collided and config.stop_on_collision) else chunks + 1,
        trajectory=trajectory,
        switch_count=mode_switch_count(trajectory, world),
        mean_discontinuity=float(np.mean(disconts)) if disconts else 0.0)


def mode_switch_count(trajectory: np.ndarray, world: NavWorld) -> int:
    """Count commitment flips at obstacle columns.

    Each visited state whose x lies in an obstacle span is classified
    above/below the blocked band's midline; states inside the band are
    collisions, not modes, and are skipped. The count is the number of
    sign changes across consecutive classified states.
    """
    midline = 0.5 * (world.block_lo + world.block_hi)
    signs = []
    for x, y in np.atleast_2d(trajectory):
        if not any(lo <= x <= hi for lo, hi in world.obstacles):
            continue
        if world.block_lo <= y <= world.block_hi:
            continue
        signs.append(1 if y > midline else -1)
    return int(sum(1 for a, b in zip(signs[:-1], signs[1:]) if a != b))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuccessStats:
    """Pooled Bernoulli outcomes under a uniform prior: posterior is
    Beta(k+1, n-k+1). Per-seed success rates ride along because pooling
    absorbs across-seed variance into the same Bernoulli noise."""

    k: int
    n: int
    per_seed_sr: tuple[float, ...] = ()

    def __post_init__(self):
        if not (0 <= self.k <= self.n):
            raise ConfigurationError("need 0 <= k <= n")

    @property
    def alpha(self) -> float:
        return self.k + 1.0

    @property
    def beta(self) -> float:
        return self.n - self.k + 1.0

    @property
    def posterior_mean(self) -> float:
        return (self.k + 1.0) / (self.n + 2.0)

    @property
    def sr(self) -> float:
        return self.k / self.n if self.n else 0.0

    def interval(self, mass: float = 0.90) -> tuple[float, float]:
        tail = 0.5 * (1.0 - mass)
        return (float(betaincinv(self.alpha, self.beta, tail)),
                float(betaincinv(self.alpha, self.beta, 1.0 - tail)))

    @property
    def seed_sr_mean(self) -> float:
        return float(np.mean(self.per_seed_sr)) if self.per_seed_sr else self.sr

    @property
    def seed_sr_std(self) -> float:
        return float(np.std(self.per_seed_sr)) if len(self.per_seed_sr) > 1 else 0.0


@dataclass(frozen=True)
class SwitchStats:
    counts: tuple[int, ...]
    collisions: int = 0

    @property
    def median(self) -> float:
        return float(np.median(self.counts)) if self.counts else 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts)) if self.counts else 0.0


def beta_pdf(k: int, n: int, grid: np.ndarray) -> np.ndarray:
    """Beta(k+1, n-k+1) density on a [0, 1] grid, renormalized so the
    trapezoid integral over the grid is exactly 1."""
    if not (0 <= k <= n):
        raise ConfigurationError("need 0 <= k <= n")
    y = np.asarray(grid, dtype=np.float64)
    if y.ndim != 1 or y.size < 2 or y.min() < 0 or y.max() > 1:
        raise ConfigurationError("grid must be a 1D array inside [0, 1]")
    a, b = k + 1.0, n - k + 1.0
    log_norm = lgamma(a + b) - lgamma(a) - lgamma(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pdf = log_norm + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y)
    pdf = np.exp(log_pdf)
    pdf = np.where(np.isfinite(pdf), pdf, 0.0)
    if a == 1.0:
        pdf[y == 0.0] = np.exp(log_norm)
    if b == 1.0:
        pdf[y == 1.0] = np.exp(log_norm)
    integral = np.trapezoid(pdf, y)
    if integral <= 0:
        raise ConfigurationError("degenerate grid: zero mass under the density")
    return pdf / integral


@dataclass(frozen=True)
class EvalReport:
    success: SuccessStats
    switches: SwitchStats
    mean_discontinuity: float
    per_seed: tuple[tuple[int, int, int], ...] = ()   # (seed, k, episodes)


def evaluate(policy, world: NavWorld, config: RolloutConfig, episodes: int,
             seeds, hook=None) -> EvalReport:
    """Run `episodes` rollouts per seed and pool the Bernoulli outcomes into
    one Beta posterior; per-seed success rates are reported alongside."""
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    seeds = list(seeds)
    if not seeds:
        raise ConfigurationError("need at least one seed")
    k_total = 0
    per_seed_sr = []
    per_seed = []
    counts = []
    collisions = 0
    disconts = []
    for seed in seeds:
        k_seed = 0
        for ep in range(episodes):
            result = run_episode(policy, world, config, make_rng(seed, stream=ep),
                                 hook=hook)
            k_seed += int(result.success)
            counts.append(result.switch_count)
            collisions += int(result.collided)
            disconts.append(result.mean_discontinuity)
        k_total += k_seed
        per_seed_sr.append(k_seed / episodes)
        per_seed.append((int(seed), k_seed, episodes))
    return EvalReport(
        success=SuccessStats(k_total, episodes * len(seeds), tuple(per_seed_sr)),
        switches=SwitchStats(tuple(counts), collisions),
        mean_discontinuity=float(np.mean(disconts)),
        per_seed=tuple(per_seed))
