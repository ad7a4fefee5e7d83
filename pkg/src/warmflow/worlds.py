"""Desk-scale environments and dataset generation.

The navigation world is a unit-length track walked left to right in
discrete columns. The action is the vertical height at the next column;
two obstacles block a central band of heights, so demonstrations must
commit to passing above or below each one. Demonstrations split evenly
between the two passes, making the conditional action distribution
bimodal at every obstacle column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .prior import EpisodeBuffer
from .validation import check_probabilities

#: Per-obstacle pass assignment (+1 above, -1 below) for the six default
#: demos: three above and three below each obstacle, with recombination
#: across obstacles so histories do not pin the second choice.
DEFAULT_MODE_PLAN = ((1, 1), (-1, -1), (1, -1), (-1, 1), (1, 1), (-1, -1))


@dataclass(frozen=True)
class NavWorld:
    """1D navigation toy: observation is the agent's track position (and,
    by default, its current height); the action is the next height."""

    n_cols: int = 100
    obstacles: tuple[tuple[float, float], ...] = ((0.25, 0.35), (0.65, 0.75))
    block_lo: float = -0.3
    block_hi: float = 0.3
    bump_amp: float = 0.6
    bump_half_width: float = 0.13
    jitter_std: float = 0.05
    observe_height: bool = True
    obs_steps: int = 2

    def __post_init__(self):
        if self.n_cols < 4:
            raise ConfigurationError("track too short")
        if not (-1.0 < self.block_lo < self.block_hi < 1.0):
            raise ConfigurationError("blocked band must lie strictly inside (-1, 1)")
        xs = sorted(self.obstacles)
        for (a_lo, a_hi), (b_lo, b_hi) in zip(xs[:-1], xs[1:]):
            if a_hi >= b_lo:
                raise ConfigurationError("obstacle x-intervals must be disjoint")
        for lo, hi in self.obstacles:
            if not (0.0 < lo < hi < 1.0):
                raise ConfigurationError("obstacles must sit inside the track")
        # Both passes must clear the band at the obstacle corners even
        # after the worst-case demo jitter.
        margin = self._clearance_margin()
        if margin <= 0:
            raise ConfigurationError(
                f"infeasible geometry: bump clears the blocked band by {margin:.3f}")

    def _clearance_margin(self) -> float:
        worst = np.inf
        for lo, hi in self.obstacles:
            center = 0.5 * (lo + hi)
            for edge in (lo, hi):
                y = self.bump_amp * _bump(edge, center, self.bump_half_width)
                worst = min(worst, y - self.block_hi - _jitter_bound(self.jitter_std))
        return float(worst)

    @property
    def state_dim(self) -> int:
        return 2 if self.observe_height else 1

    @property
    def obs_dim(self) -> int:
        return self.obs_steps * self.state_dim

    @property
    def action_dim(self) -> int:
        return 1

    def x_of(self, col: int) -> float:
        return col / self.n_cols

    def in_obstacle(self, x: float, y: float) -> bool:
        if not (self.block_lo <= y <= self.block_hi):
            return False
        return any(lo <= x <= hi for lo, hi in self.obstacles)

    def obstacle_cols(self, k: int) -> np.ndarray:
        """Column indices whose x falls inside obstacle k's span."""
        lo, hi = self.obstacles[k]
        cols = np.arange(self.n_cols + 1)
        xs = cols / self.n_cols
        return cols[(xs >= lo) & (xs <= hi)]

    def make_obs(self, prev_state: np.ndarray, state: np.ndarray) -> np.ndarray:
        """Stacked observation (obs_steps frames, oldest first)."""
        take = slice(None) if self.observe_height else slice(0, 1)
        frames = [np.asarray(prev_state, dtype=np.float64)[take],
                  np.asarray(state, dtype=np.float64)[take]]
        if self.obs_steps == 1:
            frames = frames[1:]
        return np.concatenate(frames)

    def initial_state(self) -> np.ndarray:
        return np.array([0.0, 0.0])


def _bump(x: float, center: float, half_width: float) -> float:
    dx = abs(x - center)
    if dx >= half_width:
        return 0.0
    return 0.5 * (1.0 + np.cos(np.pi * dx / half_width))


def _jitter_bound(std: float) -> float:
    # Per-demo offsets are truncated so feasibility can be checked a priori.
    return 1.6 * std


def demo_height(world: NavWorld, x: float, signs: tuple[int, ...], offset: float) -> float:
    """Height of a demonstration with per-obstacle pass signs at position x."""
    y = offset
    for (lo, hi), s in zip(world.obstacles, signs):
        y += s * world.bump_amp * _bump(x, 0.5 * (lo + hi), world.bump_half_width)
    return y


@dataclass(frozen=True)
class Demo:
    states: np.ndarray       # (T+1, 2) track position and height per column
    obs: np.ndarray          # (T, obs_dim)
    actions: np.ndarray      # (T, 1) next height
    modes: tuple[int, ...]   # per-obstacle pass signs


@dataclass(frozen=True)
class DemoSet:
    world: NavWorld
    demos: tuple[Demo, ...]

    def __len__(self) -> int:
        return len(self.demos)

    def mode_counts(self) -> list[tuple[int, int]]:
        """Per obstacle: (#above, #below)."""
        out = []
        for k in range(len(self.world.obstacles)):
            above = sum(1 for d in self.demos if d.modes[k] > 0)
            out.append((above, len(self.demos) - above))
        return out


def gen_nav_demos(world: NavWorld, rng: np.random.Generator,
                  mode_plan: tuple[tuple[int, ...], ...] = DEFAULT_MODE_PLAN) -> DemoSet:
    """Generate smooth cosine-bump demonstrations, one per mode-plan entry,
    each with a small truncated vertical offset and verified collision-free."""
    demos = []
    bound = _jitter_bound(world.jitter_std)
    for signs in mode_plan:
        if len(signs) != len(world.obstacles):
            raise ConfigurationError("mode plan entry must assign every obstacle")
        offset = 0.0
        if world.jitter_std > 0:
            offset = float(np.clip(rng.normal(0.0, world.jitter_std), -bound, bound))
        t_len = world.n_cols
        states = np.empty((t_len + 1, 2))
        for c in range(t_len + 1):
            x = world.x_of(c)
            states[c] = (x, demo_height(world, x, signs, offset))
        for x, y in states:
            if world.in_obstacle(x, y):
                raise ConfigurationError(
                    f"infeasible geometry: demo with modes {signs} collides at x={x:.2f}")
        obs = np.empty((t_len, world.obs_dim))
        for t in range(t_len):
            obs[t] = world.make_obs(states[max(t - 1, 0)], states[t])
        actions = states[1:, 1:2].copy()
        demos.append(Demo(states, obs, actions, tuple(signs)))
    return DemoSet(world, tuple(demos))


def nav_rollout_step(world: NavWorld, state: np.ndarray, action_chunk_prefix):
    """Execute a prefix of an action chunk from `state`.

    Each action advances one column and sets the height there. Returns
    (new state, collided?, done?) where collided means any visited
    (x, y) fell inside an obstacle and done means the track end was reached.
    """
    x, y = float(state[0]), float(state[1])
    col = int(round(x * world.n_cols))
    collided = False
    done = col >= world.n_cols
    actions = np.atleast_2d(np.asarray(action_chunk_prefix, dtype=np.float64))
    for a in actions:
        if done:
            break
        col += 1
        y = float(a[0])
        x = world.x_of(col)
        if world.in_obstacle(x, y):
            collided = True
        done = col >= world.n_cols
    return np.array([x, y]), collided, done


# ---------------------------------------------------------------------------
# chunked dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChunkDataset:
    """Sliding-window training tuples (o, a1, i) over an episode buffer."""

    buffer: EpisodeBuffer
    obs: np.ndarray          # (M, obs_dim) at window starts
    targets: np.ndarray      # (M, P, d_a), normalized actions
    start_idx: np.ndarray    # (M,) buffer index of each window start
    chunk_len: int           # H
    prediction_len: int      # P
    n_skipped: int = 0       # episodes shorter than P

    def __len__(self) -> int:
        return len(self.start_idx)

    @property
    def action_dim(self) -> int:
        return self.targets.shape[2]

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]


def buffer_from_demos(demos: DemoSet) -> EpisodeBuffer:
    """Concatenate demos into a buffer, min-max normalizing actions to [-1, 1]."""
    all_actions = np.concatenate([d.actions for d in demos.demos])
    lo = all_actions.min(axis=0)
    hi = all_actions.max(axis=0)
    degenerate = (hi - lo) < 1e-9
    lo = np.where(degenerate, lo - 1.0, lo)
    hi = np.where(degenerate, hi + 1.0, hi)
    obs = np.concatenate([d.obs for d in demos.demos])
    starts = np.cumsum([0] + [len(d.actions) for d in demos.demos[:-1]])
    buf = EpisodeBuffer(np.zeros_like(all_actions), obs,
                        np.asarray(starts, dtype=np.int64), lo, hi)
    return EpisodeBuffer(buf.normalize_actions(all_actions), obs,
                         np.asarray(starts, dtype=np.int64), lo, hi)


def dataset_from_buffer(buf: EpisodeBuffer, chunk_len: int,
                        prediction_len: int) -> ChunkDataset:
    """Every length-P window that fits inside a single episode becomes one
    training tuple; windows that would cross an episode boundary are never
    emitted. Episodes shorter than P are skipped and counted."""
    if prediction_len < chunk_len:
        raise ConfigurationError("prediction length must be >= chunk length")
    obs_rows, tgt_rows, idx_rows = [], [], []
    skipped = 0
    for e in range(buf.n_episodes):
        start, end = buf.episode_bounds(e)
        if end - start < prediction_len:
            skipped += 1
            continue
        for j in range(start, end - prediction_len + 1):
            obs_rows.append(buf.observations[j])
            tgt_rows.append(buf.actions[j:j + prediction_len])
            idx_rows.append(j)
    if not idx_rows:
        raise ConfigurationError("no training windows: every episode shorter than P")
    return ChunkDataset(buf, np.asarray(obs_rows), np.asarray(tgt_rows),
                        np.asarray(idx_rows, dtype=np.int64), chunk_len,
                        prediction_len, skipped)


def gen_chunked_dataset(world: NavWorld, demos: DemoSet, chunk_len: int,
                        prediction_len: int) -> ChunkDataset:
    """Demos -> normalized buffer -> sliding-window training tuples."""
    return dataset_from_buffer(buffer_from_demos(demos), chunk_len, prediction_len)


# ---------------------------------------------------------------------------
# discrete mixture targets (diagnostics fixtures)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureTarget:
    """Discrete conditional target law: point components with probabilities."""

    components: np.ndarray   # (J, d)
    probs: np.ndarray        # (J,), strictly positive, sums to 1

    def __post_init__(self):
        comp = self.components
        if comp.ndim != 2 or comp.shape[0] == 0:
            raise ConfigurationError("components must be a (J, d) array")
        check_probabilities(self.probs)
        if len(self.probs) != comp.shape[0]:
            raise ConfigurationError("one probability per component required")
        uniq = {tuple(row) for row in comp.tolist()}
        if len(uniq) != comp.shape[0]:
            raise ConfigurationError("components must be distinct")

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def mean(self) -> np.ndarray:
        return self.probs @ self.components

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        j = rng.choice(self.n_components, size=n, p=self.probs)
        return self.components[j]

    def to_dict(self) -> dict:
        return {"components": self.components.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureTarget":
        return cls(np.asarray(d["components"], dtype=np.float64),
                   np.asarray(d["probs"], dtype=np.float64))


def gen_mixture_target(config: dict | None = None) -> MixtureTarget:
    """Build a mixture fixture from a config dict; the default is the
    symmetric two-point law {-1, +1} in one dimension."""
    if config is None:
        config = {"components": [[-1.0], [1.0]], "probs": [0.5, 0.5]}
    return MixtureTarget.from_dict(config)
