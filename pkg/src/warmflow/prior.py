"""Source-distribution construction for the flow.

A prior sample a0 has shape (P, d_a). Warm positions (a contiguous prefix
of the prediction window) are centered on a mean mu with residual scale
sigma; cold positions stay standard normal. The three variants differ
only in where mu comes from:

* gaussian — no warm positions, plain N(0, I);
* past     — mu is the previously executed chunk (training: the H actions
             preceding the sampled window, if they stay inside one episode);
* preview  — the policy predicts 2H steps and the unexecuted second half
             of the previous prediction becomes the next warm mean
             (training: the first half of the target itself).

All operations are pure given an explicit RNG; fallbacks degrade to the
empty warm set rather than erroring.
"""

from __future__ import annotations

import csv
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .validation import as_chunk

VARIANTS = ("gaussian", "past", "preview")

# Default residual scales per variant, in normalized action units.
DEFAULT_SIGMA = {"gaussian": 1.0, "past": 0.5, "preview": 1.0}


def default_sigma(variant: str) -> float:
    return DEFAULT_SIGMA[variant]


@dataclass(frozen=True)
class PriorSpec:
    """Variant tag, residual scale, chunk length and action dimension."""

    variant: str
    sigma: float
    chunk_len: int          # H: steps executed per inference
    action_dim: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown prior variant {self.variant!r}")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if self.chunk_len < 1 or self.action_dim < 1:
            raise ConfigurationError("chunk_len and action_dim must be >= 1")

    @property
    def prediction_len(self) -> int:
        """P: 2H for preview, H otherwise."""
        return 2 * self.chunk_len if self.variant == "preview" else self.chunk_len

    def to_dict(self) -> dict:
        return {"variant": self.variant, "sigma": self.sigma, "H": self.chunk_len,
                "action_dim": self.action_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(d["variant"], float(d["sigma"]), int(d["H"]), int(d["action_dim"]))


@dataclass(frozen=True)
class WarmMean:
    """Optional mean on the warm prefix {0..warm_len-1} of the prediction window."""

    mean: np.ndarray | None = None      # (warm_len, d_a)
    warm_len: int = 0

    def __post_init__(self):
        if self.warm_len < 0:
            raise ConfigurationError("warm_len must be >= 0")
        if (self.warm_len > 0) != (self.mean is not None):
            raise ConfigurationError("mean must be present iff the warm set is nonempty")
        if self.mean is not None and self.mean.shape[0] != self.warm_len:
            raise ConfigurationError(
                f"mean has {self.mean.shape[0]} rows, warm set has {self.warm_len}")

    @classmethod
    def empty(cls) -> "WarmMean":
        return cls(None, 0)

    @classmethod
    def of(cls, mean) -> "WarmMean":
        arr = as_chunk(mean, "warm mean")
        return cls(arr, arr.shape[0])


def sample_prior(spec: PriorSpec, mean: WarmMean, rng: np.random.Generator) -> np.ndarray:
    """Draw a0: mu + sigma*eps on warm rows, plain eps on cold rows."""
    p, d_a = spec.prediction_len, spec.action_dim
    if mean.warm_len > p:
        raise ConfigurationError(f"warm set of size {mean.warm_len} exceeds P={p}")
    if mean.mean is not None and mean.mean.shape[1] != d_a:
        raise ConfigurationError(
            f"warm mean has {mean.mean.shape[1]} columns, expected {d_a}")
    eps = rng.standard_normal((p, d_a))
    a0 = eps.copy()
    k = mean.warm_len
    if k:
        a0[:k] = mean.mean + spec.sigma * eps[:k]
    return a0


# ---------------------------------------------------------------------------
# demonstration buffer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeBuffer:
    """Concatenated per-step actions/observations with episode boundaries.

    Actions are stored min-max normalized to [-1, 1]; action_low/high keep
    the mapping back to environment units.
    """

    actions: np.ndarray             # (N, d_a), normalized
    observations: np.ndarray        # (N, obs_dim)
    episode_starts: np.ndarray      # sorted ints, first == 0
    action_low: np.ndarray          # (d_a,) env-space bounds used to normalize
    action_high: np.ndarray

    def __post_init__(self):
        starts = self.episode_starts
        if starts.size == 0 or starts[0] != 0:
            raise ConfigurationError("episode_starts must begin at 0")
        if np.any(np.diff(starts) <= 0):
            raise ConfigurationError("episode_starts must be strictly increasing")
        if starts[-1] >= len(self.actions):
            raise ConfigurationError("episode start beyond buffer end")
        if len(self.actions) != len(self.observations):
            raise ConfigurationError("actions and observations must align")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_starts)

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    def episode_of(self, i: int) -> int:
        """Index of the episode containing buffer step i (binary search)."""
        if i < 0 or i >= len(self):
            raise ConfigurationError(f"buffer index {i} out of range")
        return bisect_right(self.episode_starts.tolist(), i) - 1

    def episode_bounds(self, e: int) -> tuple[int, int]:
        start = int(self.episode_starts[e])
        end = int(self.episode_starts[e + 1]) if e + 1 < self.n_episodes else len(self)
        return start, end

    # -- normalization -------------------------------------------------

    def normalize_actions(self, a: np.ndarray) -> np.ndarray:
        span = np.maximum(self.action_high - self.action_low, 1e-12)
        return 2.0 * (a - self.action_low) / span - 1.0

    def denormalize_actions(self, a: np.ndarray) -> np.ndarray:
        span = self.action_high - self.action_low
        return self.action_low + 0.5 * (a + 1.0) * span

    # -- serialization (episodes.json + data.csv) ----------------------

    def save(self, directory, config_hash: str = "", seed: int = 0) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "schema_version": 1,
            "config_hash": config_hash,
            "seed": int(seed),
            "episode_starts": [int(s) for s in self.episode_starts],
            "action_low": [float(v) for v in self.action_low],
            "action_high": [float(v) for v in self.action_high],
        }
        (directory / "episodes.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        d_o, d_a = self.obs_dim, self.action_dim
        header = (["step", "episode"] + [f"o{j}" for j in range(d_o)]
                  + [f"a{j}" for j in range(d_a)])
        with open(directory / "data.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            ep = 0
            for i in range(len(self)):
                while ep + 1 < self.n_episodes and i >= self.episode_starts[ep + 1]:
                    ep += 1
                row = [i, ep] + [repr(float(v)) for v in self.observations[i]] \
                    + [repr(float(v)) for v in self.actions[i]]
                w.writerow(row)

    @classmethod
    def load(cls, directory) -> "EpisodeBuffer":
        directory = Path(directory)
        meta = json.loads((directory / "episodes.json").read_text())
        rows = []
        with open(directory / "data.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader]
        d_o = sum(1 for h in header if h.startswith("o"))
        d_a = sum(1 for h in header if h.startswith("a"))
        obs = np.array([[float(v) for v in r[2:2 + d_o]] for r in rows])
        act = np.array([[float(v) for v in r[2 + d_o:2 + d_o + d_a]] for r in rows])
        return cls(act, obs, np.asarray(meta["episode_starts"], dtype=np.int64),
                   np.asarray(meta["action_low"]), np.asarray(meta["action_high"]))


# ---------------------------------------------------------------------------
# warm-mean construction
# ---------------------------------------------------------------------------

def past_train_mean(buffer: EpisodeBuffer, i: int, chunk_len: int) -> WarmMean:
    """Training-time mean for the past variant: the H actions preceding
    window start i, provided they stay inside i's episode. Every degenerate
    case falls back to the empty warm set."""
    h = chunk_len
    if i < h:
        return WarmMean.empty()
    ep = buffer.episode_of(i)
    start = int(buffer.episode_starts[ep])
    if i - h < start:
        return WarmMean.empty()
    return WarmMean.of(buffer.actions[i - h:i])


def preview_train_mean(a1: np.ndarray) -> WarmMean:
    """Training-time mean for the preview variant: the first half of the
    2H-step target itself."""
    arr = as_chunk(a1, "a1")
    if arr.shape[0] % 2 != 0 or arr.shape[0] == 0:
        raise ConfigurationError(
            f"preview targets need an even number of rows (2H), got {arr.shape[0]}")
    h = arr.shape[0] // 2
    return WarmMean.of(arr[:h])


def preview_infer_mean(prev: np.ndarray | None) -> WarmMean:
    """Inference-time mean: rows H..2H-1 of the previous 2H-step prediction,
    or empty at the first chunk of an episode."""
    if prev is None:
        return WarmMean.empty()
    arr = as_chunk(prev, "previous prediction")
    if arr.shape[0] % 2 != 0 or arr.shape[0] == 0:
        raise ConfigurationError(
            f"previous prediction needs 2H rows, got {arr.shape[0]}")
    h = arr.shape[0] // 2
    return WarmMean.of(arr[h:])


def past_infer_mean(prev_executed: np.ndarray | None) -> WarmMean:
    """Inference-time mean: the previously executed H-step chunk, or empty
    at the first chunk of an episode."""
    if prev_executed is None:
        return WarmMean.empty()
    return WarmMean.of(as_chunk(prev_executed, "previous executed chunk"))


def infer_mean(spec: PriorSpec, prev: np.ndarray | None) -> WarmMean:
    """Variant dispatch used by the rollout loop; prev is the threaded state
    (executed chunk for past, full 2H prediction for preview)."""
    if spec.variant == "past":
        return past_infer_mean(prev)
    if spec.variant == "preview":
        return preview_infer_mean(prev)
    return WarmMean.empty()
