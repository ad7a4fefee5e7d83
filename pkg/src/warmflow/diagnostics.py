"""Geometric and theoretical measurements on flows and couplings.

Two families live here. Pathwise curvature quantifies how far the learned
flow is from a straight transport: the time-integrated variance of the
path velocity, zero iff the path is a straight segment. The branching
cost quantifies the irreducible regression error of ANY velocity field
under a given source-target coupling: the time-integrated ambiguity of
the endpoint given the interpolated point, weighted by 1/(1-t)^2. For
discrete mixture targets and (possibly warm-shifted) isotropic Gaussian
sources the Bayes posterior is available in closed form, so both the cost
and the risk of the optimal field can be estimated and cross-checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError
from .flow import euler_sample_batch, integrate_field
from .nets import MlpParams, mlp_forward
from .prior import PriorSpec, WarmMean, past_train_mean, preview_train_mean
from .worlds import ChunkDataset, MixtureTarget

_LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

def curvature_of_field(fn, a0: np.ndarray, n_steps: int) -> float:
    """Discrete velocity-variance curvature of the path integrated from a0.

    kappa = (1/N) sum_k ||v_k - mean(v)||^2 over the N Euler-step
    velocities; exactly zero for constant fields.
    """
    if n_steps < 2:
        raise ConfigurationError("curvature needs at least 2 integration steps")
    _, path = integrate_field(fn, a0, n_steps)
    v = path.velocities.reshape(n_steps, -1)
    vbar = v.mean(axis=0)
    return float(np.mean(np.sum((v - vbar) ** 2, axis=1)))


def curvature(params: MlpParams, o: np.ndarray, a0: np.ndarray,
              n_steps: int = 100) -> float:
    """Curvature of the learned flow from source a0 under observation o."""
    return curvature_of_field(lambda t, x: mlp_forward(params, t, x, o), a0, n_steps)


@dataclass(frozen=True)
class CurvatureReport:
    """Per-observation curvatures plus the sweep mean. normalized() rescales
    so the named baseline run reads 1.000."""

    kappas: np.ndarray
    label: str = ""

    @property
    def mean_kappa(self) -> float:
        return float(self.kappas.mean())

    def normalized(self, baseline_mean: float) -> float:
        if baseline_mean <= 0:
            raise ConfigurationError("baseline curvature must be positive to normalize")
        return self.mean_kappa / baseline_mean


def prior_contexts_from_dataset(dataset: ChunkDataset, spec: PriorSpec, m: int,
                                rng: np.random.Generator):
    """Pick m validation windows and build each one's warm mean exactly as
    the training branch would. Returns (obs (m, obs_dim), list of WarmMean)."""
    if m < 1:
        raise ConfigurationError("need at least one observation")
    replace = m > len(dataset)
    sel = rng.choice(len(dataset), size=m, replace=replace)
    warms = []
    for j in sel:
        if spec.variant == "past":
            warms.append(past_train_mean(dataset.buffer, int(dataset.start_idx[j]),
                                         spec.chunk_len))
        elif spec.variant == "preview":
            warms.append(preview_train_mean(dataset.targets[j]))
        else:
            warms.append(WarmMean.empty())
    return dataset.obs[sel], warms


def curvature_sweep(params: MlpParams, obs: np.ndarray, warms: list[WarmMean],
                    spec: PriorSpec, rng: np.random.Generator,
                    n_steps: int = 100, label: str = "") -> CurvatureReport:
    """Average curvature over a set of observations with fresh prior draws."""
    from .prior import sample_prior
    if len(obs) != len(warms) or len(obs) == 0:
        raise ConfigurationError("need matching, non-empty obs and warm means")
    a0 = np.stack([sample_prior(spec, w, rng) for w in warms])
    _, vels = euler_sample_batch(params, a0, obs, n_steps)
    v = vels.reshape(n_steps, len(obs), -1)
    vbar = v.mean(axis=0)
    kappas = np.mean(np.sum((v - vbar[None]) ** 2, axis=2), axis=0)
    return CurvatureReport(kappas, label)


# ---------------------------------------------------------------------------
# couplings with exact Bayes oracles
# ---------------------------------------------------------------------------

def mixture_posterior_mean(x, t: float, target: MixtureTarget,
                           source_mean=0.0, source_scale: float = 1.0) -> np.ndarray:
    """E[A1 | A_t = x] for a discrete target and an independent isotropic
    Gaussian source N(source_mean, source_scale^2 I).

    Under the linear interpolant, A_t given A1 = y_j is normal with mean
    (1-t) source_mean + t y_j and scale (1-t) source_scale, so the
    posterior over components is a softmax of log densities.
    """
    if t >= 1.0:
        raise ConfigurationError("posterior mean requires t < 1")
    if source_scale <= 0:
        raise ConfigurationError("source scale must be positive")
    xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mu = np.broadcast_to(np.asarray(source_mean, dtype=np.float64), (target.dim,))
    means = (1.0 - t) * mu[None, :] + t * target.components       # (J, d)
    std = (1.0 - t) * source_scale
    logw = np.log(target.probs)[None, :] - 0.5 * np.sum(
        ((xs[:, None, :] - means[None]) / std) ** 2, axis=2)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    out = w @ target.components
    return out[0] if np.asarray(x).ndim == 1 else out


@dataclass(frozen=True)
class Coupling:
    """Joint law of (A0, A1) with a closed-form conditional oracle.

    kinds:
      independent — A0 ~ N(source_mean, source_scale^2 I), independent of A1;
      warm        — A0 = A1 + offset + sigma Xi on warm coords, Xi on cold
                    (the warm mean is the target itself plus a fixed offset,
                    the exact-forecast / persistence-residual fixtures);
      monotone    — 1D deterministic quantile coupling A1 = F(A0), the
                    non-branching transport.
    """

    kind: str
    target: MixtureTarget
    source_mean: np.ndarray | None = None
    source_scale: float = 1.0
    sigma: float = 1.0
    offset: np.ndarray | None = None
    warm_mask: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.target.dim

    @property
    def d_warm(self) -> int:
        if self.kind != "warm":
            return 0
        return int(self.warm_mask.sum())

    def projector_mask(self, warm_only: bool) -> np.ndarray:
        if warm_only:
            if self.kind != "warm":
                raise ConfigurationError("warm projection needs a warm coupling")
            return self.warm_mask
        return np.ones(self.dim, dtype=bool)

    # -- sampling ------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator):
        a1 = self.target.sample(n, rng)
        if self.kind == "independent":
            a0 = self.source_mean[None, :] + self.source_scale * rng.standard_normal(
                (n, self.dim))
        elif self.kind == "warm":
            xi = rng.standard_normal((n, self.dim))
            a0 = np.where(self.warm_mask[None, :],
                          a1 + self.offset[None, :] + self.sigma * xi, xi)
        elif self.kind == "monotone":
            z = rng.standard_normal(n)
            edges = ndtri(np.cumsum(self.target.probs)[:-1])
            j = np.searchsorted(edges, z)
            a1 = self.target.components[j]
            a0 = z[:, None]
        else:
            raise ConfigurationError(f"unknown coupling kind {self.kind!r}")
        return a0, a1

    # -- Bayes oracle ----------------------------------------------------

    def posterior_mean(self, x: np.ndarray, t: float) -> np.ndarray:
        """E[A1 | A_t = x] under this coupling, vectorized over rows of x."""
        if t >= 1.0:
            raise ConfigurationError("posterior mean requires t < 1")
        xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "independent":
            return np.atleast_2d(mixture_posterior_mean(
                xs, t, self.target, self.source_mean, self.source_scale))
        if self.kind == "monotone":
            comp = self.target.components[:, 0]
            order = np.argsort(comp)
            ys = comp[order]
            probs = self.target.probs[order]
            edges = ndtri(np.cumsum(probs)[:-1])
            # Interval images of each quantile bucket are disjoint, so A_t
            # determines the component: bucket j covers
            # ((1-t) c_{j-1} + t y_j, (1-t) c_j + t y_j].
            rights = (1.0 - t) * edges + t * ys[:-1]
            j = np.searchsorted(rights, xs[:, 0])
            return ys[j][:, None]
        if self.kind == "warm":
            return self._warm_posterior_mean(xs, t)
        raise ConfigurationError(f"unknown coupling kind {self.kind!r}")

    def _warm_posterior_mean(self, xs: np.ndarray, t: float) -> np.ndarray:
        comp = self.target.components                              # (J, d)
        warm = self.warm_mask
        # Per-coordinate law of A_t given A1 = y_j:
        #   warm: mean y_j + (1-t) offset, std (1-t) sigma
        #   cold: mean t y_j,            std (1-t)
        means = np.where(warm[None, :], comp + (1.0 - t) * self.offset[None, :],
                         t * comp)
        logw = np.tile(np.log(self.target.probs)[None, :], (len(xs), 1))
        diff = xs[:, None, :] - means[None]                        # (n, J, d)
        if self.sigma > 0:
            std = np.where(warm, (1.0 - t) * self.sigma, 1.0 - t)
            logw = logw - 0.5 * np.sum((diff / std[None, None, :]) ** 2, axis=2)
        else:
            # Degenerate warm coordinates: exact-match selector.
            cold_std = 1.0 - t
            if np.any(~warm):
                logw = logw - 0.5 * np.sum(
                    (diff[:, :, ~warm] / cold_std) ** 2, axis=2)
            match = np.all(np.abs(diff[:, :, warm]) <= 1e-9, axis=2)
            logw = np.where(match, logw, -np.inf)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        return w @ comp


def independent_coupling(target: MixtureTarget, source_mean=0.0,
                         source_scale: float = 1.0) -> Coupling:
    mu = np.broadcast_to(np.asarray(source_mean, dtype=np.float64),
                         (target.dim,)).copy()
    if source_scale <= 0:
        raise ConfigurationError("source scale must be positive")
    return Coupling("independent", target, source_mean=mu, source_scale=source_scale)


def warm_coupling(target: MixtureTarget, sigma: float, offset=0.0,
                  warm_mask=None) -> Coupling:
    """Warm-shifted source whose mean is the target itself plus a fixed
    offset: offset=0 is the exact-forecast fixture, offset!=0 the
    persistence-residual one."""
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    off = np.broadcast_to(np.asarray(offset, dtype=np.float64), (target.dim,)).copy()
    mask = (np.ones(target.dim, dtype=bool) if warm_mask is None
            else np.asarray(warm_mask, dtype=bool).copy())
    if mask.shape != (target.dim,) or not mask.any():
        raise ConfigurationError("warm mask must cover at least one coordinate")
    off[~mask] = 0.0
    return Coupling("warm", target, sigma=sigma, offset=off, warm_mask=mask)


def monotone_coupling(target: MixtureTarget) -> Coupling:
    if target.dim != 1:
        raise ConfigurationError("the monotone coupling is 1D only")
    return Coupling("monotone", target)


# ---------------------------------------------------------------------------
# branching cost
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quadrature:
    """MC/quadrature settings: trapezoid t grid truncated below 1 (the
    integrand is bounded for discrete targets but the posterior collapse
    is numerically fragile at t ~ 1)."""

    t_max: float = 0.999
    n_t: int = 256
    n_samples: int = 100_000
    sample_chunk: int = 20_000

    def __post_init__(self):
        if not (0.0 < self.t_max < 1.0):
            raise ConfigurationError("t_max must lie in (0, 1)")
        if self.n_t < 2 or self.n_samples < 2:
            raise ConfigurationError("need at least 2 grid points and 2 samples")

    def grid(self):
        ts = np.linspace(0.0, self.t_max, self.n_t)
        w = np.full(self.n_t, ts[1] - ts[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return ts, w


@dataclass(frozen=True)
class BranchingReport:
    """Branching-cost estimate with its decomposition fields."""

    estimate: float
    se: float
    fixture: str = ""
    sigma: float | None = None
    d_warm: int = 0
    mismatch: float = 0.0         # E||P_W (A1 - mu)||^2, exact for warm fixtures
    noise_term: float = 0.0       # sigma^2 d_W
    surrogate: float = 0.0        # E||P_W(A1 - A_t)||^2 / (1-t)^2, t-averaged
    surrogate_se: float = 0.0
    cross_term: float = 0.0       # E<P_W(A1 - mu), P_W Xi>, should be ~0
    cross_se: float = 0.0
    n_samples: int = 0
    n_t: int = 0
    t_max: float = 0.0

    @property
    def bound(self) -> float:
        return self.mismatch + self.noise_term

    @property
    def slack(self) -> float:
        return self.bound - self.estimate


def _accumulate_path_integrals(coupling: Coupling, quad: Quadrature,
                               rng: np.random.Generator, mask: np.ndarray,
                               want_velocity_risk: bool):
    """Shared MC core: per-sample trapezoid integrals of the branching
    integrand (and optionally the optimal-field velocity risk and the
    surrogate-predictor integrand)."""
    ts, w = quad.grid()
    branch, risk, surro, cross = [], [], [], []
    remaining = quad.n_samples
    while remaining > 0:
        m = min(quad.sample_chunk, remaining)
        remaining -= m
        a0, a1 = coupling.sample(m, rng)
        acc_b = np.zeros(m)
        acc_r = np.zeros(m)
        acc_s = np.zeros(m)
        for t, wt in zip(ts, w):
            at = (1.0 - t) * a0 + t * a1
            pm = coupling.posterior_mean(at, t)
            err = np.sum(((a1 - pm) * mask[None, :]) ** 2, axis=1)
            acc_b += (wt / (1.0 - t) ** 2) * err
            if want_velocity_risk:
                v_star = (pm - at) / (1.0 - t)
                acc_r += wt * np.sum((v_star - (a1 - a0)) ** 2, axis=1)
            acc_s += (wt / (1.0 - t) ** 2) * np.sum(
                (((a1 - at) * mask[None, :])) ** 2, axis=1)
        branch.append(acc_b)
        risk.append(acc_r)
        surro.append(acc_s / quad.t_max)
        if coupling.kind == "warm" and coupling.sigma > 0:
            xi = (a0 - a1 - coupling.offset[None, :]) / coupling.sigma
            cross.append(np.sum((-coupling.offset[None, :] * xi) * mask[None, :],
                                axis=1))
    def stats(parts):
        vals = np.concatenate(parts)
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))
    b_mean, b_se = stats(branch)
    r_mean, r_se = stats(risk) if want_velocity_risk else (0.0, 0.0)
    s_mean, s_se = stats(surro)
    c_mean, c_se = stats(cross) if cross else (0.0, 0.0)
    return (b_mean, b_se), (r_mean, r_se), (s_mean, s_se), (c_mean, c_se)


def exact_mismatch(coupling: Coupling, mask: np.ndarray) -> float:
    """E||P(A1 - mu)||^2 in closed form."""
    if coupling.kind == "warm":
        return float(np.sum((coupling.offset * mask) ** 2))
    if coupling.kind == "independent":
        diff = (coupling.target.components - coupling.source_mean[None, :]) * mask
        return float(coupling.target.probs @ np.sum(diff ** 2, axis=1))
    return float("nan")


def branching_cost(coupling: Coupling, quad: Quadrature, rng: np.random.Generator,
                   warm_only: bool = False, fixture: str = "") -> BranchingReport:
    """Monte-Carlo estimate of the time-integrated endpoint ambiguity
    int_0^t_max (1-t)^-2 E||P(A1 - E[A1|A_t])||^2 dt, with standard error
    over per-sample path integrals, plus the decomposition fields."""
    mask = coupling.projector_mask(warm_only).astype(np.float64)
    (b, b_se), _, (s, s_se), (c, c_se) = _accumulate_path_integrals(
        coupling, quad, rng, mask, want_velocity_risk=False)
    sigma = coupling.sigma if coupling.kind == "warm" else None
    d_w = coupling.d_warm if warm_only else int(mask.sum())
    noise = (sigma ** 2 * coupling.d_warm) if coupling.kind == "warm" else 0.0
    return BranchingReport(
        estimate=b, se=b_se, fixture=fixture, sigma=sigma,
        d_warm=coupling.d_warm, mismatch=exact_mismatch(coupling, mask),
        noise_term=noise, surrogate=s, surrogate_se=s_se,
        cross_term=c, cross_se=c_se, n_samples=quad.n_samples,
        n_t=quad.n_t, t_max=quad.t_max)


def fm_risk_of_bayes_field(coupling: Coupling, quad: Quadrature,
                           rng: np.random.Generator):
    """Direct MC estimate of the population regression risk of the optimal
    field v*(x, t) = (E[A1|A_t=x] - x)/(1-t). Returns (value, se).

    The exact-formula theorem says this equals the branching cost; the two
    estimators take different code paths, so comparing them within MC
    error checks both.
    """
    mask = np.ones(coupling.dim)
    _, (r, r_se), _, _ = _accumulate_path_integrals(
        coupling, quad, rng, mask, want_velocity_risk=True)
    return r, r_se


def warm_bound_check(target: MixtureTarget, sigmas, rng: np.random.Generator,
                     offset=0.0, quad: Quadrature | None = None,
                     warm_mask=None, fixture: str = "") -> list[BranchingReport]:
    """Sweep the residual scale and report, per sigma, the warm-coordinate
    branching estimate against its (mismatch + sigma^2 d_W) upper bound."""
    sig = list(sigmas)
    if not sig:
        raise ConfigurationError("sigma grid must be non-empty")
    quad = quad or Quadrature()
    out = []
    for s in sig:
        coupling = warm_coupling(target, float(s), offset=offset, warm_mask=warm_mask)
        out.append(branching_cost(coupling, quad, rng, warm_only=True,
                                  fixture=fixture or "warm"))
    return out
