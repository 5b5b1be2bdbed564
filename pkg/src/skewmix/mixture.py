"""Blocked Gibbs sampler for truncated Dirichlet-process mixtures of skew-normals.

The latent half-normal representation ``y = xi + delta*eta + omega*sqrt(1-delta^2)*eps``
with ``eta ~ HN(0, omega^2)`` makes ``(xi, omega)`` conditionally conjugate;
the shape parameter is refreshed from its ``eta``-marginal conditional by a
Metropolis-Hastings step. The Gaussian kernel is the special case with every
shape pinned at zero, for which ``(xi, omega)`` are drawn from the standard
collapsed normal-inverse-gamma conditional.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, ndtr

from .skewnormal import (
    SkewNormalParams,
    ShapeStepStats,
    SunConditional,
    _neg_hess_log_ndtr,
    delta,
    sn_logpdf,
    sun_conditional_sample,
    truncated_positive_normal_sample,
)


_SQRT_2PI = math.sqrt(2.0 * math.pi)


class KernelFamily(str, enum.Enum):
    SKEW_NORMAL = "skew_normal"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        return cls(key)


@dataclass(frozen=True)
class BaseMeasure:
    """Hyperparameters of ``N(xi; xi0, kappa*omega^2) Ga(omega^-2; a, b) N(lam; 0, psi0)``
    together with the ``Ga(a_alpha, b_alpha)`` prior on the concentration (rates, not scales).
    """

    xi0: float = 0.0
    kappa: float = 1.0
    a: float = 0.5
    b: float = 0.5
    psi0: float = 10.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.xi0):
            raise ValueError("xi0 must be finite")
        for name in ("kappa", "a", "b", "psi0", "a_alpha", "b_alpha"):
            value = getattr(self, name)
            if not (value > 0 and np.isfinite(value)):
                raise ValueError(f"{name} must be positive, got {value}")

    @classmethod
    def from_data(cls, y, kernel=KernelFamily.SKEW_NORMAL, **overrides):
        """Default prior: ``xi0`` the sample mean and ``kappa`` the sample variance.

        The precision prior is ``Ga(1/2, 1/2)`` for skew-normal kernels and
        ``Ga(1, 1)`` for the Gaussian baseline.
        """
        y = np.asarray(y, dtype=float)
        var = float(np.var(y, ddof=1)) if y.size > 1 else 1.0
        params = dict(xi0=float(np.mean(y)), kappa=var if var > 0 else 1.0)
        if KernelFamily.parse(kernel) is KernelFamily.GAUSSIAN:
            params.update(a=1.0, b=1.0)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)

    def sample_atoms(self, rng, size, kernel=KernelFamily.SKEW_NORMAL):
        tau = rng.gamma(self.a, 1.0 / self.b, size)
        omega = 1.0 / np.sqrt(tau)
        xi = self.xi0 + np.sqrt(self.kappa) * omega * rng.standard_normal(size)
        if KernelFamily.parse(kernel) is KernelFamily.GAUSSIAN:
            lam = np.zeros(size)
        else:
            lam = math.sqrt(self.psi0) * rng.standard_normal(size)
        return xi, omega, lam


def stick_weights(sticks):
    """``pi_h = V_h prod_{l<h} (1 - V_l)``; with ``V_H = 1`` the weights sum to one."""
    sticks = np.asarray(sticks, dtype=float)
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - sticks[:-1])))
    return sticks * remaining


@dataclass
class ChainState:
    """Complete sampler state; cluster indices are zero-based."""

    xi: np.ndarray
    omega: np.ndarray
    lam: np.ndarray
    sticks: np.ndarray
    alloc: np.ndarray
    eta: np.ndarray
    alpha: float
    shape_scale: float = 2.0
    shape_stats: ShapeStepStats = field(default_factory=ShapeStepStats)

    @property
    def h_max(self) -> int:
        return self.xi.size

    @property
    def weights(self) -> np.ndarray:
        return stick_weights(self.sticks)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.alloc, minlength=self.h_max)

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.counts))

    def atom(self, h) -> SkewNormalParams:
        return SkewNormalParams(float(self.xi[h]), float(self.omega[h]), float(self.lam[h]))

    def copy(self):
        return replace(self, xi=self.xi.copy(), omega=self.omega.copy(), lam=self.lam.copy(),
                       sticks=self.sticks.copy(), alloc=self.alloc.copy(), eta=self.eta.copy(),
                       shape_stats=ShapeStepStats())


def init_state(n, base, h_max, rng, kernel=KernelFamily.SKEW_NORMAL):
    """Prior draw of every block except the allocations, which start in one cluster."""
    alpha = rng.gamma(base.a_alpha, 1.0 / base.b_alpha)
    xi, omega, lam = base.sample_atoms(rng, h_max, kernel)
    sticks = rng.beta(1.0, alpha, h_max)
    sticks[-1] = 1.0
    return ChainState(xi=xi, omega=omega, lam=lam, sticks=sticks,
                      alloc=np.zeros(n, dtype=np.intp), eta=np.ones(n), alpha=float(alpha))


def warm_start(state, y, rng, base, kernel, alpha_update="escobar_west", shape_steps=3, groups=10):
    """Allocate sorted data to ``groups`` equal-count blocks, then draw everything else given them.

    Starting from several clusters avoids the slow splitting of a
    single-cluster start when the concentration is small.
    """
    y = np.asarray(y, dtype=float)
    k = max(1, min(groups, state.h_max, y.size))
    ranks = np.empty(y.size, dtype=np.intp)
    ranks[np.argsort(y, kind="stable")] = np.arange(y.size)
    state.alloc = (ranks * k) // y.size
    return continuous_steps(state, y, rng, base, kernel, alpha_update, shape_steps)


def _draw_categorical(logp, rng):
    """One draw per row from unnormalised log-probabilities (rows may hold -inf)."""
    m = np.max(logp, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    p = np.exp(logp - m)
    cum = np.cumsum(p, axis=1)
    total = cum[:, -1]
    u = rng.random(logp.shape[0]) * total
    idx = np.sum(cum <= u[:, None], axis=1)
    # rows where nothing is representable fall back to the largest entry
    idx = np.where(total > 0, idx, np.argmax(logp, axis=1))
    return np.minimum(idx, logp.shape[1] - 1)


def allocation_logprobs(state, y):
    """``log pi_h + log f_SN(y_i; theta_h)`` as an ``(n, H)`` array."""
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights)
    return logw[None, :] + sn_logpdf(np.asarray(y, dtype=float)[:, None],
                                     state.xi[None, :], state.omega[None, :], state.lam[None, :])


def update_allocations(state, y, rng):
    """Draw every ``S_i`` from its multinomial full conditional (log-sum-exp normalised)."""
    state.alloc = _draw_categorical(allocation_logprobs(state, y), rng)
    return state


def update_alpha(state, rng, base, n=None):
    """Escobar-West auxiliary-variable update of the concentration given ``n`` and ``H``.

    Draw ``x ~ Be(alpha + 1, n)`` and then ``alpha`` from the two-component
    mixture ``Ga(a + H, b - log x)`` / ``Ga(a + H - 1, b - log x)``.
    """
    n = state.alloc.size if n is None else n
    k = state.n_occupied
    x = rng.beta(state.alpha + 1.0, n)
    rate = base.b_alpha - math.log(max(x, 1e-300))
    odds = (base.a_alpha + k - 1.0) / (n * rate)
    shape = base.a_alpha + k if rng.random() < odds / (1.0 + odds) else base.a_alpha + k - 1.0
    state.alpha = float(max(rng.gamma(shape, 1.0 / rate), 1e-300))
    return state


def update_alpha_sticks(state, rng, base):
    """Concentration given the stick proportions: ``Ga(a + H_max - 1, b - sum log(1 - V_h))``."""
    v = np.minimum(state.sticks[:-1], 1.0 - 1e-16)
    rate = base.b_alpha - np.sum(np.log1p(-v))
    state.alpha = float(max(rng.gamma(base.a_alpha + v.size, 1.0 / rate), 1e-300))
    return state


def update_sticks(state, rng):
    """``V_h ~ Be(1 + n_h, alpha + sum_{l>h} n_l)`` for ``h < H_max``; the last stick is 1."""
    counts = state.counts
    tail = np.concatenate((np.cumsum(counts[::-1])[::-1][1:], [0]))
    sticks = rng.beta(1.0 + counts[:-1], state.alpha + tail[:-1])
    state.sticks = np.concatenate((sticks, [1.0]))
    return state


def update_eta(state, y, rng):
    """``eta_i ~ N(delta (y_i - xi), omega^2 (1 - delta^2))`` truncated to ``(0, inf)``."""
    s = state.alloc
    d = delta(state.lam)[s]
    om = state.omega[s]
    state.eta = truncated_positive_normal_sample(d * (np.asarray(y) - state.xi[s]),
                                                 om * om * (1.0 - d * d), rng)
    return state


def location_scale_posterior(n, sum_r, sum_r2, sum_eta2, c, base, use_eta=True):
    """Normal-gamma conditional of ``(xi, omega^-2)`` from per-cluster sufficient statistics.

    ``r_i = y_i - delta eta_i`` and ``c = 1 - delta^2``. Returns ``(shape, rate,
    mean, kappa_hat)`` with ``omega^-2 ~ Ga(shape, rate)`` and
    ``xi | omega ~ N(mean, kappa_hat * omega^2)``. With ``use_eta=False`` the
    latent terms are absent (Gaussian kernel, ``c = 1``).
    """
    n = np.asarray(n, dtype=float)
    kappa, xi0 = base.kappa, base.xi0
    safe_n = np.maximum(n, 1.0)
    rbar = sum_r / safe_n
    ss = np.maximum(sum_r2 - n * rbar * rbar, 0.0)
    denom = c + n * kappa
    quad = ss / c + n * (rbar - xi0) ** 2 / denom
    if use_eta:
        shape = base.a + n
        rate = base.b + 0.5 * (sum_eta2 + quad)
    else:
        shape = base.a + 0.5 * n
        rate = base.b + 0.5 * quad
    mean = (c * xi0 + kappa * sum_r) / denom
    kappa_hat = kappa * c / denom
    return shape, rate, mean, kappa_hat


def _cluster_stats(state, y, use_eta):
    h = state.h_max
    s = state.alloc
    y = np.asarray(y, dtype=float)
    n = np.bincount(s, minlength=h).astype(float)
    if use_eta:
        d = delta(state.lam)
        r = y - d[s] * state.eta
        c = 1.0 - d * d
        sum_eta2 = np.bincount(s, weights=state.eta**2, minlength=h)
    else:
        r = y
        c = np.ones(h)
        sum_eta2 = np.zeros(h)
    return (n, np.bincount(s, weights=r, minlength=h), np.bincount(s, weights=r * r, minlength=h),
            sum_eta2, c)


def _draw_location_scale(state, stats, base, use_eta, rng, index=slice(None)):
    n, sum_r, sum_r2, sum_eta2, c = (np.atleast_1d(v[index]) for v in stats)
    shape, rate, mean, kappa_hat = location_scale_posterior(n, sum_r, sum_r2, sum_eta2, c, base, use_eta)
    tau = rng.gamma(shape, 1.0 / rate)
    omega = 1.0 / np.sqrt(tau)
    xi = mean + np.sqrt(kappa_hat) * omega * rng.standard_normal(omega.shape)
    state.omega[index] = omega if omega.size > 1 else omega[0]
    state.xi[index] = xi if xi.size > 1 else xi[0]


def update_atom_location_scale(state, y, h, rng, base, kernel=KernelFamily.SKEW_NORMAL):
    """Joint draw of ``(xi_h, omega_h)`` for one cluster; empty clusters draw from the prior."""
    use_eta = KernelFamily.parse(kernel) is KernelFamily.SKEW_NORMAL
    _draw_location_scale(state, _cluster_stats(state, y, use_eta), base, use_eta, rng, index=h)
    return state


def update_all_location_scale(state, y, rng, base, kernel=KernelFamily.SKEW_NORMAL):
    use_eta = KernelFamily.parse(kernel) is KernelFamily.SKEW_NORMAL
    _draw_location_scale(state, _cluster_stats(state, y, use_eta), base, use_eta, rng)
    return state


def update_atom_shape(state, y, h, rng, base, kernel=KernelFamily.SKEW_NORMAL, n_steps=3):
    """Refresh ``lam_h`` from ``N(lam; 0, psi0) prod_{S_i=h} Phi(lam z_i)``; no-op for Gaussian kernels."""
    if KernelFamily.parse(kernel) is KernelFamily.GAUSSIAN:
        state.lam[h] = 0.0
        return state
    members = state.alloc == h
    z = (np.asarray(y, dtype=float)[members] - state.xi[h]) / state.omega[h]
    state.lam[h] = sun_conditional_sample(SunConditional(base.psi0, z), state.lam[h], rng,
                                          scale=state.shape_scale, n_steps=n_steps,
                                          stats=state.shape_stats)
    return state


def update_all_shapes(state, y, rng, base, n_steps=3):
    """Vectorised form of :func:`update_atom_shape` over every cluster."""
    h = state.h_max
    s = state.alloc
    z = (np.asarray(y, dtype=float) - state.xi[s]) / state.omega[s]
    z2 = z * z
    occupied = np.bincount(s, weights=z2, minlength=h) > 0
    psi0 = base.psi0
    lam = state.lam.copy()
    empty = np.nonzero(~occupied)[0]
    lam[empty] = math.sqrt(psi0) * rng.standard_normal(empty.size)
    if not occupied.any():
        state.lam = lam
        return state

    def log_target(values):
        return -0.5 * values * values / psi0 + np.bincount(s, weights=log_ndtr(values[s] * z), minlength=h)

    def proposal_sd(values):
        info = np.bincount(s, weights=z2 * _neg_hess_log_ndtr(values[s] * z), minlength=h)
        return state.shape_scale / np.sqrt(1.0 / psi0 + info)

    logp = log_target(lam)
    sd = proposal_sd(lam)
    n_occ = int(occupied.sum())
    for _ in range(n_steps):
        prop = lam + sd * rng.standard_normal(h)
        logp_prop = log_target(prop)
        sd_back = proposal_sd(prop)
        log_ratio = (logp_prop - logp - np.log(sd_back) + np.log(sd)
                     - 0.5 * ((lam - prop) / sd_back) ** 2 + 0.5 * ((prop - lam) / sd) ** 2)
        accept = occupied & (np.log(rng.random(h)) < log_ratio)
        lam = np.where(accept, prop, lam)
        logp = np.where(accept, logp_prop, logp)
        sd = np.where(accept, sd_back, sd)
        state.shape_stats.proposed += n_occ
        state.shape_stats.accepted += int(accept.sum())
    state.lam = lam
    return state


def adapt_shape_scale(state, low=0.2, high=0.5):
    """Nudge the proposal multiplier toward the target acceptance band and reset counters."""
    rate = state.shape_stats.rate
    if np.isfinite(rate):
        if rate < low:
            state.shape_scale *= 0.8
        elif rate > high:
            state.shape_scale *= 1.25
    state.shape_stats = ShapeStepStats()
    return state


def continuous_steps(state, y, rng, base, kernel, alpha_update="escobar_west", shape_steps=3):
    """Every update after the allocations; the rounded sampler reuses it on imputed data."""
    kernel = KernelFamily.parse(kernel)
    if alpha_update == "escobar_west":
        update_alpha(state, rng, base)
    elif alpha_update == "sticks":
        update_alpha_sticks(state, rng, base)
    else:
        raise ValueError(f"unknown alpha update {alpha_update!r}")
    update_sticks(state, rng)
    if kernel is KernelFamily.SKEW_NORMAL:
        update_eta(state, y, rng)
    update_all_location_scale(state, y, rng, base, kernel)
    if kernel is KernelFamily.SKEW_NORMAL:
        update_all_shapes(state, y, rng, base, shape_steps)
    return state


def gibbs_sweep(state, y, rng, base, kernel=KernelFamily.SKEW_NORMAL, alpha_update="escobar_west",
                shape_steps=3):
    """One full sweep: allocations, concentration, sticks, latent eta, (xi, omega), shape."""
    update_allocations(state, y, rng)
    return continuous_steps(state, y, rng, base, kernel, alpha_update, shape_steps)


@dataclass
class ChainConfig:
    h_max: int = 50
    n_iter: int = 6000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    kernel: KernelFamily = KernelFamily.SKEW_NORMAL
    base: BaseMeasure | None = None
    alpha_update: str = "escobar_west"
    shape_steps: int = 3
    adapt_every: int = 50
    keep_alloc: bool = True
    init_groups: int = 10

    def __post_init__(self):
        self.kernel = KernelFamily.parse(self.kernel)
        if self.h_max < 1:
            raise ValueError("h_max must be at least 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be positive")
        if self.alpha_update not in ("escobar_west", "sticks"):
            raise ValueError(f"unknown alpha update {self.alpha_update!r}")
        if self.init_groups < 1:
            raise ValueError("init_groups must be positive")

    @property
    def n_keep(self) -> int:
        return len(range(self.burn_in, self.n_iter, self.thin))


@dataclass
class PosteriorSummary:
    """Retained draws; atom arrays have shape ``(draws, H_max)``."""

    weights: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    n_occupied: np.ndarray
    alloc: np.ndarray | None
    config: ChainConfig
    base: BaseMeasure
    shape_acceptance: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    rounding: object = None  # RoundingGrid for count-data fits

    @property
    def n_draws(self) -> int:
        return self.alpha.size

    def mixture_params(self, d, min_weight=0.0):
        keep = self.weights[d] > min_weight
        return self.weights[d][keep], self.xi[d][keep], self.omega[d][keep], self.lam[d][keep]


class _Recorder:
    def __init__(self, config, n, h_max):
        k = config.n_keep
        self.config = config
        self.weights = np.empty((k, h_max))
        self.xi = np.empty((k, h_max))
        self.omega = np.empty((k, h_max))
        self.lam = np.empty((k, h_max))
        self.alpha = np.empty(k)
        self.n_occupied = np.empty(k, dtype=np.int64)
        self.alloc = np.empty((k, n), dtype=np.int16 if h_max < 2**15 else np.int32) if config.keep_alloc else None
        self.pos = 0
        self.accepted = 0
        self.proposed = 0

    def record(self, state):
        i = self.pos
        self.weights[i] = state.weights
        self.xi[i] = state.xi
        self.omega[i] = state.omega
        self.lam[i] = state.lam
        self.alpha[i] = state.alpha
        self.n_occupied[i] = state.n_occupied
        if self.alloc is not None:
            self.alloc[i] = state.alloc
        self.pos += 1

    def summary(self, base, **extra):
        rate = self.accepted / self.proposed if self.proposed else float("nan")
        return PosteriorSummary(weights=self.weights, xi=self.xi, omega=self.omega, lam=self.lam,
                                alpha=self.alpha, n_occupied=self.n_occupied, alloc=self.alloc,
                                config=self.config, base=base, shape_acceptance=rate, **extra)


def drive_chain(state, config, base, sweep, record_n):
    """Run ``sweep(state)`` ``config.n_iter`` times, adapting during burn-in and recording after."""
    rec = _Recorder(config, record_n, config.h_max)
    for it in range(config.n_iter):
        sweep(state)
        if it < config.burn_in:
            if config.adapt_every and (it + 1) % config.adapt_every == 0:
                adapt_shape_scale(state)
            continue
        if it == config.burn_in:
            state.shape_stats = ShapeStepStats()
        if (it - config.burn_in) % config.thin == 0:
            rec.record(state)
    rec.accepted = state.shape_stats.accepted
    rec.proposed = state.shape_stats.proposed
    return rec


def check_data(y):
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("data must be non-empty")
    if not np.all(np.isfinite(y)):
        raise ValueError("data must be finite")
    return y


def run_chain(y, config: ChainConfig | None = None, **kwargs) -> PosteriorSummary:
    """Fit the mixture to continuous data.

    Parameters
    ----------
    y : array_like
        Finite observations.
    config : ChainConfig, optional
        Chain settings; keyword arguments build one when omitted. A missing
        ``base`` is replaced by :meth:`BaseMeasure.from_data`.

    Returns
    -------
    PosteriorSummary
        Post-burn-in draws, thinned. Deterministic given ``config.seed``.
    """
    config = ChainConfig(**kwargs) if config is None else config
    y = check_data(y)
    base = config.base if config.base is not None else BaseMeasure.from_data(y, config.kernel)
    rng = np.random.default_rng(config.seed)
    state = init_state(y.size, base, config.h_max, rng, config.kernel)
    warm_start(state, y, rng, base, config.kernel, config.alpha_update, config.shape_steps,
               config.init_groups)

    def sweep(s):
        gibbs_sweep(s, y, rng, base, config.kernel, config.alpha_update, config.shape_steps)

    rec = drive_chain(state, config, base, sweep, y.size)
    return rec.summary(base)


def mixture_pdf(grid, weights, xi, omega, lam):
    """``sum_h w_h f_SN(grid; theta_h)`` for one flat set of atoms."""
    grid = np.asarray(grid, dtype=float)
    z = (grid[:, None] - xi[None, :]) / omega[None, :]
    dens = np.exp(-0.5 * z * z)
    if np.any(lam != 0):
        dens *= 2.0 * ndtr(lam[None, :] * z)
    return dens @ (weights / (omega * _SQRT_2PI))


def pruned_weights(weights, min_weight):
    """Zero weights at or below ``min_weight`` and rescale each draw back to unit sum."""
    w = np.where(weights > min_weight, weights, 0.0)
    return w / w.sum(axis=-1, keepdims=True)


def posterior_mean_density(summary: PosteriorSummary, grid, min_weight=1e-9, chunk=128):
    """Average of the mixture density over retained draws.

    Components with weight at or below ``min_weight`` are dropped and the
    remaining weights of that draw rescaled, which perturbs the density by a
    relative amount of at most ``H_max * min_weight``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        return np.empty(0)
    total = np.zeros(grid.size)
    for start in range(0, summary.n_draws, chunk):
        sl = slice(start, start + chunk)
        w = pruned_weights(summary.weights[sl], min_weight)
        keep = w > 0
        ww, xx, oo, ll = w[keep], summary.xi[sl][keep], summary.omega[sl][keep], summary.lam[sl][keep]
        total += mixture_pdf(grid, ww, xx, oo, ll)
    return total / summary.n_draws


def density_trace(summary: PosteriorSummary, points):
    """Mixture density at ``points`` for every retained draw, shape ``(draws, points)``."""
    points = np.asarray(points, dtype=float)
    z = sn_logpdf(points[None, :, None], summary.xi[:, None, :], summary.omega[:, None, :],
                  summary.lam[:, None, :])
    return np.einsum("dph,dh->dp", np.exp(z), summary.weights)
