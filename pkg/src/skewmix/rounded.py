"""Rounded skew-normal mixtures for probability mass functions on the nonnegative integers.

An integer observation ``y`` is the cell index of a latent continuous ``y*``
under a threshold sequence ``-inf = a_0 < a_1 < ...``. The sampler alternates
discrete allocations (cell probabilities replace densities), imputation of
``y*`` inside its cell, and the continuous sweep on the imputed values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mixture import (
    BaseMeasure,
    ChainConfig,
    PosteriorSummary,
    _draw_categorical,
    continuous_steps,
    drive_chain,
    init_state,
    pruned_weights,
    warm_start,
)
from .skewnormal import SkewNormalParams, _cdf_and_sf, _invert_tail, sn_sample

SCHEMES = ("count", "floor", "custom")
_TINY_CELL = 1e-300
_REJECTION_MASS = 0.05
_REJECTION_ROUNDS = 30


@dataclass(frozen=True)
class RoundingGrid:
    """Thresholds ``a_1 < a_2 < ...`` with ``a_0 = -inf`` implied.

    ``count`` and ``floor`` both use ``a_j = j``. Under ``count`` cell ``j`` is
    ``(a_j, a_{j+1}]``; under ``floor`` it is ``[a_j, a_{j+1})`` so that
    ``floor(y*) = j`` for ``y* >= 1``. A ``custom`` grid holds finitely many
    thresholds and its last cell runs to ``+inf``.
    """

    scheme: str = "count"
    finite: tuple = ()
    source: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown rounding scheme {self.scheme!r}")
        if self.scheme == "custom":
            a = np.asarray(self.finite, dtype=float)
            if a.size == 0:
                raise ValueError("custom grid needs at least one finite threshold")
            if not np.all(np.isfinite(a)) or np.any(np.diff(a) <= 0):
                raise ValueError("custom thresholds must be finite and strictly increasing")
            object.__setattr__(self, "finite", tuple(float(v) for v in a))

    @classmethod
    def count(cls):
        return cls("count")

    @classmethod
    def floor(cls):
        return cls("floor")

    @classmethod
    def from_file(cls, path):
        """Read one ascending threshold per line; a leading ``-inf`` line is allowed."""
        values = []
        lines = Path(path).read_text().splitlines()
        for lineno, line in enumerate(lines, 1):
            text = line.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from None
            if v == -math.inf and not values:
                continue
            if not math.isfinite(v):
                raise ValueError(f"{path}:{lineno}: threshold must be finite")
            values.append(v)
        return cls("custom", tuple(values), source=str(path))

    @classmethod
    def parse(cls, spec):
        """``count``, ``floor`` or ``custom:<file>``."""
        if isinstance(spec, RoundingGrid):
            return spec
        if spec in ("count", "floor"):
            return cls(spec)
        if isinstance(spec, str) and spec.startswith("custom:"):
            return cls.from_file(spec[len("custom:"):])
        raise ValueError(f"rounding must be count, floor or custom:<file>, got {spec!r}")

    @property
    def n_cells(self):
        """Number of cells, or ``None`` when unbounded."""
        return len(self.finite) + 1 if self.scheme == "custom" else None

    @property
    def left_closed(self):
        return self.scheme == "floor"

    def describe(self):
        if self.scheme == "custom":
            return {"scheme": "custom", "thresholds": list(self.finite), "source": self.source}
        return {"scheme": self.scheme}

    def threshold(self, j):
        """``a_j`` for integer ``j >= 0`` (``-inf`` at 0, ``+inf`` past the last cell)."""
        j = np.asarray(j)
        if self.scheme == "custom":
            padded = np.concatenate(([-np.inf], self.finite, [np.inf]))
            return padded[np.clip(j, 0, len(self.finite) + 1)]
        return np.where(j <= 0, -np.inf, j.astype(float))

    def bounds(self, j):
        return self.threshold(j), self.threshold(np.asarray(j) + 1)

    def valid(self, y):
        y = np.asarray(y)
        ok = y >= 0
        if self.n_cells is not None:
            ok &= y < self.n_cells
        return ok


def round_value(y_star, grid: RoundingGrid):
    """Index of the cell containing ``y_star``."""
    grid = RoundingGrid.parse(grid)
    y = np.asarray(y_star, dtype=float)
    if grid.scheme == "count":
        j = np.maximum(np.ceil(y) - 1.0, 0.0)
    elif grid.scheme == "floor":
        j = np.maximum(np.floor(y), 0.0)
    else:
        j = np.searchsorted(np.asarray(grid.finite), y, side="left")
    j = np.asarray(j, dtype=np.int64)
    return int(j) if j.ndim == 0 else j


def _cell_probs(lo, hi, xi, omega, lam):
    """Skew-normal mass of ``(lo, hi]`` plus the bracketing cdf/sf values.

    The difference is taken on whichever tail is smaller so cells far in
    either tail keep full relative precision.
    """
    zl = (lo - xi) / omega
    zh = (hi - xi) / omega
    f_lo, s_lo = _cdf_and_sf(zl, lam)
    f_hi, s_hi = _cdf_and_sf(zh, lam)
    upper = f_lo > 0.5
    mass = np.where(upper, s_lo - s_hi, f_hi - f_lo)
    return np.maximum(mass, 0.0), (f_lo, s_lo, f_hi, s_hi)


def pmf_from_latent(p, grid: RoundingGrid, j):
    """Mass of cell ``j`` under one atom or a weighted mixture.

    ``p`` is a :class:`SkewNormalParams`, an ``(xi, omega, lam)`` tuple, or a
    ``(weights, xi, omega, lam)`` tuple of equal-length arrays.
    """
    grid = RoundingGrid.parse(grid)
    j = np.asarray(j)
    if isinstance(p, SkewNormalParams):
        w, xi, om, la = np.ones(1), np.array([p.xi]), np.array([p.omega]), np.array([p.lam])
    elif len(p) == 3:
        w, xi, om, la = (np.ones(1),) + tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in p)
    else:
        w, xi, om, la = (np.atleast_1d(np.asarray(v, dtype=float)) for v in p)
    jj = j.reshape(-1)
    lo, hi = grid.bounds(jj)
    mass, _ = _cell_probs(lo[:, None], hi[:, None], xi[None, :], om[None, :], la[None, :])
    out = mass @ w
    out[~grid.valid(jj)] = 0.0
    return float(out[0]) if j.ndim == 0 else out.reshape(j.shape)


class ImputationStats:
    """Counts midpoint fallbacks taken when a cell's mass underflows."""

    def __init__(self):
        self.draws = 0
        self.fallbacks = 0


def _midpoint(lo, hi):
    # half-infinite cells fall back to one unit inside the finite end
    return np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                    np.where(np.isfinite(lo), lo + 0.5, hi - 0.5))


def _clamp_into_cell(x, lo, hi, left_closed):
    if left_closed:
        lo_ok, hi_ok = lo, np.nextafter(hi, -np.inf)
    else:
        lo_ok, hi_ok = np.nextafter(lo, np.inf), hi
    return np.minimum(np.maximum(x, lo_ok), hi_ok)


def impute_latent(y, params, grid: RoundingGrid, rng, stats: ImputationStats | None = None,
                  cells=None):
    """Draw ``y*`` from each atom's skew-normal truncated to cell ``y``.

    ``params`` is one atom or a tuple ``(xi, omega, lam)`` of arrays matching
    ``y``. Cells holding at least 5% of the atom's mass are filled by
    rejection from the atom; the rest, and any rejection leftovers, by
    inverting a uniform drawn on the cdf scale of the smaller tail, which
    keeps remote cells free of cancellation. ``cells`` optionally supplies
    precomputed ``(mass, (f_lo, s_lo, f_hi, s_hi))`` per element.
    """
    grid = RoundingGrid.parse(grid)
    y = np.asarray(y)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    if isinstance(params, SkewNormalParams):
        xi, om, la = params.xi, params.omega, params.lam
    else:
        xi, om, la = params
    xi, om, la = (np.broadcast_to(np.asarray(v, dtype=float), y.shape) for v in (xi, om, la))
    lo, hi = grid.bounds(y)
    if cells is None:
        cells = _cell_probs(lo, hi, xi, om, la)
    mass, (f_lo, s_lo, f_hi, s_hi) = cells
    out = np.empty(y.shape)
    tiny = mass < _TINY_CELL
    u = rng.random(y.shape)
    # heavy cells: propose from the atom and keep draws landing in the cell
    pending = np.nonzero(mass >= _REJECTION_MASS)[0]
    for _ in range(_REJECTION_ROUNDS):
        if pending.size == 0:
            break
        cand = sn_sample((xi[pending], om[pending], la[pending]), rng, pending.size)
        inside = round_value(cand, grid) == y[pending]
        out[pending[inside]] = cand[inside]
        pending = pending[~inside]
    ok = ~tiny & (mass < _REJECTION_MASS)
    ok[pending] = True
    if ok.any():
        upper = (f_lo > 0.5) & ok
        lower = ~(f_lo > 0.5) & ok
        if lower.any():
            target = f_lo[lower] + u[lower] * (f_hi[lower] - f_lo[lower])
            out[lower] = _invert_tail(target, False, xi[lower], om[lower], la[lower],
                                      lo[lower], hi[lower])
        if upper.any():
            target = s_hi[upper] + u[upper] * (s_lo[upper] - s_hi[upper])
            out[upper] = _invert_tail(target, True, xi[upper], om[upper], la[upper],
                                      lo[upper], hi[upper])
    out[tiny] = _midpoint(lo[tiny], hi[tiny])
    out = _clamp_into_cell(out, lo, hi, grid.left_closed)
    if stats is not None:
        stats.draws += y.size
        stats.fallbacks += int(tiny.sum())
    return float(out[0]) if scalar else out


class CellTable:
    """Cell masses of every distinct observed value under every atom.

    :meth:`refresh` caches the masses and bracketing tail probabilities so
    the imputation step can reuse them for the same atoms.
    """

    def __init__(self, y, grid):
        self.grid = grid
        self.values, self.index = np.unique(np.asarray(y), return_inverse=True)
        self.lo, self.hi = grid.bounds(self.values)
        self.mass = None
        self.tails = None

    def refresh(self, xi, omega, lam):
        self.mass, self.tails = _cell_probs(self.lo[:, None], self.hi[:, None], xi[None, :],
                                            omega[None, :], lam[None, :])
        return self

    def log_mass(self, xi, omega, lam):
        self.refresh(xi, omega, lam)
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(self.mass, _TINY_CELL))

    def for_allocation(self, alloc):
        """Cached cell quantities of each observation under its allocated atom."""
        i = self.index
        return self.mass[i, alloc], tuple(t[i, alloc] for t in self.tails)


def discrete_allocation_logprobs(state, table: CellTable):
    """Unnormalised log allocation probabilities, shape ``(n, H_max)``."""
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights)
    cell = table.log_mass(state.xi, state.omega, state.lam)
    return logw[None, :] + cell[table.index]


def update_allocations_discrete(state, y, grid, rng, table: CellTable | None = None):
    """Allocate each count with probability proportional to weight times cell mass."""
    grid = RoundingGrid.parse(grid)
    table = CellTable(y, grid) if table is None else table
    state.alloc = _draw_categorical(discrete_allocation_logprobs(state, table), rng)
    return state


def discrete_sweep(state, y, y_star, grid, rng, base, kernel, alpha_update="escobar_west",
                   shape_steps=3, table=None, stats=None):
    """Allocations, then imputation under the new allocations, then the continuous steps.

    Allocations are drawn with ``y*`` integrated out, so ``y*`` must be refreshed
    before anything conditions on it again.
    """
    table = CellTable(y, grid) if table is None else table
    update_allocations_discrete(state, y, grid, rng, table)
    s = state.alloc
    y_star[:] = impute_latent(y, (state.xi[s], state.omega[s], state.lam[s]), grid, rng, stats,
                              cells=table.for_allocation(s))
    continuous_steps(state, y_star, rng, base, kernel, alpha_update, shape_steps)
    return state


def check_counts(y, grid: RoundingGrid | None = None):
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("data must be a nonempty 1-d array")
    yf = y.astype(float)
    if not np.all(np.isfinite(yf)) or np.any(yf != np.round(yf)):
        raise ValueError("data must be integers")
    yi = yf.astype(np.int64)
    if np.any(yi < 0):
        raise ValueError("data must be nonnegative")
    if grid is not None and grid.n_cells is not None and np.any(yi >= grid.n_cells):
        raise ValueError(f"value exceeds the last cell index {grid.n_cells - 1}")
    return yi


def initial_latent(y, grid):
    """A point inside each observed cell, used before the first sweep."""
    lo, hi = grid.bounds(y)
    return _clamp_into_cell(_midpoint(lo, hi), lo, hi, grid.left_closed)


def base_from_counts(y, grid, kernel="skew_normal", **overrides):
    return BaseMeasure.from_data(initial_latent(y, grid), kernel, **overrides)


def run_chain_discrete(y, config: ChainConfig | None = None, grid="count", **kwargs) -> PosteriorSummary:
    """Fit the rounded mixture to nonnegative integer data.

    The default base measure is centred on the cell midpoints of the data.
    Imputation fallbacks are reported in ``summary.diagnostics``.
    """
    config = ChainConfig(**kwargs) if config is None else config
    grid = RoundingGrid.parse(grid)
    y = check_counts(y, grid)
    base = config.base if config.base is not None else base_from_counts(y, grid, config.kernel)
    rng = np.random.default_rng(config.seed)
    state = init_state(y.size, base, config.h_max, rng, config.kernel)
    table = CellTable(y, grid)
    y_star = initial_latent(y, grid)
    warm_start(state, y_star, rng, base, config.kernel, config.alpha_update, config.shape_steps,
               config.init_groups)
    stats = ImputationStats()

    def sweep(s):
        discrete_sweep(s, y, y_star, grid, rng, base, config.kernel, config.alpha_update,
                       config.shape_steps, table, stats)

    rec = drive_chain(state, config, base, sweep, y.size)
    return rec.summary(base, rounding=grid,
                       diagnostics={"imputations": stats.draws, "midpoint_fallbacks": stats.fallbacks})


@dataclass
class PmfResult:
    support: np.ndarray
    pmf: np.ndarray
    tail_mass: float
    capped: bool


def posterior_mean_pmf(summary: PosteriorSummary, grid=None, j_max=None, tail=1e-8,
                       max_observed=None, min_weight=1e-9, block=16):
    """Posterior-mean pmf on ``0..J_max``.

    Without ``j_max``, cells are added in blocks until the posterior-mean
    latent survival function at the upper end of the last cell drops below
    ``tail``, or the cap ``10 * max(max_observed, 1)`` is reached.
    ``tail_mass`` is the mean latent mass beyond ``J_max``.
    """
    grid = RoundingGrid.parse(grid if grid is not None else (summary.rounding or "count"))
    comps = _flatten(summary, min_weight)
    if j_max is not None:
        support = np.arange(int(j_max) + 1)
        pmf, tails = _mean_cells(comps, grid, support)
        return PmfResult(support, pmf, float(tails[-1]), False)
    cap = 10 * max(int(max_observed) if max_observed is not None else 1, 1)
    if grid.n_cells is not None:
        cap = min(cap, grid.n_cells - 1)
    parts = []
    j0 = 0
    while True:
        js = np.arange(j0, min(j0 + block, cap + 1))
        pmf, tails = _mean_cells(comps, grid, js)
        parts.append(pmf)
        hit = np.nonzero(tails < tail)[0]
        if hit.size:
            stop = js[hit[0]]
            return PmfResult(np.arange(stop + 1), np.concatenate(parts)[: stop + 1],
                             float(tails[hit[0]]), False)
        j0 = js[-1] + 1
        if j0 > cap:
            pmf = np.concatenate(parts)
            return PmfResult(np.arange(pmf.size), pmf, float(tails[-1]), True)


def _flatten(summary, min_weight):
    w = pruned_weights(summary.weights, min_weight)
    keep = w > 0
    return (w[keep] / summary.n_draws, summary.xi[keep], summary.omega[keep],
            summary.lam[keep])


def _mean_cells(comps, grid, js, chunk=4096):
    """Weighted cell masses at consecutive ``js`` and the mass above each cell."""
    w, xi, om, la = comps
    edges = grid.threshold(np.append(js, js[-1] + 1))
    mass = np.zeros(js.size)
    above = np.zeros(js.size)
    for s in range(0, w.size, chunk):
        sl = slice(s, s + chunk)
        cdf, sf = _cdf_and_sf((edges[:, None] - xi[None, sl]) / om[None, sl], la[None, sl])
        upper = cdf[:-1] > 0.5
        cell = np.where(upper, sf[:-1] - sf[1:], cdf[1:] - cdf[:-1])
        mass += np.maximum(cell, 0.0) @ w[sl]
        above += sf[1:] @ w[sl]
    mass[~grid.valid(js)] = 0.0
    return mass, above


def pmf_trace(summary: PosteriorSummary, js, grid=None):
    """Per-draw pmf at cells ``js``, shape ``(draws, len(js))``."""
    grid = RoundingGrid.parse(grid if grid is not None else (summary.rounding or "count"))
    js = np.asarray(js)
    lo, hi = grid.bounds(js)
    mass, _ = _cell_probs(lo[None, :, None], hi[None, :, None], summary.xi[:, None, :],
                          summary.omega[:, None, :], summary.lam[:, None, :])
    out = np.einsum("djh,dh->dj", mass, summary.weights)
    out[:, ~grid.valid(js)] = 0.0
    return out
