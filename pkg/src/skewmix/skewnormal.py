"""Skew-normal distribution functions and the samplers built on them.

The cumulative distribution function is evaluated through Owen's T function,
which is computed here by composite Gauss-Legendre quadrature of its defining
integral after the substitution ``x = sinh(w)``:

.. math::
    T(h, a) = \\frac{1}{2\\pi} \\int_0^{\\operatorname{asinh} a}
              \\frac{\\exp(-h^2 \\cosh^2 w / 2)}{\\cosh w} dw .

The same integrand over ``[asinh a, inf)`` gives the complementary piece
``Phi(-|h|)/2 - T(h, a)`` without cancellation, which is what keeps the
skew-normal tails accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

_LOG2 = math.log(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# integrand magnitude is dropped below exp(-_TAIL_EXPONENT) times its peak
_TAIL_EXPONENT = 45.0
_N_PANELS = 8
_N_NODES = 16

_LAMBDA_CLAMP = 1e8


def _composite_rule(n_panels, n_nodes):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    offsets = np.arange(n_panels)[:, None]
    nodes = ((offsets + x[None, :]) / n_panels).ravel()
    weights = np.tile(w / n_panels, n_panels)
    return nodes, weights


_NODES, _WEIGHTS = _composite_rule(_N_PANELS, _N_NODES)


@dataclass(frozen=True)
class SkewNormalParams:
    """Location, scale and shape of one skew-normal kernel."""

    xi: float
    omega: float
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.xi) and np.isfinite(self.lam)):
            raise ValueError("xi and lam must be finite")
        if not (self.omega > 0 and np.isfinite(self.omega)):
            raise ValueError(f"omega must be a positive finite number, got {self.omega}")

    @property
    def delta(self) -> float:
        return float(delta(self.lam))

    @property
    def mean(self) -> float:
        return self.xi + self.omega * self.delta * math.sqrt(2.0 / math.pi)

    @property
    def variance(self) -> float:
        return self.omega**2 * (1.0 - 2.0 * self.delta**2 / math.pi)


def delta(lam):
    """Map shape to ``lam / sqrt(1 + lam**2)``; saturates at ``|lam| = 1e8``."""
    lam = np.clip(lam, -_LAMBDA_CLAMP, _LAMBDA_CLAMP)
    return lam / np.sqrt(1.0 + lam * lam)


def _unpack(p):
    if isinstance(p, SkewNormalParams):
        return p.xi, p.omega, p.lam
    return p


def _sinh_integral(h, lo, hi):
    """Vectorised ``int_lo^hi exp(-h^2 cosh^2(w) / 2) / cosh(w) dw`` for ``0 <= lo <= hi``.

    The integrand decreases from ``lo``; the upper limit is cut where it has
    fallen by ``exp(-_TAIL_EXPONENT)`` relative to its value at ``lo``.
    """
    h, lo, hi = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(lo, dtype=float),
                                    np.asarray(hi, dtype=float))
    h2 = h * h
    sinh_lo = np.sinh(lo)
    with np.errstate(divide="ignore"):
        cut = np.arcsinh(np.sqrt(sinh_lo * sinh_lo + 2.0 * _TAIL_EXPONENT / h2))
    cut = np.minimum(cut, lo + _TAIL_EXPONENT)
    width = np.maximum(np.minimum(hi, cut) - lo, 0.0)
    w = lo[..., None] + width[..., None] * _NODES
    c = np.cosh(w)
    f = np.exp(-0.5 * h2[..., None] * c * c) / c
    return (f @ _WEIGHTS) * width


def owens_t(h, a):
    """Owen's T function ``T(h, a)``.

    Parameters
    ----------
    h, a : array_like
        Broadcastable real arguments.

    Returns
    -------
    ndarray or float
        ``(1/2pi) int_0^a exp(-h^2 (1+x^2)/2) / (1+x^2) dx``.
    """
    h = np.abs(np.asarray(h, dtype=float))
    a = np.asarray(a, dtype=float)
    out = np.sign(a) * _sinh_integral(h, 0.0, np.arcsinh(np.abs(a))) / (2.0 * math.pi)
    return out[()] if out.ndim == 0 else out


def _cdf_and_sf(z, lam):
    """Lower and upper tail probabilities of the standard skew-normal, both accurate."""
    z, lam = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(lam, dtype=float))
    shape = z.shape
    z, lam = np.atleast_1d(z), np.atleast_1d(lam)
    pos_lam = lam >= 0
    pos_z = z >= 0
    I = np.zeros(z.shape)
    need = (lam != 0) & np.isfinite(z)
    if need.any():
        zn, ln = z[need], lam[need]
        at = np.arcsinh(np.abs(np.clip(ln, -_LAMBDA_CLAMP, _LAMBDA_CLAMP)))
        # cases A (lam>=0, z>=0) and D (lam<0, z<0) integrate [0, asinh|lam|];
        # cases B and C integrate the complement [asinh|lam|, inf)
        inner = (ln >= 0) == (zn >= 0)
        I[need] = _sinh_integral(np.abs(zn), np.where(inner, 0.0, at),
                                 np.where(inner, at, np.inf)) / math.pi
    # lam == 0 lands in case A or D with I = 0, i.e. the normal cdf
    zero = lam == 0
    pos_lam = pos_lam & ~zero
    neg_lam = ~pos_lam & ~zero
    phi_z = ndtr(z)
    phi_mz = ndtr(-z)
    cdf = phi_z.copy()
    sf = phi_mz.copy()
    a = pos_lam & pos_z
    cdf[a] -= I[a]
    sf[a] += I[a]
    b = pos_lam & ~pos_z
    cdf[b] = I[b]
    sf[b] = 1.0 - I[b]
    c = neg_lam & pos_z
    sf[c] = I[c]
    cdf[c] = 1.0 - I[c]
    d = neg_lam & ~pos_z
    cdf[d] += I[d]
    sf[d] -= I[d]
    np.clip(cdf, 0.0, 1.0, out=cdf)
    np.clip(sf, 0.0, 1.0, out=sf)
    return cdf.reshape(shape), sf.reshape(shape)


def sn_logpdf(x, xi, omega, lam):
    z = (np.asarray(x, dtype=float) - xi) / omega
    return _LOG2 - np.log(omega) - _LOG_SQRT_2PI - 0.5 * z * z + log_ndtr(lam * z)


def sn_pdf(x, p):
    """Skew-normal density ``(2/omega) phi(z) Phi(lam z)`` with ``z = (x - xi)/omega``."""
    xi, omega, lam = _unpack(p)
    out = np.exp(sn_logpdf(x, xi, omega, lam))
    return out[()] if np.ndim(out) == 0 else out


def sn_cdf(x, p):
    """Skew-normal distribution function ``Phi(z) - 2 T(z, lam)``."""
    xi, omega, lam = _unpack(p)
    cdf, _ = _cdf_and_sf((np.asarray(x, dtype=float) - xi) / omega, lam)
    return cdf[()] if cdf.ndim == 0 else cdf


def sn_sf(x, p):
    """Survival function ``1 - sn_cdf``, computed without cancellation."""
    xi, omega, lam = _unpack(p)
    _, sf = _cdf_and_sf((np.asarray(x, dtype=float) - xi) / omega, lam)
    return sf[()] if sf.ndim == 0 else sf


def sn_cdf_sf(x, xi, omega, lam):
    """Both tails at once for array parameters; used by the rounded sampler."""
    return _cdf_and_sf((np.asarray(x, dtype=float) - xi) / omega, lam)


def _invert_tail(target, upper, xi, omega, lam, lo, hi, tol=1e-13, max_iter=100):
    """Solve ``cdf(x) = target`` (or ``sf(x) = target`` where ``upper``) inside ``[lo, hi]``.

    Newton steps on the log of the tail probability, falling back to
    bisection whenever a step leaves the current bracket.
    """
    target, upper, xi, omega, lam, lo, hi = (
        np.array(v, dtype=float if i != 1 else bool)
        for i, v in enumerate(np.broadcast_arrays(target, upper, xi, omega, lam, lo, hi))
    )
    log_t = np.log(target)
    finite_lo = np.isfinite(lo)
    finite_hi = np.isfinite(hi)
    x = np.where(finite_lo & finite_hi, 0.5 * (lo + hi),
                 np.where(finite_lo, lo + omega, np.where(finite_hi, hi - omega, xi)))
    x = np.clip(x, np.where(finite_lo, lo, xi - 40 * omega), np.where(finite_hi, hi, xi + 40 * omega))
    lo = np.where(finite_lo, lo, np.minimum(xi - 40 * omega, x - 10 * omega))
    hi = np.where(finite_hi, hi, np.maximum(xi + 40 * omega, x + 10 * omega))
    active = np.ones(x.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        xa, om, la, up = x[idx], omega[idx], lam[idx], upper[idx]
        z = (xa - xi[idx]) / om
        cdf, sf = _cdf_and_sf(z, la)
        g = np.where(up, sf, cdf)
        with np.errstate(divide="ignore"):
            resid = np.log(g) - log_t[idx]
        # g is increasing in x for the lower tail and decreasing for the upper tail
        too_high = np.where(up, resid < 0, resid > 0)
        hi[idx] = np.where(too_high, xa, hi[idx])
        lo[idx] = np.where(too_high, lo[idx], xa)
        dens = np.exp(sn_logpdf(xa, xi[idx], om, la))
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(up, -dens, dens) / g
            step = resid / slope
        new = xa - step
        bad = ~np.isfinite(new) | (new <= lo[idx]) | (new >= hi[idx])
        new = np.where(bad, 0.5 * (lo[idx] + hi[idx]), new)
        x[idx] = new
        done = (np.abs(resid) <= tol) | (hi[idx] - lo[idx] <= 1e-15 * np.maximum(1.0, np.abs(new)))
        done |= np.isfinite(resid) & (np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(xa))) & ~bad
        # keep the iterate that produced the small residual
        x[idx] = np.where(done & (np.abs(resid) <= tol), xa, x[idx])
        active[idx[done]] = False
    return x


def sn_quantile(u, p):
    """Quantile function by bracketed root-finding on ``sn_cdf``.

    Raises
    ------
    ValueError
        If any ``u`` lies outside the open interval (0, 1).
    """
    xi, omega, lam = _unpack(p)
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0) | ~(u_arr < 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    upper = u_arr > 0.5
    target = np.where(upper, 1.0 - u_arr, u_arr)
    flat = _invert_tail(target.ravel(), upper.ravel(), xi, omega, lam,
                        xi - 40.0 * omega, xi + 40.0 * omega)
    out = flat.reshape(u_arr.shape)
    return out[()] if out.ndim == 0 else out


def sn_sample(p, rng, size=None):
    """Draw via ``xi + omega (delta |Z| + sqrt(1 - delta^2) V)``."""
    xi, omega, lam = _unpack(p)
    d = delta(lam)
    z = np.abs(rng.standard_normal(size))
    v = rng.standard_normal(size)
    return xi + omega * (d * z + np.sqrt(1.0 - d * d) * v)


def truncated_positive_normal_sample(mean, var, rng, size=None):
    """Draw from ``N(mean, var)`` restricted to ``(0, inf)``.

    Inverse-cdf on the upper tail for moderate truncation points and the
    exponential-proposal rejection sampler of Robert (1995) once the
    truncation point is more than 8 standard deviations above the mean.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(var, dtype=float))
    shape = np.broadcast_shapes(mean.shape, sd.shape) if size is None else size
    mean = np.broadcast_to(mean, shape)
    sd = np.broadcast_to(sd, shape)
    alpha = -mean / sd
    out = np.empty(shape)
    easy = alpha < 8.0
    u = rng.random(shape)
    # upper tail: Phi(-x) = u' * Phi(-alpha) with u' in (0, 1]
    tail = ndtr(-alpha[easy])
    out[easy] = -ndtri((1.0 - u[easy]) * tail)
    if np.any(~easy):
        a = alpha[~easy]
        res = np.empty(a.shape)
        pending = np.arange(a.size)
        while pending.size:
            ap = a[pending]
            rate = 0.5 * (ap + np.sqrt(ap * ap + 4.0))
            x = ap + rng.exponential(1.0, pending.size) / rate
            accept = rng.random(pending.size) <= np.exp(-0.5 * (x - rate) ** 2)
            res[pending[accept]] = x[accept]
            pending = pending[~accept]
        out[~easy] = res
    out = mean + sd * out
    # guard against the rare rounding of a tiny positive draw to zero
    out = np.maximum(out, np.nextafter(0.0, 1.0))
    return out[()] if out.ndim == 0 else out


@dataclass
class SunConditional:
    """Unnormalised target ``N(lam; 0, psi0) * prod_i Phi(lam * z_i)`` for one cluster."""

    psi0: float
    z: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if not self.psi0 > 0:
            raise ValueError("psi0 must be positive")
        self.z = np.asarray(self.z, dtype=float).ravel()

    def logpdf(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = -0.5 * lam * lam / self.psi0 + log_ndtr(np.multiply.outer(lam, self.z)).sum(axis=-1)
        return out[()] if out.ndim == 0 else out


def _neg_hess_log_ndtr(x):
    """``-d^2/dx^2 log Phi(x) = m(x) (x + m(x))`` with ``m`` the inverse Mills ratio."""
    m = np.exp(-0.5 * x * x - _LOG_SQRT_2PI - log_ndtr(x))
    return m * (x + m)


@dataclass
class ShapeStepStats:
    proposed: int = 0
    accepted: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def sun_conditional_sample(c: SunConditional, current: float, rng, scale: float = 2.0,
                           n_steps: int = 3, stats: ShapeStepStats | None = None) -> float:
    """Metropolis-Hastings draw targeting ``c`` starting from ``current``.

    The proposal is normal with sd ``scale / sqrt(I(lam))``, where ``I`` is the
    negative Hessian of the log target at the current point; the
    Hastings ratio corrects for its state dependence. An empty or all-zero
    ``z`` reduces the target to ``N(0, psi0)``, which is then drawn exactly.
    """
    if c.z.size == 0 or not np.any(c.z):
        return float(math.sqrt(c.psi0) * rng.standard_normal())
    lam = float(current)
    logp = float(c.logpdf(lam))
    for _ in range(n_steps):
        sd = scale / math.sqrt(1.0 / c.psi0 + float(np.sum(c.z**2 * _neg_hess_log_ndtr(lam * c.z))))
        prop = lam + sd * rng.standard_normal()
        sd_back = scale / math.sqrt(1.0 / c.psi0 + float(np.sum(c.z**2 * _neg_hess_log_ndtr(prop * c.z))))
        logp_prop = float(c.logpdf(prop))
        log_q_fwd = -math.log(sd) - 0.5 * ((prop - lam) / sd) ** 2
        log_q_back = -math.log(sd_back) - 0.5 * ((lam - prop) / sd_back) ** 2
        accept = math.log(rng.random()) < logp_prop - logp + log_q_back - log_q_fwd
        if stats is not None:
            stats.proposed += 1
            stats.accepted += int(accept)
        if accept:
            lam, logp = prop, logp_prop
    return lam
