"""True distributions for the eight benchmark scenarios and the replication harness.

Continuous scenarios 1-4 and count scenarios 5-8::

    1  0.35 N(-2, 1) + 0.5 N(4, 2) + 0.15 N(5, 2.5)
    2  0.65 SN(0, 1, 5) + 0.35 SN(4, 2, 3)
    3  0.25 Ga(2, 1) + 0.75 N(3, 1)
    4  exponential with mean 2
    5  p(2) = p(4) = 0.2, p(3) = 0.6
    6  Conway-Maxwell-Poisson(lambda=3, nu=5)
    7  0.65 Po(2.5) + 0.35 (9 + Po(0.5))
    8  0.6 Po(0.5) + 0.4 R-Po(0.5, 12)

Normal second arguments are standard deviations unless ``s1_scale="variance"``.
R-Po(lambda, gamma) has pmf proportional to ``lambda**(gamma - j) * exp(-lambda)``
on ``0..gamma``; ``s8_reversed="mirrored"`` adds the ``1/(gamma - j)!`` factor so
the component is Po(lambda) reflected about ``gamma``.
"""

from __future__ import annotations

import csv
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .metrics import DensityGrid, default_grid, kl_divergence, l2_distance, occupied_cluster_posterior
from .mixture import ChainConfig, KernelFamily, posterior_mean_density, run_chain
from .rounded import RoundingGrid, posterior_mean_pmf, run_chain_discrete
from .skewnormal import sn_pdf, sn_sample

CONTINUOUS = (1, 2, 3, 4)
DISCRETE = (5, 6, 7, 8)
SCENARIO_NAMES = {
    1: "mix of normals",
    2: "mix of skew-normals",
    3: "mix gamma+normal",
    4: "exponential",
    5: "3-values distribution",
    6: "Com-Poisson",
    7: "mix of Poissons",
    8: "mix of R-Poissons",
}
_PMF_TAIL = 1e-15


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    n: int = 200
    replicates: int = 20
    seed: int = 0
    s1_scale: str = "sd"  # or "variance"
    s3_gamma: str = "rate"  # or "scale"
    s8_reversed: str = "literal"  # or "mirrored"

    def __post_init__(self):
        if self.id not in SCENARIO_NAMES:
            raise ValueError(f"unknown scenario {self.id}; choose 1-8")
        if self.n < 1 or self.replicates < 1:
            raise ValueError("n and replicates must be positive")
        if self.s1_scale not in ("sd", "variance"):
            raise ValueError("s1_scale must be 'sd' or 'variance'")
        if self.s3_gamma not in ("rate", "scale"):
            raise ValueError("s3_gamma must be 'rate' or 'scale'")
        if self.s8_reversed not in ("literal", "mirrored"):
            raise ValueError("s8_reversed must be 'literal' or 'mirrored'")

    @property
    def discrete(self) -> bool:
        return self.id in DISCRETE

    @property
    def name(self) -> str:
        return SCENARIO_NAMES[self.id]


# continuous laws ------------------------------------------------------------

def _s1_components(spec):
    sds = np.array([1.0, 2.0, 2.5])
    if spec.s1_scale == "variance":
        sds = np.sqrt(sds)
    return np.array([0.35, 0.5, 0.15]), np.array([-2.0, 4.0, 5.0]), sds


_S2 = (np.array([0.65, 0.35]), np.array([0.0, 4.0]), np.array([1.0, 2.0]), np.array([5.0, 3.0]))


def _s3_scale(spec):
    # Ga(2, 1): rate 1 and scale 1 are the same law, so s3_gamma only labels the reading
    return 1.0


def _continuous_pdf(spec, x):
    x = np.asarray(x, dtype=float)
    if spec.id == 1:
        w, m, s = _s1_components(spec)
        return sum(wi * stats.norm.pdf(x, mi, si) for wi, mi, si in zip(w, m, s))
    if spec.id == 2:
        w, xi, om, la = _S2
        return sum(w[k] * sn_pdf(x, (xi[k], om[k], la[k])) for k in range(2))
    if spec.id == 3:
        return 0.25 * stats.gamma.pdf(x, 2.0, scale=_s3_scale(spec)) + 0.75 * stats.norm.pdf(x, 3.0, 1.0)
    return stats.expon.pdf(x, scale=2.0)


def _sample_mixture(rng, n, weights, draw):
    labels = rng.choice(len(weights), size=n, p=weights)
    out = np.empty(n)
    for k in range(len(weights)):
        idx = np.nonzero(labels == k)[0]
        out[idx] = draw(k, idx.size)
    return out


def _continuous_sample(spec, rng, n):
    if spec.id == 1:
        w, m, s = _s1_components(spec)
        return _sample_mixture(rng, n, w, lambda k, size: rng.normal(m[k], s[k], size))
    if spec.id == 2:
        w, xi, om, la = _S2
        return _sample_mixture(rng, n, w, lambda k, size: sn_sample((xi[k], om[k], la[k]), rng, size))
    if spec.id == 3:
        scale = _s3_scale(spec)
        return _sample_mixture(rng, n, [0.25, 0.75],
                               lambda k, size: rng.gamma(2.0, scale, size) if k == 0
                               else rng.normal(3.0, 1.0, size))
    return rng.exponential(2.0, n)


# count laws -----------------------------------------------------------------

def com_poisson_pmf(lam, nu, tol=1e-17):
    """Normalised pmf on ``0..J`` with the series truncated once terms fall below ``tol``."""
    logs = []
    j = 0
    while True:
        lt = j * math.log(lam) - nu * math.lgamma(j + 1)
        logs.append(lt)
        if j > lam and lt - max(logs) < math.log(tol):
            break
        j += 1
    logs = np.array(logs)
    p = np.exp(logs - logs.max())
    return p / p.sum()


def reversed_poisson_pmf(lam, gamma, mirrored=False):
    j = np.arange(gamma + 1)
    logp = (gamma - j) * math.log(lam) - lam
    if mirrored:
        logp = logp - gammaln(gamma - j + 1)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def _poisson_support(lam, shift=0):
    hi = int(stats.poisson.isf(_PMF_TAIL, lam)) + 1
    return np.arange(hi + 1) + shift


def _pmf_table(spec):
    """True pmf on ``0..J`` where the mass above ``J`` is below 1e-15."""
    if spec.id == 5:
        return np.array([0.0, 0.0, 0.2, 0.6, 0.2])
    if spec.id == 6:
        return com_poisson_pmf(3.0, 5.0)
    if spec.id == 7:
        top = max(_poisson_support(2.5)[-1], _poisson_support(0.5, 9)[-1])
        j = np.arange(top + 1)
        return 0.65 * stats.poisson.pmf(j, 2.5) + 0.35 * stats.poisson.pmf(j - 9, 0.5)
    top = max(_poisson_support(0.5)[-1], 12)
    j = np.arange(top + 1)
    rp = np.zeros(top + 1)
    rp[:13] = reversed_poisson_pmf(0.5, 12, spec.s8_reversed == "mirrored")
    return 0.6 * stats.poisson.pmf(j, 0.5) + 0.4 * rp


def _discrete_sample(spec, rng, n):
    if spec.id == 7:
        return _sample_mixture(rng, n, [0.65, 0.35],
                               lambda k, size: rng.poisson(2.5, size) if k == 0
                               else 9 + rng.poisson(0.5, size)).astype(np.int64)
    if spec.id == 8:
        rp = reversed_poisson_pmf(0.5, 12, spec.s8_reversed == "mirrored")
        return _sample_mixture(rng, n, [0.6, 0.4],
                               lambda k, size: rng.poisson(0.5, size) if k == 0
                               else rng.choice(13, size=size, p=rp)).astype(np.int64)
    p = _pmf_table(spec)
    return rng.choice(p.size, size=n, p=p).astype(np.int64)


def sample_scenario(spec: ScenarioSpec, rng, n=None):
    """``n`` (default ``spec.n``) iid draws from the scenario's true law."""
    n = spec.n if n is None else n
    return _discrete_sample(spec, rng, n) if spec.discrete else _continuous_sample(spec, rng, n)


def true_density(spec: ScenarioSpec, x):
    """True density at real ``x`` (scenarios 1-4) or pmf at integer ``x`` (5-8)."""
    if not spec.discrete:
        return _continuous_pdf(spec, x)
    x = np.asarray(x)
    table = _pmf_table(spec)
    out = np.zeros(x.shape)
    inside = (x >= 0) & (x < table.size) & (x == np.floor(x))
    out[inside] = table[x[inside].astype(np.int64)]
    if spec.id == 7:
        # beyond the table the exact mixture is still available
        far = (x >= table.size) & (x == np.floor(x))
        out[far] = 0.65 * stats.poisson.pmf(x[far], 2.5) + 0.35 * stats.poisson.pmf(x[far] - 9, 0.5)
    return out


def true_support_max(spec: ScenarioSpec) -> int:
    return _pmf_table(spec).size - 1


# study harness --------------------------------------------------------------

RECORD_FIELDS = ("scenario", "n", "kernel", "replicate", "kl", "l2", "mean_k", "mean_alpha",
                 "status", "message")
KERNELS = (KernelFamily.GAUSSIAN, KernelFamily.SKEW_NORMAL)


def replicate_seeds(root, scenario, n, replicate, kernel):
    """Data and chain seeds for one study cell.

    Both come from ``SeedSequence([root, scenario, n, replicate, stream])``
    with stream 0 for the data (shared by all kernels) and 1 or 2 for the
    Gaussian or skew-normal chain.
    """
    stream = 1 + KERNELS.index(KernelFamily.parse(kernel))
    data_seed = np.random.SeedSequence([root, scenario, n, replicate, 0])
    chain_seed = np.random.SeedSequence([root, scenario, n, replicate, stream])
    return data_seed, int(chain_seed.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def fit_and_score(spec: ScenarioSpec, kernel, replicate, chain: ChainConfig, root_seed,
                  grid_points=2001, rounding="count"):
    """Simulate one data set, fit one kernel and score it against the truth."""
    kernel = KernelFamily.parse(kernel)
    data_seed, chain_seed = replicate_seeds(root_seed, spec.id, spec.n, replicate, kernel)
    y = sample_scenario(spec, np.random.default_rng(data_seed))
    cfg = replace(chain, seed=chain_seed, kernel=kernel)
    if spec.discrete:
        summary = run_chain_discrete(y, cfg, grid=rounding)
        top = max(true_support_max(spec), int(y.max()))
        est = posterior_mean_pmf(summary, j_max=top).pmf
        truth = true_density(spec, np.arange(top + 1))
        kl, l2 = kl_divergence(truth, est), l2_distance(truth, est)
    else:
        summary = run_chain(y, cfg)
        grid = default_grid(y, grid_points)
        f = DensityGrid(grid, true_density(spec, grid))
        g = DensityGrid(grid, posterior_mean_density(summary, grid))
        kl, l2 = kl_divergence(f, g), l2_distance(f, g)
    return {
        "kl": kl,
        "l2": l2,
        "mean_k": occupied_cluster_posterior(summary).mean,
        "mean_alpha": float(summary.alpha.mean()),
    }


def _task(args):
    spec, kernel, rep, chain, root, grid_points, rounding = args
    key = {"scenario": spec.id, "n": spec.n, "kernel": KernelFamily.parse(kernel).value,
           "replicate": rep}
    try:
        res = fit_and_score(spec, kernel, rep, chain, root, grid_points, rounding)
        return {**key, **res, "status": "ok", "message": ""}
    except Exception as exc:  # a failed replicate becomes a missing cell
        last = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return {**key, "kl": math.nan, "l2": math.nan, "mean_k": math.nan, "mean_alpha": math.nan,
                "status": "failed", "message": last}


def _record_key(r):
    return (int(r["scenario"]), int(r["n"]), str(r["kernel"]), int(r["replicate"]))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(path, records):
    rows = sorted(records, key=_record_key)
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in RECORD_FIELDS])
    os.replace(tmp, path)


def read_records(path):
    if not path or not os.path.exists(path):
        return []
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = dict(row)
            for k in ("scenario", "n", "replicate"):
                rec[k] = int(rec[k])
            for k in ("kl", "l2", "mean_k", "mean_alpha"):
                rec[k] = float(rec[k])
            out.append(rec)
    return out


@dataclass
class StudyResult:
    records: list
    computed: int

    def table(self):
        return study_table(self.records)

    def render(self):
        return render_table(self.records)


def run_study(specs, kernels=KERNELS, chain: ChainConfig | None = None, results_path=None, workers=1, grid_points=2001, rounding="count", on_record=None):
    """Fit every (scenario, n, kernel, replicate) cell not already in ``results_path``.

    Every cell is seeded from ``spec.seed`` through :func:`replicate_seeds`.
    Successful records already on file are kept and not recomputed; failed
    ones are retried. The file is rewritten in key order after every record,
    so an interrupted study resumes where it stopped.
    """
    chain = chain or ChainConfig()
    kernels = [KernelFamily.parse(k) for k in kernels]
    done = {_record_key(r): r for r in read_records(results_path) if r["status"] == "ok"}
    todo = []
    for spec in specs:
        for rep in range(spec.replicates):
            for k in kernels:
                if (spec.id, spec.n, k.value, rep) not in done:
                    todo.append((spec, k, rep, chain, spec.seed, grid_points, rounding))
    records = dict(done)

    def accept(rec):
        records[_record_key(rec)] = rec
        if results_path:
            write_records(results_path, records.values())
        if on_record:
            on_record(rec)

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_task, todo):
                accept(rec)
    else:
        for t in todo:
            accept(_task(t))
    return StudyResult(sorted(records.values(), key=_record_key), len(todo))


TABLE_COLUMNS = ("KL", "L2", "E(k|-)", "E(alpha|-)")


def study_table(records):
    """Per-cell means keyed by ``(scenario, n, kernel)``.

    Each entry maps the four table columns to means over successful
    replicates, plus ``ok`` and ``failed`` counts.
    """
    cells = {}
    for r in sorted(records, key=_record_key):
        key = (int(r["scenario"]), int(r["n"]), str(r["kernel"]))
        cells.setdefault(key, []).append(r)
    out = {}
    for key, rows in sorted(cells.items()):
        good = [r for r in rows if r["status"] == "ok"]
        mean = (lambda f: float(np.mean([r[f] for r in good])) if good else math.nan)
        out[key] = {"KL": mean("kl"), "L2": mean("l2"), "E(k|-)": mean("mean_k"),
                    "E(alpha|-)": mean("mean_alpha"), "ok": len(good),
                    "failed": len(rows) - len(good)}
    return out


def render_table(records):
    """Text table with one row per (scenario, n) and a column group per kernel."""
    table = study_table(records)
    kernels = [k.value for k in KERNELS if any(key[2] == k.value for key in table)]
    head = f"{'scenario':<28}{'n':>5}{'kernel':>13}" + "".join(f"{c:>12}" for c in TABLE_COLUMNS)
    lines = [head, "-" * len(head)]
    for (sid, n) in sorted({(s, n) for s, n, _ in table}):
        for k in kernels:
            cell = table.get((sid, n, k))
            if cell is None:
                continue
            label = f"{sid}: {SCENARIO_NAMES[sid]}"
            vals = "".join("          NA" if math.isnan(cell[c]) else f"{cell[c]:>12.3f}"
                           for c in TABLE_COLUMNS)
            note = f"  ({cell['failed']} failed)" if cell["failed"] else ""
            lines.append(f"{label:<28}{n:>5}{k:>13}{vals}{note}")
    return "\n".join(lines) + "\n"


def spec_dict(spec: ScenarioSpec):
    return asdict(spec)
