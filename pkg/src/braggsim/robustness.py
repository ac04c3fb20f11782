"""Monte-Carlo contrast landscapes over amplitude error and velocity spread.

For an amplitude scale ``mu`` and a spread ``dbeta`` the atoms carry
``beta ~ Normal(0, dbeta)``. The expected fringe maximum and minimum are the
ensemble means of ``P_0`` at ``phi_max`` and ``phi_min``; the contrast
estimate is ``(p_max - p_min) / (p_max + p_min)`` of those means.

Two estimators are available:

``direct``
    Independent paired sampling per grid point: ``n_samples`` draws of beta,
    each propagated once (both phases come from the same run).
``pooled``
    One pool of ``n_samples`` draws per ``mu`` from an equal mixture of the
    Gaussians on the ``dbeta`` grid, reweighted to every grid point with
    balance-heuristic importance weights. Every point still uses the exact
    response, so the estimate is consistent; the pool is shared so a whole
    ``mu`` row costs one point's worth of propagation.

``P_0(beta)`` oscillates on a scale far finer than any affordable table, so
interpolating the response in beta is not an option.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ladder import LadderParams
from .propagate import PropagationConfig
from .scheme import PulseSequence, scheme_response

log = logging.getLogger(__name__)

CSV_COLUMNS = ("mu", "dbeta", "p_max_bar", "p_min_bar", "c_bar", "stderr_c")


def _grid(start, stop, step):
    return tuple(np.round(np.arange(start, stop + step / 2, step), 10).tolist())


@dataclass(frozen=True)
class LandscapeConfig:
    """Grid, sample budget and estimator of a landscape scan."""

    mu_grid: tuple = field(default_factory=lambda: _grid(0.90, 1.10, 0.02))
    dbeta_grid: tuple = field(default_factory=lambda: _grid(0.0, 0.40, 0.02))
    n_samples: int = 2000
    seed: int = 0
    phi_max: float = 0.0
    phi_min: float = math.pi
    method: str = "pooled"
    workers: int = 1
    max_dt: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mu_grid", tuple(float(m) for m in np.atleast_1d(self.mu_grid)))
        object.__setattr__(self, "dbeta_grid", tuple(float(d) for d in np.atleast_1d(self.dbeta_grid)))
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not self.mu_grid or not self.dbeta_grid:
            raise ValueError("grids must be non-empty")
        if min(self.mu_grid) <= 0:
            raise ValueError("mu grid values must be positive")
        if min(self.dbeta_grid) < 0:
            raise ValueError("dbeta grid values must be non-negative")
        if self.method not in ("pooled", "direct"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class PointEstimate:
    p_max_bar: float
    p_min_bar: float
    c_bar: float
    stderr_max: float
    stderr_min: float
    stderr_c: float
    ess: float


def phase_populations(seq: PulseSequence, mu, beta, phis, params: LadderParams | None = None,
                      max_dt: float | None = None, workers: int = 1, chunk: int = 128):
    """``P_0`` at each phase for every ``(mu, beta)`` member, shape ``(members, phases)``."""
    params = params or LadderParams()
    mu, beta = (np.array(a, float) for a in np.broadcast_arrays(np.atleast_1d(mu), np.atleast_1d(beta)))
    kick = np.exp(1j * np.asarray(phis, float))
    cfg = PropagationConfig(dt=max_dt) if max_dt else None
    i0 = params.index(0)

    def run(sl):
        fa, fb, _ = scheme_response(seq, params, mu[sl], beta[sl], config=cfg)
        return np.abs(fa[:, i0, None] + kick[None, :] * fb[:, i0, None]) ** 2

    slices = [slice(s, s + chunk) for s in range(0, len(mu), chunk)]
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, slices))
    else:
        parts = [run(s) for s in slices]
    return np.vstack(parts)


def _estimate(a, b, w=None) -> PointEstimate:
    """Self-normalized weighted means of paired samples with delta-method errors."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    w = np.ones_like(a) if w is None else np.asarray(w, float)
    wn = w / w.sum()
    ma, mb = float(wn @ a), float(wn @ b)
    s = ma + mb
    c = (ma - mb) / s if s > 0 else float("nan")
    # influence of each sample on each estimate
    da, db = wn * (a - ma), wn * (b - mb)
    dc = (2 * mb * da - 2 * ma * db) / s**2 if s > 0 else np.full_like(a, np.nan)
    # sample-variance correction n/(n-1) with the effective sample size
    ess = float(1.0 / np.sum(wn**2))
    corr = ess / (ess - 1) if ess > 1 else float("nan")
    se = lambda d: float(np.sqrt(corr * np.sum(d**2)))  # noqa: E731
    return PointEstimate(ma, mb, c, se(da), se(db), se(dc), ess)


def _draws(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


def _sigma_zero(seq, mu, params, phis, max_dt):
    p = phase_populations(seq, mu, 0.0, phis, params, max_dt)[0]
    return PointEstimate(p[0], p[1], _contrast(p[0], p[1]), 0.0, 0.0, 0.0, math.inf)


def _contrast(a, b):
    return (a - b) / (a + b) if a + b > 0 else float("nan")


def estimate_point(seq: PulseSequence, mu: float, dbeta: float, n: int, seed: int = 0, *,
                   params: LadderParams | None = None, phi_max: float = 0.0,
                   phi_min: float = math.pi, paired: bool = True, max_dt: float | None = None,
                   workers: int = 1) -> PointEstimate:
    """Direct Monte-Carlo estimate at one grid point.

    With ``paired`` both phases share the beta draws (one run serves both);
    otherwise the minimum uses an independent second stream.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if dbeta < 0:
        raise ValueError("dbeta must be non-negative")
    params = params or LadderParams()
    if dbeta == 0:
        return _sigma_zero(seq, mu, params, (phi_max, phi_min), max_dt)
    beta = dbeta * _draws(n, seed)
    if paired:
        P = phase_populations(seq, mu, beta, (phi_max, phi_min), params, max_dt, workers)
        return _estimate(P[:, 0], P[:, 1])
    beta2 = dbeta * np.random.default_rng([seed, 1]).standard_normal(n)
    a = phase_populations(seq, mu, beta, (phi_max,), params, max_dt, workers)[:, 0]
    b = phase_populations(seq, mu, beta2, (phi_min,), params, max_dt, workers)[:, 0]
    est = _estimate(a, b)
    # independent streams: no covariance between the two means
    ma, mb = est.p_max_bar, est.p_min_bar
    s = ma + mb
    est.stderr_c = float(2 / s**2 * math.hypot(mb * est.stderr_max, ma * est.stderr_min))
    return est


def sample_point(seq: PulseSequence, mu: float, dbeta: float, n: int, seed: int = 0, **kwargs):
    """Sample means ``(p_max_bar, p_min_bar)`` over ``n`` paired draws of beta."""
    est = estimate_point(seq, mu, dbeta, n, seed, **kwargs)
    return est.p_max_bar, est.p_min_bar


def _normal_pdf(x, s):
    return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))


def pooled_row(seq: PulseSequence, mu: float, dbetas, n: int, seed: int = 0, *,
               params: LadderParams | None = None, phi_max: float = 0.0,
               phi_min: float = math.pi, max_dt: float | None = None, workers: int = 1):
    """Estimates for every spread in ``dbetas`` from one shared mixture pool."""
    params = params or LadderParams()
    dbetas = np.asarray(dbetas, float)
    widths = np.unique(dbetas[dbetas > 0])
    out = [None] * len(dbetas)
    if len(widths):
        z = _draws(n, seed)
        comp = np.arange(n) % len(widths)
        beta = widths[comp] * z
        frac = np.bincount(comp, minlength=len(widths)) / n
        mix = sum(f * _normal_pdf(beta, s) for f, s in zip(frac, widths))
        P = phase_populations(seq, mu, beta, (phi_max, phi_min), params, max_dt, workers)
    for k, d in enumerate(dbetas):
        if d == 0:
            out[k] = _sigma_zero(seq, mu, params, (phi_max, phi_min), max_dt)
        else:
            out[k] = _estimate(P[:, 0], P[:, 1], _normal_pdf(beta, d) / mix)
    return out


@dataclass
class ContrastLandscape:
    """Estimates on a ``(mu, dbeta)`` grid; arrays have shape ``(len(mu), len(dbeta))``."""

    mu: np.ndarray
    dbeta: np.ndarray
    p_max_bar: np.ndarray
    p_min_bar: np.ndarray
    c_bar: np.ndarray
    stderr_c: np.ndarray
    ess: np.ndarray | None = None
    valid: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (len(self.mu), len(self.dbeta))
        if self.valid is None:
            self.valid = np.isfinite(self.c_bar)
        if self.ess is None:
            self.ess = np.full(shape, np.nan)

    def index(self, mu: float, dbeta: float):
        i = np.flatnonzero(np.isclose(self.mu, mu, atol=1e-9))
        j = np.flatnonzero(np.isclose(self.dbeta, dbeta, atol=1e-9))
        if not len(i) or not len(j):
            raise KeyError(f"({mu}, {dbeta}) is not a grid point")
        return int(i[0]), int(j[0])

    def at(self, mu: float, dbeta: float) -> float:
        return float(self.c_bar[self.index(mu, dbeta)])

    def row(self, mu: float) -> np.ndarray:
        return self.c_bar[self.index(mu, self.dbeta[0])[0]]

    def crossing(self, mu: float, level: float = 0.5) -> float:
        """First spread where the contrast drops through ``level`` (linear interpolation)."""
        c = self.row(mu)
        for j in range(1, len(c)):
            if c[j - 1] >= level > c[j]:
                return float(self.dbeta[j - 1] + (c[j - 1] - level) / (c[j - 1] - c[j])
                             * (self.dbeta[j] - self.dbeta[j - 1]))
        return float("nan")

    def records(self):
        for i, m in enumerate(self.mu):
            for j, d in enumerate(self.dbeta):
                yield (m, d, self.p_max_bar[i, j], self.p_min_bar[i, j], self.c_bar[i, j],
                       self.stderr_c[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for rec in self.records():
                w.writerow([f"{v:.17g}" for v in rec])

    @classmethod
    def from_csv(cls, path) -> "ContrastLandscape":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            rows = [{k: float(r[k]) for k in CSV_COLUMNS} for r in reader]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        mu = np.unique([r["mu"] for r in rows])
        db = np.unique([r["dbeta"] for r in rows])
        if len(rows) != len(mu) * len(db):
            raise ValueError(f"{path}: rows do not form a complete grid")
        arrs = {k: np.full((len(mu), len(db)), np.nan) for k in CSV_COLUMNS[2:]}
        for r in rows:
            i, j = np.searchsorted(mu, r["mu"]), np.searchsorted(db, r["dbeta"])
            for k in arrs:
                arrs[k][i, j] = r[k]
        return cls(mu, db, **arrs)


def scan_landscape(seq: PulseSequence, config: LandscapeConfig | None = None,
                   params: LadderParams | None = None) -> ContrastLandscape:
    """Contrast estimates over the configured grid.

    A grid row whose propagation fails is logged and left as NaN with
    ``valid`` false instead of aborting the scan.
    """
    config = config or LandscapeConfig()
    params = params or LadderParams()
    mu = np.array(config.mu_grid)
    db = np.array(config.dbeta_grid)
    shape = (len(mu), len(db))
    arr = {k: np.full(shape, np.nan) for k in ("pmax", "pmin", "c", "se", "ess")}
    kw = dict(params=params, phi_max=config.phi_max, phi_min=config.phi_min,
              max_dt=config.max_dt, workers=config.workers)
    for i, m in enumerate(mu):
        try:
            if config.method == "pooled":
                row = pooled_row(seq, m, db, config.n_samples, config.seed, **kw)
            else:
                row = [estimate_point(seq, m, d, config.n_samples, config.seed, **kw) for d in db]
        except (FloatingPointError, ValueError) as exc:
            log.warning("scan row mu=%g failed: %s", m, exc)
            continue
        for j, est in enumerate(row):
            arr["pmax"][i, j], arr["pmin"][i, j] = est.p_max_bar, est.p_min_bar
            arr["c"][i, j], arr["se"][i, j], arr["ess"][i, j] = est.c_bar, est.stderr_c, est.ess
        log.info("scan row mu=%g done", m)
    return ContrastLandscape(mu, db, arr["pmax"], arr["pmin"], arr["c"], arr["se"], arr["ess"],
                             meta={"scheme": seq.name, "method": config.method,
                                   "n_samples": config.n_samples, "seed": config.seed})


@dataclass
class ImprovementMap:
    mu: np.ndarray
    dbeta: np.ndarray
    delta: np.ndarray
    stderr: np.ndarray

    @property
    def max_gain(self) -> float:
        return float(np.nanmax(self.delta))

    @property
    def max_loss(self) -> float:
        """Largest contrast loss as a non-negative number (0 when nothing is lost)."""
        return float(max(0.0, -np.nanmin(self.delta)))

    @property
    def argmax(self):
        i, j = np.unravel_index(np.nanargmax(self.delta), self.delta.shape)
        return float(self.mu[i]), float(self.dbeta[j])

    def losses_within(self, bound: float, n_sigma: float = 2.0) -> bool:
        """Every loss satisfies ``|delta| < bound + n_sigma * stderr``."""
        loss = np.where(self.delta < 0, -self.delta, 0.0)
        ok = loss < bound + n_sigma * np.nan_to_num(self.stderr)
        return bool(np.all(ok | ~np.isfinite(self.delta)))


def improvement_map(a: ContrastLandscape, b: ContrastLandscape) -> ImprovementMap:
    """Contrast gain ``b - a`` per grid point; both landscapes must share the grid."""
    if a.c_bar.shape != b.c_bar.shape or not (
        np.allclose(a.mu, b.mu, atol=1e-9) and np.allclose(a.dbeta, b.dbeta, atol=1e-9)
    ):
        raise ValueError("landscapes are defined on different grids")
    delta = b.c_bar - a.c_bar
    return ImprovementMap(np.asarray(a.mu), np.asarray(a.dbeta), delta,
                          np.hypot(a.stderr_c, b.stderr_c))
