"""Full interferometer sequences, phase kicks, fringes and contrast.

A sequence is split, amplified to the maximally separated level, mirrored
and recombined. Free flight is not simulated: the phase it would imprint is
emulated by an instantaneous kick on the separated level. The differential
phase ``phi`` of :func:`run_scheme` is applied at the first kick slot, so the
ideal fringe is ``P_0 = cos^2(phi / 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ladder import LadderParams, StateVector
from .propagate import PropagationConfig, evolve_states
from .pulses import DEFAULT_CORRECTION, ControlPulse, RapParams, rabi_pulse, rap_pulse

N_SEP = 10


@dataclass(frozen=True)
class PhaseKick:
    """Instantaneous ``amplitude[level] *= exp(i phi)``."""

    level: int = N_SEP
    phi: float = 0.0


@dataclass
class PulseSequence:
    segments: list = field(default_factory=list)
    name: str = "custom"

    @property
    def pulses(self) -> list:
        return [s for s in self.segments if isinstance(s, ControlPulse)]

    @property
    def duration(self) -> float:
        return float(sum(p.duration for p in self.pulses))

    @property
    def kick_times(self) -> list:
        t, out = 0.0, []
        for seg in self.segments:
            if isinstance(seg, PhaseKick):
                out.append(t)
            else:
                t += seg.duration
        return out

    @property
    def max_dt(self) -> float:
        return max(p.dt for p in self.pulses)


@dataclass
class FringeResult:
    phis: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    leakage: np.ndarray


@dataclass
class SchemeRun:
    state: StateVector
    guard_population: float
    leaked: bool
    times: np.ndarray | None = None
    populations: np.ndarray | None = None


def _pi(n0, correction, dt):
    return rabi_pulse("pi", n0, correction, dt=dt)


def build_rabi_scheme(correction: float = DEFAULT_CORRECTION, dt: float = 0.01,
                      n_sep: int = N_SEP) -> PulseSequence:
    """Train of pi/2 and pi pulses reaching ``|n_sep>`` (39 pulses, 585/omega_k for n_sep=10)."""
    half = rabi_pulse("half_pi", 0, correction, dt=dt)
    up = [_pi(k, correction, dt) for k in range(1, n_sep)]
    down = [_pi(k, correction, dt) for k in range(n_sep - 1, 0, -1)]
    segs = ([half] + up + [PhaseKick(n_sep)] + down + [_pi(0, correction, dt)] + up
            + [PhaseKick(n_sep)] + down + [half])
    return PulseSequence(segs, "rabi")


def build_rap_scheme(rap: RapParams | None = None, correction: float = DEFAULT_CORRECTION,
                     dt: float = 0.01) -> PulseSequence:
    """pi/2 and pi pulses to reach ``|2>``, RAP to the top, three central pi pulses."""
    rap = rap or RapParams()
    lo = min(rap.n_start, rap.n_end)
    top = max(rap.n_start, rap.n_end)
    up_params = rap if rap.n_end > rap.n_start else rap.reversed()
    up = rap_pulse(up_params, dt=dt)
    down = rap_pulse(up_params.reversed(), dt=dt)
    half = rabi_pulse("half_pi", 0, correction, dt=dt)
    climb = [_pi(k, correction, dt) for k in range(1, lo)]
    descend = climb[::-1]
    swap = descend + [_pi(0, correction, dt)] + climb
    segs = ([half] + climb + [up, PhaseKick(top), down] + swap + [up, PhaseKick(top), down]
            + descend + [half])
    return PulseSequence(segs, "rap")


def oct_rap_params(rap: RapParams | None = None) -> RapParams:
    """RAP settings of the optimized scheme: same chirp and envelope, starting from ``|1>``."""
    rap = rap or RapParams()
    from dataclasses import replace

    return replace(rap, n_start=1, n_end=max(rap.n_start, rap.n_end), alpha=abs(rap.alpha))


def build_oct_scheme(split: ControlPulse, swap: ControlPulse, rap: RapParams | None = None,
                     dt: float = 0.01) -> PulseSequence:
    """Optimized split/swap pulses on ``|0>,|1>`` combined with RAP between ``|1>`` and the top level.

    The split pulse is reused for the recombination.
    """
    if split.dt != swap.dt:
        raise ValueError(f"split and swap grids differ (dt {split.dt} vs {swap.dt})")
    params = oct_rap_params(rap)
    up = rap_pulse(params, dt=dt)
    down = rap_pulse(params.reversed(), dt=dt)
    top = params.n_end
    segs = [split, up, PhaseKick(top), down, swap, up, PhaseKick(top), down, split]
    return PulseSequence(segs, "oct")


def scheme_response(seq: PulseSequence, params: LadderParams, mu=None, beta=None,
                    config: PropagationConfig | None = None):
    """Final states decomposed by their dependence on the first-kick phase.

    Returns ``(fa, fb, guard)`` with rows per ``(mu, beta)`` member such that
    the final state for differential phase ``phi`` is ``fa + exp(i phi) fb``.
    """
    mu = np.atleast_1d(params.mu if mu is None else np.asarray(mu, float))
    beta = np.atleast_1d(params.beta if beta is None else np.asarray(beta, float))
    mu, beta = (np.array(a) for a in np.broadcast_arrays(mu, beta))
    M = mu.shape[0]
    max_dt = config.dt if config is not None else None
    guard = config.guard if config is not None else 2
    rows = np.zeros((M, params.size), complex)
    rows[:, params.index(0)] = 1.0
    row_mu, row_beta = mu, beta
    gmax = np.zeros(M)
    split = False
    for seg in seq.segments:
        if isinstance(seg, PhaseKick):
            k = params.index(seg.level)
            if not split:
                b = np.zeros_like(rows)
                b[:, k] = rows[:, k]
                rows[:, k] = 0.0
                rows = np.vstack([rows, b])
                row_mu, row_beta = np.concatenate([mu, mu]), np.concatenate([beta, beta])
                split = True
            rows[:, k] *= np.exp(1j * seg.phi)
            continue
        rows, g, _ = evolve_states(rows, seg, params, row_mu, row_beta, max_dt=max_dt,
                                   guard=guard, full=True)
        g = g.reshape(-1, M).sum(axis=0) if split else g
        np.maximum(gmax, g, out=gmax)
    if split:
        return rows[:M], rows[M:], gmax
    return rows, np.zeros_like(rows), gmax


def run_scheme(seq: PulseSequence, params: LadderParams, phi: float = 0.0,
               config: PropagationConfig | None = None) -> SchemeRun:
    """Propagate ``|0>`` through ``seq`` with differential phase ``phi`` at the first kick."""
    store = config is not None and config.store_trajectory
    tol = config.leakage_tol if config is not None else PropagationConfig().leakage_tol
    max_dt = config.dt if config is not None else None
    guard = config.guard if config is not None else 2
    psi = np.zeros((1, params.size), complex)
    psi[0, params.index(0)] = 1.0
    first = True
    gmax = 0.0
    t0 = 0.0
    times, pops = [np.zeros(1)], [np.abs(psi) ** 2]
    for seg in seq.segments:
        if isinstance(seg, PhaseKick):
            psi[0, params.index(seg.level)] *= np.exp(1j * (seg.phi + (phi if first else 0.0)))
            first = False
            if store:
                times.append(np.array([t0]))
                pops.append(np.abs(psi) ** 2)
            continue
        psi, g, states = evolve_states(psi, seg, params, max_dt=max_dt, store=store,
                                       guard=guard, full=True)
        gmax = max(gmax, float(g[0]))
        if store:
            n = states.shape[0] - 1
            times.append(t0 + np.arange(1, n + 1) * (seg.duration / n))
            pops.append(np.abs(states[1:, 0, :]) ** 2)
        t0 += seg.duration
    run = SchemeRun(StateVector(psi[0], params.n_min), gmax, gmax > tol)
    if store:
        run.times = np.concatenate(times)
        run.populations = np.vstack(pops)
    return run


def fringe_scan(seq: PulseSequence, params: LadderParams, phis,
                config: PropagationConfig | None = None) -> FringeResult:
    """Final populations of ``|0>`` and ``|1>`` versus differential phase."""
    phis = np.asarray(phis, dtype=float)
    fa, fb, _ = scheme_response(seq, params, config=config)
    i0, i1 = params.index(0), params.index(1)
    kick = np.exp(1j * phis)
    p0 = np.abs(fa[0, i0] + kick * fb[0, i0]) ** 2
    p1 = np.abs(fa[0, i1] + kick * fb[0, i1]) ** 2
    total = np.linalg.norm(fa[0][None, :] + kick[:, None] * fb[0][None, :], axis=1) ** 2
    return FringeResult(phis, p0, p1, total - p0 - p1)


def contrast(p_max, p_min):
    """Fringe contrast ``(p_max - p_min) / (p_max + p_min)``; NaN when both vanish."""
    p_max = np.asarray(p_max, dtype=float)
    p_min = np.asarray(p_min, dtype=float)
    if np.any(p_max < 0) or np.any(p_min < 0):
        raise ValueError("populations must be non-negative")
    den = p_max + p_min
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(den > 0, (p_max - p_min) / np.where(den > 0, den, 1.0), np.nan)
    return float(c) if c.ndim == 0 else c


def fringe_fit(phis, p0):
    """Least-squares fit ``P_0 = A cos^2(phi/2) + B``.

    Returns ``(A, B, r2)``, the coefficient of determination of the fit.
    """
    phis = np.asarray(phis, float)
    p0 = np.asarray(p0, float)
    X = np.column_stack([np.cos(phis / 2) ** 2, np.ones_like(phis)])
    coef, *_ = np.linalg.lstsq(X, p0, rcond=None)
    resid = p0 - X @ coef
    ss_tot = np.sum((p0 - p0.mean()) ** 2)
    return float(coef[0]), float(coef[1]), float(1 - resid @ resid / ss_tot)
