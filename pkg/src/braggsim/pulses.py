"""Control waveforms: Blackman Rabi pulses, chirped RAP pulses, sampled pulses.

A :class:`ControlPulse` is piecewise constant on a uniform grid. Interval
``j`` covers ``[j dt, (j + 1) dt]`` and holds the value of the generating
function at the interval midpoint, which is what the propagator applies.

Pulse areas follow the Rabi-angle convention of the ladder Hamiltonian: the
coupling matrix element is ``mu * Omega`` so a resonant two-level pair
rotates by ``2 * integral(mu * Omega)``. A pi/2 pulse therefore has
``integral(Omega) = pi/4``, which for a 15/omega_k Blackman gives a peak of
0.1247 omega_k.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .ladder import LadderParams, OutOfRangeError

log = logging.getLogger(__name__)

BLACKMAN = (0.42, 0.5, 0.08)
T_RABI = 15.0
DEFAULT_CORRECTION = 1.01


@dataclass
class ControlPulse:
    """Complex amplitude and frequency term, piecewise constant in time.

    Attributes
    ----------
    dt : float
        Interval length (units of 1/omega_k).
    omega : ndarray of complex, shape (K,)
        Effective amplitude per interval (units of omega_k).
    phidot : ndarray of float, shape (K,)
        Instantaneous laser frequency term per interval.
    meta : dict
        Free-form description, carried into pulse files.
    amplitude_bound : float or None
        Declared bound on ``|omega|``, checked on construction.
    """

    dt: float
    omega: np.ndarray
    phidot: np.ndarray
    meta: dict = field(default_factory=dict)
    amplitude_bound: float | None = None

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=complex)
        self.phidot = np.broadcast_to(np.asarray(self.phidot, dtype=float), self.omega.shape).copy()
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.omega.ndim != 1 or len(self.omega) == 0:
            raise ValueError("omega must be a non-empty 1-d array")
        if self.amplitude_bound is not None:
            peak = np.max(np.abs(self.omega))
            if peak > self.amplitude_bound * (1 + 1e-12):
                raise ValueError(f"|omega| reaches {peak:.6g} above bound {self.amplitude_bound}")

    @property
    def n_steps(self) -> int:
        return len(self.omega)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def t_mid(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def at(self, t: float) -> tuple[complex, float]:
        """Values ``(omega, phidot)`` in force at time ``t``."""
        T = self.duration
        if not -1e-12 <= t <= T + 1e-12:
            raise OutOfRangeError(f"t={t} outside pulse grid [0, {T}]")
        j = min(int(np.floor(t / self.dt)), self.n_steps - 1)
        return complex(self.omega[max(j, 0)]), float(self.phidot[max(j, 0)])

    def area(self) -> float:
        """Time integral of ``|omega|``."""
        return float(np.sum(np.abs(self.omega)) * self.dt)

    def scaled(self, factor: float) -> "ControlPulse":
        return replace(self, omega=self.omega * factor, meta=dict(self.meta), amplitude_bound=None)

    def reversed(self) -> "ControlPulse":
        """Time mirror t -> T - t."""
        return replace(self, omega=self.omega[::-1].copy(), phidot=self.phidot[::-1].copy(),
                       meta=dict(self.meta))

    def phase(self) -> np.ndarray:
        """Laser phase at the grid nodes, integrated from phidot (phase(0) = 0)."""
        return np.concatenate([[0.0], np.cumsum(self.phidot) * self.dt])

    def refined(self, substeps: int) -> "ControlPulse":
        """Split each interval into ``substeps`` equal pieces with the same value."""
        if substeps == 1:
            return self
        return replace(self, dt=self.dt / substeps, omega=np.repeat(self.omega, substeps),
                       phidot=np.repeat(self.phidot, substeps), meta=dict(self.meta))

    # -- pulse files -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dt": float(self.dt),
            "omega_re": self.omega.real.tolist(),
            "omega_im": self.omega.imag.tolist(),
            "phidot": self.phidot.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlPulse":
        try:
            omega = np.asarray(data["omega_re"], float) + 1j * np.asarray(data["omega_im"], float)
            return cls(float(data["dt"]), omega, np.asarray(data["phidot"], float),
                       meta=dict(data.get("meta", {})))
        except KeyError as exc:
            raise ValueError(f"pulse file lacks field {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ControlPulse":
        return cls.from_dict(json.loads(Path(path).read_text()))


def blackman_envelope(T: float, peak: float = 1.0):
    """Exact Blackman window on ``[0, T]`` scaled to maximum ``peak``.

    Returns a vectorized callable; it vanishes at both ends and outside the
    window. The area is ``0.42 * peak * T``.
    """
    if T <= 0:
        raise ValueError("window length must be positive")
    a0, a1, a2 = BLACKMAN

    def envelope(t):
        t = np.asarray(t, dtype=float)
        x = 2 * np.pi * t / T
        val = peak * (a0 - a1 * np.cos(x) + a2 * np.cos(2 * x))
        return np.where((t >= 0) & (t <= T), val, 0.0)

    envelope.area = a0 * peak * T
    return envelope


def resonance_phidot(n0: int) -> float:
    """Laser frequency term that makes levels n0 and n0 + 1 degenerate."""
    return -(2.0 * n0 + 1.0)


def _sampled(T, dt, func, phidot, meta):
    K = int(round(T / dt))
    if K < 1 or abs(K * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"duration {T} is not a multiple of dt={dt}")
    t = (np.arange(K) + 0.5) * dt
    ph = phidot(t) if callable(phidot) else np.full(K, float(phidot))
    return ControlPulse(dt, func(t).astype(complex), ph, meta=meta)


def rabi_pulse(kind: str, n0: int, correction: float = DEFAULT_CORRECTION,
               duration: float = T_RABI, dt: float = 0.01) -> ControlPulse:
    """Blackman pi/2 or pi pulse resonant with the n0 <-> n0+1 transition.

    The two-level amplitude is fixed by the pulse area (pi/4 or pi/2 for the
    integral of Omega) and then multiplied by ``correction``.
    """
    if kind not in ("half_pi", "pi"):
        raise ValueError(f"kind must be 'half_pi' or 'pi', got {kind!r}")
    if correction <= 0:
        raise ValueError("correction must be positive")
    integral = np.pi / 4 if kind == "half_pi" else np.pi / 2
    peak_tls = integral / (BLACKMAN[0] * duration)
    env = blackman_envelope(duration, peak_tls * correction)
    meta = {
        "kind": kind,
        "n0": int(n0),
        "correction": float(correction),
        "peak_tls": float(peak_tls),
        "mean_tls": float(integral / duration),
    }
    return _sampled(duration, dt, env, resonance_phidot(n0), meta)


# -- rapid adiabatic passage ---------------------------------------------------


@dataclass(frozen=True)
class RapParams:
    """Linearly chirped transfer from ``n_start`` to ``n_end``.

    ``alpha`` must point in the transfer direction (positive to climb the
    ladder). ``t_c`` shifts the chirp, ``t_r`` is the half-Blackman
    switch-on/off time and ``peak`` the plateau amplitude.
    """

    alpha: float = 0.1
    t_c: float = 5.927
    t_r: float = 19.252
    peak: float = 0.7
    n_start: int = 2
    n_end: int = 10

    def __post_init__(self):
        if self.alpha == 0:
            raise ValueError("chirp rate must be nonzero")
        if self.n_start == self.n_end:
            raise ValueError("n_start and n_end must differ")
        if np.sign(self.alpha) != np.sign(self.n_end - self.n_start):
            raise ValueError("sign of alpha must match the transfer direction")
        if self.t_r <= 0 or self.peak <= 0:
            raise ValueError("t_r and peak must be positive")

    @property
    def crossing_interval(self) -> float:
        return 2.0 / abs(self.alpha)

    @property
    def n_crossings(self) -> int:
        return abs(self.n_end - self.n_start)

    @property
    def duration(self) -> float:
        """Crossing span plus a margin of t_c before the first and after the last crossing."""
        return self.n_crossings * self.crossing_interval + 2 * self.t_c

    def reversed(self) -> "RapParams":
        return replace(self, alpha=-self.alpha, n_start=self.n_end, n_end=self.n_start)


def rap_envelope(T: float, t_r: float, peak: float):
    """Plateau of height ``peak`` with half-Blackman ramps of length ``t_r``."""
    ramp = blackman_envelope(2 * t_r, 1.0)

    def envelope(t):
        t = np.asarray(t, dtype=float)
        shape = np.where(t < t_r, ramp(t), np.where(t > T - t_r, ramp(T - t), 1.0))
        return peak * np.where((t >= 0) & (t <= T), shape, 0.0)

    return envelope


def rap_phidot(params: RapParams):
    """Chirp ``-2 n_start - alpha (t - t_c)``: the n_start rung is crossed at t_c + 1/|alpha|."""

    def phidot(t):
        return -2.0 * params.n_start - params.alpha * (np.asarray(t, dtype=float) - params.t_c)

    return phidot


def rap_pulse(params: RapParams, T: float | None = None, dt: float = 0.01) -> ControlPulse:
    """Sampled RAP pulse; ``T`` defaults to ``params.duration``."""
    T = params.duration if T is None else T
    if T < 2 * params.t_r:
        raise ValueError(f"duration {T:.6g} shorter than switch-on plus switch-off 2*t_r")
    # shrink the step so the duration is exact
    dt = T / max(math.ceil(T / dt - 1e-9), 1)
    meta = {"kind": "rap", **asdict(params), "duration": T}
    return _sampled(T, dt, rap_envelope(T, params.t_r, params.peak), rap_phidot(params), meta)


def transfer_fidelity(pulse: ControlPulse, n_start: int, n_end: int,
                      params: LadderParams | None = None) -> float:
    """Population reaching ``n_end`` from ``n_start`` under ``pulse``."""
    from .propagate import evolve_states

    params = params or LadderParams()
    psi = np.zeros((1, params.size), complex)
    psi[0, params.index(n_start)] = 1.0
    out = evolve_states(psi, pulse, params)
    return float(abs(out[0, params.index(n_end)]) ** 2)


@dataclass
class TuneResult:
    params: RapParams
    fidelity: float
    converged: bool
    n_evals: int
    history: list = field(default_factory=list)


def tune_rap(initial: RapParams, params: LadderParams | None = None, dt: float = 0.01,
             max_evals: int = 2000, xtol: float = 1e-4) -> TuneResult:
    """Nelder-Mead tuning of ``(t_c, t_r, peak)`` at fixed chirp rate.

    Minimizes the single-transfer infidelity ``1 - P_end``. Coordinates are
    scaled by the initial values so ``xtol`` is relative. ``history`` holds
    the best objective after every simplex update.
    """
    params = params or LadderParams()
    x0 = np.array([initial.t_c, initial.t_r, initial.peak], dtype=float)
    scale = np.where(x0 != 0, np.abs(x0), 1.0)

    def unpack(x):
        t_c, t_r, peak = x * scale
        return replace(initial, t_c=float(t_c), t_r=float(t_r), peak=float(peak))

    def objective(x):
        t_c, t_r, peak = x * scale
        if t_r <= 0 or peak <= 0:
            return 2.0
        trial = unpack(x)
        if trial.duration < 2 * t_r:
            return 1.0 + (2 * t_r - trial.duration)
        pulse = rap_pulse(trial, dt=dt)
        return 1.0 - transfer_fidelity(pulse, trial.n_start, trial.n_end, params)

    history = [objective(np.ones(3))]

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = minimize(objective, np.ones(3), method="Nelder-Mead", callback=record,
                   options={"xatol": xtol, "fatol": np.inf, "maxfev": max_evals})
    best = unpack(res.x)
    fid = 1.0 - float(res.fun)
    if fid < 1.0 - history[0]:
        best, fid = initial, 1.0 - history[0]
    log.info("tune_rap: fidelity %.6f after %d evaluations", fid, res.nfev)
    return TuneResult(best, fid, bool(res.success), int(res.nfev), history)


def calibration_sweep(scales, params: LadderParams | None = None, dt: float = 0.01):
    """Ground-state error of the full pi/2-pi train versus amplitude scale.

    Each scale multiplies every pulse relative to the two-level amplitude.
    Returns ``(table, argmin)`` where ``table[:, 0]`` are the scales and
    ``table[:, 1]`` the errors ``1 - P_0`` at zero phase.
    """
    from .scheme import build_rabi_scheme, run_scheme

    params = params or LadderParams()
    scales = np.asarray(scales, dtype=float)
    errors = np.empty_like(scales)
    for i, s in enumerate(scales):
        seq = build_rabi_scheme(correction=s, dt=dt)
        errors[i] = 1.0 - run_scheme(seq, params, 0.0).state.population(0)
    table = np.column_stack([scales, errors])
    return table, float(scales[np.argmin(errors)])
