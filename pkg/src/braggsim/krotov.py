"""Ensemble optimal control of the complex pulse amplitude with Krotov's method.

One iteration propagates the co-states backward from the functional's
boundary condition, then sweeps forward, updating the control interval by
interval with the freshly propagated states (first-order update, no
second-order term). The updated pulse is then projected onto the
constraints: amplitude clip, spectral low-pass around the carrier, and a
global rescale if filtering overshot the bound.

Functionals are expressed as infidelities to minimize: ``1 - F`` for the
square-modulus gate and ``0.5 * ||P - P_tgt||^2`` for population targets.
Ensemble members enter with equal weight.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._backend import kernels
from .ladder import LadderParams, StateVector
from .propagate import NumericalError, evolve_states
from .pulses import ControlPulse, rabi_pulse, rap_pulse
from .scheme import oct_rap_params

log = logging.getLogger(__name__)

#: Columns are the images of |0> and |1>.
SPLIT_GATE = np.array([[1, 1j], [1j, 1]]) / math.sqrt(2)
SWAP_GATE = np.array([[0, 1], [1, 0]], dtype=complex)


class KrotovStepError(RuntimeError):
    """The unprojected update increased the functional: the step size is too large."""


# ensemble ------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """Gaussian ensemble of ``(mu, beta)`` points split into batches."""

    batch_size: int = 16
    n_batches: int = 64
    sigma_mu: float = 0.025
    sigma_beta: float = 0.025
    center: tuple = (1.0, 0.0)
    seed: int = 0
    n_points: int | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.n_batches < 1:
            raise ValueError("batch_size and n_batches must be at least 1")
        total = self.batch_size * self.n_batches
        if self.n_points is None:
            object.__setattr__(self, "n_points", total)
        elif self.n_points != total:
            raise ValueError(f"n_points={self.n_points} differs from batch_size*n_batches={total}")
        if self.sigma_mu < 0 or self.sigma_beta < 0:
            raise ValueError("ensemble widths must be non-negative")


@dataclass
class EnsembleBatch:
    mu: np.ndarray
    beta: np.ndarray

    def __len__(self):
        return len(self.mu)


def sample_ensemble(spec: EnsembleSpec) -> list:
    """Seeded draws around ``spec.center``, partitioned into ``spec.n_batches`` batches."""
    z = np.random.default_rng(spec.seed).standard_normal((spec.n_points, 2))
    mu = spec.center[0] + spec.sigma_mu * z[:, 0]
    beta = spec.center[1] + spec.sigma_beta * z[:, 1]
    if np.any(mu <= 0):
        raise ValueError("ensemble produced non-positive amplitude scales")
    k = spec.batch_size
    return [EnsembleBatch(mu[i:i + k], beta[i:i + k]) for i in range(0, spec.n_points, k)]


def _merge(batches) -> EnsembleBatch:
    return EnsembleBatch(np.concatenate([b.mu for b in batches]),
                         np.concatenate([b.beta for b in batches]))


# functionals -----------------------------------------------------------------

def _amplitudes(state):
    return np.asarray(state.amplitudes if isinstance(state, StateVector) else state, dtype=complex)


def evaluate_jpop(state, target) -> float:
    """``1 - 0.5 * ||P(state) - target||^2``; ``target`` is a population vector."""
    target = np.asarray(target, dtype=float)
    if abs(target.sum() - 1) > 1e-9:
        raise ValueError("target populations must sum to 1")
    pops = np.abs(_amplitudes(state)) ** 2
    if pops.shape != target.shape:
        raise ValueError(f"population vector has {pops.size} entries, target {target.size}")
    return float(1 - 0.5 * np.sum((pops - target) ** 2))


def _gate_targets(gate, levels, n_min, size):
    gate = np.asarray(gate, dtype=complex)
    tgt = np.zeros((len(levels), size), dtype=complex)
    for k in range(len(levels)):
        for j, lev in enumerate(levels):
            tgt[k, lev - n_min] = gate[j, k]
    return tgt


def evaluate_gate(finals, gate=SPLIT_GATE, levels=(0, 1), n_min: int = -4) -> float:
    """Square-modulus gate fidelity ``|sum_k <target_k|psi_k>|^2 / len(levels)^2``.

    ``finals[k]`` is the propagated image of ``|levels[k]>``.
    """
    rows = np.array([_amplitudes(f) for f in finals])
    if isinstance(finals[0], StateVector):
        n_min = finals[0].n_min
    tgt = _gate_targets(gate, levels, n_min, rows.shape[1])
    tau = np.sum(np.conj(tgt) * rows)
    return float(abs(tau) ** 2 / len(levels) ** 2)


class PopulationTarget:
    """Steer ``initial`` to the population vector ``target`` (phases ignored)."""

    def __init__(self, initial, target, params: LadderParams | None = None):
        self.params = params or LadderParams()
        N = self.params.size
        if isinstance(initial, (int, np.integer)):
            initial = StateVector.basis(int(initial), self.params).amplitudes
        if isinstance(target, (int, np.integer)):
            target = np.abs(StateVector.basis(int(target), self.params).amplitudes) ** 2
        self.psi0 = np.asarray(initial, dtype=complex).reshape(1, N)
        self.target = np.asarray(target, dtype=float).reshape(N)
        if abs(self.target.sum() - 1) > 1e-9 or np.any(self.target < 0):
            raise ValueError("target must be a population vector summing to 1")

    @classmethod
    def transfer(cls, n_from: int, n_to: int, params: LadderParams | None = None):
        return cls(n_from, n_to, params)

    def initial_states(self) -> np.ndarray:
        return self.psi0

    def infidelity(self, finals) -> np.ndarray:
        """Per-member ``0.5 * ||P - P_tgt||^2`` for finals of shape ``(M, 1, N)``."""
        d = np.abs(finals[:, 0, :]) ** 2 - self.target
        return 0.5 * np.sum(d * d, axis=1)

    def costate(self, finals) -> np.ndarray:
        d = np.abs(finals) ** 2 - self.target
        return -d * finals


class SquareModulusGate:
    """Target map on a subspace, insensitive to a common global phase."""

    def __init__(self, gate, levels=(0, 1), params: LadderParams | None = None):
        self.params = params or LadderParams()
        self.levels = tuple(levels)
        self.gate = np.asarray(gate, dtype=complex)
        if self.gate.shape != (len(levels), len(levels)):
            raise ValueError("gate shape does not match the number of levels")
        if not np.allclose(self.gate.conj().T @ self.gate, np.eye(len(levels)), atol=1e-12):
            raise ValueError("gate must be unitary")
        for lev in self.levels:
            self.params.index(lev)
        self.targets = _gate_targets(self.gate, self.levels, self.params.n_min, self.params.size)

    def initial_states(self) -> np.ndarray:
        return np.array([StateVector.basis(n, self.params).amplitudes for n in self.levels])

    def _tau(self, finals):
        return np.einsum("kn,mkn->m", np.conj(self.targets), finals)

    def infidelity(self, finals) -> np.ndarray:
        return 1 - np.abs(self._tau(finals)) ** 2 / len(self.levels) ** 2

    def costate(self, finals) -> np.ndarray:
        tau = self._tau(finals)
        return tau[:, None, None] * self.targets[None] / len(self.levels) ** 2


def split_target(params=None) -> SquareModulusGate:
    """``|0> -> (|0> + i|1>)/sqrt2``, ``|1> -> (i|0> + |1>)/sqrt2``."""
    return SquareModulusGate(SPLIT_GATE, (0, 1), params)


def swap_target(params=None) -> SquareModulusGate:
    """``|0> <-> |1>`` up to a global phase."""
    return SquareModulusGate(SWAP_GATE, (0, 1), params)


def amplify_target(params=None, n_from: int = 1, n_to: int = 10) -> PopulationTarget:
    return PopulationTarget.transfer(n_from, n_to, params)


def deamplify_target(params=None, n_from: int = 10, n_to: int = 1) -> PopulationTarget:
    return PopulationTarget.transfer(n_from, n_to, params)


def initial_guess(target: str, dt: float = 0.05) -> ControlPulse:
    """Analytic starting pulse for a named target."""
    if target == "split":
        return rabi_pulse("half_pi", 0, correction=1.0, dt=dt)
    if target == "swap":
        return rabi_pulse("pi", 0, correction=1.0, dt=dt)
    if target == "amplify":
        return rap_pulse(oct_rap_params(), dt=dt)
    if target == "deamplify":
        return rap_pulse(oct_rap_params().reversed(), dt=dt)
    raise ValueError(f"unknown target {target!r}")


TARGETS = {
    "split": split_target,
    "swap": swap_target,
    "amplify": amplify_target,
    "deamplify": deamplify_target,
}


# constraints -----------------------------------------------------------------

def flattop(rise: float = 0.1):
    """Update shape on ``s in [0, 1]``: sin^2 ramps of relative length ``rise``."""
    if not 0 < rise <= 0.5:
        raise ValueError("rise must lie in (0, 0.5]")

    def shape(s):
        s = np.asarray(s, dtype=float)
        up = np.sin(0.5 * np.pi * np.clip(s / rise, 0, 1)) ** 2
        down = np.sin(0.5 * np.pi * np.clip((1 - s) / rise, 0, 1)) ** 2
        return np.minimum(up, down)

    return shape


@dataclass
class ControlConstraints:
    omega_max: float = 1.5
    spectral_width: float = 10.0
    lambda_a: float | None = None
    update_shape: object = field(default_factory=flattop)

    def __post_init__(self):
        if not self.omega_max > 0 or not self.spectral_width > 0:
            raise ValueError("omega_max and spectral_width must be positive")
        if self.lambda_a is not None and not self.lambda_a > 0:
            raise ValueError("lambda_a must be positive")
        ends = self.update_shape(np.array([0.0, 1.0]))
        if np.any(np.abs(ends) > 1e-12):
            raise ValueError("update_shape must vanish at both ends")

    def shape_samples(self, pulse: ControlPulse) -> np.ndarray:
        return np.asarray(self.update_shape(pulse.t_mid / pulse.duration), dtype=float)


def spectral_filter(omega, dt: float, width: float) -> np.ndarray:
    """Keep angular frequencies within ``+-width/2`` of the carrier.

    The first bin past the cutoff is halved to soften the edge; everything
    beyond it is removed.
    """
    omega = np.asarray(omega, dtype=complex)
    freqs = 2 * np.pi * np.fft.fftfreq(len(omega), dt)
    step = 2 * np.pi / (len(omega) * dt)
    half = width / 2
    mask = np.where(np.abs(freqs) <= half + 1e-12, 1.0,
                    np.where(np.abs(freqs) <= half + step + 1e-12, 0.5, 0.0))
    return np.fft.ifft(np.fft.fft(omega) * mask)


def spectral_leakage_db(omega, dt: float, width: float) -> float:
    """Power beyond the cutoff plus one bin, relative to the total, in dB."""
    omega = np.asarray(omega, dtype=complex)
    spec = np.abs(np.fft.fft(omega)) ** 2
    freqs = 2 * np.pi * np.fft.fftfreq(len(omega), dt)
    step = 2 * np.pi / (len(omega) * dt)
    out = spec[np.abs(freqs) > width / 2 + step + 1e-12].sum()
    total = spec.sum()
    return float(10 * np.log10(out / total)) if out > 0 else -math.inf


@dataclass
class Projection:
    omega: np.ndarray
    clipped: bool
    rescaled: bool


def project(omega, dt: float, constraints: ControlConstraints) -> Projection:
    """Clip ``|omega|``, low-pass, then rescale globally if the filter overshot."""
    omega = np.asarray(omega, dtype=complex)
    amp = np.abs(omega)
    clipped = bool(np.any(amp > constraints.omega_max))
    if clipped:
        omega = np.where(amp > constraints.omega_max,
                         omega * (constraints.omega_max / np.maximum(amp, 1e-300)), omega)
    omega = spectral_filter(omega, dt, constraints.spectral_width)
    peak = np.abs(omega).max()
    rescaled = bool(peak > constraints.omega_max)
    if rescaled:
        omega = omega * (constraints.omega_max / peak)
    return Projection(omega, clipped, rescaled)


# iteration -------------------------------------------------------------------

def _rows(functional, batch: EnsembleBatch):
    psi0 = functional.initial_states()
    R = psi0.shape[0]
    return np.tile(psi0, (len(batch), 1)), np.repeat(batch.mu, R), np.repeat(batch.beta, R), R


def ensemble_infidelity(pulse: ControlPulse, batch: EnsembleBatch, functional) -> float:
    """Mean functional value over the ensemble members of ``batch``."""
    rows, mr, br, R = _rows(functional, batch)
    out = evolve_states(rows, pulse, functional.params, mr, br)
    return float(np.mean(functional.infidelity(out.reshape(len(batch), R, -1))))


def _costates(pulse, batch, functional, finals):
    M = len(batch)
    chi_T = (functional.costate(finals) / M).reshape(M * finals.shape[1], -1)
    _, mr, br, _ = _rows(functional, batch)
    _, _, chi = evolve_states(chi_T, pulse, functional.params, mr, br, backward=True,
                              store=True, full=True)
    return chi


def _sweep(pulse, batch, functional, chi, shape, inv_lambda):
    rows, mr, br, _ = _rows(functional, batch)
    try:
        return kernels.krotov_sweep(rows, chi, pulse.omega, pulse.phidot, pulse.dt,
                                    functional.params.n_min, mr, br, shape, inv_lambda)
    except FloatingPointError as exc:
        raise NumericalError(str(exc)) from None


def gradient(pulse: ControlPulse, batch: EnsembleBatch, functional) -> np.ndarray:
    """Krotov update direction ``Im <chi|dH/dOmega|psi>`` for the unchanged pulse.

    Its real/imaginary parts are the directions for ``Re``/``Im`` of Omega;
    a small step along it decreases the functional.
    """
    rows, mr, br, R = _rows(functional, batch)
    finals = evolve_states(rows, pulse, functional.params, mr, br).reshape(len(batch), R, -1)
    chi = _costates(pulse, batch, functional, finals)
    return _sweep(pulse, batch, functional, chi, np.ones(pulse.n_steps), 0.0)[2]


def auto_lambda(pulse, batch, functional, constraints: ControlConstraints,
                fraction: float = 0.05) -> float:
    """Step parameter for which the first update peaks at ``fraction * omega_max``."""
    g = gradient(pulse, batch, functional) * constraints.shape_samples(pulse)
    peak = float(np.abs(g).max())
    return peak / (fraction * constraints.omega_max) if peak > 0 else 1.0


@dataclass
class KrotovStep:
    pulse: ControlPulse
    j_old: float
    j_pre_projection: float
    j_new: float
    lambda_a: float
    clipped: bool
    rescaled: bool
    max_abs_omega: float


def krotov_step(pulse: ControlPulse, batch: EnsembleBatch, functional,
                constraints: ControlConstraints, lambda_a: float | None = None,
                j_old: float | None = None, tol: float = 1e-12) -> KrotovStep:
    """One Krotov iteration with diagnostics.

    Raises :class:`KrotovStepError` if the unprojected update raised the
    batch-average functional by more than ``tol``.
    """
    lam = lambda_a if lambda_a is not None else constraints.lambda_a
    if lam is None:
        lam = auto_lambda(pulse, batch, functional, constraints)
    rows, mr, br, R = _rows(functional, batch)
    M = len(batch)
    finals = evolve_states(rows, pulse, functional.params, mr, br).reshape(M, R, -1)
    if j_old is None:
        j_old = float(np.mean(functional.infidelity(finals)))
    chi = _costates(pulse, batch, functional, finals)
    inv = 0.0 if math.isinf(lam) else 1.0 / lam
    new_omega, psi_T, _ = _sweep(pulse, batch, functional, chi,
                                 constraints.shape_samples(pulse), inv)
    j_pre = float(np.mean(functional.infidelity(psi_T.reshape(M, R, -1))))
    if j_pre > j_old + tol:
        raise KrotovStepError(
            f"functional rose from {j_old:.6g} to {j_pre:.6g} with lambda_a={lam:.4g}; "
            "increase lambda_a"
        )
    proj = project(new_omega, pulse.dt, constraints)
    new = ControlPulse(pulse.dt, proj.omega, pulse.phidot.copy(), meta=dict(pulse.meta))
    j_new = ensemble_infidelity(new, batch, functional)
    return KrotovStep(new, j_old, j_pre, j_new, lam, proj.clipped, proj.rescaled,
                      float(np.abs(proj.omega).max()))


def krotov_iterate(pulse: ControlPulse, batch: EnsembleBatch, functional,
                   constraints: ControlConstraints, lambda_a: float | None = None) -> ControlPulse:
    """Updated, constraint-projected pulse after one iteration."""
    return krotov_step(pulse, batch, functional, constraints, lambda_a).pulse


# optimization loop -------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    iters_per_batch: int = 1000
    max_cycles: int = 10
    rel_tol: float = 1e-3
    max_lambda_doublings: int = 40

    def __post_init__(self):
        if self.iters_per_batch < 1 or self.max_cycles < 1:
            raise ValueError("iters_per_batch and max_cycles must be at least 1")


RECORD_COLUMNS = ("iteration", "cycle", "batch", "j_old", "j_pre_projection", "j_new",
                  "lambda_a", "max_abs_omega", "clipped", "rescaled", "wall_time")


@dataclass
class OptimizationRecord:
    iterations: list = field(default_factory=list)
    cycles: list = field(default_factory=list)
    converged: bool = False
    lambda_increases: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.iterations])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            for row in self.iterations:
                w.writerow([f"{row[c]:.17g}" if isinstance(row[c], float) else int(row[c])
                            for c in RECORD_COLUMNS])


def optimize(initial: ControlPulse, spec: EnsembleSpec, functional,
             constraints: ControlConstraints | None = None, schedule: Schedule | None = None,
             callback=None):
    """Cycle Krotov iterations over the ensemble batches until the full-ensemble
    functional improves by less than ``schedule.rel_tol`` (relative) per cycle.

    Returns the best pulse seen at the end of a cycle (or the guess) and the record.
    ``callback(row)`` is called after every iteration.
    """
    constraints = constraints or ControlConstraints()
    schedule = schedule or Schedule()
    batches = sample_ensemble(spec)
    everyone = _merge(batches)
    lam = constraints.lambda_a or auto_lambda(initial, batches[0], functional, constraints)
    record = OptimizationRecord()
    pulse = initial
    j_prev = ensemble_infidelity(pulse, everyone, functional)
    best, best_j = initial, j_prev
    record.cycles.append({"cycle": -1, "j_ensemble": j_prev})
    t0 = time.perf_counter()
    it = 0
    for cycle in range(schedule.max_cycles):
        for b, batch in enumerate(batches):
            j_old = None
            for _ in range(schedule.iters_per_batch):
                for _ in range(schedule.max_lambda_doublings):
                    try:
                        step = krotov_step(pulse, batch, functional, constraints, lam, j_old)
                        break
                    except KrotovStepError as exc:
                        log.debug("%s", exc)
                        lam *= 2
                        record.lambda_increases += 1
                else:
                    raise KrotovStepError("no monotonic step found; the guess may be degenerate")
                pulse, j_old = step.pulse, step.j_new
                row = {"iteration": it, "cycle": cycle, "batch": b, "j_old": step.j_old,
                       "j_pre_projection": step.j_pre_projection, "j_new": step.j_new,
                       "lambda_a": step.lambda_a, "max_abs_omega": step.max_abs_omega,
                       "clipped": step.clipped, "rescaled": step.rescaled,
                       "wall_time": time.perf_counter() - t0}
                record.iterations.append(row)
                if callback is not None:
                    callback(row)
                it += 1
        j = ensemble_infidelity(pulse, everyone, functional)
        record.cycles.append({"cycle": cycle, "j_ensemble": j})
        log.info("cycle %d: ensemble infidelity %.4g", cycle, j)
        if j < best_j:
            best, best_j = pulse, j
        if j_prev - j < schedule.rel_tol * j_prev:
            record.converged = True
            break
        j_prev = j
    meta = dict(best.meta)
    meta.update({"optimized": True, "ensemble_infidelity": best_j, "ensemble": asdict(spec)})
    best = ControlPulse(best.dt, best.omega, best.phidot, meta=meta)
    return best, record
