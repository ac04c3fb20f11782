"""Norm-preserving propagation on the momentum ladder.

Controls are piecewise constant, so each interval is an exact exponential of
a tridiagonal Hamiltonian. The batched work is delegated to the kernel
backend (compiled Chebyshev stepper, or the NumPy eigendecomposition twin).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from ._backend import kernels
from .ladder import OMEGA_K_SI, HamiltonianSample, LadderParams, StateVector

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Propagation produced non-finite amplitudes."""


@dataclass(frozen=True)
class PropagationConfig:
    """Integration settings.

    ``dt`` is the longest allowed step; coarser pulse grids are subdivided.
    ``leakage_tol`` bounds the population of the ``guard`` outermost levels
    on each side of the window at any time.
    """

    dt: float = 0.01
    leakage_tol: float = 1e-3
    store_trajectory: bool = False
    guard: int = 2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.leakage_tol < 1:
            raise ValueError("leakage_tol must lie in (0, 1)")


@dataclass
class Trajectory:
    times: np.ndarray
    populations: np.ndarray | None
    final_state: StateVector
    guard_population: float
    leaked: bool

    @property
    def levels(self) -> np.ndarray:
        return self.final_state.levels

    def to_csv(self, path, si: bool = False) -> None:
        """Write ``t, P_{n_min}, ..., P_{n_max}`` (plus ``t_seconds`` with ``si``)."""
        if self.populations is None:
            raise ValueError("trajectory was not stored; set store_trajectory=True")
        write_population_csv(path, self.times, self.populations, self.levels, si=si)


def write_population_csv(path, times, populations, levels, si=False):
    header = ["t"] + [f"P_{n}" for n in levels]
    if si:
        header.append("t_seconds")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(times, populations):
            vals = [t, *row] + ([t / OMEGA_K_SI] if si else [])
            w.writerow([f"{v:.17g}" for v in vals])


def step(state: StateVector, h: HamiltonianSample, dt: float) -> StateVector:
    """Apply ``exp(-i H dt)`` exactly via the tridiagonal eigendecomposition."""
    amp = np.asarray(state.amplitudes, dtype=complex)
    if not np.all(np.isfinite(amp)):
        raise NumericalError("non-finite amplitudes in input state")
    c = complex(h.coupling)
    levels = np.arange(h.n_min, h.n_min + len(h.diag))
    gauge = np.exp(-1j * levels * np.angle(c))
    w, V = eigh_tridiagonal(np.asarray(h.diag, float), np.full(len(h.diag) - 1, abs(c)))
    x = V.T @ (gauge.conj() * amp)
    out = gauge * (V @ (np.exp(-1j * w * dt) * x))
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite amplitudes after step")
    return StateVector(out, state.n_min)


def _substeps(pulse, max_dt):
    return max(1, math.ceil(pulse.dt / max_dt - 1e-9))


def evolve_states(psi, pulse, params: LadderParams, mu=None, beta=None, *,
                  backward=False, store=False, max_dt=None, guard=2, full=False):
    """Propagate a batch of row vectors through ``pulse``.

    ``mu``/``beta`` give per-row parameters (default: those of ``params``).
    Returns the final rows, or ``(rows, guard_max, states)`` with ``full``.
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=complex))
    M = psi.shape[0]
    mu = np.full(M, params.mu) if mu is None else np.array(np.broadcast_to(mu, (M,)), float)
    beta = np.full(M, params.beta) if beta is None else np.array(np.broadcast_to(beta, (M,)), float)
    if max_dt is not None:
        pulse = pulse.refined(_substeps(pulse, max_dt))
    try:
        out, gmax, states = kernels.evolve(psi, pulse.omega, pulse.phidot, pulse.dt, params.n_min,
                                           mu, beta, backward, store, guard)
    except FloatingPointError as exc:
        raise NumericalError(str(exc)) from None
    return (out, gmax, states) if full else out


def propagate(state: StateVector, params: LadderParams, pulse,
              config: PropagationConfig | None = None) -> Trajectory:
    """Propagate ``state`` through ``pulse`` with midpoint-sampled controls.

    Leakage into the guard levels beyond ``config.leakage_tol`` is flagged in
    the returned trajectory rather than raised.
    """
    config = config or PropagationConfig()
    if abs(state.norm() - 1) > 1e-8:
        raise ValueError(f"state is not normalized (norm={state.norm():.12g})")
    sub = _substeps(pulse, config.dt)
    fine = pulse.refined(sub)
    out, gmax, states = evolve_states(state.amplitudes[None, :], fine, params,
                                      store=config.store_trajectory, guard=config.guard, full=True)
    leaked = bool(gmax[0] > config.leakage_tol)
    if leaked:
        log.debug("guard population %.3g exceeds tolerance %.3g", gmax[0], config.leakage_tol)
    pops = np.abs(states[:, 0, :]) ** 2 if states is not None else None
    return Trajectory(
        times=fine.t_grid,
        populations=pops,
        final_state=StateVector(out[0], params.n_min),
        guard_population=float(gmax[0]),
        leaked=leaked,
    )
