"""Momentum-ladder Hamiltonian in recoil units.

Energies are measured in units of the two-photon recoil frequency and time
in its inverse (hbar = 1). Level ``n`` carries momentum ``p0 + 2 n hbar k``.
The Hamiltonian is tridiagonal::

    H = sum_n E_n |n><n| - mu * sum_n (Omega |n><n+1| + Omega* |n+1><n|)

with ``E_n = n**2 + 2 n beta + n phidot``. The beta**2 term and the common
light shift are dropped; both only add a global phase.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

#: Two-photon recoil frequency of Rb-87 at 780 nm, in rad/s.
OMEGA_K_SI = 2 * np.pi * 15.1e3


class OutOfRangeError(ValueError):
    """A time or level index falls outside the simulated window."""


@dataclass(frozen=True)
class LadderParams:
    """Truncation window and per-atom parameters.

    Parameters
    ----------
    n_min, n_max : int
        Lowest and highest retained momentum level (inclusive).
    mu : float
        Multiplicative error of the effective pulse amplitude.
    beta : float
        Initial momentum relative to the rest frame, in units of 2 hbar k.
    """

    n_min: int = -4
    n_max: int = 14
    mu: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not self.n_min < self.n_max:
            raise ValueError(f"n_min={self.n_min} must be below n_max={self.n_max}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    def index(self, n: int) -> int:
        """Array index of level ``n``."""
        if not self.n_min <= n <= self.n_max:
            raise OutOfRangeError(f"level {n} outside [{self.n_min}, {self.n_max}]")
        return n - self.n_min

    def with_(self, **changes) -> "LadderParams":
        return replace(self, **changes)

    def check_guards(self, physical=(0, 10), guards: int = 2) -> None:
        """Require ``guards`` spare levels on both sides of the physical range."""
        lo, hi = physical
        if lo - self.n_min < guards or self.n_max - hi < guards:
            raise ValueError(
                f"window [{self.n_min}, {self.n_max}] leaves fewer than {guards} "
                f"guard levels around {lo}..{hi}"
            )


@dataclass
class StateVector:
    """Complex amplitudes over the levels ``n_min .. n_min + len - 1``."""

    amplitudes: np.ndarray
    n_min: int = -4

    @classmethod
    def basis(cls, n: int, params: LadderParams) -> "StateVector":
        amp = np.zeros(params.size, dtype=complex)
        amp[params.index(n)] = 1.0
        return cls(amp, params.n_min)

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_min + len(self.amplitudes))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def amplitude(self, n: int) -> complex:
        i = n - self.n_min
        if not 0 <= i < len(self.amplitudes):
            raise OutOfRangeError(f"level {n} not represented")
        return complex(self.amplitudes[i])

    def population(self, n: int) -> float:
        return abs(self.amplitude(n)) ** 2

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.n_min)


@dataclass
class HamiltonianSample:
    """Instantaneous Hamiltonian: level energies and the uniform band coupling.

    ``coupling`` is the element on ``|n><n+1|``; the lower band is its
    conjugate, so the matrix is Hermitian by construction.
    """

    diag: np.ndarray
    coupling: complex
    n_min: int = field(default=-4)

    def matrix(self) -> np.ndarray:
        N = len(self.diag)
        H = np.diag(self.diag).astype(complex)
        H[np.arange(N - 1), np.arange(1, N)] = self.coupling
        H[np.arange(1, N), np.arange(N - 1)] = np.conj(self.coupling)
        return H


def energy(n, beta, phidot):
    """Ladder energy ``n**2 + 2 n beta + n phidot`` (vectorizes over arrays)."""
    return n * n + 2 * n * beta + n * phidot


def sample_hamiltonian(params: LadderParams, pulse, t: float) -> HamiltonianSample:
    """Hamiltonian seen by an atom with ``params`` at time ``t`` of ``pulse``."""
    omega, phidot = pulse.at(t)
    return HamiltonianSample(
        diag=energy(params.levels.astype(float), params.beta, phidot),
        coupling=-params.mu * omega,
        n_min=params.n_min,
    )
