"""Simulation and optimal control of Bragg-diffraction atom interferometers on a momentum ladder."""
from ._backend import BACKEND
from .ladder import LadderParams, OutOfRangeError, StateVector, energy, sample_hamiltonian
from .propagate import NumericalError, PropagationConfig, Trajectory, propagate, step
from .pulses import (ControlPulse, RapParams, blackman_envelope, calibration_sweep, rabi_pulse,
                     rap_pulse, transfer_fidelity, tune_rap)
from .scheme import (FringeResult, PhaseKick, PulseSequence, build_oct_scheme, build_rabi_scheme,
                     build_rap_scheme, contrast, fringe_scan, run_scheme)
from .robustness import (ContrastLandscape, LandscapeConfig, improvement_map, sample_point,
                         scan_landscape)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "LadderParams", "OutOfRangeError", "StateVector", "energy", "sample_hamiltonian",
    "NumericalError", "PropagationConfig", "Trajectory", "propagate", "step",
    "ControlPulse", "RapParams", "blackman_envelope", "calibration_sweep", "rabi_pulse",
    "rap_pulse", "transfer_fidelity", "tune_rap",
    "FringeResult", "PhaseKick", "PulseSequence", "build_oct_scheme", "build_rabi_scheme",
    "build_rap_scheme", "contrast", "fringe_scan", "run_scheme",
    "ContrastLandscape", "LandscapeConfig", "improvement_map", "sample_point", "scan_landscape",
]
