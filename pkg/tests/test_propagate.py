import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from braggsim._backend import get_kernels
from braggsim.ladder import LadderParams, StateVector, sample_hamiltonian
from braggsim.propagate import (NumericalError, PropagationConfig, evolve_states, propagate,
                                step)
from braggsim.pulses import ControlPulse, RapParams, rabi_pulse, rap_pulse

from conftest import two_level


def random_pulse(rng, K=40, dt=0.05, scale=0.8):
    omega = scale * (rng.normal(size=K) + 1j * rng.normal(size=K))
    return ControlPulse(dt, omega, rng.uniform(-20, 5, K))


def dense_reference(psi, pulse, params):
    """Product of dense matrix exponentials, interval by interval."""
    for t in pulse.t_mid:
        psi = expm(-1j * sample_hamiltonian(params, pulse, t).matrix() * pulse.dt) @ psi
    return psi


def test_single_step_matches_matrix_exponential(params, rng):
    pulse = random_pulse(rng, K=1)
    h = sample_hamiltonian(params.with_(beta=0.13, mu=1.07), pulse, 0.0)
    psi = rng.normal(size=params.size) + 1j * rng.normal(size=params.size)
    psi /= np.linalg.norm(psi)
    out = step(StateVector(psi, params.n_min), h, 0.37)
    assert np.allclose(out.amplitudes, expm(-1j * h.matrix() * 0.37) @ psi, atol=1e-12)


@pytest.mark.parametrize("backend", ["cython", "python"])
def test_evolve_matches_dense_reference(params, rng, backend):
    kern = get_kernels(backend)
    pulse = random_pulse(rng)
    p = params.with_(mu=0.93, beta=-0.21)
    psi = np.zeros(p.size, complex)
    psi[p.index(0)] = 1
    ref = dense_reference(psi, pulse, p)
    out, _, _ = kern.evolve(psi[None], pulse.omega, pulse.phidot, pulse.dt, p.n_min,
                            np.array([p.mu]), np.array([p.beta]))
    assert np.allclose(out[0], ref, atol=1e-11)


def test_backends_agree_on_batches(params, rng):
    pulse = random_pulse(rng, K=60)
    psi = rng.normal(size=(5, params.size)) + 1j * rng.normal(size=(5, params.size))
    mu, beta = rng.uniform(0.9, 1.1, 5), rng.normal(0, 0.2, 5)
    args = (psi, pulse.omega, pulse.phidot, pulse.dt, params.n_min, mu, beta)
    for backward in (False, True):
        a = get_kernels("cython").evolve(*args, backward, True)
        b = get_kernels("python").evolve(*args, backward, True)
        assert np.allclose(a[0], b[0], atol=1e-11)
        assert np.allclose(a[1], b[1], atol=1e-11)
        assert np.allclose(a[2], b[2], atol=1e-11)


def test_backends_agree_on_krotov_sweep(params, rng):
    pulse = random_pulse(rng, K=30)
    psi = rng.normal(size=(3, params.size)) + 1j * rng.normal(size=(3, params.size))
    chi = rng.normal(size=(31, 3, params.size)) + 1j * rng.normal(size=(31, 3, params.size))
    mu, beta = np.ones(3), np.zeros(3)
    shape = np.linspace(0, 1, 30)
    args = (psi, chi, pulse.omega, pulse.phidot, pulse.dt, params.n_min, mu, beta, shape, 0.3)
    for x, y in zip(get_kernels("cython").krotov_sweep(*args), get_kernels("python").krotov_sweep(*args)):
        assert np.allclose(x, y, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mu=st.floats(0.5, 1.5), beta=st.floats(-1, 1))
def test_norm_conserved(seed, mu, beta):
    rng = np.random.default_rng(seed)
    p = LadderParams(mu=mu, beta=beta)
    pulse = random_pulse(rng, K=100, dt=0.1, scale=1.5)
    psi = rng.normal(size=p.size) + 1j * rng.normal(size=p.size)
    psi /= np.linalg.norm(psi)
    out = evolve_states(psi, pulse, p)
    assert abs(np.linalg.norm(out) - 1) < 1e-10


def test_backward_inverts_forward(params, rng):
    pulse = random_pulse(rng)
    psi = StateVector.basis(2, params).amplitudes
    fwd = evolve_states(psi, pulse, params)
    back = evolve_states(fwd, pulse, params, backward=True)
    assert np.allclose(back[0], psi, atol=1e-12)


@pytest.mark.parametrize("kind, expected", [("half_pi", 0.5), ("pi", 1.0)])
def test_two_level_rabi_oracle(kind, expected):
    # resonant two-level pair: P_1 = sin^2(mu * integral(Omega)) for any envelope
    p = two_level()
    for mu in (1.0, 0.9, 1.13):
        pulse = rabi_pulse(kind, 0, correction=1.0)
        tr = propagate(StateVector.basis(0, p), p.with_(mu=mu), pulse)
        area = np.sum(pulse.omega.real) * pulse.dt
        assert abs(tr.final_state.population(1) - math.sin(mu * area) ** 2) < 1e-8
    assert math.sin(area) ** 2 == pytest.approx(expected, abs=1e-12)


def test_half_pi_splits_on_full_ladder(params):
    tr = propagate(StateVector.basis(0, params), params, rabi_pulse("half_pi", 0, correction=1.0))
    s = tr.final_state
    assert s.population(0) == pytest.approx(0.5, abs=0.01)
    assert s.population(1) == pytest.approx(0.5, abs=0.01)


def test_trajectory_and_substeps(params):
    pulse = rabi_pulse("pi", 0, dt=0.05)
    tr = propagate(StateVector.basis(0, params), params, pulse,
                   PropagationConfig(dt=0.01, store_trajectory=True))
    assert tr.populations.shape == (pulse.n_steps * 5 + 1, params.size)
    assert tr.times[-1] == pytest.approx(pulse.duration)
    assert np.allclose(tr.populations.sum(axis=1), 1, atol=1e-12)
    coarse = propagate(StateVector.basis(0, params), params, pulse, PropagationConfig(dt=0.05))
    assert np.allclose(coarse.final_state.amplitudes, tr.final_state.amplitudes, atol=1e-12)


def test_leakage_flag():
    p = LadderParams(n_min=-1, n_max=3)
    pulse = ControlPulse(0.1, np.full(200, 1.5 + 0j), np.zeros(200))
    tr = propagate(StateVector.basis(0, p), p, pulse, PropagationConfig(guard=1))
    assert tr.leaked and tr.guard_population > 1e-3


def test_non_finite_input_raises(params):
    psi = np.full(params.size, np.nan, complex)
    with pytest.raises(NumericalError):
        evolve_states(psi, rabi_pulse("pi", 0, dt=0.1), params)


def test_unnormalized_state_rejected(params):
    with pytest.raises(ValueError):
        propagate(StateVector(np.ones(params.size, complex), params.n_min), params,
                  rabi_pulse("pi", 0))


def test_config_validation():
    with pytest.raises(ValueError):
        PropagationConfig(dt=0)
    with pytest.raises(ValueError):
        PropagationConfig(leakage_tol=1.5)


def test_trajectory_csv(tmp_path, params):
    tr = propagate(StateVector.basis(0, params), params, rabi_pulse("pi", 0, dt=0.5),
                   PropagationConfig(dt=0.5, store_trajectory=True))
    path = tmp_path / "traj.csv"
    tr.to_csv(path, si=True)
    rows = list(csv.reader(open(path)))
    assert rows[0][:2] == ["t", "P_-4"] and rows[0][-1] == "t_seconds"
    assert len(rows) == len(tr.times) + 1
    assert float(rows[-1][0]) == pytest.approx(15.0)


@pytest.mark.parametrize("make, start", [
    (lambda dt: rabi_pulse("pi", 0, dt=dt), 0),
    (lambda dt: rap_pulse(RapParams(), dt=dt), 2),
])
def test_step_halving_converged_at_default_dt(params, make, start):
    psi = StateVector.basis(start, params).amplitudes
    coarse = np.abs(evolve_states(psi, make(0.01), params)) ** 2
    fine = np.abs(evolve_states(psi, make(0.005), params)) ** 2
    assert np.abs(coarse - fine).max() < 1e-8
