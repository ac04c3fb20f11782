import math

import numpy as np
import pytest

from braggsim.ladder import LadderParams
from braggsim.propagate import PropagationConfig
from braggsim.pulses import ControlPulse, rabi_pulse
from braggsim.scheme import (FringeResult, PhaseKick, PulseSequence, build_oct_scheme,
                             build_rabi_scheme, build_rap_scheme, contrast, fringe_fit, fringe_scan,
                             run_scheme, scheme_response)


@pytest.fixture(scope="module")
def rabi():
    return build_rabi_scheme(dt=0.05)


@pytest.fixture(scope="module")
def rap():
    return build_rap_scheme(dt=0.05)


@pytest.fixture(scope="module")
def oct_analytic():
    # analytic stand-ins for the optimized split and swap pulses
    return build_oct_scheme(rabi_pulse("half_pi", 0, dt=0.05), rabi_pulse("pi", 0, dt=0.05),
                            dt=0.05)


def test_rabi_layout(rabi):
    assert len(rabi.pulses) == 39
    assert rabi.duration == pytest.approx(585.0)
    assert rabi.kick_times == pytest.approx([150.0, 435.0])
    kinds = [p.meta["kind"] for p in rabi.pulses]
    assert kinds[0] == kinds[-1] == "half_pi" and kinds.count("half_pi") == 2
    assert [p.meta["n0"] for p in rabi.pulses[1:10]] == list(range(1, 10))


def test_rap_layout(rap):
    assert rap.duration == pytest.approx(792.416, abs=1e-6)
    assert rap.kick_times == pytest.approx([201.854, 590.562], abs=1e-6)
    kinds = [p.meta["kind"] for p in rap.pulses]
    assert kinds.count("rap") == 4 and kinds.count("pi") == 5


def test_oct_layout(oct_analytic):
    assert oct_analytic.duration == pytest.approx(812.416, abs=1e-6)
    assert oct_analytic.kick_times == pytest.approx([206.854, 605.562], abs=1e-6)


def test_oct_requires_matching_grids():
    with pytest.raises(ValueError):
        build_oct_scheme(rabi_pulse("half_pi", 0, dt=0.05), rabi_pulse("pi", 0, dt=0.01))


@pytest.mark.parametrize("name", ["rabi", "rap"])
def test_ideal_run_returns_to_ground_state(request, name, params):
    seq = request.getfixturevalue(name)
    run = run_scheme(seq, params, 0.0)
    assert run.state.population(0) > 0.99
    assert not run.leaked
    assert abs(run.state.norm() - 1) < 1e-10
    assert run_scheme(seq, params, math.pi).state.population(0) < 0.01


def test_oct_analytic_fringe(oct_analytic, params):
    # the 1 -> 10 chirp also drives the resting |0> arm, so P0(0) sits well below 1,
    # but the dark port stays dark and the contrast survives
    bright = run_scheme(oct_analytic, params, 0.0)
    dark = run_scheme(oct_analytic, params, math.pi).state.population(0)
    assert 0.8 < bright.state.population(0) < 0.95
    assert not bright.leaked
    assert dark < 0.01
    assert contrast(bright.state.population(0), dark) > 0.99


def test_phase_is_periodic(rabi, params):
    a = run_scheme(rabi, params, 0.3).state.amplitudes
    b = run_scheme(rabi, params, 0.3 + 2 * math.pi).state.amplitudes
    assert np.abs(a - b).max() < 1e-12


def test_response_matches_direct_runs(rap, params):
    fa, fb, _ = scheme_response(rap, params)
    for phi in (0.0, 1.1, 2.5):
        direct = run_scheme(rap, params, phi).state.amplitudes
        assert np.allclose(fa[0] + np.exp(1j * phi) * fb[0], direct, atol=1e-12)


def test_response_batches_members(rabi):
    params = LadderParams()
    mu, beta = np.array([0.95, 1.05]), np.array([0.01, -0.03])
    fa, fb, g = scheme_response(rabi, params, mu, beta)
    for k in range(2):
        one = run_scheme(rabi, params.with_(mu=mu[k], beta=beta[k]), 0.7).state.amplitudes
        assert np.allclose(fa[k] + np.exp(0.7j) * fb[k], one, atol=1e-12)


def test_fringe_properties(rabi, params):
    phis = 2 * np.pi * np.arange(32) / 32
    res = fringe_scan(rabi, params, phis)
    assert isinstance(res, FringeResult)
    assert np.allclose(res.p0 + res.p1 + res.leakage, 1, atol=1e-9)
    assert np.max(np.abs(res.p0 - np.cos(phis / 2) ** 2)) < 0.01
    mirrored = fringe_scan(rabi, params, 2 * np.pi - phis)
    # off-resonant couplings break the mirror symmetry only slightly
    assert np.allclose(res.p0, mirrored.p0, atol=1e-4)
    assert np.argmax(res.p0) == 0
    assert contrast(res.p0.max(), res.p0.min()) > 0.99


def test_kick_changes_only_later_populations(rabi, params):
    cfg = PropagationConfig(dt=0.05, store_trajectory=True)
    a = run_scheme(rabi, params, 0.0, cfg)
    b = run_scheme(rabi, params, 1.0, cfg)
    before = a.times <= rabi.kick_times[0]
    assert np.array_equal(a.populations[before], b.populations[before])
    assert not np.allclose(a.populations[-1], b.populations[-1])


def test_kick_is_unitary(params):
    seq = PulseSequence([rabi_pulse("half_pi", 0, dt=0.1), PhaseKick(1, 0.4),
                         rabi_pulse("half_pi", 0, dt=0.1)])
    run = run_scheme(seq, params, 0.9)
    assert abs(run.state.norm() - 1) < 1e-12
    assert seq.kick_times == pytest.approx([15.0])


def test_sequence_without_kicks(params):
    seq = PulseSequence([rabi_pulse("pi", 0, dt=0.1)])
    fa, fb, _ = scheme_response(seq, params)
    assert np.all(fb == 0)
    assert abs(fa[0, params.index(1)]) ** 2 > 0.99


@pytest.mark.parametrize("pmax, pmin, expected", [(1, 0, 1), (0.5, 0.5, 0), (0.934, 0.001, 0.997861)])
def test_contrast_values(pmax, pmin, expected):
    assert contrast(pmax, pmin) == pytest.approx(expected, abs=1e-6)


def test_contrast_undefined_and_invalid():
    assert math.isnan(contrast(0.0, 0.0))
    with pytest.raises(ValueError):
        contrast(-0.1, 0.2)
    assert np.allclose(contrast(np.array([1, 0.5]), np.array([0, 0.5])), [1, 0])


def test_fringe_fit_recovers_parameters():
    phis = np.linspace(0, 2 * np.pi, 40)
    a, b, r2 = fringe_fit(phis, 0.8 * np.cos(phis / 2) ** 2 + 0.05)
    assert (a, b, r2) == pytest.approx((0.8, 0.05, 1.0), abs=1e-12)


def test_segments_accept_loaded_pulses(tmp_path, params):
    p = rabi_pulse("half_pi", 0, dt=0.05)
    p.save(tmp_path / "split.json")
    q = ControlPulse.load(tmp_path / "split.json")
    seq = build_oct_scheme(q, rabi_pulse("pi", 0, dt=0.05), dt=0.05)
    assert run_scheme(seq, params, math.pi).state.population(0) < 0.01
