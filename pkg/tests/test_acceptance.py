"""Exit criteria at desk scale.

Every check records one PASS/FAIL line, listed in the "acceptance criteria"
section at the end of the pytest output. The landscapes and optimized pulses
take over an hour on one core; set ``BRAGGSIM_ACCEPTANCE_CACHE`` to a
directory to keep them between runs.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import record_criterion

from braggsim.krotov import (TARGETS, ControlConstraints, EnsembleSpec, Schedule,
                             _merge, ensemble_infidelity, initial_guess, optimize,
                             sample_ensemble, spectral_leakage_db, split_target)
from braggsim.ladder import LadderParams
from braggsim.pulses import ControlPulse, RapParams, calibration_sweep, rap_pulse, transfer_fidelity
from braggsim.robustness import ContrastLandscape, LandscapeConfig, improvement_map, scan_landscape
from braggsim.scheme import (build_oct_scheme, build_rabi_scheme, build_rap_scheme, contrast,
                             fringe_fit, fringe_scan, run_scheme)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

PARAMS = LadderParams()
FRINGE_DT = 0.05
SCAN_DT = 0.1
PHASES = 2 * np.pi * np.arange(32) / 32
CACHE = os.environ.get("BRAGGSIM_ACCEPTANCE_CACHE")


def cached(name, compute, save, load):
    if CACHE:
        path = Path(CACHE) / name
        if path.exists():
            return load(path)
    value = compute()
    if CACHE:
        Path(CACHE).mkdir(parents=True, exist_ok=True)
        save(value, Path(CACHE) / name)
    return value


def check(name, ok, detail):
    record_criterion(name, bool(ok), detail)
    assert ok, f"{name}: {detail}"


# shared artifacts


@pytest.fixture(scope="module")
def optimized_pulses():
    spec = EnsembleSpec(batch_size=8, n_batches=8, seed=1)
    schedule = Schedule(iters_per_batch=300, max_cycles=3)

    def run(target):
        def compute():
            best, _ = optimize(initial_guess(target, dt=0.05), spec, TARGETS[target](PARAMS),
                               ControlConstraints(), schedule)
            return best
        return cached(f"{target}.json", compute, lambda p, path: p.save(path), ControlPulse.load)

    return {"split": run("split"), "swap": run("swap")}


def _landscape(name, seq):
    return cached(f"landscape_{name}.csv", lambda: scan_landscape(seq, LandscapeConfig()),
                  lambda land, path: land.to_csv(path), ContrastLandscape.from_csv)


@pytest.fixture(scope="module")
def rabi_landscape():
    return _landscape("rabi", build_rabi_scheme(dt=SCAN_DT))


@pytest.fixture(scope="module")
def rap_landscape():
    return _landscape("rap", build_rap_scheme(dt=SCAN_DT))


@pytest.fixture(scope="module")
def oct_landscape(optimized_pulses):
    seq = build_oct_scheme(optimized_pulses["split"], optimized_pulses["swap"], dt=SCAN_DT)
    return _landscape("oct", seq)


# calibration and transfer


def test_calibration_minimum():
    start = time.perf_counter()
    table, argmin = calibration_sweep(np.arange(0.97, 1.05 + 1e-9, 0.0025), dt=0.05)
    elapsed = time.perf_counter() - start
    check("calibration minimum at 1.01 +- 0.005", abs(argmin - 1.01) <= 0.005 + 1e-9 and elapsed < 120,
          f"argmin={argmin:.4f}, error there {table[:, 1].min():.2e}, {elapsed:.0f} s")


def test_rap_transfer_and_amplitude_tolerance():
    rap = RapParams()
    pulse = rap_pulse(rap, dt=0.05)
    fid = transfer_fidelity(pulse, 2, 10, PARAMS)
    scaled = [transfer_fidelity(pulse, 2, 10, PARAMS.with_(mu=m)) for m in np.linspace(0.9, 1.1, 11)]
    check("RAP 2->10 fidelity > 0.99", fid > 0.99, f"{fid:.5f}")
    check("RAP fidelity > 0.98 for peak x [0.9, 1.1]", min(scaled) > 0.98, f"min {min(scaled):.5f}")


# ideal fringes


@pytest.mark.parametrize("name, build", [("Rabi", build_rabi_scheme), ("RAP", build_rap_scheme)])
def test_ideal_fringe_shape(name, build):
    res = fringe_scan(build(dt=FRINGE_DT), PARAMS, PHASES)
    _, _, r2 = fringe_fit(PHASES, res.p0)
    check(f"{name} ideal fringe fits cos^2(phi/2) with R^2 > 0.999", r2 > 0.999,
          f"R^2={r2:.6f}, P0(0)={res.p0[0]:.5f}, P0(pi)={res.p0[16]:.2e}")


def test_oct_ideal_fringe(optimized_pulses):
    seq = build_oct_scheme(optimized_pulses["split"], optimized_pulses["swap"], dt=FRINGE_DT)
    res = fringe_scan(seq, PARAMS, PHASES)
    bright, dark = res.p0[0], res.p0[16]
    c = contrast(res.p0.max(), res.p0.min())
    check("OCT ideal P0(0) = 0.934 +- 0.02", abs(bright - 0.934) <= 0.02, f"{bright:.4f}")
    check("OCT ideal dark-port P0 <= 0.005", dark <= 0.005, f"{dark:.2e}")
    check("OCT ideal contrast ~ 1", c > 0.99, f"{c:.5f}")


# robustness milestones at mu = 1


def test_rabi_half_contrast_width(rabi_landscape):
    x = rabi_landscape.crossing(1.0)
    check("Rabi c_bar crosses 0.5 at dbeta = 0.10 +- 0.02", abs(x - 0.10) <= 0.02, f"{x:.4f}")


@pytest.mark.xfail(strict=True, reason="a Gaussian velocity spread leaves contrast ~ 1/dbeta, "
                                       "about 0.17 at dbeta = 0.2; see the decision ledger")
def test_rabi_contrast_vanishes_beyond_0_2(rabi_landscape):
    tail = rabi_landscape.row(1.0)[rabi_landscape.dbeta > 0.2 + 1e-9]
    check("Rabi c_bar < 0.05 for dbeta > 0.2", np.all(tail < 0.05),
          "values " + ", ".join(f"{c:.3f}" for c in tail[::4]) + " (every 4th)")


def test_rap_half_contrast_width(rap_landscape):
    x = rap_landscape.crossing(1.0)
    check("RAP c_bar crosses 0.5 at dbeta = 0.15 +- 0.03", abs(x - 0.15) <= 0.03, f"{x:.4f}")


def test_rap_far_tail(rap_landscape):
    c = rap_landscape.at(1.0, 0.4)
    se = rap_landscape.stderr_c[rap_landscape.index(1.0, 0.4)]
    check("RAP c_bar(dbeta=0.4) = 0.12 +- 0.04", abs(c - 0.12) <= 0.04, f"{c:.4f} +- {se:.4f}")


SINGLE_CLASS = ("at dbeta = 0 the landscape holds one velocity class; for the optimized scheme "
                "its contrast sits up to 0.013 below neighbouring classes, see the decision ledger")


def _excess_rise(land, first=0):
    c, se = land.c_bar[:, first:], land.stderr_c[:, first:]
    return float(np.max(np.diff(c, axis=1) - 2 * np.hypot(se[:, 1:], se[:, :-1])))


@pytest.mark.parametrize("name", ["rabi", "rap",
                                  pytest.param("oct", marks=pytest.mark.xfail(strict=True,
                                                                              reason=SINGLE_CLASS))])
def test_monotone_degradation(request, name):
    worst = _excess_rise(request.getfixturevalue(f"{name}_landscape"))
    check(f"{name} c_bar non-increasing in dbeta within 2 stderr", worst <= 0,
          f"largest excess rise {worst:+.4f}")


def test_oct_monotone_over_spread(oct_landscape):
    worst = _excess_rise(oct_landscape, first=1)
    check("oct c_bar non-increasing within 2 stderr for dbeta >= 0.02", worst <= 0,
          f"largest excess rise {worst:+.4f}")


# improvement maps


def test_rap_over_rabi_improvement(rabi_landscape, rap_landscape):
    imp = improvement_map(rabi_landscape, rap_landscape)
    check("max gain RAP - Rabi = 0.35 +- 0.05", abs(imp.max_gain - 0.35) <= 0.05,
          f"{imp.max_gain:.4f} at (mu, dbeta) = {imp.argmax}")
    check("RAP - Rabi losses < 0.04 + 2 stderr", imp.losses_within(0.04, n_sigma=2),
          f"largest loss {imp.max_loss:.4f}")


@pytest.mark.xfail(strict=True, reason=SINGLE_CLASS)
def test_oct_over_rap_losses(rap_landscape, oct_landscape):
    imp = improvement_map(rap_landscape, oct_landscape)
    i, j = np.unravel_index(np.argmin(imp.delta), imp.delta.shape)
    check("OCT - RAP losses < 0.01 + 2 stderr", imp.losses_within(0.01, n_sigma=2),
          f"largest loss {imp.max_loss:.4f} at (mu, dbeta) = ({imp.mu[i]:g}, {imp.dbeta[j]:g})")


def test_oct_over_rap_losses_over_spread(rap_landscape, oct_landscape):
    imp = improvement_map(rap_landscape, oct_landscape)
    spread = imp.dbeta > 0
    bound = 0.01 + 2 * imp.stderr[:, spread]
    loss = float(np.max(-imp.delta[:, spread]))
    check("OCT - RAP losses < 0.01 + 2 stderr for dbeta >= 0.02", np.all(-imp.delta[:, spread] < bound),
          f"largest loss {max(loss, 0.0):.4f}, max gain {imp.max_gain:.4f}")


# optimized control


def test_split_pulse_on_fresh_ensemble(optimized_pulses):
    fresh = _merge(sample_ensemble(EnsembleSpec(batch_size=64, n_batches=4, seed=99)))
    j = ensemble_infidelity(optimized_pulses["split"], fresh, split_target(PARAMS))
    check("split infidelity <= 5e-3 on a fresh ensemble", j <= 5e-3, f"{j:.2e} over {len(fresh)} members")


def test_oct_beats_rap_at_large_spread(rap_landscape, oct_landscape):
    gain = oct_landscape.at(1.0, 0.3) - rap_landscape.at(1.0, 0.3)
    check("OCT - RAP c_bar at (1, 0.3) >= 0.1", gain >= 0.1,
          f"{oct_landscape.at(1.0, 0.3):.4f} vs {rap_landscape.at(1.0, 0.3):.4f}")


def test_oct_far_tail_across_mu(oct_landscape):
    col = oct_landscape.c_bar[:, oct_landscape.index(1.0, 0.4)[1]]
    check("OCT c_bar(dbeta=0.4) >= 0.3 for all mu", np.all(col >= 0.3),
          f"min {col.min():.4f} at mu={oct_landscape.mu[np.argmin(col)]:.2f}")


# invariants


def test_norm_conserved_over_full_schemes(optimized_pulses):
    seqs = {"Rabi": build_rabi_scheme(dt=FRINGE_DT), "RAP": build_rap_scheme(dt=FRINGE_DT),
            "OCT": build_oct_scheme(optimized_pulses["split"], optimized_pulses["swap"], dt=FRINGE_DT)}
    drift = max(abs(run_scheme(s, PARAMS.with_(mu=m, beta=b), 1.3).state.norm() - 1)
                for s in seqs.values() for m, b in ((1.0, 0.0), (0.92, 0.17)))
    check("norm conserved to 1e-10 over full schemes", drift < 1e-10, f"max drift {drift:.1e}")


def test_two_level_oracle():
    from braggsim.ladder import StateVector
    from braggsim.propagate import propagate
    from braggsim.pulses import rabi_pulse

    pair = LadderParams(n_min=0, n_max=1)
    err = 0.0
    for kind in ("half_pi", "pi"):
        pulse = rabi_pulse(kind, 0, correction=1.0)
        area = np.sum(pulse.omega.real) * pulse.dt
        for mu in (0.9, 1.0, 1.13):
            p1 = propagate(StateVector.basis(0, pair), pair.with_(mu=mu), pulse).final_state.population(1)
            err = max(err, abs(p1 - math.sin(mu * area) ** 2))
    check("two-level Rabi oracle to 1e-8", err < 1e-8, f"max error {err:.1e}")


def test_krotov_invariants():
    from braggsim.krotov import EnsembleBatch, gradient, krotov_step

    cons = ControlConstraints()
    f = split_target(PARAMS)
    batch = sample_ensemble(EnsembleSpec(batch_size=4, n_batches=1, seed=5))[0]
    pulse, j_old, lam = initial_guess("split"), None, None
    worst, amp, leak = -math.inf, 0.0, -math.inf
    for _ in range(20):
        step = krotov_step(pulse, batch, f, cons, lambda_a=lam, j_old=j_old)
        worst = max(worst, step.j_pre_projection - step.j_old)
        pulse, j_old, lam = step.pulse, step.j_new, step.lambda_a
        amp = max(amp, np.abs(pulse.omega).max())
        leak = max(leak, spectral_leakage_db(pulse.omega, pulse.dt, cons.spectral_width))
    check("Krotov batch functional non-increasing before projection (1e-12)", worst <= 1e-12,
          f"largest rise {worst:+.1e}")
    check("constraints: max|Omega| <= 1.5 and > 40 dB suppression beyond 10",
          amp <= 1.5 + 1e-12 and leak < -40, f"max|Omega|={amp:.3f}, leakage {leak:.0f} dB")

    one = EnsembleBatch(np.array([1.0]), np.array([0.0]))
    rng = np.random.default_rng(3)
    guess = initial_guess("split")
    noisy = ControlPulse(guess.dt, guess.omega + 0.01 * (rng.normal(size=guess.n_steps)
                                                          + 1j * rng.normal(size=guess.n_steps)),
                         guess.phidot)
    g = gradient(noisy, one, f)
    agree = 0
    times = rng.choice(noisy.n_steps, 10, replace=False)
    for j in times:
        h = 1e-5
        up, dn = noisy.omega.copy(), noisy.omega.copy()
        up[j] += h
        dn[j] -= h
        fd = (ensemble_infidelity(ControlPulse(noisy.dt, up, noisy.phidot), one, f)
              - ensemble_infidelity(ControlPulse(noisy.dt, dn, noisy.phidot), one, f)) / (2 * h)
        agree += np.sign(g[j].real) == -np.sign(fd)
    check("Krotov update agrees in sign with finite differences at 10 times", agree == 10,
          f"{agree}/10")
