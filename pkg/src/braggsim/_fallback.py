"""Pure-NumPy twins of the compiled kernels in ``_kernels.pyx``.

Every step is an exact exponential. The uniform complex coupling c is gauged
away with D = diag(exp(-i n arg c)), which leaves the real symmetric
tridiagonal matrix diag(E) + |c| (L + L^T); those are diagonalized in
batches with ``numpy.linalg.eigh``.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 2048


def _level_energies(n_min, N, phidot, beta):
    lev = np.arange(n_min, n_min + N, dtype=float)
    return lev**2 + 2.0 * lev * beta + lev * phidot


def _propagators(n_min, N, omega, phidot, mu, beta, tau):
    """Exact exp(-i H tau) for a batch of (omega, phidot, mu, beta) samples."""
    c = -np.asarray(mu) * np.asarray(omega)
    E = _level_energies(n_min, N, np.asarray(phidot)[..., None], np.asarray(beta)[..., None])
    shape = E.shape[:-1]
    H = np.zeros(shape + (N, N))
    idx = np.arange(N)
    H[..., idx, idx] = E
    H[..., idx[:-1], idx[1:]] = np.abs(c)[..., None]
    H[..., idx[1:], idx[:-1]] = np.abs(c)[..., None]
    w, V = np.linalg.eigh(H)
    U = np.einsum("...ik,...k,...jk->...ij", V, np.exp(-1j * w * tau), V)
    gauge = np.exp(-1j * np.arange(n_min, n_min + N)[None, :] * np.angle(c)[..., None])
    return gauge[..., :, None] * U * gauge[..., None, :].conj()


def _guard(x, guard):
    p = np.abs(x) ** 2
    return p[..., :guard].sum(-1) + p[..., -guard:].sum(-1)


def _require_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite controls or parameters")


def evolve(psi, omega, phidot, dt, n_min, mu, beta, backward=False, store=False, guard=2):
    out = np.array(psi, dtype=np.complex128, copy=True)
    omega = np.asarray(omega, dtype=np.complex128)
    phidot = np.asarray(phidot, dtype=float)
    mu = np.asarray(mu, dtype=float)
    beta = np.asarray(beta, dtype=float)
    M, N = out.shape
    K = omega.shape[0]
    if phidot.shape[0] != K or mu.shape[0] != M or beta.shape[0] != M:
        raise ValueError("control or parameter arrays have inconsistent lengths")
    _require_finite(omega, phidot, mu, beta, out)
    tau = -dt if backward else dt
    gmax = _guard(out, guard)
    states = np.empty((K + 1, M, N), dtype=np.complex128) if store else None
    if store:
        states[K if backward else 0] = out
    order = np.arange(K)[::-1] if backward else np.arange(K)
    for start in range(0, K, _CHUNK):
        js = order[start:start + _CHUNK]
        U = _propagators(n_min, N, omega[js][:, None], phidot[js][:, None],
                         mu[None, :], beta[None, :], tau)
        for i, j in enumerate(js):
            out = np.einsum("mij,mj->mi", U[i], out)
            np.maximum(gmax, _guard(out, guard), out=gmax)
            if store:
                states[j if backward else j + 1] = out
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite amplitudes during propagation")
    return out, gmax, states


def krotov_sweep(psi0, chi_states, omega, phidot, dt, n_min, mu, beta, shape, inv_lambda):
    out = np.array(psi0, dtype=np.complex128, copy=True)
    chi = np.asarray(chi_states, dtype=np.complex128)
    new = np.array(omega, dtype=np.complex128, copy=True)
    phidot = np.asarray(phidot, dtype=float)
    mu = np.asarray(mu, dtype=float)
    beta = np.asarray(beta, dtype=float)
    shape = np.asarray(shape, dtype=float)
    M, N = out.shape
    K = new.shape[0]
    if chi.shape != (K + 1, M, N):
        raise ValueError("co-state array must have shape (K + 1, M, N)")
    if phidot.shape[0] != K or shape.shape[0] != K or mu.shape[0] != M or beta.shape[0] != M:
        raise ValueError("control or parameter arrays have inconsistent lengths")
    _require_finite(new, phidot, mu, beta, shape, out)
    grad = np.zeros(K, dtype=np.complex128)
    for j in range(K):
        ch = chi[j].conj()
        uu = ch[:, :-1] * out[:, 1:]
        vv = ch[:, 1:] * out[:, :-1]
        ga = -np.sum(mu[:, None] * (uu.imag + vv.imag))
        gb = -np.sum(mu[:, None] * (uu.real - vv.real))
        grad[j] = ga + 1j * gb
        new[j] += shape[j] * inv_lambda * grad[j]
        U = _propagators(n_min, N, np.full(M, new[j]), np.full(M, phidot[j]), mu, beta, dt)
        out = np.einsum("mij,mj->mi", U, out)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite amplitudes during Krotov sweep")
    return new, out, grad
