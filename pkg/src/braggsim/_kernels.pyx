# cython: language_level=3
"""Compiled propagation kernels for the momentum ladder.

Each step applies exp(-i H dt) for a piecewise-constant tridiagonal
Hamiltonian by a Chebyshev expansion whose Bessel coefficients are obtained
with Miller's backward recurrence. The expansion is truncated at 1e-18 so the
step is unitary to machine precision.

Both entry points mirror ``braggsim._fallback`` exactly (same signatures,
same return values) and release the GIL while running.
"""
import numpy as np
cimport numpy as cnp

from libc.math cimport fabs, sqrt, ceil, cos, sin, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF JMAX = 512
DEF A_MAX = 120.0


cdef inline double cabs2(double complex z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef int bessel_coeffs(double a, double* J) noexcept nogil:
    """Fill J[k] = J_k(a), return the number of significant terms."""
    cdef int M, k, n
    cdef double nrm
    if a < 1e-14:
        J[0] = 1.0
        return 1
    M = <int>(1.3 * a) + 40
    if M % 2 == 1:
        M += 1
    J[M + 1] = 0.0
    J[M] = 1e-30
    for k in range(M, 0, -1):
        J[k - 1] = (2.0 * k / a) * J[k] - J[k + 1]
        if fabs(J[k - 1]) > 1e200:
            for n in range(k - 1, M + 1):
                J[n] *= 1e-200
    nrm = J[0]
    for k in range(2, M + 1, 2):
        nrm += 2.0 * J[k]
    for k in range(M + 1):
        J[k] /= nrm
    k = M
    while k > 0 and fabs(J[k]) < 1e-18:
        k -= 1
    return k + 1


cdef void cheb_step(double complex* x, int N, int n_min, double complex c,
                    double phidot, double beta, double tau,
                    double* E, double complex* p0, double complex* p1,
                    double complex* acc, double* J) noexcept nogil:
    """x <- exp(-i H tau) x with H = diag(E) + c |n><n+1| + h.c."""
    cdef int n, k, K, isub, nsub
    cdef double lev, emin = 1e300, emax = -1e300, s, r, a, ac, t
    cdef double complex u, uk, coef, tmp, ph, cc = c.conjugate()
    cdef double complex* swap
    for n in range(N):
        lev = n + n_min
        E[n] = lev * lev + 2.0 * lev * beta + lev * phidot
        if E[n] < emin:
            emin = E[n]
        if E[n] > emax:
            emax = E[n]
    ac = sqrt(cabs2(c))
    s = 0.5 * (emin + emax)
    r = 0.5 * (emax - emin) + 2.0 * ac + 1e-12
    nsub = <int>ceil(r * fabs(tau) / A_MAX)
    if nsub < 1:
        nsub = 1
    t = tau / nsub
    a = r * fabs(t)
    K = bessel_coeffs(a, J)
    u = -1j if t > 0 else 1j
    ph = cos(s * t) - 1j * sin(s * t)
    for n in range(N):
        E[n] = (E[n] - s) / r
    c = c / r
    cc = cc / r
    for isub in range(nsub):
        for n in range(N):
            p0[n] = x[n]
            acc[n] = J[0] * x[n]
        if K > 1:
            # p1 = Hn p0
            p1[0] = E[0] * p0[0] + c * p0[1]
            for n in range(1, N - 1):
                p1[n] = E[n] * p0[n] + c * p0[n + 1] + cc * p0[n - 1]
            p1[N - 1] = E[N - 1] * p0[N - 1] + cc * p0[N - 2]
            uk = u
            coef = 2.0 * J[1] * uk
            for n in range(N):
                acc[n] = acc[n] + coef * p1[n]
            for k in range(2, K):
                # p0 <- 2 Hn p1 - p0, then swap so p1 holds T_k
                p0[0] = 2.0 * (E[0] * p1[0] + c * p1[1]) - p0[0]
                for n in range(1, N - 1):
                    p0[n] = 2.0 * (E[n] * p1[n] + c * p1[n + 1] + cc * p1[n - 1]) - p0[n]
                p0[N - 1] = 2.0 * (E[N - 1] * p1[N - 1] + cc * p1[N - 2]) - p0[N - 1]
                swap = p0
                p0 = p1
                p1 = swap
                uk = uk * u
                coef = 2.0 * J[k] * uk
                for n in range(N):
                    acc[n] = acc[n] + coef * p1[n]
        for n in range(N):
            x[n] = ph * acc[n]


cdef double guard_population(double complex* x, int N, int guard) noexcept nogil:
    cdef int n
    cdef double g = 0.0
    for n in range(guard):
        g += cabs2(x[n]) + cabs2(x[N - 1 - n])
    return g


def _require_finite(*arrays):
    # a NaN spectral radius would make the Chebyshev term count meaningless
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite controls or parameters")


def evolve(psi, omega, phidot, double dt, int n_min, mu, beta,
           bint backward=False, bint store=False, int guard=2):
    """Propagate each row of ``psi`` over the piecewise-constant controls.

    Returns ``(psi_T, guard_max, states)``; ``states`` has shape
    ``(K + 1, M, N)`` indexed by grid time when ``store`` is set, else None.
    With ``backward`` the rows are taken as states at the final time and
    propagated to t = 0 with the adjoint evolution.
    """
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] out = np.array(psi, dtype=np.complex128, order="C", copy=True)
    cdef double complex[::1] om = np.ascontiguousarray(omega, dtype=np.complex128)
    cdef double[::1] pd = np.ascontiguousarray(phidot, dtype=np.float64)
    cdef double[::1] mus = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] betas = np.ascontiguousarray(beta, dtype=np.float64)
    cdef int M = out.shape[0], N = out.shape[1], K = om.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gmax = np.zeros(M)
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] states_arr
    cdef double complex* xs = <double complex*> out.data
    cdef double complex* st = NULL
    cdef double* gm = <double*> gmax.data
    cdef int m, j, jj, n
    cdef double g, tau
    cdef bint ok = True
    if pd.shape[0] != K or mus.shape[0] != M or betas.shape[0] != M:
        raise ValueError("control or parameter arrays have inconsistent lengths")
    _require_finite(om, pd, mus, betas, out)
    if store:
        states_arr = np.empty((K + 1, M, N), dtype=np.complex128)
        st = <double complex*> states_arr.data
    tau = -dt if backward else dt
    cdef double* E = <double*> malloc(N * sizeof(double))
    cdef double* J = <double*> malloc((JMAX + 2) * sizeof(double))
    cdef double complex* w = <double complex*> malloc(3 * N * sizeof(double complex))
    if E == NULL or J == NULL or w == NULL:
        free(E); free(J); free(w)
        raise MemoryError()
    try:
        with nogil:
            for m in range(M):
                gm[m] = guard_population(xs + m * N, N, guard)
                if store:
                    jj = K if backward else 0
                    for n in range(N):
                        st[(jj * M + m) * N + n] = xs[m * N + n]
            for j in range(K):
                jj = K - 1 - j if backward else j
                for m in range(M):
                    cheb_step(xs + m * N, N, n_min, -mus[m] * om[jj], pd[jj], betas[m],
                              tau, E, w, w + N, w + 2 * N, J)
                    g = guard_population(xs + m * N, N, guard)
                    if g > gm[m]:
                        gm[m] = g
                    if store:
                        for n in range(N):
                            st[((jj if backward else jj + 1) * M + m) * N + n] = xs[m * N + n]
            for n in range(M * N):
                if not (isfinite(xs[n].real) and isfinite(xs[n].imag)):
                    ok = False
    finally:
        free(E); free(J); free(w)
    if not ok:
        raise FloatingPointError("non-finite amplitudes during propagation")
    return out, gmax, (states_arr if store else None)


def krotov_sweep(psi0, chi_states, omega, phidot, double dt, int n_min, mu, beta,
                 shape, double inv_lambda):
    """Sequential first-order Krotov update of a complex control.

    At every interval the update is ``shape * inv_lambda * g`` where the real
    and imaginary parts of ``g`` are ``Im <chi|dH/dRe|psi>`` and
    ``Im <chi|dH/dIm|psi>`` summed over all rows; ``psi`` is propagated with
    the freshly updated value before moving on. Returns
    ``(omega_new, psi_T, gradient)``.
    """
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] out = np.array(psi0, dtype=np.complex128, order="C", copy=True)
    cdef double complex[:, :, ::1] chi = np.ascontiguousarray(chi_states, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] new = np.array(omega, dtype=np.complex128, copy=True)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] grad = np.zeros(new.shape[0], dtype=np.complex128)
    cdef double[::1] pd = np.ascontiguousarray(phidot, dtype=np.float64)
    cdef double[::1] mus = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] betas = np.ascontiguousarray(beta, dtype=np.float64)
    cdef double[::1] S = np.ascontiguousarray(shape, dtype=np.float64)
    cdef int M = out.shape[0], N = out.shape[1], K = new.shape[0]
    cdef double complex* xs = <double complex*> out.data
    cdef double complex* om = <double complex*> new.data
    cdef double complex* gr = <double complex*> grad.data
    cdef int m, j, n
    cdef double ga, gb, mu_m
    cdef double complex uu, vv, ch0, ch1
    cdef bint ok = True
    if chi.shape[0] != K + 1 or chi.shape[1] != M or chi.shape[2] != N:
        raise ValueError("co-state array must have shape (K + 1, M, N)")
    if pd.shape[0] != K or S.shape[0] != K or mus.shape[0] != M or betas.shape[0] != M:
        raise ValueError("control or parameter arrays have inconsistent lengths")
    _require_finite(new, pd, mus, betas, S, out)
    cdef double* E = <double*> malloc(N * sizeof(double))
    cdef double* J = <double*> malloc((JMAX + 2) * sizeof(double))
    cdef double complex* w = <double complex*> malloc(3 * N * sizeof(double complex))
    if E == NULL or J == NULL or w == NULL:
        free(E); free(J); free(w)
        raise MemoryError()
    try:
        with nogil:
            for j in range(K):
                ga = 0.0
                gb = 0.0
                for m in range(M):
                    mu_m = mus[m]
                    for n in range(N - 1):
                        ch0 = chi[j, m, n].conjugate()
                        ch1 = chi[j, m, n + 1].conjugate()
                        uu = ch0 * xs[m * N + n + 1]
                        vv = ch1 * xs[m * N + n]
                        ga -= mu_m * (uu.imag + vv.imag)
                        gb -= mu_m * (uu.real - vv.real)
                gr[j] = ga + 1j * gb
                om[j] = om[j] + S[j] * inv_lambda * (ga + 1j * gb)
                for m in range(M):
                    cheb_step(xs + m * N, N, n_min, -mus[m] * om[j], pd[j], betas[m],
                              dt, E, w, w + N, w + 2 * N, J)
            for n in range(M * N):
                if not (isfinite(xs[n].real) and isfinite(xs[n].imag)):
                    ok = False
    finally:
        free(E); free(J); free(w)
    if not ok:
        raise FloatingPointError("non-finite amplitudes during Krotov sweep")
    return new, out, grad
