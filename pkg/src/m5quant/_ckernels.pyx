# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see _pykernels.py for the reference semantics."""
import numpy as np

from libc.math cimport sqrt, log, log1p, exp, cos, erfc, fabs
from libc.stdint cimport uint64_t, uint8_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15
cdef uint64_t M1 = 0xBF58476D1CE4E5B9
cdef uint64_t M2 = 0x94D049BB133111EB

cdef double TWO_PI = 6.283185307179586
cdef double SQRT2 = 1.4142135623730951
cdef double LOG_SQRT_2PI = 0.9189385332046728
cdef double MIN_ACCEPT = 0.01
cdef long MAX_ATTEMPTS = 1 << 20
cdef uint64_t TAIL_OFFSET = 1 << 22


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline double u01(uint64_t ek, uint64_t ctr) nogil:
    cdef uint64_t h = mix64(ek + (ctr + 1) * GOLDEN)
    return (<double>(h >> 11) + 0.5) * 1.1102230246251565e-16


cdef inline double normal(uint64_t ek, uint64_t ctr) nogil:
    return sqrt(-2.0 * log(u01(ek, ctr))) * cos(TWO_PI * u01(ek, ctr + 1))


cdef inline double ndtr(double x) nogil:
    return 0.5 * erfc(-x / SQRT2)


cdef inline double log_ndtr(double z) nogil:
    cdef double z2
    if z > 6.0:
        return log1p(-0.5 * erfc(z / SQRT2))
    if z > -30.0:
        return log(0.5 * erfc(-z / SQRT2))
    z2 = 1.0 / (z * z)
    return (-0.5 * z * z - log(-z) - LOG_SQRT_2PI
            + log(1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2 + 105.0 * z2 * z2 * z2 * z2))


def std_normals(const uint64_t[:] ekeys, uint64_t ctr0):
    cdef Py_ssize_t i, n = ekeys.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    with nogil:
        for i in range(n):
            o[i] = normal(ekeys[i], ctr0)
    return out


cdef double esn_tail(double mu, double omega, double sigma, double b, double sw,
                     uint64_t ek, uint64_t ctr0) nogil:
    cdef double t0 = -omega
    cdef double lam = 0.5 * (t0 + sqrt(t0 * t0 + 4.0))
    cdef double prop
    cdef uint64_t c
    cdef long t = 0
    while True:
        c = ctr0 + TAIL_OFFSET + 4 * t
        prop = t0 - log(u01(ek, c)) / lam
        if u01(ek, c + 1) <= exp(-0.5 * (prop - lam) * (prop - lam)):
            return mu - (b * sigma / sw) * prop + sqrt(sigma) / sw * normal(ek, c + 2)
        t += 1


def esn_impute(const double[:] mu_x, double sigma, double a, double b,
               const uint64_t[:] ekeys, uint64_t ctr0):
    cdef Py_ssize_t i, n = mu_x.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[:] o = out
    cdef double sd = sqrt(sigma)
    cdef double sw = sqrt(1.0 + b * b * sigma)
    cdef double mu, omega, x
    cdef uint64_t c, ek
    cdef long t
    cdef bint done
    with nogil:
        for i in range(n):
            mu = mu_x[i]
            ek = ekeys[i]
            if b == 0.0:
                o[i] = mu + sd * normal(ek, ctr0)
                continue
            omega = (-a - b * mu) / sw
            done = False
            if ndtr(omega) >= MIN_ACCEPT:
                t = 0
                while t < MAX_ATTEMPTS:
                    c = ctr0 + 3 * t
                    x = mu + sd * normal(ek, c)
                    if u01(ek, c + 2) < ndtr(-a - b * x):
                        o[i] = x
                        done = True
                        break
                    t += 1
            if not done:
                o[i] = esn_tail(mu, omega, sigma, b, sw, ek, ctr0)
    return out


cdef inline void log_tails(double eta, double* lpp, double* lpn) nogil:
    # log Phi(eta), log Phi(-eta) from one erfc of |eta|
    cdef double ae = fabs(eta), tail, lt, lb
    if ae < 30.0:
        tail = 0.5 * erfc(ae / SQRT2)
        lt = log(tail)
        lb = log1p(-tail)
    else:
        lt = log_ndtr(-ae)
        lb = -exp(lt)
    if eta >= 0:
        lpp[0] = lb
        lpn[0] = lt
    else:
        lpp[0] = lt
        lpn[0] = lb


def probit_stats(const double[:] y, const uint8_t[:] r, double a, double b):
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double ll = 0.0, ga = 0.0, gb = 0.0, iaa = 0.0, iab = 0.0, ibb = 0.0
    cdef double eta, lphi, lpp, lpn, s, w, yi, phi, tail, pp, pn
    with nogil:
        for i in range(n):
            yi = y[i]
            eta = a + b * yi
            if fabs(eta) < 30.0:
                phi = exp(-0.5 * eta * eta - LOG_SQRT_2PI)
                tail = 0.5 * erfc(fabs(eta) / SQRT2)
                if eta >= 0:
                    pp = 1.0 - tail
                    pn = tail
                else:
                    pp = tail
                    pn = 1.0 - tail
                if r[i]:
                    ll += log(pp)
                    s = phi / pp
                else:
                    ll += log(pn)
                    s = -phi / pn
                w = phi * phi / (pp * pn)
            else:
                lphi = -0.5 * eta * eta - LOG_SQRT_2PI
                log_tails(eta, &lpp, &lpn)
                if r[i]:
                    ll += lpp
                    s = exp(lphi - lpp)
                else:
                    ll += lpn
                    s = -exp(lphi - lpn)
                w = exp(2.0 * lphi - lpp - lpn)
            ga += s
            gb += s * yi
            iaa += w
            iab += w * yi
            ibb += w * yi * yi
    return ll, ga, gb, iaa, iab, ibb
