# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled evidence kernels.

Same contract as seroscan._evidence_py; see that module for the semantics.
The hot paths (binomial log pmfs, windowed convolution, level-set counting)
run as C loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, lgamma, log, log1p

cnp.import_array()

BACKEND_NAME = "cython"

CONV_MARGIN = 25.0
cdef double _CONV_MARGIN = 25.0


cdef void _fill_logpmf(double[::1] out, Py_ssize_t n, double s) noexcept:
    cdef Py_ssize_t x
    cdef double lg_n1 = lgamma(n + 1.0)
    cdef double ls, l1ms
    if s == 0.0:
        for x in range(n + 1):
            out[x] = -INFINITY
        out[0] = 0.0
        return
    if s == 1.0:
        for x in range(n + 1):
            out[x] = -INFINITY
        out[n] = 0.0
        return
    ls = log(s)
    l1ms = log1p(-s)
    for x in range(n + 1):
        out[x] = lg_n1 - lgamma(x + 1.0) - lgamma(n - x + 1.0) + x * ls + (n - x) * l1ms


def logpmf_vector(n, s):
    """Log pmf of Binom(n, s) on 0..n, with exact masses at s = 0 and s = 1."""
    out = np.empty(int(n) + 1)
    _fill_logpmf(out, int(n), float(s))
    return out


cdef (Py_ssize_t, Py_ssize_t) _window(double[::1] l, double tol) noexcept:
    cdef Py_ssize_t n = l.shape[0]
    cdef Py_ssize_t lo = 0, hi = n
    while lo < n and not (l[lo] > tol):
        lo += 1
    if lo == n:
        return 0, 0
    while hi > lo and not (l[hi - 1] > tol):
        hi -= 1
    return lo, hi


def window_bounds(logpmf, tol):
    """Half-open index range where logpmf > tol; (0, 0) when empty."""
    cdef double[::1] l = np.ascontiguousarray(logpmf, dtype=np.float64)
    cdef Py_ssize_t lo, hi
    lo, hi = _window(l, float(tol))
    return int(lo), int(hi)


cdef double _log_main_at(Py_ssize_t s_main, Py_ssize_t k, double q, double p,
                         Py_ssize_t n_main, double[::1] la, double[::1] lb) noexcept:
    cdef Py_ssize_t j0 = s_main - (n_main - k)
    cdef Py_ssize_t j1 = k if k < s_main else s_main
    cdef Py_ssize_t j
    cdef double m = -INFINITY, acc = 0.0, t
    if j0 < 0:
        j0 = 0
    if j0 > j1:
        return -INFINITY
    for j in range(j0, j1 + 1):
        t = la[j] + lb[s_main - j]
        if t > m:
            m = t
    if m == -INFINITY:
        return -INFINITY
    for j in range(j0, j1 + 1):
        acc += exp(la[j] + lb[s_main - j] - m)
    return m + log(acc)


def log_main_at(s_main, k, q, p, n_main):
    """Exact log of the main-study pmf at one point, no pruning."""
    la = np.empty(int(k) + 1)
    lb = np.empty(int(n_main) - int(k) + 1)
    _fill_logpmf(la, int(k), float(q))
    _fill_logpmf(lb, int(n_main) - int(k), float(p))
    return float(_log_main_at(int(s_main), int(k), float(q), float(p),
                              int(n_main), la, lb))


cdef object _conv_window(Py_ssize_t k, double q, double p, Py_ssize_t n_main,
                         double tol, double[::1] la, double[::1] lb):
    """Windowed log pmf of the two-binomial sum; returns (array, offset)."""
    cdef double in_tol = tol - _CONV_MARGIN
    cdef Py_ssize_t a0, a1, b0, b1, na, nb, i, j, c0, c1
    cdef double ma = -INFINITY, mb = -INFINITY
    a0, a1 = _window(la, in_tol)
    b0, b1 = _window(lb, in_tol)
    if a0 == a1 or b0 == b1:
        return np.empty(0), 0
    for i in range(a0, a1):
        if la[i] > ma:
            ma = la[i]
    for j in range(b0, b1):
        if lb[j] > mb:
            mb = lb[j]
    na = a1 - a0
    nb = b1 - b0
    c_arr = np.zeros(na + nb - 1)
    cdef double[::1] c = c_arr
    cdef double ai
    for i in range(na):
        ai = exp(la[a0 + i] - ma)
        for j in range(nb):
            c[i + j] += ai * exp(lb[b0 + j] - mb)
    cdef double shift = ma + mb
    for i in range(na + nb - 1):
        c[i] = (log(c[i]) + shift) if c[i] > 0.0 else -INFINITY
    c0, c1 = _window(c, tol)
    return c_arr[c0:c1], a0 + b0 + c0


def main_log_window(k, q, p, n_main, tol):
    """Windowed log pmf of Binom(k, q) + Binom(n_main - k, p)."""
    la = np.empty(int(k) + 1)
    lb = np.empty(int(n_main) - int(k) + 1)
    _fill_logpmf(la, int(k), float(q))
    _fill_logpmf(lb, int(n_main) - int(k), float(p))
    arr, off = _conv_window(int(k), float(q), float(p), int(n_main), float(tol), la, lb)
    return arr, int(off)


cdef Py_ssize_t _upper_bound(double[::1] a, double v) noexcept:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo

cdef struct EvidenceOut:
    long long nu
    double alt

cdef EvidenceOut _evidence_pairs(double[::1] l1w, double[::1] l2w,
                                 double[::1] lcs, double[::1] prefix,
                                 double mc, double logz, double tie_tol) noexcept:
    cdef EvidenceOut out
    cdef Py_ssize_t i, j, idx
    cdef double pair
    out.nu = 0
    out.alt = 0.0
    for i in range(l1w.shape[0]):
        for j in range(l2w.shape[0]):
            pair = l1w[i] + l2w[j]
            idx = _upper_bound(lcs, logz + tie_tol - pair)
            out.nu += idx
            out.alt += exp(pair + mc) * prefix[idx]
    return out


cdef object _evidence_given(double[::1] l1, double[::1] l2,
                            Py_ssize_t a0, Py_ssize_t a1,
                            Py_ssize_t b0, Py_ssize_t b1,
                            double sum1, double sum2,
                            object lcw_arr, double logz, double tie_tol):
    """(nu, alt, mass_deficit) from precomputed windows."""
    cdef Py_ssize_t n, i
    cdef double mc, acc, retained
    cdef EvidenceOut ev
    n = len(lcw_arr)
    if a0 == a1 or b0 == b1 or n == 0:
        return 0, 0.0, 1.0
    lcs_arr = np.sort(lcw_arr)
    cdef double[::1] lcs = lcs_arr
    mc = lcs[n - 1]
    prefix_arr = np.empty(n + 1)
    cdef double[::1] prefix = prefix_arr
    prefix[0] = 0.0
    acc = 0.0
    retained = 0.0
    for i in range(n):
        acc += exp(lcs[i] - mc)
        prefix[i + 1] = acc
        retained += exp(lcs[i])
    if logz == -INFINITY:
        ev.nu = 0
        ev.alt = 0.0
    else:
        ev = _evidence_pairs(l1[a0:a1], l2[b0:b1], lcs, prefix, mc, logz, tie_tol)
    retained = sum1 * sum2 * retained
    return int(ev.nu), float(ev.alt), max(0.0, 1.0 - retained)


def theta_evidence(n1, n2, nm, p, q, k, s1, s2, s3, prune_tol, tie_tol):
    """Evidence values for one parameter point; see the numpy backend."""
    cdef double tol = float(prune_tol)
    l1 = np.empty(int(n1) + 1) if int(n1) > 0 else np.zeros(1)
    l2 = np.empty(int(n2) + 1) if int(n2) > 0 else np.zeros(1)
    if int(n1) > 0:
        _fill_logpmf(l1, int(n1), float(p))
    if int(n2) > 0:
        _fill_logpmf(l2, int(n2), float(q))
    la = np.empty(int(k) + 1)
    lb = np.empty(int(nm) - int(k) + 1)
    _fill_logpmf(la, int(k), float(q))
    _fill_logpmf(lb, int(nm) - int(k), float(p))
    cdef double[::1] l1v = l1, l2v = l2
    cdef double logz = l1v[int(s1)] + l2v[int(s2)] + _log_main_at(
        int(s3), int(k), float(q), float(p), int(nm), la, lb)
    cdef Py_ssize_t a0, a1, b0, b1
    a0, a1 = _window(l1v, tol)
    b0, b1 = _window(l2v, tol)
    lcw, _ = _conv_window(int(k), float(q), float(p), int(nm), tol, la, lb)
    cdef double sum1 = float(np.exp(l1[a0:a1]).sum())
    cdef double sum2 = float(np.exp(l2[b0:b1]).sum())
    nu, alt, deficit = _evidence_given(l1v, l2v, a0, a1, b0, b1, sum1, sum2,
                                       lcw, logz, float(tie_tol))
    return float(logz), nu, alt, deficit


def scan_chunk(n1, n2, nm, s1, s2, s3, p_values, q_values, k_values,
               start, stop, prune_tol, tie_tol):
    """Evidence for canonical flat grid indices [start, stop)."""
    cdef double[::1] pv = np.ascontiguousarray(p_values, dtype=np.float64)
    cdef double[::1] qv = np.ascontiguousarray(q_values, dtype=np.float64)
    cdef long long[::1] kv = np.ascontiguousarray(k_values, dtype=np.int64)
    cdef Py_ssize_t n_q = qv.shape[0], n_k = kv.shape[0]
    cdef Py_ssize_t i0 = int(start), i1 = int(stop), count = i1 - i0
    cdef Py_ssize_t in1 = int(n1), in2 = int(n2), inm = int(nm)
    cdef Py_ssize_t is1 = int(s1), is2 = int(s2), is3 = int(s3)
    cdef double tol = float(prune_tol), tie = float(tie_tol)

    logf_arr = np.empty(count)
    nu_arr = np.empty(count, dtype=np.int64)
    alt_arr = np.empty(count)
    deficit_arr = np.empty(count)
    cdef double[::1] logf = logf_arr
    cdef long long[::1] nu = nu_arr
    cdef double[::1] alt = alt_arr
    cdef double[::1] deficit = deficit_arr

    l1 = np.zeros(1) if in1 == 0 else np.empty(in1 + 1)
    l2 = np.zeros(1) if in2 == 0 else np.empty(in2 + 1)
    cdef double[::1] l1v = l1, l2v = l2
    cdef Py_ssize_t a0 = 0, a1 = 1, b0 = 0, b1 = 1
    cdef double sum1 = 1.0, sum2 = 1.0
    cdef Py_ssize_t last_ip = -1, last_iq = -1
    cdef Py_ssize_t pos, flat, ip, iq, ik, rem, k
    cdef double p, q, logz

    for pos in range(count):
        flat = i0 + pos
        ip = flat // (n_q * n_k)
        rem = flat % (n_q * n_k)
        iq = rem // n_k
        ik = rem % n_k
        p = pv[ip]
        q = qv[iq]
        k = <Py_ssize_t> kv[ik]
        if ip != last_ip:
            if in1 > 0:
                _fill_logpmf(l1v, in1, p)
            a0, a1 = _window(l1v, tol)
            sum1 = float(np.exp(l1[a0:a1]).sum())
            last_ip = ip
            last_iq = -1
        if iq != last_iq:
            if in2 > 0:
                _fill_logpmf(l2v, in2, q)
            b0, b1 = _window(l2v, tol)
            sum2 = float(np.exp(l2[b0:b1]).sum())
            last_iq = iq
        la = np.empty(k + 1)
        lb = np.empty(inm - k + 1)
        _fill_logpmf(la, k, q)
        _fill_logpmf(lb, inm - k, p)
        logz = l1v[is1] + l2v[is2] + _log_main_at(is3, k, q, p, inm, la, lb)
        lcw, _ = _conv_window(k, q, p, inm, tol, la, lb)
        nu_i, alt_i, def_i = _evidence_given(l1v, l2v, a0, a1, b0, b1,
                                             sum1, sum2, lcw, logz, tie)
        logf[pos] = logz
        nu[pos] = nu_i
        alt[pos] = alt_i
        deficit[pos] = def_i
    return logf_arr, nu_arr, alt_arr, deficit_arr
