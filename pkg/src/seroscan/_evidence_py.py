"""Numpy implementation of the evidence kernels.

This module is the reference backend: `seroscan._evidence_cy` reimplements
the same functions in Cython with identical semantics, and `seroscan._backend`
picks whichever is available (or whatever SEROSCAN_BACKEND demands).

All probability mass functions are handled in natural-log space. A parameter
point is (p, q, k): false positive rate, true positive rate, and the integer
count of infected main-study participants. The joint density of the observed
positives factorizes as

    f(s | theta) = d(s1; N1, p) * d(s2; N2, q) * c(s3)

where c is the convolution of Binom(k, q) and Binom(n_main - k, p). Pruning
keeps, per factor, the contiguous support window where the factor's log-pmf
exceeds ``prune_tol``; the retained sample space is the product of the three
windows. Convolution inputs are windowed at ``prune_tol - CONV_MARGIN`` so
that retained output values stay accurate near the threshold.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

BACKEND_NAME = "python"

# Extra log-space margin for convolution inputs. Dropped input mass is below
# exp(prune_tol - CONV_MARGIN) per term, which keeps retained convolution
# values accurate to ~exp(-CONV_MARGIN) in relative terms.
CONV_MARGIN = 25.0


def logpmf_vector(n: int, s: float) -> np.ndarray:
    """Log pmf of Binom(n, s) on 0..n, with exact masses at s = 0 and s = 1."""
    if s == 0.0:
        out = np.full(n + 1, -np.inf)
        out[0] = 0.0
        return out
    if s == 1.0:
        out = np.full(n + 1, -np.inf)
        out[n] = 0.0
        return out
    x = np.arange(n + 1)
    return (
        gammaln(n + 1.0)
        - gammaln(x + 1.0)
        - gammaln(n - x + 1.0)
        + x * np.log(s)
        + (n - x) * np.log1p(-s)
    )


def window_bounds(logpmf: np.ndarray, tol: float) -> tuple[int, int]:
    """Half-open index range where logpmf > tol.

    Binomial log-pmfs are concave over their support, so the super-level set
    is contiguous. Returns (0, 0) when nothing clears the threshold.
    """
    idx = np.nonzero(logpmf > tol)[0]
    if idx.size == 0:
        return 0, 0
    return int(idx[0]), int(idx[-1]) + 1


def log_main_at(s_main: int, k: int, q: float, p: float, n_main: int) -> float:
    """Exact log of the main-study pmf at one point, no pruning.

    Direct max-shifted sum over the feasible convolution index range.
    """
    la = logpmf_vector(k, q)
    lb = logpmf_vector(n_main - k, p)
    j0 = max(0, s_main - (n_main - k))
    j1 = min(k, s_main)
    if j0 > j1:
        return -np.inf
    terms = la[j0 : j1 + 1] + lb[s_main - j1 : s_main - j0 + 1][::-1]
    m = terms.max()
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.exp(terms - m).sum()))


def main_log_window(
    k: int, q: float, p: float, n_main: int, tol: float
) -> tuple[np.ndarray, int]:
    """Windowed log pmf of Binom(k, q) + Binom(n_main - k, p).

    Returns (values, offset): ``values[i]`` is the log pmf at count
    ``offset + i``, restricted to the window where it exceeds ``tol``.
    """
    la = logpmf_vector(k, q)
    lb = logpmf_vector(n_main - k, p)
    in_tol = tol - CONV_MARGIN
    a0, a1 = window_bounds(la, in_tol)
    b0, b1 = window_bounds(lb, in_tol)
    if a0 == a1 or b0 == b1:
        return np.empty(0), 0
    ma = float(la[a0:a1].max())
    mb = float(lb[b0:b1].max())
    c = np.convolve(np.exp(la[a0:a1] - ma), np.exp(lb[b0:b1] - mb))
    with np.errstate(divide="ignore"):
        lc = np.log(c) + (ma + mb)
    c0, c1 = window_bounds(lc, tol)
    return lc[c0:c1], a0 + b0 + c0


def _evidence_from_windows(
    l1w: np.ndarray,
    l2w: np.ndarray,
    lcw: np.ndarray,
    logz: float,
    tie_tol: float,
) -> tuple[int, float]:
    """Level-set count and sub-level mass over a factorized retained support.

    Counts retained points s with log f(s) <= logz + tie_tol (ties resolve
    toward inclusion) and sums their probability. The third factor is sorted
    once; each (i, j) pair of the first two factors then contributes via one
    binary search and a prefix sum.
    """
    if l1w.size == 0 or l2w.size == 0 or lcw.size == 0 or logz == -np.inf:
        return 0, 0.0
    lcs = np.sort(lcw)
    mc = lcs[-1]
    prefix = np.concatenate(([0.0], np.cumsum(np.exp(lcs - mc))))
    pair = (l1w[:, None] + l2w[None, :]).ravel()
    idx = np.searchsorted(lcs, logz + tie_tol - pair, side="right")
    nu = int(idx.sum())
    alt = float(np.exp(pair + mc) @ prefix[idx])
    return nu, alt


def theta_evidence(
    n1: int,
    n2: int,
    nm: int,
    p: float,
    q: float,
    k: int,
    s1: int,
    s2: int,
    s3: int,
    prune_tol: float,
    tie_tol: float,
) -> tuple[float, int, float, float]:
    """Evidence values for one parameter point against observed counts.

    Returns (logf, nu, alt, mass_deficit):
      logf          exact log joint density of the observed counts
      nu            |{s retained : 0 < f(s) <= f_obs}| with tie tolerance
      alt           total retained mass at or below the observed level
      mass_deficit  1 minus the total retained mass

    Calibration arms of size zero contribute a unit factor.
    """
    l1 = logpmf_vector(n1, p) if n1 > 0 else np.zeros(1)
    l2 = logpmf_vector(n2, q) if n2 > 0 else np.zeros(1)
    logz = float(l1[s1] + l2[s2] + log_main_at(s3, k, q, p, nm))

    a0, a1 = window_bounds(l1, prune_tol)
    b0, b1 = window_bounds(l2, prune_tol)
    lcw, _ = main_log_window(k, q, p, nm, prune_tol)
    nu, alt = _evidence_from_windows(l1[a0:a1], l2[b0:b1], lcw, logz, tie_tol)
    retained = (
        np.exp(l1[a0:a1]).sum() * np.exp(l2[b0:b1]).sum() * np.exp(lcw).sum()
        if lcw.size
        else 0.0
    )
    return logz, nu, alt, max(0.0, 1.0 - float(retained))


def scan_chunk(
    n1: int,
    n2: int,
    nm: int,
    s1: int,
    s2: int,
    s3: int,
    p_values: np.ndarray,
    q_values: np.ndarray,
    k_values: np.ndarray,
    start: int,
    stop: int,
    prune_tol: float,
    tie_tol: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Evidence for canonical flat grid indices [start, stop).

    The canonical order is (p index, q index, k index) lexicographic. The
    first two factors depend only on p and q, so their windows are cached
    across the inner loops; the convolution is rebuilt per point.
    """
    n_q = len(q_values)
    n_k = len(k_values)
    count = stop - start
    logf = np.empty(count)
    nu = np.empty(count, dtype=np.int64)
    alt = np.empty(count)
    deficit = np.empty(count)

    l1 = l2 = None
    l1w = l2w = None
    sum1 = sum2 = 0.0
    last_ip = last_iq = -1
    for pos in range(count):
        flat = start + pos
        ip, rem = divmod(flat, n_q * n_k)
        iq, ik = divmod(rem, n_k)
        if ip != last_ip:
            l1 = logpmf_vector(n1, float(p_values[ip])) if n1 > 0 else np.zeros(1)
            a0, a1 = window_bounds(l1, prune_tol)
            l1w = l1[a0:a1]
            sum1 = float(np.exp(l1w).sum())
            last_ip, last_iq = ip, -1
        if iq != last_iq:
            l2 = logpmf_vector(n2, float(q_values[iq])) if n2 > 0 else np.zeros(1)
            b0, b1 = window_bounds(l2, prune_tol)
            l2w = l2[b0:b1]
            sum2 = float(np.exp(l2w).sum())
            last_iq = iq
        p = float(p_values[ip])
        q = float(q_values[iq])
        k = int(k_values[ik])
        logz = float(l1[s1] + l2[s2] + log_main_at(s3, k, q, p, nm))
        lcw, _ = main_log_window(k, q, p, nm, prune_tol)
        nu_i, alt_i = _evidence_from_windows(l1w, l2w, lcw, logz, tie_tol)
        logf[pos] = logz
        nu[pos] = nu_i
        alt[pos] = alt_i
        retained = sum1 * sum2 * float(np.exp(lcw).sum()) if lcw.size else 0.0
        deficit[pos] = max(0.0, 1.0 - retained)
    return logf, nu, alt, deficit
