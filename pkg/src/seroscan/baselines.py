"""Likelihood baselines that cross-check the exact inversion in confset.

Three pieces: a multi-start quasi-Newton MLE on logit-transformed rates, a
simulated likelihood-ratio test, and a Metropolis-Hastings quasi-posterior
(flat prior on the logits) with its percentile-cutoff confidence set.

The integer infected count k makes the likelihood piecewise-constant in
prevalence. Sampling runs on a continuous relaxation: the main-study factor
at a real-valued count is the linear blend of the factors at the neighboring
integers. Optimization profiles the count out exactly instead; the blend is
linear within each unit cell, so its supremum over the count axis is always
attained at an integer and the two formulations share the same maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import exp, floor, log, log1p

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln

from .confset import ParamGrid, log_joint_grid
from .model import (
    Dataset,
    ParamPoint,
    PositiveCounts,
    StudyDesign,
    simulate_study,
    tagged_rng,
)

DEFAULT_CLAMP_EPS = 1e-8

# Rates are kept strictly inside (0, 1) during optimization and sampling so
# gradients stay finite even when a logit saturates in float arithmetic.
_RATE_FLOOR = 1e-15


def logit_clamped(x: float, eps: float = DEFAULT_CLAMP_EPS) -> float:
    """log(x / (1 - x)) with x clamped into [eps, 1 - eps] first."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if not 0.0 < eps < 0.5:
        raise ValueError(f"eps must be in (0, 0.5), got {eps}")
    # Clamp whichever side is small; 1 - eps is not representable near 1, so
    # working on the complement keeps the two boundaries exactly symmetric.
    if x <= 0.5:
        c = max(x, eps)
        return log(c) - log1p(-c)
    c = max(1.0 - x, eps)
    return log1p(-c) - log(c)


@dataclass(frozen=True)
class NaturalParams:
    """Unconstrained logits of (p, q, pi)."""

    psi0: float
    psi1: float
    psi2: float

    @classmethod
    def from_rates(
        cls, p: float, q: float, pi: float, eps: float = DEFAULT_CLAMP_EPS
    ) -> "NaturalParams":
        return cls(logit_clamped(p, eps), logit_clamped(q, eps), logit_clamped(pi, eps))

    def to_rates(self) -> tuple[float, float, float]:
        """(p, q, pi), each strictly inside (0, 1)."""
        vec = _clip_rates(expit([self.psi0, self.psi1, self.psi2]))
        return float(vec[0]), float(vec[1]), float(vec[2])

    def to_param_point(self, n_main: int) -> ParamPoint:
        p, q, pi = self.to_rates()
        return ParamPoint(p, q, int(floor(pi * n_main + 0.5)))

    def as_array(self) -> np.ndarray:
        return np.array([self.psi0, self.psi1, self.psi2])


def _clip_rates(x):
    return np.clip(x, _RATE_FLOOR, 1.0 - _RATE_FLOOR)


@lru_cache(maxsize=16)
def _lgamma_table(n: int) -> np.ndarray:
    """t[x] = log(x!) for x in 0..n; shared by all scalar pmf evaluations."""
    return gammaln(np.arange(n + 1, dtype=float) + 1.0)


def _log_binom_at(s: int, n: int, rate: float, t: np.ndarray) -> float:
    if n == 0:
        return 0.0
    if rate == 0.0:
        return 0.0 if s == 0 else -np.inf
    if rate == 1.0:
        return 0.0 if s == n else -np.inf
    return float(
        t[n] - t[s] - t[n - s] + s * log(rate) + (n - s) * np.log1p(-rate)
    )


def _log_binom_vec(counts: np.ndarray, n: int, rate: float, t: np.ndarray):
    """Log pmf at several counts, exact at the rate boundaries."""
    if rate == 0.0:
        return np.where(counts == 0, 0.0, -np.inf)
    if rate == 1.0:
        return np.where(counts == n, 0.0, -np.inf)
    return (
        t[n]
        - t[counts]
        - t[n - counts]
        + counts * log(rate)
        + (n - counts) * np.log1p(-rate)
    )


def _log_main(
    s3: int, k: int, n_main: int, q: float, p: float, t: np.ndarray, grad: bool
) -> tuple[float, float, float]:
    """(log main pmf, d/dp of the log, d/dq of the log) at integer k.

    Gradients are requested only on the clipped interior path, so their
    divisions by p, 1-p, q, 1-q are safe there.
    """
    n_rest = n_main - k
    j0 = max(0, s3 - n_rest)
    j1 = min(k, s3)
    if j0 > j1:
        return -np.inf, 0.0, 0.0
    j = np.arange(j0, j1 + 1)
    terms = _log_binom_vec(j, k, q, t) + _log_binom_vec(s3 - j, n_rest, p, t)
    m = float(terms.max())
    if m == -np.inf:
        return -np.inf, 0.0, 0.0
    w = np.exp(terms - m)
    total = float(w.sum())
    log_m = m + log(total)
    if not grad:
        return log_m, 0.0, 0.0
    wn = w / total
    rp = float(wn @ ((s3 - j) / p - (n_rest - s3 + j) / (1.0 - p)))
    rq = float(wn @ (j / q - (k - j) / (1.0 - q)))
    return log_m, rp, rq


def log_joint_at(
    design: StudyDesign, s: PositiveCounts, p: float, q: float, k: int
) -> float:
    """Exact log joint density via the cached factorial table (scalar path)."""
    p, q = float(p), float(q)
    t = _lgamma_table(design.n_main)
    tc = _lgamma_table(max(design.n_cal_neg, design.n_cal_pos, 1))
    lf = _log_binom_at(s.s_cal_neg, design.n_cal_neg, p, tc)
    lf += _log_binom_at(s.s_cal_pos, design.n_cal_pos, q, tc)
    lm, _, _ = _log_main(s.s_main, k, design.n_main, q, p, t, grad=False)
    return float(lf + lm)


def _make_loglik(dataset: Dataset, grad: bool):
    """Smooth blended log-likelihood of psi (and its gradient when asked).

    The main factor at the real count pi*n_main is the linear blend of the
    integer-count factors at floor and ceiling; the blend weight makes the
    prevalence direction differentiable.
    """
    design, s = dataset.design, dataset.observed
    n1, n2, nm = design.n_cal_neg, design.n_cal_pos, design.n_main
    s1, s2, s3 = s.s_cal_neg, s.s_cal_pos, s.s_main
    t = _lgamma_table(nm)
    tc = _lgamma_table(max(n1, n2, 1))

    def loglik(psi: np.ndarray):
        p, q, pi = _clip_rates(expit(psi))
        kf = pi * nm
        k0 = int(floor(kf))
        k1 = min(k0 + 1, nm)
        w = kf - k0

        lm0, rp0, rq0 = _log_main(s3, k0, nm, q, p, t, grad)
        if k1 == k0:
            lm1, rp1, rq1 = lm0, rp0, rq0
        else:
            lm1, rp1, rq1 = _log_main(s3, k1, nm, q, p, t, grad)

        m = max(lm0, lm1)
        e0 = exp(lm0 - m)
        e1 = exp(lm1 - m)
        blend = (1.0 - w) * e0 + w * e1
        log_main = m + log(blend)

        value = (
            _log_binom_at(s1, n1, p, tc)
            + _log_binom_at(s2, n2, q, tc)
            + log_main
        )
        if not grad:
            return value

        w0 = (1.0 - w) * e0 / blend
        w1 = w * e1 / blend
        d_p = w0 * rp0 + w1 * rp1
        d_q = w0 * rq0 + w1 * rq1
        d_kf = (e1 - e0) / blend if k1 > k0 else 0.0
        g = np.array(
            [
                (s1 - n1 * p) + d_p * p * (1.0 - p),
                (s2 - n2 * q) + d_q * q * (1.0 - q),
                d_kf * nm * pi * (1.0 - pi),
            ]
        )
        return value, g

    return loglik


def _climb_k(e, k: int, n: int, cache: dict) -> tuple[int, float]:
    """Maximize a unimodal sequence e over 0..n starting near k.

    Gallops toward the peak in doubling steps, then re-probes neighbors;
    under unimodality a point beating both neighbors is the maximum, and a
    poor starting count costs O(log n) evaluations instead of O(n).
    """

    def ev(kk):
        v = cache.get(kk)
        if v is None:
            v = cache[kk] = e(kk)
        return v

    k = min(max(k, 0), n)
    v = ev(k)
    if v == -np.inf:
        for kk in np.unique(np.linspace(0, n, 65).astype(int)):
            vv = ev(int(kk))
            if vv > v:
                k, v = int(kk), vv
        if v == -np.inf:
            return k, v
    while True:
        up = ev(k + 1) if k + 1 <= n else -np.inf
        dn = ev(k - 1) if k - 1 >= 0 else -np.inf
        if up <= v and dn <= v:
            return k, v
        d = 1 if up >= dn else -1
        step = 1
        while True:
            kn = min(max(k + d * step, 0), n)
            vn = ev(kn)
            if vn > v:
                k, v = kn, vn
                if kn in (0, n):
                    break
                step *= 2
            else:
                break
        # Peak now lies within one step of k; resume with unit probes.


class OptimizationError(RuntimeError):
    """Raised when no optimizer start produced a usable optimum."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class MleResult:
    """Maximum-likelihood point with both continuous and integer-k views."""

    theta: ParamPoint
    log_likelihood: float  # at the rounded integer k
    psi: NaturalParams
    continuous_loglik: float
    converged: bool


def _moment_start(dataset: Dataset) -> np.ndarray:
    """Method-of-moments initial point; falls back to mid-range defaults."""
    design, s = dataset.design, dataset.observed
    p0 = s.s_cal_neg / design.n_cal_neg if design.n_cal_neg else 0.01
    q0 = s.s_cal_pos / design.n_cal_pos if design.n_cal_pos else 0.9
    if q0 > p0:
        pi0 = (s.s_main / design.n_main - p0) / (q0 - p0)
    else:
        pi0 = 0.01
    pi0 = min(max(pi0, 1e-4), 0.9)
    return NaturalParams.from_rates(p0, q0, pi0).as_array()


def mle(dataset: Dataset, starts: int = 8, seed: int = 0) -> MleResult:
    """Multi-start maximum likelihood with the count profiled out exactly.

    The blended likelihood is linear in the real-valued count within each
    unit cell, so its supremum over that axis always sits at an integer.
    Each start therefore runs BFGS over the logits of (p, q) alone, with an
    integer hill climb supplying the best count at every iterate; this keeps
    the outer surface smooth where gradient steps happen. The first start is
    moment-matched; the rest are drawn uniformly over (p, q, pi) in
    [0, 0.05] x [0.6, 1] x [0, 0.2].
    """
    if starts < 1:
        raise ValueError("starts must be at least 1")
    design, s = dataset.design, dataset.observed
    n1, n2, nm = design.n_cal_neg, design.n_cal_pos, design.n_main
    s1, s2, s3 = s.s_cal_neg, s.s_cal_pos, s.s_main
    t = _lgamma_table(nm)
    tc = _lgamma_table(max(n1, n2, 1))
    state = {"k": 0}

    def neg2(psi01):
        p, q = (float(v) for v in _clip_rates(expit(psi01)))
        cache: dict = {}
        k, lm = _climb_k(
            lambda kk: _log_main(s3, kk, nm, q, p, t, False)[0],
            state["k"],
            nm,
            cache,
        )
        state["k"] = k
        if lm == -np.inf:
            return np.inf, np.zeros(2)
        _, rp, rq = _log_main(s3, k, nm, q, p, t, True)
        value = _log_binom_at(s1, n1, p, tc) + _log_binom_at(s2, n2, q, tc) + lm
        g = np.array(
            [
                (s1 - n1 * p) + rp * p * (1.0 - p),
                (s2 - n2 * q) + rq * q * (1.0 - q),
            ]
        )
        return -value, -g

    rng = tagged_rng("mle", seed)
    initial = [_moment_start(dataset)]
    for _ in range(starts - 1):
        p0 = rng.uniform(0.0, 0.05)
        q0 = rng.uniform(0.6, 1.0)
        pi0 = rng.uniform(0.0, 0.2)
        initial.append(NaturalParams.from_rates(p0, q0, pi0).as_array())

    best = None
    best_fun = np.inf
    best_k = 0
    converged = False
    for x0 in initial:
        state["k"] = int(floor(expit(x0[2]) * nm + 0.5))
        try:
            res = minimize(neg2, x0[:2], jac=True, method="BFGS")
        except (ValueError, FloatingPointError):
            continue
        if not np.isfinite(res.fun):
            continue
        if res.fun < best_fun:
            # Line searches may evaluate past the optimum, so re-sync the
            # profiled count to the point actually returned.
            fun, _ = neg2(res.x)
            best_fun = float(fun)
            best = res.x
            best_k = state["k"]
            converged = bool(res.success)
    if best is None:
        raise OptimizationError("no start produced a finite optimum", best=None)

    pi_hat = best_k / nm if nm > 0 else 0.0
    psi = NaturalParams(
        float(best[0]), float(best[1]), logit_clamped(pi_hat)
    )
    theta = psi.to_param_point(nm)
    ll_int = log_joint_at(design, s, theta.p, theta.q, theta.k)
    return MleResult(
        theta=theta,
        log_likelihood=float(ll_int),
        psi=psi,
        continuous_loglik=-best_fun,
        converged=converged,
    )


def lrt_statistic(
    s: PositiveCounts,
    theta: ParamPoint,
    design: StudyDesign,
    starts: int = 4,
    seed: int = 0,
) -> float:
    """f(s | theta) / max_theta' f(s | theta'), in [0, 1].

    The denominator comes from mle on the dataset whose observed counts are
    s, floored at the numerator so integer rounding of the argmax can never
    push the ratio above one.
    """
    num = log_joint_at(design, s, theta.p, theta.q, theta.k)
    if num == -np.inf:
        return 0.0
    den = mle(Dataset("lrt-denominator", design, s), starts=starts, seed=seed)
    den_ll = max(den.log_likelihood, num)
    if den_ll == -np.inf:
        raise ValueError("degenerate likelihood: maximum is zero")
    return float(np.exp(num - den_ll))


@dataclass(frozen=True)
class LrtResult:
    """Simulated likelihood-ratio test at one parameter point."""

    theta: ParamPoint
    t_obs: float
    pvalue: float  # under the requested tail direction
    tail: str
    pvalue_lower: float
    reject: bool  # small ratios witness against theta: always the lower tail
    r: int
    seed: int


def _lrt_sims(theta, design, r, seed, starts, progress=None) -> np.ndarray:
    t_sims = np.empty(r)
    for j in range(r):
        s_j = simulate_study(theta, design, seed, index=j)
        t_sims[j] = lrt_statistic(s_j, theta, design, starts=starts, seed=seed)
        if progress is not None:
            progress(j + 1, r)
    return t_sims


def lrt_pvalue(
    theta: ParamPoint,
    dataset: Dataset,
    r: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
    tail: str = "upper",
    starts: int = 4,
    progress=None,
) -> LrtResult:
    """Monte Carlo p-value of the likelihood-ratio statistic at theta.

    tail="upper" counts simulated statistics at least as large as the
    observed one; tail="lower" counts those at most as large (small ratios
    are the evidence against theta). The reject flag always uses the lower
    tail at level alpha.
    """
    if r < 1:
        raise ValueError("r must be at least 1")
    if tail not in ("upper", "lower"):
        raise ValueError(f"tail must be upper or lower, got {tail!r}")
    design = dataset.design
    t_obs = lrt_statistic(dataset.observed, theta, design, starts=starts, seed=seed)
    t_sims = _lrt_sims(theta, design, r, seed, starts, progress)
    p_upper = float((t_sims >= t_obs).mean())
    p_lower = float((t_sims <= t_obs).mean())
    return LrtResult(
        theta=theta,
        t_obs=float(t_obs),
        pvalue=p_upper if tail == "upper" else p_lower,
        tail=tail,
        pvalue_lower=p_lower,
        reject=p_lower <= alpha,
        r=r,
        seed=seed,
    )


@dataclass(frozen=True, eq=False)
class Chain:
    """Metropolis-Hastings output: full trace plus post-burn sample view."""

    psi_trace: np.ndarray  # (iters, 3), state after each iteration
    loglik_trace: np.ndarray  # (iters,)
    accepted: np.ndarray  # (iters,) bool
    burn: int
    seed: int
    proposal_sd: float
    mode: str

    @property
    def samples(self) -> np.ndarray:
        """Post-burn psi samples, shape (iters - burn, 3)."""
        return self.psi_trace[self.burn :]

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    def rates(self) -> np.ndarray:
        """Post-burn (p, q, pi) rows."""
        return _clip_rates(expit(self.samples))

    def prevalence(self) -> np.ndarray:
        return self.rates()[:, 2]

    def dump_csv(self, fp, include_burn: bool = False) -> None:
        """Trace as iter,psi0,psi1,psi2,loglik,accepted (post-burn by default).

        The iter column keeps absolute iteration indices, so the burn-in
        cutoff stays visible in exported files.
        """
        fp.write("iter,psi0,psi1,psi2,loglik,accepted\n")
        start = 0 if include_burn else self.burn
        for i in range(start, self.psi_trace.shape[0]):
            a, b, c = (float(v) for v in self.psi_trace[i])
            fp.write(
                f"{i},{a!r},{b!r},{c!r},{float(self.loglik_trace[i])!r},"
                f"{'true' if self.accepted[i] else 'false'}\n"
            )


def mh_sample(
    dataset: Dataset,
    iters: int = 200_000,
    burn_frac: float = 0.2,
    proposal_sd: float = 0.25,
    seed: int = 0,
    mode: str = "random-walk",
    init: NaturalParams | None = None,
) -> Chain:
    """Metropolis-Hastings on the logits with a flat prior.

    mode="random-walk" proposes around the current state (symmetric, plain
    Metropolis rule). mode="independence" proposes around the MLE point with
    the matching Hastings correction.
    """
    if iters < 1000:
        raise ValueError("iters must be at least 1000")
    if not 0.0 <= burn_frac <= 0.9:
        raise ValueError("burn_frac must be in [0, 0.9]")
    if proposal_sd <= 0:
        raise ValueError("proposal_sd must be positive")
    if mode not in ("random-walk", "independence"):
        raise ValueError(f"mode must be random-walk or independence, got {mode!r}")

    loglik = _make_loglik(dataset, grad=False)
    if init is None:
        x = _moment_start(dataset)
    else:
        x = init.as_array()
    center = None
    if mode == "independence":
        center = mle(dataset, seed=seed).psi.as_array()

    rng = tagged_rng("mcmc", seed)
    noise = rng.normal(0.0, proposal_sd, size=(iters, 3))
    log_u = np.log(rng.uniform(size=iters))

    psi_trace = np.empty((iters, 3))
    ll_trace = np.empty(iters)
    acc = np.zeros(iters, dtype=bool)

    ll = loglik(x)
    for i in range(iters):
        if mode == "random-walk":
            prop = x + noise[i]
            log_ratio = 0.0
        else:
            prop = center + noise[i]
            # Hastings: q(x | .) / q(prop | .) for the fixed-center Gaussian
            log_ratio = (
                ((prop - center) ** 2).sum() - ((x - center) ** 2).sum()
            ) / (2.0 * proposal_sd**2)
        ll_prop = loglik(prop)
        if log_u[i] < (ll_prop - ll) + log_ratio:
            x = prop
            ll = ll_prop
            acc[i] = True
        psi_trace[i] = x
        ll_trace[i] = ll

    return Chain(
        psi_trace=psi_trace,
        loglik_trace=ll_trace,
        accepted=acc,
        burn=int(floor(iters * burn_frac)),
        seed=seed,
        proposal_sd=proposal_sd,
        mode=mode,
    )


@dataclass(frozen=True, eq=False)
class McConfidenceSet:
    """Super-level set of the observed-data likelihood at a sampled cutoff.

    Field names mirror ConfidenceSet where they overlap, so projection works
    on either (membership is the same for both method names).
    """

    grid: ParamGrid
    n_main: int
    cutoff: float  # 95th percentile of the chain's likelihood values
    log_density: np.ndarray  # log f(s_obs | theta) per canonical grid point
    in_basic: np.ndarray
    in_alt: np.ndarray

    def __len__(self) -> int:
        return self.grid.size


def mc_confset(chain: Chain, dataset: Dataset, grid: ParamGrid) -> McConfidenceSet:
    """Grid membership by likelihood cutoff from a quasi-posterior chain.

    The cutoff is the 95th percentile of f(s_obs | theta_j) over post-burn
    samples (logits mapped back to rates, prevalence rounded to integer k);
    a grid point belongs to the set when f(s_obs | theta) >= cutoff.
    """
    samples = chain.samples
    if samples.shape[0] == 0:
        raise ValueError("empty chain")
    design, s_obs = dataset.design, dataset.observed
    nm = design.n_main

    rates = chain.rates()
    ks = np.floor(rates[:, 2] * nm + 0.5).astype(np.int64)
    values = np.empty(rates.shape[0])
    cache: dict[tuple[float, float, int], float] = {}
    for i in range(rates.shape[0]):
        key = (float(rates[i, 0]), float(rates[i, 1]), int(ks[i]))
        got = cache.get(key)
        if got is None:
            got = log_joint_at(design, s_obs, key[0], key[1], key[2])
            cache[key] = got
        values[i] = got
    cutoff = float(np.percentile(np.exp(values), 95.0))

    lg = log_joint_grid(dataset, grid)
    member = np.exp(lg) >= cutoff
    return McConfidenceSet(
        grid=grid,
        n_main=nm,
        cutoff=cutoff,
        log_density=lg,
        in_basic=member,
        in_alt=member.copy(),
    )
