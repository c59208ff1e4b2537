"""Domain types, exact joint densities, and forward simulation.

A serology study produces three binomial counts: positives among known
negatives (rate p), positives among known positives (rate q), and positives
in the main study, where the count is Binom(k, q) + Binom(n_main - k, p) for
an integer infected count k. The joint density of the observed triple is the
product of the three factors. All pmf work happens in natural-log space;
exponentiation is deferred to the final value.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from math import lgamma, log, log1p
from typing import Iterator

import numpy as np

from ._backend import kernels

# Per-factor pruning threshold (natural log). The level-set count is taken
# over the retained support, so the threshold is part of the basic statistic's
# operational definition: everything with per-factor log-mass above -100 is
# kept. That is deep enough for the retained count to stabilize while the
# dropped mass (reported as a deficit) stays around 1e-13 on the built-in
# designs.
DEFAULT_PRUNE_TOL = -100.0

# Two densities are treated as tied when their logs differ by at most this.
# Ties resolve toward inclusion in level sets.
TIE_TOL = 1e-12

_STREAM_TAGS = {"sim": 1, "coverage": 2, "lrt": 3, "mle": 4, "mcmc": 5, "sample": 6}


def tagged_rng(tag: str, seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for an independent (seed, purpose, index) stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_TAGS[tag], index))
    return np.random.Generator(np.random.Philox(ss))


def _as_count(name: str, value) -> int:
    # bool passes operator.index; counts must be genuine integers.
    if isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    try:
        value = operator.index(value)
    except TypeError:
        raise TypeError(f"{name} must be an integer, got {value!r}") from None
    if value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value}")
    return value


def _as_rate(name: str, value) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class StudyDesign:
    """Sample sizes: negative calibration arm, positive calibration arm, main study."""

    n_cal_neg: int
    n_cal_pos: int
    n_main: int

    def __post_init__(self):
        object.__setattr__(self, "n_cal_neg", _as_count("n_cal_neg", self.n_cal_neg))
        object.__setattr__(self, "n_cal_pos", _as_count("n_cal_pos", self.n_cal_pos))
        object.__setattr__(self, "n_main", _as_count("n_main", self.n_main))
        if self.n_main < 1:
            raise ValueError("n_main must be at least 1")


@dataclass(frozen=True)
class PositiveCounts:
    """Observed positives in each study; a point of the sample space."""

    s_cal_neg: int
    s_cal_pos: int
    s_main: int

    def __post_init__(self):
        object.__setattr__(self, "s_cal_neg", _as_count("s_cal_neg", self.s_cal_neg))
        object.__setattr__(self, "s_cal_pos", _as_count("s_cal_pos", self.s_cal_pos))
        object.__setattr__(self, "s_main", _as_count("s_main", self.s_main))

    def check_against(self, design: StudyDesign) -> None:
        """Raise ValueError unless every count fits its study size."""
        bounds = (
            ("s_cal_neg", self.s_cal_neg, design.n_cal_neg),
            ("s_cal_pos", self.s_cal_pos, design.n_cal_pos),
            ("s_main", self.s_main, design.n_main),
        )
        for name, s, n in bounds:
            if s > n:
                raise ValueError(f"{name}={s} exceeds its study size {n}")


@dataclass(frozen=True)
class ParamPoint:
    """Parameter triple: false positive rate p, true positive rate q, infected count k."""

    p: float
    q: float
    k: int

    def __post_init__(self):
        object.__setattr__(self, "p", _as_rate("p", self.p))
        object.__setattr__(self, "q", _as_rate("q", self.q))
        object.__setattr__(self, "k", _as_count("k", self.k))

    def prevalence(self, n_main: int) -> float:
        """Prevalence k / n_main; always derived from the integer count."""
        return self.k / n_main

    def check_against(self, design: StudyDesign) -> None:
        if self.k > design.n_main:
            raise ValueError(f"k={self.k} exceeds n_main={design.n_main}")


@dataclass(frozen=True)
class Dataset:
    """A labeled design together with its observed counts."""

    label: str
    design: StudyDesign
    observed: PositiveCounts
    notes: str = ""

    def __post_init__(self):
        self.observed.check_against(self.design)


def binom_log_pmf(k: int, n: int, s: float) -> float:
    """Log pmf of Binom(n, s) at k, exact at the s = 0 and s = 1 boundaries."""
    k = _as_count("k", k)
    n = _as_count("n", n)
    s = _as_rate("s", s)
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if s == 0.0:
        return 0.0 if k == 0 else -np.inf
    if s == 1.0:
        return 0.0 if k == n else -np.inf
    return (
        lgamma(n + 1.0)
        - lgamma(k + 1.0)
        - lgamma(n - k + 1.0)
        + k * log(s)
        + (n - k) * log1p(-s)
    )


def _log_main_pruned(
    s_main: int, k: int, q: float, p: float, n_main: int, prune_tol: float
) -> float:
    """Log of the two-binomial-sum pmf keeping only terms with both factors above tol."""
    la = kernels.logpmf_vector(k, q)
    lb = kernels.logpmf_vector(n_main - k, p)
    j0 = max(0, s_main - (n_main - k))
    j1 = min(k, s_main)
    if j0 > j1:
        return -np.inf
    ta = la[j0 : j1 + 1]
    tb = lb[s_main - j1 : s_main - j0 + 1][::-1]
    keep = (ta > prune_tol) & (tb > prune_tol)
    if not keep.any():
        return -np.inf
    terms = ta[keep] + tb[keep]
    m = float(terms.max())
    return m + float(np.log(np.exp(terms - m).sum()))


def main_pmf(
    s_main: int,
    theta: ParamPoint,
    design: StudyDesign,
    prune_tol: float | None = None,
) -> float:
    """Pmf of the main-study positive count under theta.

    With prune_tol set, convolution terms where either binomial factor's log
    falls below the threshold are skipped.
    """
    s_main = _as_count("s_main", s_main)
    theta.check_against(design)
    if s_main > design.n_main:
        raise ValueError(f"s_main={s_main} exceeds n_main={design.n_main}")
    if prune_tol is None:
        return float(
            np.exp(kernels.log_main_at(s_main, theta.k, theta.q, theta.p, design.n_main))
        )
    return float(
        np.exp(
            _log_main_pruned(
                s_main, theta.k, theta.q, theta.p, design.n_main, prune_tol
            )
        )
    )


def log_joint_density(
    s: PositiveCounts,
    theta: ParamPoint,
    design: StudyDesign,
    prune_tol: float | None = None,
) -> float:
    """Natural log of the three-factor joint density of s under theta."""
    s.check_against(design)
    theta.check_against(design)
    # Zero-size calibration arms contribute log 1 = 0 (s must then be 0 too).
    lf = binom_log_pmf(s.s_cal_neg, design.n_cal_neg, theta.p)
    lf += binom_log_pmf(s.s_cal_pos, design.n_cal_pos, theta.q)
    if prune_tol is None:
        lf += kernels.log_main_at(s.s_main, theta.k, theta.q, theta.p, design.n_main)
    else:
        lf += _log_main_pruned(
            s.s_main, theta.k, theta.q, theta.p, design.n_main, prune_tol
        )
    return float(lf)


def joint_density(
    s: PositiveCounts,
    theta: ParamPoint,
    design: StudyDesign,
    prune_tol: float | None = None,
) -> float:
    """Joint density of the observed triple under theta; exponentiated once."""
    return float(np.exp(log_joint_density(s, theta, design, prune_tol)))


class DensityTable:
    """Retained joint density of one parameter point, stored factorized.

    The joint pmf is a product of three independent factors, so the table
    keeps one pruned support window per factor (log values plus an integer
    offset) rather than materializing the cartesian product. It acts as a
    sparse mapping from PositiveCounts to probability: points outside the
    windows have probability zero. total_mass is the retained product mass.
    """

    def __init__(
        self,
        theta: ParamPoint,
        design: StudyDesign,
        prune_tol: float,
        windows: tuple[tuple[np.ndarray, int], ...],
    ):
        self.theta = theta
        self.design = design
        self.prune_tol = float(prune_tol)
        self._windows = windows
        mass = 1.0
        for values, _ in windows:
            mass *= float(np.exp(values).sum()) if values.size else 0.0
        self.total_mass = mass

    @property
    def mass_deficit(self) -> float:
        """Upper bound on the probability mass lost to pruning."""
        return max(0.0, 1.0 - self.total_mass)

    def __len__(self) -> int:
        n = 1
        for values, _ in self._windows:
            n *= int(values.size)
        return n

    def log_prob(self, s: PositiveCounts) -> float:
        """Retained log density at s; -inf outside the windows."""
        total = 0.0
        for (values, offset), c in zip(
            self._windows, (s.s_cal_neg, s.s_cal_pos, s.s_main)
        ):
            i = c - offset
            if not 0 <= i < values.size:
                return -np.inf
            total += float(values[i])
        return total

    def get(self, s: PositiveCounts, default: float = 0.0) -> float:
        lp = self.log_prob(s)
        return float(np.exp(lp)) if lp != -np.inf else default

    def __getitem__(self, s: PositiveCounts) -> float:
        lp = self.log_prob(s)
        if lp == -np.inf:
            raise KeyError(s)
        return float(np.exp(lp))

    def __contains__(self, s: PositiveCounts) -> bool:
        return self.log_prob(s) != -np.inf

    def log_masses(self) -> np.ndarray:
        """Flattened log probabilities of the retained support."""
        (l1, _), (l2, _), (lm, _) = self._windows
        return (l1[:, None, None] + l2[None, :, None] + lm[None, None, :]).ravel()

    def masses(self) -> np.ndarray:
        return np.exp(self.log_masses())

    def items(self) -> Iterator[tuple[PositiveCounts, float]]:
        """Lazy (point, probability) pairs in canonical order."""
        (l1, o1), (l2, o2), (lm, om) = self._windows
        for i, a in enumerate(l1):
            for j, b in enumerate(l2):
                for m, c in enumerate(lm):
                    yield (
                        PositiveCounts(o1 + i, o2 + j, om + m),
                        float(np.exp(a + b + c)),
                    )


def density_table(
    theta: ParamPoint,
    design: StudyDesign,
    prune_tol: float = DEFAULT_PRUNE_TOL,
) -> DensityTable:
    """Build the pruned density table of theta over the design's sample space."""
    theta.check_against(design)
    windows = []
    for n, rate in ((design.n_cal_neg, theta.p), (design.n_cal_pos, theta.q)):
        lv = kernels.logpmf_vector(n, rate)
        lo, hi = kernels.window_bounds(lv, prune_tol)
        windows.append((np.asarray(lv[lo:hi]), lo))
    lm, om = kernels.main_log_window(
        theta.k, theta.q, theta.p, design.n_main, prune_tol
    )
    windows.append((np.asarray(lm), om))
    return DensityTable(theta, design, prune_tol, tuple(windows))


def simulate_study(
    theta: ParamPoint, design: StudyDesign, seed: int, index: int = 0
) -> PositiveCounts:
    """Draw one study outcome under theta.

    The draw comes from a counter-based stream keyed by (seed, index), so
    identical inputs give bit-identical outputs regardless of call order.
    """
    theta.check_against(design)
    rng = tagged_rng("sim", seed, index)
    s_cal_neg = int(rng.binomial(design.n_cal_neg, theta.p))
    s_cal_pos = int(rng.binomial(design.n_cal_pos, theta.q))
    s_main = int(rng.binomial(theta.k, theta.q)) + int(
        rng.binomial(design.n_main - theta.k, theta.p)
    )
    return PositiveCounts(s_cal_neg, s_cal_pos, s_main)
