"""Confidence sets for (p, q, prevalence) by exact test inversion on a grid.

Two constructions are computed from the same pruned density table of each
parameter point:

  basic  accept when f(s_obs) * nu(f(s_obs)) > alpha, where nu counts the
         retained sample points with positive density at most the observed
         density;
  alt    accept when the total retained mass at or below the observed
         density level exceeds alpha.

The alt value never exceeds the basic value (the mass of a level set is at
most its count times the level), so the alt set is always a subset of the
basic set. Scans evaluate every grid point and emit records in canonical
(p, q, k) lexicographic order, independent of worker count.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from math import floor
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from ._backend import backend_name, get_backend, kernels
from .model import (
    DEFAULT_PRUNE_TOL,
    TIE_TOL,
    Dataset,
    ParamPoint,
    PositiveCounts,
    StudyDesign,
    density_table,
    simulate_study,
)

DEFAULT_ALPHA = 0.05

# Default axis ladders: start, stop, step. The k axis is stepped so that
# prevalence advances by about 0.1 percentage points per grid step.
DEFAULT_P_RANGE = (0.0, 0.05, 0.0005)
DEFAULT_Q_RANGE = (0.6, 1.0, 0.005)
DEFAULT_PI_RANGE = (0.0, 0.2, 0.001)

_AXES = ("p", "q", "pi")

Interval = tuple[float, float]
ProgressFn = Callable[[int, int], None]


def range_values(start: float, stop: float, step: float) -> tuple[float, ...]:
    """Inclusive arithmetic ladder start, start+step, ..., stop."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(floor((stop - start) / step + 1e-9))
    # round away accumulated float noise so ladder values compare cleanly
    return tuple(round(start + i * step, 12) for i in range(n + 1))


def k_values_from_pi(pi_values: Sequence[float], n_main: int) -> tuple[int, ...]:
    """Map prevalence values to integer infected counts (half rounds up)."""
    ks = {int(floor(v * n_main + 0.5)) for v in pi_values}
    return tuple(sorted(ks))


@dataclass(frozen=True)
class ParamGrid:
    """Sorted, deduplicated axis values defining the scan grid."""

    p_values: tuple[float, ...]
    q_values: tuple[float, ...]
    k_values: tuple[int, ...]

    def __post_init__(self):
        p = tuple(sorted({float(v) for v in self.p_values}))
        q = tuple(sorted({float(v) for v in self.q_values}))
        k = tuple(sorted({int(v) for v in self.k_values}))
        if not (p and q and k):
            raise ValueError("every grid axis must be nonempty")
        if p[0] < 0.0 or p[-1] > 1.0 or q[0] < 0.0 or q[-1] > 1.0 or k[0] < 0:
            raise ValueError("grid values outside their legal ranges")
        object.__setattr__(self, "p_values", p)
        object.__setattr__(self, "q_values", q)
        object.__setattr__(self, "k_values", k)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.p_values), len(self.q_values), len(self.k_values))

    @property
    def size(self) -> int:
        a, b, c = self.shape
        return a * b * c

    def theta_at(self, flat: int) -> ParamPoint:
        """Parameter point at a canonical flat index."""
        _, nq, nk = self.shape
        ip, rem = divmod(flat, nq * nk)
        iq, ik = divmod(rem, nk)
        return ParamPoint(self.p_values[ip], self.q_values[iq], self.k_values[ik])

    def indices_of(self, theta: ParamPoint) -> tuple[int, int, int]:
        """Axis indices of theta; raises when theta is not a grid point."""
        ip = _match_value(self.p_values, theta.p, "p")
        iq = _match_value(self.q_values, theta.q, "q")
        try:
            ik = self.k_values.index(theta.k)
        except ValueError:
            raise ValueError(f"k={theta.k} is not on the grid") from None
        return ip, iq, ik


def _match_value(values: Sequence[float], target: float, name: str) -> int:
    arr = np.asarray(values)
    i = int(np.argmin(np.abs(arr - target)))
    if abs(arr[i] - target) > 1e-9 * max(1.0, abs(target)):
        raise ValueError(f"{name}={target} is not a grid value (nearest: {arr[i]})")
    return i


def default_grid(design: StudyDesign) -> ParamGrid:
    """Default scan grid for a design.

    p and q use the default ladders; k steps by max(1, round(0.001 * n_main))
    up to round(0.2 * n_main), so prevalence resolution is ~0.1 points.
    """
    p = range_values(*DEFAULT_P_RANGE)
    q = range_values(*DEFAULT_Q_RANGE)
    step = max(1, int(floor(0.001 * design.n_main + 0.5)))
    k_max = int(floor(DEFAULT_PI_RANGE[1] * design.n_main + 0.5))
    k_max = min(k_max, design.n_main)
    return ParamGrid(p, q, tuple(range(0, k_max + 1, step)))


@dataclass(frozen=True)
class PointEvidence:
    """Evidence values and membership flags for one grid point."""

    theta: ParamPoint
    evidence_basic: float
    evidence_alt: float
    in_basic: bool
    in_alt: bool
    mass_deficit: float


@dataclass(frozen=True, eq=False)
class ConfidenceSet:
    """Scan result: per-grid-point evidence columns in canonical order."""

    grid: ParamGrid
    alpha: float
    dataset_label: str
    n_main: int
    prune_tol: float
    method: str
    evidence_basic: np.ndarray
    evidence_alt: np.ndarray
    in_basic: np.ndarray
    in_alt: np.ndarray
    mass_deficit: np.ndarray

    def __len__(self) -> int:
        return self.grid.size

    def record(self, flat: int) -> PointEvidence:
        return PointEvidence(
            theta=self.grid.theta_at(flat),
            evidence_basic=float(self.evidence_basic[flat]),
            evidence_alt=float(self.evidence_alt[flat]),
            in_basic=bool(self.in_basic[flat]),
            in_alt=bool(self.in_alt[flat]),
            mass_deficit=float(self.mass_deficit[flat]),
        )

    def iter_records(self) -> Iterator[PointEvidence]:
        for flat in range(self.grid.size):
            yield self.record(flat)

    def membership(self, theta: ParamPoint) -> tuple[bool, bool]:
        """(in_basic, in_alt) flags at a grid point."""
        ip, iq, ik = self.grid.indices_of(theta)
        _, nq, nk = self.grid.shape
        flat = (ip * nq + iq) * nk + ik
        return bool(self.in_basic[flat]), bool(self.in_alt[flat])

    @property
    def max_mass_deficit(self) -> float:
        return float(self.mass_deficit.max()) if len(self) else 0.0

    def dump_csv(self, fp) -> None:
        """Write all records as CSV with full round-trip precision."""
        fp.write(
            "p,q,k,pi,evidence_basic,evidence_alt,in_basic,in_alt,mass_deficit\n"
        )
        _, nq, nk = self.grid.shape
        eb, ea = self.evidence_basic, self.evidence_alt
        ib, ia, md = self.in_basic, self.in_alt, self.mass_deficit
        flat = 0
        for p in self.grid.p_values:
            for q in self.grid.q_values:
                for k in self.grid.k_values:
                    fp.write(
                        f"{p!r},{q!r},{k},{k / self.n_main!r},"
                        f"{float(eb[flat])!r},{float(ea[flat])!r},"
                        f"{'true' if ib[flat] else 'false'},"
                        f"{'true' if ia[flat] else 'false'},"
                        f"{float(md[flat])!r}\n"
                    )
                    flat += 1

    def dump_json(self, fp, extra_metadata: Mapping | None = None) -> None:
        """Write the metadata header plus data columns in canonical order."""
        from . import __version__

        meta = {
            "dataset": self.dataset_label,
            "alpha": self.alpha,
            "n_main": self.n_main,
            "prune_tol": self.prune_tol,
            "method": self.method,
            "version": __version__,
            "grid": {
                "p_values": list(self.grid.p_values),
                "q_values": list(self.grid.q_values),
                "k_values": list(self.grid.k_values),
            },
        }
        if extra_metadata:
            meta.update(extra_metadata)
        obj = {
            "metadata": meta,
            "columns": {
                "evidence_basic": self.evidence_basic.tolist(),
                "evidence_alt": self.evidence_alt.tolist(),
                "in_basic": self.in_basic.tolist(),
                "in_alt": self.in_alt.tolist(),
                "mass_deficit": self.mass_deficit.tolist(),
            },
        }
        json.dump(obj, fp)


def load_set(path: str | os.PathLike) -> ConfidenceSet:
    """Load a ConfidenceSet written as JSON (full metadata) or CSV."""
    with open(path, "r", encoding="utf-8") as fp:
        head = fp.read(1)
        fp.seek(0)
        if head == "{":
            return _set_from_json(json.load(fp))
        return _set_from_csv(fp)


def _set_from_json(obj: Mapping) -> ConfidenceSet:
    meta = obj["metadata"]
    cols = obj["columns"]
    grid = ParamGrid(
        tuple(meta["grid"]["p_values"]),
        tuple(meta["grid"]["q_values"]),
        tuple(meta["grid"]["k_values"]),
    )
    return ConfidenceSet(
        grid=grid,
        alpha=float(meta["alpha"]),
        dataset_label=str(meta["dataset"]),
        n_main=int(meta["n_main"]),
        prune_tol=float(meta["prune_tol"]),
        method=str(meta["method"]),
        evidence_basic=np.asarray(cols["evidence_basic"], dtype=float),
        evidence_alt=np.asarray(cols["evidence_alt"], dtype=float),
        in_basic=np.asarray(cols["in_basic"], dtype=bool),
        in_alt=np.asarray(cols["in_alt"], dtype=bool),
        mass_deficit=np.asarray(cols["mass_deficit"], dtype=float),
    )


def _set_from_csv(fp) -> ConfidenceSet:
    reader = csv.DictReader(fp)
    rows = list(reader)
    if not rows:
        raise ValueError("empty confidence-set file")
    p = sorted({float(r["p"]) for r in rows})
    q = sorted({float(r["q"]) for r in rows})
    k = sorted({int(r["k"]) for r in rows})
    grid = ParamGrid(tuple(p), tuple(q), tuple(k))
    if len(rows) != grid.size:
        raise ValueError("row count does not match the implied grid")
    n_main = 0
    for r in rows:
        if int(r["k"]) > 0 and float(r["pi"]) > 0:
            n_main = int(floor(int(r["k"]) / float(r["pi"]) + 0.5))
            break
    n_main = n_main or max(k[-1], 1)
    eb = np.array([float(r["evidence_basic"]) for r in rows])
    ea = np.array([float(r["evidence_alt"]) for r in rows])
    ib = np.array([r["in_basic"] == "true" for r in rows])
    ia = np.array([r["in_alt"] == "true" for r in rows])
    md = np.array([float(r["mass_deficit"]) for r in rows])
    # CSV carries no run metadata; flags are taken as stored
    return ConfidenceSet(
        grid=grid,
        alpha=float("nan"),
        dataset_label="",
        n_main=n_main,
        prune_tol=float("nan"),
        method="both",
        evidence_basic=eb,
        evidence_alt=ea,
        in_basic=ib,
        in_alt=ia,
        mass_deficit=md,
    )


class MassTable:
    """Explicit probability table over an abstract finite sample space.

    Useful for synthetic constructions and very small designs; exposes the
    same minimal surface as a model density table (log_masses, get,
    total_mass), with sample points addressed by index or key.
    """

    def __init__(self, masses: Sequence[float], keys: Sequence | None = None):
        arr = np.asarray(masses, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("masses must be a nonempty 1-d sequence")
        if (arr < 0).any():
            raise ValueError("masses must be nonnegative")
        self._masses = arr
        self._index = (
            {key: i for i, key in enumerate(keys)} if keys is not None else None
        )
        self.total_mass = float(arr.sum())

    @property
    def mass_deficit(self) -> float:
        return max(0.0, 1.0 - self.total_mass)

    def __len__(self) -> int:
        return int(self._masses.size)

    def log_masses(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self._masses)

    def get(self, key, default: float = 0.0) -> float:
        i = self._index[key] if self._index is not None else key
        return float(self._masses[i])


def nu_level_count(z: float, table, tie_tol: float = TIE_TOL) -> int:
    """Count retained sample points with positive probability at most z.

    Ties at the level z resolve toward inclusion: a point counts when its
    log mass is within tie_tol of log z or below.
    """
    if z < 0:
        raise ValueError("level z must be nonnegative")
    if z == 0.0:
        return 0
    lm = np.asarray(table.log_masses())
    lm = lm[lm > -np.inf]
    return int((lm <= np.log(z) + tie_tol).sum())


def level_mass(z: float, table, tie_tol: float = TIE_TOL) -> float:
    """Total retained probability mass at or below the level z."""
    if z <= 0.0:
        return 0.0
    lm = np.asarray(table.log_masses())
    lm = lm[lm > -np.inf]
    sel = lm <= np.log(z) + tie_tol
    if not sel.any():
        return 0.0
    kept = lm[sel]
    m = kept.max()
    return float(np.exp(m) * np.exp(kept - m).sum())


def _kernel_evidence(
    s_obs: PositiveCounts,
    theta: ParamPoint,
    design: StudyDesign,
    prune_tol: float,
    tie_tol: float,
) -> tuple[float, int, float, float]:
    s_obs.check_against(design)
    theta.check_against(design)
    return kernels.theta_evidence(
        design.n_cal_neg,
        design.n_cal_pos,
        design.n_main,
        theta.p,
        theta.q,
        theta.k,
        s_obs.s_cal_neg,
        s_obs.s_cal_pos,
        s_obs.s_main,
        prune_tol,
        tie_tol,
    )


def basic_evidence(
    s_obs,
    theta: ParamPoint | None = None,
    design: StudyDesign | None = None,
    *,
    table=None,
    prune_tol: float = DEFAULT_PRUNE_TOL,
    tie_tol: float = TIE_TOL,
) -> float:
    """f(s_obs) times the level-set count at f(s_obs); accept when > alpha.

    Pass (theta, design) for the model density, or table= to evaluate over an
    explicit table (s_obs is then the table key of the observed point).
    """
    if table is not None:
        z = table.get(s_obs)
        return z * nu_level_count(z, table, tie_tol)
    logf, nu, _, _ = _kernel_evidence(s_obs, theta, design, prune_tol, tie_tol)
    return float(np.exp(logf) * nu)


def alt_evidence(
    s_obs,
    theta: ParamPoint | None = None,
    design: StudyDesign | None = None,
    *,
    table=None,
    prune_tol: float = DEFAULT_PRUNE_TOL,
    tie_tol: float = TIE_TOL,
) -> float:
    """Retained mass at or below the observed density level; accept when > alpha."""
    if table is not None:
        return level_mass(table.get(s_obs), table, tie_tol)
    _, _, alt, _ = _kernel_evidence(s_obs, theta, design, prune_tol, tie_tol)
    return float(alt)


def point_evidence(
    s_obs: PositiveCounts,
    theta: ParamPoint,
    design: StudyDesign,
    prune_tol: float = DEFAULT_PRUNE_TOL,
    tie_tol: float = TIE_TOL,
) -> tuple[float, float, float]:
    """(basic, alt, mass_deficit) for one parameter point in a single pass."""
    logf, nu, alt, deficit = _kernel_evidence(s_obs, theta, design, prune_tol, tie_tol)
    return float(np.exp(logf) * nu), float(alt), float(deficit)


def epsilon_bound(
    theta: ParamPoint | None = None,
    design: StudyDesign | None = None,
    *,
    table=None,
    prune_tol: float = DEFAULT_PRUNE_TOL,
    tie_tol: float = TIE_TOL,
) -> float:
    """Maximal probability mass tied at a single density level.

    Bounds how conservative the alt construction can be. Sorted log masses
    are chained into tie groups (adjacent gap at most tie_tol), which can
    only merge more than pairwise comparison would, keeping the bound on the
    safe side.
    """
    if table is None:
        table = density_table(theta, design, prune_tol)
    lm = np.asarray(table.log_masses())
    lm = np.sort(lm[lm > -np.inf])
    if lm.size == 0:
        return 0.0
    starts = np.concatenate(([0], np.nonzero(np.diff(lm) > tie_tol)[0] + 1))
    shift = lm[-1]
    sums = np.add.reduceat(np.exp(lm - shift), starts)
    return float(sums.max() * np.exp(shift))


def _scan_worker(backend, design_t, obs_t, pv, qv, kv, start, stop, prune_tol, tie_tol):
    kern = get_backend(backend)
    return kern.scan_chunk(
        design_t[0],
        design_t[1],
        design_t[2],
        obs_t[0],
        obs_t[1],
        obs_t[2],
        pv,
        qv,
        kv,
        start,
        stop,
        prune_tol,
        tie_tol,
    )


def scan_grid(
    grid: ParamGrid,
    dataset: Dataset,
    alpha: float = DEFAULT_ALPHA,
    method: str = "both",
    workers: int = 1,
    prune_tol: float = DEFAULT_PRUNE_TOL,
    tie_tol: float = TIE_TOL,
    progress: ProgressFn | None = None,
) -> ConfidenceSet:
    """Evaluate both evidence values at every grid point.

    Work is split into contiguous chunks of the canonical order; results are
    written back by chunk offset, so the output is bit-identical for any
    worker count.
    """
    if method not in ("basic", "alt", "both"):
        raise ValueError(f"method must be basic, alt or both, got {method!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    design = dataset.design
    if grid.size == 0:
        raise ValueError("empty grid")
    if grid.k_values[-1] > design.n_main:
        raise ValueError(
            f"grid k up to {grid.k_values[-1]} exceeds n_main={design.n_main}"
        )

    total = grid.size
    pv = np.asarray(grid.p_values)
    qv = np.asarray(grid.q_values)
    kv = np.asarray(grid.k_values, dtype=np.int64)
    obs = dataset.observed
    design_t = (design.n_cal_neg, design.n_cal_pos, design.n_main)
    obs_t = (obs.s_cal_neg, obs.s_cal_pos, obs.s_main)

    logf = np.empty(total)
    nu = np.empty(total, dtype=np.int64)
    alt = np.empty(total)
    deficit = np.empty(total)

    n_chunks = min(total, max(workers * 4, 32))
    bounds = np.linspace(0, total, n_chunks + 1, dtype=np.int64)
    spans = [
        (int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a
    ]

    done = 0
    if workers == 1:
        for a, b in spans:
            res = kernels.scan_chunk(
                *design_t, *obs_t, pv, qv, kv, a, b, prune_tol, tie_tol
            )
            logf[a:b], nu[a:b], alt[a:b], deficit[a:b] = res
            done += b - a
            if progress is not None:
                progress(done, total)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(
                    _scan_worker,
                    backend_name(),
                    design_t,
                    obs_t,
                    pv,
                    qv,
                    kv,
                    a,
                    b,
                    prune_tol,
                    tie_tol,
                ): (a, b)
                for a, b in spans
            }
            for fut in as_completed(futures):
                a, b = futures[fut]
                logf[a:b], nu[a:b], alt[a:b], deficit[a:b] = fut.result()
                done += b - a
                if progress is not None:
                    progress(done, total)

    evidence_basic = np.exp(logf) * nu
    return ConfidenceSet(
        grid=grid,
        alpha=alpha,
        dataset_label=dataset.label,
        n_main=design.n_main,
        prune_tol=prune_tol,
        method=method,
        evidence_basic=evidence_basic,
        evidence_alt=alt,
        in_basic=evidence_basic > alpha,
        in_alt=alt > alpha,
        mass_deficit=deficit,
    )


def project_interval(
    confset: ConfidenceSet,
    axis: str,
    condition: Mapping[str, float] | None = None,
    method: str = "alt",
) -> list[Interval]:
    """Minimal closed intervals covering the accepted values along one axis.

    Other axes are collapsed by union (a value is accepted if any grid point
    with that coordinate is in the set), optionally after fixing axes listed
    in condition to specific grid values. Non-contiguous memberships yield
    multiple intervals.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")
    if method not in ("basic", "alt"):
        raise ValueError(f"method must be basic or alt, got {method!r}")
    flags = confset.in_alt if method == "alt" else confset.in_basic
    cube = flags.reshape(confset.grid.shape)

    axis_values = {
        "p": np.asarray(confset.grid.p_values),
        "q": np.asarray(confset.grid.q_values),
        "pi": np.asarray(confset.grid.k_values) / confset.n_main,
    }
    for name, value in (condition or {}).items():
        if name not in _AXES:
            raise ValueError(f"unknown condition axis {name!r}")
        if name == axis:
            raise ValueError("cannot condition on the projection axis")
        i = _match_value(axis_values[name], float(value), name)
        cube = np.take(cube, [i], axis=_AXES.index(name))

    keep = _AXES.index(axis)
    reduce_over = tuple(d for d in range(3) if d != keep)
    accepted = cube.any(axis=reduce_over)

    values = axis_values[axis]
    intervals: list[Interval] = []
    run_start = None
    for i, flag in enumerate(accepted):
        if flag and run_start is None:
            run_start = i
        elif not flag and run_start is not None:
            intervals.append((float(values[run_start]), float(values[i - 1])))
            run_start = None
    if run_start is not None:
        intervals.append((float(values[run_start]), float(values[-1])))
    return intervals


@dataclass(frozen=True)
class CoverageResult:
    """Empirical coverage of both constructions at a fixed parameter point."""

    theta: ParamPoint
    reps: int
    alpha: float
    coverage_basic: float
    coverage_alt: float


def coverage_sim(
    theta: ParamPoint,
    design: StudyDesign,
    reps: int,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    prune_tol: float = DEFAULT_PRUNE_TOL,
    tie_tol: float = TIE_TOL,
    progress: ProgressFn | None = None,
) -> CoverageResult:
    """Simulate datasets under theta and check how often theta is accepted.

    A scanned set contains theta exactly when theta's own evidence exceeds
    alpha, so each replication needs a single evidence evaluation, not a
    full grid scan.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    hits_basic = 0
    hits_alt = 0
    for rep in range(reps):
        s = simulate_study(theta, design, seed, index=rep)
        logf, nu, alt, _ = kernels.theta_evidence(
            design.n_cal_neg,
            design.n_cal_pos,
            design.n_main,
            theta.p,
            theta.q,
            theta.k,
            s.s_cal_neg,
            s.s_cal_pos,
            s.s_main,
            prune_tol,
            tie_tol,
        )
        if np.exp(logf) * nu > alpha:
            hits_basic += 1
        if alt > alpha:
            hits_alt += 1
        if progress is not None:
            progress(rep + 1, reps)
    return CoverageResult(
        theta=theta,
        reps=reps,
        alpha=alpha,
        coverage_basic=hits_basic / reps,
        coverage_alt=hits_alt / reps,
    )


def _logpmf_matrix(counts: np.ndarray, n: int, rates: np.ndarray) -> np.ndarray:
    """Log pmf of Binom(n, rate) at each count; shape (len(rates), len(counts))."""
    counts = np.asarray(counts, dtype=np.int64)
    rates = np.asarray(rates, dtype=float)
    base = gammaln(n + 1.0) - gammaln(counts + 1.0) - gammaln(n - counts + 1.0)
    out = np.full((rates.size, counts.size), -np.inf)
    inner = (rates > 0.0) & (rates < 1.0)
    if inner.any():
        r = rates[inner][:, None]
        out[inner] = (
            base[None, :]
            + counts[None, :] * np.log(r)
            + (n - counts)[None, :] * np.log1p(-r)
        )
    out[rates == 0.0] = np.where(counts == 0, 0.0, -np.inf)
    out[rates == 1.0] = np.where(counts == n, 0.0, -np.inf)
    return out


def log_joint_grid(dataset: Dataset, grid: ParamGrid) -> np.ndarray:
    """Exact log joint density of the observed counts at every grid point.

    Vectorized over (p, q) per k value; returns a flat array in canonical
    order. Used where only the observed point's density is needed (no level
    sets), e.g. likelihood cutoffs over a grid.
    """
    design, s = dataset.design, dataset.observed
    s.check_against(design)
    if grid.k_values[-1] > design.n_main:
        raise ValueError("grid k exceeds n_main")
    pv = np.asarray(grid.p_values)
    qv = np.asarray(grid.q_values)
    l1 = _logpmf_matrix(np.array([s.s_cal_neg]), design.n_cal_neg, pv)[:, 0]
    l2 = _logpmf_matrix(np.array([s.s_cal_pos]), design.n_cal_pos, qv)[:, 0]

    out = np.empty(grid.shape)
    s3, nm = s.s_main, design.n_main
    for ik, k in enumerate(grid.k_values):
        j0 = max(0, s3 - (nm - k))
        j1 = min(k, s3)
        if j0 > j1:
            out[:, :, ik] = -np.inf
            continue
        j = np.arange(j0, j1 + 1)
        la = _logpmf_matrix(j, k, qv)  # (nq, J)
        lb = _logpmf_matrix(s3 - j, nm - k, pv)  # (np, J)
        ma = la.max(axis=1)
        mb = lb.max(axis=1)
        ea = np.zeros_like(la)
        eb = np.zeros_like(lb)
        good_a = ma > -np.inf
        good_b = mb > -np.inf
        ea[good_a] = np.exp(la[good_a] - ma[good_a, None])
        eb[good_b] = np.exp(lb[good_b] - mb[good_b, None])
        m = ea @ eb.T  # (nq, np)
        with np.errstate(divide="ignore"):
            lm = np.log(m) + ma[:, None] + mb[None, :]
        lm[~good_a, :] = -np.inf
        lm[:, ~good_b] = -np.inf
        out[:, :, ik] = l1[:, None] + l2[None, :] + lm.T
    return out.ravel()
