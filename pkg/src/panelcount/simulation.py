"""Monte Carlo data generation and size/power studies.

Panel count data mimicking medical follow-up studies: each subject has a
uniform number of visits on {1,...,10} at distinct integer times, and counts
from a (mixed) Poisson process whose mean function is either proportional
between groups (case 1) or crossing (case 2).  Replications draw from
independent streams derived from (base seed, replication index), so serial
and parallel runs produce identical results.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .core import ObservationPath, PanelDataset
from .estimators import IcmConfig
from .hypotests import (
    DegenerateCovarianceError,
    DegenerateVarianceError,
    IncrementMismatchError,
    SolverConvergenceError,
    chi2_u_test,
    chi2_v_test,
    fit_all,
    two_sample_tests,
)
from .weights import WeightKind, WeightSpec

__all__ = [
    "OBSERVATION_TIMES",
    "TrueMean",
    "SimConfig",
    "PowerRow",
    "mean_for_group",
    "sample_subject",
    "generate_dataset",
    "run_power_study",
    "qq_study",
]

OBSERVATION_TIMES = np.arange(1, 11)

_TWO_SAMPLE_STATS = ("t1", "t2")
_CHI2_STATS = ("chi2-u", "chi2-v")
_FAILURE_ERRORS = (
    SolverConvergenceError,
    IncrementMismatchError,
    DegenerateCovarianceError,
    DegenerateVarianceError,
)


@dataclass(frozen=True)
class TrueMean:
    """Conditional mean function Lambda(t | nu = 1) of one group.

    Group 1 is the baseline t; group 2 is t*exp(beta) in case 1 and
    sqrt(beta*t) in case 2 (the crossing design, meeting the baseline at
    t = beta).  Any further groups use the baseline, which supports null
    calibration studies with k > 2.
    """

    case: int
    beta: float
    group: int

    def __post_init__(self):
        if self.case not in (1, 2):
            raise ValueError("case must be 1 or 2")
        if self.case == 2 and self.group == 2 and self.beta < 0:
            raise ValueError("case 2 requires beta >= 0")

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.group == 2:
            if self.case == 1:
                out = t_arr * np.exp(self.beta)
            else:
                out = np.sqrt(self.beta * t_arr)
        else:
            out = t_arr
        if np.ndim(t) == 0:
            return float(out)
        return out


def mean_for_group(case: int, beta: float, group: int) -> TrueMean:
    return TrueMean(case=case, beta=beta, group=group)


@dataclass(frozen=True)
class SimConfig:
    """One cell of a simulation study."""

    case: int = 1
    beta: float = 0.0
    group_sizes: tuple[int, ...] = (50, 50)
    nu_mode: str = "fixed"
    replications: int = 1000
    base_seed: int = 0
    weight_specs: tuple[WeightSpec, ...] = (WeightSpec(WeightKind.CONST),)
    statistics: tuple[str, ...] = ("t2",)
    alpha: float = 0.05
    icm: IcmConfig = field(default_factory=IcmConfig)

    def __post_init__(self):
        object.__setattr__(self, "group_sizes", tuple(int(s) for s in self.group_sizes))
        object.__setattr__(self, "weight_specs", tuple(self.weight_specs))
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        if self.nu_mode not in ("fixed", "gamma"):
            raise ValueError("nu_mode must be 'fixed' or 'gamma'")
        if any(s < 1 for s in self.group_sizes):
            raise ValueError("group sizes must be positive")
        k = len(self.group_sizes)
        for stat in self.statistics:
            if stat in _TWO_SAMPLE_STATS and k != 2:
                raise ValueError(f"statistic {stat} requires exactly 2 groups")
            if stat not in _TWO_SAMPLE_STATS + _CHI2_STATS:
                raise ValueError(f"unknown statistic {stat!r}")


@dataclass(frozen=True)
class PowerRow:
    """Monte Carlo rejection fraction for one (statistic, weight) pair."""

    case: int
    beta: float
    group_sizes: tuple[int, ...]
    nu_mode: str
    replications: int
    base_seed: int
    alpha: float
    statistic: str
    weight: str
    rejections: int
    failures: int
    reject_rate: float
    suspect: bool


def _replication_rng(base_seed: int, replication_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=base_seed, spawn_key=(replication_index,))
    )


def sample_subject(
    tm: TrueMean,
    nu_mode: str,
    rng: np.random.Generator,
    subject_id: str = "s",
) -> ObservationPath:
    """Draw one subject: visit count on U{1..10}, distinct integer visit times,
    and cumulative counts from independent Poisson increments with means
    nu * (Lambda(t_j) - Lambda(t_{j-1}))."""
    k_i = int(rng.integers(1, 11))
    times = np.sort(rng.choice(OBSERVATION_TIMES, size=k_i, replace=False)).astype(float)
    nu = 1.0 if nu_mode == "fixed" else float(rng.gamma(shape=2.0, scale=0.5))
    increments = rng.poisson(nu * np.diff(tm(times), prepend=0.0))
    counts = np.cumsum(increments).astype(float)
    return ObservationPath(subject_id=subject_id, group=tm.group, times=times, counts=counts)


def generate_dataset(cfg: SimConfig, replication_index: int) -> PanelDataset:
    """The dataset of replication ``replication_index``; fully determined by
    (base seed, replication index)."""
    rng = _replication_rng(cfg.base_seed, replication_index)
    paths = []
    for group, size in enumerate(cfg.group_sizes, start=1):
        tm = mean_for_group(cfg.case, cfg.beta, group)
        for i in range(size):
            paths.append(sample_subject(tm, cfg.nu_mode, rng, subject_id=f"g{group}s{i}"))
    return PanelDataset(paths=tuple(paths), k=len(cfg.group_sizes))


def _replication_pvalues(cfg: SimConfig, replication_index: int) -> np.ndarray:
    """p-value matrix of one replication, shape (statistics, weights)."""
    d = generate_dataset(cfg, replication_index)
    fits = fit_all(d, cfg.icm)
    out = np.empty((len(cfg.statistics), len(cfg.weight_specs)))
    for w_idx, spec in enumerate(cfg.weight_specs):
        two_sample = None
        for s_idx, stat in enumerate(cfg.statistics):
            if stat in _TWO_SAMPLE_STATS:
                if two_sample is None:
                    two_sample = two_sample_tests(d, spec, cfg.icm, fits=fits)
                out[s_idx, w_idx] = two_sample.p_values[stat.upper()]
            elif stat == "chi2-u":
                out[s_idx, w_idx] = chi2_u_test(d, spec, cfg.icm, fits=fits).p_values["chi2"]
            else:
                out[s_idx, w_idx] = chi2_v_test(d, spec, cfg.icm, fits=fits).p_values["chi2"]
    return out


def _replication_worker(args):
    cfg, rep = args
    try:
        return _replication_pvalues(cfg, rep)
    except _FAILURE_ERRORS:
        return None


def _map_replications(cfg: SimConfig, worker):
    jobs = [(cfg, rep) for rep in range(cfg.replications)]
    threads = int(os.environ.get("PCT_THREADS", "1"))
    if threads > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunk = max(1, cfg.replications // (8 * threads))
            return list(pool.map(worker, jobs, chunksize=chunk))
    return [worker(job) for job in jobs]


def run_power_study(cfgs) -> list[PowerRow]:
    """Rejection fractions over the study grid, one row per (statistic, weight).

    Replications whose solves fail (non-convergence or degenerate statistics)
    are excluded and counted; a cell with more than 1% failures is suspect.
    """
    rows: list[PowerRow] = []
    for cfg in cfgs:
        if not cfg.statistics:
            raise ValueError("run_power_study needs at least one statistic")
        results = _map_replications(cfg, _replication_worker)
        failures = sum(1 for r in results if r is None)
        valid = [r for r in results if r is not None]
        rejections = np.zeros((len(cfg.statistics), len(cfg.weight_specs)), dtype=int)
        if valid:
            rejections = np.sum([r < cfg.alpha for r in valid], axis=0)
        n_valid = len(valid)
        suspect = failures > 0.01 * cfg.replications
        for s_idx, stat in enumerate(cfg.statistics):
            for w_idx, spec in enumerate(cfg.weight_specs):
                rej = int(rejections[s_idx, w_idx])
                rows.append(
                    PowerRow(
                        case=cfg.case,
                        beta=cfg.beta,
                        group_sizes=cfg.group_sizes,
                        nu_mode=cfg.nu_mode,
                        replications=cfg.replications,
                        base_seed=cfg.base_seed,
                        alpha=cfg.alpha,
                        statistic=stat,
                        weight=spec.name,
                        rejections=rej,
                        failures=failures,
                        reject_rate=rej / n_valid if n_valid else float("nan"),
                        suspect=suspect,
                    )
                )
    return rows


def _qq_worker(args):
    cfg, rep = args
    d = generate_dataset(cfg, rep)
    report = two_sample_tests(d, cfg.weight_specs[0], cfg.icm)
    return report.statistics[cfg.statistics[0].upper()]


def qq_study(cfg: SimConfig, statistic: str = "t2") -> np.ndarray:
    """Null replicate values of a two-sample statistic against standard-normal
    quantiles; returns an (R, 2) array (theoretical, ordered empirical)."""
    if cfg.beta != 0.0:
        raise ValueError("qq_study requires the null design beta = 0")
    if statistic not in _TWO_SAMPLE_STATS:
        raise ValueError("qq_study supports the two-sample statistics t1 and t2")
    cfg = SimConfig(
        case=cfg.case,
        beta=0.0,
        group_sizes=cfg.group_sizes,
        nu_mode=cfg.nu_mode,
        replications=cfg.replications,
        base_seed=cfg.base_seed,
        weight_specs=cfg.weight_specs[:1],
        statistics=(statistic,),
        alpha=cfg.alpha,
        icm=cfg.icm,
    )
    values = np.sort(np.asarray(_map_replications(cfg, _qq_worker), dtype=float))
    r = cfg.replications
    theoretical = ndtri((np.arange(1, r + 1) - 0.5) / r)
    return np.column_stack([theoretical, values])
