"""Dispersion of subset agreement across many random teams.

Repeats the Monte Carlo experiment for j independently sampled k-rater
teams and folds the per-team distribution moments of kappa_n into running
means:

    mu_bar  <- ((t-1)*mu_bar  + mu_t)  / t
    sig_bar <- ((t-1)*sig_bar + sig_t) / t

where mu_t and sig_t are the mean and sample standard deviation of the m
kappa_n values of team t. sig_bar is deliberately an arithmetic mean of
per-team standard deviations, not a pooled variance. The coefficient of
variation cv_n = sig_bar_n / mu_bar_n then converts into empirical-rule
interval estimates kappa_hat*(1 -/+ z*cv_n) covering about 68.27%, 95.45%,
and 99.73% of observations for z = 1, 2, 3.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from kappasim.agreement import fleiss_kappa
from kappasim.corpus import AnnotationMatrix, open_text_dest
from kappasim.errors import DataError
from kappasim.mc import ExperimentConfig, kappa_table, run_experiment

VARIATION_HEADER = ("n", "mu_bar", "sigma_bar", "cv", "cv_percent")
INTERVALS_HEADER = ("n", "level", "lower", "upper")

EMPIRICAL_RULE_PERCENT = {1: 68.27, 2: 95.45, 3: 99.73}

_MU_EPS = 1e-9


@dataclass(frozen=True)
class VariationConfig:
    """Parameters of the team-resampling procedure."""

    k: int = 7
    m: int = 100
    j: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 3:
            raise DataError(f"team size must be >= 3, got {self.k}")
        if self.m < 1:
            raise DataError(f"repetition count must be >= 1, got {self.m}")
        if self.j < 1:
            raise DataError(f"team count must be >= 1, got {self.j}")
        if self.seed < 0:
            raise DataError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class VariationTable:
    """Running moments and cv per subset size, plus the kappa-hat context.

    ``cv`` is NaN where mu_bar is within 1e-9 of zero (undefined rather
    than explosive). ``dataset_kappa_hat`` is the agreement of the whole
    input matrix; ``team_kappa_hats`` are the j per-team values, whose
    mean is reported alongside because the two referents need not agree.
    """

    k: int
    ns: tuple[int, ...]
    mu_bar: np.ndarray
    sigma_bar: np.ndarray
    cv: np.ndarray
    team_kappa_hats: tuple[float, ...]
    mean_team_kappa_hat: float
    dataset_kappa_hat: float

    def __post_init__(self) -> None:
        if self.ns != tuple(range(2, self.k + 1)):
            raise DataError("variation table must cover subset sizes 2..k")
        for name in ("mu_bar", "sigma_bar", "cv"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            if arr.shape != (len(self.ns),):
                raise DataError(f"{name} must hold one value per subset size")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def defined(self) -> np.ndarray:
        """Boolean mask of rows where cv is defined."""
        return np.isfinite(self.cv)


@dataclass(frozen=True)
class IntervalEstimate:
    """Empirical-rule interval kappa_hat*(1 -/+ z*cv) at one sigma level."""

    z: int
    percent: float
    lower: float
    upper: float

    @property
    def level(self) -> str:
        return f"{self.percent:.2f}%"


def _column_moments(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Constant columns short-circuit so the n=k column yields sigma = 0.0
    # exactly (and mu = kappa_hat bitwise), m=1 included.
    mu = np.empty(table.shape[1])
    sigma = np.empty(table.shape[1])
    for col_idx in range(table.shape[1]):
        col = table[:, col_idx]
        lo, hi = col.min(), col.max()
        if lo == hi:
            mu[col_idx], sigma[col_idx] = lo, 0.0
        else:
            mu[col_idx], sigma[col_idx] = col.mean(), col.std(ddof=1)
    return mu, sigma


def run_variation(
    matrix: AnnotationMatrix,
    config: VariationConfig,
    threads: int | None = None,
) -> VariationTable:
    """Sample j teams, run m repetitions each, fold the running moments.

    Team t's entire experiment (team draw and orderings) is seeded by a
    child stream keyed on (seed, t), and the fold walks t = 1..j in order,
    so the procedure is a pure function of (matrix, config). The fold
    update at t=1 reduces to mu_1 and sigma_1 exactly.
    """
    if config.k > len(matrix.raters):
        raise DataError(
            f"team size {config.k} exceeds the matrix's {len(matrix.raters)} raters"
        )
    ns = tuple(range(2, config.k + 1))
    mu_bar = np.zeros(len(ns))
    sigma_bar = np.zeros(len(ns))
    team_kappa_hats: list[float] = []
    for t in range(1, config.j + 1):
        sub_seed = int(
            np.random.SeedSequence(config.seed, spawn_key=(t,)).generate_state(1, np.uint64)[0]
        )
        run_set = run_experiment(
            matrix,
            ExperimentConfig(k=config.k, m=config.m, seed=sub_seed),
            threads=threads,
        )
        mu_t, sigma_t = _column_moments(kappa_table(run_set))
        mu_bar = ((t - 1) * mu_bar + mu_t) / t
        sigma_bar = ((t - 1) * sigma_bar + sigma_t) / t
        team_kappa_hats.append(run_set.kappa_hat)
    cv = np.full(len(ns), math.nan)
    live = np.abs(mu_bar) > _MU_EPS
    cv[live] = sigma_bar[live] / mu_bar[live]
    return VariationTable(
        k=config.k,
        ns=ns,
        mu_bar=mu_bar,
        sigma_bar=sigma_bar,
        cv=cv,
        team_kappa_hats=tuple(team_kappa_hats),
        mean_team_kappa_hat=float(np.mean(team_kappa_hats)),
        dataset_kappa_hat=fleiss_kappa(matrix).kappa,
    )


def interval_estimate(kappa_hat: float, cv_n: float, z: int) -> IntervalEstimate:
    """Interval kappa_hat*(1 -/+ z*cv_n) under the empirical rule.

    Bounds are reported unclamped; a cv above 1/z puts the lower bound
    below zero and that is meaningful output, not an error.
    """
    if z not in EMPIRICAL_RULE_PERCENT:
        raise DataError(f"z must be 1, 2, or 3, got {z}")
    if not math.isfinite(cv_n) or cv_n < 0:
        raise DataError(f"cv must be a finite non-negative number, got {cv_n}")
    return IntervalEstimate(
        z=z,
        percent=EMPIRICAL_RULE_PERCENT[z],
        lower=kappa_hat * (1.0 - z * cv_n),
        upper=kappa_hat * (1.0 + z * cv_n),
    )


def cv_percent(cv_n: float) -> float:
    """cv as a percentage, rounded to 2 decimals for display."""
    if not math.isfinite(cv_n):
        raise DataError("cv is undefined")
    return round(cv_n * 100.0, 2)


def write_variation(table: VariationTable, dest: str | Path | TextIO | None) -> None:
    """Write the variation file: ``n,mu_bar,sigma_bar,cv,cv_percent`` rows;
    undefined cv rows carry ``nan``."""
    with open_text_dest(dest) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VARIATION_HEADER)
        for j, n in enumerate(table.ns):
            cv = float(table.cv[j])
            if math.isfinite(cv):
                cv_cells = (f"{cv:.6f}", f"{cv_percent(cv):.2f}")
            else:
                cv_cells = ("nan", "nan")
            writer.writerow((n, f"{table.mu_bar[j]:.6f}", f"{table.sigma_bar[j]:.6f}", *cv_cells))


def read_variation(path: str | Path) -> tuple[tuple[int, float, float, float], ...]:
    """Read a variation file back as (n, mu_bar, sigma_bar, cv) rows."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"variation file not found: {path}")
    rows: list[tuple[int, float, float, float]] = []
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != VARIATION_HEADER:
            raise DataError(f"{path}: expected header '{','.join(VARIATION_HEADER)}'")
        for lineno, record in enumerate(reader, 2):
            if not record:
                continue
            if len(record) != len(VARIATION_HEADER):
                raise DataError(f"{path}:{lineno}: malformed variation row")
            try:
                rows.append(
                    (int(record[0]), float(record[1]), float(record[2]), float(record[3]))
                )
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed variation row") from None
    if not rows:
        raise DataError(f"{path}: no variation rows")
    return tuple(rows)


def write_intervals(
    estimates: Sequence[tuple[int, IntervalEstimate]],
    dest: str | Path | TextIO | None,
) -> None:
    """Write the intervals file: ``n,level,lower,upper`` rows, level as the
    empirical-rule percentage."""
    with open_text_dest(dest) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INTERVALS_HEADER)
        for n, est in estimates:
            writer.writerow((n, f"{est.percent:.2f}", f"{est.lower:.6f}", f"{est.upper:.6f}"))
