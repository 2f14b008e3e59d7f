"""Monte Carlo subset-agreement experiment.

One experiment fixes a team of k raters, then repeats m times: draw a
random ordering of the team and compute the agreement progression
kappa_2..kappa_k, where kappa_n is Fleiss' kappa restricted to the first
n raters of the ordering. The final value kappa_k does not depend on the
ordering, so it is the team's overall agreement kappa-hat; the spread of
the earlier prefix values is the object of study.

Determinism contract: the team draw consumes a root stream seeded with
``seed``; run r draws its ordering from an independent child stream keyed
by ``(seed, r)``. Results are therefore bit-identical regardless of
execution order or thread count, and the first m runs of a longer
experiment coincide with the m runs of a shorter one.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from kappasim.corpus import AnnotationMatrix, open_text_dest
from kappasim.errors import DataError

RUNS_HEADER = ("run_id", "n", "kappa")
STATS_HEADER = ("n", "min", "q1", "median", "q3", "max", "mean", "std")


def _available_parallelism() -> int:
    getter = getattr(os, "process_cpu_count", None)
    if getter is not None:
        return getter() or 1
    try:
        return len(os.sched_getaffinity(0)) or 1
    except AttributeError:
        return os.cpu_count() or 1


def thread_count(requested: int | None = None) -> int:
    """Resolve the worker count: explicit argument, else the
    KAPPASIM_THREADS environment variable, else available parallelism."""
    if requested is None:
        env = os.environ.get("KAPPASIM_THREADS")
        if not env:
            return _available_parallelism()
        try:
            requested = int(env)
        except ValueError:
            raise DataError(f"KAPPASIM_THREADS must be a positive integer, got {env!r}") from None
    if requested < 1:
        raise DataError(f"thread count must be >= 1, got {requested}")
    return requested


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment.

    ``team=None`` means run 1 samples k raters uniformly without
    replacement; an explicit team (k member ids) skips the draw.
    """

    k: int
    m: int
    seed: int
    team: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.k < 3:
            raise DataError(f"team size must be >= 3, got {self.k}")
        if self.m < 1:
            raise DataError(f"repetition count must be >= 1, got {self.m}")
        if self.seed < 0:
            raise DataError(f"seed must be non-negative, got {self.seed}")
        if self.team is not None:
            if len(self.team) != self.k:
                raise DataError(f"explicit team has {len(self.team)} members, expected k={self.k}")
            if len(set(self.team)) != len(self.team):
                raise DataError("explicit team members must be distinct")


@dataclass(frozen=True)
class RunRecord:
    """One repetition: the ordering drawn and its kappa_2..kappa_k."""

    run_id: int
    ordering: tuple[str, ...]
    kappas: np.ndarray

    def __post_init__(self) -> None:
        kappas = np.asarray(self.kappas, dtype=np.float64).copy()
        if kappas.shape != (len(self.ordering) - 1,):
            raise DataError("progression length must be team size minus 1")
        kappas.setflags(write=False)
        object.__setattr__(self, "kappas", kappas)


@dataclass(frozen=True)
class RunSet:
    """All m repetitions for one team. ``kappa_hat`` is the full-team
    agreement, equal to every run's final prefix value exactly."""

    config: ExperimentConfig
    team: tuple[str, ...]
    kappa_hat: float
    runs: tuple[RunRecord, ...]

    def __post_init__(self) -> None:
        if len(self.runs) != self.config.m:
            raise DataError(f"expected {self.config.m} runs, got {len(self.runs)}")
        if any(run.kappas[-1] != self.kappa_hat for run in self.runs):
            raise DataError("final prefix agreement differs across runs")

    @property
    def ns(self) -> tuple[int, ...]:
        return tuple(range(2, self.config.k + 1))


@dataclass(frozen=True)
class SubsetStats:
    """Per-subset-size distribution summary of the m kappa_n values."""

    ns: tuple[int, ...]
    mins: np.ndarray
    q1s: np.ndarray
    medians: np.ndarray
    q3s: np.ndarray
    maxs: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        for name in ("mins", "q1s", "medians", "q3s", "maxs", "means", "stds"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            if arr.shape != (len(self.ns),):
                raise DataError(f"{name} must hold one value per subset size")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ordered = (
            np.all(self.mins <= self.q1s)
            and np.all(self.q1s <= self.medians)
            and np.all(self.medians <= self.q3s)
            and np.all(self.q3s <= self.maxs)
        )
        if not ordered:
            raise DataError("order statistics must satisfy min <= q1 <= median <= q3 <= max")

    @property
    def iqrs(self) -> np.ndarray:
        return self.q3s - self.q1s


def sample_team(matrix: AnnotationMatrix, k: int, rng: np.random.Generator) -> tuple[str, ...]:
    """Draw k distinct raters uniformly without replacement.

    The returned subset is in matrix order; orderings are a separate,
    per-run draw.
    """
    total = len(matrix.raters)
    if not 3 <= k <= total:
        raise DataError(f"team size must be between 3 and {total}, got {k}")
    idx = np.sort(rng.choice(total, size=k, replace=False))
    return tuple(matrix.raters[i] for i in idx)


def _prefix_kappas_from_codes(codes: np.ndarray, n_categories: int) -> np.ndarray:
    """Agreement of every prefix of the given rater ordering.

    codes is the (k, items) label-code grid in ordering order. A running
    cumulative sum over the rater axis yields the per-item category counts
    of every prefix at once; the kappa arithmetic then runs batched over
    prefix sizes n = 2..k. Counts stay integral until the final divisions,
    so the full-prefix value is bitwise identical to the single-matrix
    computation and independent of the ordering.
    """
    k, n_items = codes.shape
    onehot = (codes[:, :, None] == np.arange(n_categories)[None, None, :]).astype(np.int64)
    counts = np.cumsum(onehot, axis=0)[1:]
    ns = np.arange(2, k + 1, dtype=np.int64)[:, None]
    sq = np.sum(counts * counts, axis=2)
    p_i = (sq - ns) / (ns * (ns - 1))
    p_bar = p_i.sum(axis=1) / n_items
    col = counts.sum(axis=1)
    p_j = col / (n_items * ns)
    p_bar_e = np.sum(p_j * p_j, axis=1)
    kappas = np.ones(k - 1)
    live = np.count_nonzero(col, axis=1) != 1
    kappas[live] = (p_bar[live] - p_bar_e[live]) / (1.0 - p_bar_e[live])
    return kappas


def prefix_kappas(
    matrix: AnnotationMatrix,
    team: Sequence[str],
    ordering: Sequence[str],
) -> np.ndarray:
    """kappa_2..kappa_k for one ordering of a team."""
    if len(team) < 2:
        raise DataError("team must have at least 2 members")
    if len(set(team)) != len(team):
        raise DataError("team members must be distinct")
    if sorted(team) != sorted(ordering):
        raise DataError("ordering must be a permutation of the team")
    try:
        idx = [matrix.raters.index(r) for r in ordering]
    except ValueError as exc:
        raise DataError(f"unknown rater in team: {exc}") from None
    return _prefix_kappas_from_codes(matrix.codes[idx], len(matrix.categories))


def run_experiment(
    matrix: AnnotationMatrix,
    config: ExperimentConfig,
    threads: int | None = None,
) -> RunSet:
    """Execute the full experiment: one team, m ordering progressions.

    Pure function of (matrix, config); ``threads`` only sets the degree of
    parallelism and never changes the result.
    """
    root = np.random.default_rng(np.random.SeedSequence(config.seed))
    if config.team is not None:
        missing = [r for r in config.team if r not in matrix.raters]
        if missing:
            raise DataError(f"team members not in matrix: {', '.join(missing)}")
        team = tuple(config.team)
    else:
        team = sample_team(matrix, config.k, root)
    idx = [matrix.raters.index(r) for r in team]
    codes = matrix.codes[idx]
    n_categories = len(matrix.categories)
    k, seed = config.k, config.seed

    def progression(run_id: int) -> tuple[tuple[str, ...], np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run_id,)))
        perm = rng.permutation(k)
        ordering = tuple(team[p] for p in perm)
        return ordering, _prefix_kappas_from_codes(codes[perm], n_categories)

    def worker(run_ids: Sequence[int]) -> list[tuple[int, tuple[str, ...], np.ndarray]]:
        return [(rid, *progression(rid)) for rid in run_ids]

    n_threads = min(thread_count(threads), config.m)
    all_ids = list(range(1, config.m + 1))
    if n_threads == 1:
        batches = [worker(all_ids)]
    else:
        bounds = np.linspace(0, config.m, n_threads + 1).astype(int)
        chunks = [all_ids[bounds[i] : bounds[i + 1]] for i in range(n_threads)]
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            batches = list(pool.map(worker, chunks))
    runs = tuple(
        RunRecord(run_id=rid, ordering=ordering, kappas=kappas)
        for batch in batches
        for rid, ordering, kappas in batch
    )
    return RunSet(config=config, team=team, kappa_hat=float(runs[0].kappas[-1]), runs=runs)


def kappa_table(runs: RunSet) -> np.ndarray:
    """Stack the progressions into an (m, k-1) array, run-id order."""
    return np.stack([run.kappas for run in runs.runs])


def summarize_table(ns: Sequence[int], table: np.ndarray) -> SubsetStats:
    """Column-wise distribution summary of an (m, len(ns)) kappa table.

    Quartiles interpolate linearly between closest ranks; std is the
    sample standard deviation (divisor m-1, zero when m=1). A constant
    column is summarized by its value directly so that the full-team
    column reproduces kappa-hat exactly, untouched by float summation
    error.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] != len(ns):
        raise DataError("kappa table shape must be (m, number of subset sizes)")
    if table.shape[0] < 1:
        raise DataError("kappa table must hold at least one run")
    cols = {name: np.empty(len(ns)) for name in STATS_HEADER[1:]}
    for j in range(len(ns)):
        col = table[:, j]
        lo, hi = col.min(), col.max()
        if lo == hi:
            for name in ("min", "q1", "median", "q3", "max", "mean"):
                cols[name][j] = lo
            cols["std"][j] = 0.0
        else:
            q1, med, q3 = np.percentile(col, (25, 50, 75))
            cols["min"][j] = lo
            cols["q1"][j] = q1
            cols["median"][j] = med
            cols["q3"][j] = q3
            cols["max"][j] = hi
            cols["mean"][j] = col.mean()
            cols["std"][j] = col.std(ddof=1)
    return SubsetStats(
        ns=tuple(int(n) for n in ns),
        mins=cols["min"],
        q1s=cols["q1"],
        medians=cols["median"],
        q3s=cols["q3"],
        maxs=cols["max"],
        means=cols["mean"],
        stds=cols["std"],
    )


def summarize(runs: RunSet) -> SubsetStats:
    """Per-n distribution summary over the m runs of an experiment."""
    return summarize_table(runs.ns, kappa_table(runs))


def write_runs(runs: RunSet, dest: str | Path | TextIO | None) -> None:
    """Write the long-format runs file: ``run_id,n,kappa``, (k-1)*m rows."""
    with open_text_dest(dest) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUNS_HEADER)
        ns = runs.ns
        for run in runs.runs:
            for n, kappa in zip(ns, run.kappas):
                writer.writerow((run.run_id, n, f"{kappa:.6f}"))


def read_runs(path: str | Path) -> tuple[tuple[int, ...], np.ndarray]:
    """Read a runs file back as (subset sizes, (m, k-1) kappa table)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"runs file not found: {path}")
    per_run: dict[int, list[tuple[int, float]]] = {}
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != RUNS_HEADER:
            raise DataError(f"{path}: expected header 'run_id,n,kappa'")
        for lineno, record in enumerate(reader, 2):
            if not record:
                continue
            try:
                rid, n, kappa = int(record[0]), int(record[1]), float(record[2])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed runs row") from None
            per_run.setdefault(rid, []).append((n, kappa))
    if not per_run:
        raise DataError(f"{path}: no runs")
    first = sorted(per_run)[0]
    ns = tuple(n for n, _ in per_run[first])
    if ns != tuple(range(2, len(ns) + 2)):
        raise DataError(f"{path}: subset sizes must run 2..k in order")
    table = np.empty((len(per_run), len(ns)))
    for row, rid in enumerate(sorted(per_run)):
        if tuple(n for n, _ in per_run[rid]) != ns:
            raise DataError(f"{path}: run {rid} does not cover subset sizes 2..k")
        table[row] = [kappa for _, kappa in per_run[rid]]
    return ns, table


def write_stats(stats: SubsetStats, dest: str | Path | TextIO | None) -> None:
    """Write the stats file: one ``n,min,q1,median,q3,max,mean,std`` row per n."""
    with open_text_dest(dest) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATS_HEADER)
        for j, n in enumerate(stats.ns):
            writer.writerow(
                (
                    n,
                    f"{stats.mins[j]:.6f}",
                    f"{stats.q1s[j]:.6f}",
                    f"{stats.medians[j]:.6f}",
                    f"{stats.q3s[j]:.6f}",
                    f"{stats.maxs[j]:.6f}",
                    f"{stats.means[j]:.6f}",
                    f"{stats.stds[j]:.6f}",
                )
            )


def read_stats(path: str | Path) -> SubsetStats:
    """Read a stats file back into a SubsetStats."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"stats file not found: {path}")
    rows: list[tuple[float, ...]] = []
    ns: list[int] = []
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != STATS_HEADER:
            raise DataError(f"{path}: expected header '{','.join(STATS_HEADER)}'")
        for lineno, record in enumerate(reader, 2):
            if not record:
                continue
            if len(record) != len(STATS_HEADER):
                raise DataError(f"{path}:{lineno}: malformed stats row")
            try:
                ns.append(int(record[0]))
                rows.append(tuple(float(v) for v in record[1:]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed stats row") from None
    if not rows:
        raise DataError(f"{path}: no stats rows")
    data = np.asarray(rows)
    return SubsetStats(
        ns=tuple(ns),
        mins=data[:, 0],
        q1s=data[:, 1],
        medians=data[:, 2],
        q3s=data[:, 3],
        maxs=data[:, 4],
        means=data[:, 5],
        stds=data[:, 6],
    )
