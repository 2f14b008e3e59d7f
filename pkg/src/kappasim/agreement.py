"""Fleiss' kappa: chance-corrected agreement among a fixed number of raters.

For N items, n raters, and K categories, let n_ij be the number of raters
assigning item i to category j (so sum_j n_ij = n for every i). Observed
agreement on item i is the fraction of concordant rater pairs,

    P_i = (sum_j n_ij^2 - n) / (n * (n - 1)),

and the overall observed agreement is the mean P-bar = (1/N) sum_i P_i.
Expected chance agreement uses the marginal category proportions
p_j = sum_i n_ij / (N * n):

    P-bar_e = sum_j p_j^2.

Kappa is the chance-corrected ratio

    kappa = (P-bar - P-bar_e) / (1 - P-bar_e),

which is 1 at perfect agreement and <= 0 at or below chance level. When
every rating in the whole grid lands in a single category, both P-bar and
P-bar_e equal 1 and the ratio is 0/0; that unanimous case is reported as
kappa = 1 with ``degenerate=True``. The degenerate test is structural
(exactly one category column has nonzero counts), not a floating-point
comparison against 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kappasim.corpus import AnnotationMatrix
from kappasim.errors import DataError


@dataclass(frozen=True)
class KappaValue:
    """Fleiss' kappa together with its ingredients.

    ``degenerate`` marks the all-ratings-in-one-category case, where the
    defining ratio is 0/0 and ``kappa`` is reported as 1 by convention.
    """

    kappa: float
    p_bar: float
    p_bar_e: float
    degenerate: bool = False


def kappa_from_counts(counts: np.ndarray) -> KappaValue:
    """Fleiss' kappa from an (items, categories) table of rating counts.

    Every row must sum to the same number of raters n >= 2.
    """
    counts = np.asarray(counts)
    if counts.ndim != 2:
        raise DataError(f"counts must be 2-dimensional, got shape {counts.shape}")
    if not np.issubdtype(counts.dtype, np.integer):
        if not np.all(counts == np.floor(counts)):
            raise DataError("counts must be whole numbers")
        counts = counts.astype(np.int64)
    if counts.size == 0:
        raise DataError("counts table is empty")
    if counts.min() < 0:
        raise DataError("counts must be non-negative")
    n_items, _ = counts.shape
    row_sums = counts.sum(axis=1)
    n = int(row_sums[0])
    if not np.all(row_sums == n):
        raise DataError("every item must be rated by the same number of raters")
    if n < 2:
        raise DataError(f"at least 2 raters required, got {n}")

    # Integer accumulation keeps P_i and the marginals exact up to the
    # final divisions.
    sq = np.sum(counts.astype(np.int64) ** 2, axis=1)
    p_i = (sq - n) / (n * (n - 1))
    p_bar = float(np.sum(p_i) / n_items)
    col_sums = counts.sum(axis=0, dtype=np.int64)
    p_j = col_sums / (n_items * n)
    p_bar_e = float(np.sum(p_j**2))

    if np.count_nonzero(col_sums) == 1:
        return KappaValue(kappa=1.0, p_bar=p_bar, p_bar_e=p_bar_e, degenerate=True)
    return KappaValue(
        kappa=float((p_bar - p_bar_e) / (1.0 - p_bar_e)),
        p_bar=p_bar,
        p_bar_e=p_bar_e,
        degenerate=False,
    )


def fleiss_kappa(matrix: AnnotationMatrix) -> KappaValue:
    """Fleiss' kappa over all raters of an annotation matrix."""
    return kappa_from_counts(matrix.counts())
