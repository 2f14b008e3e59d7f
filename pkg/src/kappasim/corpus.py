"""Annotation corpora: survey ingestion, preprocessing, synthesis, matrix file I/O.

Everything downstream (agreement, simulation, dispersion) consumes the
:class:`AnnotationMatrix` built here: a complete rater x item grid of
categorical sentiment labels.
"""

from __future__ import annotations

import csv
import io
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence, TextIO

import numpy as np

from kappasim.errors import DataError

SENTIMENT_CATEGORIES = ("positive", "neutral", "negative")

MATRIX_HEADER = ("rater", "item", "label")


@contextmanager
def open_text_dest(dest: str | Path | TextIO | None) -> Iterator[TextIO]:
    """Yield a writable text stream: a file at ``dest``, a passed-through
    stream, or stdout when ``dest`` is None."""
    if dest is None:
        yield sys.stdout
    elif hasattr(dest, "write"):
        yield dest  # type: ignore[misc]
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            yield fh


@dataclass(frozen=True, eq=False)
class AnnotationMatrix:
    """Complete rater x item grid of categorical labels.

    ``codes[r, i]`` indexes ``categories`` for the label that rater
    ``raters[r]`` assigned to item ``items[i]``. The grid is always
    complete; partially labeled data must be filtered out before
    construction. Equality compares identifiers, orderings, and per-cell
    labels; the ordering of ``categories`` is presentational only.
    """

    raters: tuple[str, ...]
    items: tuple[str, ...]
    categories: tuple[str, ...]
    codes: np.ndarray

    def __post_init__(self) -> None:
        if len(set(self.raters)) != len(self.raters):
            raise DataError("rater identifiers must be unique")
        if len(set(self.items)) != len(self.items):
            raise DataError("item identifiers must be unique")
        if len(set(self.categories)) != len(self.categories):
            raise DataError("category tokens must be unique")
        if len(self.raters) < 2:
            raise DataError("matrix needs at least 2 raters")
        if len(self.items) < 1:
            raise DataError("matrix needs at least 1 item")
        if len(self.categories) < 2:
            raise DataError("matrix needs at least 2 categories")
        codes = np.asarray(self.codes)
        if not np.issubdtype(codes.dtype, np.integer):
            raise DataError("label codes must be integers")
        if codes.shape != (len(self.raters), len(self.items)):
            raise DataError(
                f"codes shape {codes.shape} does not match "
                f"{len(self.raters)} raters x {len(self.items)} items"
            )
        if codes.size and (codes.min() < 0 or codes.max() >= len(self.categories)):
            raise DataError("label code out of category range")
        codes = codes.astype(np.int64, copy=True)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @classmethod
    def from_labels(
        cls,
        raters: Sequence[str],
        items: Sequence[str],
        categories: Sequence[str],
        labels: Mapping[tuple[str, str], str],
    ) -> "AnnotationMatrix":
        """Build a matrix from a (rater, item) -> label-token mapping.

        Raises :class:`DataError` if any cell is missing or a token is not
        in ``categories``.
        """
        cat_index = {c: i for i, c in enumerate(categories)}
        codes = np.zeros((len(raters), len(items)), dtype=np.int64)
        for r, rater in enumerate(raters):
            for i, item in enumerate(items):
                try:
                    token = labels[(rater, item)]
                except KeyError:
                    raise DataError(
                        f"incomplete matrix: no label for rater {rater!r}, item {item!r}"
                    ) from None
                if token not in cat_index:
                    raise DataError(f"unknown label token {token!r}")
                codes[r, i] = cat_index[token]
        return cls(tuple(raters), tuple(items), tuple(categories), codes)

    def label(self, rater: str, item: str) -> str:
        return self.categories[self.codes[self.raters.index(rater), self.items.index(item)]]

    def counts(self) -> np.ndarray:
        """Per-item category counts over all raters, shape (items, categories)."""
        k = len(self.categories)
        onehot = self.codes[:, :, None] == np.arange(k)[None, None, :]
        return onehot.sum(axis=0).astype(np.int64)

    def subset(self, raters: Sequence[str]) -> "AnnotationMatrix":
        """Matrix restricted to the given raters (>= 2), original items/categories."""
        idx = [self.raters.index(r) for r in raters]
        return AnnotationMatrix(tuple(raters), self.items, self.categories, self.codes[idx])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnnotationMatrix):
            return NotImplemented
        if self.raters != other.raters or self.items != other.items:
            return False
        if set(self.categories) != set(other.categories):
            return False
        if self.categories == other.categories:
            return bool(np.array_equal(self.codes, other.codes))
        remap = np.array([self.categories.index(c) for c in other.categories])
        return bool(np.array_equal(self.codes, remap[other.codes]))


@dataclass(frozen=True)
class ColumnMapping:
    """Schema of a raw survey file: which columns hold what, and how raw
    answer values translate to label tokens.

    The encodings must be injective per category: a raw value may map to
    at most one label.
    """

    computer_scientist_col: str
    programming_experience_col: str
    label_cols: tuple[str, ...]
    positive_values: tuple[str, ...] = ("Positive",)
    neutral_values: tuple[str, ...] = ("Neutral",)
    negative_values: tuple[str, ...] = ("Negative",)
    no_values: tuple[str, ...] = ("No", "no")
    missing_values: tuple[str, ...] = ()
    respondent_id_col: str | None = None
    delimiter: str = ","

    def __post_init__(self) -> None:
        if not self.label_cols:
            raise DataError("mapping declares no label columns")
        if len(set(self.label_cols)) != len(self.label_cols):
            raise DataError("label columns must be unique")
        self.encoding()  # validates injectivity

    def encoding(self) -> dict[str, str]:
        """Raw value -> label token map."""
        enc: dict[str, str] = {}
        for values, token in (
            (self.positive_values, "positive"),
            (self.neutral_values, "neutral"),
            (self.negative_values, "negative"),
        ):
            for raw in values:
                if enc.get(raw, token) != token:
                    raise DataError(f"raw value {raw!r} encodes more than one label")
                enc[raw] = token
        return enc

    def required_columns(self) -> tuple[str, ...]:
        cols = [self.computer_scientist_col, self.programming_experience_col]
        if self.respondent_id_col is not None:
            cols.append(self.respondent_id_col)
        cols.extend(self.label_cols)
        return tuple(cols)


_MAPPING_LIST_KEYS = (
    "label_cols",
    "positive_values",
    "neutral_values",
    "negative_values",
    "no_values",
    "missing_values",
)
_MAPPING_SCALAR_KEYS = (
    "computer_scientist_col",
    "programming_experience_col",
    "respondent_id_col",
    "delimiter",
)


def load_mapping(path: str | Path) -> ColumnMapping:
    """Parse a key=value mapping config file.

    Lines are ``key = value``; blank lines and ``#`` comments are ignored.
    List-valued keys take comma-separated tokens. ``delimiter`` accepts
    the two-character escape ``\\t`` for tab-separated files.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mapping file not found: {path}")
    fields: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8-sig").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _MAPPING_LIST_KEYS:
            fields[key] = tuple(tok.strip() for tok in value.split(",") if tok.strip())
        elif key in _MAPPING_SCALAR_KEYS:
            fields[key] = "\t" if value == "\\t" else value
        else:
            raise DataError(f"{path}:{lineno}: unknown mapping key {key!r}")
    for required in ("computer_scientist_col", "programming_experience_col", "label_cols"):
        if required not in fields:
            raise DataError(f"mapping file {path} is missing {required!r}")
    return ColumnMapping(**fields)  # type: ignore[arg-type]


@dataclass(frozen=True)
class RawSurveyTable:
    """Raw survey responses: one record per respondent, values untranslated."""

    columns: tuple[str, ...]
    rows: tuple[dict[str, str | None], ...]
    ids: tuple[str, ...]
    mapping: ColumnMapping

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.rows):
            raise DataError("one identifier per respondent row required")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate respondent id")


@dataclass(frozen=True)
class PreprocessReport:
    """Counts produced by the two preprocessing filters."""

    total_in: int
    removed_non_developers: int
    removed_incomplete: int
    retained: int

    def __post_init__(self) -> None:
        if self.total_in != self.removed_non_developers + self.removed_incomplete + self.retained:
            raise DataError("preprocess counts do not add up")


def load_raw(path: str | Path, mapping: ColumnMapping) -> RawSurveyTable:
    """Read a delimiter-separated survey file with a header row.

    Values stay untranslated. Respondent ids come from
    ``mapping.respondent_id_col`` when declared, otherwise they are
    synthesized from the row number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"survey file not found: {path}")
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh, delimiter=mapping.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        missing = [c for c in mapping.required_columns() if c not in header]
        if missing:
            raise DataError(f"{path}: missing mapped column(s): {', '.join(missing)}")
        rows: list[dict[str, str | None]] = []
        for record in reader:
            if not record:
                continue
            row: dict[str, str | None] = {
                col: (record[i] if i < len(record) else None) for i, col in enumerate(header)
            }
            rows.append(row)
    if mapping.respondent_id_col is not None:
        ids = tuple((row.get(mapping.respondent_id_col) or "").strip() for row in rows)
        if len(set(ids)) != len(ids):
            raise DataError(f"{path}: duplicate respondent id")
    else:
        width = max(4, len(str(len(rows))))
        ids = tuple(f"row{i + 1:0{width}d}" for i in range(len(rows)))
    return RawSurveyTable(tuple(header), tuple(rows), ids, mapping)


def _is_missing(value: str | None, mapping: ColumnMapping) -> bool:
    if value is None:
        return True
    value = value.strip()
    return value == "" or value in mapping.missing_values


def preprocess(raw: RawSurveyTable) -> tuple[AnnotationMatrix, PreprocessReport]:
    """Apply the two retention filters and build the annotation matrix.

    Filter 1 (first): drop respondents answering "No" to either the
    computer-scientist or the programming-experience question. Filter 2:
    drop respondents with any label column missing. A respondent failing
    both filters counts only under filter 1. Retained respondents must
    number at least 2 and have every label translatable.
    """
    mapping = raw.mapping
    no_values = set(mapping.no_values)
    encoding = mapping.encoding()

    developers: list[int] = []
    for idx, row in enumerate(raw.rows):
        cs = (row.get(mapping.computer_scientist_col) or "").strip()
        pe = (row.get(mapping.programming_experience_col) or "").strip()
        if cs in no_values or pe in no_values:
            continue
        developers.append(idx)
    removed_non_developers = len(raw.rows) - len(developers)

    complete: list[int] = []
    for idx in developers:
        row = raw.rows[idx]
        if any(_is_missing(row.get(col), mapping) for col in mapping.label_cols):
            continue
        complete.append(idx)
    removed_incomplete = len(developers) - len(complete)

    report = PreprocessReport(
        total_in=len(raw.rows),
        removed_non_developers=removed_non_developers,
        removed_incomplete=removed_incomplete,
        retained=len(complete),
    )
    if len(complete) < 2:
        raise DataError(
            f"fewer than 2 respondents retained ({len(complete)}); "
            "agreement cannot be computed"
        )

    cat_index = {c: i for i, c in enumerate(SENTIMENT_CATEGORIES)}
    codes = np.zeros((len(complete), len(mapping.label_cols)), dtype=np.int64)
    for r, idx in enumerate(complete):
        row = raw.rows[idx]
        for i, col in enumerate(mapping.label_cols):
            value = (row.get(col) or "").strip()
            if value not in encoding:
                raise DataError(
                    f"unmappable raw label value {value!r} in column {col!r} "
                    f"for respondent {raw.ids[idx]!r}"
                )
            codes[r, i] = cat_index[encoding[value]]
    matrix = AnnotationMatrix(
        raters=tuple(raw.ids[idx] for idx in complete),
        items=tuple(mapping.label_cols),
        categories=SENTIMENT_CATEGORIES,
        codes=codes,
    )
    return matrix, report


def generate_synthetic(
    raters: int,
    items: int,
    categories: int = 3,
    noise: float = 0.0,
    seed: int = 0,
) -> AnnotationMatrix:
    """Synthesize a matrix with a tunable agreement level.

    One ground-truth category per item is drawn uniformly; each rater
    independently keeps the truth with probability ``1 - noise`` and
    otherwise substitutes a uniform draw over all categories (the truth
    included). ``noise=0`` forces unanimity, ``noise=1`` gives i.i.d.
    uniform labels. Deterministic in ``seed``.
    """
    if raters < 2:
        raise DataError("raters must be >= 2")
    if items < 1:
        raise DataError("items must be >= 1")
    if categories < 2:
        raise DataError("categories must be >= 2")
    if not 0.0 <= noise <= 1.0:
        raise DataError(f"noise must be within [0, 1], got {noise}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    truth = rng.integers(categories, size=items)
    flip = rng.random((raters, items)) < noise
    replacement = rng.integers(categories, size=(raters, items))
    codes = np.where(flip, replacement, truth[None, :])
    if categories == 3:
        cats = SENTIMENT_CATEGORIES
    else:
        cats = tuple(f"c{i + 1}" for i in range(categories))
    rw = len(str(raters))
    iw = len(str(items))
    return AnnotationMatrix(
        raters=tuple(f"p{j + 1:0{rw}d}" for j in range(raters)),
        items=tuple(f"s{i + 1:0{iw}d}" for i in range(items)),
        categories=cats,
        codes=codes,
    )


def write_matrix(matrix: AnnotationMatrix, dest: str | Path | TextIO | None) -> None:
    """Write the long-format matrix file: header ``rater,item,label``, one
    row per (rater, item), rater-major order."""
    with open_text_dest(dest) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MATRIX_HEADER)
        for r, rater in enumerate(matrix.raters):
            for i, item in enumerate(matrix.items):
                writer.writerow((rater, item, matrix.categories[matrix.codes[r, i]]))


def read_matrix(path: str | Path, categories: Sequence[str] | None = None) -> AnnotationMatrix:
    """Read a long-format matrix file back into an :class:`AnnotationMatrix`.

    Rows may appear in any order; rater/item ordering follows first
    appearance. Label tokens are matched exactly (case-sensitive). With
    ``categories=None`` the category set is inferred: the canonical
    sentiment triple when every token belongs to it, otherwise the
    distinct tokens in first-appearance order.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file, header 'rater,item,label' required") from None
        if header != MATRIX_HEADER:
            raise DataError(f"{path}: expected header 'rater,item,label', got {','.join(header)}")
        raters: list[str] = []
        items: list[str] = []
        seen_tokens: list[str] = []
        cells: dict[tuple[str, str], str] = {}
        for lineno, record in enumerate(reader, 2):
            if not record:
                continue
            if len(record) != 3:
                raise DataError(f"{path}:{lineno}: malformed row, expected 3 fields")
            rater, item, token = record
            if categories is not None:
                if token not in categories:
                    raise DataError(f"{path}:{lineno}: unknown label token {token!r}")
            elif token not in SENTIMENT_CATEGORIES and token.lower() in SENTIMENT_CATEGORIES:
                # Tokens are case-sensitive; a case-variant of a canonical
                # label is a data defect, not a new category.
                raise DataError(f"{path}:{lineno}: unknown label token {token!r}")
            if (rater, item) in cells:
                raise DataError(f"{path}:{lineno}: duplicate cell for rater {rater!r}, item {item!r}")
            cells[(rater, item)] = token
            if rater not in raters:
                raters.append(rater)
            if item not in items:
                items.append(item)
            if token not in seen_tokens:
                seen_tokens.append(token)
    if categories is None:
        if set(seen_tokens) <= set(SENTIMENT_CATEGORIES):
            cats: tuple[str, ...] = SENTIMENT_CATEGORIES
        else:
            cats = tuple(seen_tokens)
    else:
        cats = tuple(categories)
    if len(cells) != len(raters) * len(items):
        for rater in raters:
            for item in items:
                if (rater, item) not in cells:
                    raise DataError(
                        f"{path}: incomplete matrix: rater {rater!r} has no label for item {item!r}"
                    )
    return AnnotationMatrix.from_labels(raters, items, cats, cells)
