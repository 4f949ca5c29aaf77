"""Categorical survey data: design, ingestion and pattern frequencies.

Records are stored as an ``(I, J)`` integer array. Code ``0`` means the answer
is missing; the same code marks a marginalised position in a response
pattern, so a record and a pattern share one representation.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

MISSING = 0


class DataFormatError(ValueError):
    """Raised for malformed input rows."""


class NoEligibleRespondents(ValueError):
    """Raised when no record is observed on every position of a pattern."""

    def __init__(self, pattern):
        self.pattern = tuple(int(v) for v in pattern)
        super().__init__(f"no eligible respondents for pattern {self.pattern}")


class InestimableCombination(ValueError):
    """Raised when two patterns share a nonzero position."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurveyDesign:
    """Number of outcomes for each of ``J`` questions."""

    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if len(levels) < 1:
            raise ValueError("a design needs at least one question")
        bad = [j + 1 for j, v in enumerate(levels) if v < 2]
        if bad:
            raise ValueError(f"questions {bad} have fewer than 2 levels")
        object.__setattr__(self, "levels", levels)

    @property
    def n_questions(self) -> int:
        return len(self.levels)

    @property
    def n_cells(self) -> int:
        """Total number of (question, outcome) cells, ``|L|``."""
        return sum(self.levels)

    # cached index arrays are read-only so callers cannot corrupt them
    @cached_property
    def offsets(self) -> np.ndarray:
        """Flat index of the first cell of each question."""
        return _frozen(np.concatenate([[0], np.cumsum(self.levels)[:-1]]).astype(int))

    @cached_property
    def question_of_cell(self) -> np.ndarray:
        return _frozen(np.repeat(np.arange(self.n_questions), self.levels))

    @cached_property
    def level_of_cell(self) -> np.ndarray:
        """1-based outcome code of every cell."""
        return _frozen(np.concatenate([np.arange(1, L + 1) for L in self.levels]))

    def cell(self, j: int, level: int) -> int:
        """Flat cell index of question ``j`` (0-based), outcome ``level`` (1-based)."""
        return int(self.offsets[j]) + level - 1

    def block(self, j: int) -> slice:
        start = int(self.offsets[j])
        return slice(start, start + self.levels[j])

    def validate_records(self, records: np.ndarray) -> None:
        records = np.asarray(records)
        if records.ndim != 2 or records.shape[1] != self.n_questions:
            raise DataFormatError(
                f"records must have shape (I, {self.n_questions}), got {records.shape}"
            )
        too_big = records > np.asarray(self.levels)
        if (records < 0).any() or too_big.any():
            i, j = np.argwhere((records < 0) | too_big)[0]
            raise DataFormatError(
                f"row {i + 1}, column {j + 1}: code {records[i, j]} "
                f"outside 0..{self.levels[j]}"
            )

    def validate_pattern(self, pattern: Sequence[int]) -> np.ndarray:
        p = np.asarray(pattern, dtype=int)
        if p.shape != (self.n_questions,):
            raise ValueError(f"pattern must have length {self.n_questions}")
        if (p < 0).any() or (p > np.asarray(self.levels)).any():
            raise ValueError(f"pattern {format_pattern(p)} out of range for levels {self.levels}")
        return p

    def to_text(self) -> str:
        return " ".join(str(v) for v in self.levels)

    @classmethod
    def from_text(cls, text: str) -> "SurveyDesign":
        tokens = text.split()
        try:
            return cls(tuple(int(t) for t in tokens))
        except ValueError as exc:
            raise DataFormatError(f"bad design line {text.strip()!r}: {exc}") from exc


def read_design(path: str | os.PathLike) -> SurveyDesign:
    with open(path) as fh:
        return SurveyDesign.from_text(fh.read())


def write_design(design: SurveyDesign, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(design.to_text() + "\n")


def load_dataset(
    source: str | os.PathLike | TextIO,
    design: SurveyDesign | None = None,
    *,
    missing_token: str = ".",
    delimiter: str = ",",
    header: bool = False,
) -> tuple[SurveyDesign, np.ndarray]:
    """Parse delimiter-separated integer codes into ``(design, records)``.

    When ``design`` is None it is inferred as the maximum observed code per
    column (at least 2). Codes start at 1; ``missing_token`` maps to 0.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return load_dataset(fh, design, missing_token=missing_token,
                                delimiter=delimiter, header=header)

    rows: list[list[int]] = []
    width = None
    reader = csv.reader(source, delimiter=delimiter)
    for lineno, raw in enumerate(reader, start=1):
        if header and lineno == 1:
            continue
        if not raw or all(not t.strip() for t in raw):
            continue
        if width is None:
            width = len(raw)
        elif len(raw) != width:
            raise DataFormatError(f"row {lineno}: expected {width} fields, got {len(raw)}")
        row = []
        for col, token in enumerate(raw, start=1):
            token = token.strip()
            if token == missing_token or token == "":
                row.append(MISSING)
                continue
            try:
                code = int(token)
            except ValueError:
                raise DataFormatError(
                    f"row {lineno}, column {col}: cannot parse {token!r}"
                ) from None
            if code < 1:
                raise DataFormatError(f"row {lineno}, column {col}: code {code} < 1")
            if design is not None and col <= design.n_questions and code > design.levels[col - 1]:
                raise DataFormatError(
                    f"row {lineno}, column {col}: code {code} exceeds "
                    f"L_{col}={design.levels[col - 1]}"
                )
            row.append(code)
        rows.append(row)

    if not rows:
        raise DataFormatError("no records")
    records = np.asarray(rows, dtype=np.int64)
    if design is None:
        design = SurveyDesign(tuple(max(2, int(v)) for v in records.max(axis=0)))
    elif design.n_questions != records.shape[1]:
        raise DataFormatError(
            f"design has {design.n_questions} questions, data has {records.shape[1]} columns"
        )
    return design, records


def loads_dataset(text: str, design: SurveyDesign | None = None, **kwargs):
    """:func:`load_dataset` on an in-memory string."""
    return load_dataset(io.StringIO(text), design, **kwargs)


def write_dataset(records: np.ndarray, path_or_stream, *, missing_token: str = ".") -> None:
    def _write(fh):
        for row in np.asarray(records):
            fh.write(",".join(missing_token if v == MISSING else str(int(v)) for v in row))
            fh.write("\n")

    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "w") as fh:
            _write(fh)
    else:
        _write(path_or_stream)


def missing_as_category(design: SurveyDesign, records: np.ndarray):
    """Recode missing answers to an extra level ``L_j + 1`` of every question."""
    records = np.asarray(records)
    levels = np.asarray(design.levels)
    recoded = np.where(records == MISSING, levels[None, :] + 1, records)
    return SurveyDesign(tuple(levels + 1)), recoded


class PatternFrequency(NamedTuple):
    frequency: float
    count: int
    available: int


def format_pattern(pattern, limit: int = 24) -> str:
    """Compact text form such as ``(1,0,2)``, truncated after ``limit`` entries."""
    p = [str(int(v)) for v in pattern]
    tail = ",..." if len(p) > limit else ""
    return "(" + ",".join(p[:limit]) + tail + ")"


def pattern_order(pattern: Sequence[int]) -> int:
    return int(np.count_nonzero(pattern))


def pattern_frequency(records: np.ndarray, pattern: Sequence[int]) -> PatternFrequency:
    """Frequency of ``pattern`` among records observed on its support.

    ``count`` is the number of records matching every nonzero entry and
    ``available`` the number of records with no missing answer there.
    """
    records = np.asarray(records)
    p = np.asarray(pattern)
    support = np.flatnonzero(p)
    if support.size == 0:
        n = records.shape[0]
        return PatternFrequency(1.0, n, n)
    sub = records[:, support]
    observed = (sub != MISSING).all(axis=1)
    available = int(observed.sum())
    if available == 0:
        raise NoEligibleRespondents(p)
    count = int((sub == p[support]).all(axis=1).sum())
    return PatternFrequency(count / available, count, available)


def pattern_sum(first: Sequence[int], second: Sequence[int]) -> np.ndarray:
    """Combine two patterns with disjoint supports."""
    a = np.asarray(first, dtype=int)
    b = np.asarray(second, dtype=int)
    if a.shape != b.shape:
        raise ValueError("patterns differ in length")
    clash = np.flatnonzero((a != 0) & (b != 0))
    if clash.size:
        raise InestimableCombination(
            f"patterns {format_pattern(a)} and {format_pattern(b)} overlap at question {clash[0] + 1}"
        )
    return np.maximum(a, b)


def unique_patterns(records: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``records`` with their multiplicities (first-seen order)."""
    records = np.asarray(records)
    uniq, first, counts = np.unique(records, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    return uniq[order], counts[order]


class PatternCounter:
    """Count-based frequency source over a fixed record set.

    Besides single-pattern counts it answers the two batched queries the
    score equations need: extending a pattern by one answer at each of its
    zero positions, and deleting one answer at each nonzero position.
    """

    def __init__(self, records: np.ndarray, design: SurveyDesign):
        records = np.asarray(records, dtype=np.int64)
        design.validate_records(records)
        self.records = records
        self.design = design
        self.n_records = records.shape[0]
        self._qcell = design.question_of_cell
        self._lcell = design.level_of_cell
        # per-cell indicators: answered this cell / answered this cell's question
        self.one_hot = records[:, self._qcell] == self._lcell[None, :]
        self.observed = records != MISSING
        self.observed_cells = self.observed[:, self._qcell]

    def counts(self, pattern: Sequence[int]) -> tuple[int, int]:
        f = pattern_frequency(self.records, pattern)
        return f.count, f.available

    def frequency(self, pattern: Sequence[int]) -> tuple[float, float]:
        """``(f_pattern, available)``; raises when nothing is available."""
        f = pattern_frequency(self.records, pattern)
        return f.frequency, float(f.available)

    def extension_frequencies(self, pattern: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Frequencies of ``pattern + (j, l)`` for every cell of a zero position.

        Returns two ``|L|`` arrays (frequency, available); cells on the support
        of ``pattern`` carry ``nan`` and 0.
        """
        p = np.asarray(pattern)
        support = np.flatnonzero(p)
        sub = self.records[:, support]
        fully_observed = (sub != MISSING).all(axis=1)
        matching = fully_observed & (sub == p[support]).all(axis=1)
        counts = self.one_hot[matching].sum(axis=0).astype(float)
        available = self.observed_cells[fully_observed].sum(axis=0).astype(float)
        on_support = np.isin(self._qcell, support)
        available[on_support] = 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            freq = np.where(available > 0, counts / np.where(available > 0, available, 1), np.nan)
        return freq, available

    def deletion_frequencies(self, pattern: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Frequencies of ``pattern`` with position ``j`` zeroed, for every ``j``.

        Returns two length-``J`` arrays; entries off the support are ``nan``/0.
        """
        p = np.asarray(pattern)
        J = self.design.n_questions
        support = np.flatnonzero(p)
        freq = np.full(J, np.nan)
        available = np.zeros(J)
        if support.size == 0:
            return freq, available
        sub = self.records[:, support]
        miss = sub == MISSING
        mismatch = ~miss & (sub != p[support])
        n_miss = miss.sum(axis=1)
        n_mismatch = mismatch.sum(axis=1)
        exact = (n_miss == 0) & (n_mismatch == 0)
        base_count = exact.sum()
        one_off = (n_miss == 0) & (n_mismatch == 1)
        one_missing = (n_miss == 1) & (n_mismatch == 0)
        count = base_count + mismatch[one_off].sum(axis=0) + miss[one_missing].sum(axis=0)
        avail = (n_miss == 0).sum() + miss[n_miss == 1].sum(axis=0)
        available[support] = avail
        with np.errstate(invalid="ignore", divide="ignore"):
            freq[support] = np.where(avail > 0, count / np.where(avail > 0, avail, 1), np.nan)
        return freq, available

