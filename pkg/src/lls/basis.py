"""Basis of the supporting plane: ``K`` probability-like vectors in ``R^|L|``."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import SurveyDesign

logger = logging.getLogger(__name__)

SUM_TOL = 1e-12
INDEPENDENCE_TOL = 1e-9
NONNEG_TOL = 1e-12


class BasisError(ValueError):
    pass


def question_sums(vectors: np.ndarray, design: SurveyDesign) -> np.ndarray:
    """Per-question sums of each row of ``vectors``, shape ``(n, J)``."""
    vectors = np.atleast_2d(vectors)
    return np.add.reduceat(vectors, design.offsets, axis=1)


@dataclass(frozen=True, eq=False)
class Basis:
    """``K`` vectors whose entries sum to one within every question block.

    ``vectors`` has shape ``(K, |L|)``. Entries may be negative unless the
    basis is meant to be a set of pure types (``nonneg=True``).
    """

    design: SurveyDesign
    vectors: np.ndarray
    nonneg: bool = False
    sum_tol: float = field(default=SUM_TOL, repr=False)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.shape[1] != self.design.n_cells:
            raise BasisError(f"basis vectors have {v.shape[1]} entries, design has {self.design.n_cells} cells")
        dev = np.abs(question_sums(v, self.design) - 1.0).max()
        if dev > self.sum_tol:
            raise BasisError(f"per-question sums deviate from 1 by {dev:.3g}")
        smin = np.linalg.svd(v, compute_uv=False).min()
        if smin <= INDEPENDENCE_TOL:
            raise BasisError(f"basis vectors are linearly dependent (smallest singular value {smin:.3g})")
        if self.nonneg and v.min() < -NONNEG_TOL:
            raise BasisError(f"pure-type basis has negative entry {v.min():.3g}")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def min_entry(self) -> float:
        return float(self.vectors.min())

    def probabilities(self, scores: np.ndarray) -> np.ndarray:
        """Individual probability vectors ``beta = g @ vectors``."""
        return np.asarray(scores, dtype=float) @ self.vectors

    def question_block(self, j: int) -> np.ndarray:
        """``(K, L_j)`` slice for question ``j``."""
        return self.vectors[:, self.design.block(j)]

    def permuted(self, order) -> "Basis":
        return Basis(self.design, self.vectors[list(order)], self.nonneg)
