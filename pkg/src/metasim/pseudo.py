"""Pseudo positive/negative pairing by thresholding similarity-vector distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import SimilarityRepresentation


@dataclass
class PseudoPairSet:
    """Pair decisions: t_hat = 1 exactly when delta = ||s_i - s_j|| < psi."""

    i_idx: np.ndarray
    j_idx: np.ndarray
    t_hat: np.ndarray
    delta: np.ndarray
    psi: float
    bank_id: int | None = None

    def __len__(self) -> int:
        return len(self.i_idx)

    @property
    def n_positive(self) -> int:
        return int(self.t_hat.sum())


@dataclass
class PairAudit:
    """Confusion counts of pseudo decisions against oracle pair labels.

    With zero predicted positives the positive precision is undefined; it
    is reported as 1.0 with ``degenerate_precision`` set (same convention
    for recall when no true-positive pair exists).
    """

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n_pairs(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def degenerate_precision(self) -> bool:
        return self.tp + self.fp == 0

    @property
    def degenerate_recall(self) -> bool:
        return self.tp + self.fn == 0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return 1.0 if denom == 0 else self.tp / denom

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return 1.0 if denom == 0 else self.tp / denom

    @property
    def negative_precision(self) -> float:
        denom = self.tn + self.fn
        return 1.0 if denom == 0 else self.tn / denom

    @property
    def negative_recall(self) -> float:
        denom = self.tn + self.fp
        return 1.0 if denom == 0 else self.tn / denom


def _check_psi(psi: float) -> float:
    if psi <= 0.0:
        raise ValueError(f"threshold psi must be positive, got {psi}")
    return float(psi)


def pair_deltas(s_matrix: np.ndarray, i_idx, j_idx) -> np.ndarray:
    """||s_i - s_j|| for each pair of rows of a similarity matrix."""
    diff = s_matrix[np.asarray(i_idx)] - s_matrix[np.asarray(j_idx)]
    return np.linalg.norm(diff, axis=1)


def assign_pseudo_pairs(s_vectors: list[SimilarityRepresentation], pairs,
                        psi: float) -> PseudoPairSet:
    """Decide same/different class for each pair by strict delta < psi."""
    _check_psi(psi)
    if not s_vectors:
        raise ValueError("no similarity vectors given")
    bank_id = s_vectors[0].bank_id
    for s in s_vectors[1:]:
        if s.bank_id != bank_id:
            raise ValueError(
                f"similarity vectors mix banks {bank_id} and {s.bank_id}")
    s_matrix = np.stack([s.s.data for s in s_vectors])
    i_idx = np.asarray([p[0] for p in pairs], dtype=np.intp)
    j_idx = np.asarray([p[1] for p in pairs], dtype=np.intp)
    delta = pair_deltas(s_matrix, i_idx, j_idx)
    t_hat = (delta < psi).astype(np.float64)
    return PseudoPairSet(i_idx, j_idx, t_hat, delta, float(psi), bank_id)


def audit_pairs(pseudo: PseudoPairSet, oracle_labels) -> PairAudit:
    """Confusion counts of t_hat against label equality."""
    labels = list(oracle_labels)
    needed = int(max(pseudo.i_idx.max(), pseudo.j_idx.max())) if len(pseudo) else -1
    if needed >= len(labels):
        raise ValueError(
            f"oracle labels cover {len(labels)} samples but pairs reference "
            f"index {needed}")
    for k, lab in enumerate(labels):
        if lab is None:
            raise ValueError(f"missing oracle label for sample index {k}")
    arr = np.asarray(labels)
    same = arr[pseudo.i_idx] == arr[pseudo.j_idx]
    pos = pseudo.t_hat == 1.0
    return PairAudit(tp=int((pos & same).sum()),
                     fp=int((pos & ~same).sum()),
                     tn=int((~pos & ~same).sum()),
                     fn=int((~pos & same).sum()))


def sweep_threshold(s_vectors, pairs, oracle_labels, psi_grid):
    """One audit per grid point; the grid must be ascending and positive."""
    grid = [float(p) for p in psi_grid]
    if not grid:
        raise ValueError("psi grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("psi grid must be strictly ascending")
    out = []
    for psi in grid:
        pseudo = assign_pseudo_pairs(s_vectors, pairs, psi)
        out.append((psi, audit_pairs(pseudo, oracle_labels)))
    return out


def audit_table(rows) -> str:
    """Render (psi, PairAudit) rows as a CSV table for external plotting."""
    lines = ["psi,TP,FP,TN,FN,precision,recall"]
    for psi, audit in rows:
        lines.append(f"{psi!r},{audit.tp},{audit.fp},{audit.tn},{audit.fn},"
                     f"{audit.precision!r},{audit.recall!r}")
    return "\n".join(lines) + "\n"
