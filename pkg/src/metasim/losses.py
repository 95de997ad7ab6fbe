"""Contrastive objectives and class-similarity representations.

The per-pair forms are the reference implementations; the *_over_pairs /
matrix forms are fused equivalents the training loop uses, pinned to the
reference forms by tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DimensionError,
    Tensor,
    add,
    cosine_similarity,
    euclidean_distance,
    hinge,
    l2_normalize,
    matmul,
    mean,
    mul,
    pairwise_distances,
    pair_diff_norms,
    scale,
    stack,
    total,
    transpose,
)


class SimilarityMeasure(enum.Enum):
    """Pluggable similarity; larger always means more similar."""

    COSINE = "cosine"
    NEG_EUCLIDEAN = "negative_euclidean"


def _check_margin(margin: float) -> float:
    if margin <= 0.0:
        raise ValueError(f"margin must be positive, got {margin}")
    return float(margin)


def _check_t(t) -> int:
    if t not in (0, 1):
        raise ValueError(f"pair flag t must be 0 or 1, got {t!r}")
    return int(t)


def feat_contrastive(f_i: Tensor, f_j: Tensor, t, margin: float) -> Tensor:
    """Pull same-label pairs together, push others past the margin.

    t=1 gives ||f_i - f_j||; t=0 gives max(0, margin - ||f_i - f_j||).
    """
    _check_margin(margin)
    d = euclidean_distance(f_i, f_j)
    return d if _check_t(t) == 1 else hinge(d, margin)


@dataclass
class SimilarityRepresentation:
    """Class-wise similarity vector against a fixed reference bank."""

    s: Tensor
    bank_id: int | None = None

    def __len__(self) -> int:
        return self.s.data.shape[0]


def similarity_representation(f: Tensor, bank_embeddings, measure: SimilarityMeasure,
                              bank_id: int | None = None) -> SimilarityRepresentation:
    """s(k) = sim(f, ref_k) in bank order; differentiable through both sides."""
    if len(bank_embeddings) == 0:
        raise ValueError("reference bank is empty")
    if measure is SimilarityMeasure.COSINE:
        sims = [cosine_similarity(f, r) for r in bank_embeddings]
    elif measure is SimilarityMeasure.NEG_EUCLIDEAN:
        sims = [scale(euclidean_distance(f, r), -1.0) for r in bank_embeddings]
    else:
        raise ValueError(f"unknown similarity measure {measure!r}")
    return SimilarityRepresentation(stack(sims), bank_id)


def sim_contrastive(s_i: SimilarityRepresentation, s_j: SimilarityRepresentation,
                    t, margin: float) -> Tensor:
    """Contrastive loss on similarity vectors from one bank."""
    if s_i.bank_id != s_j.bank_id:
        raise ValueError(
            f"similarity vectors come from different banks "
            f"({s_i.bank_id} vs {s_j.bank_id}) and are not comparable")
    _check_margin(margin)
    d = euclidean_distance(s_i.s, s_j.s)
    return d if _check_t(t) == 1 else hinge(d, margin)


def batch_loss(pairs, pair_loss_fn, reduction: str = "mean") -> Tensor:
    """Reduce a per-pair loss over a PairBatch; mean keeps scale batch-free."""
    if len(pairs) == 0:
        raise ValueError("cannot reduce a loss over zero pairs")
    losses = [pair_loss_fn(int(i), int(j), int(t))
              for i, j, t in zip(pairs.i_idx, pairs.j_idx, pairs.t)]
    stacked = stack(losses)
    if reduction == "mean":
        return mean(stacked)
    if reduction == "sum":
        return total(stacked)
    raise ValueError(f"unknown reduction {reduction!r}")


# ---------------------------------------------------------------------------
# fused forms used by the training loop


def contrastive_over_pairs(f: Tensor, pairs, margin: float) -> Tensor:
    """Mean contrastive loss over all pairs of rows of ``f`` at once."""
    _check_margin(margin)
    if len(pairs) == 0:
        raise ValueError("cannot reduce a loss over zero pairs")
    d = pair_diff_norms(f, pairs.i_idx, pairs.j_idx)
    t = Tensor(pairs.t)
    t_neg = Tensor(1.0 - pairs.t)
    return mean(add(mul(d, t), mul(hinge(d, margin), t_neg)))


def similarity_matrix(f: Tensor, refs: Tensor, measure: SimilarityMeasure) -> Tensor:
    """Rows of similarity vectors: out[b, k] = sim(f_b, ref_k).

    The cosine route normalizes rows with the eps guard, so an exactly
    zero row yields zero similarities instead of an error; training
    embeddings never hit that case.
    """
    if measure is SimilarityMeasure.COSINE:
        return matmul(l2_normalize(f), transpose(l2_normalize(refs)))
    if measure is SimilarityMeasure.NEG_EUCLIDEAN:
        return scale(pairwise_distances(f, refs), -1.0)
    raise ValueError(f"unknown similarity measure {measure!r}")


def similarity_matrix_np(f: np.ndarray, refs: np.ndarray,
                         measure: SimilarityMeasure) -> np.ndarray:
    """Tape-free similarity matrix for pseudo-label assignment."""
    if measure is SimilarityMeasure.COSINE:
        fn = f / np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-12)
        rn = refs / np.maximum(np.linalg.norm(refs, axis=1, keepdims=True), 1e-12)
        return fn @ rn.T
    if measure is SimilarityMeasure.NEG_EUCLIDEAN:
        diff = f[:, None, :] - refs[None, :, :]
        return -np.sqrt((diff * diff).sum(axis=2))
    raise ValueError(f"unknown similarity measure {measure!r}")
