"""Episodic data machinery: disjoint-label splits, reference banks, pair batches."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Sample

_bank_ids = itertools.count()


class LabeledSet:
    """Samples with labels plus a label -> sample-index map.

    Singleton classes are representable (reference sampling allows them);
    ``check_pairable`` enforces the >= 2 samples per class rule that pair
    training needs.
    """

    def __init__(self, samples: list[Sample]):
        self.samples = list(samples)
        index: dict[int, list[int]] = {}
        for i, s in enumerate(self.samples):
            if s.label is None:
                raise ValueError(f"sample uid={s.uid} has no label")
            index.setdefault(s.label, []).append(i)
        self.class_index = index

    @property
    def labels(self) -> list[int]:
        return sorted(self.class_index)

    @property
    def n_classes(self) -> int:
        return len(self.class_index)

    def __len__(self) -> int:
        return len(self.samples)

    def check_pairable(self) -> None:
        for label, idxs in sorted(self.class_index.items()):
            if len(idxs) < 2:
                raise ValueError(
                    f"class {label} has {len(idxs)} sample(s); every class "
                    f"needs at least 2 to form positive pairs"
                )

    def subset_by_labels(self, labels) -> "LabeledSet":
        keep = set(labels)
        return LabeledSet([s for s in self.samples if s.label in keep])

    def feature_matrix(self, indices=None) -> np.ndarray:
        if indices is None:
            return np.stack([s.feature for s in self.samples])
        return np.stack([self.samples[i].feature for i in indices])


@dataclass
class EpisodeSplit:
    """One episode's class-disjoint partition of the labeled data."""

    meta_train: LabeledSet
    meta_val: LabeledSet

    def __post_init__(self):
        both = set(self.meta_train.class_index) & set(self.meta_val.class_index)
        if both:
            raise ValueError(f"meta-train and meta-val share labels {sorted(both)}")


@dataclass
class ReferenceBank:
    """One reference sample per class, in a fixed coordinate order.

    The bank id ties similarity vectors to the bank that defined their
    coordinates; vectors from different banks are not comparable.
    """

    class_labels: list[int]
    sample_indices: list[int]
    features: np.ndarray
    bank_id: int = field(default_factory=lambda: next(_bank_ids))

    def __len__(self) -> int:
        return len(self.class_labels)


@dataclass
class PairBatch:
    """All unordered position pairs within a batch, with same-label flags."""

    i_idx: np.ndarray
    j_idx: np.ndarray
    t: np.ndarray  # 1 where labels match, 0 otherwise

    def __len__(self) -> int:
        return len(self.i_idx)

    @classmethod
    def from_labels(cls, labels) -> "PairBatch":
        labels = np.asarray(labels)
        i_idx, j_idx = np.triu_indices(len(labels), k=1)
        return cls(i_idx, j_idx, (labels[i_idx] == labels[j_idx]).astype(np.float64))

    @property
    def n_positive(self) -> int:
        return int(self.t.sum())


def split_episode(labeled: LabeledSet, c_mt: int, rng) -> EpisodeSplit:
    """Uniformly random class partition into meta-train / meta-val."""
    c_l = labeled.n_classes
    if not 1 <= c_mt < c_l:
        raise ValueError(f"c_mt must be in [1, {c_l - 1}], got {c_mt}")
    labels = np.array(labeled.labels)
    chosen = rng.choice(labels, size=c_mt, replace=False)
    chosen_set = set(int(c) for c in chosen)
    rest = [int(c) for c in labels if int(c) not in chosen_set]
    return EpisodeSplit(labeled.subset_by_labels(chosen_set),
                        labeled.subset_by_labels(rest))


def sample_references(labeled: LabeledSet, classes, rng) -> ReferenceBank:
    """One uniformly drawn reference per requested class, in request order."""
    chosen_labels, chosen_idx = [], []
    for label in classes:
        idxs = labeled.class_index.get(label)
        if not idxs:
            raise ValueError(f"class {label} not present in the labeled set")
        pick = idxs[int(rng.integers(len(idxs)))]
        chosen_labels.append(label)
        chosen_idx.append(pick)
    return ReferenceBank(chosen_labels, chosen_idx,
                         labeled.feature_matrix(chosen_idx))


def sample_pk_batch(labeled: LabeledSet, p: int, k: int, rng):
    """Batch of p classes x k instances plus every within-batch pair.

    Classes with fewer than k samples are drawn with replacement.
    Returns (sample indices into the set, PairBatch over batch positions).
    """
    if p < 1 or k < 1:
        raise ValueError(f"need p >= 1 and k >= 1, got p={p}, k={k}")
    if p > labeled.n_classes:
        raise ValueError(
            f"p={p} exceeds the {labeled.n_classes} classes available")
    labels = np.array(labeled.labels)
    classes = rng.choice(labels, size=p, replace=False)
    indices = []
    batch_labels = []
    for c in classes:
        idxs = labeled.class_index[int(c)]
        take = rng.choice(len(idxs), size=k, replace=len(idxs) < k)
        indices.extend(idxs[i] for i in take)
        batch_labels.extend([int(c)] * k)
    return np.array(indices), PairBatch.from_labels(batch_labels)


def unlabeled_pair_batch(samples: list[Sample], b: int, rng):
    """b distinct samples and all candidate pairs (labels unknown).

    Returns (sample indices, (i_idx, j_idx)) with pair indices over batch
    positions; the pseudo-labeling stage fills in the pair decisions.
    """
    if b < 2:
        raise ValueError(f"need b >= 2 to form a pair, got {b}")
    if b > len(samples):
        raise ValueError(f"b={b} exceeds the {len(samples)} unlabeled samples")
    indices = rng.choice(len(samples), size=b, replace=False)
    i_idx, j_idx = np.triu_indices(b, k=1)
    return indices, (i_idx, j_idx)


def default_c_mt(n_classes: int) -> int:
    """Even split default: half the classes (rounded up) go to meta-train."""
    return max(1, math.ceil(n_classes / 2))
