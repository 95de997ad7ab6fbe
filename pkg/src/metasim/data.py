"""Samples, the on-disk dataset format, and the synthetic cluster benchmark."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

FORMAT_TAG = "#metasim v1"
_MAX_MEAN_REDRAWS = 1000


class DataFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


@dataclass
class Sample:
    """One feature vector with optional class label and camera/group id."""

    uid: int
    feature: np.ndarray
    label: int | None = None
    camera_id: int | None = None

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.feature.ndim != 1:
            raise ValueError(f"sample uid={self.uid}: feature must be a vector")


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file and rename so failures leave no partial file."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_dataset(path, samples: list[Sample]) -> None:
    """Write samples in the line-oriented text format; floats round-trip exactly."""
    uids = set()
    dim = None
    for s in samples:
        if s.uid in uids:
            raise ValueError(f"duplicate uid {s.uid}")
        uids.add(s.uid)
        if dim is None:
            dim = len(s.feature)
        elif len(s.feature) != dim:
            raise ValueError(
                f"uid {s.uid}: feature dimension {len(s.feature)} != {dim}")
    dim = dim or 0
    has_labels = int(any(s.label is not None for s in samples))
    has_cameras = int(any(s.camera_id is not None for s in samples))
    lines = [f"{FORMAT_TAG} dim={dim} n={len(samples)} "
             f"labels={has_labels} cameras={has_cameras}"]
    for s in samples:
        label = "-" if s.label is None else str(s.label)
        camera = "-" if s.camera_id is None else str(s.camera_id)
        values = ",".join(repr(float(v)) for v in s.feature)
        lines.append(f"{s.uid},{label},{camera},{values}" if dim
                     else f"{s.uid},{label},{camera}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_header(line: str):
    parts = line.strip().split()
    if len(parts) != 6 or " ".join(parts[:2]) != FORMAT_TAG:
        raise DataFormatError(f"line 1: expected '{FORMAT_TAG} dim=.. n=.. "
                              f"labels=.. cameras=..', got {line.strip()!r}")
    fields = {}
    for part in parts[2:]:
        key, _, value = part.partition("=")
        if key not in ("dim", "n", "labels", "cameras") or not value.isdigit():
            raise DataFormatError(f"line 1: bad header field {part!r}")
        fields[key] = int(value)
    if len(fields) != 4:
        raise DataFormatError("line 1: duplicate or missing header fields")
    return fields


def load_dataset(path) -> list[Sample]:
    """Parse a dataset file; save -> load round-trips bit-exactly."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("line 1: empty file, header expected")
    header = _parse_header(lines[0])
    dim, n = header["dim"], header["n"]
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise DataFormatError(
            f"line {len(lines)}: header declares n={n} rows, found {len(rows)}")
    samples = []
    uids = set()
    for lineno, raw in enumerate(rows, start=2):
        parts = raw.split(",")
        if len(parts) != 3 + dim:
            raise DataFormatError(
                f"line {lineno}: expected {3 + dim} fields for dim={dim}, "
                f"got {len(parts)}")
        try:
            uid = int(parts[0])
        except ValueError:
            raise DataFormatError(f"line {lineno}: bad uid {parts[0]!r}") from None
        if uid in uids:
            raise DataFormatError(f"line {lineno}: duplicate uid {uid}")
        uids.add(uid)
        label = None if parts[1] == "-" else _parse_int(parts[1], lineno, "label")
        camera = None if parts[2] == "-" else _parse_int(parts[2], lineno, "camera")
        try:
            feature = np.array([float(v) for v in parts[3:]], dtype=np.float64)
        except ValueError:
            raise DataFormatError(f"line {lineno}: bad float value") from None
        if not np.isfinite(feature).all():
            raise DataFormatError(f"line {lineno}: non-finite feature value")
        samples.append(Sample(uid, feature, label, camera))
    return samples


def _parse_int(text: str, lineno: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataFormatError(f"line {lineno}: bad {what} {text!r}") from None


# ---------------------------------------------------------------------------
# synthetic benchmark


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian cluster benchmark: disjoint labeled / unlabeled / test classes.

    ``separation`` is the guaranteed ratio of minimum inter-mean distance to
    the within-class sigma. Labeled classes take ceil(labeled_fraction * C);
    the remaining classes split evenly between the unlabeled pool and the
    held-out test split (unlabeled gets the odd one).
    """

    n_classes: int
    samples_per_class: int
    dim: int
    separation: float
    sigma: float = 1.0
    seed: int = 0
    labeled_fraction: float = 0.5

    def __post_init__(self):
        if self.n_classes < 3:
            raise ValueError("need at least 3 classes: labeled + unlabeled + test")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 < self.labeled_fraction < 1.0:
            raise ValueError("labeled_fraction must be in (0, 1)")
        n_lab = math.ceil(self.labeled_fraction * self.n_classes)
        if self.n_classes - n_lab < 2:
            raise ValueError(
                "labeled_fraction leaves fewer than 2 classes for the "
                "unlabeled pool and test split")

    def class_partition(self) -> tuple[int, int, int]:
        n_lab = math.ceil(self.labeled_fraction * self.n_classes)
        rest = self.n_classes - n_lab
        n_unlab = math.ceil(rest / 2)
        return n_lab, n_unlab, rest - n_unlab


@dataclass
class SyntheticData:
    """Generator output; unlabeled samples carry no label, the oracle does."""

    labeled: "LabeledSet"
    unlabeled: list[Sample]
    unlabeled_oracle: dict[int, int]  # uid -> true label, audits only
    test: list[Sample]


def _draw_separated_means(rng, n: int, dim: int, radius: float,
                          min_dist: float) -> np.ndarray:
    means = np.zeros((n, dim))
    for i in range(n):
        for attempt in range(_MAX_MEAN_REDRAWS):
            v = rng.standard_normal(dim)
            norm = np.linalg.norm(v)
            if norm == 0.0:
                continue
            cand = v / norm * radius
            if i == 0 or (np.linalg.norm(means[:i] - cand, axis=1)
                          >= min_dist).all():
                means[i] = cand
                break
        else:
            raise ValueError(
                f"cannot place {n} class means at separation {min_dist:g} "
                f"on a radius-{radius:g} sphere in {dim} dimensions")
    return means


def generate_synthetic(spec: SynthSpec) -> SyntheticData:
    """Sample the three label-disjoint splits from seeded Gaussian clusters."""
    from .episodes import LabeledSet

    rng = np.random.default_rng([0xDA7A, spec.seed])
    radius = spec.separation * spec.sigma
    means = _draw_separated_means(rng, spec.n_classes, spec.dim, radius,
                                  min_dist=radius)
    order = rng.permutation(spec.n_classes)
    n_lab, n_unlab, n_test = spec.class_partition()
    labeled_classes = order[:n_lab]
    unlabeled_classes = order[n_lab:n_lab + n_unlab]
    test_classes = order[n_lab + n_unlab:]

    uid = 0

    def draw_class(c: int, with_label: bool, out: list[Sample]):
        nonlocal uid
        noise = rng.standard_normal((spec.samples_per_class, spec.dim))
        for k in range(spec.samples_per_class):
            feature = means[c] + spec.sigma * noise[k]
            out.append(Sample(uid, feature, int(c) if with_label else None))
            uid += 1

    labeled_samples: list[Sample] = []
    for c in labeled_classes:
        draw_class(int(c), True, labeled_samples)

    unlabeled_samples: list[Sample] = []
    oracle: dict[int, int] = {}
    for c in unlabeled_classes:
        start = uid
        draw_class(int(c), False, unlabeled_samples)
        for u in range(start, uid):
            oracle[u] = int(c)

    test_samples: list[Sample] = []
    for c in test_classes:
        draw_class(int(c), True, test_samples)

    return SyntheticData(LabeledSet(labeled_samples), unlabeled_samples,
                         oracle, test_samples)


def split_by_label_ratio(classes, ratio: float, rng):
    """Uniform class partition with ceil(ratio * C) labeled classes."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    classes = sorted(int(c) for c in classes)
    n_lab = math.ceil(ratio * len(classes))
    picked = rng.choice(np.array(classes), size=n_lab, replace=False)
    picked_set = set(int(c) for c in picked)
    rest = [c for c in classes if c not in picked_set]
    return sorted(picked_set), rest


def hide_labels(samples: list[Sample]):
    """Strip labels for training; return (unlabeled samples, uid -> label oracle)."""
    hidden = []
    oracle = {}
    for s in samples:
        if s.label is not None:
            oracle[s.uid] = s.label
        hidden.append(Sample(s.uid, s.feature, None, s.camera_id))
    return hidden, oracle


def export_embeddings(model, samples: list[Sample], path) -> None:
    """Embed samples and write them in the dataset row framing."""
    if samples:
        feats = np.stack([s.feature for s in samples])
        emb = model.embed(feats)
        rows = [Sample(s.uid, emb[k], s.label, s.camera_id)
                for k, s in enumerate(samples)]
    else:
        rows = []
    save_dataset(path, rows)
