"""Retrieval / re-ID evaluation: nearest-neighbor ranking and the four metrics.

Rankings are deterministic (ties broken by ascending gallery index) and
every metric has a brute-force oracle twin in the test suite.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .losses import SimilarityMeasure


@dataclass
class GallerySet:
    """Embedded gallery with labels and optional camera ids."""

    embeddings: np.ndarray
    labels: np.ndarray
    camera_ids: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.embeddings.ndim != 2 or len(self.labels) != len(self.embeddings):
            raise ValueError("gallery needs one label per embedding row")
        if not np.isfinite(self.embeddings).all():
            raise ValueError("gallery embeddings must be finite")
        if self.camera_ids is not None:
            self.camera_ids = np.asarray(self.camera_ids)
            if len(self.camera_ids) != len(self.labels):
                raise ValueError("gallery needs one camera id per row")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Ranking:
    """Per-query orderings of admissible gallery indices, best first."""

    order: list  # list of np.ndarray index arrays

    def __len__(self) -> int:
        return len(self.order)


def _scores(queries: np.ndarray, gallery: np.ndarray,
            measure: SimilarityMeasure) -> tuple[np.ndarray, bool]:
    """Score matrix and whether lower is better."""
    if measure is SimilarityMeasure.COSINE:
        qn = np.linalg.norm(queries, axis=1)
        gn = np.linalg.norm(gallery, axis=1)
        if (qn == 0).any() or (gn == 0).any():
            raise ValueError("cosine ranking is undefined for zero-norm rows")
        sims = (queries / qn[:, None]) @ (gallery / gn[:, None]).T
        return sims, False
    diff = queries[:, None, :] - gallery[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)), True


def rank_gallery(queries: np.ndarray, gallery: GallerySet,
                 measure: SimilarityMeasure, exclusion: str = "none",
                 query_labels=None, query_cameras=None) -> Ranking:
    """Order admissible gallery items per query.

    exclusion:
      - "none": every gallery item is admissible
      - "self": query set is the gallery; item q is removed for query q
      - "same_camera_id": re-ID junk rule; removes gallery items sharing
        both label and camera with the query
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != gallery.embeddings.shape[1]:
        raise ValueError(
            f"query dim {queries.shape[1]} != gallery dim "
            f"{gallery.embeddings.shape[1]}")
    if exclusion == "self" and len(queries) != len(gallery):
        raise ValueError("self-exclusion requires query set == gallery set")
    if exclusion == "same_camera_id":
        if gallery.camera_ids is None or query_cameras is None or query_labels is None:
            raise ValueError(
                "same_camera_id exclusion needs camera ids and labels for "
                "both queries and gallery")
    elif exclusion not in ("none", "self"):
        raise ValueError(f"unknown exclusion rule {exclusion!r}")

    scores, ascending = _scores(queries, gallery.embeddings, measure)
    key = scores if ascending else -scores
    order = []
    for q in range(len(queries)):
        keep = np.ones(len(gallery), dtype=bool)
        if exclusion == "self":
            keep[q] = False
        elif exclusion == "same_camera_id":
            keep &= ~((gallery.labels == query_labels[q])
                      & (gallery.camera_ids == query_cameras[q]))
        admissible = np.flatnonzero(keep)
        if len(admissible) == 0:
            raise ValueError(f"query {q} has no admissible gallery items")
        # stable sort keeps ascending-index order among exact ties
        order.append(admissible[np.argsort(key[q, admissible], kind="stable")])
    return Ranking(order)


def recall_at_k(ranking: Ranking, query_labels, gallery_labels, ks) -> dict:
    """Fraction of queries with a same-label item in the top k."""
    gallery_labels = np.asarray(gallery_labels)
    n_gallery = len(gallery_labels)
    ks = [int(k) for k in ks]
    if any(k < 1 or k > n_gallery for k in ks):
        raise ValueError(f"each k must be in [1, {n_gallery}], got {ks}")
    out = {k: 0 for k in ks}
    for q, order in enumerate(ranking.order):
        hits = gallery_labels[order] == query_labels[q]
        for k in ks:
            if hits[:k].any():
                out[k] += 1
    n_q = max(1, len(ranking.order))
    return {k: out[k] / n_q for k in ks}


def first_match_positions(ranking: Ranking, query_labels, gallery_labels):
    """1-based rank of each query's first correct match; None when absent."""
    gallery_labels = np.asarray(gallery_labels)
    positions = []
    for q, order in enumerate(ranking.order):
        hits = np.flatnonzero(gallery_labels[order] == query_labels[q])
        positions.append(None if len(hits) == 0 else int(hits[0]) + 1)
    return positions


def cmc(ranking: Ranking, query_labels, gallery_labels, ranks) -> dict:
    """Fraction of matchable queries whose first hit lands within each rank.

    Queries with no admissible correct match are excluded from the
    denominator (count them with ``first_match_positions``).
    """
    ranks = [int(r) for r in ranks]
    if any(r < 1 for r in ranks):
        raise ValueError(f"ranks must be >= 1, got {ranks}")
    positions = [p for p in first_match_positions(ranking, query_labels,
                                                  gallery_labels)
                 if p is not None]
    if not positions:
        raise ValueError("no query has an admissible correct match")
    return {r: sum(p <= r for p in positions) / len(positions) for r in ranks}


def average_precision(relevance) -> float | None:
    """AP of one binary relevance list; None when nothing is relevant."""
    relevance = np.asarray(relevance, dtype=bool)
    n_rel = int(relevance.sum())
    if n_rel == 0:
        return None
    cum = np.cumsum(relevance)
    precisions = cum[relevance] / (np.flatnonzero(relevance) + 1)
    return float(precisions.sum() / n_rel)


def mean_average_precision(ranking: Ranking, query_labels,
                           gallery_labels) -> float:
    """Mean AP over queries that have at least one relevant gallery item."""
    gallery_labels = np.asarray(gallery_labels)
    aps = []
    for q, order in enumerate(ranking.order):
        ap = average_precision(gallery_labels[order] == query_labels[q])
        if ap is not None:
            aps.append(ap)
    if not aps:
        raise ValueError("no query has an admissible correct match")
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# clustering + NMI


def kmeans_cluster(points: np.ndarray, k: int, rng, n_restarts: int = 10,
                   max_iter: int = 100) -> np.ndarray:
    """Seeded k-means with k-means++ style init; best of n_restarts by inertia."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    best_labels, best_inertia = None, np.inf
    for _ in range(n_restarts):
        centers = _kmeanspp_init(points, k, rng)
        labels = np.zeros(n, dtype=int)
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            for c in range(k):
                mask = new_labels == c
                if mask.any():
                    centers[c] = points[mask].mean(axis=0)
                else:
                    # revive an empty cluster at the worst-fit point
                    far = d2[np.arange(n), new_labels].argmax()
                    centers[c] = points[far]
                    new_labels[far] = c
            if (new_labels == labels).all():
                labels = new_labels
                break
            labels = new_labels
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels.copy()
    return best_labels


def _kmeanspp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        totald = d2.sum()
        if totald == 0.0:
            centers[c:] = points[rng.integers(n, size=k - c)]
            break
        centers[c] = points[rng.choice(n, p=d2 / totald)]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def nmi_from_assignments(pred, truth) -> float:
    """NMI between two labelings, normalized by the mean of the entropies.

    Zero entropy on either side gives 0 by convention.
    """
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise ValueError("labelings must have equal length")
    n = len(pred)
    if n == 0:
        raise ValueError("empty labelings")
    joint = Counter(zip(pred, truth))
    cp = Counter(pred)
    ct = Counter(truth)
    h_p = -sum(c / n * math.log(c / n) for c in cp.values())
    h_t = -sum(c / n * math.log(c / n) for c in ct.values())
    if h_p == 0.0 or h_t == 0.0:
        return 0.0
    mi = sum(c / n * math.log(n * c / (cp[p] * ct[t]))
             for (p, t), c in joint.items())
    return max(0.0, min(1.0, 2.0 * mi / (h_p + h_t)))


def nmi(embeddings: np.ndarray, labels, n_clusters: int, rng) -> float:
    """Cluster embeddings with seeded k-means, then NMI against the labels."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if not 2 <= n_clusters <= len(embeddings):
        raise ValueError(
            f"n_clusters must be in [2, {len(embeddings)}], got {n_clusters}")
    if np.ptp(embeddings, axis=0).max(initial=0.0) == 0.0:
        warnings.warn("all embeddings identical; NMI degenerates to 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    assignments = kmeans_cluster(embeddings, n_clusters, rng)
    return nmi_from_assignments(assignments.tolist(), list(labels))


# ---------------------------------------------------------------------------
# full protocol


@dataclass
class EvalProtocol:
    """How to evaluate: retrieval (cosine, query=gallery) or re-ID (euclidean)."""

    mode: str = "retrieval"
    recall_ks: tuple = (1, 2, 4, 8)
    cmc_ranks: tuple = (1, 5, 10)
    n_clusters: int | None = None  # default: number of distinct test labels
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("retrieval", "reid"):
            raise ValueError(f"mode must be 'retrieval' or 'reid', got {self.mode!r}")

    @property
    def measure(self) -> SimilarityMeasure:
        return (SimilarityMeasure.COSINE if self.mode == "retrieval"
                else SimilarityMeasure.NEG_EUCLIDEAN)


@dataclass
class EvalReport:
    """All metric values plus the configuration that produced them."""

    recall: dict
    nmi_value: float
    cmc_values: dict
    map_value: float
    n_queries: int
    n_gallery: int
    n_queries_without_match: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        values = list(self.recall.values()) + list(self.cmc_values.values())
        values += [self.nmi_value, self.map_value]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError(f"metric out of [0, 1]: {self}")
        for series in (self.recall, self.cmc_values):
            keys = sorted(series)
            if any(series[a] > series[b] for a, b in zip(keys, keys[1:])):
                raise ValueError(f"metric not monotone in rank: {series}")

    def metric_keys(self) -> list[str]:
        return ([f"R@{k}" for k in sorted(self.recall)] + ["NMI"]
                + [f"CMC@{r}" for r in sorted(self.cmc_values)] + ["mAP"])

    def metrics(self) -> dict:
        out = {f"R@{k}": self.recall[k] for k in sorted(self.recall)}
        out["NMI"] = self.nmi_value
        out.update({f"CMC@{r}": self.cmc_values[r] for r in sorted(self.cmc_values)})
        out["mAP"] = self.map_value
        return out

    def to_text(self) -> str:
        lines = [f"{key} = {value!r}" for key, value in self.metrics().items()]
        lines.append(f"n_queries = {self.n_queries}")
        lines.append(f"n_gallery = {self.n_gallery}")
        lines.append(f"n_queries_without_match = {self.n_queries_without_match}")
        for key in sorted(self.config):
            lines.append(f"config.{key} = {self.config[key]}")
        return "\n".join(lines) + "\n"

    def to_table_row(self, delimiter: str = ",") -> str:
        header = delimiter.join(self.metric_keys())
        row = delimiter.join(repr(v) for v in self.metrics().values())
        return f"{header}\n{row}\n"


def _clip_ks(ks, n: int):
    return tuple(k for k in ks if k <= n) or (min(ks),)


def evaluate(model, query_samples: list[Sample], protocol: EvalProtocol,
             gallery_samples: list[Sample] | None = None) -> EvalReport:
    """Embed a test split and run the full metric battery.

    Retrieval mode ranks the split against itself (self-exclusion).
    Re-ID mode requires a separate gallery and applies the same-camera
    same-id junk rule when camera ids are present on both sides.
    """
    if protocol.mode == "reid" and gallery_samples is None:
        raise ValueError("re-ID protocol needs a query/gallery split")
    if protocol.mode == "retrieval" and gallery_samples is not None:
        raise ValueError("retrieval protocol ranks the test split against itself")
    if any(s.label is None for s in query_samples):
        raise ValueError("evaluation samples need labels")

    q_feats = np.stack([s.feature for s in query_samples])
    q_emb = model.embed(q_feats)
    q_labels = np.array([s.label for s in query_samples])

    if protocol.mode == "retrieval":
        gallery = GallerySet(q_emb, q_labels)
        ranking = rank_gallery(q_emb, gallery, protocol.measure, exclusion="self")
        all_emb, all_labels = q_emb, q_labels
    else:
        if any(s.label is None for s in gallery_samples):
            raise ValueError("evaluation samples need labels")
        g_emb = model.embed(np.stack([s.feature for s in gallery_samples]))
        g_labels = np.array([s.label for s in gallery_samples])
        q_cams = [s.camera_id for s in query_samples]
        g_cams = [s.camera_id for s in gallery_samples]
        have_cams = (all(c is not None for c in q_cams)
                     and all(c is not None for c in g_cams))
        gallery = GallerySet(g_emb, g_labels,
                             np.array(g_cams) if have_cams else None)
        ranking = rank_gallery(
            q_emb, gallery, protocol.measure,
            exclusion="same_camera_id" if have_cams else "none",
            query_labels=q_labels,
            query_cameras=np.array(q_cams) if have_cams else None)
        all_emb = np.concatenate([q_emb, g_emb])
        all_labels = np.concatenate([q_labels, g_labels])

    n_clusters = protocol.n_clusters or len(set(all_labels.tolist()))
    n_clusters = max(2, min(n_clusters, len(all_emb)))
    rng = np.random.default_rng([0xE7A1, protocol.seed])
    positions = first_match_positions(ranking, q_labels, gallery.labels)
    report = EvalReport(
        recall=recall_at_k(ranking, q_labels, gallery.labels,
                           _clip_ks(protocol.recall_ks, len(gallery))),
        nmi_value=nmi(all_emb, all_labels.tolist(), n_clusters,
                      rng) if len(set(all_labels.tolist())) > 1 else 0.0,
        cmc_values=cmc(ranking, q_labels, gallery.labels, protocol.cmc_ranks),
        map_value=mean_average_precision(ranking, q_labels, gallery.labels),
        n_queries=len(q_labels),
        n_gallery=len(gallery),
        n_queries_without_match=sum(p is None for p in positions),
        config={"mode": protocol.mode, "measure": protocol.measure.value,
                "n_clusters": n_clusters, "seed": protocol.seed},
    )
    return report
