"""Two-phase training loops: episodic meta phase, then semi-supervised phase.

Phase 1 alternates feature-contrastive steps on the meta-training classes
with similarity-contrastive steps on the disjoint meta-validation classes,
re-splitting every epoch and stopping when the meta-validation loss stalls.
Phase 2 trains feature-contrastive on labeled batches plus pseudo-labeled
unlabeled batches whose pair decisions come from similarity vectors against
freshly sampled labeled references.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradTape, Tensor, add, scale
from .data import Sample, atomic_write_text
from .episodes import (
    LabeledSet,
    PairBatch,
    default_c_mt,
    sample_pk_batch,
    sample_references,
    split_episode,
    unlabeled_pair_batch,
)
from .losses import (
    SimilarityMeasure,
    contrastive_over_pairs,
    similarity_matrix,
    similarity_matrix_np,
)
from .model import AdamState, EmbeddingModel, LrSchedule, adam_step
from .pseudo import pair_deltas

CONVERGENCE_TOL = 1e-4

PHASES = ("meta", "semi", "supervised")


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    phase: str
    epochs: int
    batch_labeled: int = 32
    batch_unlabeled: int = 64
    batch_meta_val: int = 64
    lr: float = 2e-3
    lr_decay: float = 0.1
    lr_every: int = 150
    margin: float = 0.3
    psi: float = 0.1
    c_mt: int | None = None  # None: half the classes, rounded up
    lambda_u: float = 1.0
    patience: int = 20
    seed: int = 0
    measure: SimilarityMeasure = SimilarityMeasure.COSINE

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_labeled", "batch_unlabeled", "batch_meta_val"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.psi <= 0:
            raise ValueError("psi must be positive")
        if self.lambda_u < 0:
            raise ValueError("lambda_u must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.c_mt is not None and self.c_mt < 1:
            raise ValueError("c_mt must be >= 1")
        if isinstance(self.measure, str):
            self.measure = SimilarityMeasure(self.measure)

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.lr_decay, self.lr_every)


@dataclass
class EpochRecord:
    epoch: int
    feat_loss: float
    lr: float
    sim_loss: float | None = None
    unlabeled_loss: float | None = None
    pseudo_pairs: int | None = None
    pseudo_positive: int | None = None
    pseudo_precision: float | None = None
    wall_time: float = 0.0  # informational; not serialized


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            doc = {"epoch": r.epoch, "feat_loss": r.feat_loss,
                   "sim_loss": r.sim_loss, "unlabeled_loss": r.unlabeled_loss,
                   "lr": r.lr, "pseudo_pairs": r.pseudo_pairs,
                   "pseudo_positive": r.pseudo_positive,
                   "pseudo_precision": r.pseudo_precision}
            lines.append(json.dumps(doc))
        return "\n".join(lines) + ("\n" if lines else "")


def save_log(path, log: TrainLog) -> None:
    atomic_write_text(path, log.to_jsonl())


def _pk_shape(n_classes: int, batch: int) -> tuple[int, int]:
    """p classes x k instances filling roughly one batch."""
    p = min(n_classes, max(2, batch // 4)) if n_classes > 1 else 1
    k = max(2, batch // p)
    return p, k


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss ({value}) at {what}")
    return value


def _stream(seed: int, k: int):
    return np.random.default_rng([0x7121, seed, k])


def _sgd_round(model, state, x, pairs, margin, lr, what,
               s_refs=None, measure=None):
    """One optimizer step; loss over pairs of embeddings or of s-vectors."""
    tape = GradTape()
    for p in model.parameters():
        tape.watch(p)
    f = model.forward(Tensor(x))
    if s_refs is not None:
        f_ref = model.forward(Tensor(s_refs))
        f = similarity_matrix(f, f_ref, measure)
    loss = contrastive_over_pairs(f, pairs, margin)
    value = _check_finite(float(loss), what)
    tape.backward(loss)
    grads = [tape.grad(p) for p in model.parameters()]
    tape.release()
    adam_step(model, grads, state, lr)
    return value


def _episodic_loop(labeled: LabeledSet, cfg: TrainConfig,
                   model: EmbeddingModel) -> tuple[EmbeddingModel, TrainLog]:
    labeled.check_pairable()
    if labeled.n_classes < 2:
        raise ValueError("episodic training needs at least 2 labeled classes")
    c_mt = cfg.c_mt if cfg.c_mt is not None else default_c_mt(labeled.n_classes)
    if not 1 <= c_mt < labeled.n_classes:
        raise ValueError(
            f"c_mt={c_mt} must leave at least one meta-validation class "
            f"(have {labeled.n_classes})")

    split_rng = _stream(cfg.seed, 1)
    mt_rng = _stream(cfg.seed, 2)
    ref_rng = _stream(cfg.seed, 3)
    mv_rng = _stream(cfg.seed, 4)

    state = AdamState.for_model(model)
    log = TrainLog()
    best = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.schedule.lr_at(epoch - 1)
        split = split_episode(labeled, c_mt, split_rng)

        feat_losses = []
        p, k = _pk_shape(split.meta_train.n_classes, cfg.batch_labeled)
        for step in range(max(1, len(split.meta_train) // cfg.batch_labeled)):
            idx, pairs = sample_pk_batch(split.meta_train, p, k, mt_rng)
            feat_losses.append(_sgd_round(
                model, state, split.meta_train.feature_matrix(idx), pairs,
                cfg.margin, lr,
                f"epoch {epoch}, meta-train batch {step}"))

        bank = sample_references(split.meta_train, split.meta_train.labels,
                                 ref_rng)
        sim_losses = []
        p, k = _pk_shape(split.meta_val.n_classes, cfg.batch_meta_val)
        for step in range(max(1, len(split.meta_val) // cfg.batch_meta_val)):
            idx, pairs = sample_pk_batch(split.meta_val, p, k, mv_rng)
            sim_losses.append(_sgd_round(
                model, state, split.meta_val.feature_matrix(idx), pairs,
                cfg.margin, lr,
                f"epoch {epoch}, meta-val batch {step}",
                s_refs=bank.features, measure=cfg.measure))

        sim_mean = float(np.mean(sim_losses))
        log.records.append(EpochRecord(
            epoch=epoch, feat_loss=float(np.mean(feat_losses)), lr=lr,
            sim_loss=sim_mean, wall_time=time.perf_counter() - t0))

        if best - sim_mean > CONVERGENCE_TOL:
            best = sim_mean
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return model, log


def train_meta(labeled: LabeledSet, cfg: TrainConfig,
               model: EmbeddingModel) -> tuple[EmbeddingModel, TrainLog]:
    """Phase 1: learn embeddings and similarity vectors episodically."""
    if cfg.phase != "meta":
        raise ValueError(f"train_meta needs cfg.phase='meta', got {cfg.phase!r}")
    return _episodic_loop(labeled, cfg, model)


def train_supervised(labeled: LabeledSet, cfg: TrainConfig,
                     model: EmbeddingModel) -> tuple[EmbeddingModel, TrainLog]:
    """Fully supervised mode: the episodic loop over the whole labeled set."""
    if cfg.phase != "supervised":
        raise ValueError(
            f"train_supervised needs cfg.phase='supervised', got {cfg.phase!r}")
    return _episodic_loop(labeled, cfg, model)


def train_semi(labeled: LabeledSet, unlabeled: list[Sample], cfg: TrainConfig,
               model: EmbeddingModel,
               oracle: dict[int, int] | None = None
               ) -> tuple[EmbeddingModel, TrainLog]:
    """Phase 2: joint training on labeled data and pseudo-paired unlabeled data.

    ``oracle`` (uid -> true label) only feeds the per-epoch pseudo-pair
    precision in the log; decisions never see it.
    """
    if cfg.phase != "semi":
        raise ValueError(f"train_semi needs cfg.phase='semi', got {cfg.phase!r}")
    if not unlabeled:
        raise ValueError(
            "unlabeled set is empty; use the supervised phase for "
            "labeled-only training")
    for s in unlabeled:
        if s.label is not None:
            raise ValueError(
                f"unlabeled sample uid={s.uid} carries a label; strip labels "
                f"with hide_labels and pass the oracle separately")
    labeled.check_pairable()
    if cfg.batch_unlabeled > len(unlabeled):
        raise ValueError(
            f"batch_unlabeled={cfg.batch_unlabeled} exceeds the unlabeled "
            f"pool size {len(unlabeled)}")
    c_mt = cfg.c_mt if cfg.c_mt is not None else default_c_mt(labeled.n_classes)
    if not 1 <= c_mt <= labeled.n_classes:
        raise ValueError(f"c_mt={c_mt} must be in [1, {labeled.n_classes}]")

    lab_rng = _stream(cfg.seed, 5)
    ref_rng = _stream(cfg.seed, 6)
    unlab_rng = _stream(cfg.seed, 7)
    labels = np.array(labeled.labels)
    unlab_features = np.stack([s.feature for s in unlabeled])
    oracle_labels = (np.array([oracle.get(s.uid, -1) for s in unlabeled])
                     if oracle is not None else None)

    state = AdamState.for_model(model)
    log = TrainLog()
    p, k = _pk_shape(labeled.n_classes, cfg.batch_labeled)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = cfg.schedule.lr_at(epoch - 1)
        lab_losses, unlab_losses = [], []
        n_pairs = n_pos = n_pos_correct = 0
        for step in range(max(1, len(labeled) // cfg.batch_labeled)):
            idx, pairs = sample_pk_batch(labeled, p, k, lab_rng)
            tape = GradTape()
            for prm in model.parameters():
                tape.watch(prm)
            f_lab = model.forward(Tensor(labeled.feature_matrix(idx)))
            loss = contrastive_over_pairs(f_lab, pairs, cfg.margin)
            lab_losses.append(float(loss))

            if cfg.lambda_u > 0.0:
                ref_classes = ref_rng.choice(labels, size=c_mt, replace=False)
                bank = sample_references(labeled, [int(c) for c in ref_classes],
                                         ref_rng)
                u_idx, (ui, uj) = unlabeled_pair_batch(
                    unlabeled, cfg.batch_unlabeled, unlab_rng)
                f_unlab = model.forward(Tensor(unlab_features[u_idx]))
                # pair decisions are constants: similarity vectors computed
                # against a tape-free snapshot of the bank embeddings
                s_mat = similarity_matrix_np(
                    f_unlab.data, model.embed(bank.features), cfg.measure)
                t_hat = (pair_deltas(s_mat, ui, uj) < cfg.psi).astype(np.float64)
                pseudo_pairs = PairBatch(ui, uj, t_hat)
                u_loss = contrastive_over_pairs(f_unlab, pseudo_pairs, cfg.margin)
                unlab_losses.append(float(u_loss))
                loss = add(loss, scale(u_loss, cfg.lambda_u))
                n_pairs += len(pseudo_pairs)
                n_pos += pseudo_pairs.n_positive
                if oracle_labels is not None:
                    batch_labels = oracle_labels[u_idx]
                    same = batch_labels[ui] == batch_labels[uj]
                    n_pos_correct += int((same & (t_hat == 1.0)).sum())

            _check_finite(float(loss), f"epoch {epoch}, semi batch {step}")
            tape.backward(loss)
            grads = [tape.grad(prm) for prm in model.parameters()]
            tape.release()
            adam_step(model, grads, state, lr)

        log.records.append(EpochRecord(
            epoch=epoch, feat_loss=float(np.mean(lab_losses)), lr=lr,
            unlabeled_loss=float(np.mean(unlab_losses)) if unlab_losses else None,
            pseudo_pairs=n_pairs if cfg.lambda_u > 0 else None,
            pseudo_positive=n_pos if cfg.lambda_u > 0 else None,
            pseudo_precision=(n_pos_correct / n_pos
                              if oracle_labels is not None and n_pos else None),
            wall_time=time.perf_counter() - t0))
    return model, log
