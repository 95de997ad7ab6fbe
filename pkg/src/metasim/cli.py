"""Command-line entry point: gen / train / eval / audit.

Every command resolves its configuration, writes a manifest (even on
failure), validates inputs before touching any output file, and writes
artifacts atomically. Exit codes: 0 success, 1 usage, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .data import (
    DataFormatError,
    SynthSpec,
    atomic_write_text,
    export_embeddings,
    generate_synthetic,
    hide_labels,
    load_dataset,
    save_dataset,
)
from .episodes import LabeledSet, sample_references
from .evaluation import EvalProtocol, evaluate
from .losses import SimilarityMeasure, SimilarityRepresentation, similarity_matrix_np
from .model import EmbeddingModel, load_checkpoint, save_checkpoint
from .pseudo import audit_table, sweep_threshold
from .training import (
    NumericalError,
    TrainConfig,
    save_log,
    train_meta,
    train_semi,
    train_supervised,
)
from .autodiff import Tensor

OUT_DIR_ENV = "METASIM_OUT"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, argv, config, inputs, outputs,
                    status="ok", error=None) -> None:
    doc = {
        "tool": "metasim",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if os.path.exists(p)},
        "outputs": [str(p) for p in outputs],
        "status": status,
        "error": error,
    }
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "manifest.json"),
                      json.dumps(doc, indent=2) + "\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="metasim",
                     description="semi-supervised metric learning workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic benchmark")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--per-class", type=int, required=True)
    gen.add_argument("--dim", type=int, required=True)
    gen.add_argument("--sep", type=float, required=True,
                     help="min inter-mean distance over within-class sigma")
    gen.add_argument("--sigma", type=float, default=1.0)
    gen.add_argument("--label-frac", type=float, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", default=None)

    train = sub.add_parser("train", help="run one training phase")
    train.add_argument("--phase", choices=["meta", "semi", "supervised"],
                       required=True)
    train.add_argument("--labeled", required=True, help="labeled dataset file")
    train.add_argument("--unlabeled", default=None,
                       help="unlabeled dataset file (semi phase)")
    train.add_argument("--init", default=None,
                       help="checkpoint to start from (semi phase typically)")
    train.add_argument("--epochs", type=int, default=200)
    train.add_argument("--phi", type=float, default=1.4,
                       help="contrastive margin")
    train.add_argument("--psi", type=float, default=0.1,
                       help="pseudo-pair threshold")
    train.add_argument("--lambda-u", type=float, default=1.0)
    train.add_argument("--c-mt", type=int, default=None)
    train.add_argument("--batch-labeled", type=int, default=32)
    train.add_argument("--batch-unlabeled", type=int, default=64)
    train.add_argument("--measure", choices=["cosine", "euclidean"],
                       default="cosine")
    train.add_argument("--patience", type=int, default=20)
    train.add_argument("--lr", type=float, default=2e-4)
    train.add_argument("--lr-decay", type=float, default=0.1)
    train.add_argument("--lr-every", type=int, default=150)
    train.add_argument("--hidden", type=int, default=64)
    train.add_argument("--embed-dim", type=int, default=32)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out-dir", default=None)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--test", default=None,
                    help="test dataset (retrieval mode: query = gallery)")
    ev.add_argument("--query", default=None, help="query dataset (re-ID mode)")
    ev.add_argument("--gallery", default=None, help="gallery dataset (re-ID mode)")
    ev.add_argument("--mode", choices=["retrieval", "reid"], default="retrieval")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--export-embeddings", default=None, metavar="PATH",
                    help="also write embedded test rows for external plotting")
    ev.add_argument("--out-dir", default=None)

    audit = sub.add_parser("audit", help="sweep pseudo-label thresholds")
    audit.add_argument("--checkpoint", required=True)
    audit.add_argument("--labeled", required=True)
    audit.add_argument("--unlabeled", required=True,
                       help="unlabeled dataset with oracle labels")
    audit.add_argument("--psi-grid", default=None,
                       help="comma-separated ascending thresholds")
    audit.add_argument("--c-mt", type=int, default=None)
    audit.add_argument("--measure", choices=["cosine", "euclidean"],
                       default="cosine")
    audit.add_argument("--seed", type=int, default=0)
    audit.add_argument("--out-dir", default=None)
    return parser


def _out_dir(args) -> str:
    return args.out_dir or os.environ.get(OUT_DIR_ENV, "runs")


def _measure(name: str) -> SimilarityMeasure:
    return (SimilarityMeasure.COSINE if name == "cosine"
            else SimilarityMeasure.NEG_EUCLIDEAN)


def cmd_gen(args, argv) -> int:
    out = _out_dir(args)
    spec = SynthSpec(n_classes=args.classes, samples_per_class=args.per_class,
                     dim=args.dim, separation=args.sep, sigma=args.sigma,
                     seed=args.seed, labeled_fraction=args.label_frac)
    data = generate_synthetic(spec)
    os.makedirs(out, exist_ok=True)
    paths = {name: os.path.join(out, f"{name}.ds")
             for name in ("labeled", "unlabeled", "test")}
    save_dataset(paths["labeled"], data.labeled.samples)
    # oracle labels stay in the file; training strips them, audits use them
    unlab_with_oracle = [
        type(s)(s.uid, s.feature, data.unlabeled_oracle[s.uid], s.camera_id)
        for s in data.unlabeled]
    save_dataset(paths["unlabeled"], unlab_with_oracle)
    save_dataset(paths["test"], data.test)
    _write_manifest(out, "gen", argv, vars(args) | {"out_dir": out},
                    inputs=[], outputs=list(paths.values()))
    print(f"wrote {', '.join(paths.values())}")
    return EXIT_OK


def _load_labeled(path) -> LabeledSet:
    samples = load_dataset(path)
    if any(s.label is None for s in samples):
        raise DataFormatError(f"{path}: labeled dataset has unlabeled rows")
    return LabeledSet(samples)


def cmd_train(args, argv) -> int:
    out = _out_dir(args)
    cfg = TrainConfig(
        phase=args.phase, epochs=args.epochs, batch_labeled=args.batch_labeled,
        batch_unlabeled=args.batch_unlabeled, lr=args.lr,
        lr_decay=args.lr_decay, lr_every=args.lr_every, margin=args.phi,
        psi=args.psi, c_mt=args.c_mt, lambda_u=args.lambda_u,
        patience=args.patience, seed=args.seed, measure=_measure(args.measure))
    labeled = _load_labeled(args.labeled)
    inputs = [args.labeled]

    if args.init:
        model, _, _ = load_checkpoint(args.init)
        inputs.append(args.init)
        if model.d_in != len(labeled.samples[0].feature):
            raise DataFormatError(
                f"checkpoint expects dimension {model.d_in}, data has "
                f"{len(labeled.samples[0].feature)}")
    else:
        d_in = len(labeled.samples[0].feature)
        model = EmbeddingModel(
            [d_in, args.hidden, args.embed_dim],
            normalize_output=cfg.measure is SimilarityMeasure.COSINE,
            seed=args.seed)

    manifest_cfg = vars(args) | {"out_dir": out, "measure": cfg.measure.value}
    try:
        if args.phase == "meta":
            model, log = train_meta(labeled, cfg, model)
        elif args.phase == "supervised":
            model, log = train_supervised(labeled, cfg, model)
        else:
            if not args.unlabeled:
                raise UsageError("--phase semi requires --unlabeled")
            raw = load_dataset(args.unlabeled)
            inputs.append(args.unlabeled)
            unlabeled, oracle = hide_labels(raw)
            model, log = train_semi(labeled, unlabeled, cfg, model,
                                    oracle=oracle or None)
    except Exception as exc:
        status = "numerical" if isinstance(exc, NumericalError) else "failed"
        _write_manifest(out, "train", argv, manifest_cfg, inputs, [],
                        status=status, error=str(exc))
        raise

    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "checkpoint.json")
    logp = os.path.join(out, "trainlog.jsonl")
    save_checkpoint(ckpt, model, epoch=len(log.records))
    save_log(logp, log)
    _write_manifest(out, "train", argv, manifest_cfg, inputs, [ckpt, logp])
    last = log.records[-1] if log.records else None
    print(f"trained {len(log.records)} epoch(s); checkpoint at {ckpt}"
          + (f"; final feat loss {last.feat_loss:.6f}" if last else ""))
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    out = _out_dir(args)
    model, _, _ = load_checkpoint(args.checkpoint)
    protocol = EvalProtocol(mode=args.mode, seed=args.seed)
    if args.mode == "retrieval":
        if not args.test:
            raise UsageError("--mode retrieval requires --test")
        queries = load_dataset(args.test)
        gallery = None
        inputs = [args.checkpoint, args.test]
    else:
        if not (args.query and args.gallery):
            raise UsageError("--mode reid requires --query and --gallery")
        queries = load_dataset(args.query)
        gallery = load_dataset(args.gallery)
        inputs = [args.checkpoint, args.query, args.gallery]

    report = evaluate(model, queries, protocol, gallery_samples=gallery)
    os.makedirs(out, exist_ok=True)
    report_path = os.path.join(out, "report.txt")
    row_path = os.path.join(out, "report_row.csv")
    atomic_write_text(report_path, report.to_text())
    atomic_write_text(row_path, report.to_table_row())
    outputs = [report_path, row_path]
    if args.export_embeddings:
        export_embeddings(model, queries, args.export_embeddings)
        outputs.append(args.export_embeddings)
    _write_manifest(out, "eval", argv, vars(args) | {"out_dir": out},
                    inputs, outputs)
    width = max(len(k) for k in report.metric_keys())
    for key, value in report.metrics().items():
        print(f"{key:<{width}}  {value:.4f}")
    print(f"report saved to {report_path}")
    return EXIT_OK


def cmd_audit(args, argv) -> int:
    out = _out_dir(args)
    model, _, _ = load_checkpoint(args.checkpoint)
    labeled = _load_labeled(args.labeled)
    raw = load_dataset(args.unlabeled)
    if any(s.label is None for s in raw):
        raise DataFormatError(
            f"{args.unlabeled}: audit needs oracle labels on every row")
    unlabeled, oracle = hide_labels(raw)
    measure = _measure(args.measure)

    c_mt = args.c_mt or labeled.n_classes
    if not 1 <= c_mt <= labeled.n_classes:
        raise UsageError(f"--c-mt must be in [1, {labeled.n_classes}]")
    rng = np.random.default_rng([0xA0D1, args.seed])
    classes = rng.choice(np.array(labeled.labels), size=c_mt, replace=False)
    bank = sample_references(labeled, [int(c) for c in classes], rng)

    feats = np.stack([s.feature for s in unlabeled])
    s_mat = similarity_matrix_np(model.embed(feats), model.embed(bank.features),
                                 measure)
    svecs = [SimilarityRepresentation(Tensor(s_mat[i]), bank.bank_id)
             for i in range(len(unlabeled))]
    i_idx, j_idx = np.triu_indices(len(unlabeled), k=1)
    pairs = list(zip(i_idx.tolist(), j_idx.tolist()))
    labels = [oracle[s.uid] for s in unlabeled]

    if args.psi_grid:
        grid = [float(v) for v in args.psi_grid.split(",")]
    else:
        grid = np.geomspace(1e-3, 2.0, 25).tolist()
    rows = sweep_threshold(svecs, pairs, labels, grid)
    table = audit_table(rows)
    os.makedirs(out, exist_ok=True)
    table_path = os.path.join(out, "audit.csv")
    atomic_write_text(table_path, table)
    _write_manifest(out, "audit", argv, vars(args) | {"out_dir": out},
                    [args.checkpoint, args.labeled, args.unlabeled],
                    [table_path])
    print(table, end="")
    print(f"audit table saved to {table_path}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"gen": cmd_gen, "train": cmd_train,
                   "eval": cmd_eval, "audit": cmd_audit}[args.command]
        return handler(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # config invariants are usage errors; malformed data is a data error
        if isinstance(exc, DataFormatError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
