"""Command-line entry point.

Subcommands: train, eval, predict, ablate, gradcheck, synth.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
failure (divergence or a failed gradient check).
"""

import argparse
import json
import os
import sys

import numpy as np

from .adversarial import FgmConfig
from .corpus import Batch, LabelMap, Vocab, build_vocab, load_dataset, split, tokenize
from .errors import ConfigError, DataError, NumericError
from .heads import ModelParams, model_backward, model_forward
from .metrics import evaluate
from .numerics import grad_check, softmax
from .rng import Xoshiro256
from .synth import write_corpus
from .training import (TrainConfig, batch_loss_and_grad, load_checkpoint,
                       save_checkpoint, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

GRADCHECK_SEED = 2024
GRADCHECK_DIMS = {"embed_dim": 16, "hidden_size": 8, "num_kernels": 16}
GRADCHECK_CLASSES = 4


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="acls",
                     description="Adversarially trained CNN+BiLSTM text classifier.",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common_train_flags(p):
        p.add_argument("--data", required=True, help="JSONL corpus file")
        p.add_argument("--labels", default=None,
                       help="label-map file (default: built-in taxonomy)")
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (beats ACLS_SEED)")

    p = sub.add_parser("train", help="train a model and save a checkpoint",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None,
                   help="epoch-log JSON path (default: <out>.log.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="JSONL corpus file")
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="all",
                   help="evaluate the whole file or one side of the stored split")
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify texts with a checkpoint",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--input", required=True,
                   help="one text per line, or JSONL with a 'text' field")
    p.add_argument("--top-k", type=int, default=1,
                   help="also list the k most probable classes")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train the four model variants and compare",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common_train_flags(p)
    p.add_argument("--json", action="store_true", help="emit the table as JSON")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck",
                       help="validate every parameter group against finite differences",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--config", default=None,
                   help="take model dimensions from this config instead of the tiny defaults")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate the synthetic benchmark corpus",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--labels-out", default=None,
                   help="label-map output path (default: <out>.labels)")
    p.add_argument("--classes", type=int, default=14)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    return parser


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    env_seed = os.environ.get("ACLS_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"ACLS_SEED must be an integer, got {env_seed!r}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _load_labels(args) -> LabelMap:
    return LabelMap.from_file(args.labels) if args.labels else LabelMap.default()


def _print_epoch(entry) -> None:
    msg = f"epoch {entry['epoch']}: train_loss {entry['train_loss']:.4f}"
    if entry["train_loss_adv"] is not None:
        msg += f" adv_loss {entry['train_loss_adv']:.4f}"
    if entry["val"] is not None:
        msg += (f" val_acc {entry['val']['accuracy']:.4f}"
                f" val_loss {entry['val']['average_loss']:.4f}")
    print(msg)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    labels = _load_labels(args)
    data = load_dataset(args.data, labels)
    train_ds, val_ds, _ = split(data, cfg.ratios, cfg.seed)
    vocab = build_vocab(train_ds, cfg.min_count)
    result = train(train_ds, val_ds, vocab, cfg, progress=_print_epoch)
    save_checkpoint(result.params, cfg, vocab, labels, args.out)
    log_path = args.log or f"{args.out}.log.json"
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.to_dict(), "best_epoch": result.best_epoch,
                   "epochs": result.history}, fh, ensure_ascii=False, indent=2)
    print(f"saved checkpoint to {args.out} (epoch log: {log_path})")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.model)
    params = ckpt.build_params()
    data = load_dataset(args.data, ckpt.label_map)
    if args.split != "all":
        parts = dict(zip(("train", "val", "test"),
                         split(data, ckpt.config.ratios, ckpt.config.seed)))
        data = parts[args.split]
        if len(data) == 0:
            raise DataError(f"the {args.split} split of {args.data} is empty")
    report = evaluate(data, params, ckpt.vocab)
    print(report.to_json() if args.json else report.format_table())
    return EXIT_OK


def _iter_input_texts(path):
    """Yield (lineno, text) pairs; JSONL lines contribute their 'text' field."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read input {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.rstrip("\n")
            if text.lstrip().startswith("{"):
                try:
                    rec = json.loads(text)
                    text = rec["text"] if isinstance(rec, dict) and "text" in rec else text
                except json.JSONDecodeError:
                    pass  # treat as raw text
            yield lineno, text


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.model)
    params = ckpt.build_params()
    names = ckpt.label_map.names
    top_k = max(1, min(args.top_k, len(names)))
    for lineno, text in _iter_input_texts(args.input):
        tokens = tokenize(text)
        if not tokens:
            if text.strip():
                print(f"warning: line {lineno} has no tokens; skipped", file=sys.stderr)
            continue
        ids = np.asarray(ckpt.vocab.encode(tokens), dtype=np.int64)
        batch = Batch(ids[np.newaxis, :], np.array([len(ids)], dtype=np.int64),
                      np.zeros(1, dtype=np.int64))
        logits, _ = model_forward(batch, params)
        probs = softmax(logits[0])
        order = np.argsort(-probs, kind="stable")
        best = int(order[0])
        fields = [names[best], f"{probs[best]:.6f}"]
        if top_k > 1:
            fields.append(",".join(f"{names[int(i)]}:{probs[int(i)]:.6f}"
                                   for i in order[:top_k]))
        print("\t".join(fields))
    return EXIT_OK


ABLATION_VARIANTS = (
    ("cnn-bilstm+fgm", True, True, True),
    ("cnn-bilstm", True, True, False),
    ("cnn", True, False, False),
    ("bilstm", False, True, False),
)


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    labels = _load_labels(args)
    data = load_dataset(args.data, labels)
    train_ds, val_ds, test_ds = split(data, cfg.ratios, cfg.seed)
    vocab = build_vocab(train_ds, cfg.min_count)
    rows = []
    for name, use_cnn, use_bilstm, fgm_on in ABLATION_VARIANTS:
        variant = cfg.copy()
        variant.use_cnn = use_cnn
        variant.use_bilstm = use_bilstm
        variant.fgm = FgmConfig(cfg.fgm.epsilon, enabled=fgm_on)
        result = train(train_ds, val_ds, vocab, variant)
        report = evaluate(test_ds, result.params, vocab)
        rows.append({"name": name, "accuracy": report.accuracy,
                     "precision": report.precision, "recall": report.recall,
                     "f1": report.f1, "loss": report.average_loss})
        print(f"trained {name}", file=sys.stderr)
    if args.json:
        print(json.dumps(rows, ensure_ascii=False))
    else:
        width = max(len(r["name"]) for r in rows)
        print(f"{'name':<{width}}  {'acc':>6}  {'p':>6}  {'r':>6}  {'f1':>6}  {'loss':>6}")
        for r in rows:
            print(f"{r['name']:<{width}}  {r['accuracy']:>6.3f}  {r['precision']:>6.3f}  "
                  f"{r['recall']:>6.3f}  {r['f1']:>6.3f}  {r['loss']:>6.3f}")
    return EXIT_OK


def _gradcheck_setup(cfg: TrainConfig | None):
    """A tiny random model and batch with a fixed seed."""
    if cfg is None:
        cfg = TrainConfig(**GRADCHECK_DIMS)
        n_classes = GRADCHECK_CLASSES
    else:
        n_classes = GRADCHECK_CLASSES
    cfg = cfg.copy()
    cfg.seed = GRADCHECK_SEED
    vocab = Vocab([f"tok{i:02d}" for i in range(24)])
    rng = Xoshiro256(GRADCHECK_SEED)
    lengths = [6, 4]
    width = max(lengths)
    ids = np.zeros((2, width), dtype=np.int64)
    for row, n in enumerate(lengths):
        for col in range(n):
            ids[row, col] = rng.randint(2, vocab.size - 1)
    batch = Batch(ids, np.asarray(lengths, dtype=np.int64),
                  np.arange(2, dtype=np.int64) % n_classes)
    params = ModelParams.build(vocab.size, n_classes, cfg)
    return params, batch


def cmd_gradcheck(args) -> int:
    cfg = TrainConfig.from_file(args.config) if args.config else None
    params, batch = _gradcheck_setup(cfg)
    logits, caches = model_forward(batch, params)
    _, dlogits = batch_loss_and_grad(logits, batch.labels)
    model_backward(dlogits, caches, batch.token_ids, params)

    def objective():
        out, _ = model_forward(batch, params)
        loss, _ = batch_loss_and_grad(out, batch.labels)
        return loss

    report = grad_check(objective, params.tensors(), step=1e-3, tol=args.tol)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_synth(args) -> int:
    labels_out = args.labels_out or f"{args.out}.labels"
    if args.classes < 2:
        raise ConfigError("--classes must be at least 2")
    if args.per_class < 1:
        raise ConfigError("--per-class must be at least 1")
    n = write_corpus(args.out, labels_out, args.classes, args.per_class, args.seed)
    print(f"wrote {n} examples to {args.out} (labels: {labels_out})")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
