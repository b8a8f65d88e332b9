"""Command-line interface: ``ketembed {stats,compress,reconstruct,query,gradcheck,bench}``.

Exit codes: 0 success, 1 validation error, 2 I/O or parse error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import checkpoint
from .bench import run_bench
from .shape import FactoredShape, param_count_report
from .textio import EmbeddingParseError, Vocab, load_text_embeddings, save_text_embeddings
from .training import OptimizerState, fit_dense, grad_check
from .word2ket import new_ket_embedding
from .word2ketxs import new_ketxs

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class ValidationError(Exception):
    pass


def _add_shape_args(p: argparse.ArgumentParser, with_dims: bool = True) -> None:
    p.add_argument("--mode", choices=("ket", "xs"), default="xs")
    if with_dims:
        p.add_argument("-d", type=int, required=True, help="vocabulary size")
        p.add_argument("-p", type=int, required=True, help="embedding dimension")
    p.add_argument("-n", type=int, default=2, help="tensor order")
    p.add_argument("-r", type=int, default=1, help="tensor rank")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _shape(mode: str, d: int, p: int, n: int, r: int) -> FactoredShape:
    for name, value in (("d", d), ("p", p), ("n", n), ("r", r)):
        if value < 1:
            raise ValidationError(f"-{name} must be >= 1, got {value}")
    try:
        return FactoredShape.for_ket(d, p, n, r) if mode == "ket" else FactoredShape.for_xs(d, p, n, r)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _width(scalar: str) -> int:
    return 4 if scalar == "f32" else 8


def cmd_stats(args) -> int:
    shape = _shape(args.mode, args.d, args.p, args.n, args.r)
    count, rate = param_count_report(shape, args.layernorm, args.baseline_dim)
    print(f"mode          {args.mode}")
    print(f"q             {shape.q}")
    print(f"t             {shape.t}")
    print(f"params        {count:,}")
    print(f"dense params  {shape.d * (args.baseline_dim or shape.p):,}")
    print(f"space saving  {rate:,}")
    return EXIT_OK


def _new_model(mode, shape, seed, layernorm):
    if mode == "ket":
        return new_ket_embedding(shape, seed=seed, layernorm=layernorm)
    return new_ketxs(shape, seed=seed, layernorm=layernorm)


def cmd_compress(args) -> int:
    vocab, matrix = load_text_embeddings(args.input)
    shape = _shape(args.mode, matrix.shape[0], matrix.shape[1], args.n, args.r)
    if args.epochs < 0:
        raise ValidationError("--epochs must be >= 0")
    model = _new_model(args.mode, shape, args.seed, args.layernorm)
    opt = OptimizerState("adam", args.lr)
    report = fit_dense(matrix, model, opt, epochs=args.epochs, batch_rows=args.batch_rows, seed=args.seed)
    checkpoint.save(model, args.output, _width(args.scalar))
    vocab.to_file(args.vocab_out or f"{args.output}.vocab")
    if args.log:
        Path(args.log).write_text(report.to_jsonl(), encoding="utf-8")
    print(json.dumps(report.summary(), indent=2))
    return EXIT_OK


def _load_vocab(path, d):
    if path is None:
        return Vocab([str(i) for i in range(d)])
    vocab = Vocab.from_file(path)
    if len(vocab) != d:
        raise ValidationError(f"vocabulary has {len(vocab)} tokens, checkpoint has {d} rows")
    return vocab


def cmd_reconstruct(args) -> int:
    model, _ = checkpoint.load(args.checkpoint)
    vocab = _load_vocab(args.vocab, model.shape.d)
    rows = np.concatenate(
        [model.gather(np.arange(s, min(s + args.block_size, model.shape.d)))
         for s in range(0, model.shape.d, args.block_size)]
    )
    save_text_embeddings(args.output, vocab, rows, header=args.header)
    return EXIT_OK


def nearest(model, word: int, k: int, block_size: int = 1024, exclude_self: bool = False):
    """Top-``k`` rows by cosine to ``word``, gathered ``block_size`` rows at a time."""
    d = model.shape.d
    query = model.gather([word])[0]
    qn = np.linalg.norm(query)
    sims = np.empty(d)
    for start in range(0, d, block_size):
        block = model.gather(np.arange(start, min(start + block_size, d)))
        norms = np.linalg.norm(block, axis=1) * qn
        dots = block @ query
        sims[start : start + block.shape[0]] = np.divide(
            dots, norms, out=np.zeros_like(dots), where=norms > 0
        )
    if exclude_self:
        sims[word] = -np.inf
    order = np.lexsort((np.arange(d), -sims))
    if exclude_self:
        order = order[order != word]
    top = order[:k]
    return [(int(i), float(sims[i])) for i in top]


def cmd_query(args) -> int:
    model, _ = checkpoint.load(args.checkpoint)
    vocab = _load_vocab(args.vocab, model.shape.d)
    if args.k < 1:
        raise ValidationError("-k must be >= 1")
    try:
        word = vocab.lookup(args.token)
    except KeyError as exc:
        raise ValidationError(exc.args[0]) from None
    for i, sim in nearest(model, word, args.k, args.block_size, args.exclude_self):
        print(f"{vocab.tokens[i]}\t{sim:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    shape = _shape(args.mode, args.d, args.p, args.n, args.r)
    model = _new_model(args.mode, shape, args.seed, args.layernorm)
    rng = np.random.default_rng(args.seed)
    words = rng.integers(0, shape.d, size=args.batch)
    err = grad_check(model, words, seed=args.seed)
    status = "ok" if err <= args.tol else "FAILED"
    print(f"max relative error {err:.3e} (tolerance {args.tol:g}) {status}")
    return EXIT_OK if err <= args.tol else EXIT_VALIDATION


def cmd_bench(args) -> int:
    shape = _shape(args.mode, args.d, args.p, args.n, args.r)
    if args.batch < 1 or args.repeats < 1:
        raise ValidationError("-b and --repeats must be >= 1")
    report = run_bench(shape, args.batch, args.repeats, args.seed, _width(args.scalar))
    for key, value in report.items():
        print(f"{key:22s}{value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ketembed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="parameter count and space saving rate")
    _add_shape_args(p)
    p.add_argument("--layernorm", type=_on_off, default=False, help="count LayerNorm parameters (ket)")
    p.add_argument("--baseline-dim", type=int, default=None,
                   help="width of the regular embedding compared against (default: -p)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("compress", help="fit a factored model to a text embedding file")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    _add_shape_args(p, with_dims=False)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scalar", choices=("f32", "f64"), default="f64")
    p.add_argument("--layernorm", type=_on_off, default=False)
    p.add_argument("--batch-rows", type=int, default=None)
    p.add_argument("--vocab-out", default=None, help="vocabulary file (default: <output>.vocab)")
    p.add_argument("--log", default=None, help="write per-epoch JSON lines here")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("reconstruct", help="write a checkpoint back out as a text embedding file")
    p.add_argument("checkpoint")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--header", action="store_true")
    p.add_argument("--block-size", type=int, default=1024)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("query", help="nearest neighbours of a token by cosine")
    p.add_argument("checkpoint")
    p.add_argument("token")
    p.add_argument("--vocab", default=None)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--block-size", type=int, default=1024)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("gradcheck", help="finite-difference check of the manual gradients")
    _add_shape_args(p)
    p.add_argument("--layernorm", type=_on_off, default=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-b", "--batch", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="gather latency and memory footprint")
    _add_shape_args(p)
    p.add_argument("-b", "--batch", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scalar", choices=("f32", "f64"), default="f64")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, EmbeddingParseError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
