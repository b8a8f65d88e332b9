"""GloVe / word2vec-style text embedding files and vocabularies."""
from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EmbeddingParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass
class Vocab:
    tokens: list
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.tokens = list(self.tokens)
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate token {tok!r} at positions {self.index[tok]} and {i}")
            self.index[tok] = i

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            close = difflib.get_close_matches(token, self.tokens, n=5)
            hint = f"; close matches: {', '.join(close)}" if close else ""
            raise KeyError(f"unknown token {token!r}{hint}") from None

    @classmethod
    def from_file(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])

    def to_file(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")


def _is_header(parts: list) -> bool:
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def load_text_embeddings(path):
    """Parse ``token v1 v2 ...`` lines into ``(Vocab, matrix)``.

    A leading ``"<count> <dim>"`` line is recognised as a header and checked
    against the data.
    """
    tokens, rows = [], []
    seen = set()
    header = None
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split(" ")
            if lineno == 1 and _is_header(parts):
                header = (int(parts[0]), int(parts[1]))
                continue
            if len(parts) < 2:
                raise EmbeddingParseError(path, lineno, "expected a token followed by values")
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingParseError(
                    path, lineno, f"expected {dim} values, found {len(values)}"
                )
            try:
                row = [float(v) for v in values]
            except ValueError as exc:
                raise EmbeddingParseError(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in row):
                raise EmbeddingParseError(path, lineno, "non-finite value")
            if token in seen:
                raise EmbeddingParseError(path, lineno, f"duplicate token {token!r}")
            seen.add(token)
            tokens.append(token)
            rows.append(row)
    if not rows:
        raise EmbeddingParseError(path, 0, "no embedding rows found")
    if header is not None and header != (len(rows), dim):
        raise EmbeddingParseError(
            path, 1, f"header says {header[0]}x{header[1]}, data is {len(rows)}x{dim}"
        )
    return Vocab(tokens), np.array(rows, dtype=np.float64)


def save_text_embeddings(path, vocab: Vocab, matrix, header: bool = False) -> None:
    """Write one line per token; values use ``repr`` so float64 round-trips exactly."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] != len(vocab):
        raise ValueError(f"{matrix.shape[0]} rows for {len(vocab)} tokens")
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for tok, row in zip(vocab.tokens, matrix):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")
