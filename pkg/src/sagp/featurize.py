"""Turn claims and evidence pieces into node feature vectors.

Table cells are linearized through a fixed template, every piece is joined
with its claim (WikiTitle in between as bridge information), and the result
is embedded either by a deterministic hashed bag-of-words or by lookup in a
precomputed-embedding file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, MalformedEvidenceError, MissingEmbeddingError

KINDS = ("sentence", "table-cell", "table-caption")

DEFAULT_MAX_TOKENS = 140


@dataclass(frozen=True)
class EvidencePiece:
    """One unit of evidence: a sentence, a table cell, or a table caption."""

    id: str
    kind: str
    wiki_title: str = ""
    text: str = ""
    header1: str | None = None
    header2: str | None = None
    cell_value: str | None = None
    is_rationale: bool | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MalformedEvidenceError(f"piece {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == "table-cell" and (self.header1 is None or self.cell_value is None):
            raise MalformedEvidenceError(
                f"piece {self.id!r}: table-cell requires header1 and cell_value"
            )


def linearize_cell(piece: EvidencePiece) -> str:
    """Render a table cell as one sentence.

    ``In {wiki_title}, the header is {header1}, the value is {cell_value}.``
    with ``{header1} and {header2}`` when a second header is present. Empty
    slots are emitted as-is.
    """
    if piece.kind != "table-cell":
        raise MalformedEvidenceError(f"piece {piece.id!r}: linearize_cell needs a table-cell")
    if piece.header1 is None or piece.cell_value is None:
        raise MalformedEvidenceError(f"piece {piece.id!r}: missing header1 or cell_value")
    if piece.header2 is not None:
        header = f"{piece.header1} and {piece.header2}"
    else:
        header = piece.header1
    return f"In {piece.wiki_title}, the header is {header}, the value is {piece.cell_value}."


def build_sequence(claim: str, piece: EvidencePiece, max_tokens: int = DEFAULT_MAX_TOKENS) -> str:
    """Claim and evidence joined into one sequence, truncated to max_tokens.

    Sentences and captions contribute their raw text; cells go through
    ``linearize_cell`` first. Truncation counts whitespace tokens.
    """
    body = linearize_cell(piece) if piece.kind == "table-cell" else piece.text
    seq = f"{claim} </s> {piece.wiki_title} : {body}"
    tokens = seq.split()
    if len(tokens) > max_tokens:
        seq = " ".join(tokens[:max_tokens])
    return seq


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(token: str) -> int:
    """Stable 64-bit FNV-1a hash of the token's UTF-8 bytes."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def hash_bucket(token: str, dim: int) -> int:
    return fnv1a64(token) % dim


class HashedBowProvider:
    """Hashed bag-of-words embedding: L2-normalized token counts.

    Tokens are lowercase whitespace splits hashed by 64-bit FNV-1a into
    ``dim`` buckets. A pure function of the sequence; the empty sequence maps
    to the zero vector.
    """

    name = "hashed-bow"

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError("embedding dim must be >= 2")
        self.dim = dim

    def vector(self, sequence: str, instance_id: str = "", node_index: int = 0) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in sequence.lower().split():
            vec[fnv1a64(token) % self.dim] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class FileLookupProvider:
    """Embeddings preloaded from a JSON-lines file keyed by (instance, node).

    Each line is ``{"instance_id": ..., "vectors": [[...], ...]}`` with
    ``vectors[i]`` belonging to node index ``i``.
    """

    name = "file-lookup"

    def __init__(self, dim: int, table: dict[str, list[np.ndarray]]):
        if dim < 2:
            raise ValueError("embedding dim must be >= 2")
        self.dim = dim
        self._table = table

    @classmethod
    def load(cls, path: str | Path, dim: int) -> "FileLookupProvider":
        table: dict[str, list[np.ndarray]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
                vectors = [np.asarray(v, dtype=np.float64) for v in rec["vectors"]]
                for vec in vectors:
                    if vec.shape != (dim,):
                        raise DatasetError(
                            f"{path}:{lineno}: vector of length {vec.shape} does not match dim {dim}"
                        )
                table[rec["instance_id"]] = vectors
        return cls(dim, table)

    def vector(self, sequence: str, instance_id: str = "", node_index: int = 0) -> np.ndarray:
        vectors = self._table.get(instance_id)
        if vectors is None or node_index >= len(vectors):
            raise MissingEmbeddingError(f"no embedding for ({instance_id!r}, node {node_index})")
        return vectors[node_index]


EmbeddingProvider = HashedBowProvider | FileLookupProvider


def embed(provider: EmbeddingProvider, sequence: str, instance_id: str = "",
          node_index: int = 0) -> np.ndarray:
    """Vector of length provider.dim for one already-built sequence."""
    return provider.vector(sequence, instance_id, node_index)
