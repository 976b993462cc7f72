"""Evidence-graph construction and adjacency normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DatasetError, ShapeError
from .featurize import EmbeddingProvider, EvidencePiece, build_sequence, embed

CLAIM_NODE_ID = "__claim__"


@dataclass(frozen=True)
class EvidenceGraph:
    """Fully connected graph over the evidence of one instance.

    ``adjacency`` is the raw 0/1 matrix with zero diagonal; ``normalized`` is
    the symmetric degree-normalized matrix (self-loops added) used by the
    convolution layers. Immutable after construction.
    """

    n: int
    features: np.ndarray          # n x d
    adjacency: np.ndarray         # n x n, symmetric, zero diagonal
    normalized: np.ndarray        # n x n
    node_ids: tuple[str, ...]
    gold_rationale_mask: tuple[bool, ...] | None = None


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^-1/2 (A + I) D^-1/2."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ShapeError("adjacency must be symmetric")
    if (a < 0).any():
        raise ShapeError("adjacency entries must be non-negative")
    a_tilde = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def complete_adjacency(n: int) -> np.ndarray:
    return np.ones((n, n)) - np.eye(n)


def build_graph(
    claim: str,
    pieces: Sequence[EvidencePiece],
    provider: EmbeddingProvider,
    instance_id: str = "",
    claim_node: bool = False,
) -> EvidenceGraph:
    """One node per evidence piece (plus an optional claim-only node).

    Node i's features embed the claim joined with piece i; the adjacency is
    fully connected off the diagonal. The gold rationale mask is attached
    only when every piece carries an explicit flag.
    """
    if not pieces:
        raise DatasetError("build_graph needs at least one evidence piece")
    ids = [p.id for p in pieces]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DatasetError(f"duplicate evidence piece ids: {dupes}")

    sequences = [build_sequence(claim, p) for p in pieces]
    node_ids = list(ids)
    gold: list[bool] | None
    if all(p.is_rationale is not None for p in pieces):
        gold = [bool(p.is_rationale) for p in pieces]
    else:
        gold = None

    if claim_node:
        claim_piece = EvidencePiece(id=CLAIM_NODE_ID, kind="sentence", wiki_title="", text=claim)
        sequences.insert(0, build_sequence(claim, claim_piece))
        node_ids.insert(0, CLAIM_NODE_ID)
        if gold is not None:
            gold.insert(0, False)

    features = np.stack([
        embed(provider, seq, instance_id, idx) for idx, seq in enumerate(sequences)
    ])
    n = len(sequences)
    adjacency = complete_adjacency(n)
    return EvidenceGraph(
        n=n,
        features=features,
        adjacency=adjacency,
        normalized=normalize_adjacency(adjacency),
        node_ids=tuple(node_ids),
        gold_rationale_mask=tuple(gold) if gold is not None else None,
    )
