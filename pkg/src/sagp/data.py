"""Instance ingestion, planted-rationale synthetic data, and persistence.

Synthetic instances plant k rationale pieces, each attesting one slot of a
claim-specific signal set; the verdict is SUPPORTS exactly when every slot is
attested (REFUTES instances have one slot flipped to a contradicting
marker). Noise pieces share claim vocabulary but never carry signal markers,
so the planted set is the unique minimal subset from which the verdict can
be read.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CheckpointError, DatasetError
from .featurize import EvidencePiece, hash_bucket
from .model import CHECKPOINT_VERSION, LABELS, MaskSpec, ModelCheckpoint

NOT_ENOUGH_INFO = "NOT ENOUGH INFO"


@dataclass(frozen=True)
class Instance:
    id: str
    claim: str
    pieces: tuple[EvidencePiece, ...]
    verdict: str
    gold_rationale_ids: frozenset[str] | None = None


@dataclass
class SynthConfig:
    num_instances: int = 200
    nodes_per_instance: int = 8
    num_rationales: int = 3
    feature_dim: int = 32
    noise_overlap: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.num_rationales >= self.nodes_per_instance:
            raise ValueError("num_rationales must be < nodes_per_instance")
        if not 0.0 <= self.noise_overlap <= 1.0:
            raise ValueError("noise_overlap must be in [0, 1]")


_FILLERS = (
    "record", "archive", "report", "noted",
    "source", "review", "index", "summary",
)

_TOPICS = (
    "festival", "observatory", "railway",
    "museum", "harbor", "stadium",
)

_TEMPLATE_WORDS = (
    "in", "the", "header", "is", "value", "and", "</s>", ":",
    # words the claim/evidence templates below emit, plus the punctuated
    # forms cell linearization produces ("{title}," / trailing "." on values)
    "lists", "verified", "fields", "confirms", "entry", "entry,",
    "note", "note,", "listed", "listed.", "routine",
) + tuple(f"{t}," for t in _TOPICS)


def signal_vocabulary(num_rationales: int, dim: int) -> list[tuple[str, str]]:
    """(attesting, contradicting) marker token per rationale slot.

    Tokens are chosen deterministically from (slot, dim) so train and test
    files generated with different seeds share one signal vocabulary. Every
    rationale carries a marker twice, so its bare form reaches a bucket in
    both sentence and linearized-cell pieces; the search keeps those bare
    buckets clear of filler/topic/template words and of each other, and keeps
    the sentence-final ``token.`` cell form from landing on another marker's
    bucket.
    """
    reserved = {hash_bucket(w, dim) for w in _FILLERS + _TOPICS + _TEMPLATE_WORDS}
    taken_bare: set[int] = set()
    taken_any: set[int] = set()
    vocab: list[tuple[str, str]] = []

    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789"
    suffixes = list(alphabet) + [a + b for a in alphabet for b in alphabet[:10]]

    def pick(base: str) -> str:
        candidates = [f"{base}{suffix}" for suffix in suffixes]
        # Three passes, loosening what the dotted (cell) form may collide
        # with; the bare bucket must always be clean of reserved words and of
        # every other marker form.
        for strictness in (2, 1, 0):
            for tok in candidates:
                bare = hash_bucket(tok, dim)
                dotted = hash_bucket(tok + ".", dim)
                if dotted in taken_bare or dotted == bare:
                    continue
                if strictness >= 1 and (bare in reserved or bare in taken_any):
                    continue
                if strictness == 0 and bare in taken_bare:
                    continue
                if strictness == 2 and (dotted in reserved or dotted in taken_any):
                    continue
                taken_bare.add(bare)
                taken_any.update((bare, dotted))
                return tok
        raise ValueError(f"dim {dim} too small to place {num_rationales} marker pairs")

    for j in range(num_rationales):
        vocab.append((pick(f"genuine{j}"), pick(f"spurious{j}")))
    return vocab


def _piece_tokens(piece: EvidencePiece) -> set[str]:
    tokens = set(piece.text.lower().split())
    for extra in (piece.cell_value, piece.header1, piece.header2, piece.wiki_title):
        if extra:
            tokens.update(extra.lower().split())
    return tokens


def oracle_verdict(
    instance: Instance,
    vocab: Sequence[tuple[str, str]],
    subset_ids: Iterable[str] | None = None,
) -> str | None:
    """Read the verdict from signal-marker presence.

    On the full evidence this reproduces the generated label. On a subset,
    every slot must be readable (its attesting or contradicting marker
    present); otherwise the verdict is undetermined and None is returned.
    """
    if subset_ids is None:
        pieces = instance.pieces
    else:
        chosen = set(subset_ids)
        pieces = tuple(p for p in instance.pieces if p.id in chosen)
    tokens: set[str] = set()
    for p in pieces:
        tokens |= _piece_tokens(p)

    all_attested = True
    for sig, alt in vocab:
        attested = sig in tokens
        contradicted = alt in tokens
        if subset_ids is not None and not (attested or contradicted):
            return None
        if not attested:
            all_attested = False
    return "SUPPORTS" if all_attested else "REFUTES"


def generate_synthetic(cfg: SynthConfig) -> list[Instance]:
    """Deterministic planted-rationale instances, labels ~50/50."""
    rng = np.random.default_rng(cfg.seed)
    vocab = signal_vocabulary(cfg.num_rationales, cfg.feature_dim)
    instances: list[Instance] = []

    for i in range(cfg.num_instances):
        inst_id = f"synth-{cfg.seed}-{i:04d}"
        topic = str(rng.choice(_TOPICS))
        # Constant claim wording: the claim prefix lands in every node of an
        # instance, so instance-varying claim tokens would shift all of an
        # instance's assignment margins together and swamp the global
        # in/out boundary. The varying content lives in titles and pieces.
        claim = "the record archive lists verified fields"
        claim_tokens = claim.split()
        title = topic.title()

        supports = bool(rng.random() < 0.5)
        flip_slot = -1 if supports else int(rng.integers(cfg.num_rationales))

        protos: list[dict] = []
        for j in range(cfg.num_rationales):
            marker = vocab[j][1] if j == flip_slot else vocab[j][0]
            if j % 2 == 0:
                protos.append({
                    "kind": "sentence",
                    "text": f"the {topic} {str(rng.choice(_FILLERS))} confirms {marker} and {marker}",
                    "is_rationale": True,
                })
            else:
                protos.append({
                    "kind": "table-cell",
                    "header1": "Entry",
                    "cell_value": f"{marker} {marker} {marker}",
                    "text": "",
                    "is_rationale": True,
                })
        for _ in range(cfg.nodes_per_instance - cfg.num_rationales):
            tokens = [t for t in claim_tokens if rng.random() < cfg.noise_overlap]
            while len(tokens) < 4:
                tokens.append(str(rng.choice(_FILLERS)))
            tokens = tokens[:4]
            kind = ("sentence", "table-caption", "table-cell")[int(rng.integers(3))]
            if kind == "table-cell":
                # Fixed final word so the linearized "{value}." form stays in
                # one known hash bucket instead of polluting marker buckets.
                protos.append({
                    "kind": kind,
                    "header1": "Note",
                    "cell_value": f"{tokens[0]} routine listed",
                    "text": "",
                    "is_rationale": False,
                })
            else:
                protos.append({
                    "kind": kind,
                    "text": " ".join(tokens) + " routine routine",
                    "is_rationale": False,
                })

        order = rng.permutation(len(protos))
        pieces = []
        gold: set[str] = set()
        for pos, src in enumerate(order):
            proto = protos[src]
            pid = f"{inst_id}-e{pos}"
            piece = EvidencePiece(
                id=pid,
                kind=proto["kind"],
                wiki_title=title,
                text=proto["text"],
                header1=proto.get("header1"),
                header2=proto.get("header2"),
                cell_value=proto.get("cell_value"),
                is_rationale=proto["is_rationale"],
            )
            pieces.append(piece)
            if proto["is_rationale"]:
                gold.add(pid)

        instances.append(Instance(
            id=inst_id,
            claim=claim,
            pieces=tuple(pieces),
            verdict="SUPPORTS" if supports else "REFUTES",
            gold_rationale_ids=frozenset(gold),
        ))
    return instances


def dataset_stats(instances: Sequence[Instance]) -> dict:
    """Counts per label plus average rationales / sentences / cells."""
    num_sup = sum(1 for i in instances if i.verdict == "SUPPORTS")
    num_ref = sum(1 for i in instances if i.verdict == "REFUTES")
    labeled = [i for i in instances if i.gold_rationale_ids is not None]
    avg_ra = avg_s = avg_c = 0.0
    if labeled:
        ra_counts, s_counts, c_counts = [], [], []
        for inst in labeled:
            gold = inst.gold_rationale_ids
            ra_counts.append(len(gold))
            s_counts.append(sum(1 for p in inst.pieces if p.id in gold and p.kind != "table-cell"))
            c_counts.append(sum(1 for p in inst.pieces if p.id in gold and p.kind == "table-cell"))
        avg_ra = float(np.mean(ra_counts))
        avg_s = float(np.mean(s_counts))
        avg_c = float(np.mean(c_counts))
    return {
        "instances": len(instances),
        "num_supports": num_sup,
        "num_refutes": num_ref,
        "avg_rationales": avg_ra,
        "avg_sentence_rationales": avg_s,
        "avg_cell_rationales": avg_c,
    }


# ---------------------------------------------------------------------------
# Instance files (JSON lines).

def _piece_to_json(piece: EvidencePiece) -> dict:
    out = {"id": piece.id, "kind": piece.kind, "wiki_title": piece.wiki_title, "text": piece.text}
    if piece.header1 is not None:
        out["header1"] = piece.header1
    if piece.header2 is not None:
        out["header2"] = piece.header2
    if piece.cell_value is not None:
        out["cell_value"] = piece.cell_value
    if piece.is_rationale is not None:
        out["is_rationale"] = piece.is_rationale
    return out


def save_dataset(instances: Sequence[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {
                "id": inst.id,
                "claim": inst.claim,
                "label": inst.verdict,
                "evidence": [_piece_to_json(p) for p in inst.pieces],
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path: str | Path) -> list[Instance]:
    """Parse and validate a JSON-lines instance file.

    Rejects NOT ENOUGH INFO labels, duplicate ids, gold references to unknown
    pieces, and explicitly labeled instances with an empty gold set.
    """
    instances: list[Instance] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                inst = _instance_from_json(rec)
            except (KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed instance record ({exc})") from exc
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if inst.id in seen_ids:
                raise DatasetError(f"{path}:{lineno}: duplicate instance id {inst.id!r}")
            seen_ids.add(inst.id)
            instances.append(inst)
    return instances


def _instance_from_json(rec: dict) -> Instance:
    inst_id = rec["id"]
    label = rec["label"]
    if label == NOT_ENOUGH_INFO:
        raise DatasetError(
            f"instance {inst_id!r}: label {NOT_ENOUGH_INFO!r} is excluded (no gold rationales exist for it)"
        )
    if label not in LABELS:
        raise DatasetError(f"instance {inst_id!r}: unknown label {label!r}")
    pieces = []
    for ev in rec["evidence"]:
        pieces.append(EvidencePiece(
            id=ev["id"],
            kind=ev["kind"],
            wiki_title=ev.get("wiki_title", ""),
            text=ev.get("text", ""),
            header1=ev.get("header1"),
            header2=ev.get("header2"),
            cell_value=ev.get("cell_value"),
            is_rationale=ev.get("is_rationale"),
        ))
    if not pieces:
        raise DatasetError(f"instance {inst_id!r}: no evidence pieces")
    ids = [p.id for p in pieces]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"instance {inst_id!r}: duplicate evidence ids")

    explicit_gold = rec.get("gold_rationale_ids")
    if explicit_gold is not None:
        unknown = set(explicit_gold) - set(ids)
        if unknown:
            raise DatasetError(f"instance {inst_id!r}: gold ids not among pieces: {sorted(unknown)}")
        gold = frozenset(explicit_gold)
    elif all(p.is_rationale is None for p in pieces):
        gold = None
    else:
        gold = frozenset(p.id for p in pieces if p.is_rationale)
    if gold is not None and not gold:
        raise DatasetError(f"instance {inst_id!r}: labeled instance has an empty gold rationale set")
    return Instance(id=inst_id, claim=rec["claim"], pieces=tuple(pieces), verdict=label,
                    gold_rationale_ids=gold)


# ---------------------------------------------------------------------------
# Checkpoint files.

def _head_to_json(w: np.ndarray, b: np.ndarray) -> dict:
    return {"weight": w.tolist(), "bias": b.tolist()}


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    rec = {
        "version": ckpt.version,
        "dims": {"d": ckpt.dim, "layers": ckpt.n_layers, "pool": ckpt.pool},
        "layers": [w.tolist() for w in ckpt.gcn_weights],
        "classifier": _head_to_json(ckpt.classifier_w, ckpt.classifier_b),
        "subgraph_head": _head_to_json(ckpt.sub_head_w, ckpt.sub_head_b),
        "subgraph_classifier": _head_to_json(ckpt.sub_clf_w, ckpt.sub_clf_b),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            rec = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint file ({exc.msg})") from exc
    version = rec.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version!r} unsupported; this build reads version "
            f"{CHECKPOINT_VERSION} (regenerate or upgrade the file)"
        )
    try:
        dims = rec["dims"]
        ckpt = ModelCheckpoint(
            gcn_weights=[np.asarray(w, dtype=np.float64) for w in rec["layers"]],
            classifier_w=np.asarray(rec["classifier"]["weight"], dtype=np.float64),
            classifier_b=np.asarray(rec["classifier"]["bias"], dtype=np.float64),
            sub_head_w=np.asarray(rec["subgraph_head"]["weight"], dtype=np.float64),
            sub_head_b=np.asarray(rec["subgraph_head"]["bias"], dtype=np.float64),
            sub_clf_w=np.asarray(rec["subgraph_classifier"]["weight"], dtype=np.float64),
            sub_clf_b=np.asarray(rec["subgraph_classifier"]["bias"], dtype=np.float64),
            dim=int(dims["d"]),
            n_layers=int(dims["layers"]),
            pool=dims.get("pool", "mean"),
            version=version,
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({exc})") from exc
    return ckpt


# ---------------------------------------------------------------------------
# Explanation files (JSON lines).

def _mask_to_json(mask: MaskSpec) -> dict:
    return {
        "mode": mask.mode,
        "edge_logits": mask.edge_logits.tolist() if mask.edge_logits is not None else None,
        "node_logits": mask.node_logits.tolist() if mask.node_logits is not None else None,
    }


def save_explanations(explanations, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for expl in explanations:
            final = {term: (trace[-1] if trace else None)
                     for term, trace in expl.loss_trace.items()}
            rec = {
                "instance_id": expl.instance_id,
                "verdict_pred": expl.verdict_pred,
                "verdict_full": expl.verdict_full,
                "rationales": list(expl.rationale_ids),
                "assignment": expl.assignment.tolist(),
                "mask": _mask_to_json(expl.mask),
                "losses": {"final": final, "trace": expl.loss_trace},
                "y_sub": expl.y_sub.tolist(),
                "y_full": expl.y_full.tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def load_explanations(path: str | Path):
    from .explain import Explanation  # local import to avoid a cycle

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                mask_rec = rec["mask"]
                mask = MaskSpec(
                    mode=mask_rec["mode"],
                    edge_logits=(np.asarray(mask_rec["edge_logits"], dtype=np.float64)
                                 if mask_rec["edge_logits"] is not None else None),
                    node_logits=(np.asarray(mask_rec["node_logits"], dtype=np.float64)
                                 if mask_rec["node_logits"] is not None else None),
                )
                assignment = np.asarray(rec["assignment"], dtype=np.float64)
                expl = Explanation(
                    instance_id=rec["instance_id"],
                    assignment=assignment,
                    rationale_mask=tuple(bool(row[0] >= row[1]) for row in assignment),
                    rationale_ids=tuple(rec["rationales"]),
                    y_sub=np.asarray(rec["y_sub"], dtype=np.float64),
                    y_full=np.asarray(rec["y_full"], dtype=np.float64),
                    mask=mask,
                    loss_trace={k: list(v) for k, v in rec["losses"]["trace"].items()},
                )
            except (KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: truncated or malformed explanation ({exc})") from exc
            out.append(expl)
    return out
