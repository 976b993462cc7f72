import numpy as np
import pytest

from sagp.errors import MalformedEvidenceError, MissingEmbeddingError
from sagp.featurize import (EvidencePiece, FileLookupProvider, HashedBowProvider,
                            build_sequence, embed, linearize_cell)


def cell(**kw):
    base = dict(id="c1", kind="table-cell", wiki_title="Lisa Gardner",
                header1="Occupation", cell_value="Novelist")
    base.update(kw)
    return EvidencePiece(**base)


def test_linearize_single_header():
    assert linearize_cell(cell()) == (
        "In Lisa Gardner, the header is Occupation, the value is Novelist."
    )


def test_linearize_two_headers():
    piece = cell(wiki_title="X", header1="Year", header2="Title", cell_value="1998")
    assert linearize_cell(piece) == "In X, the header is Year and Title, the value is 1998."


def test_linearize_empty_title_still_emits():
    out = linearize_cell(cell(wiki_title=""))
    assert out.startswith("In , the header is")
    assert out.endswith(".")


def test_linearize_literals_always_present():
    out = linearize_cell(cell(wiki_title="T", header1="H", cell_value="V"))
    assert "the header is" in out and "the value is" in out and out.endswith(".")


def test_cell_requires_header_and_value():
    with pytest.raises(MalformedEvidenceError):
        EvidencePiece(id="bad", kind="table-cell", header1="H")
    with pytest.raises(MalformedEvidenceError):
        linearize_cell(EvidencePiece(id="s", kind="sentence", text="x"))


def test_unknown_kind_rejected():
    with pytest.raises(MalformedEvidenceError):
        EvidencePiece(id="x", kind="paragraph", text="y")


def test_build_sequence_sentence():
    piece = EvidencePiece(id="s", kind="sentence", wiki_title="T", text="S")
    assert build_sequence("C", piece) == "C </s> T : S"


def test_build_sequence_routes_cells_through_linearization():
    seq = build_sequence("C", cell())
    assert "the header is Occupation" in seq
    assert seq.startswith("C </s> Lisa Gardner :")


def test_build_sequence_truncates_to_max_tokens():
    piece = EvidencePiece(id="s", kind="sentence", wiki_title="T",
                          text=" ".join(f"w{i}" for i in range(200)))
    seq = build_sequence("C", piece)
    assert len(seq.split()) == 140


def test_hashed_bow_empty_is_zero():
    vec = HashedBowProvider(16).vector("")
    assert vec.shape == (16,)
    assert (vec == 0).all()


def test_hashed_bow_unit_norm():
    vec = HashedBowProvider(16).vector("some evidence text here")
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-12


def test_hashed_bow_deterministic():
    p = HashedBowProvider(32)
    a = p.vector("The Quick Fox")
    b = p.vector("the quick fox")  # case-insensitive
    assert (a == b).all()
    assert (p.vector("The Quick Fox") == a).all()


def test_dim_lower_bound():
    with pytest.raises(ValueError):
        HashedBowProvider(1)


def test_file_lookup_round_trip(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"instance_id": "a", "vectors": [[1.0, 0.0], [0.0, 1.0]]}\n')
    prov = FileLookupProvider.load(path, 2)
    assert embed(prov, "ignored", "a", 1).tolist() == [0.0, 1.0]


def test_file_lookup_missing_key(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"instance_id": "a", "vectors": [[1.0, 0.0]]}\n')
    prov = FileLookupProvider.load(path, 2)
    with pytest.raises(MissingEmbeddingError) as err:
        prov.vector("x", "missing", 0)
    assert "missing" in str(err.value)


def test_file_lookup_dim_mismatch(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"instance_id": "a", "vectors": [[1.0, 0.0, 3.0]]}\n')
    with pytest.raises(Exception):
        FileLookupProvider.load(path, 2)
