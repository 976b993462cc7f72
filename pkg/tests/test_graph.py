import numpy as np
import pytest

from sagp.errors import DatasetError, ShapeError
from sagp.featurize import EvidencePiece, HashedBowProvider
from sagp.graph import build_graph, complete_adjacency, normalize_adjacency


def pieces(n):
    return [EvidencePiece(id=f"e{i}", kind="sentence", wiki_title="T", text=f"text {i}")
            for i in range(n)]


def test_twenty_pieces_gives_380_edges():
    g = build_graph("claim", pieces(20), HashedBowProvider(8))
    assert g.adjacency.shape == (20, 20)
    assert int(g.adjacency.sum()) == 380


def test_single_piece_graph():
    g = build_graph("claim", pieces(1), HashedBowProvider(8))
    assert g.adjacency.tolist() == [[0.0]]
    assert g.normalized.tolist() == [[1.0]]


def test_three_pieces_fully_connected():
    g = build_graph("claim", pieces(3), HashedBowProvider(8))
    off = ~np.eye(3, dtype=bool)
    assert (g.adjacency[off] == 1).all()
    assert (np.diag(g.adjacency) == 0).all()


def test_duplicate_ids_rejected():
    bad = pieces(2) + [EvidencePiece(id="e0", kind="sentence", text="dup")]
    with pytest.raises(DatasetError):
        build_graph("claim", bad, HashedBowProvider(8))


def test_normalize_two_node_path():
    out = normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalize_isolated_node():
    assert normalize_adjacency(np.array([[0.0]])).tolist() == [[1.0]]


def test_normalize_three_node_path_hand_values():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0
    a[1, 2] = a[2, 1] = 1.0
    out = normalize_adjacency(a)
    np.testing.assert_allclose(out[0], [0.5, 1 / np.sqrt(6), 0.0], atol=1e-12)
    np.testing.assert_allclose(out[1], [1 / np.sqrt(6), 1 / 3, 1 / np.sqrt(6)], atol=1e-12)


def test_normalize_rejects_asymmetric():
    with pytest.raises(ShapeError):
        normalize_adjacency(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_normalized_symmetric():
    rng = np.random.default_rng(0)
    a = (rng.random((6, 6)) > 0.5).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    out = normalize_adjacency(a)
    assert np.abs(out - out.T).max() < 1e-12


@pytest.mark.parametrize("n", range(1, 21))
def test_fully_connected_normalization_is_uniform(n):
    out = normalize_adjacency(complete_adjacency(n))
    np.testing.assert_allclose(out, np.full((n, n), 1.0 / n), atol=1e-15)


def test_spectral_radius_bound():
    for n in (2, 5, 9):
        out = normalize_adjacency(complete_adjacency(n))
        eigvals = np.linalg.eigvalsh(out)
        assert np.abs(eigvals).max() <= 1 + 1e-9


def test_gold_mask_attached_only_when_complete():
    with_flags = [
        EvidencePiece(id=f"e{i}", kind="sentence", text=f"t{i}", is_rationale=(i == 0))
        for i in range(3)
    ]
    g = build_graph("c", with_flags, HashedBowProvider(8))
    assert g.gold_rationale_mask == (True, False, False)

    partial = with_flags[:2] + [EvidencePiece(id="e2", kind="sentence", text="t2")]
    g2 = build_graph("c", partial, HashedBowProvider(8))
    assert g2.gold_rationale_mask is None


def test_claim_node_prepended():
    g = build_graph("the claim text", pieces(3), HashedBowProvider(8), claim_node=True)
    assert g.n == 4
    assert g.node_ids[0] == "__claim__"
