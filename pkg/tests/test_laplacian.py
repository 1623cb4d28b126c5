import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfcembed.laplacian import (LaplacianSequence, devectorize_upper, edge_index, edge_names,
                                laplacian, laplacian_sequence, load_stacked, save_stacked,
                                stack_population, vectorize_upper)
from oracles import partial_correlations


def random_spd(seed, p):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(p, p))
    return A @ A.T + 0.5 * np.eye(p)


def test_two_node_example():
    np.testing.assert_allclose(laplacian(np.array([[2.0, -1.0], [-1.0, 2.0]])),
                               [[0.0, 0.5], [0.5, 0.0]])


def test_diagonal_precision_gives_zero():
    np.testing.assert_array_equal(laplacian(np.diag([1.0, 3.0, 0.2])), np.zeros((3, 3)))


def test_nonpositive_diagonal_rejected():
    with pytest.raises(ValueError, match="nonpositive diagonal"):
        laplacian(np.array([[0.0, 0.1], [0.1, 1.0]]))


def test_marginal_variant_differs():
    theta = random_spd(0, 4)
    assert not np.allclose(laplacian(theta, marginal=True), laplacian(theta))


def test_vectorize_order():
    L = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    np.testing.assert_array_equal(vectorize_upper(L), [1, 2, 3])
    np.testing.assert_array_equal(vectorize_upper(np.zeros((4, 4))), np.zeros(6))
    assert edge_index(3) == [(0, 1), (0, 2), (1, 2)]
    assert edge_names(["a", "b", "c"]) == ["a--b", "a--c", "b--c"]


def test_devectorize_rejects_bad_length():
    with pytest.raises(ValueError):
        devectorize_upper(np.zeros(4))


def session(seed, n=3, p=3, sid="s", acq="LR"):
    thetas = np.array([random_spd(seed + i, p) for i in range(n)])
    return laplacian_sequence(thetas, sid, acq, [f"t{i}" for i in range(n)])


def test_stack_shapes_and_row_order():
    a, b = session(0, sid="s1"), session(10, sid="s2")
    st_ = stack_population([a, b], ["x", "y", "z"])
    assert st_.matrix.shape == (6, 3)
    meta = st_.row_meta[3]
    assert (meta.subject_id, meta.time) == ("s2", 1)
    meta = st_.row_meta[4]   # fifth row: second session, second time point
    assert (meta.subject_id, meta.time, meta.task) == ("s2", 2, "t1")
    np.testing.assert_array_equal(st_.matrix[3:], b.vectorized())


def test_single_session_stack():
    a = session(0)
    np.testing.assert_array_equal(stack_population([a]).matrix, a.vectorized())


def test_stack_mismatched_p():
    with pytest.raises(ValueError, match="mismatched p"):
        stack_population([session(0, p=3), session(1, p=4)])


def test_stacked_round_trip(tmp_path):
    st_ = stack_population([session(0, sid="s1"), session(5, sid="s2", acq="RL")], ["x", "y", "z"])
    save_stacked(st_, tmp_path / "m.tsv", tmp_path / "meta.tsv")
    back = load_stacked(tmp_path / "m.tsv", tmp_path / "meta.tsv")
    np.testing.assert_array_equal(back.matrix, st_.matrix)
    assert back.row_meta == st_.row_meta
    assert back.node_labels == st_.node_labels
    assert (tmp_path / "m.tsv").read_text().splitlines()[0] == "x--y\tx--z\ty--z"


def test_sequence_validation():
    with pytest.raises(ValueError):
        LaplacianSequence(np.zeros((2, 3, 3)), task_labels=("a",))


seeds = st.integers(0, 2**31 - 1)


@given(seeds, st.integers(2, 7))
def test_laplacian_invariants_and_partial_correlation(seed, p):
    theta = random_spd(seed, p)
    L = laplacian(theta)
    np.testing.assert_allclose(L, L.T, atol=1e-10)
    assert np.all(np.diag(L) == 0)
    assert np.abs(L).max() <= 1 + 1e-8
    pc = partial_correlations(theta)
    off = ~np.eye(p, dtype=bool)
    # off-diagonal Laplacian entries equal the partial correlations of the implied covariance
    np.testing.assert_allclose(L[off], pc[off], atol=1e-8)


@given(seeds, st.integers(2, 6), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, p, c):
    theta = random_spd(seed, p)
    np.testing.assert_allclose(laplacian(c * theta), laplacian(theta), atol=1e-12)


@given(seeds, st.integers(2, 8))
def test_vectorize_round_trip(seed, p):
    A = np.random.default_rng(seed).normal(size=(p, p))
    L = A + A.T
    np.fill_diagonal(L, 0.0)
    np.testing.assert_array_equal(devectorize_upper(vectorize_upper(L)), L)


@given(seeds, st.integers(2, 6), st.randoms(use_true_random=False))
def test_node_permutation_equivariance(seed, p, rnd):
    theta = random_spd(seed, p)
    perm = list(range(p))
    rnd.shuffle(perm)
    v = vectorize_upper(laplacian(theta))
    vp = vectorize_upper(laplacian(theta[np.ix_(perm, perm)]))
    col = {pair: c for c, pair in enumerate(edge_index(p))}
    for c, (j, k) in enumerate(edge_index(p)):
        a, b = sorted((perm[j], perm[k]))
        assert vp[c] == pytest.approx(v[col[(a, b)]], abs=1e-12)
