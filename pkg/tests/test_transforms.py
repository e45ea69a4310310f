import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from ltn.errors import DomainError, NumericalError
from ltn.phylo import balanced_tree, parse_newick, random_tree
from ltn.transforms import (
    alr,
    alr_inverse,
    clr,
    clr_inverse,
    convert_tree_params,
    empirical_log_odds,
    ilr,
    ilr_basis,
    ilr_inverse,
    ltn_to_clr_cov,
    tlr,
    tlr_inverse,
)

P = np.array([0.4, 0.1, 0.3, 0.2])


def test_tlr_uniform_and_hand_values(tree4):
    np.testing.assert_allclose(tlr(np.full(4, 0.25), tree4), 0.0, atol=1e-15)
    np.testing.assert_allclose(tlr(P, tree4), [0.0, np.log(4), np.log(1.5)], rtol=1e-14)


def test_tlr_inverse_examples(tree4):
    np.testing.assert_allclose(tlr_inverse(np.zeros(3), tree4), 0.25, rtol=1e-15)
    two = parse_newick("(a,b);")
    np.testing.assert_allclose(tlr_inverse([np.log(4)], two), [0.8, 0.2], rtol=1e-14)


def test_tlr_zero_mass_names_node(tree4):
    with pytest.raises(DomainError, match="node 1"):
        tlr([0.5, 0.0, 0.25, 0.25], tree4)


def test_clr_alr_ilr_examples(tree4):
    np.testing.assert_allclose(clr(np.full(5, 0.2)), 0.0, atol=1e-15)
    np.testing.assert_allclose(ilr(np.full(4, 0.25), tree4), 0.0, atol=1e-15)
    np.testing.assert_allclose(alr([0.2, 0.3, 0.5]), [np.log(0.4), np.log(0.6)], rtol=1e-14)
    # scalar balance formula, written out independently
    def balance(left, right):
        nl, nr = len(left), len(right)
        gl = np.exp(np.mean(np.log(left)))
        gr = np.exp(np.mean(np.log(right)))
        return np.sqrt(nl * nr / (nl + nr)) * np.log(gl / gr)

    expected = [balance(P[:2], P[2:]), balance(P[:1], P[1:2]), balance(P[2:3], P[3:])]
    np.testing.assert_allclose(ilr(P, tree4), expected, rtol=1e-13)
    assert ilr(P, tree4)[0] == pytest.approx(np.log(0.2 / np.sqrt(0.06)))


def test_nonpositive_inputs_rejected():
    for f in (clr, alr):
        with pytest.raises(DomainError):
            f([0.5, 0.5, 0.0])
    with pytest.raises(DomainError):
        ilr([0.5, -0.1, 0.6], balanced_tree("abc"))


@pytest.mark.parametrize("K", [2, 4, 8, 64])
def test_roundtrips_many_compositions(K):
    rng = np.random.default_rng(K)
    tree = random_tree([f"o{j}" for j in range(K)], rng)
    p = rng.dirichlet(np.ones(K), size=1000)
    psi = rng.normal(0, 2, size=(1000, K - 1))
    assert np.max(np.abs(tlr(tlr_inverse(psi, tree), tree) - psi)) < 1e-10
    assert np.max(np.abs(tlr_inverse(tlr(p, tree), tree) - p)) < 1e-12
    assert np.max(np.abs(ilr_inverse(ilr(p, tree), tree) - p)) < 1e-12
    assert np.max(np.abs(clr_inverse(clr(p)) - p)) < 1e-12
    assert np.max(np.abs(alr_inverse(alr(p)) - p)) < 1e-12
    assert np.max(np.abs(clr(p).sum(axis=1))) < 1e-10
    assert ilr(p, tree).shape == (1000, K - 1) and alr(p).shape == (1000, K - 1)
    V = ilr_basis(tree)
    np.testing.assert_allclose(V @ V.T, np.eye(K - 1), atol=1e-12)
    np.testing.assert_allclose(ilr(p, tree), clr(p) @ V.T, atol=1e-10)


@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2**32 - 1))
def test_child_swap_negates_node(K, seed):
    rng = np.random.default_rng(seed)
    tree = random_tree([f"o{j}" for j in range(K)], rng)
    a = int(rng.integers(tree.d))
    swapped = tree.swap_children(a)
    p = rng.dirichlet(np.ones(K))
    psi = tlr(p, tree)
    # match nodes across the trees by their leaf partitions
    keys = {swapped.node_key(b): b for b in range(swapped.d)}
    for b in range(tree.d):
        left, right = tree.node_key(b)
        if b == a:
            assert swapped.node_key(keys[(right, left)]) == (right, left)
            assert tlr(p[[tree.leaf_index(x) for x in swapped.labels]], swapped)[keys[(right, left)]] == pytest.approx(-psi[b])
        else:
            assert tlr(p[[tree.leaf_index(x) for x in swapped.labels]], swapped)[keys[(left, right)]] == pytest.approx(psi[b])
    back = tlr_inverse(tlr(p[[tree.leaf_index(x) for x in swapped.labels]], swapped), swapped)
    np.testing.assert_allclose(back, p[[tree.leaf_index(x) for x in swapped.labels]], rtol=1e-12)


def test_empirical_log_odds_pseudocount():
    np.testing.assert_allclose(empirical_log_odds([0, 3], [0, 4]), [0.0, np.log(3.5 / 1.5)])


def test_clr_cov_degenerate_and_invariants(tree4):
    g = ltn_to_clr_cov(np.array([0.3, -1.0, 0.5]), 1e8 * np.eye(3), tree4, M=100_000)
    assert np.linalg.norm(g.cov) < 1e-2
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    omega = A @ A.T + np.eye(3)
    g = ltn_to_clr_cov(rng.normal(size=3), omega, tree4, M=20_000, seed=5)
    np.testing.assert_array_equal(g.cov, g.cov.T)
    assert np.max(np.abs(g.cov.sum(axis=1))) < 1e-8
    assert np.linalg.eigvalsh(g.cov).min() > -1e-8
    with pytest.raises(NumericalError):
        ltn_to_clr_cov(np.zeros(3), -np.eye(3), tree4)


def test_clr_cov_is_deterministic(tree4):
    a = ltn_to_clr_cov(np.ones(3), 2 * np.eye(3), tree4, M=5000, seed=9)
    b = ltn_to_clr_cov(np.ones(3), 2 * np.eye(3), tree4, M=5000, seed=9)
    np.testing.assert_array_equal(a.cov, b.cov)


def test_clr_cov_matches_dense_oracle():
    tree = parse_newick("((a,b),c);")
    mu = np.array([0.4, -0.7])
    omega = np.array([[2.0, 0.6], [0.6, 1.5]])
    got = ltn_to_clr_cov(mu, omega, tree, M=200_000, seed=1).cov

    # independent dense simulation with explicit branch products
    rng = np.random.default_rng(2)
    psi = rng.multivariate_normal(mu, np.linalg.inv(omega), size=1_000_000)
    t0, t1 = expit(psi[:, 0]), expit(psi[:, 1])
    p = np.column_stack([t0 * t1, t0 * (1 - t1), 1 - t0])
    lp = np.log(p)
    z = lp - lp.mean(axis=1, keepdims=True)
    zc = z - z.mean(axis=0)
    ref = zc.T @ zc / (len(z) - 1)
    prod = zc[:, :, None] * zc[:, None, :]
    se_ref = prod.std(axis=0) / np.sqrt(len(z))
    se_got = se_ref * np.sqrt(len(z) / 200_000)
    assert np.all(np.abs(got - ref) < 3 * np.sqrt(se_ref**2 + se_got**2))


def test_convert_tree_params_identity_and_relabel():
    t1 = parse_newick("((a,b),(c,d));")
    t2 = parse_newick("((c,d),(a,b));")
    mu = np.array([0.5, -0.2, 1.0])
    omega = np.diag([4.0, 2.0, 1.0])
    m, c = convert_tree_params(mu, omega, t1, t1, M=100_000, seed=0)
    np.testing.assert_allclose(m, mu, atol=0.02)
    np.testing.assert_allclose(c, np.linalg.inv(omega), atol=0.02)
    m2, _ = convert_tree_params(mu, omega, t1, t2, M=100_000, seed=0)
    # root is mirrored; the {c,d} and {a,b} nodes swap positions
    np.testing.assert_allclose(m2, [-mu[0], mu[2], mu[1]], atol=0.02)
