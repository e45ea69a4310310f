"""Synthetic data generators for covariance and two-group testing experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .phylo import OtuTable, PhyloTree, _Node
from .transforms import ilr_inverse, tlr_inverse_log

__all__ = [
    "PrecisionTemplate",
    "ScenarioSpec",
    "MIN_EIGENVALUE",
    "gen_precision",
    "gen_ln_dataset",
    "gen_ltn_dataset",
    "gen_dtm_dataset",
    "gen_mixed_cohort",
    "apply_group_shift",
    "gen_caterpillar_trees",
    "multinomial_rows",
]

# Diagonal inflation target: the smallest eigenvalue of a generated precision.
MIN_EIGENVALUE = 0.1


@dataclass
class PrecisionTemplate:
    kind: str
    d: int
    omega: np.ndarray
    edges: list
    meta: dict = field(default_factory=dict)


def _signed_03(rng, size):
    return np.where(rng.random(size) < 0.5, 0.3, -0.3)


def _inflate(offdiag):
    lo = np.linalg.eigvalsh(offdiag)[0]
    return offdiag + (MIN_EIGENVALUE - lo) * np.eye(offdiag.shape[0]), MIN_EIGENVALUE - lo


def gen_precision(kind: str, d: int, rng) -> PrecisionTemplate:
    """Random sparse precision matrix of the Hub, Block or Sparse type.

    Hub
        3 randomly chosen hub nodes; a hub links to any other node with
        probability 0.7, two non-hubs link with probability 0.2.
    Block
        nodes split into 10 near-equal contiguous blocks; within-block pairs
        link with probability 0.5, between-block pairs with probability 0.2.
    Sparse
        a leading ``p1 = floor(3 sqrt(d))`` block ``B + eps I`` whose strictly
        lower entries are ``U * 1{V < 0.3}``, ``U ~ Unif([-1,-0.5] u [0.5,1])``,
        followed by an identity block.

    Hub/Block edge weights are +-0.3 with equal probability.  The diagonal
    (the ``eps`` block for Sparse) is raised until the smallest eigenvalue
    equals :data:`MIN_EIGENVALUE`.
    """
    kind = kind.lower()
    iu = np.triu_indices(d, 1)
    meta = {}
    if kind == "hub":
        if d < 3:
            raise ValidationError("hub precision needs d >= 3")
        hubs = np.sort(rng.choice(d, size=3, replace=False))
        is_hub = np.zeros(d, dtype=bool)
        is_hub[hubs] = True
        prob = np.where(is_hub[iu[0]] | is_hub[iu[1]], 0.7, 0.2)
        link = rng.random(len(prob)) < prob
        A = np.zeros((d, d))
        A[iu[0][link], iu[1][link]] = _signed_03(rng, int(link.sum()))
        A = A + A.T
        omega, shift = _inflate(A)
        meta["hubs"] = hubs.tolist()
    elif kind == "block":
        block = np.zeros(d, dtype=int)
        for b, members in enumerate(np.array_split(np.arange(d), 10)):
            block[members] = b
        prob = np.where(block[iu[0]] == block[iu[1]], 0.5, 0.2)
        link = rng.random(len(prob)) < prob
        A = np.zeros((d, d))
        A[iu[0][link], iu[1][link]] = _signed_03(rng, int(link.sum()))
        A = A + A.T
        omega, shift = _inflate(A)
        meta["blocks"] = block.tolist()
    elif kind == "sparse":
        p1 = min(int(np.floor(3 * np.sqrt(d))), d)
        li = np.tril_indices(p1, -1)
        m = len(li[0])
        U = rng.uniform(0.5, 1.0, m) * np.where(rng.random(m) < 0.5, -1.0, 1.0)
        V = rng.random(m)
        B = np.zeros((p1, p1))
        B[li] = U * (V < 0.3)
        B = B + B.T
        A1, shift = _inflate(B)
        omega = np.eye(d)
        omega[:p1, :p1] = A1
        meta["p1"] = p1
    else:
        raise ValidationError(f"unknown precision kind {kind!r}")
    omega = 0.5 * (omega + omega.T)
    edges = [(int(i), int(j)) for i, j in zip(*iu) if omega[i, j] != 0]
    meta["diagonal_shift"] = float(shift)
    meta["min_eigenvalue"] = MIN_EIGENVALUE
    return PrecisionTemplate(kind=kind, d=d, omega=omega, edges=edges, meta=meta)


def multinomial_rows(N, P, rng):
    """One multinomial count vector per row of ``P``."""
    P = np.asarray(P, dtype=float)
    P = P / P.sum(axis=1, keepdims=True)
    N = np.broadcast_to(np.asarray(N, dtype=np.int64), (P.shape[0],))
    return rng.multinomial(N, P)


def _table(counts, tree):
    return OtuTable.from_array(counts, labels=tree.labels)


def gen_ln_dataset(tree: PhyloTree, omega0, rng, n=200, N=100_000, mean=None):
    """Counts from an ilr-normal model: ``eta_i ~ MVN(m, Omega0^{-1})``, ``p_i = ilr^{-1}(eta_i)``.

    ``mean`` defaults to independent ``N(0, 16)`` entries.  Returns the
    table and the mean actually used.
    """
    omega0 = np.asarray(omega0, dtype=float)
    d = tree.d
    if omega0.shape != (d, d):
        raise ValidationError(f"precision must be {d}x{d} for a {tree.K}-leaf tree")
    m = rng.normal(0.0, 4.0, d) if mean is None else np.asarray(mean, dtype=float)
    eta = rng.multivariate_normal(m, np.linalg.inv(omega0), size=n, method="cholesky")
    P = ilr_inverse(eta, tree)
    return _table(multinomial_rows(N, P, rng), tree), m


def gen_ltn_dataset(tree: PhyloTree, mu, omega, rng, n=200, N=100_000):
    """Counts from ``LTN(mu, Omega^{-1})`` on ``tree``; returns ``(table, psi)``."""
    mu = np.asarray(mu, dtype=float)
    psi = rng.multivariate_normal(mu, np.linalg.inv(omega), size=n, method="cholesky")
    P = np.exp(tlr_inverse_log(psi, tree))
    return _table(multinomial_rows(N, P, rng), tree), psi


def gen_dtm_dataset(tree: PhyloTree, theta, tau, rng, n=200, N=100_000):
    """Dirichlet-tree multinomial counts.

    Each node's branch probability is ``Beta(theta * tau, (1 - theta) * tau)``;
    leaf probabilities are products along root paths.  Returns
    ``(table, branch_probabilities)``.
    """
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (tree.d,))
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (tree.d,))
    if np.any((theta <= 0) | (theta >= 1)) or np.any(tau <= 0):
        raise ValidationError("need 0 < theta < 1 and tau > 0")
    b = rng.beta(theta * tau, (1 - theta) * tau, size=(n, tree.d))
    b = np.clip(b, 1e-300, 1 - 1e-16)
    logp = np.log(b) @ tree.left_members + np.log1p(-b) @ tree.right_members
    P = np.exp(logp)
    return _table(multinomial_rows(N, P, rng), tree), b


def gen_mixed_cohort(
    tree: PhyloTree,
    rng,
    n_groups=10,
    per_group=8,
    mu=None,
    omega_re=None,
    noise_sd=0.3,
    age_effect=None,
    N=10_000,
):
    """Longitudinal cohort from the mixed-effects LTN without a group effect.

    ``psi_i = mu + beta_age * age_i + gamma_{g_i} + eps_i`` with
    ``gamma_g ~ MVN(0, omega_re^{-1})`` and ``eps_i(A) ~ N(0, noise_sd^2)``.
    Ages are evenly spaced log-ages per individual.  Returns
    ``(table, groups, log_age)``.
    """
    d = tree.d
    mu = rng.normal(0.0, 1.0, d) if mu is None else np.asarray(mu, dtype=float)
    omega_re = np.eye(d) * 4.0 if omega_re is None else np.asarray(omega_re, dtype=float)
    age_effect = rng.normal(0.0, 0.3, d) if age_effect is None else np.asarray(age_effect, dtype=float)
    groups = np.repeat(np.arange(n_groups), per_group)
    n = len(groups)
    log_age = np.tile(np.linspace(-1.0, 1.0, per_group), n_groups)
    gam = rng.multivariate_normal(np.zeros(d), np.linalg.inv(omega_re), size=n_groups, method="cholesky")
    psi = mu + np.outer(log_age, age_effect) + gam[groups] + rng.normal(0.0, noise_sd, (n, d))
    P = np.exp(tlr_inverse_log(psi, tree))
    table = OtuTable(
        multinomial_rows(N, P, rng), tuple(f"s{i}" for i in range(n)), tree.labels
    )
    return table, groups, log_age


@dataclass
class ScenarioSpec:
    """Group-shift scenario: ``kind`` is ``null``, ``single`` or ``multi``."""

    kind: str = "null"
    n_shift: int = 0
    multiplier: float = 1.0
    pool: int = 20

    def __post_init__(self):
        if self.kind not in ("null", "single", "multi"):
            raise ValidationError(f"unknown scenario {self.kind!r}")
        if not self.multiplier > 0:
            raise ValidationError("multiplier must be positive")

    @classmethod
    def named(cls, kind):
        return {
            "null": cls("null", 0, 1.0),
            "single": cls("single", 1, 3.0),
            "multi": cls("multi", 8, 1.5),
        }[kind]


def apply_group_shift(table: OtuTable, scenario: ScenarioSpec, rng):
    """Randomly split samples into two equal groups and shift OTUs in the second.

    The OTUs to shift are drawn from the ``scenario.pool`` most abundant (by
    mean relative abundance); their counts in the second group are multiplied
    and rounded to the nearest integer (ties to even).  Returns
    ``(table', s, shifted_columns)`` where ``s[i] = 1`` marks the second group.
    """
    n, K = table.counts.shape
    s = np.zeros(n, dtype=np.int64)
    s[rng.permutation(n)[: n // 2]] = 1
    if scenario.kind == "null":
        return table, s, []
    if K < scenario.n_shift:
        raise ValidationError("not enough OTUs for the scenario")
    rel = (table.counts / table.counts.sum(axis=1, keepdims=True)).mean(axis=0)
    pool = np.argsort(-rel, kind="stable")[: min(scenario.pool, K)]
    cols = np.sort(rng.choice(pool, size=scenario.n_shift, replace=False))
    counts = table.counts.astype(np.float64).copy()
    sel = s == 1
    counts[np.ix_(sel, cols)] *= scenario.multiplier
    counts = np.rint(counts).astype(np.int64)
    return table.with_counts(counts), s, cols.tolist()


def gen_caterpillar_trees(K: int, labels=None):
    """Left caterpillar, balanced tree, and right caterpillar over the same leaves.

    In the left caterpillar every right child is a leaf; in the right one every
    left child is a leaf.  All three list the leaves in the same pre-order.
    """
    if K < 2:
        raise ValidationError("need at least two leaves")
    if K & (K - 1):
        raise ValidationError("balanced tree requires K to be a power of two")
    labels = [f"u{j + 1}" for j in range(K)] if labels is None else list(labels)

    left = _Node(labels[0])
    for lab in labels[1:]:
        left = _Node(None, [left, _Node(lab)])

    right = _Node(labels[-1])
    for lab in reversed(labels[:-1]):
        right = _Node(None, [_Node(lab), right])

    def balanced(lo, hi):
        if hi - lo == 1:
            return _Node(labels[lo])
        mid = (lo + hi) // 2
        return _Node(None, [balanced(lo, mid), balanced(mid, hi)])

    return (
        PhyloTree._from_nested(left),
        PhyloTree._from_nested(balanced(0, K)),
        PhyloTree._from_nested(right),
    )
