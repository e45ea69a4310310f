"""Log-ratio transforms of compositions and LTN-to-clr covariance conversion.

All functions accept a single composition (1-d) or a stack of them (2-d, one
per row) and return arrays of matching rank.  Node-indexed outputs follow the
pre-order interior numbering of :class:`~ltn.phylo.PhyloTree`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_expit

from .errors import DomainError, NumericalError
from .phylo import PhyloTree

__all__ = [
    "tlr",
    "tlr_inverse",
    "tlr_inverse_log",
    "clr",
    "clr_inverse",
    "alr",
    "alr_inverse",
    "ilr",
    "ilr_inverse",
    "ilr_basis",
    "empirical_log_odds",
    "ClrCovariance",
    "cov_to_corr",
    "ltn_to_clr_cov",
    "convert_tree_params",
    "DEFAULT_MC_DRAWS",
]

DEFAULT_MC_DRAWS = 50_000


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _positive(p, what="composition"):
    p, single = _as_2d(p)
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise DomainError(f"{what} must have strictly positive finite entries")
    return p, single


def _ret(x, single):
    return x[0] if single else x


# -- tree-based log-ratio ----------------------------------------------------


def tlr(p, tree: PhyloTree):
    """Log-odds of the left-branch probability at every interior node."""
    p, single = _as_2d(p)
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise DomainError("composition must be finite and nonnegative")
    left = p @ tree.left_members.T
    right = p @ tree.right_members.T
    bad = (left <= 0) | (right <= 0)
    if bad.any():
        a = int(np.flatnonzero(bad.any(axis=0))[0])
        raise DomainError(
            f"zero mass in a child of node {a} ({sorted(tree.node_leaves(a))[:6]}...)"
        )
    return _ret(np.log(left) - np.log(right), single)


def tlr_inverse_log(psi, tree: PhyloTree):
    """Log leaf probabilities from node log-odds (underflow-free)."""
    psi, single = _as_2d(psi)
    logp = log_expit(psi) @ tree.left_members + log_expit(-psi) @ tree.right_members
    return _ret(logp, single)


def tlr_inverse(psi, tree: PhyloTree):
    """Composition whose leaf masses are products of branch probabilities."""
    return np.exp(tlr_inverse_log(psi, tree))


def empirical_log_odds(y_left, y_total, pseudocount=0.5):
    """Node log-odds with a pseudocount added to each side of every binomial."""
    y_left = np.asarray(y_left, dtype=float)
    y_total = np.asarray(y_total, dtype=float)
    return np.log(y_left + pseudocount) - np.log(y_total - y_left + pseudocount)


# -- classical log-ratios ----------------------------------------------------


def clr(p):
    p, single = _positive(p)
    lp = np.log(p)
    return _ret(lp - lp.mean(axis=1, keepdims=True), single)


def clr_inverse(z):
    z, single = _as_2d(z)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return _ret(e / e.sum(axis=1, keepdims=True), single)


def alr(p):
    p, single = _positive(p)
    lp = np.log(p)
    return _ret(lp[:, :-1] - lp[:, -1:], single)


def alr_inverse(z):
    z, single = _as_2d(z)
    full = np.concatenate([z, np.zeros((z.shape[0], 1))], axis=1)
    return _ret(clr_inverse(full), single)


def ilr_basis(tree: PhyloTree) -> np.ndarray:
    """``(d, K)`` matrix ``V`` with ``ilr(p) = V @ log(p)``; rows are orthonormal."""
    nl = tree.n_left[:, None].astype(float)
    nr = tree.n_right[:, None].astype(float)
    coef = np.sqrt(nl * nr / (nl + nr))
    return coef * (tree.left_members / nl - tree.right_members / nr)


def ilr(p, tree: PhyloTree):
    """Balances: scaled log ratio of left/right geometric means at each node."""
    p, single = _positive(p)
    return _ret(np.log(p) @ ilr_basis(tree).T, single)


def ilr_inverse(eta, tree: PhyloTree):
    eta, single = _as_2d(eta)
    return _ret(clr_inverse(eta @ ilr_basis(tree)), single)


# -- clr covariance of an LTN model -----------------------------------------


@dataclass(frozen=True)
class ClrCovariance:
    cov: np.ndarray
    corr: np.ndarray
    draws: int


def cov_to_corr(cov):
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[~np.isfinite(corr)] = 0.0
    np.fill_diagonal(corr, np.where(sd > 0, 1.0, 0.0))
    return corr


def _precision_cholesky(omega):
    omega = np.asarray(omega, dtype=float)
    try:
        return np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise NumericalError("precision matrix is not positive definite") from None


def _mvn_from_precision(mu, chol, size, rng):
    z = rng.standard_normal((size, len(mu)))
    # x = mu + L^{-T} z  has covariance (L L^T)^{-1}
    return mu + solve_triangular(chol, z.T, lower=True, trans="T").T


def ltn_to_clr_cov(mu, omega, tree: PhyloTree, M: int = DEFAULT_MC_DRAWS, seed=0, block=20_000):
    """Monte Carlo clr covariance implied by ``LTN(mu, omega^{-1})`` on ``tree``.

    Draws ``psi ~ MVN(mu, omega^{-1})``, maps each draw to clr coordinates
    through the inverse tlr, and returns the sample covariance/correlation.
    Draws are generated in blocks from a single seeded stream, so the result
    depends only on ``(mu, omega, tree, M, seed)``.
    """
    if M < 2:
        raise DomainError("need at least two Monte Carlo draws")
    mu = np.asarray(mu, dtype=float)
    L = _precision_cholesky(omega)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = tree.K
    total = np.zeros(K)
    cross = np.zeros((K, K))
    shift = None
    done = 0
    while done < M:
        m = min(block, M - done)
        psi = _mvn_from_precision(mu, L, m, rng)
        lp = tlr_inverse_log(psi, tree)
        l = lp - lp.mean(axis=1, keepdims=True)
        if shift is None:
            shift = l.mean(axis=0)
        l = l - shift
        total += l.sum(axis=0)
        cross += l.T @ l
        done += m
    mean = total / M
    cov = (cross - M * np.outer(mean, mean)) / (M - 1)
    cov = 0.5 * (cov + cov.T)
    return ClrCovariance(cov=cov, corr=cov_to_corr(cov), draws=M)


def convert_tree_params(mu, omega, from_tree: PhyloTree, to_tree: PhyloTree, M=DEFAULT_MC_DRAWS, seed=0):
    """Re-express an LTN fitted on ``from_tree`` as node moments on ``to_tree``.

    Returns ``(mean, cov)`` of ``tlr_to(tlr_from^{-1}(psi))`` for
    ``psi ~ MVN(mu, omega^{-1})``, with ``to_tree`` nodes in its own pre-order.
    Leaves are matched by label.
    """
    if set(from_tree.labels) != set(to_tree.labels):
        raise DomainError("trees must share the same leaf labels")
    mu = np.asarray(mu, dtype=float)
    L = _precision_cholesky(omega)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    psi = _mvn_from_precision(mu, L, M, rng)
    lp = tlr_inverse_log(psi, from_tree)
    order = [from_tree.leaf_index(lab) for lab in to_tree.labels]
    lp = lp[:, order]
    # log-sum-exp over each child's leaves
    shift = lp.max(axis=1, keepdims=True)
    p = np.exp(lp - shift)
    left = p @ to_tree.left_members.T
    right = p @ to_tree.right_members.T
    with np.errstate(divide="ignore"):
        out = np.log(left) - np.log(right)
    if not np.all(np.isfinite(out)):
        raise NumericalError("branch mass underflowed during tree conversion")
    return out.mean(axis=0), np.cov(out, rowvar=False)
