"""Covariance loss metrics, ROC curves, and a joint-distribution sampler test."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .glasso import init_precision, sample_glasso_prior, update_tau
from .phylo import PhyloTree, balanced_tree
from .transforms import clr, cov_to_corr

__all__ = [
    "LossReport",
    "cov_losses",
    "RocCurve",
    "roc_from_scores",
    "sample_clr_correlation",
    "GewekeModel",
    "GewekeResult",
    "geweke_test",
    "batch_means_se",
    "normal_toy_model",
    "cov_geweke_model",
    "mixed_geweke_model",
]


@dataclass
class LossReport:
    frobenius: float
    l1: float
    linf: float
    spectral: float

    def to_dict(self):
        return {"frobenius": self.frobenius, "l1": self.l1, "linf": self.linf, "spectral": self.spectral}


def cov_losses(estimate, truth, entrywise_l1: bool = False) -> LossReport:
    """Norms of ``estimate - truth``.

    ``l1`` is the induced 1-norm (largest absolute column sum) unless
    ``entrywise_l1`` is set, in which case it is the sum of absolute entries.
    ``linf`` is the largest absolute entry; ``spectral`` the largest singular value.
    """
    E = np.asarray(estimate, dtype=float)
    T = np.asarray(truth, dtype=float)
    if E.ndim != 2 or E.shape != T.shape:
        raise ValidationError(f"shape mismatch: {E.shape} vs {T.shape}")
    D = E - T
    A = np.abs(D)
    return LossReport(
        frobenius=float(np.sqrt((D * D).sum())),
        l1=float(A.sum() if entrywise_l1 else A.sum(axis=0).max(initial=0.0)),
        linf=float(A.max(initial=0.0)),
        spectral=float(np.linalg.norm(D, 2)) if D.size else 0.0,
    )


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_from_scores(null_scores, alt_scores) -> RocCurve:
    """ROC points from a threshold sweep (call positive when ``score >= threshold``).

    Thresholds run over the distinct pooled scores from high to low, with a
    leading ``+inf`` so the curve starts at ``(0, 0)``; ties move both rates
    together, giving the usual trapezoidal AUC (ties count one half).
    """
    null = np.asarray(null_scores, dtype=float).ravel()
    alt = np.asarray(alt_scores, dtype=float).ravel()
    if null.size == 0 or alt.size == 0:
        raise ValidationError("need at least one null and one alternative score")
    thr = np.unique(np.concatenate([null, alt]))[::-1]
    thr = np.concatenate([[np.inf], thr])
    fpr = np.array([(null >= t).mean() for t in thr])
    tpr = np.array([(alt >= t).mean() for t in thr])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thr, auc=auc)


def sample_clr_correlation(counts, pseudocount: float = 0.5) -> np.ndarray:
    """Plug-in clr correlation of ``counts + pseudocount`` across samples."""
    X = np.asarray(counts, dtype=float) + pseudocount
    Z = clr(X / X.sum(axis=1, keepdims=True))
    return cov_to_corr(np.cov(Z, rowvar=False))


# --------------------------------------------------------------------------
# Joint-distribution test
# --------------------------------------------------------------------------


@dataclass
class GewekeModel:
    """A tiny model instance with a prior simulator and a posterior kernel.

    prior_draw(rng)
        draws all parameters (and latent variables) from the prior.
    regenerate(state, rng)
        draws data given the parameters, in place; must also refresh any
        auxiliary variables whose conditional depends on the data.
    sweep(state, rng, skip)
        one posterior transition given the current data.
    stats(state)
        vector of monitored statistics; ``names`` labels them.
    """

    prior_draw: Callable
    regenerate: Callable
    sweep: Callable
    stats: Callable
    names: list


@dataclass
class GewekeResult:
    names: list
    z: np.ndarray
    marginal_mean: np.ndarray
    successive_mean: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def batch_means_se(x, n_batches: int = 50) -> np.ndarray:
    """Batch-means standard error of the mean of each column of ``x``."""
    x = np.asarray(x, dtype=float)
    T = x.shape[0] - x.shape[0] % n_batches
    b = x[:T].reshape(n_batches, T // n_batches, -1).mean(axis=1)
    return b.std(axis=0, ddof=1) / np.sqrt(n_batches)


def geweke_test(model: GewekeModel, iterations: int, rng, marginal_draws=None, skip=(), n_batches=50, burnin=0):
    """Compare marginal-conditional and successive-conditional simulators.

    The marginal-conditional sample draws ``marginal_draws`` independent
    parameter sets from the prior.  The successive-conditional chain alternates
    the posterior kernel with data regeneration for ``iterations`` steps.  Both
    target the prior, so for a correct kernel every ``z`` is approximately
    standard normal.
    """
    M = iterations if marginal_draws is None else marginal_draws
    g1 = np.array([model.stats(model.prior_draw(rng)) for _ in range(M)])

    state = model.prior_draw(rng)
    model.regenerate(state, rng)
    g2 = np.empty((iterations, g1.shape[1]))
    for t in range(burnin + iterations):
        state = model.sweep(state, rng, skip)
        model.regenerate(state, rng)
        if t >= burnin:
            g2[t - burnin] = model.stats(state)

    m1, m2 = g1.mean(axis=0), g2.mean(axis=0)
    se1 = g1.std(axis=0, ddof=1) / np.sqrt(M)
    se2 = batch_means_se(g2, n_batches)
    se = np.sqrt(se1**2 + se2**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (m1 - m2) / np.where(se > 0, se, 1.0), np.where(m1 == m2, 0.0, np.inf))
    return GewekeResult(names=list(model.names), z=z, marginal_mean=m1, successive_mean=m2)


def normal_toy_model(n: int = 5) -> GewekeModel:
    """``theta ~ N(0, 1)``, ``phi ~ Gamma(2, 2)``, ``y_i ~ N(theta, 1/phi)`` with its exact Gibbs kernel."""

    def prior_draw(rng):
        return {"theta": rng.normal(), "phi": rng.gamma(2.0, 0.5), "y": np.zeros(n)}

    def regenerate(st, rng):
        st["y"] = st["theta"] + rng.standard_normal(n) / np.sqrt(st["phi"])

    def sweep(st, rng, skip=()):
        y = st["y"]
        if "theta" not in skip:
            p = 1.0 + n * st["phi"]
            st["theta"] = rng.normal(st["phi"] * y.sum() / p, 1.0 / np.sqrt(p))
        if "phi" not in skip:
            st["phi"] = rng.gamma(2.0 + n / 2.0, 1.0 / (2.0 + 0.5 * ((y - st["theta"]) ** 2).sum()))
        return st

    def stats(st):
        return np.array([st["theta"], st["theta"] ** 2, st["phi"], st["phi"] ** 2])

    return GewekeModel(prior_draw, regenerate, sweep, stats, ["theta", "theta^2", "phi", "phi^2"])


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _omega_stats(omega):
    d = omega.shape[0]
    iu = np.triu_indices(d, 1)
    return np.concatenate([np.diag(omega), omega[iu], np.abs(omega[iu])])


def _omega_names(d):
    iu = np.triu_indices(d, 1)
    return (
        [f"omega[{j},{j}]" for j in range(d)]
        + [f"omega[{j},{k}]" for j, k in zip(*iu)]
        + [f"|omega[{j},{k}]|" for j, k in zip(*iu)]
    )


def cov_geweke_model(K=4, n=5, depth=20, c=1.0, lam=1.0, tree: PhyloTree | None = None) -> GewekeModel:
    """Covariance model on ``n`` samples of ``depth`` reads each (fixed ``lambda``)."""
    from .cov_model import CovGibbsState, CovModelConfig, cov_sweep
    from .mixed_model import regenerate_counts

    tree = tree or balanced_tree([f"o{j}" for j in range(K)])
    d = tree.d
    config = CovModelConfig(c=c, lam=lam, lam_fixed=True, iterations=2, burnin=0)
    totals = np.full(n, depth)

    def prior_draw(rng):
        omega = sample_glasso_prior(d, lam, rng)
        prec = update_tau(init_precision(d, lam=lam, omega=omega), rng)
        mu = rng.normal(0.0, np.sqrt(c), d)
        psi = rng.multivariate_normal(mu, np.linalg.inv(omega), size=n, method="cholesky")
        z = np.zeros((n, d))
        return CovGibbsState(psi=psi, w=z.copy(), mu=mu, prec=prec, kappa=z.copy(), y_total=z.astype(np.int64))

    def regenerate(st, rng):
        regenerate_counts(st, tree, totals, rng)

    def sweep(st, rng, skip=()):
        return cov_sweep(st, config, rng, skip)

    def stats(st):
        lp = _logistic(st.psi)
        return np.concatenate([st.mu, st.mu**2, _omega_stats(st.prec.omega), lp.mean(axis=0), (lp**2).mean(axis=0)])

    names = (
        [f"mu[{a}]" for a in range(d)]
        + [f"mu[{a}]^2" for a in range(d)]
        + _omega_names(d)
        + [f"mean logistic(psi[:,{a}])" for a in range(d)]
        + [f"mean logistic(psi[:,{a}])^2" for a in range(d)]
    )
    return GewekeModel(prior_draw, regenerate, sweep, stats, names)


def mixed_geweke_model(
    K=4, n=6, G=2, depth=20, p0=0.5, lam=2.0, c0=3.0, d0=3.0, t=3.0, u=3.0, c_beta=0.5, tree=None, seed=0
) -> GewekeModel:
    """Mixed model with an intercept-only ``Z`` (``q = 1``), balanced groups and a fixed ``s``."""
    from .mixed_model import MixedConfig, MixedDesign, _Cache, mixed_sweep, regenerate_counts, sample_mixed_prior

    tree = tree or balanced_tree([f"o{j}" for j in range(K)])
    d = tree.d
    s = np.arange(n) % 2
    g = np.arange(n) * G // n
    design = MixedDesign.build(s, g, Z=None, intercept=True)
    config = MixedConfig(p0=p0, lam=lam, t=t, u=u, c0=c0, d0=d0, c_beta=c_beta, iterations=2, burnin=0)
    cache = _Cache(design)
    totals = np.full(n, depth)

    def prior_draw(rng):
        st = sample_mixed_prior(design, config, d, rng)
        update_tau(st.prec, rng)
        return st

    def regenerate(st, rng):
        regenerate_counts(st, tree, totals, rng)

    def sweep(st, rng, skip=()):
        return mixed_sweep(st, design, config, rng, cache, skip)

    def stats(st):
        return np.concatenate(
            [
                st.alpha,
                (st.alpha != 0).astype(float),
                st.beta[0],
                st.beta[0] ** 2,
                st.phi_eps,
                [st.phi_alpha],
                np.diag(st.prec.omega),
                _logistic(st.psi).mean(axis=0),
            ]
        )

    names = (
        [f"alpha[{a}]" for a in range(d)]
        + [f"1(alpha[{a}]!=0)" for a in range(d)]
        + [f"beta[{a}]" for a in range(d)]
        + [f"beta[{a}]^2" for a in range(d)]
        + [f"phi_eps[{a}]" for a in range(d)]
        + ["phi_alpha"]
        + [f"omega[{a},{a}]" for a in range(d)]
        + [f"mean logistic(psi[:,{a}])" for a in range(d)]
    )
    return GewekeModel(prior_draw, regenerate, sweep, stats, names)
