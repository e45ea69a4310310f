"""Standalone LTN covariance model with a graphical Lasso prior on the precision.

Model, for samples ``i = 1..n`` and interior nodes ``A``::

    y_i(A_l) | y_i(A), psi_i(A) ~ Binomial(y_i(A), logistic(psi_i(A)))
    psi_i | mu, Omega           ~ MVN(mu, Omega^{-1})
    mu                          ~ MVN(0, c I)
    Omega | lambda              ~ glasso(lambda)
    lambda                      ~ Gamma(r, s)          (optional)

Inference is blocked Gibbs with Pólya-Gamma auxiliaries ``w_i(A)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import io
from ._chain import run_chain
from .errors import ValidationError
from .glasso import PrecisionState, glasso_step, init_precision
from .phylo import CountDecomposition, PhyloTree, decompose_counts
from .samplers import B_EXACT, rng_stream, sample_mvn, sample_mvn_batch, sample_pg
from .transforms import DEFAULT_MC_DRAWS, ClrCovariance, cov_to_corr, empirical_log_odds, ltn_to_clr_cov

__all__ = [
    "CovModelConfig",
    "CovGibbsState",
    "CovSummary",
    "init_cov_state",
    "cov_sweep",
    "fit_cov",
    "summarize_cov",
]


@dataclass
class CovModelConfig:
    c: float = 10.0
    lam: float = 10.0
    lam_fixed: bool = True
    r: float = 1.0
    s: float = 0.01
    iterations: int = 10_000
    burnin: int | None = None
    thin: int = 1
    seed: int = 0
    save_psi: bool = False
    b_exact: int = B_EXACT
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.burnin is None:
            self.burnin = self.iterations // 2
        if not self.c > 0:
            raise ValidationError("c must be positive")
        if not self.lam > 0:
            raise ValidationError("lambda must be positive")
        if not (self.iterations > self.burnin >= 0):
            raise ValidationError("need iterations > burnin >= 0")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")


@dataclass
class CovGibbsState:
    psi: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    prec: PrecisionState
    kappa: np.ndarray = field(repr=False)
    y_total: np.ndarray = field(repr=False)


def init_cov_state(dec: CountDecomposition, config: CovModelConfig, rng) -> CovGibbsState:
    """Start near the data: empirical log-odds, their mean, ``Omega = I``, ``tau = 1``."""
    psi = empirical_log_odds(dec.y_left, dec.y_total)
    mu = psi.mean(axis=0)
    prec = init_precision(dec.d, lam=config.lam, lam_fixed=config.lam_fixed)
    w = sample_pg(dec.y_total, psi, rng, config.b_exact)
    return CovGibbsState(
        psi=psi,
        w=w,
        mu=mu,
        prec=prec,
        kappa=np.asarray(dec.kappa, dtype=float),
        y_total=np.asarray(dec.y_total),
    )


def cov_sweep(state: CovGibbsState, config: CovModelConfig, rng, skip=()) -> CovGibbsState:
    """One blocked Gibbs sweep: ``w``, ``psi``, ``mu``, then ``(Omega, lambda, tau)``.

    ``skip`` names blocks to leave untouched; it exists for sampler
    mutation testing only.
    """
    omega = state.prec.omega
    n, d = state.psi.shape
    if "w" not in skip:
        state.w = sample_pg(state.y_total, state.psi, rng, config.b_exact)
    if "psi" not in skip:
        P = np.broadcast_to(omega, (n, d, d)).copy()
        P[:, np.arange(d), np.arange(d)] += state.w
        h = omega @ state.mu + state.kappa
        state.psi = sample_mvn_batch(h, P, rng)
    if "mu" not in skip:
        P = n * omega + np.eye(d) / config.c
        state.mu = sample_mvn(np.linalg.solve(P, omega @ state.psi.sum(axis=0)), rng, precision=P)
    if "omega" not in skip:
        dev = state.psi - state.mu
        S = dev.T @ dev
        glasso_step(state.prec, S, n, rng, config.r, config.s)
    return state


def _pack(state: CovGibbsState):
    return {
        "psi": state.psi,
        "w": state.w,
        "mu": state.mu,
        "omega": state.prec.omega,
        "tau": state.prec.tau,
        "lam": np.array(state.prec.lam),
    }


def _unpack(flat, state: CovGibbsState):
    state.psi = flat["psi"]
    state.w = flat["w"]
    state.mu = flat["mu"]
    state.prec.omega = flat["omega"]
    state.prec.tau = flat["tau"]
    state.prec.lam = float(flat["lam"])
    return state


def fit_cov(
    table,
    tree: PhyloTree,
    config: CovModelConfig | None = None,
    run_dir=None,
    resume=False,
    stop_after=None,
    progress=None,
) -> io.PosteriorDraws:
    """Run the blocked Gibbs sampler and return post-burn-in, thinned draws.

    Saved arrays: ``mu`` (draws x d), ``omega`` (draws x d x d), ``lam``
    (draws,), and ``psi`` (draws x n x d) when ``config.save_psi`` is set.
    With ``run_dir`` the chain checkpoints every ``config.checkpoint_every``
    sweeps; ``resume=True`` continues from the last checkpoint.
    """
    config = config or CovModelConfig()
    dec = decompose_counts(table, tree)
    if dec.n < 2:
        raise ValidationError("need at least two samples")
    rng = rng_stream(config.seed)
    state = init_cov_state(dec, config, rng)

    def record(st):
        out = {"mu": st.mu, "omega": st.prec.omega, "lam": st.prec.lam}
        if config.save_psi:
            out["psi"] = st.psi
        return out

    fingerprint = io.array_sha256(dec.y_total, dec.y_left) + repr(sorted(asdict(config).items()))
    _, draws, _ = run_chain(
        state,
        lambda st, g: cov_sweep(st, config, g),
        record,
        _pack,
        _unpack,
        rng,
        config.iterations,
        config.burnin,
        config.thin,
        run_dir=run_dir,
        checkpoint_every=config.checkpoint_every,
        resume=resume,
        stop_after=stop_after,
        progress=progress,
        fingerprint=fingerprint,
    )
    draws.meta.update(
        {
            "model": "cov",
            "config": asdict(config),
            "labels": list(tree.labels),
            "newick": tree.to_newick(),
        }
    )
    return draws


@dataclass
class CovSummary:
    """Posterior summaries of a covariance-model fit.

    ``clr`` is the plug-in clr covariance at the posterior means; ``clr_draws``
    holds per-draw clr covariances when requested.
    """

    mu_mean: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    omega_mean: np.ndarray
    psi_corr: np.ndarray
    clr: ClrCovariance
    clr_draws: list | None = None

    def to_dict(self):
        return {
            "mu_mean": self.mu_mean.tolist(),
            "mu_lower": self.mu_lower.tolist(),
            "mu_upper": self.mu_upper.tolist(),
            "omega_mean": self.omega_mean.tolist(),
            "psi_corr": self.psi_corr.tolist(),
            "clr_cov": self.clr.cov.tolist(),
            "clr_corr": self.clr.corr.tolist(),
        }


def summarize_cov(draws: io.PosteriorDraws, tree: PhyloTree, M=DEFAULT_MC_DRAWS, per_draw=False, seed=0, level=0.95):
    """Node-level posterior summaries and the implied clr covariance.

    The plug-in estimate feeds the posterior means of ``mu`` and ``Omega`` to
    :func:`~ltn.transforms.ltn_to_clr_cov`; ``per_draw=True`` additionally
    converts every saved draw (same seed for each, so identical draws give
    identical results).
    """
    mu = np.asarray(draws["mu"])
    omega = np.asarray(draws["omega"])
    if len(mu) == 0:
        raise ValidationError("no draws to summarize")
    a = (1 - level) / 2
    mu_mean = mu.mean(axis=0)
    omega_mean = omega.mean(axis=0)
    corr = np.mean([cov_to_corr(np.linalg.inv(o)) for o in omega], axis=0)
    clr = ltn_to_clr_cov(mu_mean, omega_mean, tree, M=M, seed=seed)
    per = None
    if per_draw:
        per = [ltn_to_clr_cov(m, o, tree, M=M, seed=seed) for m, o in zip(mu, omega)]
    return CovSummary(
        mu_mean=mu_mean,
        mu_lower=np.quantile(mu, a, axis=0),
        mu_upper=np.quantile(mu, 1 - a, axis=0),
        omega_mean=omega_mean,
        psi_corr=corr,
        clr=clr,
        clr_draws=per,
    )
