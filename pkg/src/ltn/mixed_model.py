"""Mixed-effects LTN model for two-group comparisons.

For sample ``i`` with group indicator ``s_i``, covariates ``z_i`` and random
effect label ``g_i``::

    psi_i = alpha * s_i + beta' z_i + gamma_{g_i} + eps_i,   eps_i(A) ~ N(0, 1/phi_eps(A))
    gamma_g ~ MVN(0, Omega^{-1}),  Omega ~ glasso(lambda)
    alpha(A) ~ (1 - pi(A)) delta_0 + pi(A) N(0, 1/phi_alpha),  pi(A) ~ Beta(m, 1 - m)
    beta(A)  ~ MVN(0, c n (Z'Z)^{-1}),  phi_alpha ~ Gamma(t, u),  phi_eps(A) ~ Gamma(c0, d0)

``m = 1 - p0^{1/d}`` makes ``p0`` the prior probability of no difference.
The posterior probability that ``alpha`` is not identically zero (PJAP) is
the global test statistic; per-node probabilities are PMAPs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import io
from ._chain import run_chain
from .errors import ValidationError
from .glasso import PrecisionState, glasso_step, init_precision, sample_glasso_prior
from .phylo import PhyloTree, decompose_counts
from .samplers import (
    B_EXACT,
    rng_stream,
    sample_matrix_normal_columns,
    sample_mvn_batch,
    sample_pg,
)
from .transforms import empirical_log_odds, tlr_inverse_log

__all__ = [
    "MixedDesign",
    "MixedConfig",
    "MixedGibbsState",
    "TestReport",
    "prior_inclusion",
    "init_mixed_state",
    "mixed_sweep",
    "fit_mixed",
    "compute_pmap_pjap",
]


def prior_inclusion(p0: float, d: int) -> float:
    """``m = 1 - p0^{1/d}``, the per-node prior inclusion mean."""
    if not 0 < p0 < 1:
        raise ValidationError("p0 must lie in (0, 1)")
    return -np.expm1(np.log(p0) / d)


@dataclass
class MixedDesign:
    """Group indicators, fixed-effect covariates and random-effect labels.

    ``g`` may hold arbitrary hashable labels; they are mapped to ``0..G-1``
    in sorted order (``group_labels`` keeps the originals).  With
    ``intercept=True`` a column of ones is prepended to ``Z``.
    """

    s: np.ndarray
    Z: np.ndarray
    g: np.ndarray
    group_labels: list = field(default_factory=list)
    covariate_names: list = field(default_factory=list)

    @classmethod
    def build(cls, s, g, Z=None, intercept=True, covariate_names=None) -> "MixedDesign":
        s = np.asarray(s)
        n = s.shape[0]
        if s.ndim != 1 or not np.all((s == 0) | (s == 1)):
            raise ValidationError("group indicators must be a 0/1 vector")
        g_raw = np.asarray(g)
        if g_raw.shape != (n,):
            raise ValidationError(f"random-effect labels must have length {n}")
        labels, g_idx = np.unique(g_raw, return_inverse=True)
        if Z is None:
            Z = np.empty((n, 0))
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.shape[0] != n:
            raise ValidationError(f"covariate matrix must have {n} rows")
        names = list(covariate_names) if covariate_names is not None else [f"z{j}" for j in range(Z.shape[1])]
        if intercept:
            Z = np.column_stack([np.ones(n), Z])
            names = ["(intercept)"] + names
        if not np.all(np.isfinite(Z)):
            raise ValidationError("covariates must be finite")
        if Z.shape[1] and np.linalg.matrix_rank(Z) < Z.shape[1]:
            raise ValidationError(
                "covariate matrix Z'Z is rank deficient; drop collinear or constant covariates"
            )
        return cls(
            s=s.astype(float),
            Z=Z,
            g=g_idx.astype(np.int64),
            group_labels=labels.tolist(),
            covariate_names=names,
        )

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def G(self) -> int:
        return len(self.group_labels)

    @property
    def H(self) -> np.ndarray:
        H = np.zeros((self.n, self.G))
        H[np.arange(self.n), self.g] = 1.0
        return H


@dataclass
class MixedConfig:
    p0: float = 0.5
    lam: float = 10.0
    lam_fixed: bool = True
    r: float = 1.0
    s: float = 0.01
    t: float = 1.0
    u: float = 1.0
    c0: float = 1.0
    d0: float = 1.0
    c_beta: float = 10.0
    iterations: int = 10_000
    burnin: int | None = None
    thin: int = 1
    seed: int = 0
    threshold: float = 0.95
    b_exact: int = B_EXACT
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.burnin is None:
            self.burnin = self.iterations // 2
        if not 0 < self.p0 < 1:
            raise ValidationError("p0 must lie in (0, 1)")
        for name in ("lam", "t", "u", "c0", "d0", "c_beta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not (self.iterations > self.burnin >= 0):
            raise ValidationError("need iterations > burnin >= 0")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")


@dataclass
class MixedGibbsState:
    psi: np.ndarray
    w: np.ndarray
    alpha: np.ndarray
    pi: np.ndarray
    phi_alpha: float
    beta: np.ndarray
    gamma: np.ndarray
    phi_eps: np.ndarray
    prec: PrecisionState
    kappa: np.ndarray = field(repr=False)
    y_total: np.ndarray = field(repr=False)


class _Cache:
    """Design quantities reused every sweep."""

    def __init__(self, design: MixedDesign):
        self.design = design
        self.n_l = np.bincount(design.g, minlength=design.G).astype(float)
        self.ss = float(design.s @ design.s)
        if design.q:
            ZtZ = design.Z.T @ design.Z
            self.ZtZ_inv = np.linalg.inv(ZtZ)
            self.ZtZ_inv = 0.5 * (self.ZtZ_inv + self.ZtZ_inv.T)
            self.proj = self.ZtZ_inv @ design.Z.T


def _fixed(state, design):
    out = np.outer(design.s, state.alpha)
    if design.q:
        out += design.Z @ state.beta
    return out


def init_mixed_state(dec, design: MixedDesign, config: MixedConfig, rng) -> MixedGibbsState:
    """Start at least-squares fits to the empirical log-odds; ``alpha = 0``, ``Omega = I``."""
    d = dec.d
    psi = empirical_log_odds(dec.y_left, dec.y_total)
    beta = np.zeros((design.q, d))
    if design.q:
        beta = np.linalg.lstsq(design.Z, psi, rcond=None)[0]
    resid = psi - (design.Z @ beta if design.q else 0.0)
    gamma = np.zeros((design.G, d))
    np.add.at(gamma, design.g, resid)
    gamma /= np.maximum(np.bincount(design.g, minlength=design.G), 1)[:, None]
    eps = resid - gamma[design.g]
    phi_eps = 1.0 / np.maximum(eps.var(axis=0), 1e-2)
    w = sample_pg(dec.y_total, psi, rng, config.b_exact)
    return MixedGibbsState(
        psi=psi,
        w=w,
        alpha=np.zeros(d),
        pi=np.full(d, prior_inclusion(config.p0, d)),
        phi_alpha=1.0,
        beta=beta,
        gamma=gamma,
        phi_eps=phi_eps,
        prec=init_precision(d, lam=config.lam, lam_fixed=config.lam_fixed),
        kappa=np.asarray(dec.kappa, dtype=float),
        y_total=np.asarray(dec.y_total),
    )


def mixed_sweep(state: MixedGibbsState, design: MixedDesign, config: MixedConfig, rng, cache=None, skip=()):
    """One Gibbs cycle: beta, alpha, pi, gamma, phi_eps, psi, w, phi_alpha, (Omega, lambda, tau).

    ``skip`` names blocks to leave untouched (mutation testing only).
    """
    cache = cache or _Cache(design)
    n, d = state.psi.shape
    s, g = design.s, design.g
    m = prior_inclusion(config.p0, d)

    if design.q and "beta" not in skip:
        R = state.psi - np.outer(s, state.alpha) - state.gamma[g]
        shrink = 1.0 / (state.phi_eps + 1.0 / (config.c_beta * n))
        means = (cache.proj @ R) * (state.phi_eps * shrink)[None, :]
        state.beta = sample_matrix_normal_columns(means, cache.ZtZ_inv, shrink, rng)

    if "alpha" not in skip:
        R = state.psi - state.gamma[g]
        if design.q:
            R = R - design.Z @ state.beta
        s_a2 = 1.0 / (state.phi_alpha + cache.ss * state.phi_eps)
        b = state.phi_eps * (s @ R)
        # log of pi s_a phi_alpha^{1/2} exp(b^2 s_a^2 / 2) against log(1 - pi)
        with np.errstate(divide="ignore"):
            log_slab = np.log(state.pi) + 0.5 * np.log(s_a2 * state.phi_alpha) + 0.5 * b * b * s_a2
            log_spike = np.log1p(-state.pi)
        p_incl = 1.0 / (1.0 + np.exp(np.clip(log_spike - log_slab, -700, 700)))
        draw = b * s_a2 + np.sqrt(s_a2) * rng.standard_normal(d)
        state.alpha = np.where(rng.random(d) < p_incl, draw, 0.0)

    if "pi" not in skip:
        zero = (state.alpha == 0).astype(float)
        state.pi = rng.beta(m + 1 - zero, 1 - m + zero)

    if "gamma" not in skip:
        R = state.psi - _fixed(state, design)
        sums = np.zeros((design.G, d))
        np.add.at(sums, g, R)
        P = np.broadcast_to(state.prec.omega, (design.G, d, d)).copy()
        P[:, np.arange(d), np.arange(d)] += cache.n_l[:, None] * state.phi_eps[None, :]
        state.gamma = sample_mvn_batch(sums * state.phi_eps, P, rng)

    mean_psi = _fixed(state, design) + state.gamma[g]
    if "phi_eps" not in skip:
        eps = state.psi - mean_psi
        state.phi_eps = rng.gamma(config.c0 + n / 2.0, 1.0 / (config.d0 + 0.5 * (eps * eps).sum(axis=0)))

    if "psi" not in skip:
        prec = state.w + state.phi_eps[None, :]
        mean = (state.kappa + state.phi_eps * mean_psi) / prec
        state.psi = mean + rng.standard_normal((n, d)) / np.sqrt(prec)

    if "w" not in skip:
        state.w = sample_pg(state.y_total, state.psi, rng, config.b_exact)

    if "phi_alpha" not in skip:
        nz = state.alpha != 0
        state.phi_alpha = float(
            rng.gamma(config.t + nz.sum() / 2.0, 1.0 / (config.u + 0.5 * (state.alpha**2).sum()))
        )

    if "omega" not in skip:
        glasso_step(state.prec, state.gamma.T @ state.gamma, design.G, rng, config.r, config.s)
    return state


_FIELDS = ("psi", "w", "alpha", "pi", "beta", "gamma", "phi_eps")


def _pack(state: MixedGibbsState):
    out = {k: getattr(state, k) for k in _FIELDS}
    out.update(
        phi_alpha=np.array(state.phi_alpha),
        omega=state.prec.omega,
        tau=state.prec.tau,
        lam=np.array(state.prec.lam),
    )
    return out


def _unpack(flat, state: MixedGibbsState):
    for k in _FIELDS:
        setattr(state, k, flat[k])
    state.phi_alpha = float(flat["phi_alpha"])
    state.prec.omega = flat["omega"]
    state.prec.tau = flat["tau"]
    state.prec.lam = float(flat["lam"])
    return state


@dataclass
class TestReport:
    """Posterior alternative probabilities from spike-and-slab draws of ``alpha``."""

    pmap: np.ndarray
    pjap: float
    alpha_mean: np.ndarray
    sign: np.ndarray
    threshold: float = 0.95

    __test__ = False  # not a pytest class

    @property
    def flagged(self) -> bool:
        return self.pjap >= self.threshold

    def to_dict(self, tree: PhyloTree | None = None):
        out = {
            "pjap": self.pjap,
            "threshold": self.threshold,
            "flagged": self.flagged,
            "nodes": [],
        }
        for a in range(len(self.pmap)):
            node = {
                "node": a,
                "pmap": float(self.pmap[a]),
                "alpha_mean": float(self.alpha_mean[a]),
                "sign": int(self.sign[a]),
            }
            if tree is not None:
                left, right = tree.node_key(a)
                node["left"] = sorted(left)
                node["right"] = sorted(right)
                node["path"] = _path(tree, a)
            out["nodes"].append(node)
        return out


def _path(tree, a):
    steps = []
    while a != 0:
        p = int(tree.parent[a])
        steps.append("L" if tree.children[p, 0] == a else "R")
        a = p
    return "root" + "".join(reversed(steps))


def compute_pmap_pjap(alpha_draws, threshold: float = 0.95) -> TestReport:
    """PMAP per node and PJAP from a ``draws x d`` array of ``alpha``."""
    a = np.asarray(alpha_draws, dtype=float)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValidationError("need at least one draw of alpha")
    nz = a != 0
    mean = a.mean(axis=0)
    return TestReport(
        pmap=nz.mean(axis=0),
        pjap=float(nz.any(axis=1).mean()),
        alpha_mean=mean,
        sign=np.sign(mean).astype(int),
        threshold=threshold,
    )


def fit_mixed(
    table,
    tree: PhyloTree,
    design: MixedDesign,
    config: MixedConfig | None = None,
    run_dir=None,
    resume=False,
    stop_after=None,
    progress=None,
):
    """Run the mixed-model Gibbs sampler; returns ``(PosteriorDraws, TestReport)``.

    Saved arrays: ``alpha``, ``beta`` (draws x q x d), ``phi_alpha``,
    ``phi_eps`` and ``omega``.
    """
    config = config or MixedConfig()
    dec = decompose_counts(table, tree)
    if design.n != dec.n:
        raise ValidationError(f"design has {design.n} samples but the table has {dec.n}")
    rng = rng_stream(config.seed)
    state = init_mixed_state(dec, design, config, rng)
    cache = _Cache(design)

    def record(st):
        return {
            "alpha": st.alpha,
            "beta": st.beta,
            "phi_alpha": st.phi_alpha,
            "phi_eps": st.phi_eps,
            "omega": st.prec.omega,
        }

    fingerprint = (
        io.array_sha256(dec.y_total, dec.y_left, design.s, design.Z, design.g)
        + repr(sorted(asdict(config).items()))
    )
    _, draws, _ = run_chain(
        state,
        lambda st, gen: mixed_sweep(st, design, config, gen, cache),
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
            "model": "mixed",
            "config": asdict(config),
            "labels": list(tree.labels),
            "newick": tree.to_newick(),
            "covariates": design.covariate_names,
        }
    )
    if len(draws) == 0:
        return draws, None
    return draws, compute_pmap_pjap(draws["alpha"], config.threshold)


def sample_mixed_prior(design: MixedDesign, config: MixedConfig, d: int, rng, max_tries=100_000):
    """Exact joint prior draw of all parameters and ``psi`` (for joint-distribution tests)."""
    n = design.n
    m = prior_inclusion(config.p0, d)
    omega = sample_glasso_prior(d, config.lam, rng, max_tries)
    prec = init_precision(d, lam=config.lam, lam_fixed=True, omega=omega)
    gamma = rng.multivariate_normal(np.zeros(d), np.linalg.inv(omega), size=design.G, method="cholesky")
    pi = rng.beta(m, 1 - m, size=d)
    phi_alpha = float(rng.gamma(config.t, 1.0 / config.u))
    slab = rng.standard_normal(d) / np.sqrt(phi_alpha)
    alpha = np.where(rng.random(d) < pi, slab, 0.0)
    beta = np.zeros((design.q, d))
    if design.q:
        cache = _Cache(design)
        beta = sample_matrix_normal_columns(beta, cache.ZtZ_inv, np.full(d, config.c_beta * n), rng)
    phi_eps = rng.gamma(config.c0, 1.0 / config.d0, size=d)
    st = MixedGibbsState(
        psi=np.zeros((n, d)),
        w=np.zeros((n, d)),
        alpha=alpha,
        pi=pi,
        phi_alpha=phi_alpha,
        beta=beta,
        gamma=gamma,
        phi_eps=phi_eps,
        prec=prec,
        kappa=np.zeros((n, d)),
        y_total=np.zeros((n, d), dtype=np.int64),
    )
    st.psi = _fixed(st, design) + gamma[design.g] + rng.standard_normal((n, d)) / np.sqrt(phi_eps)
    return st


def regenerate_counts(state, tree: PhyloTree, totals, rng, b_exact=B_EXACT):
    """Draw counts given ``psi`` and refresh ``kappa``, ``y_total`` and ``w`` in place.

    Shared by both models' joint-distribution tests; ``totals`` are the fixed
    per-sample sequencing depths.
    """
    P = np.exp(tlr_inverse_log(state.psi, tree))
    counts = np.stack([rng.multinomial(int(N), p / p.sum()) for N, p in zip(totals, P)])
    dec = decompose_counts(counts, tree)
    state.y_total = np.asarray(dec.y_total)
    state.kappa = np.asarray(dec.kappa, dtype=float)
    state.w = sample_pg(state.y_total, state.psi, rng, b_exact)
    return counts
