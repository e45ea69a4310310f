"""Blocked Gibbs updates for a precision matrix under the graphical Lasso prior.

The double-exponential prior on each off-diagonal entry is written as a
normal scale mixture with latent variances ``tau[j, k]``.  Given ``tau`` the
columns of ``Omega`` are drawn one at a time; given ``Omega`` the ``1/tau``
are inverse-Gaussian; the shrinkage ``lambda`` optionally has a Gamma prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import NumericalError
from .samplers import sample_inverse_gaussian

__all__ = [
    "PrecisionState",
    "init_precision",
    "update_omega",
    "update_tau",
    "update_lambda",
    "glasso_step",
    "sample_glasso_prior",
    "TAU_MEAN_CAP",
]

# Inverse-Gaussian mean cap used when an off-diagonal entry is exactly zero.
TAU_MEAN_CAP = 1e8


@dataclass
class PrecisionState:
    """Current ``Omega``, its scale latents and the shrinkage parameter.

    ``tau`` is stored as a full symmetric matrix with a unit diagonal that is
    never read; only the strict upper triangle is meaningful.
    """

    omega: np.ndarray
    tau: np.ndarray
    lam: float
    lam_fixed: bool = True
    sigma: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.omega.shape[0]

    def copy(self) -> "PrecisionState":
        return replace(
            self,
            omega=self.omega.copy(),
            tau=self.tau.copy(),
            sigma=None if self.sigma is None else self.sigma.copy(),
        )


def init_precision(d, lam=10.0, lam_fixed=True, omega=None) -> PrecisionState:
    omega = np.eye(d) if omega is None else np.array(omega, dtype=float)
    return PrecisionState(omega=omega, tau=np.ones((d, d)), lam=float(lam), lam_fixed=lam_fixed)


def _inverse(omega):
    try:
        c = cho_factor(omega, lower=True)
    except np.linalg.LinAlgError:
        d = omega.shape[0]
        try:
            c = cho_factor(omega + 1e-10 * np.trace(omega) / d * np.eye(d), lower=True)
        except np.linalg.LinAlgError:
            raise NumericalError("Omega lost positive definiteness") from None
    inv = cho_solve(c, np.eye(omega.shape[0]))
    return 0.5 * (inv + inv.T)


def update_omega(state: PrecisionState, S, n, rng) -> PrecisionState:
    """Column-wise update of ``Omega`` given ``tau``, ``lambda`` and the scatter ``S``.

    For column ``j``: ``gamma ~ Gamma(n/2 + 1, rate=(S_jj + lambda)/2)``,
    ``beta ~ MVN(-C S_{-j,j}, C)`` with
    ``C = ((S_jj + lambda) Omega_{-j,-j}^{-1} + diag(1/tau_{-j,j}))^{-1}``, then
    ``Omega_{-j,j} = beta`` and ``Omega_jj = gamma + beta' Omega_{-j,-j}^{-1} beta``.
    ``Omega^{-1}`` is refreshed from scratch once per call and then kept
    current with rank-one corrections, so each column costs ``O(d^2)`` plus a
    ``(d-1)``-dimensional Cholesky factorization.
    """
    S = np.asarray(S, dtype=float)
    omega = state.omega
    d = omega.shape[0]
    lam = state.lam
    shape = n / 2.0 + 1.0
    if d == 1:
        omega[0, 0] = rng.gamma(shape, 2.0 / (S[0, 0] + lam))
        state.sigma = 1.0 / omega
        return state

    sigma = _inverse(omega)
    idx_all = np.arange(d)
    for j in range(d):
        idx = idx_all[idx_all != j]
        sig12 = sigma[idx, j]
        inv11 = sigma[np.ix_(idx, idx)] - np.outer(sig12, sig12) / sigma[j, j]
        scale = S[j, j] + lam
        prec = scale * inv11
        prec[np.diag_indices_from(prec)] += 1.0 / state.tau[idx, j]
        prec = 0.5 * (prec + prec.T)
        try:
            L = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            raise NumericalError(f"column {j} conditional precision not positive definite") from None
        rhs = -S[idx, j]
        mean = cho_solve((L, True), rhs)
        beta = mean + solve_triangular(L, rng.standard_normal(d - 1), lower=True, trans="T")
        gam = rng.gamma(shape, 2.0 / scale)

        omega[idx, j] = beta
        omega[j, idx] = beta
        w = inv11 @ beta
        omega[j, j] = gam + beta @ w

        sigma[np.ix_(idx, idx)] = inv11 + np.outer(w, w) / gam
        sigma[idx, j] = -w / gam
        sigma[j, idx] = -w / gam
        sigma[j, j] = 1.0 / gam
    state.sigma = sigma
    return state


def update_tau(state: PrecisionState, rng) -> PrecisionState:
    """Refresh the scale latents: ``1/tau_jk ~ IG(lambda/|omega_jk|, lambda^2)``."""
    d = state.d
    if d == 1:
        return state
    iu = np.triu_indices(d, 1)
    w = np.abs(state.omega[iu])
    lam = state.lam
    with np.errstate(divide="ignore"):
        mean = np.where(w > 0, lam / w, TAU_MEAN_CAP)
    mean = np.minimum(mean, TAU_MEAN_CAP)
    u = sample_inverse_gaussian(mean, np.full(mean.shape, lam * lam), rng)
    tau = state.tau
    tau[iu] = 1.0 / u
    tau[iu[1], iu[0]] = tau[iu]
    return state


def update_lambda(state: PrecisionState, r, s, rng) -> PrecisionState:
    """``lambda ~ Gamma(r + d(d+1)/2, rate = s + sum_jk |omega_jk| / 2)``; no-op if fixed."""
    if state.lam_fixed:
        return state
    d = state.d
    shape = r + d * (d + 1) / 2.0
    rate = s + 0.5 * np.abs(state.omega).sum()
    state.lam = float(rng.gamma(shape, 1.0 / rate))
    return state


def glasso_step(state: PrecisionState, S, n, rng, r=1.0, s=0.01) -> PrecisionState:
    """One full sweep: ``Omega | tau, lambda``, then ``lambda | Omega``, then ``tau | Omega, lambda``.

    ``lambda`` is drawn from its conditional with ``tau`` integrated out, so it
    must precede the ``tau`` refresh for the sweep to leave the joint posterior
    invariant.
    """
    update_omega(state, S, n, rng)
    update_lambda(state, r, s, rng)
    update_tau(state, rng)
    return state


def sample_glasso_prior(d, lam, rng, max_tries=100_000):
    """Exact draw from the graphical Lasso prior by rejection (small ``d`` only).

    Off-diagonals are Laplace(``1/lam``), diagonals Exponential(rate ``lam/2``);
    the candidate is kept when it is positive definite.
    """
    iu = np.triu_indices(d, 1)
    for _ in range(max_tries):
        om = np.zeros((d, d))
        om[iu] = rng.laplace(0.0, 1.0 / lam, size=len(iu[0]))
        om = om + om.T
        om[np.diag_indices(d)] = rng.exponential(2.0 / lam, size=d)
        if np.linalg.eigvalsh(om)[0] > 0:
            return om
    raise NumericalError("glasso prior rejection sampler did not accept")
