"""Random variate generation for the Gibbs samplers.

Every sampler takes an explicit :class:`numpy.random.Generator`.  Streams are
derived from ``(seed, stream_id)`` through :func:`rng_stream`, so independent
chains or replicates never share a sequence.

Pólya-Gamma draws use an exact alternating-series rejection sampler for
``PG(1, c)`` (Devroye's construction as adapted by Polson, Scott and Windle),
summed ``b`` times for ``b <= B_EXACT``; above that a moment-matched normal
truncated at zero is used.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr

from .errors import DomainError, NumericalError

__all__ = [
    "rng_stream",
    "B_EXACT",
    "pg_mean",
    "pg_var",
    "sample_pg",
    "sample_pg1",
    "sample_inverse_gaussian",
    "sample_gamma",
    "sample_mvn",
    "sample_mvn_batch",
    "sample_matrix_normal_columns",
]

B_EXACT = 200

_TRUNC = 0.64  # switch point between the two proposal pieces
_PI2_8 = np.pi**2 / 8.0


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Generator for substream ``stream_id`` of ``seed``.

    Substreams come from :class:`numpy.random.SeedSequence` spawn keys, which
    gives statistically independent, non-overlapping PCG64 states.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


# -- Pólya-Gamma ------------------------------------------------------------


def pg_mean(b, c):
    """Mean of PG(b, c): ``b tanh(c/2) / (2c)``, with limit ``b/4`` at ``c = 0``."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-4
    cs = np.where(small, 1.0, c)
    out = np.where(small, 0.25 - c**2 / 48.0, np.tanh(cs / 2) / (2 * cs))
    return b * out


def pg_var(b, c):
    """Variance of PG(b, c): ``b (sinh c - c) / (4 c^3 cosh^2(c/2))``, limit ``b/24``."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-2
    cs = np.where(small, 1.0, c)
    # sinh(c) / cosh^2(c/2) = 2 tanh(c/2), which avoids overflow for large c
    sech2 = 1.0 / np.cosh(np.minimum(cs / 2, 350.0)) ** 2
    full = (2 * np.tanh(cs / 2) - cs * sech2) / (4 * cs**3)
    series = 1.0 / 24.0 - c**2 / 120.0
    return b * np.where(small, series, full)


def _a_coef(n, x):
    """n-th term of the alternating series for the Jacobi density at ``x``."""
    k = n + 0.5
    out = np.empty_like(x)
    lo = x <= _TRUNC
    xl = x[lo]
    out[lo] = np.pi * k * (2.0 / (np.pi * xl)) ** 1.5 * np.exp(-2.0 * k * k / xl)
    xh = x[~lo]
    out[~lo] = np.pi * k * np.exp(-k * k * np.pi**2 * xh / 2.0)
    return out


def _trunc_ig(z, rng):
    """Inverse-Gaussian(1/z, 1) truncated to ``(0, _TRUNC)``; one draw per ``z``."""
    t = _TRUNC
    out = np.empty_like(z)
    todo = np.arange(z.size)
    while todo.size:
        zz = z[todo]
        mu = np.where(zz > 0, 1.0 / np.maximum(zz, 1e-300), np.inf)
        x = np.empty_like(zz)
        a = mu > t
        # mu > t: chi-square style proposal, accept with exp(-z^2 x / 2)
        if a.any():
            m = int(a.sum())
            e1 = rng.standard_exponential(m)
            e2 = rng.standard_exponential(m)
            bad = e1 * e1 > 2 * e2 / t
            while bad.any():
                k = int(bad.sum())
                e1[bad] = rng.standard_exponential(k)
                e2[bad] = rng.standard_exponential(k)
                bad = e1 * e1 > 2 * e2 / t
            xa = t / (1.0 + t * e1) ** 2
            alpha = np.exp(-0.5 * zz[a] ** 2 * xa)
            xa[rng.random(m) > alpha] = np.nan
            x[a] = xa
        # mu <= t: untruncated IG draw, keep if below t
        if (~a).any():
            m = int((~a).sum())
            mb = mu[~a]
            y = rng.standard_normal(m) ** 2
            xb = mb + 0.5 * mb * mb * y - 0.5 * mb * np.sqrt(4 * mb * y + (mb * y) ** 2)
            flip = rng.random(m) > mb / (mb + xb)
            xb[flip] = mb[flip] ** 2 / xb[flip]
            xb[xb > t] = np.nan
            x[~a] = xb
        ok = ~np.isnan(x)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def sample_pg1(c, rng):
    """Exact draws from PG(1, c), one per element of ``c``."""
    c = np.asarray(c, dtype=float)
    shape = c.shape
    z = 0.5 * np.abs(c.ravel())
    t = _TRUNC
    K = _PI2_8 + 0.5 * z * z
    # mixture weights of the exponential tail and the truncated-IG head
    logp = np.log(np.pi / (2 * K)) - K * t
    sq = np.sqrt(1.0 / t)
    lq = np.log(2.0) - z + np.logaddexp(
        log_ndtr(sq * (t * z - 1.0)), 2 * z + log_ndtr(-sq * (t * z + 1.0))
    )
    p_tail = 1.0 / (1.0 + np.exp(lq - logp))

    out = np.empty_like(z)
    todo = np.arange(z.size)
    while todo.size:
        m = todo.size
        zz, KK = z[todo], K[todo]
        tail = rng.random(m) < p_tail[todo]
        x = np.empty(m)
        x[tail] = t + rng.standard_exponential(int(tail.sum())) / KK[tail]
        if (~tail).any():
            x[~tail] = _trunc_ig(zz[~tail], rng)
        s = _a_coef(0, x)
        y = rng.random(m) * s
        accepted = np.zeros(m, dtype=bool)
        active = np.ones(m, dtype=bool)
        n = 0
        while active.any():
            n += 1
            idx = np.flatnonzero(active)
            an = _a_coef(n, x[idx])
            if n % 2:
                s[idx] -= an
                hit = y[idx] <= s[idx]
                accepted[idx[hit]] = True
                active[idx[hit]] = False
            else:
                s[idx] += an
                miss = y[idx] > s[idx]
                active[idx[miss]] = False
        out[todo[accepted]] = 0.25 * x[accepted]
        todo = todo[~accepted]
    return out.reshape(shape)


def sample_pg(b, c, rng, b_exact: int = B_EXACT):
    """Draw ``PG(b, c)`` elementwise for integer ``b >= 0``.

    ``b = 0`` gives exactly 0; ``1 <= b <= b_exact`` sums ``b`` exact
    ``PG(1, c)`` draws; larger ``b`` uses a normal with the exact PG mean and
    variance, truncated at 0.
    """
    b_arr = np.asarray(b)
    c_arr = np.asarray(c, dtype=float)
    b_arr, c_arr = np.broadcast_arrays(b_arr, c_arr)
    if np.any(b_arr < 0):
        raise DomainError("PG shape b must be nonnegative")
    if np.any(b_arr != np.floor(b_arr)):
        raise DomainError("PG shape b must be an integer")
    if not np.all(np.isfinite(c_arr)):
        raise DomainError("PG tilt c must be finite")
    bf = b_arr.ravel().astype(np.int64)
    cf = c_arr.ravel()
    out = np.zeros(bf.size)

    exact = np.flatnonzero((bf > 0) & (bf <= b_exact))
    if exact.size:
        reps = bf[exact]
        draws = sample_pg1(np.repeat(cf[exact], reps), rng)
        starts = np.concatenate([[0], np.cumsum(reps)[:-1]])
        out[exact] = np.add.reduceat(draws, starts)

    approx = np.flatnonzero(bf > b_exact)
    if approx.size:
        mean = pg_mean(bf[approx], cf[approx])
        sd = np.sqrt(pg_var(bf[approx], cf[approx]))
        out[approx] = np.maximum(mean + sd * rng.standard_normal(approx.size), 0.0)

    if np.ndim(b) == 0 and np.ndim(c) == 0:
        return float(out[0])
    return out.reshape(b_arr.shape)


# -- other univariate families -----------------------------------------------


def sample_inverse_gaussian(mean, shape, rng):
    """Inverse-Gaussian draws by the Michael-Schucany-Haas transformation.

    A transformed chi-square root is accepted or replaced by ``mean^2 / x``
    with probability ``mean / (mean + x)``.  ``mean`` may be ``inf``, in which
    case the limiting Lévy draw ``shape / chi2_1`` is returned.
    """
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    mean, shape = np.broadcast_arrays(mean, shape)
    if np.any(~(mean > 0)) or np.any(~(shape > 0)):
        raise DomainError("inverse-Gaussian parameters must be positive")
    y = rng.standard_normal(mean.shape) ** 2
    u = rng.random(mean.shape)
    inf = np.isinf(mean)
    m = np.where(inf, 1.0, mean)
    my = m * y
    # x = m + m^2 y/(2 s) - m/(2 s) sqrt(4 m s y + m^2 y^2), written to avoid cancellation
    root = np.sqrt(4 * m * shape * y + my * my)
    x = m * (2 * shape) / (2 * shape + my + root)
    x = np.where(u > m / (m + x), m * m / x, x)
    x = np.where(inf, shape / np.maximum(y, 1e-300), x)
    # chi-square draws of exactly zero would give x = 0 or inf; both have measure zero
    x = np.clip(x, np.finfo(float).tiny, np.finfo(float).max)
    return float(x) if x.ndim == 0 else x


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draws in the shape/rate parameterization used throughout."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)):
        raise DomainError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / rate, size=size)


# -- multivariate normals ----------------------------------------------------


def _cholesky(mat, what):
    mat = np.asarray(mat, dtype=float)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    d = mat.shape[-1]
    jitter = 1e-10 * np.trace(mat, axis1=-2, axis2=-1) / d
    try:
        return np.linalg.cholesky(mat + np.multiply.outer(jitter, np.eye(d)))
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite (jitter retry failed)") from None


def sample_mvn(mean, rng, precision=None, cov=None):
    """One MVN draw given either a precision or a covariance matrix.

    With a precision ``P = L L^T`` the draw is ``mean + L^{-T} z``, obtained
    by a triangular solve; nothing is inverted.  If the Cholesky factorization
    fails, ``1e-10 * trace / d`` is added to the diagonal once before giving up.
    """
    mean = np.asarray(mean, dtype=float)
    z = rng.standard_normal(mean.shape[0])
    if (precision is None) == (cov is None):
        raise ValueError("give exactly one of precision or cov")
    if precision is not None:
        L = _cholesky(precision, "precision matrix")
        return mean + solve_triangular(L, z, lower=True, trans="T")
    L = _cholesky(cov, "covariance matrix")
    return mean + L @ z


def sample_mvn_batch(linear, precision, rng):
    """Draws ``x_i ~ MVN(P_i^{-1} h_i, P_i^{-1})`` for a stack of precisions.

    This is the canonical (information) form used by the Gibbs conditionals:
    ``linear`` has shape ``(n, d)``, ``precision`` has shape ``(n, d, d)``.
    """
    L = _cholesky(precision, "conditional precision")
    h = np.asarray(linear, dtype=float)[..., None]
    z = rng.standard_normal(h.shape)
    # P^{-1} h = L^{-T} L^{-1} h ; noise L^{-T} z
    Lt = np.swapaxes(L, -1, -2)
    v = np.linalg.solve(L, h)
    return np.linalg.solve(Lt, v + z)[..., 0]


def sample_matrix_normal_columns(col_means, row_cov_factor, col_scales, rng):
    """Matrix normal with independent columns.

    Column ``a`` is drawn from ``MVN(col_means[:, a], col_scales[a] * R)``
    where ``R = row_cov_factor`` (for example ``(Z^T Z)^{-1}``).  Returns a
    ``q x d`` array.
    """
    M = np.asarray(col_means, dtype=float)
    scales = np.asarray(col_scales, dtype=float)
    if np.any(~(scales > 0)):
        raise DomainError("column scales must be positive")
    L = _cholesky(row_cov_factor, "row covariance")
    z = rng.standard_normal(M.shape)
    return M + (L @ z) * np.sqrt(scales)[None, :]
