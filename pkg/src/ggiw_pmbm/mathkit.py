"""Small dense symmetric-matrix numerics and special functions."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, ndtri

_LOG_PI = math.log(math.pi)


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class NotPositiveSemiDefinite(np.linalg.LinAlgError):
    pass


class DomainError(ValueError):
    pass


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def chol_psd(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    The input is symmetrized first. If the plain factorization fails, a
    single retry with ``1e-12 * trace`` added to the diagonal is made.
    """
    A = symmetrize(np.asarray(M, dtype=float))
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    tr = float(np.trace(A))
    if not tr > 0.0:
        raise NotPositiveDefinite("matrix is not positive definite")
    try:
        return np.linalg.cholesky(A + 1e-12 * tr * np.eye(A.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc


def logdet_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1))


def logdet_pd(M: np.ndarray) -> float:
    return logdet_chol(chol_psd(M))


def solve_chol(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) X = B`` given the lower factor ``L``."""
    Y = np.linalg.solve(L, B)
    return np.linalg.solve(L.T, Y)


def inv_pd(M: np.ndarray) -> np.ndarray:
    L = chol_psd(M)
    return solve_chol(L, np.eye(L.shape[0]))


def sqrtm_psd(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via an eigendecomposition."""
    A = symmetrize(np.asarray(M, dtype=float))
    w, U = np.linalg.eigh(A)
    tol = 1e-10 * max(float(np.trace(A)), 0.0)
    if w.min() < -tol or (w.min() < 0.0 and tol == 0.0):
        raise NotPositiveSemiDefinite(f"eigenvalue {w.min():.3e} below tolerance")
    w = np.clip(w, 0.0, None)
    return symmetrize((U * np.sqrt(w)) @ U.T)


def inv_sqrtm_pd(M: np.ndarray) -> np.ndarray:
    A = symmetrize(np.asarray(M, dtype=float))
    w, U = np.linalg.eigh(A)
    if w.min() <= 0.0:
        raise NotPositiveDefinite("matrix is not positive definite")
    return symmetrize((U / np.sqrt(w)) @ U.T)


def logdet_spd2(M: np.ndarray) -> float:
    """log det of a 2x2 symmetric positive definite matrix."""
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if not (det > 0.0 and M[0, 0] > 0.0):
        raise NotPositiveDefinite("2x2 matrix is not positive definite")
    return math.log(det)


def inv_logdet_spd2(M: np.ndarray) -> tuple[np.ndarray, float]:
    a, b, c = float(M[0, 0]), 0.5 * float(M[0, 1] + M[1, 0]), float(M[1, 1])
    det = a * c - b * b
    if not (det > 0.0 and a > 0.0):
        raise NotPositiveDefinite("2x2 matrix is not positive definite")
    return np.array([[c, -b], [-b, a]]) / det, math.log(det)


def sqrtm_spd2(M: np.ndarray) -> np.ndarray:
    # sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det)) for 2x2 PSD M
    a, b, c = float(M[0, 0]), 0.5 * float(M[0, 1] + M[1, 0]), float(M[1, 1])
    det = a * c - b * b
    if det < -1e-10 * max(a + c, 0.0) or a + c < 0.0:
        raise NotPositiveSemiDefinite("2x2 matrix is not positive semidefinite")
    s = math.sqrt(max(det, 0.0))
    t = math.sqrt(a + c + 2.0 * s)
    if t == 0.0:
        return np.zeros((2, 2))
    return np.array([[a + s, b], [b, c + s]]) / t


def inv_sqrtm_spd2(M: np.ndarray) -> np.ndarray:
    R = sqrtm_spd2(M)
    return inv_logdet_spd2(R)[0]


def ln_multigamma(d: int, x: float) -> float:
    """log of the d-variate gamma function.

    ln Gamma_d(x) = d(d-1)/4 ln(pi) + sum_{j=1}^{d} ln Gamma(x + (1-j)/2)
    """
    if x <= (d - 1) / 2.0:
        raise DomainError(f"ln_multigamma requires x > {(d - 1) / 2.0}, got {x}")
    return d * (d - 1) / 4.0 * _LOG_PI + sum(math.lgamma(x + (1.0 - j) / 2.0) for j in range(1, d + 1))


def logsumexp(a) -> float:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return -math.inf
    mx = float(np.max(a))
    if not math.isfinite(mx):
        return mx
    return mx + math.log(float(np.sum(np.exp(a - mx))))


def normal_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of N(mean, cov) at the rows of ``x``."""
    L = chol_psd(cov)
    diff = np.atleast_2d(x) - mean
    sol = np.linalg.solve(L, diff.T)
    n = mean.shape[0]
    return -0.5 * (np.sum(sol**2, axis=0) + n * math.log(2 * math.pi) + logdet_chol(L))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


def gaussian_rect_mass(mean, cov, lower, upper) -> float:
    """P(lower < Y < upper) for a bivariate normal Y, bounds may be infinite.

    Integrates the conditional probability of the second coordinate over the
    first coordinate in probability space (u = Phi(z1)), which makes the
    integrand smooth on a finite interval.
    """
    mean = np.asarray(mean, dtype=float)
    cov = symmetrize(np.asarray(cov, dtype=float))
    s1 = math.sqrt(cov[0, 0])
    s2 = math.sqrt(cov[1, 1])
    rho = cov[0, 1] / (s1 * s2)
    rho = min(max(rho, -1.0), 1.0)
    u_lo = float(ndtr((lower[0] - mean[0]) / s1))
    u_hi = float(ndtr((upper[0] - mean[0]) / s1))
    if u_hi <= u_lo:
        return 0.0
    a2 = (lower[1] - mean[1]) / s2
    b2 = (upper[1] - mean[1]) / s2
    half = 0.5 * (u_hi - u_lo)
    u = u_lo + half * (_GL_NODES + 1.0)
    z1 = ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))
    sc = math.sqrt(max(1.0 - rho * rho, 0.0))
    if sc == 0.0:
        inside = ((rho * z1 > a2) & (rho * z1 < b2)).astype(float)
        return float(half * np.dot(_GL_WEIGHTS, inside))
    with np.errstate(invalid="ignore"):
        cond = ndtr((b2 - rho * z1) / sc) - ndtr((a2 - rho * z1) / sc)
    return float(half * np.dot(_GL_WEIGHTS, cond))
