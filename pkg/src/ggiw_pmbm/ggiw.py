"""Gamma Gaussian inverse-Wishart (GGIW) single extended target density.

A GGIW density is the product

    Gam(gamma; alpha, beta) * N(xi; m, P) * IW(X; v, V)

of a gamma density on the Poisson measurement rate, a Gaussian on the
kinematic state and an inverse-Wishart on the d x d extent matrix. The
inverse-Wishart uses the random matrix parametrization where the mean extent
is ``V / (v - 2d - 2)``; in the usual (nu, Psi) notation nu = v - d - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import digamma, gammaln

from ggiw_pmbm import mathkit as mk

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GGIWParams:
    alpha: float
    beta: float
    m: np.ndarray
    P: np.ndarray
    v: float
    V: np.ndarray

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def nx(self) -> int:
        return self.m.shape[0]

    def validate(self) -> None:
        d = self.d
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("gamma parameters must be positive")
        if not self.v > 2 * d + 2:
            raise ValueError(f"v must exceed 2d+2={2 * d + 2}, got {self.v}")
        if not np.allclose(self.P, self.P.T, rtol=1e-10, atol=1e-12):
            raise ValueError("P is not symmetric")
        w = np.linalg.eigvalsh(mk.symmetrize(self.P))
        if w.min() < -1e-10 * max(w.sum(), 1e-300):
            raise ValueError("P is not positive semi-definite")
        mk.chol_psd(self.V)

    def with_beta(self, beta: float) -> "GGIWParams":
        return replace(self, beta=beta)

    def same_as(self, other: "GGIWParams") -> bool:
        return (
            self.alpha == other.alpha
            and self.beta == other.beta
            and self.v == other.v
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.P, other.P)
            and np.array_equal(self.V, other.V)
        )


@dataclass(frozen=True)
class WeightedGGIW:
    log_w: float
    params: GGIWParams


@dataclass(frozen=True)
class MotionModel:
    """Constant velocity kinematics with extent and rate forgetting.

    ``eta`` divides both gamma parameters on prediction (mean rate kept,
    variance inflated). ``tau`` controls how fast the extent degrees of
    freedom decay toward ``2d + 2``.
    """

    Ts: float = 1.0
    sigma_a: float = 0.1
    tau: float = 5.0
    eta: float = 1.25

    def __post_init__(self):
        if self.Ts < 0 or self.tau <= 0 or self.eta < 1:
            raise ValueError("invalid motion model parameters")

    @property
    def F(self) -> np.ndarray:
        T = self.Ts
        I2 = np.eye(2)
        return np.block([[I2, T * I2], [np.zeros((2, 2)), I2]])

    @property
    def Q(self) -> np.ndarray:
        T = self.Ts
        G = np.vstack([0.5 * T**2 * np.eye(2), T * np.eye(2)])
        return self.sigma_a**2 * G @ G.T

    @property
    def forgetting(self) -> float:
        return math.exp(-self.Ts / self.tau)


DetectionFn = Union[float, Callable[[np.ndarray], float]]


def _default_H() -> np.ndarray:
    return np.hstack([np.eye(2), np.zeros((2, 2))])


@dataclass(frozen=True)
class SensorModel:
    """Clutter, detection, survival and association gate parameters.

    ``p_D`` is either a constant or any callable mapping a position (2,) to
    a detection probability, e.g. a grid-backed detection field.
    """

    clutter_rate: float = 10.0
    area: float = 200.0 * 200.0
    p_D: DetectionFn = 0.9
    p_S: float = 0.99
    gate_prob: float = 0.999
    H: np.ndarray = field(default_factory=_default_H)

    def __post_init__(self):
        if self.clutter_rate < 0 or self.area <= 0:
            raise ValueError("clutter rate must be >= 0 and area > 0")
        if not 0.0 < self.p_S <= 1.0:
            raise ValueError("p_S must lie in (0, 1]")
        if not callable(self.p_D) and not 0.0 <= self.p_D <= 1.0:
            raise ValueError("p_D must lie in [0, 1]")

    @property
    def log_kappa(self) -> float:
        """Log clutter intensity lambda / A (uniform clutter)."""
        if self.clutter_rate == 0:
            return -math.inf
        return math.log(self.clutter_rate / self.area)

    def pd_at(self, position: np.ndarray) -> float:
        if callable(self.p_D):
            return float(self.p_D(position))
        return float(self.p_D)

    def with_detection(self, p_D: DetectionFn) -> "SensorModel":
        return replace(self, p_D=p_D)


# --------------------------------------------------------------------------
# prediction and update
# --------------------------------------------------------------------------


def ggiw_predict(zeta: GGIWParams, model: MotionModel) -> GGIWParams:
    F = model.F
    e = model.forgetting
    d = zeta.d
    return GGIWParams(
        alpha=zeta.alpha / model.eta,
        beta=zeta.beta / model.eta,
        m=F @ zeta.m,
        P=mk.symmetrize(F @ zeta.P @ F.T + model.Q),
        v=2 * d + 2 + e * (zeta.v - 2 * d - 2),
        V=e * zeta.V,
    )


def expected_extent(zeta: GGIWParams) -> np.ndarray:
    return zeta.V / (zeta.v - 2 * zeta.d - 2)


def expected_values(zeta: GGIWParams) -> tuple[float, np.ndarray, np.ndarray]:
    """(expected rate, kinematic mean, expected extent)."""
    return zeta.alpha / zeta.beta, zeta.m, expected_extent(zeta)


def ggiw_update(
    zeta_plus: GGIWParams, W: np.ndarray, H: np.ndarray
) -> tuple[GGIWParams, float]:
    """Bayes update with a non-empty detection set ``W`` of shape (n, d).

    Returns the updated parameters and the log predicted likelihood. The
    likelihood is evaluated in log domain throughout.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    n = W.shape[0]
    if n == 0:
        raise ValueError("ggiw_update needs at least one detection")
    d = zeta_plus.d
    zbar = W.mean(axis=0)
    dev = W - zbar
    Z = dev.T @ dev
    Xhat = expected_extent(zeta_plus)
    eps = zbar - H @ zeta_plus.m
    PHt = zeta_plus.P @ H.T
    S = mk.symmetrize(H @ PHt + Xhat / n)
    if d == 2:
        S_inv, logdet_S = mk.inv_logdet_spd2(S)
        a = mk.sqrtm_spd2(Xhat) @ (mk.inv_sqrtm_spd2(S) @ eps)
        logdet_X = mk.inv_logdet_spd2(Xhat)[1]
    else:
        Ls = mk.chol_psd(S)
        S_inv = mk.solve_chol(Ls, np.eye(d))
        logdet_S = mk.logdet_chol(Ls)
        a = mk.sqrtm_psd(Xhat) @ mk.inv_sqrtm_pd(S) @ eps
        logdet_X = mk.logdet_pd(Xhat)
    K = PHt @ S_inv
    N = np.outer(a, a)

    alpha = zeta_plus.alpha + n
    beta = zeta_plus.beta + 1.0
    v = zeta_plus.v + n
    V = mk.symmetrize(zeta_plus.V + N + Z)
    zeta = GGIWParams(
        alpha=alpha,
        beta=beta,
        m=zeta_plus.m + K @ eps,
        P=mk.symmetrize(zeta_plus.P - K @ PHt.T),
        v=v,
        V=V,
    )

    logdet = mk.logdet_spd2 if d == 2 else mk.logdet_pd
    log_l = (
        -0.5 * d * (n * math.log(math.pi) + math.log(n))
        + 0.5 * (zeta_plus.v - d - 1) * logdet(zeta_plus.V)
        - 0.5 * (v - d - 1) * logdet(V)
        + mk.ln_multigamma(d, 0.5 * (v - d - 1))
        - mk.ln_multigamma(d, 0.5 * (zeta_plus.v - d - 1))
        + 0.5 * logdet_X
        - 0.5 * logdet_S
        + math.lgamma(alpha)
        - math.lgamma(zeta_plus.alpha)
        + zeta_plus.alpha * math.log(zeta_plus.beta)
        - alpha * math.log(beta)
    )
    return zeta, float(log_l)


def neg_detection_factors(
    zeta: GGIWParams, pD: float
) -> tuple[float, list[WeightedGGIW]]:
    """Effective missed-detection probability and its two GGIW branches.

    Branch one is "not detected" and keeps ``zeta``; branch two is
    "detected but zero measurements" and increments beta. Branch weights are
    normalized to sum to one.
    """
    log_zero_meas = zeta.alpha * math.log(zeta.beta / (zeta.beta + 1.0))
    l1 = math.log1p(-pD) if pD < 1.0 else -math.inf
    l2 = math.log(pD) + log_zero_meas if pD > 0.0 else -math.inf
    log_q = float(np.logaddexp(l1, l2))
    branches = [
        WeightedGGIW(l1 - log_q, zeta),
        WeightedGGIW(l2 - log_q, zeta.with_beta(zeta.beta + 1.0)),
    ]
    return math.exp(log_q), branches


def log_neg_detection(zeta: GGIWParams, pD: float) -> float:
    l1 = math.log1p(-pD) if pD < 1.0 else -math.inf
    l2 = math.log(pD) + zeta.alpha * math.log(zeta.beta / (zeta.beta + 1.0)) if pD > 0 else -math.inf
    return float(np.logaddexp(l1, l2))


def gamma_mixture_reduce(branches: Sequence[tuple[float, float, float]]) -> tuple[float, float]:
    """Moment-match a gamma mixture [(weight, alpha, beta), ...] by one gamma."""
    w = np.array([b[0] for b in branches], dtype=float)
    a = np.array([b[1] for b in branches], dtype=float)
    b = np.array([b[2] for b in branches], dtype=float)
    keep = w > 0
    w, a, b = w[keep] / w[keep].sum(), a[keep], b[keep]
    if len(w) == 1:
        return float(a[0]), float(b[0])
    means = a / b
    mean = float(np.dot(w, means))
    var = float(np.dot(w, a / b**2) + np.dot(w, (means - mean) ** 2))
    return mean**2 / var, mean / var


def collapse_gamma_branches(branches: Sequence[WeightedGGIW]) -> GGIWParams:
    """Merge GGIW branches that differ only in their gamma parameters."""
    alpha, beta = gamma_mixture_reduce(
        [(math.exp(c.log_w), c.params.alpha, c.params.beta) for c in branches]
    )
    base = max(branches, key=lambda c: c.log_w).params
    return replace(base, alpha=alpha, beta=beta)


# --------------------------------------------------------------------------
# densities, likelihoods, sampling (used by oracles and diagnostics)
# --------------------------------------------------------------------------


def gamma_logpdf(g, alpha: float, beta: float):
    g = np.asarray(g, dtype=float)
    return alpha * math.log(beta) - gammaln(alpha) + (alpha - 1) * np.log(g) - beta * g


def iw_logpdf(X: np.ndarray, v: float, V: np.ndarray) -> float:
    d = V.shape[0]
    nu = v - d - 1
    LX = mk.chol_psd(X)
    tr = float(np.trace(mk.solve_chol(LX, V)))
    return (
        0.5 * nu * mk.logdet_pd(V)
        - 0.5 * nu * d * math.log(2.0)
        - mk.ln_multigamma(d, 0.5 * nu)
        - 0.5 * v * mk.logdet_chol(LX)
        - 0.5 * tr
    )


def ggiw_logpdf(zeta: GGIWParams, gamma: float, xi: np.ndarray, X: np.ndarray) -> float:
    return float(
        gamma_logpdf(gamma, zeta.alpha, zeta.beta)
        + mk.normal_logpdf(xi, zeta.m, zeta.P)[0]
        + iw_logpdf(X, zeta.v, zeta.V)
    )


def log_meas_likelihood(
    W: np.ndarray, gamma: float, xi: np.ndarray, X: np.ndarray, H: np.ndarray, pD: float = 1.0
) -> float:
    """Log of pD * exp(-gamma) * prod_z gamma * N(z; H xi, X)."""
    W = np.atleast_2d(W)
    lp = math.log(pD) if pD > 0 else -math.inf
    return float(
        lp - gamma + W.shape[0] * math.log(gamma) + np.sum(mk.normal_logpdf(W, H @ xi, X))
    )


def ggiw_sample(zeta: GGIWParams, rng: np.random.Generator, size: int):
    """Draw (gamma, xi, X) samples; returns arrays of shape (n,), (n, nx), (n, d, d)."""
    from scipy.stats import invwishart

    g = rng.gamma(zeta.alpha, 1.0 / zeta.beta, size=size)
    xi = rng.multivariate_normal(zeta.m, zeta.P, size=size)
    X = invwishart(df=zeta.v - zeta.d - 1, scale=zeta.V).rvs(size=size, random_state=rng)
    X = np.asarray(X).reshape(size, zeta.d, zeta.d)
    return g, xi, X


# --------------------------------------------------------------------------
# divergence and mixture reduction
# --------------------------------------------------------------------------


def _multidigamma(d: int, x):
    j = np.arange(1, d + 1)
    return np.sum(digamma(np.asarray(x)[..., None] + (1.0 - j) / 2.0), axis=-1)


def _multigammaln(d: int, x):
    j = np.arange(1, d + 1)
    return d * (d - 1) / 4.0 * math.log(math.pi) + np.sum(
        gammaln(np.asarray(x)[..., None] + (1.0 - j) / 2.0), axis=-1
    )


def _stack(params: Sequence[GGIWParams]):
    return (
        np.array([p.alpha for p in params]),
        np.array([p.beta for p in params]),
        np.array([p.m for p in params]),
        mk.symmetrize(np.array([p.P for p in params])),
        np.array([p.v for p in params]),
        mk.symmetrize(np.array([p.V for p in params])),
    )


def ggiw_kld_matrix(A: Sequence[GGIWParams], B: Sequence[GGIWParams]) -> np.ndarray:
    """KL(A[i] || B[j]) for all pairs, shape (len(A), len(B)).

    The GGIW density factorizes, so the divergence is the sum of the gamma,
    Gaussian and inverse-Wishart divergences.
    """
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    a1, b1, m1, P1, v1, V1 = _stack(A)
    a2, b2, m2, P2, v2, V2 = _stack(B)
    d = V1.shape[-1]
    nx = m1.shape[-1]

    A1, A2 = a1[:, None], a2[None, :]
    B1, B2 = b1[:, None], b2[None, :]
    kl_gam = (
        (A1 - A2) * digamma(A1)
        - gammaln(A1)
        + gammaln(A2)
        + A2 * (np.log(B1) - np.log(B2))
        + A1 * (B2 - B1) / B1
    )

    L1 = np.linalg.cholesky(P1)
    L2 = np.linalg.cholesky(P2)
    ld1 = 2 * np.sum(np.log(np.diagonal(L1, axis1=1, axis2=2)), axis=1)
    ld2 = 2 * np.sum(np.log(np.diagonal(L2, axis1=1, axis2=2)), axis=1)
    P2inv = np.linalg.solve(
        np.swapaxes(L2, 1, 2), np.linalg.solve(L2, np.broadcast_to(np.eye(nx), P2.shape))
    )
    tr = np.einsum("jab,iba->ij", P2inv, P1)
    diff = m1[:, None, :] - m2[None, :, :]
    maha = np.einsum("ija,jab,ijb->ij", diff, P2inv, diff)
    kl_gauss = 0.5 * (tr - nx + maha + ld2[None, :] - ld1[:, None])

    nu1 = (v1 - d - 1)[:, None]
    nu2 = (v2 - d - 1)[None, :]
    C1 = np.linalg.cholesky(V1)
    C2 = np.linalg.cholesky(V2)
    lv1 = 2 * np.sum(np.log(np.diagonal(C1, axis1=1, axis2=2)), axis=1)[:, None]
    lv2 = 2 * np.sum(np.log(np.diagonal(C2, axis1=1, axis2=2)), axis=1)[None, :]
    V1inv = np.linalg.solve(
        np.swapaxes(C1, 1, 2), np.linalg.solve(C1, np.broadcast_to(np.eye(d), V1.shape))
    )
    tr_iw = np.einsum("jab,iba->ij", V2, V1inv)
    kl_iw = (
        0.5 * (nu1 - nu2) * _multidigamma(d, nu1 / 2.0)
        + 0.5 * nu2 * (lv1 - lv2)
        - 0.5 * nu1 * d
        + 0.5 * nu1 * tr_iw
        + _multigammaln(d, nu2 / 2.0)
        - _multigammaln(d, nu1 / 2.0)
    )
    out = kl_gam + kl_gauss + kl_iw
    return np.maximum(out, 0.0)


def ggiw_kld(a: GGIWParams, b: GGIWParams) -> float:
    if a is b:
        return 0.0
    return float(ggiw_kld_matrix([a], [b])[0, 0])


def ggiw_mixture_reduce(
    mix: Sequence[WeightedGGIW],
    merge_thresh: float,
    prune_logw: float,
    cap: int,
) -> tuple[list[WeightedGGIW], float]:
    """Prune, greedily merge and cap a weighted GGIW mixture.

    Components are visited heaviest first; every remaining component whose
    divergence to the current head is below ``merge_thresh`` is absorbed
    into it (weights add, the head keeps its parameters). Returns the reduced
    mixture and the pruned weight mass (including mass removed by ``cap``).
    """
    kept = [c for c in mix if c.log_w >= prune_logw]
    pruned = float(sum(math.exp(c.log_w) for c in mix if c.log_w < prune_logw))
    kept.sort(key=lambda c: -c.log_w)

    out: list[WeightedGGIW] = []
    remaining = kept
    while remaining:
        head, rest = remaining[0], remaining[1:]
        if not rest:
            out.append(head)
            break
        close = _close_to(head.params, [c.params for c in rest], merge_thresh)
        merged = [head.log_w] + [c.log_w for c, hit in zip(rest, close) if hit]
        out.append(WeightedGGIW(mk.logsumexp(merged), head.params))
        remaining = [c for c, hit in zip(rest, close) if not hit]

    out.sort(key=lambda c: -c.log_w)
    if len(out) > cap:
        pruned += float(sum(math.exp(c.log_w) for c in out[cap:]))
        out = out[:cap]
    return out, pruned


def _close_to(head: GGIWParams, others: list[GGIWParams], thresh: float) -> np.ndarray:
    # the Gaussian mean term alone lower-bounds the full divergence
    m = np.array([o.m for o in others])
    diff = m - head.m
    Phead_inv = mk.inv_pd(head.P)
    lower = 0.5 * np.einsum("ia,ab,ib->i", diff, Phead_inv, diff)
    hit = np.zeros(len(others), dtype=bool)
    cand = np.flatnonzero(lower < thresh)
    if cand.size:
        kl = ggiw_kld_matrix([others[i] for i in cand], [head])[:, 0]
        hit[cand] = kl < thresh
    return hit
