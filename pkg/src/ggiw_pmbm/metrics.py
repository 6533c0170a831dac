"""Optimal assignment, Gaussian Wasserstein base distance and GOSPA."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ggiw_pmbm import mathkit as mk


class Infeasible(RuntimeError):
    """No assignment with finite total cost exists."""


def hungarian(costs) -> tuple[tuple[int, ...], float]:
    """Minimum-cost assignment of every row to a distinct column.

    Accepts square or wide (rows <= columns) matrices; ``inf`` marks a
    forbidden pair. The returned total is the row-ordered sum of the chosen
    entries.
    """
    C = np.asarray(costs, dtype=float)
    if C.ndim != 2 or C.shape[0] > C.shape[1]:
        raise ValueError(f"need a rows <= cols matrix, got shape {C.shape}")
    n = C.shape[0]
    if n == 0:
        return (), 0.0
    finite = np.isfinite(C)
    if not finite.any(axis=1).all():
        raise Infeasible("a row has no admissible column")
    if finite.all():
        work = C
    else:
        span = float(np.abs(C[finite]).max()) if finite.any() else 0.0
        # any solution using a forbidden entry costs more than every admissible one
        work = np.where(finite, C, (2 * n + 1) * (span + 1.0))
    rows, cols = linear_sum_assignment(work)
    assign = tuple(int(c) for c in cols[np.argsort(rows)])
    chosen = C[np.arange(n), assign]
    if not np.isfinite(chosen).all():
        raise Infeasible("every complete assignment uses a forbidden pair")
    return assign, float(sum(chosen.tolist()))


def gwd(a, b) -> float:
    """Squared Gaussian Wasserstein distance between (position, extent) pairs."""
    pa, Xa = np.asarray(a[0], float)[:2], np.asarray(a[1], float)
    pb, Xb = np.asarray(b[0], float)[:2], np.asarray(b[1], float)
    Ra = mk.sqrtm_psd(Xa)
    cross = mk.sqrtm_psd(Ra @ Xb @ Ra)
    d = float(np.sum((pa - pb) ** 2) + np.trace(Xa + Xb - 2.0 * cross))
    return max(d, 0.0)


@dataclass(frozen=True)
class GospaResult:
    total: float
    localisation: float
    missed: float
    false_: float
    # (truth index, estimate index) pairs that were matched
    pairs: tuple = ()


def gospa(
    truth: Sequence, est: Sequence, c: float = 10.0, p: float = 1.0
) -> GospaResult:
    """GOSPA (alpha = 2) with the Gaussian Wasserstein base distance."""
    if c <= 0 or p < 1:
        raise ValueError("need c > 0 and p >= 1")
    n, m = len(truth), len(est)
    half = c**p / 2.0
    if n == 0 or m == 0:
        missed, false = half * n, half * m
        return GospaResult((missed + false) ** (1 / p), 0.0, missed, false)

    D = np.array([[gwd(t, e) for e in est] for t in truth])
    # padded square problem: dummies absorb unmatched truths and estimates
    big = np.zeros((n + m, n + m))
    big[:n, :m] = np.minimum(D, c) ** p
    big[:n, m:] = half
    big[n:, :m] = half
    assign, _ = hungarian(big)

    pairs = tuple((i, j) for i, j in enumerate(assign[:n]) if j < m and D[i, j] < c)
    loc = float(sum(D[i, j] ** p for i, j in pairs))
    missed = half * (n - len(pairs))
    false = half * (m - len(pairs))
    return GospaResult((loc + missed + false) ** (1 / p), loc, missed, false, pairs)
