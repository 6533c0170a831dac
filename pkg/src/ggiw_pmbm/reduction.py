"""Post-update reduction: pruning, recycling, MB merging, PPP mixture reduction."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ggiw_pmbm import mathkit as mk
from ggiw_pmbm.ggiw import WeightedGGIW, ggiw_kld_matrix, ggiw_mixture_reduce
from ggiw_pmbm.metrics import Infeasible, hungarian
from ggiw_pmbm.pmbm import BernoulliTrack, GlobalHypothesis, PMBMDensity, PPPIntensity


@dataclass(frozen=True)
class ReductionReport:
    pruned_mass: float = 0.0
    l1_bound: float = 0.0
    recycled_count: int = 0
    merged_pairs: int = 0
    ppp_pruned_mass: float = 0.0

    def __add__(self, other: "ReductionReport") -> "ReductionReport":
        # truncations compose multiplicatively on the retained mass
        kept = (1.0 - self.pruned_mass) * (1.0 - other.pruned_mass)
        return ReductionReport(
            1.0 - kept,
            2.0 * (1.0 - kept),
            self.recycled_count + other.recycled_count,
            self.merged_pairs + other.merged_pairs,
            self.ppp_pruned_mass + other.ppp_pruned_mass,
        )


@dataclass(frozen=True)
class ReductionConfig:
    prune_w: float = 1e-4
    cap: int = 100
    tau_rec: float = 0.1
    merge_dub: float = 0.1
    ppp_prune_w: float = 1e-5
    ppp_merge: float = 0.1
    ppp_cap: int = 200

    def __post_init__(self):
        if not 0.0 <= self.prune_w < 1.0 or self.cap < 1:
            raise ValueError("need 0 <= prune_w < 1 and cap >= 1")
        if not 0.0 <= self.tau_rec < 1.0:
            raise ValueError("tau_rec must lie in [0, 1)")
        if self.merge_dub < 0 or self.ppp_merge < 0 or self.ppp_cap < 1 or self.ppp_prune_w < 0:
            raise ValueError("merge thresholds must be >= 0 and ppp_cap >= 1")


def _renormalize(hyps) -> tuple[GlobalHypothesis, ...]:
    norm = mk.logsumexp([h.log_w for h in hyps])
    return tuple(GlobalHypothesis(h.log_w - norm, h.tracks) for h in hyps)


def prune_hypotheses(pmbm: PMBMDensity, min_logW: float, cap: int):
    hyps = sorted(pmbm.hypotheses, key=lambda h: -h.log_w)
    kept = [h for h in hyps if h.log_w >= min_logW][:cap]
    if not kept:
        # never prune everything: keep the best hypothesis
        kept = hyps[:1]
    pruned = max(0.0, 1.0 - float(np.sum(np.exp([h.log_w for h in kept]))))
    if len(kept) == len(hyps):
        pruned = 0.0
    out = replace(pmbm, hypotheses=_renormalize(kept))
    return out, ReductionReport(pruned_mass=pruned, l1_bound=2.0 * pruned)


def recycle(pmbm: PMBMDensity, tau_rec: float):
    """Move Bernoullis with r < tau_rec into the PPP.

    The PPP gains ``W_j * r * f`` for each recycled track of hypothesis j; a
    track shared by several hypotheses is added once with the summed weight.
    """
    if tau_rec <= 0.0:
        return pmbm, ReductionReport()
    gained: dict[int, list] = {}
    hyps = []
    for h in pmbm.hypotheses:
        keep = []
        for t in h.tracks:
            if t.r < tau_rec:
                entry = gained.setdefault(id(t), [t, 0.0])
                entry[1] += math.exp(h.log_w)
            else:
                keep.append(t)
        hyps.append(GlobalHypothesis(h.log_w, tuple(keep)))
    new = []
    for t, w_sum in gained.values():
        if t.r <= 0.0 or w_sum <= 0.0:
            continue
        base = math.log(w_sum) + math.log(t.r)
        new.extend(WeightedGGIW(base + c.log_w, c.params) for c in t.state)
    ppp = PPPIntensity(pmbm.ppp.components + tuple(new))
    out = replace(pmbm, ppp=ppp, hypotheses=tuple(hyps))
    return out, ReductionReport(recycled_count=len(gained))


def bernoulli_kld_matrix(A, B) -> np.ndarray:
    """Pairwise KLD between Bernoulli tracks: existence term plus r1-weighted state term."""
    r1 = np.array([t.r for t in A])[:, None]
    r2 = np.array([t.r for t in B])[None, :]
    state = ggiw_kld_matrix([t.params for t in A], [t.params for t in B])
    with np.errstate(divide="ignore", invalid="ignore"):
        log_absent = np.log1p(-np.minimum(r1, 1.0)) - np.log1p(-np.minimum(r2, 1.0))
        absent = np.where(r1 < 1.0, (1.0 - r1) * log_absent, 0.0)
        present = np.where(r1 > 0.0, r1 * (np.log(r1) - np.log(r2)), 0.0)
        total = absent + present + np.where(r1 > 0.0, r1 * state, 0.0)
    total = np.where(np.isnan(total), np.inf, total)
    # identical objects have zero divergence regardless of round-off
    if A is B:
        np.fill_diagonal(total, 0.0)
    else:
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                if a is b:
                    total[i, j] = 0.0
    return np.maximum(total, 0.0)


def mb_kld_upper_bound(light, heavy, K: np.ndarray | None = None) -> float:
    """Assignment-minimized sum of Bernoulli KLDs between two equal-size MBs."""
    if len(light) != len(heavy):
        return math.inf
    if not light:
        return 0.0
    if K is None:
        K = bernoulli_kld_matrix(light, heavy)
    try:
        _, cost = hungarian(K)
    except Infeasible:
        return math.inf
    return cost


def merge_hypotheses(pmbm: PMBMDensity, merge_thresh: float):
    """Greedy merge of MBs whose divergence bound is below ``merge_thresh``.

    Hypotheses are visited in descending weight; each absorbs every lighter
    hypothesis of equal track count within the threshold (weights add, the
    heavier member's parameters are kept).
    """
    hyps = sorted(pmbm.hypotheses, key=lambda h: -h.log_w)
    if len(hyps) < 2:
        return pmbm, ReductionReport()

    uniq: dict[int, int] = {}
    tracks: list[BernoulliTrack] = []
    for h in hyps:
        for t in h.tracks:
            if id(t) not in uniq:
                uniq[id(t)] = len(tracks)
                tracks.append(t)
    K = bernoulli_kld_matrix(tracks, tracks) if tracks else np.zeros((0, 0))
    idx = [np.array([uniq[id(t)] for t in h.tracks], dtype=int) for h in hyps]

    merged = [False] * len(hyps)
    out, n_pairs = [], 0
    for i, head in enumerate(hyps):
        if merged[i]:
            continue
        weights = [head.log_w]
        for j in range(i + 1, len(hyps)):
            if merged[j] or len(idx[j]) != len(idx[i]):
                continue
            if len(idx[i]) == 0:
                d = 0.0
            else:
                sub = K[np.ix_(idx[j], idx[i])]
                # cheap lower bound before solving the assignment
                if sub.min(axis=1).sum() >= merge_thresh:
                    continue
                d = mb_kld_upper_bound(hyps[j].tracks, head.tracks, sub)
            if d < merge_thresh:
                merged[j] = True
                weights.append(hyps[j].log_w)
                n_pairs += 1
        out.append(GlobalHypothesis(mk.logsumexp(weights), head.tracks))
    res = replace(pmbm, hypotheses=_renormalize(out))
    return res, ReductionReport(merged_pairs=n_pairs)


def reduce_ppp(ppp: PPPIntensity, prune_logw: float, merge_thresh: float, cap: int):
    comps, pruned = ggiw_mixture_reduce(ppp.components, merge_thresh, prune_logw, cap)
    return PPPIntensity(tuple(comps)), pruned


def reduce_density(pmbm: PMBMDensity, config: ReductionConfig = ReductionConfig()):
    """Full reduction pass: prune, recycle, merge MBs, reduce the PPP."""
    log_min = math.log(config.prune_w) if config.prune_w > 0 else -math.inf
    out, rep = prune_hypotheses(pmbm, log_min, config.cap)
    out, r2 = recycle(out, config.tau_rec)
    out, r3 = merge_hypotheses(out, config.merge_dub)
    ppp_log_min = math.log(config.ppp_prune_w) if config.ppp_prune_w > 0 else -math.inf
    ppp, ppp_pruned = reduce_ppp(out.ppp, ppp_log_min, config.ppp_merge, config.ppp_cap)
    out = replace(out, ppp=ppp)
    report = rep + r2 + r3 + ReductionReport(ppp_pruned_mass=ppp_pruned)
    return out, report
