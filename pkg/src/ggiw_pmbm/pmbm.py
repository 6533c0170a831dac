"""PMBM density, exact prediction/update recursion and estimate extraction.

The density is a Poisson point process (PPP) of undetected targets times a
multi-Bernoulli mixture (MBM) of detected targets. Every global hypothesis
owns its Bernoulli tracks; tracks are immutable, so unchanged tracks are
shared by reference between hypotheses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import chi2

from ggiw_pmbm import mathkit as mk
from ggiw_pmbm.ggiw import (
    GGIWParams,
    MotionModel,
    SensorModel,
    WeightedGGIW,
    collapse_gamma_branches,
    expected_extent,
    expected_values,
    ggiw_mixture_reduce,
    ggiw_predict,
    ggiw_update,
    neg_detection_factors,
)


class EmptyCell(ValueError):
    pass


class NoAssociations(RuntimeError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BernoulliTrack:
    r: float
    state: tuple[WeightedGGIW, ...]
    track_id: int
    # (scan, measurement index) pairs assigned to this track so far
    history: frozenset = frozenset()

    @property
    def params(self) -> GGIWParams:
        if len(self.state) == 1:
            return self.state[0].params
        return max(self.state, key=lambda c: c.log_w).params


@dataclass(frozen=True)
class PPPIntensity:
    components: tuple[WeightedGGIW, ...] = ()

    @property
    def mass(self) -> float:
        return float(sum(math.exp(c.log_w) for c in self.components))

    def __len__(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class GlobalHypothesis:
    log_w: float
    tracks: tuple[BernoulliTrack, ...] = ()


@dataclass(frozen=True)
class PMBMDensity:
    ppp: PPPIntensity
    hypotheses: tuple[GlobalHypothesis, ...] = (GlobalHypothesis(0.0),)
    scan: int = 0
    next_id: int = 0

    def weights(self) -> np.ndarray:
        return np.exp([h.log_w for h in self.hypotheses])

    def expected_cardinality(self) -> float:
        det = sum(math.exp(h.log_w) * sum(t.r for t in h.tracks) for h in self.hypotheses)
        return self.ppp.mass + det


class Cell(NamedTuple):
    track: Optional[int]
    meas: frozenset


@dataclass(frozen=True)
class Association:
    """A partition of measurement and track indices; one track per cell at most."""

    cells: tuple[Cell, ...]

    def is_valid(self, n_meas: int, track_ids: Sequence[int]) -> bool:
        seen_m: set[int] = set()
        seen_t: set[int] = set()
        for c in self.cells:
            if c.track is None and not c.meas:
                return False
            if c.meas & seen_m:
                return False
            seen_m |= c.meas
            if c.track is not None:
                if c.track in seen_t:
                    return False
                seen_t.add(c.track)
        return seen_m == set(range(n_meas)) and seen_t == set(track_ids)

    def key(self) -> frozenset:
        return frozenset(self.cells)


class Estimate(NamedTuple):
    state: np.ndarray
    extent: np.ndarray
    rate: float


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------


def _predict_track(t: BernoulliTrack, motion: MotionModel, p_S: float) -> BernoulliTrack:
    state = tuple(WeightedGGIW(c.log_w, ggiw_predict(c.params, motion)) for c in t.state)
    return BernoulliTrack(p_S * t.r, state, t.track_id, t.history)


def predict(
    pmbm: PMBMDensity, motion: MotionModel, sensor: SensorModel, birth: PPPIntensity
) -> PMBMDensity:
    log_ps = math.log(sensor.p_S)
    survived = tuple(
        WeightedGGIW(c.log_w + log_ps, ggiw_predict(c.params, motion))
        for c in pmbm.ppp.components
    )
    ppp = PPPIntensity(tuple(birth.components) + survived)
    memo: dict[int, BernoulliTrack] = {}
    hyps = []
    for h in pmbm.hypotheses:
        tracks = []
        for t in h.tracks:
            if id(t) not in memo:
                memo[id(t)] = _predict_track(t, motion, sensor.p_S)
            tracks.append(memo[id(t)])
        hyps.append(GlobalHypothesis(h.log_w, tuple(tracks)))
    return PMBMDensity(ppp, tuple(hyps), pmbm.scan, pmbm.next_id)


# --------------------------------------------------------------------------
# single-cell updates
# --------------------------------------------------------------------------


def _pd(sensor: SensorModel, params: GGIWParams) -> float:
    return sensor.pd_at(sensor.H @ params.m)


def ppp_update_missed(ppp: PPPIntensity, sensor: SensorModel) -> PPPIntensity:
    out = []
    for c in ppp.components:
        q, branches = neg_detection_factors(c.params, _pd(sensor, c.params))
        if q <= 0.0:
            continue
        out.append(WeightedGGIW(c.log_w + math.log(q), collapse_gamma_branches(branches)))
    return PPPIntensity(tuple(out))


def ppp_detect_new(
    ppp: PPPIntensity,
    W: np.ndarray,
    sensor: SensorModel,
    track_id: int = -1,
    components: Optional[Sequence[int]] = None,
) -> tuple[Optional[BernoulliTrack], float]:
    """New Bernoulli for a measurement cell not associated to a detected track.

    ``components`` optionally restricts the PPP components that take part
    (gating); by default every component is used. Returns ``(None, log L)``
    when the cell cannot come from the PPP at all (r = 0).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] == 0:
        raise EmptyCell("cell has no measurements")
    idx = range(len(ppp.components)) if components is None else components
    terms, params = [], []
    for n in idx:
        c = ppp.components[n]
        pd = _pd(sensor, c.params)
        if pd <= 0.0:
            continue
        zeta, log_l = ggiw_update(c.params, W, sensor.H)
        terms.append(c.log_w + math.log(pd) + log_l)
        params.append(zeta)
    log_sum = mk.logsumexp(terms)

    if W.shape[0] == 1:
        log_L = float(np.logaddexp(sensor.log_kappa, log_sum))
        r = math.exp(log_sum - log_L) if math.isfinite(log_L) else 0.0
    else:
        log_L = log_sum
        r = 1.0
    if not math.isfinite(log_sum) or r <= 0.0:
        return None, log_L

    mix = [WeightedGGIW(t - log_sum, p) for t, p in zip(terms, params)]
    reduced, _ = ggiw_mixture_reduce(mix, merge_thresh=0.0, prune_logw=-math.inf, cap=1)
    state = (WeightedGGIW(0.0, reduced[0].params),)
    return BernoulliTrack(r, state, track_id), log_L


def bernoulli_detect(
    track: BernoulliTrack, W: np.ndarray, sensor: SensorModel
) -> tuple[BernoulliTrack, float]:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] == 0:
        raise EmptyCell("cell has no measurements")
    if track.r <= 0.0:
        return track, -math.inf
    terms, params = [], []
    for c in track.state:
        pd = _pd(sensor, c.params)
        if pd <= 0.0:
            continue
        zeta, log_l = ggiw_update(c.params, W, sensor.H)
        terms.append(c.log_w + math.log(pd) + log_l)
        params.append(zeta)
    log_sum = mk.logsumexp(terms)
    if not math.isfinite(log_sum):
        return track, -math.inf
    log_L = math.log(track.r) + log_sum
    if len(params) == 1:
        state = (WeightedGGIW(0.0, params[0]),)
    else:
        mix = [WeightedGGIW(t - log_sum, p) for t, p in zip(terms, params)]
        reduced, _ = ggiw_mixture_reduce(mix, 0.0, -math.inf, 1)
        state = (WeightedGGIW(0.0, reduced[0].params),)
    return BernoulliTrack(1.0, state, track.track_id, track.history), log_L


def bernoulli_missed(
    track: BernoulliTrack, sensor: SensorModel, reduce: bool = True
) -> tuple[BernoulliTrack, float]:
    """Missed-detection update of one Bernoulli.

    With ``reduce=False`` the state is returned as the exact two-branch gamma
    mixture; otherwise the branches are moment-matched into one GGIW.
    """
    r = track.r
    # one missed-detection factor per state component
    parts = []
    for c in track.state:
        q, branches = neg_detection_factors(c.params, _pd(sensor, c.params))
        parts.append((c.log_w, q, branches))
    log_qbar = mk.logsumexp([lw + math.log(q) if q > 0 else -math.inf for lw, q, _ in parts])
    l_absent = math.log1p(-r) if r < 1.0 else -math.inf
    l_present = math.log(r) + log_qbar if r > 0.0 else -math.inf
    log_L = float(np.logaddexp(l_absent, l_present))
    r_new = math.exp(l_present - log_L) if r > 0.0 else 0.0

    state = []
    for lw, q, branches in parts:
        if q <= 0.0:
            continue
        shift = lw + math.log(q) - log_qbar
        if reduce:
            state.append(WeightedGGIW(shift, collapse_gamma_branches(branches)))
        else:
            state.extend(
                WeightedGGIW(shift + b.log_w, b.params) for b in branches if b.log_w > -math.inf
            )
    if not state:
        state = list(track.state)
    if reduce and len(state) == 1:
        state = [WeightedGGIW(0.0, state[0].params)]
    return BernoulliTrack(min(r_new, 1.0), tuple(state), track.track_id, track.history), log_L


# --------------------------------------------------------------------------
# update
# --------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _chi2_quantile(p: float) -> float:
    return float(chi2.ppf(p, 2))


class UpdateContext:
    """Per-scan memo of single-cell updates shared by all hypotheses.

    Tracks are shared by reference between hypotheses, so results are keyed
    on track identity and the frozenset of measurement indices.
    """

    def __init__(
        self,
        ppp: PPPIntensity,
        Z: np.ndarray,
        sensor: SensorModel,
        scan: int,
        next_id: int,
        ppp_gate_prob: Optional[float] = None,
    ):
        self.ppp = ppp
        self.Z = np.asarray(Z, dtype=float).reshape(-1, 2)
        self.sensor = sensor
        self.scan = scan
        self.next_id = next_id
        self.ppp_gate_prob = ppp_gate_prob
        self.memo: dict = {}
        self._new: dict = {}
        self._det: dict = {}
        self._miss: dict = {}
        self._keep: list = []
        self._ppp_arrays = None

    def _hist(self, cell: frozenset) -> frozenset:
        return frozenset((self.scan, m) for m in cell)

    def _gated_components(self, cell: frozenset) -> Optional[list[int]]:
        if self.ppp_gate_prob is None:
            return None
        if self._ppp_arrays is None:
            comps = [c.params for c in self.ppp.components]
            H = self.sensor.H
            if comps:
                means = np.array([H @ p.m for p in comps])
                HPH = np.array([H @ p.P @ H.T for p in comps])
                X = np.array([expected_extent(p) for p in comps])
            else:
                means = np.zeros((0, 2))
                HPH = X = np.zeros((0, 2, 2))
            self._ppp_arrays = (means, HPH, X)
        means, HPH, X = self._ppp_arrays
        if means.shape[0] == 0:
            return []
        W = self.Z[sorted(cell)]
        n = W.shape[0]
        S = HPH + X / n
        eps = W.mean(axis=0) - means
        det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
        maha = (
            S[:, 1, 1] * eps[:, 0] ** 2
            - 2 * S[:, 0, 1] * eps[:, 0] * eps[:, 1]
            + S[:, 0, 0] * eps[:, 1] ** 2
        ) / det
        thresh = _chi2_quantile(self.ppp_gate_prob)
        return [int(i) for i in np.flatnonzero(maha <= thresh)]

    def new(self, cell: frozenset) -> tuple[Optional[BernoulliTrack], float]:
        if cell not in self._new:
            comps = self._gated_components(cell)
            W = self.Z[sorted(cell)]
            t, log_L = ppp_detect_new(self.ppp, W, self.sensor, self.next_id, comps)
            if t is not None:
                self.next_id += 1
                t = BernoulliTrack(t.r, t.state, t.track_id, self._hist(cell))
            self._new[cell] = (t, log_L)
        return self._new[cell]

    def detect(self, track: BernoulliTrack, cell: frozenset) -> tuple[BernoulliTrack, float]:
        key = (id(track), cell)
        if key not in self._det:
            t, log_L = bernoulli_detect(track, self.Z[sorted(cell)], self.sensor)
            t = BernoulliTrack(t.r, t.state, t.track_id, track.history | self._hist(cell))
            self._det[key] = (t, log_L)
            self._keep.append(track)
        return self._det[key]

    def missed(self, track: BernoulliTrack) -> tuple[BernoulliTrack, float]:
        key = id(track)
        if key not in self._miss:
            self._miss[key] = bernoulli_missed(track, self.sensor)
            self._keep.append(track)
        return self._miss[key]


AssociationSource = Callable[[GlobalHypothesis, UpdateContext], Sequence[Association]]


def exhaustive_source(hyp: GlobalHypothesis, ctx: UpdateContext) -> list[Association]:
    return enumerate_all_associations(len(ctx.Z), list(range(len(hyp.tracks))))


def update(
    pmbm: PMBMDensity,
    Z: np.ndarray,
    sensor: SensorModel,
    assoc_source: AssociationSource = exhaustive_source,
    ppp_gate_prob: Optional[float] = None,
) -> PMBMDensity:
    """PMBM measurement update over the associations supplied per hypothesis.

    Child log-weights are ``parent log-weight + sum of cell log-likelihoods``
    and are normalized over every retained child.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    scan = pmbm.scan + 1
    ctx = UpdateContext(pmbm.ppp, Z, sensor, scan, pmbm.next_id, ppp_gate_prob)

    children: list[GlobalHypothesis] = []
    for hyp in pmbm.hypotheses:
        assocs = assoc_source(hyp, ctx)
        if len(assocs) == 0:
            raise NoAssociations("association source returned no associations")
        for assoc in assocs:
            log_w = hyp.log_w
            tracks: list[BernoulliTrack] = []
            detected: set[int] = set()
            for cell in assoc.cells:
                if cell.track is None:
                    t, log_L = ctx.new(cell.meas)
                elif cell.meas:
                    t, log_L = ctx.detect(hyp.tracks[cell.track], cell.meas)
                    detected.add(cell.track)
                else:
                    continue
                log_w += log_L
                if t is not None:
                    tracks.append(t)
            for i, t in enumerate(hyp.tracks):
                if i not in detected:
                    t_new, log_L = ctx.missed(t)
                    log_w += log_L
                    tracks.append(t_new)
            if log_w == -math.inf:
                continue
            children.append(GlobalHypothesis(log_w, tuple(tracks)))

    if not children:
        raise NoAssociations("every association has zero likelihood")
    norm = mk.logsumexp([c.log_w for c in children])
    hyps = tuple(GlobalHypothesis(c.log_w - norm, c.tracks) for c in children)
    return PMBMDensity(ppp_update_missed(pmbm.ppp, sensor), hyps, scan, ctx.next_id)


# --------------------------------------------------------------------------
# exhaustive association oracle
# --------------------------------------------------------------------------


def set_partitions(items: Sequence[int]) -> Iterator[list[list[int]]]:
    """All partitions of ``items`` (Bell-number many), in a fixed order."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1 :]


def enumerate_all_associations(
    n_meas: int, track_ids: Sequence[int], max_items: int = 12
) -> list[Association]:
    """Every partition of measurements and tracks with <= 1 track per cell."""
    track_ids = list(track_ids)
    if n_meas + len(track_ids) > max_items:
        raise TooLarge(f"{n_meas} measurements + {len(track_ids)} tracks exceeds {max_items}")
    out = []
    for part in set_partitions(range(n_meas)):
        cells = [frozenset(p) for p in part]
        n = len(cells)
        for k in range(0, min(n, len(track_ids)) + 1):
            for chosen_cells in itertools.combinations(range(n), k):
                for chosen_tracks in itertools.permutations(track_ids, k):
                    owner = dict(zip(chosen_cells, chosen_tracks))
                    cs = [Cell(owner.get(i), cells[i]) for i in range(n)]
                    cs += [Cell(t, frozenset()) for t in track_ids if t not in chosen_tracks]
                    out.append(Association(tuple(cs)))
    return out


# --------------------------------------------------------------------------
# estimation
# --------------------------------------------------------------------------


def extract_estimate(pmbm: PMBMDensity, r_thresh: float = 0.5) -> list[Estimate]:
    if not pmbm.hypotheses:
        return []
    best = max(pmbm.hypotheses, key=lambda h: h.log_w)
    out = []
    for t in best.tracks:
        if t.r > r_thresh:
            rate, m, X = expected_values(t.params)
            out.append(Estimate(m, X, rate))
    return out


def hypothesis_key(h: GlobalHypothesis) -> frozenset:
    """Association-history key: the measurement sets claimed by each track."""
    return frozenset(t.history for t in h.tracks)
