"""Reduced data association: gating, grouping, partitioning and ranked assignment."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import chi2

from ggiw_pmbm.ggiw import SensorModel, expected_extent
from ggiw_pmbm.metrics import Infeasible, hungarian
from ggiw_pmbm.pmbm import (
    Association,
    BernoulliTrack,
    Cell,
    GlobalHypothesis,
    PPPIntensity,
    UpdateContext,
    set_partitions,
)


@dataclass(frozen=True)
class GateResult:
    track_meas: tuple  # one boolean mask over measurements per track
    ppp_meas: tuple  # one boolean mask over measurements per PPP component

    def admitted(self, track: int) -> set[int]:
        return set(np.flatnonzero(self.track_meas[track]).tolist())


@dataclass(frozen=True)
class Group:
    tracks: tuple[int, ...]
    meas: tuple[int, ...]


@dataclass(frozen=True)
class AssociationConfig:
    gate_prob: float = 0.999
    partition_probs: tuple[float, ...] = (0.7, 0.8, 0.9, 0.99)
    # typical target standard deviation along one axis (m)
    extent_scale: float = 2.5
    murty_k: int = 20
    # hard cap on children per parent hypothesis
    max_hypotheses: int = 1000
    # relative weight below which a child is not generated
    child_floor: float = 1e-6
    # groups with at most this many measurements try every set partition
    full_partition_max: int = 4

    def __post_init__(self):
        if not 0.0 < self.gate_prob < 1.0:
            raise ValueError("gate_prob must lie in (0, 1)")
        if any(not 0.0 < p < 1.0 for p in self.partition_probs):
            raise ValueError("partition probabilities must lie in (0, 1)")
        if self.extent_scale <= 0 or self.murty_k < 1 or self.max_hypotheses < 1:
            raise ValueError("extent_scale, murty_k and max_hypotheses must be positive")
        if not 0.0 <= self.child_floor < 1.0:
            raise ValueError("child_floor must lie in [0, 1)")
        if not 0 <= self.full_partition_max <= 8:
            raise ValueError("full_partition_max must lie in [0, 8]")

    def thresholds(self) -> list[float]:
        # distance between two points of one target is N(0, 2 sigma^2 I)
        return sorted(
            math.sqrt(2.0 * chi2_quantile(p, 2)) * self.extent_scale for p in self.partition_probs
        )


# --------------------------------------------------------------------------
# gating and grouping
# --------------------------------------------------------------------------


@lru_cache(maxsize=64)
def chi2_quantile(p: float, dof: int = 2) -> float:
    return float(chi2.ppf(p, dof))


def _gate_mask(params_list, Z: np.ndarray, H: np.ndarray, thresh: float) -> list[np.ndarray]:
    out = []
    for p in params_list:
        S = H @ p.P @ H.T + expected_extent(p)
        eps = Z - H @ p.m
        maha = np.einsum("ia,ab,ib->i", eps, np.linalg.inv(S), eps)
        out.append(maha <= thresh)
    return out


def gate(
    tracks: Sequence[BernoulliTrack],
    ppp: PPPIntensity,
    Z: np.ndarray,
    sensor: SensorModel,
    gate_prob: float,
) -> GateResult:
    if not 0.0 < gate_prob < 1.0:
        raise ValueError("gate_prob must lie in (0, 1)")
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    thresh = chi2_quantile(gate_prob, 2)
    t_masks = _gate_mask([t.params for t in tracks], Z, sensor.H, thresh)
    p_masks = _gate_mask([c.params for c in ppp.components], Z, sensor.H, thresh)
    return GateResult(tuple(t_masks), tuple(p_masks))


def group(gates: GateResult, n_meas: Optional[int] = None, links=None) -> list[Group]:
    """Connected components of the track-measurement gating graph.

    ``links`` optionally adds measurement-measurement edges (pairs of
    indices), so that measurements that may share a cell stay together.
    """
    T = len(gates.track_meas)
    if n_meas is None:
        masks = gates.track_meas + gates.ppp_meas
        n_meas = len(masks[0]) if masks else 0
    parent = list(range(T + n_meas))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for t, mask in enumerate(gates.track_meas):
        for m in np.flatnonzero(mask):
            union(t, T + int(m))
    for a, b in links if links is not None else ():
        union(T + int(a), T + int(b))

    comps: dict[int, tuple[list, list]] = {}
    for node in range(T + n_meas):
        tr, ms = comps.setdefault(find(node), ([], []))
        (tr if node < T else ms).append(node if node < T else node - T)
    return [Group(tuple(tr), tuple(ms)) for tr, ms in comps.values()]


def partition_measurements(points, thresholds: Sequence[float]) -> list[tuple[tuple[int, ...], ...]]:
    """Distinct distance partitions of ``points`` (single linkage at each threshold).

    Partitions are returned as sorted tuples of sorted index tuples, the
    all-singletons partition first.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    singles = tuple((i,) for i in range(n))
    out = [singles]
    if n < 2:
        return out
    D = squareform(pdist(pts))
    for delta in thresholds:
        adj = D < delta
        labels = -np.ones(n, dtype=int)
        for s in range(n):
            if labels[s] >= 0:
                continue
            labels[s] = s
            stack = [s]
            while stack:
                a = stack.pop()
                for b in np.flatnonzero(adj[a] & (labels < 0)):
                    labels[b] = s
                    stack.append(int(b))
        cells: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            cells.setdefault(int(lab), []).append(i)
        part = tuple(sorted(tuple(c) for c in cells.values()))
        if part not in out:
            out.append(part)
    return out


# --------------------------------------------------------------------------
# ranked assignment
# --------------------------------------------------------------------------


def _solve_constrained(C: np.ndarray, forced: dict, forbidden: set):
    W = C.copy()
    for r, c in forbidden:
        W[r, c] = np.inf
    for r, c in forced.items():
        keep = W[r, c]
        W[r, :] = np.inf
        W[:, c] = np.inf
        W[r, c] = keep
    try:
        assign, _ = hungarian(W)
    except Infeasible:
        return None
    return assign


def _row_cost(C: np.ndarray, assign) -> float:
    return float(sum(C[r, c] for r, c in enumerate(assign)))


def _enumerate_assignments(C: np.ndarray, limit: int):
    """Every finite assignment sorted by (cost, assignment), or None if more than ``limit``."""
    n = C.shape[0]
    options = [np.flatnonzero(np.isfinite(C[r])).tolist() for r in range(n)]
    if math.prod(len(o) for o in options) > limit:
        return None
    out = []
    for assign in itertools.product(*options):
        if len(set(assign)) == n:
            out.append((tuple(assign), _row_cost(C, assign)))
    out.sort(key=lambda a: (a[1], a[0]))
    return out


def murty_kbest(costs, k: int, enumerate_limit: int = 2000) -> list[tuple[tuple[int, ...], float]]:
    """The ``k`` cheapest assignments of rows to distinct columns.

    Output is sorted by (total cost, assignment tuple). Raises Infeasible
    when no finite-cost assignment exists. Problems with at most
    ``enumerate_limit`` candidate row choices are ranked by direct
    enumeration; larger ones by solution-space partitioning.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    C = np.asarray(costs, dtype=float)
    n = C.shape[0]
    if n == 0:
        return [((), 0.0)]
    small = _enumerate_assignments(C, enumerate_limit)
    if small is not None:
        if not small:
            raise Infeasible("no finite-cost assignment")
        return small[:k]
    first = _solve_constrained(C, {}, set())
    if first is None:
        raise Infeasible("no finite-cost assignment")

    heap = [(_row_cost(C, first), first, {}, frozenset())]
    found: list[tuple[tuple[int, ...], float]] = []
    while heap:
        if len(found) >= k and heap[0][0] > found[k - 1][1]:
            break
        cost, assign, forced, forbidden = heapq.heappop(heap)
        found.append((assign, cost))
        found.sort(key=lambda a: (a[1], a[0]))
        # split the remaining space: rows before i fixed, row i forbidden its column
        fixed = dict(forced)
        for i in range(n):
            if i not in fixed:
                ban = forbidden | {(i, assign[i])}
                child = _solve_constrained(C, fixed, ban)
                if child is not None:
                    heapq.heappush(heap, (_row_cost(C, child), child, dict(fixed), ban))
            fixed[i] = assign[i]
    return found[:k]


# --------------------------------------------------------------------------
# association building
# --------------------------------------------------------------------------


def _kbest_product(lists: list[list[tuple[tuple, float]]], limit: int, drop: float = math.inf):
    """Highest-score combinations picking one entry from each sorted list.

    Stops after ``limit`` results or once a score falls more than ``drop``
    below the best one.
    """
    if not lists:
        return [((), 0.0)]
    start = (0,) * len(lists)
    score = lambda idx: sum(lists[g][i][1] for g, i in enumerate(idx))
    heap = [(-score(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < limit:
        neg, idx = heapq.heappop(heap)
        if out and -neg < out[0][1] - drop:
            break
        out.append((tuple(lists[g][i][0] for g, i in enumerate(idx)), -neg))
        for g in range(len(lists)):
            if idx[g] + 1 < len(lists[g]):
                nxt = idx[:g] + (idx[g] + 1,) + idx[g + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (-score(nxt), nxt))
    return out


def _group_candidates(hyp, grp: Group, ctx: UpdateContext, gates: GateResult, config):
    """Scored cell lists for one group, best first, with hypothesis track indices."""
    tracks = [hyp.tracks[i] for i in grp.tracks]
    memo_key = ("group", tuple(id(t) for t in tracks), grp.meas)
    if memo_key not in ctx.memo:
        ctx.memo[memo_key] = _rank_group(tracks, grp, ctx, [gates.admitted(i) for i in grp.tracks], config)
    # memoized cells index tracks by their position inside the group
    out = []
    for cells, score in ctx.memo[memo_key]:
        mapped = tuple(Cell(None if c.track is None else grp.tracks[c.track], c.meas) for c in cells)
        out.append((mapped, score))
    return out


def _prediction_partition(tracks, meas: tuple, ctx: UpdateContext, config) -> list[frozenset]:
    """Cells formed by giving each gated measurement to its closest predicted track.

    Measurements gated by no track are clustered at the largest distance
    threshold.
    """
    Z = ctx.Z[list(meas)]
    H = ctx.sensor.H
    maha = np.empty((len(tracks), len(meas)))
    for i, t in enumerate(tracks):
        p = t.params
        S = H @ p.P @ H.T + expected_extent(p)
        eps = Z - H @ p.m
        maha[i] = np.einsum("ia,ab,ib->i", eps, np.linalg.inv(S), eps)
    owner = np.argmin(maha, axis=0)
    gated = maha[owner, np.arange(len(meas))] <= chi2_quantile(config.gate_prob, 2)
    cells: dict[int, list[int]] = {}
    rest = []
    for j, m in enumerate(meas):
        if gated[j]:
            cells.setdefault(int(owner[j]), []).append(m)
        else:
            rest.append(m)
    out = [frozenset(c) for c in cells.values()]
    if rest:
        part = partition_measurements(ctx.Z[rest], [max(config.thresholds())])[-1]
        out += [frozenset(rest[i] for i in cell) for cell in part]
    return out


def _split_unexplained(cells, tracks, admitted, ctx: UpdateContext) -> list[frozenset]:
    """Break multi-measurement cells that no track gates and the PPP cannot explain into singletons."""
    out = []
    for cell in cells:
        if len(cell) > 1 and not any(cell & a for a in admitted) and ctx.new(cell)[1] == -math.inf:
            out.extend(frozenset([m]) for m in sorted(cell))
        else:
            out.append(cell)
    return out


def _rank_group(tracks, grp: Group, ctx: UpdateContext, admitted, config):
    pkey = ("partitions", grp.meas)
    if pkey not in ctx.memo:
        if len(grp.meas) <= config.full_partition_max:
            local = [tuple(map(tuple, p)) for p in set_partitions(range(len(grp.meas)))]
        else:
            local = partition_measurements(ctx.Z[list(grp.meas)], config.thresholds())
        ctx.memo[pkey] = [
            [frozenset(grp.meas[i] for i in cell) for cell in part] for part in local
        ]
    partitions = list(ctx.memo[pkey])
    if tracks:
        extra = _prediction_partition(tracks, grp.meas, ctx, config)
        if set(extra) not in [set(p) for p in partitions]:
            partitions.append(extra)

    miss = [ctx.missed(t)[1] for t in tracks]
    base = sum(miss)
    T = len(tracks)
    best: dict[frozenset, float] = {}
    any_feasible = False
    seen_parts = set()
    for cells in partitions:
        cells = _split_unexplained(cells, tracks, admitted, ctx)
        if frozenset(cells) in seen_parts:
            continue
        seen_parts.add(frozenset(cells))
        n = len(cells)
        C = np.full((n, T + n), np.inf)
        for r, cell in enumerate(cells):
            for c, t in enumerate(tracks):
                if cell & admitted[c]:
                    log_L = ctx.detect(t, cell)[1]
                    if log_L > -math.inf:
                        C[r, c] = -(log_L - miss[c])
            log_new = ctx.new(cell)[1]
            if log_new > -math.inf:
                C[r, T + r] = -log_new
        try:
            ranked = murty_kbest(C, config.murty_k)
        except Infeasible:
            continue
        any_feasible = True
        for assign, cost in ranked:
            out_cells = [Cell(col if col < T else None, cells[r]) for r, col in enumerate(assign)]
            detected = {col for col in assign if col < T}
            out_cells += [Cell(c, frozenset()) for c in range(T) if c not in detected]
            key = frozenset(out_cells)
            score = base - cost
            if score > best.get(key, -math.inf):
                best[key] = score
    if not any_feasible:
        raise Infeasible(f"no feasible association for measurements {grp.meas}")
    return sorted(best.items(), key=lambda kv: (-kv[1], sorted(map(_cell_order, kv[0]))))


def _cell_order(cell: Cell):
    return (-1 if cell.track is None else cell.track, tuple(sorted(cell.meas)))


def build_associations(
    hyp: GlobalHypothesis,
    ctx: UpdateContext,
    config: AssociationConfig,
    limit: Optional[int] = None,
    drop: float = math.inf,
) -> list[tuple[Association, float]]:
    """High-likelihood associations for one hypothesis, with their log scores.

    At most ``limit`` are returned, none scoring more than ``drop`` below the best.
    """
    n = len(ctx.Z)
    T = len(hyp.tracks)
    if n == 0:
        cells = tuple(Cell(i, frozenset()) for i in range(T))
        return [(Association(cells), sum(ctx.missed(t)[1] for t in hyp.tracks))]

    gkey = ("gates", tuple(id(t) for t in hyp.tracks))
    if gkey not in ctx.memo:
        gates = gate(hyp.tracks, PPPIntensity(), ctx.Z, ctx.sensor, config.gate_prob)
        ctx.memo[gkey] = gates
    gates = ctx.memo[gkey]
    if "links" not in ctx.memo:
        D = squareform(pdist(ctx.Z)) if n > 1 else np.zeros((1, 1))
        a, b = np.nonzero(np.triu(D < max(config.thresholds()), k=1))
        ctx.memo["links"] = list(zip(a.tolist(), b.tolist()))
    groups = group(gates, n, ctx.memo["links"])

    lists, fixed_cells, fixed_score = [], [], 0.0
    for grp in groups:
        if not grp.meas:
            for i in grp.tracks:
                fixed_cells.append(Cell(i, frozenset()))
                fixed_score += ctx.missed(hyp.tracks[i])[1]
            continue
        lists.append(_group_candidates(hyp, grp, ctx, gates, config))

    limit = config.max_hypotheses if limit is None else limit
    out = []
    for combo, score in _kbest_product(lists, limit, drop):
        cells = tuple(fixed_cells) + tuple(c for part in combo for c in part)
        cells = tuple(sorted(cells, key=_cell_order))
        out.append((Association(cells), score + fixed_score))
    return out


class AssociationBuilder:
    """Association source for ``pmbm.update`` using the reduced pipeline.

    A child of parent j is kept while ``W_j * exp(score - best score)`` stays
    above ``config.child_floor``; at most ``config.max_hypotheses`` children
    per parent and always at least one.
    """

    def __init__(self, config: AssociationConfig = AssociationConfig()):
        self.config = config

    def __call__(self, hyp: GlobalHypothesis, ctx: UpdateContext) -> list[Association]:
        floor = self.config.child_floor
        drop = math.inf if floor == 0.0 else max(0.0, hyp.log_w - math.log(floor))
        ranked = build_associations(hyp, ctx, self.config, self.config.max_hypotheses, drop)
        return [a for a, _ in ranked]
