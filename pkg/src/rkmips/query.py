"""Exact top-N items by reverse k-MIPS result size, driven by the upper-bound table."""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _kernels as K
from .preprocess import Index, UserState
from .vector_store import ConfigurationError

log = logging.getLogger(__name__)


class Membership(IntEnum):
    NOT_MEMBER = K.NOT_MEMBER
    MEMBER = K.MEMBER
    UNRESOLVED = K.UNRESOLVED


@dataclass
class QueryStats:
    items_scored: int = 0
    ip_count: int = 0
    users_resolved: int = 0
    resolve_scanned: int = 0
    stage1: int = 0
    stage2_pruned: int = 0
    stage3_pruned: int = 0
    stage4_computed: int = 0
    initial_unresolved: int = 0
    elapsed: float = 0.0

    @classmethod
    def from_counters(cls, c: np.ndarray, **kw) -> "QueryStats":
        return cls(ip_count=int(c[K.ST_IP]), users_resolved=int(c[K.ST_RESOLVED]),
                   resolve_scanned=int(c[K.ST_RESOLVE_SCANNED]), stage1=int(c[K.ST_STAGE1]),
                   stage2_pruned=int(c[K.ST_STAGE2]), stage3_pruned=int(c[K.ST_STAGE3]),
                   stage4_computed=int(c[K.ST_STAGE4]), **kw)


@dataclass
class QueryContext:
    k: int
    n_results: int
    score: np.ndarray
    finalized: np.ndarray
    xs: np.ndarray  # unresolved users live in xs[:x_len]
    x_len: int
    queue: np.ndarray  # item positions, descending upper bound then ascending position
    counters: np.ndarray = field(default_factory=lambda: np.zeros(K.N_STATS, dtype=np.int64))
    tau: int = 0
    tau_trace: list[int] = field(default_factory=list)
    items_scored: int = 0

    @property
    def unresolved(self) -> np.ndarray:
        return self.xs[: self.x_len]


@dataclass
class TopNResult:
    entries: list[tuple[int, int]]  # (original item id, score)
    positions: list[int]
    k: int
    stats: QueryStats
    context: QueryContext | None = field(default=None, repr=False)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    @property
    def scores(self) -> list[int]:
        return [s for _, s in self.entries]


def _check_k(index: Index, k: int) -> None:
    if k > index.k_max:
        raise ConfigurationError(f"k exceeds index k_max ({k} > {index.k_max})")
    if k < 1:
        raise ConfigurationError("k must be at least 1")


def init_scores(index: Index, k: int, n_results: int = 1) -> QueryContext:
    """Credit every user whose buffer already settles its top-k; collect the rest."""
    _check_k(index, k)
    s = index.states
    settled = s.topk_ips[:, k - 1] >= s.lam
    members = s.topk_items[settled, :k].ravel()
    score = np.bincount(members, minlength=index.m).astype(np.int64)
    xs = np.ascontiguousarray(np.flatnonzero(~settled), dtype=np.int64)
    uscore = index.table.uscore(k)
    queue = np.lexsort((np.arange(index.m), -uscore))
    return QueryContext(k, n_results, score, np.zeros(index.m, dtype=np.bool_), xs, len(xs), queue)


def decide_membership(index: Index, u: int, j: int, k: int,
                      counters: np.ndarray | None = None) -> Membership:
    """Decide whether item position ``j`` is in user ``u``'s exact top-k."""
    _check_k(index, k)
    counters = np.zeros(K.N_STATS, dtype=np.int64) if counters is None else counters
    s = index.states
    res = K.decide(u, j, k, *index.kernel_args(), s.topk_items, s.topk_ips, s.pos, s.lam, counters)
    return Membership(res)


def resolve_user(index: Index, u: int, counters: np.ndarray | None = None) -> UserState:
    """Finish the user's scan from its frontier so its buffer becomes exact."""
    counters = np.zeros(K.N_STATS, dtype=np.int64) if counters is None else counters
    s = index.states
    K.resolve(u, *index.kernel_args(), s.topk_items, s.topk_ips, s.fill, s.pos, s.lam,
              s.certified, counters)
    return s.user(u)


def inc_rmips(ctx: QueryContext, index: Index, j: int, k: int) -> int:
    """Exact count of still-unresolved users with item ``j`` in their top-k.

    Marks ``j`` finalized and adds the count to ``ctx.score[j]``.
    """
    if ctx.finalized[j]:
        raise ConfigurationError(f"item position {j} already finalized")
    s = index.states
    count, ctx.x_len = K.inc_rmips_kernel(j, k, ctx.xs, ctx.x_len, *index.kernel_args(),
                                          s.topk_items, s.topk_ips, s.fill, s.pos, s.lam,
                                          s.certified, ctx.score, ctx.finalized, ctx.counters)
    ctx.score[j] += count
    ctx.items_scored += 1
    return int(count)


def top_n_query(index: Index, k: int, n_results: int) -> TopNResult:
    """Exact top-N by score; ties go to the smaller norm-sorted position.

    Items are visited in descending upper-bound order and the walk stops once
    no remaining item can displace the current N-th result.
    """
    if n_results < 1:
        raise ConfigurationError("N must be at least 1")
    if n_results > index.m:
        log.warning("N=%d exceeds item count %d; clamping", n_results, index.m)
        n_results = index.m
    t0 = time.perf_counter()
    ctx = init_scores(index, k, n_results)
    initial_x = ctx.x_len
    uscore = index.table.uscore(k)
    heap: list[tuple[int, int]] = []  # (score, -position): heap[0] is the current N-th
    for q in ctx.queue:
        q = int(q)
        bound = int(uscore[q])
        if len(heap) == n_results:
            tau, worst = heap[0][0], -heap[0][1]
            if bound < tau or (bound == tau and q > worst):
                break
        if bound == 0:
            sc = 0  # bound is sound, so the exact score is zero as well
        else:
            inc_rmips(ctx, index, q, k)
            sc = int(ctx.score[q])
        entry = (sc, -q)
        if len(heap) < n_results:
            heapq.heappush(heap, entry)
        elif entry > heap[0]:
            heapq.heapreplace(heap, entry)
        if len(heap) == n_results:
            ctx.tau = heap[0][0]
            ctx.tau_trace.append(ctx.tau)
    ranked = sorted(heap, key=lambda e: (-e[0], -e[1]))
    positions = [-p for _, p in ranked]
    stats = QueryStats.from_counters(ctx.counters, items_scored=ctx.items_scored,
                                     initial_unresolved=initial_x,
                                     elapsed=time.perf_counter() - t0)
    entries = [(int(index.item_ids[p]), sc) for (sc, _), p in zip(ranked, positions)]
    return TopNResult(entries, positions, k, stats, ctx)
