"""Brute-force scoring: exact top-k for every user, one vote per member item.

Two interchangeable modes share the tie rule (larger product first, then the
smaller norm-sorted position) and the left-to-right inner product of
:func:`rkmips.vector_store.inner_product`:

* ``"oracle"``: dense batched products with no pruning, near-ties recomputed;
* ``"early_stop"``: a per-user scan over norm-sorted items that stops once
  ``|u| |p|`` cannot beat the current k-th product.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .query import QueryStats, TopNResult
from .vector_store import ConfigurationError, VectorSet, sort_items_by_norm

log = logging.getLogger(__name__)

_BATCH_CELLS = 1 << 24
# relative gap, in units of |u| * max|p|, that safely covers matmul rounding
_ROUND_TOL = 1e-10


@dataclass
class ScoreTable:
    scores: np.ndarray  # indexed by norm-sorted position
    k: int
    order: np.ndarray  # order[position] = original item row

    def by_item_id(self) -> np.ndarray:
        out = np.empty_like(self.scores)
        out[self.order] = self.scores
        return out


def _topk_members(block: np.ndarray, k: int, urows: np.ndarray, unorms: np.ndarray,
                  p: np.ndarray, pmax: float) -> np.ndarray:
    """Boolean mask of each row's top-k under the shared tie rule.

    ``block`` comes from a BLAS product whose rounding differs from the
    left-to-right sum. Entries clearly above the k-th value are members and
    entries clearly below are not; anything within rounding distance is
    recomputed exactly and ranked by (product desc, position asc).
    """
    kth = -np.partition(-block, k - 1, axis=1)[:, k - 1]
    eps = (_ROUND_TOL * unorms * pmax)[:, None]
    sure = block > kth[:, None] + eps
    window = np.abs(block - kth[:, None]) <= eps
    need = k - sure.sum(axis=1)
    member = sure | window
    for r in np.flatnonzero(window.sum(axis=1) > need):
        cols = np.flatnonzero(window[r])
        exact = K.row_dots(urows[r], p, cols)
        member[r, cols] = False
        member[r, cols[np.lexsort((cols, -exact))[: need[r]]]] = True
    return member


def brute_force_scores(users: VectorSet, items: VectorSet, k: int, mode: str = "oracle") -> ScoreTable:
    m = items.count
    if not 1 <= k <= m:
        raise ConfigurationError(f"need 1 <= k <= m, got k={k}, m={m}")
    if users.dim != items.dim:
        raise ConfigurationError(f"user dim {users.dim} != item dim {items.dim}")
    order = sort_items_by_norm(items)
    p = np.ascontiguousarray(items.data[order])
    if mode == "oracle":
        scores = np.zeros(m, dtype=np.int64)
        batch = max(1, _BATCH_CELLS // m)
        pmax = float(items.norms.max())
        for lo in range(0, users.count, batch):
            urows = users.data[lo: lo + batch]
            member = _topk_members(urows @ p.T, k, urows, users.norms[lo: lo + batch], p, pmax)
            scores += member.sum(axis=0)
    elif mode == "early_stop":
        scores = K.early_stop_scores(k, users.data, users.norms, p, items.norms[order])
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return ScoreTable(scores, k, order)


def brute_force_topn(users: VectorSet, items: VectorSet, k: int, n_results: int,
                     mode: str = "oracle") -> TopNResult:
    if n_results < 1:
        raise ConfigurationError("N must be at least 1")
    if n_results > items.count:
        log.warning("N=%d exceeds item count %d; clamping", n_results, items.count)
        n_results = items.count
    t0 = time.perf_counter()
    table = brute_force_scores(users, items, k, mode)
    m = items.count
    ranked = np.lexsort((np.arange(m), -table.scores))[:n_results]
    entries = [(int(table.order[p]), int(table.scores[p])) for p in ranked]
    stats = QueryStats(items_scored=m, ip_count=users.count * m if mode == "oracle" else 0,
                       elapsed=time.perf_counter() - t0)
    return TopNResult(entries, [int(p) for p in ranked], k, stats)
