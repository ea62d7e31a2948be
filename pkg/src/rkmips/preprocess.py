"""Offline index: per-user partial top-k_max buffers and the upper-bound score table.

Items are addressed by their position in descending-norm order throughout.
The build runs a uniform scan with a fixed per-user budget, tops up the users
it could not certify with budgets drawn from a fitted exponential curve, and
finally bounds, for every still-uncertified user, which unscanned items could
reach each rank of its buffer.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from . import _kernels as K
from .transform import Rotation, apply_rotation, fit_rotation
from .vector_store import (
    ITEM,
    USER,
    ConfigurationError,
    PartitionedVectors,
    VectorSet,
    partition,
    sort_items_by_norm,
)

log = logging.getLogger(__name__)

INDEX_MAGIC = b"RKMI1"
INDEX_VERSION = 1

BETA_RANGE = 64.0


def configure_threads() -> int:
    """Apply the ``RKM_THREADS`` cap to compiled parallel loops."""
    cap = os.environ.get("RKM_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


@dataclass
class IndexConfig:
    k_max: int = 25
    split_dim: int = 10
    c1: int = 4
    c2: int = 4
    alpha: float = 1.0
    gamma: float | None = None  # None: smallest deficit among uncertified users
    rotate: bool = True

    def validate(self, dim: int, m: int) -> None:
        if self.k_max < 1:
            raise ConfigurationError("k_max must be at least 1")
        if m < self.k_max:
            raise ConfigurationError("item set smaller than k_max")
        if not 1 <= self.split_dim <= dim:
            raise ConfigurationError(f"split dimension must lie in [1, {dim}], got {self.split_dim}")
        if self.c1 < 1 or self.c2 < 0:
            raise ConfigurationError("budget multipliers must satisfy c1 >= 1, c2 >= 0")
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")


@dataclass
class UserState:
    """Read-only snapshot of one user's scan state."""

    user_index: int
    topk: list[tuple[int, float]]
    pos: int
    lam: float
    certified: bool

    def kth(self, k: int) -> float:
        return self.topk[k - 1][1]


@dataclass
class UserStates:
    """Struct-of-arrays scan state for all users.

    ``pos[i]`` is the number of leading norm-sorted items evaluated for user i;
    ``lam[i]`` bounds every product with the items from ``pos[i]`` on and is
    ``-inf`` once the buffer is certified exact.
    """

    topk_items: np.ndarray
    topk_ips: np.ndarray
    fill: np.ndarray
    pos: np.ndarray
    lam: np.ndarray
    certified: np.ndarray

    @classmethod
    def empty(cls, n: int, k_max: int) -> "UserStates":
        return cls(
            topk_items=np.full((n, k_max), -1, dtype=np.int64),
            topk_ips=np.full((n, k_max), -np.inf),
            fill=np.zeros(n, dtype=np.int64),
            pos=np.zeros(n, dtype=np.int64),
            lam=np.full(n, -np.inf),
            certified=np.zeros(n, dtype=np.bool_),
        )

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    @property
    def k_max(self) -> int:
        return self.topk_ips.shape[1]

    def user(self, i: int) -> UserState:
        f = int(self.fill[i])
        topk = [(int(self.topk_items[i, r]), float(self.topk_ips[i, r])) for r in range(f)]
        return UserState(i, topk, int(self.pos[i]), float(self.lam[i]), bool(self.certified[i]))

    def copy(self) -> "UserStates":
        return UserStates(*(a.copy() for a in (self.topk_items, self.topk_ips, self.fill,
                                                self.pos, self.lam, self.certified)))

    def arrays(self):
        return self.topk_items, self.topk_ips, self.fill, self.pos, self.lam, self.certified


@dataclass
class UpperBoundTable:
    counts: np.ndarray  # (m, k_max): counts[j, k-1] bounds score_k of item j

    def uscore(self, k: int) -> np.ndarray:
        return self.counts[:, k - 1]


class DynamicResult(NamedTuple):
    remaining: np.ndarray  # users still uncertified, ascending index
    ip_count: int
    items_accessed: int
    pool_left: int
    granted: np.ndarray  # budget handed to each rank, pool share included


class BetaFit(NamedTuple):
    beta: float
    status: str  # "ok", "linear", "skipped", "clamped_low", "clamped_high"


@dataclass
class BudgetPlan:
    total: int
    phase1: int
    phase2: int
    alpha: float
    beta: float
    gamma: float
    deficit_users: np.ndarray  # uncertified users after phase 1, ascending deficit
    deficits: np.ndarray
    status: str = "skipped"

    def budget_at(self, rank: np.ndarray) -> np.ndarray:
        return budget_curve(rank, self.alpha, self.beta, self.gamma)


@dataclass
class BuildStats:
    ip_uniform: int = 0
    ip_dynamic: int = 0
    items_dynamic: int = 0
    pool_left: int = 0
    uncertified_after_uniform: int = 0
    uncertified_after_dynamic: int = 0

    @property
    def ip_total(self) -> int:
        return self.ip_uniform + self.ip_dynamic


@dataclass
class Index:
    config: IndexConfig
    rotation: Rotation
    item_ids: np.ndarray  # item_ids[position] = original row of the item
    items: PartitionedVectors
    users: PartitionedVectors
    states: UserStates
    table: UpperBoundTable
    plan: BudgetPlan
    stats: BuildStats = field(default_factory=BuildStats)

    @property
    def n(self) -> int:
        return self.users.parent.count

    @property
    def m(self) -> int:
        return self.items.parent.count

    @property
    def k_max(self) -> int:
        return self.config.k_max

    def kernel_args(self):
        """(udata, unorm, utail, uhead, pdata, pnorm, ptail, phead) in kernel order."""
        return _geometry(self.users, self.items)


def _geometry(users: PartitionedVectors, items: PartitionedVectors):
    return (users.exact, users.parent.norms, users.tail_norms, users.head,
            items.exact, items.parent.norms, items.tail_norms, items.head)


def uniform_scan(users: PartitionedVectors, items: PartitionedVectors, k_max: int,
                 per_user: int):
    """Scan the first ``per_user`` items for every user.

    Returns (states, uncertified users, their deficits, inner products), with
    the uncertified users sorted by ascending deficit (ties by user index).
    """
    m = len(items)
    if m < k_max:
        raise ConfigurationError("item set smaller than k_max")
    if per_user < k_max:
        raise ConfigurationError("per-user uniform budget must be at least k_max")
    n = len(users)
    states = UserStates.empty(n, k_max)
    limit = min(per_user, m)
    ip_count = np.zeros(n, dtype=np.int64)
    first_stop = np.zeros(n, dtype=np.int64)
    K.uniform_scan_kernel(limit, *_geometry(users, items), states.topk_items, states.topk_ips,
                          states.fill, states.pos, states.certified, ip_count, first_stop)
    pending = np.flatnonzero(~states.certified)
    # 1-based first stopping position r, deficit r + 1 - per_user
    deficits = first_stop[pending] + 2 - per_user
    order = np.lexsort((pending, deficits))
    return states, pending[order], deficits[order], int(ip_count.sum())


def _integral(beta: float, size: int, alpha: float, gamma: float) -> float:
    if beta == 0.0:
        return (alpha + gamma) * size
    return alpha * math.expm1(beta * size) / beta + gamma * size


def fit_budget_function(deficits: np.ndarray, b2: float, alpha: float, gamma: float) -> BetaFit:
    """Choose the growth rate so the curve's area over the deficit ranks is ``b2``."""
    size = len(deficits)
    if size == 0:
        return BetaFit(0.0, "skipped")
    target = float(b2)
    if target == _integral(0.0, size, alpha, gamma):
        return BetaFit(0.0, "linear")
    lo, hi = -BETA_RANGE / size, BETA_RANGE / size
    if target <= _integral(lo, size, alpha, gamma):
        return BetaFit(lo, "clamped_low")
    if target >= _integral(hi, size, alpha, gamma):
        return BetaFit(hi, "clamped_high")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _integral(mid, size, alpha, gamma) < target:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    return BetaFit(beta, "ok")


def budget_curve(rank, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Integer budgets ``round(alpha * exp(beta * rank) + gamma)`` for 0-based ranks."""
    f = alpha * np.exp(beta * np.asarray(rank, dtype=np.float64)) + gamma
    return np.floor(f + 0.5).astype(np.int64)


def dynamic_scan(states: UserStates, deficit_users: np.ndarray, users: PartitionedVectors,
                 items: PartitionedVectors, beta: float, alpha: float, gamma: float,
                 budget_cap: int) -> DynamicResult:
    """Top-up scans in ascending-deficit order; leftovers of early finishers are pooled."""
    m = len(items)
    base = np.minimum(budget_curve(np.arange(len(deficit_users)), alpha, beta, gamma), m)
    ip_count = np.zeros(states.n, dtype=np.int64)
    granted = np.zeros(len(deficit_users), dtype=np.int64)
    order = np.ascontiguousarray(deficit_users, dtype=np.int64)
    spent, pool = K.dynamic_scan_kernel(order, base, int(budget_cap), *_geometry(users, items),
                                        states.topk_items, states.topk_ips, states.fill,
                                        states.pos, states.certified, ip_count, granted)
    remaining = order[~states.certified[order]]
    return DynamicResult(np.sort(remaining), int(ip_count.sum()), int(spent), int(pool), granted)


def compute_upper_bounds(states: UserStates, pending: np.ndarray, users: PartitionedVectors,
                         items: PartitionedVectors) -> tuple[UpperBoundTable, np.ndarray]:
    """Build the table and set ``lam`` for ``pending`` users (others get ``-inf``)."""
    states.lam[:] = -np.inf
    pending = np.ascontiguousarray(pending, dtype=np.int64)
    nchunks = max(1, min(numba.get_num_threads(), len(pending)))
    counts = K.upper_bound_kernel(pending, nchunks, *_geometry(users, items), states.topk_items,
                                  states.topk_ips, states.fill, states.pos, states.lam)
    return UpperBoundTable(counts), states.lam


def build_index(users: VectorSet, items: VectorSet, k_max: int = 25,
                config: IndexConfig | None = None) -> Index:
    config = IndexConfig(k_max=k_max) if config is None else config
    if config.k_max != k_max:
        config = IndexConfig(**{**config.__dict__, "k_max": k_max})
    n, m = users.count, items.count
    if n < 1:
        raise ConfigurationError("need at least one user")
    if users.dim != items.dim:
        raise ConfigurationError(f"user dim {users.dim} != item dim {items.dim}")
    config.validate(items.dim, m)
    configure_threads()

    users = VectorSet(users.data, role=USER, norms=users.norms)
    order = sort_items_by_norm(items)
    sorted_items = VectorSet(items.data, role=ITEM, norms=items.norms).take(order)
    rotation = fit_rotation(sorted_items) if config.rotate else Rotation.identity(items.dim)
    r_items = partition(apply_rotation(rotation, sorted_items), config.split_dim, sorted_items.data)
    r_users = partition(apply_rotation(rotation, users), config.split_dim, users.data)

    per_user = config.c1 * k_max
    b1 = n * per_user
    b2 = n * k_max * config.c2
    stats = BuildStats()
    states, deficit_users, deficits, stats.ip_uniform = uniform_scan(r_users, r_items, k_max, per_user)
    stats.uncertified_after_uniform = len(deficit_users)

    gamma = config.gamma
    if gamma is None:
        gamma = float(max(1, deficits.min())) if len(deficits) else 1.0
    fit = fit_budget_function(deficits, b2, config.alpha, gamma)
    if fit.status.startswith("clamped"):
        log.info("budget curve growth rate clamped (%s) for %d users", fit.status, len(deficits))
    plan = BudgetPlan(b1 + b2, b1, b2, config.alpha, fit.beta, gamma, deficit_users, deficits,
                      fit.status)

    if len(deficit_users) and fit.status != "skipped":
        dyn = dynamic_scan(states, deficit_users, r_users, r_items, fit.beta, config.alpha,
                           gamma, b2)
        pending = dyn.remaining
        stats.ip_dynamic, stats.items_dynamic, stats.pool_left = (dyn.ip_count,
                                                                  dyn.items_accessed,
                                                                  dyn.pool_left)
    else:
        pending = deficit_users
    stats.uncertified_after_dynamic = len(pending)
    table, _ = compute_upper_bounds(states, pending, r_users, r_items)
    log.info("index built: n=%d m=%d |U'|=%d |U''|=%d ips=%d", n, m,
             stats.uncertified_after_uniform, stats.uncertified_after_dynamic, stats.ip_total)
    return Index(config, rotation, order.astype(np.int64), r_items, r_users, states, table, plan,
                 stats)


def _block(a: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(a, dtype=dtype).tobytes()


def save_index(index: Index, path) -> None:
    cfg = index.config
    plan = index.plan
    d = index.items.parent.dim
    parts = [
        INDEX_MAGIC,
        struct.pack("<I", INDEX_VERSION),
        struct.pack("<QQIIIQQddd", index.n, index.m, d, cfg.split_dim, cfg.k_max,
                    plan.phase1, plan.phase2, plan.alpha, plan.beta, plan.gamma),
        struct.pack("<IIB", cfg.c1, cfg.c2, int(cfg.rotate)),
        _block(index.rotation.matrix, "<f8"),
        _block(index.item_ids, "<u8"),
        _block(index.item_ids, "<u8"),
    ]
    for pv in (index.items, index.users):
        parts += [_block(pv.parent.data, "<f8"), _block(pv.parent.norms, "<f8"),
                  _block(pv.tail_norms, "<f8"), _block(pv.head, "<f8")]
    s = index.states
    parts += [_block(s.topk_items, "<i8"), _block(s.topk_ips, "<f8"), _block(s.pos, "<u8"),
              _block(s.lam, "<f8"), _block(s.certified, "u1"),
              _block(index.table.counts, "<u4"),
              _block(index.items.exact, "<f8"), _block(index.users.exact, "<f8")]
    with open(path, "wb") as f:
        for p in parts:
            f.write(p)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.off = 0

    def unpack(self, fmt: str):
        vals = struct.unpack_from(fmt, self.raw, self.off)
        self.off += struct.calcsize(fmt)
        return vals

    def array(self, dtype: str, shape) -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape))
        a = np.frombuffer(self.raw, dtype=dt, count=count, offset=self.off)
        self.off += count * dt.itemsize
        return a.reshape(shape)


def load_index(path) -> Index:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise ConfigurationError(f"{path}: not an RKMI1 index file")
    rd = _Reader(raw)
    rd.off = len(INDEX_MAGIC)
    (version,) = rd.unpack("<I")
    if version != INDEX_VERSION:
        raise ConfigurationError(f"{path}: unsupported index version {version}")
    try:
        n, m, d, dp, k_max, b1, b2, alpha, beta, gamma = rd.unpack("<QQIIIQQddd")
        c1, c2, rotate = rd.unpack("<IIB")
        rotation = Rotation(rd.array("<f8", (d, d)).astype(np.float64))
        rd.array("<u8", (m,))
        item_ids = rd.array("<u8", (m,)).astype(np.int64)
        sets = []
        for count, role in ((m, ITEM), (n, USER)):
            data = rd.array("<f8", (count, d)).astype(np.float64)
            norms = rd.array("<f8", (count,)).astype(np.float64)
            tails = rd.array("<f8", (count,)).astype(np.float64)
            head = rd.array("<f8", (count, dp)).astype(np.float64)
            sets.append(PartitionedVectors(VectorSet(data, role=role, norms=norms), dp, head, tails))
        topk_items = rd.array("<i8", (n, k_max)).astype(np.int64)
        topk_ips = rd.array("<f8", (n, k_max)).astype(np.float64)
        pos = rd.array("<u8", (n,)).astype(np.int64)
        lam = rd.array("<f8", (n,)).astype(np.float64)
        certified = rd.array("u1", (n,)).astype(np.bool_)
        counts = rd.array("<u4", (m, k_max)).astype(np.int64)
        for count, pv in ((m, sets[0]), (n, sets[1])):
            pv.exact = rd.array("<f8", (count, d)).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ConfigurationError(f"{path}: truncated index file") from exc
    if rd.off != len(raw):
        raise ConfigurationError(f"{path}: {len(raw) - rd.off} trailing bytes")
    fill = (topk_items >= 0).sum(axis=1).astype(np.int64)
    states = UserStates(topk_items, topk_ips, fill, pos, lam, certified)
    config = IndexConfig(k_max=k_max, split_dim=dp, c1=c1, c2=c2, alpha=alpha, gamma=gamma,
                         rotate=bool(rotate))
    pending = np.flatnonzero(~certified)
    plan = BudgetPlan(b1 + b2, b1, b2, alpha, beta, gamma, pending, np.zeros(0, dtype=np.int64),
                      "loaded")
    return Index(config, rotation, item_ids, sets[0], sets[1], states,
                 UpperBoundTable(counts), plan)
