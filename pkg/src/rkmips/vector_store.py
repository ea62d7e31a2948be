"""User/item vector collections, norm ordering, partitioning and bound kernels."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels

VECTOR_MAGIC = b"RKMV1"

USER = "user"
ITEM = "item"


class ConfigurationError(ValueError):
    """Raised for malformed inputs, mismatched shapes and out-of-range parameters."""


@dataclass
class VectorSet:
    """A dense ``count x dim`` float64 matrix with one Euclidean norm per row."""

    data: np.ndarray
    role: str = ITEM
    norms: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] < 1:
            raise ConfigurationError(f"expected a 2-d array with dim >= 1, got shape {data.shape}")
        if self.role not in (USER, ITEM):
            raise ConfigurationError(f"unknown role {self.role!r}")
        self.data = data
        if self.norms is None:
            self.norms = np.linalg.norm(data, axis=1)
        else:
            self.norms = np.ascontiguousarray(self.norms, dtype=np.float64)
            if self.norms.shape != (data.shape[0],):
                raise ConfigurationError("norms must hold one value per vector")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.count

    def take(self, order: np.ndarray) -> "VectorSet":
        """Rows reordered by ``order``; norms travel with their rows."""
        return VectorSet(self.data[order], role=self.role, norms=self.norms[order])


class PartitionedRow(NamedTuple):
    head: np.ndarray
    tail_norm: float
    split_dim: int


@dataclass
class PartitionedVectors:
    """Head coordinates ``[0, split_dim)`` and tail norms of a vector set.

    ``exact`` holds the same rows before any rotation; exact inner products are
    taken from it so they do not depend on the rotation. Defaults to
    ``parent.data``.
    """

    parent: VectorSet
    split_dim: int
    head: np.ndarray
    tail_norms: np.ndarray
    exact: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.exact is None:
            self.exact = self.parent.data
        self.exact = np.ascontiguousarray(self.exact, dtype=np.float64)
        if self.exact.shape != self.parent.data.shape:
            raise ConfigurationError(f"exact rows {self.exact.shape} != {self.parent.data.shape}")

    def row(self, i: int) -> PartitionedRow:
        return PartitionedRow(self.head[i], float(self.tail_norms[i]), self.split_dim)

    def __len__(self) -> int:
        return self.parent.count


def partition(vs: VectorSet, split_dim: int, exact: np.ndarray | None = None) -> PartitionedVectors:
    if not 1 <= split_dim <= vs.dim:
        raise ConfigurationError(f"split dimension must lie in [1, {vs.dim}], got {split_dim}")
    head = np.ascontiguousarray(vs.data[:, :split_dim])
    tail = vs.data[:, split_dim:]
    tail_norms = np.linalg.norm(tail, axis=1) if tail.shape[1] else np.zeros(vs.count)
    return PartitionedVectors(vs, split_dim, head, np.ascontiguousarray(tail_norms), exact)


def inner_product(a, b) -> float:
    """Left-to-right float64 sum of ``a[t] * b[t]``; the product every kernel uses."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigurationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(_kernels.dot(np.ascontiguousarray(a), np.ascontiguousarray(b)))


def cauchy_bound(u_norm: float, p_norm: float) -> float:
    """Upper bound on ``u . p`` from the two norms alone."""
    return u_norm * p_norm


def partial_bound(u: PartitionedRow, p: PartitionedRow) -> float:
    """Exact head product plus the Cauchy-Schwarz bound on the tails."""
    if u.split_dim != p.split_dim:
        raise ConfigurationError(f"split dimension mismatch: {u.split_dim} vs {p.split_dim}")
    return float(np.dot(u.head, p.head)) + u.tail_norm * p.tail_norm


def sort_items_by_norm(items: VectorSet) -> np.ndarray:
    """Permutation into non-increasing norm order; equal norms keep input order."""
    return np.argsort(-items.norms, kind="stable")


def load_vectors(path, role: str = ITEM) -> VectorSet:
    """Read a vector file, sniffing the binary magic and falling back to text."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(VECTOR_MAGIC))
    if magic == VECTOR_MAGIC:
        return read_binary(path, role)
    return read_text(path, role)


def read_text(path, role: str = ITEM) -> VectorSet:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ConfigurationError(f"{path}: first line must be 'count dim'")
        count, dim = int(header[0]), int(header[1])
        data = np.loadtxt(f, dtype=np.float64, ndmin=2) if count else np.empty((0, dim))
    if data.shape != (count, dim):
        raise ConfigurationError(f"{path}: header says {count}x{dim}, body is {data.shape[0]}x{data.shape[1]}")
    return VectorSet(data, role=role)


def write_text(vs: VectorSet, path) -> None:
    with open(path, "w") as f:
        f.write(f"{vs.count} {vs.dim}\n")
        np.savetxt(f, vs.data, fmt="%.17g")


def read_binary(path, role: str = ITEM) -> VectorSet:
    raw = Path(path).read_bytes()
    hsize = len(VECTOR_MAGIC) + 8
    if raw[: len(VECTOR_MAGIC)] != VECTOR_MAGIC or len(raw) < hsize:
        raise ConfigurationError(f"{path}: not an RKMV1 vector file")
    count, dim = struct.unpack_from("<II", raw, len(VECTOR_MAGIC))
    expected = hsize + count * dim * 8
    if len(raw) != expected:
        raise ConfigurationError(f"{path}: expected {expected} bytes for {count}x{dim}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=hsize).reshape(count, dim)
    return VectorSet(data.astype(np.float64), role=role)


def write_binary(vs: VectorSet, path) -> None:
    with open(path, "wb") as f:
        f.write(VECTOR_MAGIC)
        f.write(struct.pack("<II", vs.count, vs.dim))
        f.write(vs.data.astype("<f8").tobytes())
