"""Point sets, index subsets and the plain-text point file format.

A point file holds one point per line as whitespace-separated decimals.
Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

__all__ = [
    "PointSet",
    "IndexSubset",
    "PointFileError",
    "DomainError",
    "as_array",
    "load_pointset",
    "write_pointset",
    "gather",
]


class PointFileError(ValueError):
    """Malformed point file (ragged rows, non-numeric or non-finite values)."""


class DomainError(ValueError):
    """A point lies outside the domain required by a kernel or score model."""


@dataclass(frozen=True, eq=False)
class PointSet:
    """``n`` points in ``d`` dimensions, stored as a read-only float64 array."""

    coords: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coords, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"point set needs shape (n>=1, d>=1), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("point set contains non-finite coordinates")
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    @property
    def count(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self) -> int:
        return self.count

    def __array__(self, dtype=None, copy=None):
        return self.coords if dtype is None else self.coords.astype(dtype)

    def in_unit_cube(self) -> bool:
        return bool(np.all((self.coords >= 0.0) & (self.coords <= 1.0)))

    def __repr__(self) -> str:
        return f"PointSet(n={self.count}, d={self.dim})"


@dataclass(frozen=True, eq=False)
class IndexSubset:
    """Strictly increasing member indices into a parent set of ``parent_count``."""

    parent_count: int
    members: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.members, dtype=np.int64).ravel()
        if idx.size and (idx[0] < 0 or idx[-1] >= self.parent_count):
            raise ValueError(f"indices must lie in [0, {self.parent_count})")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing without duplicates")
        idx = idx.copy()
        idx.setflags(write=False)
        object.__setattr__(self, "members", idx)

    @classmethod
    def from_indices(cls, parent_count: int, indices: Iterable[int]) -> "IndexSubset":
        """Build from unordered indices; duplicates are rejected."""
        idx = np.asarray(list(indices), dtype=np.int64)
        if np.unique(idx).size != idx.size:
            raise ValueError("duplicate index in subset")
        return cls(parent_count, np.sort(idx))

    @property
    def size(self) -> int:
        return int(self.members.size)

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, IndexSubset):
            return NotImplemented
        return self.parent_count == other.parent_count and np.array_equal(
            self.members, other.members
        )

    def __hash__(self) -> int:
        return hash((self.parent_count, self.members.tobytes()))

    def __repr__(self) -> str:
        return f"IndexSubset(m={self.size} of n={self.parent_count})"


def as_array(P: Union[PointSet, np.ndarray]) -> np.ndarray:
    """Coordinates of ``P`` as an ``(n, d)`` float64 array."""
    if isinstance(P, PointSet):
        return P.coords
    arr = np.asarray(P, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def load_pointset(path, expect_unit_cube: bool = False) -> PointSet:
    """Read a point file.

    Raises :class:`PointFileError` on ragged rows or non-finite values (the
    message names the offending line) and :class:`DomainError` when
    ``expect_unit_cube`` is set and a coordinate falls outside ``[0, 1]``.
    """
    rows = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values = [float(tok) for tok in text.split()]
            except ValueError:
                raise PointFileError(f"{path}: line {lineno}: non-numeric value") from None
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise PointFileError(
                    f"{path}: line {lineno}: expected {dim} coordinates, got {len(values)}"
                )
            if not all(np.isfinite(values)):
                raise PointFileError(f"{path}: line {lineno}: non-finite coordinate")
            if expect_unit_cube and not all(0.0 <= v <= 1.0 for v in values):
                raise DomainError(f"{path}: line {lineno}: coordinate outside [0, 1]")
            rows.append(values)
    if not rows:
        raise PointFileError(f"{path}: no points")
    return PointSet(np.array(rows, dtype=np.float64))


def write_pointset(P: Union[PointSet, np.ndarray], path, header: str = "") -> None:
    """Write ``P`` with 17 significant digits so that reloading is bit-exact."""
    arr = as_array(P)
    path = Path(path)
    with open(path, "w") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        for row in arr:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def gather(P: Union[PointSet, np.ndarray], S: IndexSubset) -> PointSet:
    arr = as_array(P)
    if S.parent_count != arr.shape[0]:
        raise ValueError(
            f"subset refers to a parent of {S.parent_count} points, got {arr.shape[0]}"
        )
    return PointSet(arr[S.members])
