"""Conflict graphs and enumeration of feasible schedules (independent sets)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_ENUMERATION_CAP = 20


class GraphTooLargeError(ValueError):
    """Raised when exhaustive schedule enumeration would blow up."""


@dataclass(frozen=True, eq=False)
class ConflictGraph:
    """Symmetric boolean interference matrix over ``L`` links.

    ``A[l, k]`` is true when links ``l`` and ``k`` cannot be active together.
    """

    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=bool)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"interference matrix must be square, got shape {A.shape}")
        if A.shape[0] < 1:
            raise ValueError("a conflict graph needs at least one link")
        if not np.array_equal(A, A.T):
            raise ValueError("interference matrix must be symmetric")
        if A.diagonal().any():
            raise ValueError("interference matrix must have a false diagonal")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def L(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_edges(cls, links: int, conflicts: Iterable[Sequence[int]]) -> "ConflictGraph":
        """Build from 0-based conflict pairs; the symmetric closure is applied."""
        if links < 1:
            raise ValueError("a conflict graph needs at least one link")
        A = np.zeros((links, links), dtype=bool)
        for pair in conflicts:
            i, j = (int(x) for x in pair)
            if not (0 <= i < links and 0 <= j < links):
                raise ValueError(f"conflict {pair!r} refers to a link outside 0..{links - 1}")
            if i == j:
                raise ValueError(f"self-conflict {pair!r} is not allowed")
            A[i, j] = A[j, i] = True
        return cls(A)

    @classmethod
    def from_dict(cls, d: dict) -> "ConflictGraph":
        return cls.from_edges(int(d["links"]), d.get("conflicts", []))

    @classmethod
    def load(cls, path) -> "ConflictGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        ii, jj = np.nonzero(np.triu(self.A))
        return {"links": self.L, "conflicts": [[int(i), int(j)] for i, j in zip(ii, jj)]}

    def neighbor_masks(self) -> list[int]:
        """Bitmask of interfering links for each link (link 0 = bit 0)."""
        return [sum(1 << k for k in np.flatnonzero(row)) for row in self.A]

    # Common topologies used throughout the tests and experiments.

    @classmethod
    def path(cls, links: int) -> "ConflictGraph":
        return cls.from_edges(links, [(i, i + 1) for i in range(links - 1)])

    @classmethod
    def complete(cls, links: int) -> "ConflictGraph":
        return cls.from_edges(links, [(i, j) for i in range(links) for j in range(i + 1, links)])

    @classmethod
    def empty(cls, links: int) -> "ConflictGraph":
        return cls.from_edges(links, [])


def schedule_mask(m) -> int:
    """Integer encoding of a schedule given as a boolean vector (link 0 = LSB)."""
    if isinstance(m, (int, np.integer)):
        return int(m)
    return sum(1 << i for i, bit in enumerate(m) if bit)


def mask_to_vector(mask: int, L: int) -> np.ndarray:
    return np.array([(mask >> l) & 1 for l in range(L)], dtype=bool)


def _as_vector(m, L: int) -> np.ndarray:
    v = np.asarray(m, dtype=bool)
    if v.shape != (L,):
        raise ValueError(f"schedule has length {v.size}, graph has {L} links")
    return v


def is_feasible(m, g: ConflictGraph) -> bool:
    """True iff no two active links of ``m`` interfere."""
    v = _as_vector(m, g.L)
    return not bool(g.A[np.ix_(v, v)].any())


def addable_links(m, g: ConflictGraph) -> set[int]:
    """Inactive links that can be switched on without creating a conflict."""
    v = _as_vector(m, g.L)
    if not is_feasible(v, g):
        raise ValueError("schedule is not feasible for this conflict graph")
    blocked = v | g.A[v].any(axis=0)
    return {int(l) for l in np.flatnonzero(~blocked)}


@dataclass(frozen=True, eq=False)
class ScheduleSet:
    """All independent sets of a conflict graph, sorted by integer encoding.

    ``matrix[i, l]`` is 1 when link ``l`` is active in schedule ``i``; it is the
    incidence matrix used to map schedule distributions to link throughputs.
    """

    graph: ConflictGraph
    masks: tuple[int, ...]
    matrix: np.ndarray = field(repr=False)
    _index: dict = field(repr=False)

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return (mask_to_vector(m, self.graph.L) for m in self.masks)

    def __getitem__(self, i: int) -> np.ndarray:
        return mask_to_vector(self.masks[i], self.graph.L)

    @property
    def L(self) -> int:
        return self.graph.L

    def index(self, m) -> int:
        try:
            return self._index[schedule_mask(m)]
        except KeyError:
            raise KeyError(f"schedule {m!r} is not feasible") from None

    def links(self, i: int) -> list[int]:
        return [int(l) for l in np.flatnonzero(self.matrix[i])]

    def transitions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Jump structure of the schedule chain.

        Returns ``(add_link, add_target, rem_link, rem_target)``, each of shape
        ``(len(self), L)``, padded with -1.  Row ``i`` lists the links that can
        be switched on (resp. off) from schedule ``i`` and the index of the
        schedule reached.
        """
        n, L = len(self), self.L
        add_link = np.full((n, L), -1, dtype=np.int64)
        add_target = np.full((n, L), -1, dtype=np.int64)
        rem_link = np.full((n, L), -1, dtype=np.int64)
        rem_target = np.full((n, L), -1, dtype=np.int64)
        for i, mask in enumerate(self.masks):
            a = r = 0
            for l in range(L):
                bit = 1 << l
                if mask & bit:
                    rem_link[i, r] = l
                    rem_target[i, r] = self._index[mask ^ bit]
                    r += 1
                elif (mask | bit) in self._index:
                    add_link[i, a] = l
                    add_target[i, a] = self._index[mask | bit]
                    a += 1
        return add_link, add_target, rem_link, rem_target


def enumerate_schedules(g: ConflictGraph, cap: int = DEFAULT_ENUMERATION_CAP) -> ScheduleSet:
    """Enumerate every independent set of ``g`` in canonical (integer) order."""
    if g.L > cap:
        raise GraphTooLargeError(
            f"graph too large for exhaustive enumeration: {g.L} links > cap {cap}"
        )
    nbr = g.neighbor_masks()
    found: list[int] = []

    # Branch on links in increasing order; a link can join only if none of its
    # neighbours is already in the set.
    def extend(start: int, mask: int, forbidden: int):
        found.append(mask)
        for l in range(start, g.L):
            if not (forbidden >> l) & 1:
                extend(l + 1, mask | (1 << l), forbidden | nbr[l])

    extend(0, 0, 0)
    masks = tuple(sorted(found))
    matrix = np.array([[(m >> l) & 1 for l in range(g.L)] for m in masks], dtype=np.int8)
    matrix.setflags(write=False)
    return ScheduleSet(g, masks, matrix, {m: i for i, m in enumerate(masks)})
