"""Latin-squares initial design and the growing observation set."""

from __future__ import annotations

import csv
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ubad.field import Index, check_index


class DuplicateObservation(ValueError):
    """A cell was observed twice; the selection policy broke its contract."""


def latin_init(n: int, rng: np.random.Generator) -> List[Index]:
    """One transversal of a random Latin square: cells ``(i, pi(i))`` for a uniform permutation ``pi``.

    Every row and every column is hit exactly once and each cell has
    marginal probability ``1/n``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    perm = rng.permutation(n)
    return [(i + 1, int(perm[i]) + 1) for i in range(n)]


class ObservationSet:
    """Observed cells and their measured values, in insertion order."""

    def __init__(self, n: int, entries: Optional[Dict[Index, float]] = None):
        if int(n) != n or n < 1:
            raise ValueError(f"n must be a positive integer, got {n}")
        self.n = int(n)
        self._entries: Dict[Index, float] = {}
        self._mask = np.zeros((self.n, self.n), dtype=bool)
        for idx, value in (entries or {}).items():
            self.add(idx, value)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, idx) -> bool:
        return tuple(idx) in self._entries

    def __getitem__(self, idx) -> float:
        return self._entries[tuple(idx)]

    def __iter__(self) -> Iterator[Index]:
        return iter(self._entries)

    def items(self):
        return self._entries.items()

    def add(self, idx: Index, value: float) -> "ObservationSet":
        idx = check_index(idx, self.n)
        if idx in self._entries:
            raise DuplicateObservation(f"cell {idx} is already observed")
        self._entries[idx] = float(value)
        self._mask[idx[0] - 1, idx[1] - 1] = True
        return self

    @property
    def mask(self) -> np.ndarray:
        """Boolean ``n x n`` membership mask (a copy)."""
        return self._mask.copy()

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """0-based row indices, column indices and values, in insertion order."""
        if not self._entries:
            empty = np.zeros(0, dtype=int)
            return empty, empty.copy(), np.zeros(0)
        idx = np.array(list(self._entries), dtype=int) - 1
        vals = np.fromiter(self._entries.values(), dtype=float, count=len(self._entries))
        return idx[:, 0], idx[:, 1], vals

    def complement(self) -> Iterator[Index]:
        """Unobserved cells in lexicographic order."""
        for i, j in zip(*np.nonzero(~self._mask)):
            yield int(i) + 1, int(j) + 1

    def masked_matrix(self) -> np.ndarray:
        """Observed values in place, zeros elsewhere."""
        M = np.zeros((self.n, self.n))
        r, c, v = self.arrays()
        M[r, c] = v
        return M

    def copy(self) -> "ObservationSet":
        return ObservationSet(self.n, dict(self._entries))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "value"])
            for (i, j), v in self._entries.items():
                w.writerow([i, j, repr(v)])

    @classmethod
    def from_csv(cls, path, n: int) -> "ObservationSet":
        obs = cls(n)
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                obs.add((int(row["i"]), int(row["j"])), float(row["value"]))
        return obs


def add_observation(obs: ObservationSet, idx: Index, value: float) -> ObservationSet:
    return obs.add(idx, value)


def complement(obs: ObservationSet) -> Iterator[Index]:
    return obs.complement()


def masked_matrix(obs: ObservationSet) -> np.ndarray:
    return obs.masked_matrix()
