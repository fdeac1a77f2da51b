"""Grid geometry, synthetic energy fields and noisy point queries.

Indices exposed by this module are 1-based ``(i, j)`` pairs; arrays are
ordinary 0-based numpy arrays, so cell ``(i, j)`` lives at ``H[i - 1, j - 1]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

Index = Tuple[int, int]


@dataclass(frozen=True)
class GridSpec:
    """Square region ``[-L/2, L/2]^2`` split into ``n x n`` equal cells."""

    L: float
    n: int

    def __post_init__(self) -> None:
        if not self.L > 0:
            raise ValueError(f"side length must be positive, got {self.L}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid count must be a positive integer, got {self.n}")

    @property
    def pitch(self) -> float:
        return self.L / self.n

    def coords(self) -> np.ndarray:
        """1-D cell-center coordinates shared by both axes."""
        k = np.arange(1, self.n + 1)
        return -self.L / 2 + self.L * (2 * k - 1) / (2 * self.n)

    def center(self, idx: Index) -> np.ndarray:
        i, j = check_index(idx, self.n)
        c = self.coords()
        return np.array([c[i - 1], c[j - 1]])

    def snap(self, point) -> Index:
        """Nearest cell to a physical point (first index wins on ties)."""
        c = self.coords()
        x, y = point
        return int(np.argmin(np.abs(c - x))) + 1, int(np.argmin(np.abs(c - y))) + 1


class FieldKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class FieldModel:
    """Single-source energy field.

    ``spread`` is the variance ``sigma^2`` for a Gaussian field and the scale
    ``lambda`` for a Laplacian one.
    """

    kind: FieldKind
    spread: float
    source_index: Index
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FieldKind(self.kind))
        object.__setattr__(self, "source_index", tuple(int(v) for v in self.source_index))
        if not self.spread > 0:
            raise ValueError(f"spread must be positive, got {self.spread}")
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if len(self.source_index) != 2 or min(self.source_index) < 1:
            raise ValueError(f"bad source index {self.source_index}")


@dataclass(frozen=True)
class NoiseModel:
    sigma_n: float = 0.0

    def __post_init__(self) -> None:
        if not self.sigma_n >= 0:
            raise ValueError(f"noise level must be non-negative, got {self.sigma_n}")


@dataclass(frozen=True)
class EnergyMatrix:
    H: np.ndarray
    mode: Index

    @property
    def n(self) -> int:
        return self.H.shape[0]


def check_index(idx: Index, n: int) -> Index:
    i, j = int(idx[0]), int(idx[1])
    if not (1 <= i <= n and 1 <= j <= n):
        raise IndexError(f"index {(i, j)} outside the {n}x{n} grid")
    return i, j


def grid_centers(g: GridSpec) -> np.ndarray:
    """Cell centers as an ``(n, n, 2)`` array; ``out[i-1, j-1]`` is cell ``(i, j)``."""
    c = g.coords()
    X, Y = np.meshgrid(c, c, indexing="ij")
    return np.stack([X, Y], axis=-1)


def eval_field(f: FieldModel, x, s) -> np.ndarray:
    """Energy at point(s) ``x`` from a source at ``s``; broadcasts over leading axes."""
    d = np.asarray(x, dtype=float) - np.asarray(s, dtype=float)
    if f.kind is FieldKind.GAUSSIAN:
        return f.amplitude * np.exp(-np.sum(d * d, axis=-1) / (2.0 * f.spread))
    return f.amplitude * np.exp(-np.sum(np.abs(d), axis=-1) / f.spread)


def synthesize(g: GridSpec, f: FieldModel) -> EnergyMatrix:
    mode = check_index(f.source_index, g.n)
    # Both kernels factor across the two axes; building H as an outer product
    # keeps it exactly rank 1 instead of rank 1 up to rounding.
    c = g.coords()
    sx, sy = c[mode[0] - 1], c[mode[1] - 1]
    if f.kind is FieldKind.GAUSSIAN:
        a = np.exp(-((c - sx) ** 2) / (2.0 * f.spread))
        b = np.exp(-((c - sy) ** 2) / (2.0 * f.spread))
    else:
        a = np.exp(-np.abs(c - sx) / f.spread)
        b = np.exp(-np.abs(c - sy) / f.spread)
    H = f.amplitude * np.outer(a, b)
    return EnergyMatrix(H=H, mode=mode)


def query(H: EnergyMatrix, idx: Index, noise: NoiseModel, rng: np.random.Generator) -> float:
    """One noisy measurement of cell ``idx``."""
    i, j = check_index(idx, H.n)
    value = float(H.H[i - 1, j - 1])
    if noise.sigma_n == 0:
        return value
    return value + float(rng.normal(0.0, noise.sigma_n))


def _mode_axis(M: np.ndarray) -> Optional[int]:
    """Smallest 0-based k with every column non-decreasing up to k and non-increasing after."""
    d = np.diff(M, axis=0)
    n = M.shape[0]
    up = np.ones(n, dtype=bool)
    down = np.ones(n, dtype=bool)
    if n > 1:
        rising = np.all(d >= 0, axis=1)
        falling = np.all(d <= 0, axis=1)
        # up[k]: all steps before k rise; down[k]: all steps from k on fall
        up[1:] = np.cumprod(rising).astype(bool)
        down[:-1] = np.cumprod(falling[::-1])[::-1].astype(bool)
    ok = np.flatnonzero(up & down)
    return int(ok[0]) if ok.size else None


def verify_unimodal(M) -> Tuple[bool, Optional[Index]]:
    """Check matrix unimodality; returns ``(is_unimodal, mode)`` with a 1-based mode."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        return False, None
    i = _mode_axis(M)
    j = _mode_axis(M.T)
    if i is None or j is None:
        return False, None
    return True, (i + 1, j + 1)
