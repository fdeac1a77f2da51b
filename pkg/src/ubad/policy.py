"""The sequential sampling loop and its selection rules."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ubad.analysis import localization_error
from ubad.completion import Rank1Estimate, rank1_als, rank1_svd, soft_impute, split_rank1
from ubad.field import FieldModel, GridSpec, Index, NoiseModel, check_index, query, synthesize
from ubad.sampling import ObservationSet, latin_init

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]

POLICY_NAMES = ("ubad", "greedy", "passive")


class BudgetExhausted(RuntimeError):
    """No unobserved cell is left to select."""


@dataclass(frozen=True)
class PolicyKind:
    name: str
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICY_NAMES}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")

    @classmethod
    def ubad(cls, beta: float = 1.0) -> "PolicyKind":
        return cls("ubad", beta)

    @classmethod
    def greedy(cls) -> "PolicyKind":
        return cls("greedy", 0.0)

    @classmethod
    def passive(cls) -> "PolicyKind":
        return cls("passive", 0.0)

    @property
    def weight(self) -> float:
        """Weight of the uncertainty term in the acquisition score."""
        return self.beta if self.name == "ubad" else 0.0


@dataclass(frozen=True)
class SolverConfig:
    """Completion settings.

    ``lam_rel`` scales the soft-impute threshold by the top singular value of
    the masked matrix; it is ignored by the ALS solver.
    """

    kind: str = "als"
    lam_rel: float = 1e-3
    tol: float = 1e-8
    iters: int = 500

    def __post_init__(self) -> None:
        if self.kind not in ("als", "softimpute"):
            raise ValueError(f"unknown solver {self.kind!r}")
        if not self.tol > 0 or self.iters < 1 or self.lam_rel < 0:
            raise ValueError("solver tolerances must be positive")


@dataclass
class LoopState:
    obs: ObservationSet
    est: Rank1Estimate
    t: int = 0


@dataclass
class TrialTrace:
    """What one trial did.

    ``peaks[t-1]`` is the peak estimate available before the ``t``-th
    sequential sample was chosen, ``errors[t-1]`` its localization error.
    ``final_peak`` comes from the estimate after all ``m`` samples.
    """

    source: Index
    init_cells: List[Index] = field(default_factory=list)
    selected: List[Index] = field(default_factory=list)
    peaks: List[Index] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)
    init_peak: Optional[Index] = None
    init_error: float = float("nan")
    final_peak: Optional[Index] = None
    final_error: float = float("nan")
    flagged_steps: List[int] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.selected)

    def curve(self) -> np.ndarray:
        """Error after ``t`` sequential samples, ``t = 0..m``."""
        return np.array(self.errors + [self.final_error]) if self.errors else np.array([self.final_error])

    def running_sq(self) -> np.ndarray:
        """``(1/k) sum_{tau<=k} err_tau^2`` for ``k = 1..m``."""
        e = np.asarray(self.errors, dtype=float)
        return np.cumsum(e * e) / np.arange(1, e.size + 1)

    def rows(self, trial_id: int = 0):
        for t, (sel, peak, err) in enumerate(zip(self.selected, self.peaks, self.errors), start=1):
            yield [trial_id, t, sel[0], sel[1], peak[0], peak[1], repr(float(err))]

    def to_csv(self, path, trial_id: int = 0) -> None:
        write_traces(path, [self], start_id=trial_id)


TRACE_HEADER = ["trial_id", "t", "i_t", "j_t", "s_hat_i", "s_hat_j", "error"]


def write_traces(path, traces: Sequence[TrialTrace], start_id: int = 0) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for k, tr in enumerate(traces):
            w.writerows(tr.rows(start_id + k))


def peak_estimate(est: Rank1Estimate) -> Index:
    """Cell maximizing ``|u_i v_j|``; the first one in row-major order on ties."""
    i, j = np.unravel_index(np.argmax(np.abs(np.outer(est.u_hat, est.v_hat))), (est.n, est.n))
    return int(i) + 1, int(j) + 1


def score_matrix(est: Rank1Estimate, beta: float) -> np.ndarray:
    u, v = est.u_hat, est.v_hat
    S = np.abs(np.outer(u, v))
    if beta:
        S = S + beta * ((u * u)[:, None] + (v * v)[None, :])
    return S


def ubad_score(est: Rank1Estimate, idx: Index, beta: float = 1.0) -> float:
    """``|u_i v_j| + beta (u_i^2 + v_j^2)``."""
    i, j = check_index(idx, est.n)
    ui, vj = est.u_hat[i - 1], est.v_hat[j - 1]
    return float(abs(ui * vj) + beta * (ui * ui + vj * vj))


def select_next(kind: PolicyKind, state: LoopState, rng: Optional[np.random.Generator] = None) -> Index:
    free = ~state.obs.mask
    n = state.obs.n
    if not free.any():
        raise BudgetExhausted("every cell is already observed")
    if kind.name == "passive":
        if rng is None:
            raise ValueError("passive selection needs a random stream")
        cells = np.flatnonzero(free)
        flat = int(cells[rng.integers(cells.size)])
    else:
        S = np.where(free, score_matrix(state.est, kind.weight), -np.inf)
        flat = int(np.argmax(S))
    i, j = divmod(flat, n)
    return i + 1, j + 1


def complete(obs: ObservationSet, solver: SolverConfig) -> Rank1Estimate:
    """Completion followed by rank-1 truncation."""
    if solver.kind == "als":
        return rank1_als(obs, iters=solver.iters, tol=solver.tol)
    Y = obs.masked_matrix()
    lam = solver.lam_rel * rank1_svd(Y, solver.tol, solver.iters).sigma
    res = soft_impute(obs, lam=lam, iters=solver.iters, tol=solver.tol)
    est = split_rank1(rank1_svd(res.matrix, solver.tol, solver.iters))
    if not res.converged:
        est = Rank1Estimate(est.u_hat, est.v_hat, converged=False)
    return est


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def initial_design(n: int, rng: np.random.Generator, init: str = "latin") -> List[Index]:
    if init == "latin":
        return latin_init(n, rng)
    if init == "uniform":
        cells = rng.choice(n * n, size=n, replace=False)
        return [(int(k) // n + 1, int(k) % n + 1) for k in cells]
    raise ValueError(f"unknown initial design {init!r}")


def run_trial(
    g: GridSpec,
    f: FieldModel,
    noise: NoiseModel,
    kind: PolicyKind,
    m: int,
    solver: Optional[SolverConfig] = None,
    seed: SeedLike = None,
    init_seed: SeedLike = None,
    init: str = "latin",
) -> TrialTrace:
    """One run of the active peak-detection loop with ``m`` sequential samples.

    ``init_seed`` drives the initial design and defaults to ``seed``; ``seed``
    drives measurement noise and passive selections. Giving several policies
    the same ``init_seed`` makes them start from the same design.
    """
    solver = solver or SolverConfig()
    n = g.n
    if m < 0 or m > n * n - n:
        raise ValueError(f"budget m={m} outside [0, n^2 - n] for n={n}")
    H = synthesize(g, f)
    rng = as_generator(seed)
    init_rng = rng if init_seed is None else as_generator(init_seed)

    obs = ObservationSet(n)
    design = initial_design(n, init_rng, init)
    for idx in design:
        obs.add(idx, query(H, idx, noise, rng))
    Y = obs.masked_matrix()
    est = split_rank1(rank1_svd(Y, solver.tol, solver.iters))

    trace = TrialTrace(source=H.mode, init_cells=design)
    trace.init_peak = peak_estimate(est)
    trace.init_error = localization_error(trace.init_peak, H.mode, g)
    state = LoopState(obs, est, 0)
    for t in range(1, m + 1):
        peak = peak_estimate(state.est)
        trace.peaks.append(peak)
        trace.errors.append(localization_error(peak, H.mode, g))
        idx = select_next(kind, state, rng)
        state.obs.add(idx, query(H, idx, noise, rng))
        trace.selected.append(idx)
        state.est = complete(state.obs, solver)
        state.t = t
        if not state.est.converged:
            trace.flagged_steps.append(t)
    trace.final_peak = peak_estimate(state.est)
    trace.final_error = localization_error(trace.final_peak, H.mode, g)
    return trace
