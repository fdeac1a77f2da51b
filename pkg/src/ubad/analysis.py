"""Localization metrics, computable error bounds and Monte-Carlo lemma checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ubad.completion import rank1_svd, subspace_gap
from ubad.field import EnergyMatrix, FieldKind, GridSpec, Index, check_index
from ubad.sampling import latin_init


def localization_error(s_hat: Index, s_star: Index, g: GridSpec) -> float:
    """Physical distance between two cell centers."""
    return float(np.linalg.norm(g.center(s_hat) - g.center(s_star)))


@dataclass(frozen=True)
class GapTable:
    """Row and column sub-optimality gaps of a unimodal matrix.

    ``delta_u[k, l] = Y[i*, l] - Y[k, l]`` and ``delta_v[k, l] = Y[k, j*] - Y[k, l]``
    (0-based storage of 1-based cells).
    """

    delta_u: np.ndarray
    delta_v: np.ndarray
    b: float


def gap_table(H: EnergyMatrix) -> GapTable:
    Y = np.asarray(H.H, dtype=float)
    i, j = check_index(H.mode, Y.shape[0])
    return GapTable(
        delta_u=Y[i - 1][None, :] - Y,
        delta_v=Y[:, j - 1][:, None] - Y,
        b=float(Y.max()),
    )


@dataclass(frozen=True)
class BoundReport:
    value: float
    excluded_terms: int = 0
    terms: Optional[np.ndarray] = None


def log2m_over_m(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.log(m) ** 2 / m


def _index_dist2(n: int, mode: Index) -> np.ndarray:
    k = np.arange(1, n + 1)
    return (k[:, None] - mode[0]) ** 2 + (k[None, :] - mode[1]) ** 2


def theorem1_bound(H: EnergyMatrix, m: int, C_const: float = 1.0) -> BoundReport:
    """Gap-weighted regret-style bound on the averaged squared localization error.

    Sums ``gamma_u / du^2 * gamma_v / dv^2 * ||c_kl - c*||^2`` over cells with
    both gaps strictly positive, times ``C log^2(m) / m``. Zero-gap cells are
    skipped and counted in ``excluded_terms``.
    """
    if m < 2:
        raise ValueError(f"m must be at least 2, got {m}")
    Y = np.asarray(H.H, dtype=float)
    n = Y.shape[0]
    svd = rank1_svd(Y, tol=1e-12, max_iters=5000)
    gaps = gap_table(H)
    gamma_u = svd.u[:, None] + 2 * gaps.b * gaps.delta_u
    gamma_v = svd.v[None, :] + 2 * gaps.b * gaps.delta_v
    keep = (gaps.delta_u > 0) & (gaps.delta_v > 0)
    terms = np.zeros_like(Y)
    du, dv = gaps.delta_u[keep], gaps.delta_v[keep]
    terms[keep] = gamma_u[keep] / du**2 * gamma_v[keep] / dv**2 * _index_dist2(n, H.mode)[keep]
    value = C_const * float(terms.sum()) * float(log2m_over_m(m))
    return BoundReport(value=value, excluded_terms=int(keep.size - keep.sum()), terms=terms)


def corollary_bound(
    kind: FieldKind,
    spread: float,
    g: GridSpec,
    s_star: Index,
    m: int,
    C_const: float = 1.0,
) -> BoundReport:
    """Closed-form cumulative-error bound for Gaussian (``spread = sigma^2``) or Laplacian (``spread = gamma``) fields.

    Distances are in index space, ``c_kl = (k, l)``.
    """
    if m < 2:
        raise ValueError(f"m must be at least 2, got {m}")
    if not spread > 0:
        raise ValueError("spread must be positive")
    kind = FieldKind(kind)
    n = g.n
    d2 = _index_dist2(n, check_index(s_star, n)).astype(float)
    logm2 = np.log(m) ** 2
    if kind is FieldKind.GAUSSIAN:
        terms = C_const * spread * logm2 * d2 / np.exp(-d2 / (2 * n * spread))
    else:
        terms = C_const * spread * logm2 * d2 / np.exp(-np.sqrt(d2) / (2 * n * spread))
    return BoundReport(value=float(terms.sum()), excluded_terms=0, terms=terms)


def _spectral_norm(M: np.ndarray) -> float:
    return rank1_svd(M, tol=1e-12, max_iters=5000).sigma


def lemma1_bound(H: EnergyMatrix, scaled: bool = True) -> float:
    """``1.01 (1 - 1/n) sigma ||u||_1 ||v||_2`` from the rank-1 SVD ``sigma u v^T`` of ``H``.

    ``scaled=False`` drops the ``sigma`` factor.
    """
    Y = np.asarray(H.H, dtype=float)
    n = Y.shape[0]
    svd = rank1_svd(Y, tol=1e-12, max_iters=5000)
    bound = 1.01 * (1 - 1 / n) * np.abs(svd.u).sum() * np.linalg.norm(svd.v)
    return float(bound * svd.sigma) if scaled else float(bound)


@dataclass(frozen=True)
class LemmaCheck:
    bound: float
    empirical_rate: float
    residuals: np.ndarray


def lemma1_check(H: EnergyMatrix, trials: int, rng: np.random.Generator, scaled: bool = True) -> LemmaCheck:
    """Fraction of Latin-squares draws whose residual ``||H - H_Omega||_2`` stays under the lemma's bound."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    Y = np.asarray(H.H, dtype=float)
    n = Y.shape[0]
    bound = lemma1_bound(H, scaled)
    res = np.empty(trials)
    for k in range(trials):
        R = Y.copy()
        for i, j in latin_init(n, rng):
            R[i - 1, j - 1] = 0.0
        res[k] = _spectral_norm(R)
    return LemmaCheck(bound=bound, empirical_rate=float(np.mean(res <= bound)), residuals=res)


@dataclass(frozen=True)
class SubspaceCheck:
    empirical_rate: float
    valid_draws: int
    invalid_draws: int


def subspace_rhs(norm_y: float, norm_resid: float) -> float:
    return 2 * norm_resid**2 / (norm_y - norm_resid) ** 2


def subspace_check(H: EnergyMatrix, trials: int, rng: np.random.Generator) -> SubspaceCheck:
    """How often the sin^2 subspace gap after Latin-squares sampling obeys the Wedin-type bound.

    Draws with ``||H - H_Omega|| >= ||H||`` leave the bound undefined and are
    counted as invalid.
    """
    Y = np.asarray(H.H, dtype=float)
    n = Y.shape[0]
    truth = rank1_svd(Y, tol=1e-12, max_iters=5000)
    held = valid = 0
    for _ in range(trials):
        mask = np.zeros_like(Y, dtype=bool)
        for i, j in latin_init(n, rng):
            mask[i - 1, j - 1] = True
        Y_omega = np.where(mask, Y, 0.0)
        e = _spectral_norm(Y - Y_omega)
        if e >= truth.sigma:
            continue
        valid += 1
        gap = subspace_gap(truth, rank1_svd(Y_omega, tol=1e-12, max_iters=5000))
        held += gap <= subspace_rhs(truth.sigma, e)
    rate = held / valid if valid else float("nan")
    return SubspaceCheck(empirical_rate=float(rate), valid_draws=valid, invalid_draws=trials - valid)


@dataclass(frozen=True)
class Aggregate:
    """Per-step mean and standard error over trials.

    ``mean``/``stderr`` index ``t = 0..m`` sequential samples; ``running_mean``
    indexes ``k = 1..m`` of ``(1/k) sum_{tau<=k} err_tau^2``.
    """

    mean: np.ndarray
    stderr: np.ndarray
    running_mean: np.ndarray
    running_stderr: np.ndarray
    trials: int

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def final_stderr(self) -> float:
        return float(self.stderr[-1])


def mean_stderr(X: np.ndarray):
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    if X.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, X.std(axis=0, ddof=1) / np.sqrt(X.shape[0])


def aggregate(traces: Sequence) -> Aggregate:
    if not traces:
        raise ValueError("no traces to aggregate")
    lengths = {tr.m for tr in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have mismatched lengths {sorted(lengths)}")
    mean, se = mean_stderr(np.stack([tr.curve() for tr in traces]))
    rmean, rse = mean_stderr(np.stack([tr.running_sq() for tr in traces]))
    return Aggregate(mean, se, rmean, rse, len(traces))


def fit_log2_over_m(ms, values):
    """Least-squares ``a`` for ``values ~ a log^2(m)/m`` and its coefficient of determination."""
    ms = np.asarray(ms, dtype=float)
    y = np.asarray(values, dtype=float)
    g = log2m_over_m(ms)
    a = float(g @ y / (g @ g))
    ss_res = float(np.sum((y - a * g) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return a, r2
