"""Rank-1 estimation from partially observed matrices.

Three solvers live here: a power-iteration rank-1 SVD, masked rank-1
alternating least squares (the default completion step) and soft-impute
for nuclear-norm regularized completion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree

from ubad.sampling import ObservationSet

_RESTART_SEED = 0x5EED


@dataclass(frozen=True)
class SvdTriple:
    sigma: float
    u: np.ndarray
    v: np.ndarray
    converged: bool = True
    iters: int = 0


@dataclass(frozen=True)
class Rank1Estimate:
    """Factors of the rank-1 estimate ``u_hat v_hat^T``.

    ``degenerate_rows`` / ``degenerate_cols`` list 1-based indices whose
    factor entry was zero-filled because nothing constrains it.
    """

    u_hat: np.ndarray
    v_hat: np.ndarray
    converged: bool = True
    degenerate_rows: Tuple[int, ...] = ()
    degenerate_cols: Tuple[int, ...] = ()
    objective_history: Tuple[float, ...] = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return self.u_hat.shape[0]

    def matrix(self) -> np.ndarray:
        return np.outer(self.u_hat, self.v_hat)

    @property
    def flagged(self) -> bool:
        return bool(not self.converged or self.degenerate_rows or self.degenerate_cols)


def _orient(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    su = u.sum()
    if su < 0 or (su == 0 and v.sum() < 0):
        return -u, -v
    return u, v


def rank1_svd(M, tol: float = 1e-8, max_iters: int = 500) -> SvdTriple:
    """Dominant singular triple by power iteration on ``M^T M``.

    Starts from the normalized all-ones vector. On exit ``M v = sigma u``
    holds exactly and convergence means ``||M^T u - sigma v|| <= tol * sigma``.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if not tol > 0:
        raise ValueError("tol must be positive")
    n_rows, n_cols = M.shape
    frob = np.linalg.norm(M)
    if frob == 0:
        u = np.zeros(n_rows)
        u[0] = 1.0
        v = np.zeros(n_cols)
        v[0] = 1.0
        return SvdTriple(0.0, u, v, True, 0)

    triple = _power(M, np.full(n_cols, 1.0 / np.sqrt(n_cols)), tol, max_iters)
    if triple.sigma <= 1e-12 * frob:
        # all-ones start orthogonal to the dominant right subspace
        rng = np.random.default_rng(_RESTART_SEED)
        start = rng.standard_normal(n_cols)
        triple = _power(M, start / np.linalg.norm(start), tol, max_iters)
    u, v = _orient(triple.u, triple.v)
    return SvdTriple(triple.sigma, u, v, triple.converged, triple.iters)


def _power(M: np.ndarray, v: np.ndarray, tol: float, max_iters: int) -> SvdTriple:
    best = None
    for it in range(1, max_iters + 1):
        w = M @ v
        sigma = np.linalg.norm(w)
        if sigma == 0:
            return SvdTriple(0.0, np.zeros(M.shape[0]), v, False, it)
        u = w / sigma
        z = M.T @ u
        resid = np.linalg.norm(z - sigma * v)
        best = SvdTriple(float(sigma), u, v, resid <= tol * sigma, it)
        if best.converged:
            return best
        v = z / np.linalg.norm(z)
    return best


def _components(r: np.ndarray, c: np.ndarray, n: int) -> Tuple[int, np.ndarray, np.ndarray]:
    """Connected components of the bipartite row/column graph of the observed cells."""
    graph = coo_matrix((np.ones(r.size), (r, n + c)), shape=(2 * n, 2 * n))
    ncomp, labels = connected_components(graph, directed=False)
    return ncomp, labels[:n], labels[n:]


def _block_power(r, c, y, n, row_lab, col_lab, ncomp, tol, max_iters):
    """Rank-1 SVD of every connected block of the masked matrix at once.

    The masked matrix is block diagonal over the components, so power
    iteration with per-block normalization is independent power iteration
    on each block.
    """
    def block_norm(x, lab):
        return np.sqrt(np.bincount(lab, x * x, minlength=ncomp))

    v = np.zeros(n)
    v[np.unique(c)] = 1.0
    nv = block_norm(v, col_lab)
    v = np.divide(v, nv[col_lab], out=np.zeros(n), where=nv[col_lab] > 0)
    u = np.zeros(n)
    sigma = np.zeros(ncomp)
    converged = False
    for _ in range(max_iters):
        w = np.bincount(r, y * v[c], minlength=n)
        sigma = block_norm(w, row_lab)
        u = np.divide(w, sigma[row_lab], out=np.zeros(n), where=sigma[row_lab] > 0)
        z = np.bincount(c, y * u[r], minlength=n)
        resid = block_norm(z - sigma[col_lab] * v, col_lab)
        if np.all(resid <= tol * sigma):
            converged = True
            break
        nz = block_norm(z, col_lab)
        v = np.divide(z, nz[col_lab], out=np.zeros(n), where=nz[col_lab] > 0)
    return sigma, u, v, converged


def _tree_init(r, c, y, n, row_lab):
    """Exact rank-1 fit on a maximum-|Y| spanning forest of the observed cells.

    Noiseless rank-1 data is then fitted exactly on every cycle too; noisy
    data gets a start built from its largest, most reliable entries.
    """
    Y = np.zeros((n, n))
    Y[r, c] = y
    mag = np.abs(y)
    w = (mag.max() - mag) + 1.0
    graph = coo_matrix((w, (r, n + c)), shape=(2 * n, 2 * n)).tocsr()
    tree = minimum_spanning_tree(graph).tocoo()
    # one traversal for the whole forest: a virtual node 2n links to each
    # component's root, the row of its largest |Y| entry
    comp = row_lab[r]
    by_mag = np.argsort(-mag, kind="stable")
    _, first = np.unique(comp[by_mag], return_index=True)
    roots = r[by_mag[first]]
    hub = 2 * n
    rows = np.concatenate([tree.row, np.full(roots.size, hub)])
    cols = np.concatenate([tree.col, roots])
    forest = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(hub + 1, hub + 1)).tocsr()
    order, pred = breadth_first_order(forest, hub, directed=False, return_predecessors=True)
    x = np.zeros(2 * n)
    x[roots] = np.sqrt(mag[by_mag[first]])
    for node in order[1:]:
        p = pred[node]
        if p == hub:
            continue
        val = Y[p, node - n] if p < n else Y[node, p - n]
        x[node] = val / x[p] if x[p] != 0 else 0.0
    return x[:n], x[n:]


def rank1_als(
    obs: ObservationSet,
    n: Optional[int] = None,
    iters: int = 500,
    tol: float = 1e-8,
    init: str = "tree",
) -> Rank1Estimate:
    """Masked rank-1 least squares ``min sum_Omega (u_i v_j - Y_ij)^2`` by alternating minimization.

    The observed cells split the rows and columns into connected blocks, and
    the objective is invariant under rescaling ``(u_B * a, v_B / a)`` of any
    block ``B``; after the sweeps each block is rebalanced to
    ``||u_B|| = ||v_B||`` and oriented so ``sum(u_B) >= 0``. Rows or columns
    without observations get a zero factor and are flagged.

    ``init="tree"`` starts from an exact fit on a maximum-|Y| spanning forest;
    ``init="svd"`` starts every block from its rank-1 SVD split as
    ``sqrt(sigma) u, sqrt(sigma) v``.
    """
    n = obs.n if n is None else int(n)
    if n != obs.n:
        raise ValueError(f"grid size {n} does not match observation set ({obs.n})")
    if len(obs) == 0:
        raise ValueError("rank1_als needs at least one observation")
    r, c, y = obs.arrays()
    ncomp, row_lab, col_lab = _components(r, c, n)

    if init == "tree":
        u, v = _tree_init(r, c, y, n, row_lab)
    elif init == "svd":
        sigma, u, v, _ = _block_power(r, c, y, n, row_lab, col_lab, ncomp, tol, iters)
        scale = np.sqrt(sigma)
        u = u * scale[row_lab]
        v = v * scale[col_lab]
    else:
        raise ValueError(f"unknown ALS init {init!r}")

    def objective(u, v):
        e = u[r] * v[c] - y
        return float(e @ e)

    floor = 1e-28 * max(float(y @ y), np.finfo(float).tiny)
    obj = objective(u, v)
    history = [obj]
    converged = obj <= floor
    for _ in range(iters):
        if converged:
            break
        den = np.bincount(r, v[c] ** 2, minlength=n)
        num = np.bincount(r, y * v[c], minlength=n)
        u = np.divide(num, den, out=np.zeros(n), where=den > 0)
        den = np.bincount(c, u[r] ** 2, minlength=n)
        num = np.bincount(c, y * u[r], minlength=n)
        v = np.divide(num, den, out=np.zeros(n), where=den > 0)
        new = objective(u, v)
        history.append(new)
        converged = new <= floor or (obj - new) < tol * obj
        obj = new

    nu = np.sqrt(np.bincount(row_lab, u * u, minlength=ncomp))
    nv = np.sqrt(np.bincount(col_lab, v * v, minlength=ncomp))
    ok = (nu > 0) & (nv > 0)
    f = np.ones(ncomp)
    f[ok] = np.sqrt(nv[ok] / nu[ok])
    u = u * f[row_lab]
    v = np.divide(v, f[col_lab])
    su = np.bincount(row_lab, u, minlength=ncomp)
    sv = np.bincount(col_lab, v, minlength=ncomp)
    flip = np.where((su < 0) | ((su == 0) & (sv < 0)), -1.0, 1.0)
    u = u * flip[row_lab]
    v = v * flip[col_lab]

    return Rank1Estimate(
        u_hat=u,
        v_hat=v,
        converged=bool(converged),
        degenerate_rows=tuple(int(k) + 1 for k in np.flatnonzero(u == 0)),
        degenerate_cols=tuple(int(k) + 1 for k in np.flatnonzero(v == 0)),
        objective_history=tuple(history),
    )


def split_rank1(triple: SvdTriple) -> Rank1Estimate:
    """``sqrt(sigma) u, sqrt(sigma) v`` so the factors multiply back to the rank-1 SVD."""
    s = np.sqrt(triple.sigma)
    return Rank1Estimate(u_hat=s * triple.u, v_hat=s * triple.v, converged=triple.converged)


@dataclass(frozen=True)
class SoftImputeResult:
    matrix: np.ndarray
    converged: bool
    iters: int
    lam: float


def svt(M: np.ndarray, lam: float) -> np.ndarray:
    """Singular value soft-thresholding."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - lam, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def soft_impute(
    obs: ObservationSet,
    n: Optional[int] = None,
    lam: Optional[float] = None,
    iters: int = 500,
    tol: float = 1e-8,
    warm_start: Optional[np.ndarray] = None,
) -> SoftImputeResult:
    """Nuclear-norm regularized completion, ``M <- SVT_lam(P_Omega(Y) + P_Omega^c(M))``.

    Starts from ``warm_start`` (zero by default). ``lam`` defaults to ``1e-3``
    times the top singular value of the masked matrix.
    """
    n = obs.n if n is None else int(n)
    if len(obs) == 0:
        raise ValueError("soft_impute needs at least one observation")
    Y = obs.masked_matrix()
    mask = obs.mask
    if lam is None:
        lam = 1e-3 * float(np.linalg.norm(Y, 2))
    if lam < 0:
        raise ValueError("lam must be non-negative")
    M = np.zeros((n, n)) if warm_start is None else np.array(warm_start, dtype=float)
    if M.shape != (n, n):
        raise ValueError(f"warm start has shape {M.shape}, expected {(n, n)}")
    for it in range(1, iters + 1):
        new = svt(np.where(mask, Y, M), lam)
        step = np.linalg.norm(new - M)
        M = new
        if step < tol * max(1.0, np.linalg.norm(M)):
            return SoftImputeResult(M, True, it, lam)
    return SoftImputeResult(M, False, iters, lam)


def soft_impute_path(
    obs: ObservationSet,
    lams,
    iters: int = 500,
    tol: float = 1e-8,
) -> SoftImputeResult:
    """Soft-impute along a decreasing ``lams`` sequence, warm-starting each stage from the previous one.

    Small thresholds converge far faster this way than from zero. ``iters``
    applies per stage; the result reports the last stage.
    """
    lams = [float(x) for x in lams]
    if not lams:
        raise ValueError("need at least one threshold")
    res = None
    for lam in lams:
        res = soft_impute(obs, lam=lam, iters=iters, tol=tol, warm_start=None if res is None else res.matrix)
    return res


def subspace_gap(truth: SvdTriple, estimate: SvdTriple) -> float:
    """``sin^2`` of the left plus right principal angles, in ``[0, 2]``."""
    cu = float(truth.u @ estimate.u)
    cv = float(truth.v @ estimate.v)
    return float(np.clip((1.0 - cu * cu) + (1.0 - cv * cv), 0.0, 2.0))
