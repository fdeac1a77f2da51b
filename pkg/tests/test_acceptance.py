"""Acceptance suite: one check per criterion, each reporting a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python tests/test_acceptance.py``.
"""

import dataclasses
import functools
import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from ubad.analysis import (
    corollary_bound,
    fit_log2_over_m,
    gap_table,
    lemma1_check,
    log2m_over_m,
    theorem1_bound,
)
from ubad.checks import run_all
from ubad.completion import rank1_als, rank1_svd
from ubad.field import FieldModel, GridSpec, synthesize
from ubad.harness import preset, run_experiment
from ubad.policy import peak_estimate
from ubad.sampling import ObservationSet

pytestmark = pytest.mark.slow

REPORT = []


def _record(name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    REPORT.append(line)
    return passed, line


@functools.lru_cache(maxsize=None)
def _run(preset_name, policies=None):
    cfg = preset(preset_name)
    if policies is not None:
        cfg = dataclasses.replace(cfg, policies=list(policies))
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    return res, time.perf_counter() - t0


def _final(res, policy, k=0):
    a = res.cell(policy, k).aggregate
    return a.final_mean, a.final_stderr


# --- criteria ------------------------------------------------------------------


def criterion_1():
    res, secs = _run("fig1_small")
    (u, su), (g, sg), (p, sp) = (_final(res, q) for q in ("ubad", "greedy", "passive"))
    se_diff = math.hypot(su, sp)
    ok = u <= g <= p and (p - u) > se_diff
    detail = (f"final error UBAD {u:.4f}+-{su:.4f}, Greedy {g:.4f}+-{sg:.4f}, Passive {p:.4f}+-{sp:.4f}; "
              f"need UBAD<=Greedy<=Passive and Passive-UBAD={p - u:.4f} > SE {se_diff:.4f} ({secs:.0f}s)")
    return _record("C1 policy ordering", ok, detail)


def criterion_2():
    res, _ = _run("fig1_small")
    run = res.cell("ubad").aggregate.running_mean
    ms = np.arange(10, 51)
    a, r2 = fit_log2_over_m(ms, run[ms - 1])
    cfg = preset("fig1_small")
    H = synthesize(cfg.grid_spec(), cfg.field_model(1.0))
    mvals = [2, 10, 50, 100, 200, 1000]
    ratios = np.array([theorem1_bound(H, m).value / float(log2m_over_m(m)) for m in mvals])
    spread = float(np.max(np.abs(ratios / ratios[0] - 1)))
    ok = r2 >= 0.8 and spread <= 1e-12
    return _record("C2 error decay shape", ok,
                   f"fit a={a:.4f}, R^2={r2:.3f} (need >=0.8); bound/(log^2 m/m) max rel deviation {spread:.1e} (need <=1e-12)")


def criterion_3():
    res, secs = _run("fig2_left_small", ("ubad",))
    cfg = preset("fig2_left_small")
    spreads = cfg.field.spreads
    stats = [_final(res, "ubad", k) for k in range(len(spreads))]
    means = np.array([m for m, _ in stats])
    ses = np.array([s for _, s in stats])
    pair_ok = all(means[k + 1] >= means[k] - math.hypot(ses[k], ses[k + 1]) for k in range(len(means) - 1))
    rho = spearmanr(spreads, means).statistic if np.ptp(means) > 0 else float("nan")
    g = cfg.grid_spec()
    bounds = [corollary_bound(cfg.field.kind, s, g, cfg.source_index(), cfg.m, cfg.bounds.C_const).value
              for s in spreads]
    bound_ok = all(b >= a for a, b in zip(bounds, bounds[1:]))
    ok = pair_ok and rho >= 0.8 and bound_ok
    detail = (f"UBAD means {np.round(means, 4).tolist()} +- {np.round(ses, 4).tolist()}; pairwise-within-SE {pair_ok}; "
              f"Spearman {rho:.3f} (need >=0.8); corollary bound {['%.3g' % b for b in bounds]} "
              f"non-decreasing {bound_ok} ({secs:.0f}s)")
    return _record("C3 spread trend", ok, detail)


def criterion_4():
    res, secs = _run("fig2_right_small")
    noise = preset("fig2_right_small").noise
    rows, robust = [], True
    for k, s in enumerate(noise):
        (u, su), (g, sg), (p, sp) = (_final(res, q, k) for q in ("ubad", "greedy", "passive"))
        level_ok = u <= g + math.hypot(su, sg)
        robust &= level_ok
        rows.append(f"s_n={s:g}: U {u:.3f}+-{su:.3f} G {g:.3f}+-{sg:.3f} P {p:.3f}+-{sp:.3f}{'' if level_ok else ' !'}")
    u0, p0 = _final(res, "ubad", 0)[0], _final(res, "passive", 0)[0]
    beats_passive = u0 < p0
    uh, ph = _final(res, "ubad", len(noise) - 1)[0], _final(res, "passive", len(noise) - 1)[0]
    ok = robust and beats_passive
    detail = (f"UBAD<=Greedy+SE at every level {robust}; UBAD<Passive at lowest noise {beats_passive}; "
              f"[recorded] Passive better than UBAD at highest noise: {ph < uh} | " + "; ".join(rows) + f" ({secs:.0f}s)")
    return _record("C4 noise robustness", ok, detail)


def criterion_5():
    t0 = time.perf_counter()
    parts, ok = [], True
    for n in (20, 50):
        g = GridSpec(5.0, n)
        H = synthesize(g, FieldModel("gaussian", 1.0, g.snap((2.0, 3.0))))
        chk = lemma1_check(H, 200, np.random.default_rng(np.random.SeedSequence(2024, spawn_key=(n,))))
        ok &= chk.empirical_rate >= 0.9
        parts.append(f"n={n}: rate {chk.empirical_rate:.3f}, bound {chk.bound:.3f}, max residual {chk.residuals.max():.3f}")
    secs = time.perf_counter() - t0
    ok &= secs < 60
    return _record("C5 Latin-squares lemma", ok, "; ".join(parts) + f" (need >=0.9, {secs:.1f}s)")


def _gap_oracle(Y, i0, j0):
    n = len(Y)
    du = [[Y[i0][l] - Y[k][l] for l in range(n)] for k in range(n)]
    dv = [[Y[k][j0] - Y[k][l] for l in range(n)] for k in range(n)]
    return du, dv


def _theorem1_oracle(Y, mode, m, C):
    # exact singular vectors of a rank-1 field: its normalized mode column and row
    col = [row[mode[1] - 1] for row in Y]
    u = [x / math.sqrt(sum(c * c for c in col)) for x in col]
    v = [x / math.sqrt(sum(c * c for c in Y[mode[0] - 1])) for x in Y[mode[0] - 1]]
    b = max(max(r) for r in Y)
    du, dv = _gap_oracle(Y, mode[0] - 1, mode[1] - 1)
    total = 0.0
    n = len(Y)
    for k in range(n):
        for l in range(n):
            if du[k][l] > 0 and dv[k][l] > 0:
                d2 = (k + 1 - mode[0]) ** 2 + (l + 1 - mode[1]) ** 2
                total += (u[k] + 2 * b * du[k][l]) / du[k][l] ** 2 * (v[l] + 2 * b * dv[k][l]) / dv[k][l] ** 2 * d2
    return C * total * math.log(m) ** 2 / m


def _corollary_oracle(kind, spread, n, mode, m, C):
    total = 0.0
    for k in range(1, n + 1):
        for l in range(1, n + 1):
            d2 = (k - mode[0]) ** 2 + (l - mode[1]) ** 2
            x = d2 / (2 * n * spread) if kind == "gaussian" else math.sqrt(d2) / (2 * n * spread)
            total += C * spread * math.log(m) ** 2 * d2 / math.exp(-x)
    return total


def _rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a)


def criterion_6():
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 11))
        kind = ("gaussian", "laplacian")[int(rng.integers(2))]
        spread = float(rng.uniform(0.2, 5.0))
        src = tuple(int(x) for x in rng.integers(1, n + 1, size=2))
        m = int(rng.integers(2, 1000))
        C = float(rng.uniform(0.1, 3.0))
        g = GridSpec(5.0, n)
        H = synthesize(g, FieldModel(kind, spread, src))
        Y = H.H.tolist()
        gt = gap_table(H)
        du, dv = _gap_oracle(Y, src[0] - 1, src[1] - 1)
        scale = max(1.0, float(np.max(np.abs(H.H))))
        worst = max(worst, float(np.max(np.abs(gt.delta_u - du))) / scale, float(np.max(np.abs(gt.delta_v - dv))) / scale)
        worst = max(worst, _rel(theorem1_bound(H, m, C).value, _theorem1_oracle(Y, src, m, C)))
        worst = max(worst, _rel(corollary_bound(kind, spread, g, src, m, C).value,
                                _corollary_oracle(kind, spread, n, src, m, C)))
    svd_worst = 0.0
    for n in (1, 2, 5, 10, 20, 35, 50):
        for kind in ("gaussian", "laplacian"):
            g = GridSpec(5.0, n)
            H = synthesize(g, FieldModel(kind, float(rng.uniform(0.2, 4)), tuple(int(x) for x in rng.integers(1, n + 1, 2))))
            svd_worst = max(svd_worst, _rel(rank1_svd(H.H).sigma, np.linalg.svd(H.H, compute_uv=False)[0]))
        M = rng.random((n, n))
        svd_worst = max(svd_worst, _rel(rank1_svd(M, tol=1e-10, max_iters=5000).sigma, np.linalg.svd(M, compute_uv=False)[0]))
    ok = worst <= 1e-12 and svd_worst <= 1e-8
    return _record("C6 oracle equivalence", ok,
                   f"bounds/gap tables max rel dev {worst:.1e} (need <=1e-12); rank1_svd sigma max rel dev {svd_worst:.1e} (need <=1e-8)")


def criterion_7():
    rng = np.random.default_rng(707)
    good, worst = 0, 0.0
    for k in range(100):
        n = int(rng.integers(1, 31))
        kind = ("gaussian", "laplacian")[k % 2]
        src = tuple(int(x) for x in rng.integers(1, n + 1, size=2))
        H = synthesize(GridSpec(5.0, n), FieldModel(kind, float(rng.uniform(0.1, 5.0)), src)).H
        obs = ObservationSet(n, {(i + 1, j + 1): float(H[i, j]) for i in range(n) for j in range(n)})
        est = rank1_als(obs)
        err = np.linalg.norm(est.matrix() - H) / np.linalg.norm(H)
        worst = max(worst, err)
        good += err <= 1e-8 and peak_estimate(est) == src
    return _record("C7 exact recovery", good == 100, f"{good}/100 instances exact, max rel Frobenius error {worst:.1e}")


def criterion_8():
    lines = []
    results = run_all(log=lines.append)
    ok = all(r.passed for r in results)
    return _record("C8 structural invariants", ok, " | ".join(lines))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"C{k}" for k in range(1, 9)])
def test_criterion(criterion):
    passed, line = criterion()
    print(line)
    assert passed, line


if __name__ == "__main__":
    for c in CRITERIA:
        print(c()[1], flush=True)
