"""Structural self-checks run by ``ubad validate``."""

from __future__ import annotations

import dataclasses
import tempfile
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from ubad.field import FieldModel, GridSpec, NoiseModel, synthesize, verify_unimodal
from ubad.harness import csv_digest, preset, run_experiment
from ubad.policy import PolicyKind, run_trial
from ubad.sampling import latin_init


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def check_latin_structure(draws: int = 200, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for n in (1, 2, 3, 7, 40, 100):
        for _ in range(draws):
            cells = latin_init(n, rng)
            rows = {i for i, _ in cells}
            cols = {j for _, j in cells}
            if len(cells) != n or rows != set(range(1, n + 1)) or cols != set(range(1, n + 1)):
                return CheckResult("latin_structure", False, f"bad design at n={n}: {cells}")
    return CheckResult("latin_structure", True, f"{draws} draws x 6 grid sizes are permutations")


def check_no_resample(seed: int = 1) -> CheckResult:
    g = GridSpec(5.0, 8)
    f = FieldModel("gaussian", 1.0, g.snap((2.0, 3.0)))
    for noise in (0.0, 0.1):
        for kind in (PolicyKind.ubad(), PolicyKind.greedy(), PolicyKind.passive()):
            tr = run_trial(g, f, NoiseModel(noise), kind, g.n * g.n - g.n, seed=seed)
            cells = tr.init_cells + tr.selected
            if len(set(cells)) != len(cells) or len(cells) != g.n * g.n:
                return CheckResult("no_resample", False, f"{kind.name} repeated a cell")
    return CheckResult("no_resample", True, "every policy exhausts an 8x8 grid without repeats")


def check_beta_zero_is_greedy(trials: int = 10, seed: int = 2) -> CheckResult:
    g = GridSpec(5.0, 20)
    for k in range(trials):
        kind = "gaussian" if k % 2 == 0 else "laplacian"
        f = FieldModel(kind, 0.5 + k * 0.25, (1 + (3 * k) % 20, 1 + (7 * k) % 20))
        noise = NoiseModel(0.05 * (k % 3))
        a = run_trial(g, f, noise, PolicyKind.ubad(0.0), 30, seed=[seed, k])
        b = run_trial(g, f, noise, PolicyKind.greedy(), 30, seed=[seed, k])
        if a.selected != b.selected or a.peaks != b.peaks:
            return CheckResult("beta_zero_is_greedy", False, f"sequences differ at trial {k}")
    return CheckResult("beta_zero_is_greedy", True, f"{trials} seeded trials give identical sequences")


def check_unimodal_fields(seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    count = 0
    for n in (1, 2, 5, 20, 40, 100):
        g = GridSpec(5.0, n)
        for kind in ("gaussian", "laplacian"):
            for spread in (0.1, 0.5, 1.0, 4.0):
                src = tuple(int(v) for v in rng.integers(1, n + 1, size=2))
                H = synthesize(g, FieldModel(kind, spread, src))
                ok, mode = verify_unimodal(H.H)
                count += 1
                if not ok or mode != src:
                    return CheckResult("unimodal_fields", False, f"{kind} n={n} spread={spread} src={src}")
    return CheckResult("unimodal_fields", True, f"{count} synthesized fields unimodal at their source")


def check_reproducible_run(preset_name: str = "fig1_small", trials: Optional[int] = None) -> CheckResult:
    cfg = preset(preset_name)
    if trials is not None:
        cfg = dataclasses.replace(cfg, trials=trials)
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        run_experiment(cfg, out=a)
        run_experiment(cfg, out=b)
        da, db = csv_digest(a), csv_digest(b)
    same = bool(da) and da == db
    detail = f"{preset_name} ({cfg.trials} trials): {len(da)} CSV files {'identical' if same else 'differ'}"
    return CheckResult("reproducible_run", same, detail)


def run_all(reproducibility_trials: Optional[int] = None, log: Callable[[str], None] = print) -> List[CheckResult]:
    results = []
    for check in (check_latin_structure, check_no_resample, check_beta_zero_is_greedy, check_unimodal_fields):
        results.append(check())
        log(results[-1].line())
    results.append(check_reproducible_run(trials=reproducibility_trials))
    log(results[-1].line())
    return results
