"""Experiment configuration, presets and seeded Monte-Carlo orchestration.

A run expands the config into sweep points (every spread crossed with every
noise level), runs ``trials`` seeded trials per policy and sweep point, and
writes:

``curves.csv``
    mean/stderr localization error after ``t = 0..m`` sequential samples and
    the running average of squared errors, one row per policy, sweep point, t.
``summary.csv``
    final error per policy and sweep point.
``traces/<policy>_s<k>.csv``
    raw per-step trial traces.
``manifest.json``
    config, config hash, seeds, failure counts, version and timestamps.

CSV files start with a ``# config_hash=...`` line and are byte-identical for
identical configs.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ubad.analysis import Aggregate, aggregate, corollary_bound, lemma1_check, subspace_check, theorem1_bound
from ubad.field import FieldKind, FieldModel, GridSpec, NoiseModel, synthesize
from ubad.policy import POLICY_NAMES, PolicyKind, SolverConfig, TrialTrace, run_trial, write_traces

log = logging.getLogger(__name__)

POLICY_CODES = {name: k for k, name in enumerate(POLICY_NAMES)}


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    L: float = 5.0
    n: int = 40


@dataclass
class FieldConfig:
    kind: str = "gaussian"
    spreads: List[float] = field(default_factory=lambda: [1.0])
    amplitude: float = 1.0


@dataclass
class SourceConfig:
    """Either a physical ``point`` (snapped to the nearest cell) or a 1-based ``index``."""

    point: Optional[List[float]] = field(default_factory=lambda: [2.0, 3.0])
    index: Optional[List[int]] = None


@dataclass
class BoundsConfig:
    C_const: float = 1.0
    lemma_trials: int = 200
    m_values: List[int] = field(default_factory=lambda: [10, 20, 50, 100, 200])


@dataclass
class ExperimentConfig:
    name: str = "custom"
    grid: GridConfig = dataclasses.field(default_factory=GridConfig)
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    source: SourceConfig = dataclasses.field(default_factory=SourceConfig)
    noise: List[float] = dataclasses.field(default_factory=lambda: [0.0])
    policies: List[str] = dataclasses.field(default_factory=lambda: list(POLICY_NAMES))
    beta: float = 1.0
    m: int = 50
    trials: int = 50
    seed: int = 12345
    solver: SolverConfig = dataclasses.field(default_factory=SolverConfig)
    init: str = "latin"
    passive_init: str = "latin"
    bounds: BoundsConfig = dataclasses.field(default_factory=BoundsConfig)
    workers: int = 1
    out: Optional[str] = None

    # --- derived views -------------------------------------------------
    def grid_spec(self) -> GridSpec:
        return GridSpec(float(self.grid.L), int(self.grid.n))

    def source_index(self) -> Tuple[int, int]:
        g = self.grid_spec()
        if self.source.index is not None:
            return int(self.source.index[0]), int(self.source.index[1])
        return g.snap(self.source.point)

    def sweep_points(self) -> List[Tuple[float, float]]:
        return list(itertools.product(self.field.spreads, self.noise))

    def field_model(self, spread: float) -> FieldModel:
        return FieldModel(self.field.kind, spread, self.source_index(), self.field.amplitude)

    def policy(self, name: str) -> PolicyKind:
        return PolicyKind(name, self.beta if name == "ubad" else 0.0)

    # --- (de)serialization ---------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        nested = {"grid": GridConfig, "field": FieldConfig, "source": SourceConfig,
                  "bounds": BoundsConfig, "solver": SolverConfig}
        try:
            for key, typ in nested.items():
                if key in d and not isinstance(d[key], typ):
                    d[key] = typ(**d[key])
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def config_hash(self) -> str:
        """Hash of everything that influences results (not ``out`` or ``workers``)."""
        d = self.to_dict()
        d.pop("out", None)
        d.pop("workers", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self) -> "ExperimentConfig":
        try:
            g = self.grid_spec()
            FieldKind(self.field.kind)
            if not self.field.spreads or not self.noise:
                raise ConfigError("sweep lists must be nonempty")
            for s in self.field.spreads:
                self.field_model(s)
            for s in self.noise:
                NoiseModel(s)
            src = self.source_index()
            if not (1 <= src[0] <= g.n and 1 <= src[1] <= g.n):
                raise ConfigError(f"source index {src} outside the grid")
            if not self.policies:
                raise ConfigError("no policies selected")
            for p in self.policies:
                self.policy(p)
            if len(set(self.policies)) != len(self.policies):
                raise ConfigError("duplicate policies")
            if self.trials < 1:
                raise ConfigError("trials must be >= 1")
            if not 0 <= self.m <= g.n * g.n - g.n:
                raise ConfigError(f"m={self.m} must lie in [0, n^2 - n]")
            if not 0 <= int(self.seed) < 2**64:
                raise ConfigError("seed must fit in an unsigned 64-bit integer")
            for init in (self.init, self.passive_init):
                if init not in ("latin", "uniform"):
                    raise ConfigError(f"unknown initial design {init!r}")
            if self.workers < 1:
                raise ConfigError("workers must be >= 1")
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _full_scale(name: str, **kw) -> ExperimentConfig:
    base = dict(name=name, grid=GridConfig(L=5.0, n=100), trials=100)
    base.update(kw)
    return ExperimentConfig(**base)


def _small(cfg: ExperimentConfig) -> ExperimentConfig:
    cfg = dataclasses.replace(cfg, name=cfg.name + "_small", grid=GridConfig(L=5.0, n=40), trials=50)
    return cfg


FIG2_LEFT_SPREADS = [0.25, 0.5, 1.0, 2.0, 4.0]
FIG2_RIGHT_NOISE = [0.0, 0.01, 0.05, 0.1, 0.2, 0.5]


def preset(name: str) -> ExperimentConfig:
    """Configurations mirroring the three experiments, plus ``*_small`` desk-scale variants.

    The ``*_small`` presets use ``n = 40`` and 50 trials.
    """
    base = {
        "fig1": lambda: _full_scale("fig1", field=FieldConfig("gaussian", [1.0]), noise=[0.0], m=50),
        "fig2_left": lambda: _full_scale(
            "fig2_left", field=FieldConfig("laplacian", list(FIG2_LEFT_SPREADS)), noise=[0.0],
            m=100, policies=["passive", "ubad"],
        ),
        "fig2_right": lambda: _full_scale(
            "fig2_right", field=FieldConfig("gaussian", [1.0]), noise=list(FIG2_RIGHT_NOISE), m=50,
        ),
        "bounds": lambda: ExperimentConfig(
            name="bounds", grid=GridConfig(L=5.0, n=50), field=FieldConfig("gaussian", [1.0]),
            m=100, trials=200,
        ),
    }
    small = name.endswith("_small")
    key = name[: -len("_small")] if small else name
    if key not in base:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    cfg = base[key]()
    return _small(cfg) if small else cfg


PRESETS = ("fig1", "fig1_small", "fig2_left", "fig2_left_small", "fig2_right", "fig2_right_small",
           "bounds", "bounds_small")


# --- seeding ---------------------------------------------------------------

def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def init_seed(master: int, sweep_index: int, trial: int) -> int:
    """Seed of a trial's initial design; shared by all policies at that trial."""
    return _seed_int(np.random.SeedSequence(int(master), spawn_key=(sweep_index, trial, 0)))


def trial_seed(master: int, sweep_index: int, trial: int, policy: str) -> int:
    """Seed of a trial's noise and passive-selection stream."""
    code = POLICY_CODES[policy] + 1
    return _seed_int(np.random.SeedSequence(int(master), spawn_key=(sweep_index, trial, code)))


# --- running ---------------------------------------------------------------

@dataclass
class CellResult:
    policy: str
    sweep_index: int
    spread: float
    sigma_n: float
    traces: List[TrialTrace]
    failed: List[int]
    seeds: List[int]
    init_seeds: List[int]
    aggregate: Optional[Aggregate]

    @property
    def flagged_steps(self) -> int:
        return sum(len(t.flagged_steps) for t in self.traces)


@dataclass
class RunResult:
    config: ExperimentConfig
    cells: List[CellResult]
    manifest: dict

    def cell(self, policy: str, sweep_index: int = 0) -> CellResult:
        for c in self.cells:
            if c.policy == policy and c.sweep_index == sweep_index:
                return c
        raise KeyError((policy, sweep_index))


def _job(args):
    g, f, noise, kind, m, solver, seed, iseed, init = args
    try:
        return run_trial(g, f, noise, kind, m, solver, seed=seed, init_seed=iseed, init=init)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return repr(exc)


def run_experiment(cfg: ExperimentConfig, out: Optional[os.PathLike] = None) -> RunResult:
    """Run every policy at every sweep point; write CSVs and a manifest when ``out`` is set."""
    cfg.validate()
    out = out if out is not None else cfg.out
    started = datetime.now(timezone.utc).isoformat()
    g = cfg.grid_spec()

    jobs, keys = [], []
    for p in cfg.policies:
        kind = cfg.policy(p)
        init = cfg.passive_init if p == "passive" else cfg.init
        for s_idx, (spread, sigma_n) in enumerate(cfg.sweep_points()):
            f = cfg.field_model(spread)
            for k in range(cfg.trials):
                seed = trial_seed(cfg.seed, s_idx, k, p)
                iseed = init_seed(cfg.seed, s_idx, k)
                jobs.append((g, f, NoiseModel(sigma_n), kind, cfg.m, cfg.solver, seed, iseed, init))
                keys.append((p, s_idx, k))

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        results = [_job(j) for j in jobs]

    cells: List[CellResult] = []
    points = cfg.sweep_points()
    pos = 0
    for p in cfg.policies:
        for s_idx, (spread, sigma_n) in enumerate(points):
            chunk = results[pos : pos + cfg.trials]
            chunk_jobs = jobs[pos : pos + cfg.trials]
            pos += cfg.trials
            traces = [r for r in chunk if isinstance(r, TrialTrace)]
            failed = [k for k, r in enumerate(chunk) if not isinstance(r, TrialTrace)]
            for k in failed:
                log.warning("trial %d of %s at sweep point %d failed: %s", k, p, s_idx, chunk[k])
            cells.append(CellResult(
                policy=p, sweep_index=s_idx, spread=spread, sigma_n=sigma_n,
                traces=traces, failed=failed,
                seeds=[j[6] for j in chunk_jobs], init_seeds=[j[7] for j in chunk_jobs],
                aggregate=aggregate(traces) if traces else None,
            ))

    manifest = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "version": _version(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "source_index": list(cfg.source_index()),
        "cells": [
            {
                "policy": c.policy, "sweep_index": c.sweep_index, "spread": c.spread,
                "sigma_n": c.sigma_n, "trials_ok": len(c.traces), "trials_failed": len(c.failed),
                "failed_trials": c.failed, "flagged_steps": c.flagged_steps,
                "trial_seeds": c.seeds, "init_seeds": c.init_seeds,
            }
            for c in cells
        ],
    }
    result = RunResult(cfg, cells, manifest)
    if out is not None:
        write_results(result, Path(out))
    return result


def _version() -> str:
    from ubad import __version__

    return f"ubad {__version__}"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_results(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    h = result.config.config_hash()
    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh)
        w.writerow(["policy", "sweep_index", "spread", "sigma_n", "t", "mean_error", "stderr_error",
                    "running_sq_mean", "running_sq_stderr", "trials"])
        for c in result.cells:
            a = c.aggregate
            for t in range(result.config.m + 1):
                if a is None:
                    w.writerow([c.policy, c.sweep_index, _fmt(c.spread), _fmt(c.sigma_n), t, "", "", "", "", 0])
                    continue
                run = [_fmt(a.running_mean[t - 1]), _fmt(a.running_stderr[t - 1])] if t else ["", ""]
                w.writerow([c.policy, c.sweep_index, _fmt(c.spread), _fmt(c.sigma_n), t,
                            _fmt(a.mean[t]), _fmt(a.stderr[t]), *run, a.trials])
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh)
        w.writerow(["policy", "sweep_index", "spread", "sigma_n", "final_mean_error", "final_stderr_error",
                    "init_mean_error", "trials_ok", "trials_failed", "flagged_steps"])
        for c in result.cells:
            a = c.aggregate
            stats = [_fmt(a.final_mean), _fmt(a.final_stderr), _fmt(a.mean[0])] if a else ["", "", ""]
            w.writerow([c.policy, c.sweep_index, _fmt(c.spread), _fmt(c.sigma_n), *stats,
                        len(c.traces), len(c.failed), c.flagged_steps])
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for c in result.cells:
        write_traces(tdir / f"{c.policy}_s{c.sweep_index}.csv", c.traces)
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2) + "\n", encoding="utf-8")


def restrict_to_first_point(cfg: ExperimentConfig) -> ExperimentConfig:
    """Drop all but the first spread and noise level."""
    return dataclasses.replace(
        cfg, field=dataclasses.replace(cfg.field, spreads=cfg.field.spreads[:1]), noise=cfg.noise[:1]
    )


def csv_digest(out: os.PathLike) -> Dict[str, str]:
    """sha256 of every CSV under an output directory, keyed by relative path."""
    out = Path(out)
    return {
        str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.rglob("*.csv"))
    }


# --- bounds ----------------------------------------------------------------

def run_bounds(cfg: ExperimentConfig, out: Optional[os.PathLike] = None) -> List[dict]:
    """Theorem-style and closed-form bounds plus the Latin-squares lemma checks, one record each."""
    cfg.validate()
    g = cfg.grid_spec()
    src = cfg.source_index()
    C = cfg.bounds.C_const
    rows: List[dict] = []
    for s_idx, spread in enumerate(cfg.field.spreads):
        H = synthesize(g, cfg.field_model(spread))
        for m in cfg.bounds.m_values:
            rep = theorem1_bound(H, m, C)
            rows.append(dict(quantity="theorem1", spread=spread, m=m, value=rep.value,
                             excluded_terms=rep.excluded_terms, rate=""))
            cor = corollary_bound(cfg.field.kind, spread, g, src, m, C)
            rows.append(dict(quantity="corollary", spread=spread, m=m, value=cor.value,
                             excluded_terms=cor.excluded_terms, rate=""))
        rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(s_idx, 2**20)))
        lem = lemma1_check(H, cfg.bounds.lemma_trials, rng)
        rows.append(dict(quantity="lemma1", spread=spread, m="", value=lem.bound,
                         excluded_terms="", rate=lem.empirical_rate))
        sub = subspace_check(H, cfg.bounds.lemma_trials, rng)
        rows.append(dict(quantity="subspace", spread=spread, m="", value="",
                         excluded_terms=sub.invalid_draws, rate=sub.empirical_rate))
    out = out if out is not None else cfg.out
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bounds.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# config_hash={cfg.config_hash()}\n")
            w = csv.DictWriter(fh, fieldnames=["quantity", "spread", "m", "value", "excluded_terms", "rate"])
            w.writeheader()
            for r in rows:
                w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows
