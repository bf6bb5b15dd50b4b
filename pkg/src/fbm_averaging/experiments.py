"""Monte Carlo comparison of the original and averaged equations.

Every replicate draws its noise from the counter-based stream
``(master_seed, replicate)`` and drives both equations with the same fBm
path (synchronous coupling). Replicates are processed in fixed-size
chunks whose boundaries do not depend on the number of workers, and
per-replicate results are concatenated in replicate order before any
reduction, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import binomtest

from . import seeding
from .averaging import AveragedSystem, build_averaged_system
from .fgn import TimeGrid, generate_cholesky, generate_circulant, noise_length
from .integrator import IntegralKind, SdeSystem, as_kind, solve_increments

__all__ = [
    "ExperimentConfig",
    "PairedEnsemble",
    "SweepRow",
    "SweepResult",
    "DivergenceBudgetError",
    "run_paired",
    "epsilon_sweep",
    "example1_preset",
    "example2_preset",
    "PRESETS",
    "trend_ok",
]

CHUNK = 250
Z95 = 1.959963984540054
MAX_DIVERGENT_FRACTION = 0.01


class DivergenceBudgetError(RuntimeError):
    def __init__(self, count: int, total: int):
        self.count = count
        self.total = total
        super().__init__(f"{count} of {total} replicates diverged (limit {MAX_DIVERGENT_FRACTION:.0%})")


@dataclass
class ExperimentConfig:
    system: SdeSystem
    window: float
    grid: TimeGrid
    x0: tuple
    epsilons: tuple
    kind: IntegralKind = IntegralKind.SYMMETRIC
    replicates: int = 2000
    master_seed: int = 0
    delta_prob: float = 0.05
    diffusion_mode: str = "rms"
    method: str = "circulant"
    keep_trajectories: int = 10
    averaged: Optional[AveragedSystem] = None
    echo: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = as_kind(self.kind)
        self.x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        self.epsilons = tuple(float(e) for e in np.atleast_1d(self.epsilons))
        if not self.epsilons:
            raise ValueError("at least one epsilon is required")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError(f"epsilons must be sorted strictly descending, got {self.epsilons}")
        if any(not 0 < e <= self.system.epsilon_0 for e in self.epsilons):
            raise ValueError(f"epsilons must lie in (0, {self.system.epsilon_0}]")
        if self.replicates < 2:
            raise ValueError("replicates must be at least 2")
        if not self.delta_prob > 0:
            raise ValueError("delta_prob must be positive")
        if len(self.x0) != self.system.dim_state:
            raise ValueError(f"x0 has {len(self.x0)} entries, system has dimension {self.system.dim_state}")
        if not 0 <= self.keep_trajectories <= 10:
            raise ValueError("keep_trajectories must be in [0, 10]")
        if self.averaged is None:
            self.averaged = build_averaged_system(self.system, self.window, self.diffusion_mode)
        self.metadata.setdefault("horizon", self.grid.t_end)
        # any beta in (0, 1) with L = T eps^{2 H beta} reproduces the fixed horizon
        self.metadata.setdefault(
            "implied_L_at_beta_half",
            {e: self.grid.t_end * e ** self.system.h.h for e in self.epsilons},
        )


@dataclass(frozen=True)
class PairedEnsemble:
    """Error statistics of ``X_eps - Z_eps`` over the replicates that stayed finite."""

    epsilon: float
    grid: TimeGrid
    mse: np.ndarray
    mse_ci_lo: np.ndarray
    mse_ci_hi: np.ndarray
    sup_mse: float
    sup_index: int
    exceedance: float
    exceedance_ci: tuple
    n_used: int
    divergent_count: int
    x_trajectories: np.ndarray
    z_trajectories: np.ndarray

    @property
    def sup_mse_ci(self) -> tuple:
        return float(self.mse_ci_lo[self.sup_index]), float(self.mse_ci_hi[self.sup_index])


def _wilson(successes: int, n: int) -> tuple:
    ci = binomtest(successes, n).proportion_ci(confidence_level=0.95, method="wilson")
    p = successes / n
    return min(float(ci.low), p), max(float(ci.high), p)


_GEN = {"cholesky": generate_cholesky, "circulant": generate_circulant}


def replicate_increments(config: ExperimentConfig, start: int, stop: int) -> np.ndarray:
    """fBm increments of replicates ``start..stop-1``, shape ``(R, m, n)``."""
    grid, m = config.grid, config.system.dim_noise
    gen = _GEN[config.method]
    L = noise_length(config.method, grid.n_steps)
    dB = np.empty((stop - start, m, grid.n_steps))
    for j, r in enumerate(range(start, stop)):
        noise = seeding.standard_normal(config.master_seed, r, (m, L))
        dB[j] = np.diff(gen(grid, config.system.h, noise).values, axis=-1)
    return dB


def _chunk(config, sys_x, sys_z, start, stop):
    dB = replicate_increments(config, start, stop)
    X, dx = solve_increments(sys_x, config.x0, config.grid, dB, config.kind, on_divergence="mask")
    Z, dz = solve_increments(sys_z, config.x0, config.grid, dB, config.kind, on_divergence="mask")
    err2 = np.sum((X - Z) ** 2, axis=-1)
    bad = (dx >= 0) | (dz >= 0)
    keep = max(0, min(config.keep_trajectories - start, stop - start))
    return err2, bad, X[:keep], Z[:keep]


def run_paired(config: ExperimentConfig, epsilon: float, workers: int = 1) -> PairedEnsemble:
    """Simulate ``X_eps`` and ``Z_eps`` on shared noise and collect error statistics.

    Replicates with a non-finite state in either equation are excluded and
    counted; more than 1% excluded raises :class:`DivergenceBudgetError`.
    """
    sys_x = config.system.with_epsilon(epsilon)
    sys_z = config.averaged.as_system(epsilon)
    M = config.replicates
    bounds = [(s, min(s + CHUNK, M)) for s in range(0, M, CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _chunk(config, sys_x, sys_z, *b), bounds))
    else:
        parts = [_chunk(config, sys_x, sys_z, *b) for b in bounds]

    err2 = np.concatenate([p[0] for p in parts])
    bad = np.concatenate([p[1] for p in parts])
    x_traj = np.concatenate([p[2] for p in parts])
    z_traj = np.concatenate([p[3] for p in parts])
    n_bad = int(bad.sum())
    if n_bad > MAX_DIVERGENT_FRACTION * M:
        raise DivergenceBudgetError(n_bad, M)
    err2 = err2[~bad]
    n = err2.shape[0]

    mse = err2.mean(axis=0)
    half = Z95 * err2.std(axis=0, ddof=1) / math.sqrt(n)
    lo, hi = np.maximum(mse - half, 0.0), mse + half
    k = int(np.argmax(mse))
    sup_err = np.sqrt(err2.max(axis=1))
    hits = int(np.count_nonzero(sup_err > config.delta_prob))
    return PairedEnsemble(
        epsilon=float(epsilon),
        grid=config.grid,
        mse=mse,
        mse_ci_lo=lo,
        mse_ci_hi=hi,
        sup_mse=float(mse[k]),
        sup_index=k,
        exceedance=hits / n,
        exceedance_ci=_wilson(hits, n),
        n_used=n,
        divergent_count=n_bad,
        x_trajectories=x_traj,
        z_trajectories=z_traj,
    )


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    sup_mse: float
    mse_ci_lo: float
    mse_ci_hi: float
    exceedance: float
    exc_ci_lo: float
    exc_ci_hi: float


@dataclass(frozen=True)
class SweepResult:
    rows: list
    ensembles: list
    diagnostics: Optional[dict]

    @property
    def divergent_count(self) -> int:
        return sum(e.divergent_count for e in self.ensembles)


def trend_ok(values, lo, hi, allow_inversions: int = 1) -> bool:
    """Non-increasing sequence, tolerating ``allow_inversions`` rises with overlapping CIs."""
    inversions = 0
    for i in range(1, len(values)):
        if values[i] > values[i - 1]:
            if hi[i - 1] < lo[i]:
                return False
            inversions += 1
    return inversions <= allow_inversions


def epsilon_sweep(config: ExperimentConfig, workers: int = 1) -> SweepResult:
    """One :func:`run_paired` per epsilon (descending), all with the same master seed."""
    ensembles = [run_paired(config, e, workers) for e in config.epsilons]
    rows = [
        SweepRow(e.epsilon, e.sup_mse, *e.sup_mse_ci, e.exceedance, *e.exceedance_ci)
        for e in ensembles
    ]
    diagnostics = None
    if len(rows) > 1:
        s = [r.sup_mse for r in rows]
        p = [r.exceedance for r in rows]
        diagnostics = {
            "sup_mse_nonincreasing": all(b <= a for a, b in zip(s, s[1:])),
            "sup_mse_strictly_decreasing": all(b < a for a, b in zip(s, s[1:])),
            "exceedance_nonincreasing": all(b <= a for a, b in zip(p, p[1:])),
            "sup_mse_trend_ok": trend_ok(s, [r.mse_ci_lo for r in rows], [r.mse_ci_hi for r in rows]),
            "exceedance_trend_ok": trend_ok(p, [r.exc_ci_lo for r in rows], [r.exc_ci_hi for r in rows]),
        }
    return SweepResult(rows, ensembles, diagnostics)


# Cases (x0, lambda, epsilon, H) of the two example systems.
EXAMPLE1_CASES = {
    "a": (0.0, 0.2, 0.045, 0.75),
    "b": (0.1, 0.2, 0.045, 0.55),
    "c": (0.1, 0.4, 0.01, 0.6),
    "d": (0.0, 0.4, 0.02, 0.7),
}
EXAMPLE2_CASES = {
    "a": (0.0, 2.0, 0.001, 0.55),
    "b": (0.0, 2.0, 0.0045, 0.65),
    "c": (0.1, 3.0, 0.002, 0.6),
    "d": (0.0, 3.0, 0.002, 0.7),
}

DEFAULTS = {
    "t_end": 1.0,
    "n_steps": 1000,
    "replicates": 2000,
    "seed": 20140101,
    "kind": "symmetric",
    "delta": 0.05,
    "diffusion_mode": "rms",
    "method": "circulant",
    "window": math.pi,
    "keep_trajectories": 10,
}

OVERRIDE_KEYS = frozenset(DEFAULTS) | {"x0", "lambda", "hurst", "epsilons"}


def _settings(preset: str, case: str, cases: dict, overrides: dict) -> dict:
    if case not in cases:
        raise ValueError(f"unknown case {case!r} for {preset}; expected one of {sorted(cases)}")
    unknown = set(overrides) - OVERRIDE_KEYS
    if unknown:
        raise ValueError(f"unknown override key(s): {sorted(unknown)}")
    x0, lam, eps, H = cases[case]
    s = {"preset": preset, "case": case, "x0": x0, "lambda": lam, "epsilons": [eps], "hurst": H}
    s.update(DEFAULTS)
    s.update(overrides)
    s["epsilons"] = [float(e) for e in np.atleast_1d(s["epsilons"])]
    return s


def _config(system: SdeSystem, s: dict, paper_value: dict) -> ExperimentConfig:
    averaged = build_averaged_system(system, s["window"], s["diffusion_mode"], paper_value=paper_value)
    return ExperimentConfig(
        system=system,
        window=s["window"],
        grid=TimeGrid(s["t_end"], int(s["n_steps"])),
        x0=(s["x0"],),
        epsilons=tuple(s["epsilons"]),
        kind=s["kind"],
        replicates=int(s["replicates"]),
        master_seed=int(s["seed"]),
        delta_prob=s["delta"],
        diffusion_mode=s["diffusion_mode"],
        method=s["method"],
        keep_trajectories=int(s["keep_trajectories"]),
        averaged=averaged,
        echo=s,
    )


def example1_preset(case: str = "a", **overrides) -> ExperimentConfig:
    """``dX = -2 eps^{2H} lambda X sin^2(t) dt + eps^H dB^H`` against its window average.

    The averaged drift is obtained by quadrature (it evaluates to
    ``-lambda z``); the reference coefficient ``-lambda / 2`` is kept in
    ``averaged.paper_value`` for comparison.
    """
    s = _settings("example1", case, EXAMPLE1_CASES, overrides)
    lam = float(s["lambda"])
    system = SdeSystem(
        drift=lambda t, x: -2.0 * lam * x * np.sin(t) ** 2,
        diffusion=lambda t, x: 1.0,
        h=s["hurst"],
        epsilon=max(s["epsilons"]),
        drift_affine=True,
        additive_noise=True,
        name=f"example1-{case}",
    )
    return _config(system, s, {"b_bar_coefficient": -0.5 * lam, "sigma_bar": 1.0})


def example2_preset(case: str = "a", **overrides) -> ExperimentConfig:
    """``dX = -eps^{2H} dt + eps^H lambda cos^2(t) dB^H`` against its window average.

    The averaged diffusion follows ``diffusion_mode``; the reference value
    ``3 lambda / 4`` is kept in ``averaged.paper_value`` for comparison.
    """
    s = _settings("example2", case, EXAMPLE2_CASES, overrides)
    lam = float(s["lambda"])
    system = SdeSystem(
        drift=lambda t, x: -1.0,
        diffusion=lambda t, x: (lam * np.cos(t) ** 2)[..., None],
        h=s["hurst"],
        epsilon=max(s["epsilons"]),
        drift_affine=True,
        additive_noise=True,
        name=f"example2-{case}",
    )
    return _config(system, s, {"b_bar": -1.0, "sigma_bar": 0.75 * lam})


PRESETS = {"example1": example1_preset, "example2": example2_preset}
