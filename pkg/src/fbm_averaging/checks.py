"""Statistical property checks run by ``fbm-averaging verify``.

Each check returns a :class:`CheckResult`; suites are lists of checks.
Budgets scale the Monte Carlo sizes (``quick`` for smoke runs, ``full``
for the documented acceptance sizes).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from . import experiments as ex
from .averaging import build_averaged_system, check_conditions, rms_average_diffusion, time_average_drift
from .fgn import (
    TimeGrid,
    estimate_hurst,
    fbm_covariance,
    fgn_autocovariance,
    generate_ensemble,
    increment_moment,
    lrd_asymptote,
)
from .integrator import SdeSystem, second_moment_bound, pathwise_integral, second_moment_deterministic

SUITES = ("fgn", "integrals", "averaging", "theorems", "all")
BUDGETS = {
    "quick": {"paths": 1000, "hurst_seeds": 20, "coincidence_paths": 100, "replicates": 400},
    "full": {"paths": 5000, "hurst_seeds": 100, "coincidence_paths": 200, "replicates": 2000},
}

COV_PAIRS = [(1, 1), (8, 8), (16, 64), (32, 32), (32, 96), (64, 64), (64, 128), (100, 20), (128, 128), (1, 128)]


@dataclass
class CheckResult:
    name: str
    passed: bool
    tolerance: str
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _result(name, passed, tolerance, **stats) -> CheckResult:
    return CheckResult(name, bool(passed), tolerance, {k: _jsonable(v) for k, v in stats.items()})


def check_covariance(M: int, seed: int = 1) -> list:
    grid = TimeGrid(1.0, 128)
    t = grid.nodes
    out = []
    for H in (0.55, 0.75):
        for method in ("cholesky", "circulant"):
            B = generate_ensemble(grid, H, M, seed, method).values
            worst = 0.0
            for i, j in COV_PAIRS:
                prod = B[:, i] * B[:, j]
                se = prod.std(ddof=1) / math.sqrt(M)
                z = abs(prod.mean() - fbm_covariance(t[i], t[j], H)) / se
                worst = max(worst, z)
            out.append(_result(f"covariance[H={H},{method}]", worst <= 4.0, "4 SE", max_z=worst, paths=M))
    return out


def check_increment_moments(M: int, seed: int = 2) -> list:
    grid = TimeGrid(1.0, 128)
    out = []
    for H in (0.55, 0.75):
        paths = generate_ensemble(grid, H, M, seed)
        for lag in (1, 8):
            m2 = increment_moment(paths, 1, lag)
            m4 = increment_moment(paths, 2, lag)
            ok = abs(m2.z_score) <= 4.0 and abs(m4.z_score) <= 5.0
            out.append(_result(f"increment_moments[H={H},lag={lag}]", ok, "k=1: 4 SE, k=2: 5 SE",
                               z_var=m2.z_score, z_fourth=m4.z_score))
    return out


def check_lrd() -> list:
    out = []
    for H in (0.6, 0.75, 0.9):
        ratio = fgn_autocovariance(100, H) / float(lrd_asymptote(100, H))
        out.append(_result(f"long_range_dependence[H={H}]", 0.99 <= ratio <= 1.01, "[0.99, 1.01]", ratio=ratio))
    return out


def check_self_similarity(M: int, seed: int = 3) -> list:
    grid = TimeGrid(1.0, 64)
    H = 0.75
    a = generate_ensemble(grid, H, M, seed).values
    b = generate_ensemble(grid, H, M, seed, first=M).values
    scaled = a[:, 64] / 4**H  # B(4 * 0.25) / 4^H
    res = ks_2samp(scaled, b[:, 16])
    crit = 1.63 * math.sqrt(2.0 / M)
    return [_result("self_similarity[a=4]", res.statistic < crit, "KS below 1% critical value",
                    statistic=res.statistic, critical=crit)]


def check_hurst(seeds: int) -> list:
    grid = TimeGrid(1.0, 4096)
    out = []
    for H in (0.55, 0.75):
        est = np.array([estimate_hurst(generate_ensemble(grid, H, 1, s)[0]).h for s in range(seeds)])
        frac = float(np.mean(np.abs(est - H) <= 0.05))
        out.append(_result(f"hurst_recovery[H={H}]", frac >= 0.95, ">= 95% within 0.05", fraction=frac))
    return out


def check_isometry(M: int, seed: int = 4) -> list:
    grid = TimeGrid(1.0, 128)
    H = 0.75
    paths = generate_ensemble(grid, H, M, seed)
    ones = np.ones(grid.n_steps + 1)
    sq = pathwise_integral(ones, paths, "symmetric") ** 2
    se = sq.std(ddof=1) / math.sqrt(M)
    exact = second_moment_deterministic(lambda t: np.ones_like(t), grid, H)
    lc = second_moment_bound(lambda t: np.ones_like(t), grid, H)
    ok = abs(sq.mean() - exact) <= 4 * se and lc.doubled_bound_holds
    return [_result("isometry[f=1,H=0.75]", ok, "4 SE; doubled bound", empirical=sq.mean(), exact=exact,
                    c_ht=lc.c_ht, slack=lc.slack, doubled_bound=lc.doubled_bound)]


def check_coincidence(M: int, seed: int = 5) -> list:
    fine = generate_ensemble(TimeGrid(1.0, 512), 0.75, M, seed)
    meds = []
    for n in (64, 128, 256, 512):
        p = fine.coarsen(512 // n)
        u = np.sin(p.grid.nodes)
        gap = np.abs(pathwise_integral(u, p, "forward") - pathwise_integral(u, p, "backward"))
        meds.append(float(np.median(gap)))
    ratios = [a / b for a, b in zip(meds, meds[1:])]
    return [_result("kind_coincidence[sin,H=0.75]", min(ratios) >= 1.8, "factor >= 1.8 per halving",
                    medians=meds, ratios=ratios)]


def check_averaging() -> list:
    lam = 0.2
    out = []
    b1 = time_average_drift(lambda t, x: -2 * lam * x * np.sin(t) ** 2, math.pi, [1.0])[0]
    out.append(_result("example1_drift_average", abs(b1 + lam) <= 1e-8, "1e-8", value=b1, expected=-lam))
    lam2 = 2.0
    sig = lambda t, x: (lam2 * np.cos(t) ** 2)[..., None]  # noqa: E731
    mean = rms_average_diffusion(sig, math.pi, [0.0], "mean")[0, 0]
    rms = rms_average_diffusion(sig, math.pi, [0.0], "rms")[0, 0]
    out.append(_result("example2_diffusion_average",
                       abs(mean - lam2 / 2) <= 1e-8 and abs(rms - lam2 * math.sqrt(3 / 8)) <= 1e-8,
                       "1e-8", mean=mean, rms=rms))
    sys_ = SdeSystem(lambda t, x: np.exp(-t) * np.ones_like(x), lambda t, x: 0.0, 0.75, 0.1)
    avg = build_averaged_system(sys_, 1.0, analytic=(lambda x: np.zeros_like(x), lambda x: np.zeros(np.shape(x) + (1,))))
    windows = [1.0, 2.0, 4.0, 8.0]
    rep = check_conditions(sys_, avg, windows, [[0.0], [1.0]])
    expected = np.array([(1 - math.exp(-T)) / T for T in windows])
    ok = np.allclose(rep.phi1, expected, rtol=1e-7) and rep.decreasing_tail["phi1"]
    out.append(_result("condition_report[exp]", ok, "rtol 1e-7", phi1=rep.phi1, expected=expected))
    return out


def check_theorems(M: int) -> list:
    out = []
    for kind in ("symmetric", "forward", "backward"):
        r1 = ex.epsilon_sweep(ex.example1_preset("a", epsilons=[0.045, 0.02, 0.01], replicates=M, kind=kind))
        s = [r.sup_mse for r in r1.rows]
        ok1 = r1.diagnostics["sup_mse_strictly_decreasing"] and s[-1] < 1e-2
        out.append(_result(f"mean_square_trend[{kind}]", ok1, "strictly decreasing; < 1e-2 at eps=0.01", sup_mse=s))
        r2 = ex.epsilon_sweep(ex.example2_preset("a", epsilons=[0.0045, 0.002, 0.001], replicates=M, kind=kind))
        p = [r.exceedance for r in r2.rows]
        ok2 = r2.diagnostics["exceedance_nonincreasing"] and p[-1] < 0.05
        out.append(_result(f"exceedance_trend[{kind}]", ok2, "non-increasing; < 0.05 at eps=0.001", exceedance=p))
    for kind in ("symmetric", "forward", "backward"):
        lam = 0.3
        sys_ = SdeSystem(lambda t, x: -lam * x, lambda t, x: 1.0, 0.7, 0.05, autonomous=True)
        cfg = ex.ExperimentConfig(sys_, math.pi, TimeGrid(1.0, 200), (0.5,), (0.05,), kind=kind, replicates=50)
        e = ex.run_paired(cfg, 0.05)
        out.append(_result(f"null_coupling[{kind}]", e.sup_mse == 0.0, "exactly 0", sup_mse=e.sup_mse))
    return out


def run_suite(suite: str, budget: str = "quick") -> list:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    b = BUDGETS[budget]
    checks = []
    if suite in ("fgn", "all"):
        checks += check_covariance(b["paths"])
        checks += check_increment_moments(b["paths"])
        checks += check_lrd()
        checks += check_self_similarity(b["paths"])
        checks += check_hurst(b["hurst_seeds"])
    if suite in ("integrals", "all"):
        checks += check_isometry(b["paths"])
        checks += check_coincidence(b["coincidence_paths"])
    if suite in ("averaging", "all"):
        checks += check_averaging()
    if suite in ("theorems", "all"):
        checks += check_theorems(b["replicates"])
    return checks
