"""Averaged coefficients and diagnostics for the averaging hypotheses.

The averaged drift is the window mean ``(1/T1) int_0^T1 b(s, y) ds``. The
averaged diffusion is either the entrywise window mean (``mode="mean"``)
or the entrywise root-mean-square carrying the sign of the mean
(``mode="rms"``).

All window means use composite Simpson with at least 1024 panels, doubled
until two successive estimates agree to ``rtol`` (relative to the larger
of the result and the mean absolute integrand).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.integrate import simpson

from .integrator import SdeSystem

__all__ = [
    "QuadratureError",
    "window_mean",
    "time_average_drift",
    "rms_average_diffusion",
    "AveragedSystem",
    "build_averaged_system",
    "ConditionReport",
    "check_conditions",
]

MIN_PANELS = 1024
MAX_PANELS = 2**22
RTOL = 1e-8
DIFFUSION_MODES = ("mean", "rms")


class QuadratureError(RuntimeError):
    def __init__(self, achieved: float, rtol: float, panels: int):
        self.achieved = achieved
        super().__init__(
            f"window quadrature did not converge: relative change {achieved:.3e} "
            f"> {rtol:.1e} at {panels} panels"
        )


def window_mean(g: Callable, window: float, rtol: float = RTOL, min_panels: int = MIN_PANELS,
                max_panels: int = MAX_PANELS) -> np.ndarray:
    """``(1/window) int_0^window g(t) dt`` for vectorised ``g``.

    ``g`` receives node times of shape ``(K,)`` and returns shape
    ``(K, ...)``; the mean is taken over the first axis. Entries that are
    constant in time are returned exactly.
    """
    if not window > 0:
        raise ValueError(f"averaging window must be positive, got {window}")
    panels = min_panels
    worst = math.inf
    while panels <= max_panels:
        t = np.linspace(0.0, window, 2 * panels + 1)
        vals = np.asarray(g(t), dtype=float)
        coarse = simpson(vals[::2], dx=2 * window / (2 * panels), axis=0) / window
        fine = simpson(vals, dx=window / (2 * panels), axis=0) / window
        scale = np.maximum(np.abs(fine), np.mean(np.abs(vals), axis=0))
        err = np.abs(fine - coarse)
        if np.all(err <= rtol * scale):
            const = np.all(vals == vals[:1], axis=0)
            return np.where(const, vals[0], fine)
        with np.errstate(divide="ignore", invalid="ignore"):
            worst = float(np.max(np.where(scale > 0, err / scale, np.inf)))
        panels *= 2
    raise QuadratureError(worst, rtol, panels // 2)


def _col(t: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape node times to broadcast against a state batch of rank ``ndim``."""
    return t.reshape((-1,) + (1,) * ndim)


def time_average_drift(b: Callable, window: float, y, rtol: float = RTOL) -> np.ndarray:
    """Window mean of ``b(s, y)`` over ``[0, window]`` at state(s) ``y`` of shape ``(..., d)``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    yb = y[None]

    def g(t):
        return np.broadcast_to(b(_col(t, y.ndim), yb), (t.size,) + y.shape)

    return window_mean(g, window, rtol)


def rms_average_diffusion(sigma: Callable, window: float, y, mode: str = "rms",
                          dim_noise: int = 1, rtol: float = RTOL) -> np.ndarray:
    """Entrywise window average of ``sigma(s, y)``, shape ``(..., d, m)``.

    ``mode="mean"`` returns the plain mean; ``mode="rms"`` returns
    ``sqrt(mean(sigma^2))`` with the sign of the mean (positive when the
    mean is exactly zero).
    """
    if mode not in DIFFUSION_MODES:
        raise ValueError(f"diffusion mode must be one of {DIFFUSION_MODES}, got {mode!r}")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    yb = y[None]
    shape = y.shape + (dim_noise,)

    def g(t):
        return np.broadcast_to(sigma(_col(t, y.ndim), yb), (t.size,) + shape)

    mean = window_mean(g, window, rtol)
    if mode == "mean":
        return mean
    msq = window_mean(lambda t: g(t) ** 2, window, rtol)
    return np.where(mean < 0, -1.0, 1.0) * np.sqrt(msq)


class _MemoAverage:
    """Per-state memoised window average.

    Cache misses in a batch are computed in one vectorised quadrature.
    Plain dict reads/writes; concurrent first-writes store identical values.
    """

    def __init__(self, compute: Callable, out_tail: tuple):
        self._compute = compute
        self._tail = out_tail
        self.cache: dict = {}

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        keys = [row.tobytes() for row in flat]
        missing = [i for i, k in enumerate(keys) if k not in self.cache]
        if missing:
            uniq = {}
            for i in missing:
                uniq.setdefault(keys[i], i)
            idx = list(uniq.values())
            vals = self._compute(flat[idx])
            for k, v in zip(uniq, vals):
                self.cache[k] = v
        out = np.stack([self.cache[k] for k in keys])
        return out.reshape(x.shape[:-1] + self._tail)


def _affine_drift_average(system: SdeSystem, window: float):
    d = system.dim_state
    pts = np.vstack([np.zeros(d), np.eye(d)])
    avg = time_average_drift(system.drift, window, pts)
    offset = avg[0]
    slope = (avg[1:] - offset).T  # slope[i, k] = d b_bar_i / d y_k

    def b_bar(x):
        x = np.asarray(x, dtype=float)
        return offset + np.sum(slope * x[..., None, :], axis=-1)

    return b_bar


@dataclass
class AveragedSystem:
    """Autonomous coefficients ``b_bar(x)``, ``sigma_bar(x)`` paired with their source system."""

    base: SdeSystem
    b_bar: Callable
    sigma_bar: Callable
    window: float
    provenance: str
    mode: str = "rms"
    paper_value: dict = field(default_factory=dict)

    def as_system(self, epsilon: float | None = None) -> SdeSystem:
        """The averaged equation as an :class:`SdeSystem` with the base scaling."""
        b_bar, sigma_bar = self.b_bar, self.sigma_bar
        return SdeSystem(
            drift=lambda t, x: b_bar(x),
            diffusion=lambda t, x: sigma_bar(x),
            h=self.base.h,
            epsilon=self.base.epsilon if epsilon is None else epsilon,
            dim_state=self.base.dim_state,
            dim_noise=self.base.dim_noise,
            epsilon_0=self.base.epsilon_0,
            drift_affine=self.base.drift_affine,
            additive_noise=self.base.additive_noise,
            autonomous=True,
            name=f"{self.base.name} (averaged)".strip(),
        )


def build_averaged_system(
    system: SdeSystem,
    window: float,
    mode: str = "rms",
    analytic: tuple[Callable, Callable] | None = None,
    paper_value: dict | None = None,
) -> AveragedSystem:
    """Average ``system`` over ``[0, window]``.

    With ``analytic=(b_bar, sigma_bar)`` the closed forms are used as given.
    An ``autonomous`` system is its own average, so both equations then run
    bit-identical recursions. Otherwise coefficients come from quadrature:
    once for an affine drift or an additive diffusion (as declared on the
    system), per state point with memoisation in general.
    """
    if mode not in DIFFUSION_MODES:
        raise ValueError(f"diffusion mode must be one of {DIFFUSION_MODES}, got {mode!r}")
    paper_value = dict(paper_value or {})
    if analytic is not None:
        b_bar, sigma_bar = analytic
        return AveragedSystem(system, b_bar, sigma_bar, window, "analytic", mode, paper_value)
    if system.autonomous:
        zero = np.zeros((1,))
        return AveragedSystem(
            system,
            lambda x: system.drift(zero.reshape((1,) * np.ndim(x)), x),
            lambda x: system.diffusion(zero.reshape((1,) * np.ndim(x)), x),
            window, "analytic", mode, paper_value,
        )

    d, m = system.dim_state, system.dim_noise
    if system.drift_affine:
        b_bar = _affine_drift_average(system, window)
    else:
        b_bar = _MemoAverage(lambda ys: time_average_drift(system.drift, window, ys), (d,))

    if system.additive_noise:
        const = rms_average_diffusion(system.diffusion, window, np.zeros(d), mode, m)

        def sigma_bar(x):
            return np.broadcast_to(const, np.shape(x)[:-1] + (d, m))
    else:
        sigma_bar = _MemoAverage(
            lambda ys: rms_average_diffusion(system.diffusion, window, ys, mode, m), (d, m)
        )
    return AveragedSystem(system, b_bar, sigma_bar, window, "quadrature", mode, paper_value)


@dataclass(frozen=True)
class ConditionReport:
    """Sampled deviation functions for the drift (L1) and diffusion (L2) hypotheses.

    Descriptive only: a vanishing limit cannot be certified from finitely
    many windows, so ``decreasing_tail`` records whether the last three
    samples are non-increasing.
    """

    windows: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    state_box: np.ndarray
    decreasing_tail: dict


def _non_increasing_tail(v: np.ndarray, k: int = 3, rtol: float = 1e-7) -> bool:
    tail = v[-k:]
    slack = rtol * np.maximum(np.abs(tail[:-1]), 1e-300)
    return bool(np.all(tail[1:] <= tail[:-1] + slack))


def check_conditions(
    system: SdeSystem,
    averaged: AveragedSystem,
    windows: Iterable[float],
    state_box: Iterable,
    rtol: float = RTOL,
) -> ConditionReport:
    """Evaluate ``phi_1`` and ``phi_2`` on each window ``T1``.

    ``phi_1(T1) = max_y [(1/T1) int |b(s,y) - b_bar(y)| ds] / (1 + |y|)`` and
    ``phi_2(T1) = max_y [(1/T1) int |sigma(s,y) - sigma_bar(y)|^2 ds] / (1 + |y|^2)``
    with Euclidean and Frobenius norms.
    """
    windows = np.asarray(list(windows), dtype=float)
    if windows.size == 0 or np.any(np.diff(windows) <= 0):
        raise ValueError("windows must be a nonempty increasing sequence")
    d, m = system.dim_state, system.dim_noise
    ys = np.asarray(list(state_box), dtype=float).reshape(-1, d)
    if ys.shape[0] == 0:
        raise ValueError("state_box must be nonempty")

    bb = np.broadcast_to(np.asarray(averaged.b_bar(ys), dtype=float), ys.shape)
    sb = np.broadcast_to(np.asarray(averaged.sigma_bar(ys), dtype=float), ys.shape + (m,))
    norm_y = np.linalg.norm(ys, axis=-1)

    def drift_dev(t):
        b = np.broadcast_to(system.drift(_col(t, 2), ys[None]), (t.size,) + ys.shape)
        return np.linalg.norm(b - bb, axis=-1)

    def diff_dev(t):
        s = np.broadcast_to(system.diffusion(_col(t, 2), ys[None]), (t.size,) + ys.shape + (m,))
        return np.sum((s - sb) ** 2, axis=(-2, -1))

    phi1 = np.array([np.max(window_mean(drift_dev, T, rtol) / (1.0 + norm_y)) for T in windows])
    phi2 = np.array([np.max(window_mean(diff_dev, T, rtol) / (1.0 + norm_y**2)) for T in windows])
    phi1, phi2 = np.maximum(phi1, 0.0), np.maximum(phi2, 0.0)
    tail = {"phi1": _non_increasing_tail(phi1), "phi2": _non_increasing_tail(phi2)}
    return ConditionReport(windows, phi1, phi2, ys, tail)
