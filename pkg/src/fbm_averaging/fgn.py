"""Exact simulation of fractional Brownian motion and checks on its law.

Both generators target the covariance of the increment sequence
(fractional Gaussian noise) and cumulatively sum it, so paths start at
zero by construction and ``h = 0.5`` reduces exactly to a scaled random
walk.

Noise is always an explicit argument. ``generate_cholesky`` consumes
``n_steps`` standard normals per path; ``generate_circulant`` consumes
``2 * n_steps`` (the circulant embedding size). A leading batch axis on
``noise`` yields a batch of paths sharing one grid.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import lapack

from . import seeding

__all__ = [
    "HurstParameter",
    "TimeGrid",
    "FbmPath",
    "FgnSpectrum",
    "CirculantEmbeddingError",
    "FactorizationError",
    "as_hurst",
    "fbm_covariance",
    "fgn_autocovariance",
    "lrd_asymptote",
    "increment_covariance",
    "cholesky_factor",
    "circulant_spectrum",
    "generate_cholesky",
    "generate_circulant",
    "generate_ensemble",
    "noise_length",
    "path_increments",
    "gaussian_moment_factor",
    "MomentEstimate",
    "increment_moment",
    "HurstEstimate",
    "estimate_hurst",
]

METHODS = ("cholesky", "circulant")


class CirculantEmbeddingError(RuntimeError):
    """The circulant embedding has a materially negative eigenvalue."""


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(
            f"covariance matrix is not positive definite: leading minor of "
            f"order {pivot} (pivot index {pivot - 1}) failed"
        )


@dataclass(frozen=True)
class HurstParameter:
    """Hurst index in ``[0.5, 1)``.

    ``h = 0.5`` is accepted only as the Brownian cross-check and is marked
    :attr:`classical`.
    """

    h: float

    def __post_init__(self):
        h = float(self.h)
        if not math.isfinite(h) or not 0.5 <= h < 1.0:
            raise ValueError(f"Hurst parameter must lie in [0.5, 1), got {self.h!r}")
        object.__setattr__(self, "h", h)

    @property
    def classical(self) -> bool:
        return self.h == 0.5

    def __float__(self) -> float:
        return self.h


HurstLike = Union[float, HurstParameter]


def as_hurst(h: HurstLike) -> HurstParameter:
    return h if isinstance(h, HurstParameter) else HurstParameter(h)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * dt`` on ``[0, t_end]`` with ``n_steps`` cells."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError(f"t_end must be positive and finite, got {self.t_end!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by {factor}")
        return TimeGrid(self.t_end, self.n_steps // factor)


@dataclass(frozen=True)
class FgnSpectrum:
    """Eigenvalues of the circulant embedding of unit-lag fGn covariance."""

    eigenvalues: np.ndarray
    clipped_count: int
    min_raw: float


@dataclass(frozen=True)
class FbmPath:
    """Sampled fBm trajectory (or a batch of them along leading axes).

    ``values[..., i]`` is ``B^H(t_i)``; the last axis has ``n_steps + 1``
    entries and ``values[..., 0] == 0``.
    """

    grid: TimeGrid
    values: np.ndarray
    h: HurstParameter
    method: str = "cholesky"
    clipped_count: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[-1:] != (self.grid.n_steps + 1,):
            raise ValueError(
                f"expected {self.grid.n_steps + 1} samples on the last axis, "
                f"got shape {values.shape}"
            )
        if np.any(values[..., 0] != 0.0):
            raise ValueError("fBm paths must start at 0")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "h", as_hurst(self.h))

    @property
    def n_paths(self) -> int:
        return int(np.prod(self.values.shape[:-1], dtype=int))

    def __len__(self) -> int:
        return self.values.shape[0] if self.values.ndim > 1 else 1

    def __getitem__(self, idx) -> "FbmPath":
        if self.values.ndim == 1:
            raise TypeError("single path is not indexable")
        return FbmPath(self.grid, self.values[idx], self.h, self.method, self.clipped_count)

    def coarsen(self, factor: int) -> "FbmPath":
        """Subsample every ``factor``-th node; the result is an exact fBm sample."""
        grid = self.grid.coarsen(factor)
        return FbmPath(grid, self.values[..., ::factor], self.h, self.method, self.clipped_count)


def fbm_covariance(t, s, h: HurstLike):
    """``E[B^H(t) B^H(s)] = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2``.

    Vectorised over ``t`` and ``s``. Raises ``ValueError`` on negative times.
    """
    H2 = 2.0 * as_hurst(h).h
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("fbm_covariance is defined for nonnegative times only")
    out = 0.5 * (t**H2 + s**H2 - np.abs(t - s) ** H2)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(n, h: HurstLike):
    """Unit-lag increment autocovariance ``((n+1)^{2H} + |n-1|^{2H} - 2 n^{2H}) / 2``."""
    H2 = 2.0 * as_hurst(h).h
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("lag must be nonnegative")
    n = n.astype(float)
    out = 0.5 * ((n + 1.0) ** H2 + np.abs(n - 1.0) ** H2 - 2.0 * n**H2)
    return float(out) if out.ndim == 0 else out


def lrd_asymptote(n, h: HurstLike):
    """Leading-order tail ``H (2H - 1) n^{2H - 2}`` of :func:`fgn_autocovariance`."""
    H = as_hurst(h).h
    return H * (2.0 * H - 1.0) * np.asarray(n, dtype=float) ** (2.0 * H - 2.0)


def increment_covariance(n_steps: int, h: HurstLike, dt: float = 1.0) -> np.ndarray:
    """Toeplitz covariance of the ``n_steps`` increments on a grid of step ``dt``."""
    H = as_hurst(h).h
    rho = fgn_autocovariance(np.arange(n_steps), H)
    idx = np.abs(np.subtract.outer(np.arange(n_steps), np.arange(n_steps)))
    return dt ** (2.0 * H) * np.atleast_1d(rho)[idx]


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, raising :class:`FactorizationError` with the pivot."""
    cov = np.asarray(cov, dtype=float)
    c, info = lapack.dpotrf(cov, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(int(info))
    if info < 0:
        raise ValueError(f"dpotrf rejected argument {-info}")
    return c


@functools.lru_cache(maxsize=64)
def _increment_factor(n_steps: int, h: float) -> np.ndarray:
    L = cholesky_factor(increment_covariance(n_steps, h))
    L.setflags(write=False)
    return L


@functools.lru_cache(maxsize=64)
def circulant_spectrum(n_steps: int, h: float, tol: float = 1e-12) -> FgnSpectrum:
    """Eigenvalues of the size ``2 n_steps`` circulant embedding of unit-lag fGn.

    Raw eigenvalues in ``[-tol * max, 0)`` are clipped to zero and counted;
    anything more negative raises :class:`CirculantEmbeddingError`.
    """
    H = as_hurst(h).h
    n = int(n_steps)
    rho = np.atleast_1d(fgn_autocovariance(np.arange(n + 1), H))
    row = np.concatenate([rho, rho[-2:0:-1]])
    raw = np.fft.fft(row).real
    floor = -tol * raw.max()
    if raw.min() < floor:
        raise CirculantEmbeddingError(
            f"circulant embedding eigenvalue {raw.min():.3e} below {floor:.3e} "
            f"(n_steps={n}, h={H}); use generate_cholesky instead"
        )
    negative = raw < 0
    eig = np.where(negative, 0.0, raw)
    eig.setflags(write=False)
    return FgnSpectrum(eig, int(negative.sum()), float(raw.min()))


def noise_length(method: str, n_steps: int) -> int:
    """Standard normals consumed per path by ``method``."""
    if method == "cholesky":
        return n_steps
    if method == "circulant":
        return 2 * n_steps
    raise ValueError(f"unknown generation method {method!r}; expected one of {METHODS}")


def _check_noise(noise, expected: int) -> np.ndarray:
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 0 or noise.shape[-1] != expected:
        raise ValueError(f"noise must have {expected} entries on its last axis, got shape {noise.shape}")
    return noise


def _from_increments(grid: TimeGrid, h: HurstParameter, incr: np.ndarray, **kw) -> FbmPath:
    values = np.zeros(incr.shape[:-1] + (grid.n_steps + 1,))
    np.cumsum(incr, axis=-1, out=values[..., 1:])
    return FbmPath(grid, values, h, **kw)


def generate_cholesky(grid: TimeGrid, h: HurstLike, noise) -> FbmPath:
    """fBm on ``grid`` from ``n_steps`` standard normals via the Cholesky factor.

    Cost is ``O(n^3)`` once per ``(n_steps, h)`` (cached) plus ``O(n^2)`` per
    path.
    """
    h = as_hurst(h)
    noise = _check_noise(noise, grid.n_steps)
    L = _increment_factor(grid.n_steps, h.h)
    incr = grid.dt**h.h * (noise @ L.T)
    return _from_increments(grid, h, incr, method="cholesky")


def generate_circulant(grid: TimeGrid, h: HurstLike, noise) -> FbmPath:
    """fBm on ``grid`` from ``2 * n_steps`` standard normals by circulant embedding.

    Davies-Harte construction: the embedding has size ``N = 2 n``; noise
    entry 0 drives frequency 0, entry 1 drives the Nyquist frequency ``n``
    and entries ``2k, 2k+1`` form the real and imaginary parts of frequency
    ``k`` for ``0 < k < n``.
    """
    h = as_hurst(h)
    n = grid.n_steps
    N = 2 * n
    noise = _check_noise(noise, N)
    spec = circulant_spectrum(n, h.h)
    lam = spec.eigenvalues

    w = np.zeros(noise.shape[:-1] + (N,), dtype=complex)
    w[..., 0] = np.sqrt(lam[0] / N) * noise[..., 0]
    w[..., n] = np.sqrt(lam[n] / N) * noise[..., 1]
    if n > 1:
        k = np.arange(1, n)
        scale = np.sqrt(lam[k] / (2.0 * N))
        w[..., k] = scale * (noise[..., 2 * k] + 1j * noise[..., 2 * k + 1])
        w[..., N - k] = np.conj(w[..., k])
    incr = grid.dt**h.h * np.fft.fft(w, axis=-1).real[..., :n]
    return _from_increments(grid, h, incr, method="circulant", clipped_count=spec.clipped_count)


_GENERATORS = {"cholesky": generate_cholesky, "circulant": generate_circulant}


def generate_ensemble(
    grid: TimeGrid,
    h: HurstLike,
    n_paths: int,
    seed: int,
    method: str = "circulant",
    first: int = 0,
) -> FbmPath:
    """``n_paths`` independent paths; path ``p`` draws from stream ``(seed, first + p)``.

    Each path is generated on its own, so path ``p`` is bit-identical no
    matter how many other paths are requested.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    gen = _GENERATORS.get(method)
    L = noise_length(method, grid.n_steps)
    rows = [
        gen(grid, h, seeding.standard_normal(seed, first + p, L)).values
        for p in range(n_paths)
    ]
    out = FbmPath(grid, np.stack(rows), as_hurst(h), method)
    if method == "circulant":
        object.__setattr__(out, "clipped_count", circulant_spectrum(grid.n_steps, as_hurst(h).h).clipped_count)
    return out


def path_increments(path: FbmPath, lag: int = 1) -> np.ndarray:
    """Increments ``values[i + lag] - values[i]`` along the last axis."""
    if lag < 1 or lag > path.grid.n_steps:
        raise ValueError(f"lag must be in [1, {path.grid.n_steps}], got {lag}")
    v = path.values
    return v[..., lag:] - v[..., :-lag]


def gaussian_moment_factor(k: int) -> float:
    """``(2k)! / (k! 2^k)``, the ``2k``-th moment of a standard normal."""
    return math.factorial(2 * k) / (math.factorial(k) * 2**k)


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    theoretical: float
    n_paths: int

    @property
    def z_score(self) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.value == self.theoretical else math.inf
        return (self.value - self.theoretical) / self.stderr


def _as_ensemble(paths: Union[FbmPath, Sequence[FbmPath]]) -> FbmPath:
    if isinstance(paths, FbmPath):
        if paths.values.ndim == 1:
            return FbmPath(paths.grid, paths.values[None, :], paths.h, paths.method)
        return paths
    paths = list(paths)
    if not paths:
        raise ValueError("empty ensemble")
    grid, h = paths[0].grid, paths[0].h
    if any(p.grid != grid or p.h != h for p in paths):
        raise ValueError("ensemble members must share grid and Hurst parameter")
    return FbmPath(grid, np.stack([p.values for p in paths]), h, paths[0].method)


def increment_moment(paths: Union[FbmPath, Sequence[FbmPath]], k: int, lag: int) -> MomentEstimate:
    """Empirical ``E[(B(t + tau) - B(t))^{2k}]`` with ``tau = lag * dt``.

    Each path contributes the average over all its lag-increments; the
    standard error is taken across paths, which are independent.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    ens = _as_ensemble(paths)
    if ens.values.size == 0:
        raise ValueError("empty ensemble")
    d = path_increments(ens, lag).reshape(-1, ens.grid.n_steps + 1 - lag)
    per_path = np.mean(d ** (2 * k), axis=1)
    M = per_path.size
    se = float(np.std(per_path, ddof=1) / math.sqrt(M)) if M > 1 else math.inf
    tau = lag * ens.grid.dt
    theory = gaussian_moment_factor(k) * tau ** (2.0 * ens.h.h * k)
    return MomentEstimate(float(per_path.mean()), se, theory, M)


@dataclass(frozen=True)
class HurstEstimate:
    h: float
    degenerate: bool
    lags: np.ndarray
    log_scale: np.ndarray
    log_moment: np.ndarray

    def __float__(self) -> float:
        return self.h


def estimate_hurst(series, dt: float | None = None, max_lag: int | None = None) -> HurstEstimate:
    """Hurst index from the scaling of the increment second moment.

    Regresses ``log mean((X[i+m] - X[i])^2)`` on ``log(m dt)`` for dyadic
    lags ``m <= max_lag`` (default 16; longer lags only add variance); the slope is ``2 H``. ``series`` is a path (``FbmPath`` or
    raw cumulative values, at least 64 long). The result is flagged
    ``degenerate`` when the increments carry no randomness (e.g. a straight
    line, which returns ``H = 1``).
    """
    if isinstance(series, FbmPath):
        if dt is None:
            dt = series.grid.dt
        series = series.values
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("estimate_hurst expects a single series")
    if x.size < 64:
        raise ValueError(f"series too short for Hurst estimation ({x.size} < 64)")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    dt = 1.0 if dt is None else float(dt)
    if max_lag is None:
        max_lag = max(2, min(16, x.size // 8))
    lags = 2 ** np.arange(int(math.log2(max_lag)) + 1)
    moments = np.array([np.mean((x[m:] - x[:-m]) ** 2) for m in lags])
    if np.any(moments <= 0):
        raise ValueError("series has zero increments at some lag; Hurst index undefined")
    log_scale = np.log(lags * dt)
    log_moment = np.log(moments)
    slope = np.polyfit(log_scale, log_moment, 1)[0]
    d1 = np.diff(x)
    degenerate = bool(np.var(d1) <= 1e-20 * np.mean(d1**2))
    return HurstEstimate(float(slope / 2.0), degenerate, lags, log_scale, log_moment)
