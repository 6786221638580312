"""Fractional driving noise with volatility uncertainty.

The process is centered Gaussian per scenario with the classical
fractional covariance  R(s,t) = (s^2H + t^2H - |t-s|^2H)/2  scaled by a
scenario volatility sigma^2; the band's two ends give the upper and lower
covariance envelopes.  Two sampling routes are exposed:

* exact covariance factorization (default): Cholesky of R on the grid,
  one lower-triangular solve per path;
* discrete Volterra synthesis: B_H(t_i) ~= sum_j K_H(t_i, s_j*) dB_j with
  the square-integrable kernel K_H evaluated at increment midpoints, which
  also powers conditional means given the driving noise.

Only constant-sigma scenarios are supported: scaling the covariance by a
constant is exact, while a time-varying volatility has no closed
covariance here.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.linalg import cholesky
from scipy.special import beta as _beta
from scipy.special import betainc as _betainc

from .errors import NumericalFailure
from .paths import SampledPath, _draw_normals
from .sublinear import UncertaintyBand

__all__ = [
    "FgbmSpec",
    "fgbm_covariance",
    "moving_avg_constant",
    "volterra_kernel",
    "simulate_fgbm",
    "fgbm_conditional_mean",
    "simulate_fgbm_asset",
]

_QUAD_ABS_TOL = 1e-10
_CACHE_MAX_POINTS = 4096  # factor matrices above this are not retained

_cache_lock = threading.Lock()
_chol_cache: dict = {}
_kernel_cache: dict = {}


@dataclass(frozen=True)
class FgbmSpec:
    """Hurst index, volatility band, and simulation grid."""

    hurst: float
    band: UncertaintyBand
    grid: tuple

    def __post_init__(self):
        if not (0.0 < self.hurst < 1.0):
            raise ValueError(f"Hurst index must lie in (0, 1), got {self.hurst!r}")
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or len(g) < 2:
            raise ValueError("grid needs at least two points")
        if g[0] < 0.0:
            raise ValueError("grid must start at a nonnegative time")
        if np.any(np.diff(g) <= 0.0):
            raise ValueError("grid must be strictly increasing")

    @property
    def grid_array(self) -> np.ndarray:
        return np.asarray(self.grid, dtype=float)


def fgbm_covariance(s: float, t: float, H: float, band: UncertaintyBand):
    """Upper/lower covariance envelope of the fractional noise at (s, t):
    sigma^2 (s^2H + t^2H - |t-s|^2H) / 2 at the band's two volatility ends."""
    if not (0.0 < H < 1.0):
        raise ValueError(f"Hurst index must lie in (0, 1), got {H!r}")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0.0) or np.any(t < 0.0):
        raise ValueError("covariance times must be nonnegative")
    base = 0.5 * (np.abs(t) ** (2 * H) + np.abs(s) ** (2 * H) - np.abs(t - s) ** (2 * H))
    upper = band.sigma_hi**2 * base
    lower = band.sigma_lo**2 * base
    if np.ndim(base) == 0:
        return float(upper), float(lower)
    return upper, lower


def moving_avg_constant(H: float) -> float:
    """Normalisation of the moving-average representation of the noise:
    sqrt(2H sin(pi H) Gamma(2H)) / Gamma(H + 1/2).  Equals 1 at H = 1/2."""
    if not (0.0 < H < 1.0):
        raise ValueError(f"Hurst index must lie in (0, 1), got {H!r}")
    num = math.sqrt(2.0 * H * math.sin(math.pi * H) * math.gamma(2.0 * H))
    return num / math.gamma(H + 0.5)


# ---------------------------------------------------------------------------
# Volterra kernel
# ---------------------------------------------------------------------------


def _quad_checked(f, lo, hi):
    # accuracy is enforced on the reported error estimate below, so the
    # roundoff chatter quad emits at its precision floor is not a failure
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(f, lo, hi, epsabs=_QUAD_ABS_TOL, epsrel=1e-10, limit=200)
    if err > 1e-6 * max(1.0, abs(val)):
        raise NumericalFailure("kernel quadrature did not converge",
                               abs_error=err, value=val)
    return val


def volterra_kernel(t: float, s: float, H: float) -> float:
    """Square-integrable kernel writing the fractional noise as an integral
    against ordinary driving noise: B_H(t) = int_0^t K_H(t, s) dB_s.

    Two-branch formula split at H = 1/2.  For H < 1/2 the inner integral
    reduces exactly to an incomplete Beta tail (substituting u -> s/v), so
    no quadrature is needed; for H > 1/2 the endpoint singularity at u = s
    is weakened by the substitution u = s + (t-s) w^2 before adaptive
    quadrature.  H = 1/2 itself is the identity kernel (the second-branch
    constant is singular there, and the driving noise is already the
    process).
    """
    if not (0.0 < H < 1.0):
        raise ValueError(f"Hurst index must lie in (0, 1), got {H!r}")
    if not (0.0 < s < t):
        raise ValueError(f"kernel needs 0 < s < t, got s={s!r}, t={t!r}")
    if H == 0.5:
        return 1.0

    if H > 0.5:
        c = math.sqrt(H * (2.0 * H - 1.0) / _beta(2.0 - 2.0 * H, H - 0.5))
        pre = 2.0 * (t - s) ** (H - 0.5)

        def f(w):
            return pre * w ** (2.0 * H - 2.0) * (s + (t - s) * w * w) ** (H - 0.5)

        return c * s ** (0.5 - H) * _quad_checked(f, 0.0, 1.0)

    c = math.sqrt(2.0 * H / ((1.0 - 2.0 * H) * _beta(1.0 - 2.0 * H, H + 0.5)))
    # int_s^t u^(H-3/2) (u-s)^(H-1/2) du == s^(2H-1) B(1-2H, H+1/2)
    #   * I_{(t-s)/t}(H+1/2, 1-2H)   (regularised incomplete Beta,
    # complementary argument form to stay accurate as s -> t)
    a, b = 1.0 - 2.0 * H, H + 0.5
    integral = s ** (2.0 * H - 1.0) * _beta(a, b) * _betainc(b, a, (t - s) / t)
    direct = (t / s) ** (H - 0.5) * (t - s) ** (H - 0.5)
    return c * (direct - (H - 0.5) * s ** (0.5 - H) * integral)


def _kernel_matrix(grid: np.ndarray, H: float) -> np.ndarray:
    """K_H(t_i, s_j*) at increment midpoints s_j*, lower triangular (j < i).

    Midpoints avoid the s -> 0 divergence of the kernel; one quadrature per
    entry, so this is only used for the explicitly requested synthesis
    route and for conditional means.
    """
    key = (grid.tobytes(), H)
    with _cache_lock:
        hit = _kernel_cache.get(key)
    if hit is not None:
        return hit
    mids = 0.5 * (grid[:-1] + grid[1:])
    n = len(mids)
    K = np.zeros((n, n))
    for i in range(n):
        t = grid[i + 1]
        for j in range(i + 1):
            K[i, j] = volterra_kernel(t, mids[j], H) if mids[j] < t else 0.0
    if n <= _CACHE_MAX_POINTS:
        with _cache_lock:
            _kernel_cache[key] = K
    return K


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _unit_cholesky(times: np.ndarray, H: float) -> np.ndarray:
    """Lower Cholesky factor of the unit-volatility covariance on ``times``.

    Tiny diagonal regularisation (up to 1e-12 relative) is attempted before
    declaring the matrix numerically indefinite.
    """
    key = (times.tobytes(), H)
    with _cache_lock:
        hit = _chol_cache.get(key)
    if hit is not None:
        return hit
    tt = times[:, None]
    ss = times[None, :]
    R = 0.5 * (tt ** (2 * H) + ss ** (2 * H) - np.abs(tt - ss) ** (2 * H))
    scale = float(R.diagonal().max())
    L = None
    for jitter in (0.0, 1e-14, 1e-13, 1e-12):
        try:
            L = cholesky(R + jitter * scale * np.eye(len(times)), lower=True,
                         check_finite=False)
            break
        except np.linalg.LinAlgError:
            continue
    if L is None:
        raise NumericalFailure(
            "covariance matrix not positive definite after regularisation",
            n_points=len(times), hurst=H, max_jitter=1e-12)
    if len(times) <= _CACHE_MAX_POINTS:
        with _cache_lock:
            _chol_cache[key] = L
    return L


def _scenario_sigma(sigma, band: UncertaintyBand) -> float:
    s = np.asarray(sigma, dtype=float)
    if s.ndim > 0:
        if np.ptp(s) != 0.0:
            raise ValueError("only constant-volatility scenarios are supported "
                             "for fractional simulation")
        s = s.flat[0]
    s = float(s)
    if not band.contains_sigma(s):
        raise ValueError(f"sigma={s} outside the band [{band.sigma_lo}, {band.sigma_hi}]")
    return s


def simulate_fgbm(spec: FgbmSpec, sigma, seed: int, n_paths: int,
                  method: str = "factorization"):
    """Fractional noise trajectories under one constant-sigma scenario.

    ``factorization`` (default) samples exactly from the scaled covariance;
    ``volterra`` synthesises the paths from ordinary driving increments
    through the discrete kernel (needs the grid to start at 0).  Paths are
    deterministic per (seed, path index) and start at 0 when the grid does.
    """
    if method not in ("factorization", "volterra"):
        raise ValueError(f"unknown method {method!r}")
    sig = _scenario_sigma(sigma, spec.band)
    grid = spec.grid_array
    H = spec.hurst

    starts_at_zero = grid[0] == 0.0
    sample_times = grid[1:] if starts_at_zero else grid

    # one matvec per path (not a batched matmul): path j's values must not
    # depend on how many other paths share the call
    if method == "factorization":
        L = _unit_cholesky(sample_times, H)
        z = _draw_normals(seed, n_paths, len(sample_times))
        vals = np.empty_like(z)
        for j in range(n_paths):
            vals[j] = sig * (L @ z[j])
    else:
        if not starts_at_zero:
            raise ValueError("volterra synthesis needs the grid to start at 0")
        K = _kernel_matrix(grid, H)
        dt = np.diff(grid)
        z = _draw_normals(seed, n_paths, len(dt))
        vals = np.empty_like(z)
        for j in range(n_paths):
            vals[j] = K @ (sig * np.sqrt(dt) * z[j])

    out = []
    for j in range(n_paths):
        v = np.concatenate(([0.0], vals[j])) if starts_at_zero else vals[j]
        out.append(SampledPath(grid, v))
    return out


def fgbm_conditional_mean(driving_increments: SampledPath, v: float, t: float,
                          H: float) -> float:
    """Best forecast of the fractional noise at t given driving noise to v:
    the discrete Volterra sum over increments contained in [0, v]."""
    if not (0.0 < H < 1.0):
        raise ValueError(f"Hurst index must lie in (0, 1), got {H!r}")
    if v < 0.0 or v > t + 1e-12:
        raise ValueError(f"need 0 <= v <= t, got v={v!r}, t={t!r}")
    if v == 0.0:
        return 0.0
    times = driving_increments.times
    dB = np.diff(driving_increments.values)
    mids = 0.5 * (times[:-1] + times[1:])
    used = times[1:] <= v + 1e-12 * max(1.0, v)
    if H == 0.5:
        return float(np.sum(dB[used]))
    acc = 0.0
    for m, d in zip(mids[used], dB[used]):
        if m < t:
            acc += volterra_kernel(t, m, H) * d
    return float(acc)


def simulate_fgbm_asset(spec: FgbmSpec, b, S0: float, sigma, seed: int,
                        n_paths: int):
    """Positive asset paths driven by fractional noise with deterministic
    drift rate b(t): S_{i+1} = S_i exp(b(t_i) dt + dB_H)."""
    if not (math.isfinite(S0) and S0 > 0.0):
        raise ValueError(f"S0 must be positive, got {S0!r}")
    grid = spec.grid_array
    if grid[0] != 0.0:
        raise ValueError("asset simulation needs the grid to start at 0")
    drift = b if callable(b) else (lambda _t, _b=float(b): _b)
    noise = simulate_fgbm(spec, sigma, seed, n_paths)
    dt = np.diff(grid)
    b_dt = np.array([drift(tl) for tl in grid[:-1]]) * dt
    out = []
    for p in noise:
        log_inc = b_dt + np.diff(p.values)
        vals = np.empty(len(grid))
        vals[0] = S0
        vals[1:] = S0 * np.exp(np.cumsum(log_inc))
        out.append(SampledPath(grid, vals, positive=True))
    return out
