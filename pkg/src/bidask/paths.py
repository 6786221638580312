"""Scenario simulation, Monte Carlo pricing, pathwise integration, hedging.

The worst-case expectation is operationalised as a supremum over an
explicit family of classical scenarios: each scenario is a piecewise
constant drift/volatility control inside the uncertainty band (plus,
optionally, the state-feedback rule read off a solved price surface).
Under one scenario everything is ordinary Ito calculus: driving noise has
independent centered Gaussian increments with variance sigma_i^2 dt, asset
paths use the exact-per-step lognormal scheme, and the deflator discounts
at the riskless rate while removing the scenario's risk premium.

Randomness: one named splittable generator (Philox keyed by the seed),
with path j drawing from counter block j << 128.  Path j's values depend
only on (seed, j), so growing n_paths or splitting a batch across workers
never changes existing paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainExitError, SingularControlError
from .pde import PriceSurface, PricingProblem
from .sublinear import UncertaintyBand

__all__ = [
    "SampledPath",
    "ControlProcess",
    "McEstimate",
    "BangBangRule",
    "simulate_gbm_increments",
    "simulate_asset_paths",
    "deflator_path",
    "mc_ask_bid",
    "bang_bang_control_from_surface",
    "estimate_tube_capacity",
    "holder_exponent",
    "HolderEstimate",
    "riemann_stieltjes",
    "ConvergenceReport",
    "hedge_verify",
    "HedgeReport",
    "default_control_family",
    "read_path_file",
    "write_path_file",
    "read_ensemble_file",
    "write_ensemble_file",
]


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------


@dataclass
class SampledPath:
    """A trajectory on a strictly increasing time grid starting at 0."""

    times: np.ndarray
    values: np.ndarray
    positive: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if len(self.times) < 1 or self.times[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("time grid must be strictly increasing")
        if self.positive and np.any(self.values <= 0.0):
            raise ValueError("positive path has nonpositive values")

    def __len__(self):
        return len(self.times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def resample(self, new_times) -> "SampledPath":
        new_times = np.asarray(new_times, dtype=float)
        vals = np.interp(new_times, self.times, self.values)
        return SampledPath(new_times, vals, positive=self.positive)


@dataclass(frozen=True)
class ControlProcess:
    """One classical scenario: piecewise constant drift and volatility.

    ``breakpoints[i]`` is the left end of interval i (the first must be 0);
    level i applies on [breakpoints[i], breakpoints[i+1]), the last level
    onward.  When a ``band`` is attached the levels must lie inside it.
    """

    breakpoints: tuple
    sigma_levels: tuple
    mu_levels: tuple
    band: UncertaintyBand | None = None
    label: str | None = None

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        sg = np.asarray(self.sigma_levels, dtype=float)
        mu = np.asarray(self.mu_levels, dtype=float)
        if len(bp) == 0 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(sg) != len(bp) or len(mu) != len(bp):
            raise ValueError("need one sigma and one mu level per breakpoint")
        if np.any(sg < 0.0):
            raise ValueError("sigma levels must be nonnegative")
        if self.band is not None:
            if not self.band.contains_sigma(sg):
                raise ValueError(f"sigma levels {self.sigma_levels} leave the band "
                                 f"[{self.band.sigma_lo}, {self.band.sigma_hi}]")
            if not self.band.contains_mu(mu):
                raise ValueError(f"mu levels {self.mu_levels} leave the band "
                                 f"[{self.band.mu_lo}, {self.band.mu_hi}]")

    @classmethod
    def constant(cls, mu: float, sigma: float, band: UncertaintyBand | None = None,
                 label: str | None = None) -> "ControlProcess":
        if label is None:
            label = f"const mu={mu:g} sigma={sigma:g}"
        return cls((0.0,), (float(sigma),), (float(mu),), band=band, label=label)

    def sigma_at(self, t):
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1,
                      0, len(self.breakpoints) - 1)
        return np.asarray(self.sigma_levels, dtype=float)[idx]

    def mu_at(self, t):
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1,
                      0, len(self.breakpoints) - 1)
        return np.asarray(self.mu_levels, dtype=float)[idx]


@dataclass(frozen=True)
class McEstimate:
    """A Monte Carlo estimate plus the control that produced it."""

    value: float
    std_error: float
    n_paths: int
    control_id: str

    def __post_init__(self):
        if self.std_error < 0.0:
            raise ValueError("std_error must be nonnegative")


@dataclass
class BangBangRule:
    """State-feedback scenario read off a solved price surface.

    Volatility switches between the band ends on the sign of the surface's
    discrete convexity at (t, x); the drift is a constant inside the band.
    Usable wherever a ControlProcess is (simulation looks levels up per
    step).
    """

    times: np.ndarray
    nodes: np.ndarray
    sign_matrix: np.ndarray
    sigma_on_convex: float
    sigma_on_concave: float
    mu_value: float
    label: str

    def sigma_state(self, t: float, s):
        ti = int(np.clip(np.searchsorted(self.times, t, side="right") - 1,
                         0, len(self.times) - 1))
        j = np.clip(np.searchsorted(self.nodes, np.asarray(s, dtype=float)),
                    1, len(self.nodes) - 1)
        left_closer = (np.asarray(s) - self.nodes[j - 1]) < (self.nodes[j] - np.asarray(s))
        j = np.where(left_closer, j - 1, j)
        sg = self.sign_matrix[ti, j]
        return np.where(sg > 0, self.sigma_on_convex, self.sigma_on_concave)

    def mu_state(self, t: float, s):
        return np.full(np.shape(np.asarray(s)), self.mu_value)


def bang_bang_control_from_surface(surface: PriceSurface, mu: float | None = None) -> BangBangRule:
    """Extremal scenario implied by a surface's convexity pattern.

    Ask surfaces map convex regions to sigma_hi (concave to sigma_lo); bid
    surfaces the reverse.  The drift defaults to the riskless rate clamped
    into the band (which makes the scenario's risk premium vanish whenever
    the band allows it).
    """
    if surface.side not in ("ask", "bid"):
        raise ValueError("feedback rule needs an ask or bid surface")
    if len(surface.space_nodes) < 3:
        raise ValueError("surface too coarse for curvature signs (need >= 3 space nodes)")
    band = surface.band
    if band is None:
        raise ValueError("surface carries no uncertainty band")
    if mu is None:
        mu = min(max(surface.rate, band.mu_lo), band.mu_hi)
    elif not band.contains_mu(mu):
        raise ValueError(f"mu={mu} outside the band [{band.mu_lo}, {band.mu_hi}]")
    signs = np.vstack([surface.curvature_sign_slice(i) for i in range(len(surface.times))])
    if surface.side == "ask":
        s_pos, s_neg = band.sigma_hi, band.sigma_lo
    else:
        s_pos, s_neg = band.sigma_lo, band.sigma_hi
    return BangBangRule(
        times=surface.times.copy(),
        nodes=surface.space_nodes.copy(),
        sign_matrix=signs,
        sigma_on_convex=s_pos,
        sigma_on_concave=s_neg,
        mu_value=float(mu),
        label=f"bang_bang_{surface.side}",
    )


def default_control_family(band: UncertaintyBand, n_sigma: int = 9, n_mu: int = 3):
    """Constant controls on an n_sigma x n_mu lattice spanning the band."""
    sigmas = np.unique(np.linspace(band.sigma_lo, band.sigma_hi, n_sigma))
    mus = np.unique(np.linspace(band.mu_lo, band.mu_hi, n_mu))
    return [ControlProcess.constant(m, s, band=band) for m in mus for s in sigmas]


# ---------------------------------------------------------------------------
# Random number generation
# ---------------------------------------------------------------------------


_RNG_BLOCK = 4096  # paths per substream; fixed so draws never depend on n_paths


def _block_rng(seed: int, block: int) -> np.random.Generator:
    """Stream for one block of paths: Philox keyed by the seed, counter
    offset by the block index (2^128 draws of headroom per block)."""
    return np.random.Generator(np.random.Philox(key=seed, counter=block << 128))


def _draw_normals(seed: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Standard normals, one row per path.

    Paths are grouped into fixed blocks of _RNG_BLOCK, each drawn from its
    own counter-offset substream, so row j depends only on (seed, j,
    n_steps): growing n_paths appends rows without touching existing ones,
    and blocks can be generated independently (e.g. in parallel) with
    identical results.
    """
    z = np.empty((n_paths, n_steps))
    for block in range((n_paths + _RNG_BLOCK - 1) // _RNG_BLOCK):
        lo = block * _RNG_BLOCK
        hi = min(lo + _RNG_BLOCK, n_paths)
        # a partial block is a row prefix of the full one: draws are
        # consumed row-major, so requesting fewer rows changes nothing
        z[lo:hi] = _block_rng(seed, block).standard_normal((hi - lo, n_steps))
    return z


# ---------------------------------------------------------------------------
# Scenario simulation
# ---------------------------------------------------------------------------


def _as_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or len(g) < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0.0):
        raise ValueError("time grid must be strictly increasing and start at 0")
    return g


def _check_control(control: ControlProcess, grid: np.ndarray,
                   band: UncertaintyBand | None) -> None:
    band = band if band is not None else control.band
    if band is not None:
        if not band.contains_sigma(control.sigma_levels):
            raise ValueError("control sigma levels leave the uncertainty band")
        if not band.contains_mu(control.mu_levels):
            raise ValueError("control mu levels leave the uncertainty band")
    horizon = grid[-1]
    for b in control.breakpoints[1:]:
        if b < horizon and np.min(np.abs(grid - b)) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"control breakpoint {b} is not aligned with the time grid")


def _step_levels(control: ControlProcess, grid: np.ndarray):
    left = grid[:-1]
    return control.sigma_at(left), control.mu_at(left)


def simulate_gbm_increments(control: ControlProcess, grid, seed: int, n_paths: int,
                            band: UncertaintyBand | None = None):
    """Driving-noise trajectories for one scenario.

    Each increment over [t_i, t_{i+1}] is an independent centered Gaussian
    with variance sigma_i^2 dt_i; deterministic given (seed, path index).
    The grid has to contain every control breakpoint.
    """
    grid = _as_grid(grid)
    _check_control(control, grid, band)
    dt = np.diff(grid)
    sig, _ = _step_levels(control, grid)
    z = _draw_normals(seed, n_paths, len(dt))
    cum = np.cumsum(sig * np.sqrt(dt) * z, axis=1)
    out = []
    for j in range(n_paths):
        vals = np.concatenate(([0.0], cum[j]))
        out.append(SampledPath(grid, vals))
    return out


def simulate_asset_paths(control, S0: float, grid, seed: int, n_paths: int,
                         band: UncertaintyBand | None = None):
    """Positive asset trajectories under one scenario (constant-per-step
    lognormal stepping, exact for piecewise constant controls)."""
    if not (math.isfinite(S0) and S0 > 0.0):
        raise ValueError(f"S0 must be positive, got {S0!r}")
    grid = _as_grid(grid)
    S, _, _, _ = _scenario_paths(control, S0, grid, seed, n_paths, band)
    return [SampledPath(grid, S[j], positive=True) for j in range(n_paths)]


def _scenario_paths(control, S0, grid, seed, n_paths, band=None):
    """Asset matrix (n_paths, n_grid), driving increments, per-step sigma/mu.

    Handles both time-based controls (fully vectorised) and state-feedback
    rules (per-step lookup of the volatility).
    """
    dt = np.diff(grid)
    n_steps = len(dt)
    z = _draw_normals(seed, n_paths, n_steps)

    if hasattr(control, "sigma_state"):
        S = np.empty((n_paths, n_steps + 1))
        S[:, 0] = S0
        dB = np.empty((n_paths, n_steps))
        sig_used = np.empty((n_paths, n_steps))
        mu_used = np.empty((n_paths, n_steps))
        for i in range(n_steps):
            s = S[:, i]
            sg = np.asarray(control.sigma_state(grid[i], s), dtype=float)
            mu = np.asarray(control.mu_state(grid[i], s), dtype=float)
            dB[:, i] = sg * math.sqrt(dt[i]) * z[:, i]
            S[:, i + 1] = s * np.exp((mu - 0.5 * sg * sg) * dt[i] + dB[:, i])
            sig_used[:, i] = sg
            mu_used[:, i] = mu
        return S, dB, sig_used, mu_used

    _check_control(control, grid, band)
    sig, mu = _step_levels(control, grid)
    dB = sig * np.sqrt(dt) * z
    log_inc = (mu - 0.5 * sig * sig) * dt + dB
    S = np.empty((n_paths, n_steps + 1))
    S[:, 0] = S0
    S[:, 1:] = S0 * np.exp(np.cumsum(log_inc, axis=1))
    sig_used = np.broadcast_to(sig, (n_paths, n_steps))
    mu_used = np.broadcast_to(mu, (n_paths, n_steps))
    return S, dB, sig_used, mu_used


# ---------------------------------------------------------------------------
# Deflator and Monte Carlo pricing
# ---------------------------------------------------------------------------


def _deflator_log_terms(dB, sig, mu, dt, r):
    """Per-step contributions of the stochastic deflator exponent.

    lambda = (mu - r) / sigma is the market price of the scenario's risk
    premium; the exponent accumulates lambda dW + lambda^2 dt / 2 against
    the scenario's standard noise dW = dB / sigma, which tilts the asset
    drift from mu to r (so deflated expectations of a claim reduce to its
    riskless-drift value).  A zero-volatility step with nonzero premium
    cannot be deflated.
    """
    theta = mu - r
    sig = np.broadcast_to(sig, np.shape(dB))
    theta = np.broadcast_to(theta, np.shape(dB))
    zero_sig = sig == 0.0
    if np.any(zero_sig & (theta != 0.0)):
        raise SingularControlError(
            "zero volatility with nonzero risk premium: theta/sigma undefined")
    lam = np.divide(theta, sig, out=np.zeros(np.shape(dB)), where=~zero_sig)
    dw = np.divide(dB, sig, out=np.zeros(np.shape(dB)), where=~zero_sig)
    return lam * dw + 0.5 * lam * lam * dt


def deflator_path(control: ControlProcess, r: float, grid,
                  driving_increments: SampledPath) -> SampledPath:
    """Deflator trajectory H on the grid of the driving noise, H_0 = 1.

    H_t = exp(-[r t + sum lambda_i dW_i + 1/2 sum lambda_i^2 dt_i]) with
    lambda_i = (mu_i - r)/sigma_i the market price of risk and dW = dB/sigma
    the scenario's standard noise: discounting times the exponential
    martingale that removes the scenario's risk premium.  Reduces to plain
    discounting exp(-r t) exactly when mu == r, and e^{rt} H_t has unit
    expectation under every scenario.
    """
    grid = _as_grid(grid)
    if len(grid) != len(driving_increments.times) or not np.allclose(
            grid, driving_increments.times, rtol=0.0, atol=1e-12):
        raise ValueError("grid must match the driving path's time grid")
    dt = np.diff(grid)
    sig, mu = _step_levels(control, grid)
    dB = np.diff(driving_increments.values)
    terms = _deflator_log_terms(dB, sig, mu, dt, r)
    log_h = -(r * grid[1:] + np.cumsum(terms))
    vals = np.concatenate(([1.0], np.exp(log_h)))
    return SampledPath(grid, vals, positive=True)


def mc_ask_bid(problem: PricingProblem, controls, grid, seed: int, spot: float,
               n_paths: int):
    """Scenario-family Monte Carlo quotes for a claim.

    Each control yields an estimate of E[H_T payoff(S_T)] (deflated claim
    under that scenario); the ask is the largest estimate over the family
    and the bid the smallest.  All controls reuse the same per-path
    streams, so the comparison is common-random-numbers.
    """
    controls = list(controls)
    if not controls:
        raise ValueError("control family must be nonempty")
    grid = _as_grid(grid)
    if abs(grid[-1] - problem.maturity) > 1e-9 * max(1.0, problem.maturity):
        raise ValueError("time grid must end at the claim maturity")
    dt = np.diff(grid)
    r = problem.rate

    estimates = []
    for idx, control in enumerate(controls):
        S, dB, sig, mu = _scenario_paths(control, spot, grid, seed, n_paths,
                                         band=problem.band)
        terms = _deflator_log_terms(dB, sig, mu, dt, r)
        h_T = np.exp(-(r * grid[-1] + np.sum(terms, axis=1)))
        y = h_T * np.asarray(problem.payoff(S[:, -1]))
        value = float(np.mean(y))
        se = float(np.std(y, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        label = getattr(control, "label", None) or f"control_{idx}"
        estimates.append(McEstimate(value, se, n_paths, label))

    ask = max(estimates, key=lambda e: e.value)
    bid = min(estimates, key=lambda e: e.value)
    return ask, bid


# ---------------------------------------------------------------------------
# Tube capacity
# ---------------------------------------------------------------------------


def estimate_tube_capacity(center: SampledPath, eta: float, band: UncertaintyBand,
                           controls, seed: int, n_paths: int) -> float:
    """Monte Carlo lower bound for the capacity of the eta-tube around a path.

    For each control the asset is simulated from the center's starting
    value on the center's grid; the estimate is the largest fraction of
    paths with sup_t |S_t - center_t| < eta over the control family.
    """
    controls = list(controls)
    if not controls:
        raise ValueError("control family must be nonempty")
    if not (math.isfinite(eta) and eta >= 0.0):
        raise ValueError(f"tube radius must be nonnegative, got {eta!r}")
    if eta == 0.0:
        return 0.0
    grid = center.times
    S0 = float(center.values[0])
    best = 0.0
    for control in controls:
        S, _, _, _ = _scenario_paths(control, S0, grid, seed, n_paths, band=band)
        inside = np.all(np.abs(S - center.values[None, :]) < eta, axis=1)
        best = max(best, float(np.mean(inside)))
    return best


# ---------------------------------------------------------------------------
# Roughness diagnostics
# ---------------------------------------------------------------------------


@dataclass
class HolderEstimate:
    """Slope of log max-increment against log scale, with fit diagnostics."""

    exponent: float
    raw_slope: float
    scales: np.ndarray
    max_increments: np.ndarray
    r_squared: float
    zero_variation: bool = False


@lru_cache(maxsize=64)
def _expected_abs_gauss_max(n_blocks: int) -> float:
    """E[max |Z_1..Z_N|] for iid standard normals, by quadrature."""
    from scipy.integrate import quad
    from scipy.stats import norm as _norm

    val, _ = quad(lambda x: 1.0 - (2.0 * _norm.cdf(x) - 1.0) ** n_blocks,
                  0.0, 20.0, limit=200)
    return float(val)


def holder_exponent(path: SampledPath, max_scale: int = 64) -> HolderEstimate:
    """Roughness exponent from max increment magnitude over dyadic coarsenings.

    At coarsening k the statistic is max_i |x_{(i+1)k} - x_{ik}|, divided
    by the expected max of as many standard normals: without that Gumbel
    normalisation the sqrt(2 log N_k) extreme-value factor drifts across
    scales and biases the fit low by roughly 1/(2 log N).  The estimate is
    the log-log regression slope against the coarsened time step, clipped
    into (0, 1]: a Lipschitz path gives 1, driving noise ~1/2.
    """
    n = len(path)
    if n < 64:
        raise ValueError(f"path too short for roughness estimation ({n} < 64 points)")
    vals = path.values
    if np.ptp(vals) == 0.0:
        one = np.array([1.0])
        return HolderEstimate(1.0, 1.0, one, np.array([0.0]), 1.0, zero_variation=True)

    mean_dt = (path.times[-1] - path.times[0]) / (n - 1)
    scales, maxima, normalised = [], [], []
    k = 1
    while (n - 1) // k >= 16 and k <= max_scale:
        sub = vals[::k]
        m = float(np.max(np.abs(np.diff(sub))))
        if m > 0.0:
            scales.append(k * mean_dt)
            maxima.append(m)
            normalised.append(m / _expected_abs_gauss_max(len(sub) - 1))
        k *= 2
    if len(scales) < 3:
        return HolderEstimate(1.0, 1.0, np.asarray(scales), np.asarray(maxima), 0.0,
                              zero_variation=True)

    lx = np.log(np.asarray(scales))
    ly = np.log(np.asarray(normalised))
    slope, intercept = np.polyfit(lx, ly, 1)
    fit = slope * lx + intercept
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    exponent = float(min(max(slope, 1e-12), 1.0))
    return HolderEstimate(exponent, float(slope), np.asarray(scales),
                          np.asarray(maxima), r2)


# ---------------------------------------------------------------------------
# Pathwise Riemann-Stieltjes integration
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Left-sum values across dyadic coarsenings and the roughness budget.

    ``young_violation`` flags estimated roughness exponents whose sum falls
    at or below 1, the regime where the pathwise integral's existence is no
    longer backed by the Holder criterion.
    """

    refinement_values: np.ndarray
    refinement_gaps: np.ndarray
    gamma_integrand: float
    alpha_integrator: float
    young_violation: bool


def _left_sum(theta: np.ndarray, s: np.ndarray) -> float:
    return float(np.sum(theta[:-1] * np.diff(s)))


def riemann_stieltjes(integrand: SampledPath, integrator: SampledPath):
    """Left-endpoint pathwise integral of ``integrand`` against ``integrator``.

    The integrand is resampled (linear interpolation) onto the integrator's
    grid when the grids differ; horizons must agree.  Left sums keep the
    integrand non-anticipating, which is what hedging needs.  Returns
    (value, ConvergenceReport).
    """
    if abs(integrand.horizon - integrator.horizon) > 1e-9 * max(1.0, integrator.horizon):
        raise ValueError(
            f"horizon mismatch: integrand ends at {integrand.horizon}, "
            f"integrator at {integrator.horizon}")
    times = integrator.times
    if len(integrand.times) == len(times) and np.array_equal(integrand.times, times):
        theta = integrand.values
    else:
        theta = np.interp(times, integrand.times, integrand.values)
    s = integrator.values

    value = _left_sum(theta, s)

    levels = [value]
    step = 2
    n = len(times)
    while (n - 1) // step >= 4:
        idx = np.arange(0, n, step)
        if idx[-1] != n - 1:
            idx = np.append(idx, n - 1)
        levels.append(_left_sum(theta[idx], s[idx]))
        step *= 2
    levels = np.asarray(levels)
    gaps = np.abs(np.diff(levels))

    if n >= 64:
        gamma = holder_exponent(SampledPath(times, theta)).exponent
        alpha = holder_exponent(SampledPath(times, s)).exponent
        violation = (gamma + alpha) <= 1.0
    else:
        gamma = alpha = float("nan")
        violation = False

    report = ConvergenceReport(levels, gaps, gamma, alpha, violation)
    return value, report


# ---------------------------------------------------------------------------
# Hedging verification
# ---------------------------------------------------------------------------


@dataclass
class HedgeReport:
    """Self-financed delta-hedge along one path, measured against a surface.

    ``wealth`` is the pure self-financing wealth started at u(0, S_0) with
    position du/dx; the cost process C_t = Y_t - u(t, S_t) is the running
    surplus over the surface, nondecreasing (up to discretisation noise)
    when hedging an ask surface against in-band volatility.
    ``cost_monotonicity_violation`` is the magnitude of the most negative
    surplus increment (0 when the cost process is monotone).
    """

    wealth: SampledPath
    terminal_shortfall: float
    cost_monotonicity_violation: float
    cost: SampledPath


def hedge_verify(surface: PriceSurface, asset_path: SampledPath, r: float) -> HedgeReport:
    """Delta-hedge the surface's claim along one realised path.

    Wealth starts at u(0, S_0) and follows the self-financing recursion
    Y_{i+1} = Y_i + r (Y_i - theta_i S_i) dt + theta_i (S_{i+1} - S_i)
    with theta_i the surface's discrete delta at (t_i, S_i).  The terminal
    shortfall is max(0, payoff(S_T) - Y_T), the payoff read from the
    surface's terminal slice.
    """
    times = asset_path.times
    s = asset_path.values
    nodes = surface.space_nodes
    outside = (s < nodes[0]) | (s > nodes[-1])
    if np.any(outside):
        k = int(np.argmax(outside))
        raise DomainExitError(
            f"path exits the surface domain [{nodes[0]:g}, {nodes[-1]:g}] at t={times[k]:g}",
            exit_time=float(times[k]))

    n_steps = len(times) - 1
    theta = np.empty(n_steps)
    u_on_path = np.empty(n_steps + 1)
    for i in range(n_steps):
        sl = surface.value_slice(times[i])
        du = np.gradient(sl, nodes)
        theta[i] = np.interp(s[i], nodes, du)
        u_on_path[i] = np.interp(s[i], nodes, sl)
    u_on_path[-1] = np.interp(s[-1], nodes, surface.values[-1])

    wealth = _self_financing_wealth(times, s[None, :], theta[None, :], r,
                                    float(u_on_path[0]))[0]
    cost = wealth - u_on_path
    d_cost = np.diff(cost)
    violation = float(max(0.0, -d_cost.min())) if n_steps else 0.0
    shortfall = float(max(0.0, u_on_path[-1] - wealth[-1]))
    return HedgeReport(
        wealth=SampledPath(times, wealth),
        terminal_shortfall=shortfall,
        cost_monotonicity_violation=violation,
        cost=SampledPath(times, cost),
    )


def _self_financing_wealth(times, S, theta, r, y0):
    """Wealth matrix for the self-financing recursion, vectorised in time.

    S and theta are (n_paths, n_steps+1) and (n_paths, n_steps); the linear
    recursion Y_{i+1} = g_i Y_i + c_i is unrolled with cumulative growth
    factors so no per-path python loop is needed.
    """
    dt = np.diff(times)
    g = 1.0 + r * dt
    growth = np.concatenate(([1.0], np.cumprod(g)))  # P_k = prod_{j<k} g_j
    c = theta * (np.diff(S, axis=1) - S[:, :-1] * r * dt)
    a = np.concatenate(
        (np.full((S.shape[0], 1), y0), c / growth[1:]), axis=1)
    return np.cumsum(a, axis=1) * growth


# ---------------------------------------------------------------------------
# Path file I/O
# ---------------------------------------------------------------------------


def write_path_file(path: SampledPath, dest) -> None:
    """Two-column text: header 'time,value', one row per grid point."""

    def _write(fh):
        fh.write("time,value\n")
        for t, v in zip(path.times, path.values):
            fh.write(f"{t:.12g},{v:.12g}\n")

    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(dest)


def read_path_file(src, positive: bool = False) -> SampledPath:
    if isinstance(src, (str, bytes)) or hasattr(src, "__fspath__"):
        with open(src, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = src.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split(",")[0].strip() != "time":
        raise ValueError("path file must start with a 'time,value' header")
    data = np.array([[float(f) for f in ln.split(",")] for ln in lines[1:]])
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("path file rows must have exactly two fields")
    return SampledPath(data[:, 0], data[:, 1], positive=positive)


def write_ensemble_file(paths, dest) -> None:
    """Multi-column variant: header 'time,value_0,...', shared time grid."""
    paths = list(paths)
    if not paths:
        raise ValueError("ensemble must be nonempty")
    times = paths[0].times
    for p in paths[1:]:
        if len(p.times) != len(times) or not np.array_equal(p.times, times):
            raise ValueError("ensemble paths must share one time grid")

    def _write(fh):
        fh.write("time," + ",".join(f"value_{j}" for j in range(len(paths))) + "\n")
        for i, t in enumerate(times):
            row = ",".join(f"{p.values[i]:.12g}" for p in paths)
            fh.write(f"{t:.12g},{row}\n")

    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(dest)


def read_ensemble_file(src, positive: bool = False):
    if isinstance(src, (str, bytes)) or hasattr(src, "__fspath__"):
        with open(src, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = src.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("time,"):
        raise ValueError("ensemble file must start with a 'time,value_0,...' header")
    data = np.array([[float(f) for f in ln.split(",")] for ln in lines[1:]])
    times = data[:, 0]
    return [SampledPath(times, data[:, 1 + j], positive=positive)
            for j in range(data.shape[1] - 1)]
