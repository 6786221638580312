"""Finite-difference engine for the nonlinear pricing PDEs.

Three closely related problems are solved on one implicit backbone:

* ask surface:  du/dt + r x du/dx + g_vol(x^2 d2u/dx2) - r u = 0, terminal
  data = payoff (worst-case volatility for the seller);
* bid surface:  du/dt + r x du/dx - g_vol(-x^2 d2u/dx2) - r u = 0 (best
  case, i.e. the volatility selection of the ask problem reversed);
* nonlinear heat equation: du/dt = g_drift_vol(du/dx, d2u/dx2) forward in
  time, which defines worst-case expectations under zero-mean variance
  uncertainty (and drift uncertainty when the interval is not {0}).

Scheme: bang-bang coefficient freezing (volatility sigma_hi where the
discrete convexity is nonnegative, sigma_lo otherwise; ties take sigma_hi,
where the two branches of g_vol agree anyway), an implicit tridiagonal
solve per step, and repeat-until-stable policy iteration.  Drift terms are
centrally differenced where that keeps the system an M-matrix and upwinded
otherwise, so every step is monotone and unconditionally stable.  Payoff
kinks get a grid node placed exactly on them.

Boundary conditions are Dirichlet from the payoff's linear extrapolation
at the domain ends: the linear part grows at the riskless rate under the
pricing PDEs, so u(boundary) = slope*x + intercept*exp(-r tau).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import norm

from .errors import ConsistencyError, NumericalFailure
from .sublinear import ScalarFunctionSpec, UncertaintyBand

__all__ = [
    "GridSpec",
    "PricingProblem",
    "PriceSurface",
    "solve_bsb_ask",
    "solve_bsb_bid",
    "solve_bsb_pair",
    "solve_g_heat",
    "black_scholes_closed_form",
    "write_surface_file",
]

POLICY_MAX_ITERS = 50
POLICY_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    """Space/time resolution and the spacing rule for the spatial nodes."""

    n_space: int = 400
    n_time: int = 400
    stretching: str = "uniform_log"

    def __post_init__(self):
        if self.n_space < 16 or self.n_time < 16:
            raise ValueError("grid needs n_space >= 16 and n_time >= 16")
        if self.stretching not in ("uniform_log", "uniform_price"):
            raise ValueError(f"unknown stretching {self.stretching!r}")


@dataclass(frozen=True)
class PricingProblem:
    """A European claim plus the market data needed to price it.

    The payoff must be nonnegative on the spot domain (claims here are
    nonnegative by assumption); maturity and the domain must be sensible.
    """

    payoff: ScalarFunctionSpec
    maturity: float
    rate: float
    band: UncertaintyBand
    spot_domain: tuple

    def __post_init__(self):
        if not (math.isfinite(self.maturity) and self.maturity > 0.0):
            raise ValueError(f"maturity must be positive, got {self.maturity!r}")
        if not math.isfinite(self.rate):
            raise ValueError("rate must be finite")
        x_min, x_max = self.spot_domain
        if not (math.isfinite(x_min) and math.isfinite(x_max)):
            raise ValueError("spot_domain must be finite")
        if x_min < 0.0:
            raise ValueError(f"spot_domain lower end {x_min} must be >= 0")
        if x_min >= x_max:
            raise ValueError(f"spot_domain is empty: [{x_min}, {x_max}]")
        probe = np.linspace(x_min, x_max, 1025)
        vals = np.asarray(self.payoff(probe))
        if np.any(vals < -1e-12 * max(1.0, float(np.abs(vals).max()))):
            raise ValueError("payoff must be nonnegative on the spot domain")


@dataclass
class PriceSurface:
    """Discretized solution u(t, x) of one of the pricing problems.

    ``values[i, j]`` is the value at ``times[i]``, ``space_nodes[j]``.  For
    backward problems the last slice is the payoff sampled exactly on the
    nodes.  ``band`` and ``rate`` record the generating problem so rules
    derived from the surface (state-feedback scenarios, hedges) don't need
    it re-supplied.
    """

    times: np.ndarray
    space_nodes: np.ndarray
    values: np.ndarray
    side: str
    band: UncertaintyBand | None = None
    rate: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.space_nodes = np.asarray(self.space_nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.side not in ("ask", "bid", "heat"):
            raise ValueError(f"unknown surface side {self.side!r}")
        if self.values.shape != (len(self.times), len(self.space_nodes)):
            raise ValueError("values shape does not match times x space_nodes")
        if np.any(np.diff(self.times) <= 0) or np.any(np.diff(self.space_nodes) <= 0):
            raise ValueError("times and space_nodes must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("surface values must be finite")

    # -- lookup -------------------------------------------------------------

    def _time_weights(self, t: float):
        times = self.times
        if t <= times[0]:
            return 0, 0, 0.0
        if t >= times[-1]:
            return len(times) - 1, len(times) - 1, 0.0
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = min(k, len(times) - 2)
        w = (t - times[k]) / (times[k + 1] - times[k])
        return k, k + 1, float(w)

    def value_slice(self, t: float) -> np.ndarray:
        """Values on the space nodes at time t (linear in time)."""
        k0, k1, w = self._time_weights(t)
        if w == 0.0:
            return self.values[k0]
        return (1.0 - w) * self.values[k0] + w * self.values[k1]

    def value_at(self, t: float, x) -> float:
        sl = self.value_slice(t)
        out = np.interp(np.asarray(x, dtype=float), self.space_nodes, sl)
        return float(out) if np.ndim(out) == 0 else out

    def delta_slice(self, t: float) -> np.ndarray:
        """Discrete du/dx on the space nodes at time t."""
        return np.gradient(self.value_slice(t), self.space_nodes)

    def delta_at(self, t: float, x) -> float:
        d = self.delta_slice(t)
        out = np.interp(np.asarray(x, dtype=float), self.space_nodes, d)
        return float(out) if np.ndim(out) == 0 else out

    def curvature_sign_slice(self, i: int) -> np.ndarray:
        """Sign (+1/-1) of the discrete second price-derivative at times[i]."""
        x = self.space_nodes
        u = self.values[i]
        hm = x[1:-1] - x[:-2]
        hp = x[2:] - x[1:-1]
        d2 = 2.0 * ((u[2:] - u[1:-1]) / hp - (u[1:-1] - u[:-2]) / hm) / (hm + hp)
        full = np.empty_like(u)
        full[1:-1] = d2
        full[0] = d2[0]
        full[-1] = d2[-1]
        return np.where(full >= 0.0, 1.0, -1.0)


def _check_dominance(ask: PriceSurface, bid: PriceSurface) -> None:
    gap = ask.values - bid.values
    scale = max(1.0, float(np.abs(ask.values).max()))
    worst = float(gap.min())
    if worst < -1e-7 * scale:
        raise ConsistencyError(
            f"ask surface fell below bid by {-worst:.3e} (tolerance {1e-7 * scale:.1e})"
        )


# ---------------------------------------------------------------------------
# Grid construction
# ---------------------------------------------------------------------------


def _build_space_nodes(problem: PricingProblem, grid: GridSpec):
    """Spatial nodes in price units plus the working coordinate array.

    uniform_log works in w = log(x) (constant diffusion coefficient per
    volatility regime); uniform_price works in w = x.  Kink abscissae of
    the payoff are snapped onto the nearest interior node.
    """
    x_min, x_max = problem.spot_domain
    if grid.stretching == "uniform_log":
        if x_min <= 0.0:
            raise ValueError("uniform_log grids need a strictly positive lower domain end")
        w = np.linspace(math.log(x_min), math.log(x_max), grid.n_space + 1)
        to_w = math.log
    else:
        w = np.linspace(x_min, x_max, grid.n_space + 1)
        to_w = float

    last = 0
    snapped = []
    for knot in sorted(set(problem.payoff.knot_points())):
        if not (x_min < knot < x_max) or knot <= 0 and grid.stretching == "uniform_log":
            continue
        wk = to_w(knot)
        j = int(np.argmin(np.abs(w - wk)))
        j = min(max(j, last + 1), grid.n_space - 1)
        old = w[j]
        w[j] = wk
        if w[j] <= w[j - 1] or w[j] >= w[j + 1]:
            w[j] = old  # snap would break monotonicity; leave the node alone
            continue
        snapped.append((j, knot))
        last = j

    x = np.exp(w) if grid.stretching == "uniform_log" else w.copy()
    for j, knot in snapped:
        x[j] = knot  # exact in price, not just in exp(log(price))
    return x, w


def _edge_asymptotes(payoff, x: np.ndarray):
    """Linear extrapolation (slope, intercept) of the payoff at both ends."""
    a_lo = (float(payoff(x[1])) - float(payoff(x[0]))) / (x[1] - x[0])
    b_lo = float(payoff(x[0])) - a_lo * x[0]
    a_hi = (float(payoff(x[-1])) - float(payoff(x[-2]))) / (x[-1] - x[-2])
    b_hi = float(payoff(x[-1])) - a_hi * x[-1]
    return (a_lo, b_lo), (a_hi, b_hi)


# ---------------------------------------------------------------------------
# Implicit policy-iteration stepper
# ---------------------------------------------------------------------------


def _nonuniform_stencils(w: np.ndarray):
    hm = w[1:-1] - w[:-2]
    hp = w[2:] - w[1:-1]
    c2 = (2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp)))
    c1 = (-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp)))
    return hm, hp, c1, c2


def _march(u0, w, dt, n_time, coeffs_of, boundary_of, record_forward):
    """Shared implicit march with policy iteration.

    ``coeffs_of(u) -> (a, b, c, sel)`` evaluates the frozen linear operator
    L = a d2/dw2 + b d/dw + c at each interior node from the current
    iterate (``sel`` is the selection fingerprint used for the stability
    test).  ``boundary_of(step) -> (lo, hi)`` gives the Dirichlet values
    after step ``step``.  Marches n_time steps of (I - dt L) u_new = u_old
    and returns the full stack of slices, first step's slice last or first
    depending on ``record_forward``.
    """
    n = len(w)
    hm, hp, c1, c2 = _nonuniform_stencils(w)
    out = np.empty((n_time + 1, n))
    out[0] = u0
    u = u0.copy()

    for step in range(n_time):
        rhs_core = u.copy()
        bc_lo, bc_hi = boundary_of(step)
        sel = None
        u_iter = u
        for _ in range(POLICY_MAX_ITERS):
            a, b, c, sel_new = coeffs_of(u_iter)

            lo = a * c2[0] + b * c1[0]
            di = a * c2[1] + b * c1[1] + c
            hi = a * c2[2] + b * c1[2]
            bad = (lo < 0.0) | (hi < 0.0)
            if np.any(bad):
                # drift upwinding restores the M-matrix property
                fwd = b >= 0.0
                lo_u = np.where(fwd, a * c2[0], a * c2[0] - b / hm)
                di_u = np.where(fwd, a * c2[1] - b / hp, a * c2[1] + b / hm) + c
                hi_u = np.where(fwd, a * c2[2] + b / hp, a * c2[2])
                lo = np.where(bad, lo_u, lo)
                di = np.where(bad, di_u, di)
                hi = np.where(bad, hi_u, hi)

            ab = np.zeros((3, n))
            ab[1, 0] = 1.0
            ab[1, -1] = 1.0
            ab[1, 1:-1] = 1.0 - dt * di
            ab[0, 2:] = -dt * hi
            ab[2, :-2] = -dt * lo
            rhs = rhs_core.copy()
            rhs[0] = bc_lo
            rhs[-1] = bc_hi
            u_new = solve_banded((1, 1), ab, rhs, overwrite_ab=True, overwrite_b=True)

            if sel is not None and np.array_equal(sel_new, sel):
                u = u_new
                break
            if np.max(np.abs(u_new - u_iter)) < POLICY_RESIDUAL_TOL:
                u = u_new
                break
            sel = sel_new
            u_iter = u_new
        else:
            resid = float(np.max(np.abs(u_new - u_iter)))
            raise NumericalFailure(
                "policy iteration did not stabilise",
                step=step,
                max_iters=POLICY_MAX_ITERS,
                residual=resid,
                n_space=n - 1,
            )
        out[step + 1] = u

    if not record_forward:
        out = out[::-1]
    return out


# ---------------------------------------------------------------------------
# The three solvers
# ---------------------------------------------------------------------------


def _solve_bsb(problem: PricingProblem, grid: GridSpec, side: str) -> PriceSurface:
    x, w = _build_space_nodes(problem, grid)
    log_coord = grid.stretching == "uniform_log"
    band = problem.band
    r = problem.rate
    T = problem.maturity
    dt = T / grid.n_time

    terminal = np.asarray(problem.payoff(x), dtype=float)
    (a_lo, b_lo), (a_hi, b_hi) = _edge_asymptotes(problem.payoff, x)

    hm, hp, c1, c2 = _nonuniform_stencils(w)
    s2_hi, s2_lo = band.sigma_hi**2, band.sigma_lo**2
    xi = x[1:-1]

    def coeffs_of(u):
        # discrete x^2 d2u/dx2: in log coordinates u_ww - u_w, else x^2 u_ww
        d2 = c2[0] * u[:-2] + c2[1] * u[1:-1] + c2[2] * u[2:]
        if log_coord:
            d1 = c1[0] * u[:-2] + c1[1] * u[1:-1] + c1[2] * u[2:]
            gamma = d2 - d1
        else:
            gamma = xi * xi * d2
        if side == "ask":
            s2 = np.where(gamma >= 0.0, s2_hi, s2_lo)
        else:
            s2 = np.where(gamma >= 0.0, s2_lo, s2_hi)
        if log_coord:
            a = 0.5 * s2
            b = r - 0.5 * s2
        else:
            a = 0.5 * s2 * xi * xi
            b = r * xi
        c = np.full_like(a, -r)
        return a, b, c, s2

    def boundary_of(step):
        disc = math.exp(-r * (step + 1) * dt)
        return a_lo * x[0] + b_lo * disc, a_hi * x[-1] + b_hi * disc

    values = _march(terminal, w, dt, grid.n_time, coeffs_of, boundary_of, record_forward=False)
    values[-1] = terminal  # exact payoff on the terminal slice
    times = np.linspace(0.0, T, grid.n_time + 1)
    return PriceSurface(times, x, values, side, band=band, rate=r)


def solve_bsb_ask(problem: PricingProblem, grid: GridSpec) -> PriceSurface:
    """Worst-case (seller's) price surface of the claim."""
    return _solve_bsb(problem, grid, "ask")


def solve_bsb_bid(problem: PricingProblem, grid: GridSpec) -> PriceSurface:
    """Best-case (buyer's) price surface of the claim."""
    return _solve_bsb(problem, grid, "bid")


def solve_bsb_pair(problem: PricingProblem, grid: GridSpec):
    """Ask and bid surfaces together, with the dominance check applied."""
    ask = solve_bsb_ask(problem, grid)
    bid = solve_bsb_bid(problem, grid)
    _check_dominance(ask, bid)
    return ask, bid


def solve_g_heat(
    phi: ScalarFunctionSpec,
    band: UncertaintyBand,
    horizon: float,
    grid: GridSpec,
) -> PriceSurface:
    """Forward solution of du/dt = g_drift_vol(du/dx, d2u/dx2), u(0,.) = phi.

    Solved on a uniform arithmetic grid covering +-8 sigma_hi sqrt(horizon)
    around the origin plus the drift span (the stretching field of ``grid``
    is ignored here: the state space is the whole line, not prices).
    Boundary values follow the exact solution for linear data,
    a x + b + t (mu_hi a+ - mu_lo a-).
    """
    if not (math.isfinite(horizon) and horizon > 0.0):
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    half = 8.0 * band.sigma_hi * math.sqrt(horizon)
    x_lo = min(0.0, band.mu_lo * horizon) - half
    x_hi = max(0.0, band.mu_hi * horizon) + half
    w = np.linspace(x_lo, x_hi, grid.n_space + 1)

    # snap interior nodes onto payoff kinks, and keep a node at the origin
    last = 0
    for knot in sorted(set(phi.knot_points()) | {0.0}):
        if not (x_lo < knot < x_hi):
            continue
        j = int(np.argmin(np.abs(w - knot)))
        j = min(max(j, last + 1), grid.n_space - 1)
        old = w[j]
        w[j] = knot
        if w[j] <= w[j - 1] or w[j] >= w[j + 1]:
            w[j] = old
            continue
        last = j

    dt = horizon / grid.n_time
    u0 = np.asarray(phi(w), dtype=float)
    (a_lo, b_lo), (a_hi, b_hi) = _edge_asymptotes(phi, w)

    s2_hi, s2_lo = band.sigma_hi**2, band.sigma_lo**2
    hm, hp, c1, c2 = _nonuniform_stencils(w)

    def coeffs_of(u):
        d1 = c1[0] * u[:-2] + c1[1] * u[1:-1] + c1[2] * u[2:]
        d2 = c2[0] * u[:-2] + c2[1] * u[1:-1] + c2[2] * u[2:]
        s2 = np.where(d2 >= 0.0, s2_hi, s2_lo)
        mu = np.where(d1 >= 0.0, band.mu_hi, band.mu_lo)
        sel = np.where(d2 >= 0.0, 1, 0) + np.where(d1 >= 0.0, 2, 0)
        return 0.5 * s2, mu, np.zeros_like(s2), sel

    def drift_growth(slope):
        return band.mu_hi * max(slope, 0.0) - band.mu_lo * max(-slope, 0.0)

    def boundary_of(step):
        t = (step + 1) * dt
        lo = a_lo * w[0] + b_lo + t * drift_growth(a_lo)
        hi = a_hi * w[-1] + b_hi + t * drift_growth(a_hi)
        return lo, hi

    values = _march(u0, w, dt, grid.n_time, coeffs_of, boundary_of, record_forward=True)
    times = np.linspace(0.0, horizon, grid.n_time + 1)
    return PriceSurface(times, w, values, "heat", band=band, rate=0.0)


# ---------------------------------------------------------------------------
# Closed-form oracle
# ---------------------------------------------------------------------------


def black_scholes_closed_form(
    spot: float, strike: float, r: float, sigma: float, T: float, kind: str = "call"
) -> float:
    """Classical lognormal call/put value; used as a reduction oracle."""
    if kind not in ("call", "put"):
        raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")
    for name, v in (("spot", spot), ("strike", strike), ("sigma", sigma), ("T", T)):
        if not (math.isfinite(v) and v > 0.0):
            raise ValueError(f"{name} must be positive, got {v!r}")
    if not math.isfinite(r):
        raise ValueError("r must be finite")
    srt = sigma * math.sqrt(T)
    d1 = (math.log(spot / strike) + (r + 0.5 * sigma * sigma) * T) / srt
    d2 = d1 - srt
    call = spot * norm.cdf(d1) - strike * math.exp(-r * T) * norm.cdf(d2)
    if kind == "call":
        return float(call)
    return float(call - spot + strike * math.exp(-r * T))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def write_surface_file(surface: PriceSurface, dest) -> None:
    """Matrix text format: header row of space nodes, first column of times."""

    def _write(fh):
        fh.write("time\\space," + ",".join(format(v, ".12g") for v in surface.space_nodes) + "\n")
        for t, row in zip(surface.times, surface.values):
            fh.write(format(t, ".12g") + "," + ",".join(format(v, ".12g") for v in row) + "\n")

    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(dest)


def surface_to_text(surface: PriceSurface) -> str:
    buf = io.StringIO()
    write_surface_file(surface, buf)
    return buf.getvalue()
