"""Shadow price systems within a relative band of a rough price path.

Given a positive sampled path S and a relative width eps, the construction
walks the classical three steps:

1. stopping times: tau_{n+1} is the first grid time after tau_n at which
   S / S_{tau_n} leaves ((1+eps)^-1, 1+eps), capped at the horizon;
2. signs R_n = sign(S_{tau_n} - S_{tau_{n-1}}) at interior crossings, 0 at
   the horizon (retirement), driving an exact geometric walk
   X_n = X_{n-1} (1+eps)^{R_n} started at X_0 = S_0;
3. a continuous shadow path anchored at the walk levels,
   S~_{tau_n} = X_n, geometrically interpolated *in the ratio* S~/S
   between anchors.

The ratio interpolation is the one modelling choice the data does not
force: a conditional-expectation shadow is not computable from a single
realised path, while interpolating log(S~/S) linearly in time keeps the
shadow continuous, positive, exact at the anchors, and inside the
guaranteed sandwich (1+eps)^-3 <= S~/S <= (1+eps)^3 (crossings on a grid
overshoot the band edge by at most one step, and the overshoot per
crossing is recorded).  All ratio arithmetic is done in log space so +1/-1
crossings cancel exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError
from .paths import SampledPath
from .pde import GridSpec, PricingProblem, solve_bsb_pair

__all__ = [
    "ConsistentPriceSystem",
    "DeltaStats",
    "CpsQuote",
    "CpsPriceResult",
    "extract_stopping_times",
    "retirement_walk",
    "build_shadow_path",
    "delta_processes",
    "cps_price",
]


@dataclass(frozen=True)
class DeltaStats:
    """Pointwise ratio and increment-ratio diagnostics of a shadow path."""

    frac_delta1_within: float   # fraction of times with |S/S~ - 1| <= eps
    frac_delta2_within: float   # fraction of defined steps with |dS/(2 dS~)| <= 2 eps
    flagged_steps: int          # steps with zero shadow increment


@dataclass
class ConsistentPriceSystem:
    """A shadow price system within relative width eps of a source path."""

    epsilon: float
    tau_indices: np.ndarray
    signs: np.ndarray
    levels: np.ndarray
    shadow: SampledPath
    source: SampledPath
    overshoots: np.ndarray
    delta_stats: DeltaStats
    ratio_min: float
    ratio_max: float

    def __post_init__(self):
        last = len(self.source) - 1
        retired_at_horizon = self.tau_indices[-1] == last
        if (self.signs[-1] == 0) != retired_at_horizon:
            raise ConsistencyError("final sign must be 0 exactly when the walk "
                                   "retires at the horizon")

    def crossing_times(self) -> np.ndarray:
        return self.source.times[self.tau_indices]

    def to_report(self) -> str:
        buf = io.StringIO()
        buf.write(f"epsilon: {self.epsilon:.12g}\n")
        buf.write(f"sandwich_ratio_min: {self.ratio_min:.12g}\n")
        buf.write(f"sandwich_ratio_max: {self.ratio_max:.12g}\n")
        bound = (1.0 + self.epsilon) ** 3
        ok = 1.0 / bound <= self.ratio_min and self.ratio_max <= bound
        buf.write(f"sandwich_ok: {str(ok).lower()}\n")
        st = self.delta_stats
        buf.write(f"delta1_within_eps: {st.frac_delta1_within:.12g}\n")
        buf.write(f"delta2_within_2eps: {st.frac_delta2_within:.12g}\n")
        buf.write(f"flagged_steps: {st.flagged_steps}\n")
        buf.write("crossings: index,time,sign,level,overshoot\n")
        times = self.crossing_times()
        for i in range(len(self.tau_indices)):
            buf.write(f"{self.tau_indices[i]},{times[i]:.12g},{self.signs[i]:+d},"
                      f"{self.levels[i]:.12g},{self.overshoots[i]:.12g}\n")
        return buf.getvalue()


def _require_positive(path: SampledPath) -> None:
    if np.any(path.values <= 0.0):
        raise ValueError("source path must be strictly positive")


def extract_stopping_times(path: SampledPath, eps: float):
    """Grid crossing times of the relative band ((1+eps)^-1, 1+eps).

    Returns (tau_indices, signs): tau_indices are indices into the source
    grid; each sign is the crossing direction, 0 for retirement at the
    horizon.  The final entry is always the last grid index.  Exits are
    detected at the first grid point at or past the band edge (sampled
    paths overshoot; magnitudes are available via build_shadow_path).
    """
    _require_positive(path)
    if not (math.isfinite(eps) and eps > 0.0):
        raise ValueError(f"eps must be positive, got {eps!r}")
    log_s = np.log(path.values)
    step = math.log1p(eps)
    # grazing the band edge within ~1 ulp counts as an exit, so a path that
    # is already a walk skeleton reproduces its own crossings exactly
    edge = step * (1.0 - 1e-12)
    last = len(log_s) - 1

    taus, signs = [], []
    anchor = 0
    while anchor < last:
        rel = np.abs(log_s[anchor + 1:] - log_s[anchor])
        hits = np.flatnonzero(rel >= edge)
        if len(hits) == 0:
            taus.append(last)
            signs.append(0)
            break
        nxt = anchor + 1 + int(hits[0])
        taus.append(nxt)
        # a crossing recorded exactly at the horizon retires the walk
        signs.append(0 if nxt == last else int(np.sign(log_s[nxt] - log_s[anchor])))
        anchor = nxt
    if not taus:  # single-point path: retire immediately
        taus, signs = [last], [0]
    return np.asarray(taus, dtype=int), np.asarray(signs, dtype=int)


def retirement_walk(signs, X0: float, eps: float) -> np.ndarray:
    """Geometric +-(1+eps) walk over the signs, frozen after the first 0.

    Levels are computed from integer cumulative exponents, so a +1 followed
    by a -1 returns to X0 exactly and drift stays within 1 ulp per step.
    """
    signs = np.asarray(signs, dtype=int)
    if not (math.isfinite(X0) and X0 > 0.0):
        raise ValueError(f"X0 must be positive, got {X0!r}")
    if not (math.isfinite(eps) and eps > 0.0):
        raise ValueError(f"eps must be positive, got {eps!r}")
    if np.any(np.abs(signs) > 1):
        raise ValueError("signs must lie in {-1, 0, +1}")
    zeros = np.flatnonzero(signs == 0)
    if len(zeros) and np.any(signs[zeros[0]:] != 0):
        raise ValueError("nonzero sign after retirement")
    exponents = np.cumsum(signs)
    return X0 * np.power(1.0 + eps, exponents.astype(float))


def build_shadow_path(path: SampledPath, eps: float) -> ConsistentPriceSystem:
    """Construct the shadow price system for one realised path.

    Anchors the shadow at the walk levels, interpolates log(S~/S) linearly
    in time between anchors, verifies the sandwich bound, and attaches the
    ratio diagnostics.  A sandwich violation raises rather than returning a
    broken record.
    """
    _require_positive(path)
    taus, signs = extract_stopping_times(path, eps)
    X0 = float(path.values[0])
    levels = retirement_walk(signs, X0, eps)

    log_s = np.log(path.values)
    step = math.log1p(eps)

    # overshoot beyond the band edge per interior crossing (0 at retirement)
    overshoots = np.zeros(len(taus))
    prev = 0
    for k, (tau, sg) in enumerate(zip(taus, signs)):
        if sg != 0:
            overshoots[k] = max(0.0, abs(log_s[tau] - log_s[prev]) - step)
        prev = tau

    anchor_idx = np.concatenate(([0], taus))
    anchor_log_ratio = np.concatenate(
        ([0.0], np.log(levels) - log_s[taus]))
    log_ratio = np.interp(path.times, path.times[anchor_idx], anchor_log_ratio)
    # multiply the source by the interpolated ratio (exp(0) == 1 exactly,
    # so stretches of unit ratio reproduce the source bit for bit)
    shadow_vals = path.values * np.exp(log_ratio)
    shadow_vals[anchor_idx] = np.concatenate(([X0], levels))  # anchors exact

    ratio = shadow_vals / path.values
    bound = (1.0 + eps) ** 3
    r_min, r_max = float(ratio.min()), float(ratio.max())
    if r_min < 1.0 / bound * (1.0 - 1e-12) or r_max > bound * (1.0 + 1e-12):
        raise ConsistencyError(
            f"shadow/source ratio [{r_min:.6g}, {r_max:.6g}] violates the "
            f"sandwich bound (1+eps)^-3..(1+eps)^3 = [{1.0 / bound:.6g}, {bound:.6g}]")

    shadow = SampledPath(path.times, shadow_vals, positive=True)
    stats = _delta_stats(path, shadow, eps)
    return ConsistentPriceSystem(
        epsilon=float(eps),
        tau_indices=taus,
        signs=signs,
        levels=levels,
        shadow=shadow,
        source=path,
        overshoots=overshoots,
        delta_stats=stats,
        ratio_min=r_min,
        ratio_max=r_max,
    )


def delta_processes(cps: ConsistentPriceSystem):
    """Pointwise and incremental gap processes between source and shadow.

    delta1(t) = S_t / S~_t - 1;  delta2 per step = dS / (2 dS~), NaN where
    the shadow increment vanishes (those steps are flagged, not fatal).
    """
    s = cps.source.values
    sh = cps.shadow.values
    d1 = s / sh - 1.0
    ds = np.diff(s)
    dsh = np.diff(sh)
    flagged = dsh == 0.0
    d2 = np.full(len(ds), np.nan)
    np.divide(ds, 2.0 * dsh, out=d2, where=~flagged)
    delta1 = SampledPath(cps.source.times, d1)
    delta2 = SampledPath(cps.source.times[:-1], d2)
    return delta1, delta2


def _delta_stats(source: SampledPath, shadow: SampledPath, eps: float) -> DeltaStats:
    s, sh = source.values, shadow.values
    d1 = s / sh - 1.0
    within1 = float(np.mean(np.abs(d1) <= eps * (1.0 + 1e-12)))
    ds, dsh = np.diff(s), np.diff(sh)
    flagged = dsh == 0.0
    if np.all(flagged):
        within2 = 0.0
    else:
        d2 = ds[~flagged] / (2.0 * dsh[~flagged])
        within2 = float(np.mean(np.abs(d2) <= 2.0 * eps))
    return DeltaStats(within1, within2, int(np.count_nonzero(flagged)))


# ---------------------------------------------------------------------------
# Pricing through the shadow system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CpsQuote:
    """A PDE quote and its eps-uncertainty interval from the shadow gap."""

    value: float
    lower: float
    upper: float


@dataclass
class CpsPriceResult:
    ask: CpsQuote
    bid: CpsQuote
    cps: ConsistentPriceSystem


def cps_price(path: SampledPath, problem: PricingProblem, eps: float,
              grid: GridSpec) -> CpsPriceResult:
    """Quote a claim on a rough path through its shadow price system.

    Builds the eps-shadow system, prices the claim with the ask/bid PDE
    pair on the problem's band, evaluates both at (0, S~_0), and widens
    each value by the worst-case shadow/source gap (1+eps)^±3.
    """
    if path.horizon < problem.maturity * (1.0 - 1e-9):
        raise ValueError(
            f"path horizon {path.horizon} does not cover maturity {problem.maturity}")
    cps = build_shadow_path(path, eps)
    spot = float(cps.shadow.values[0])
    x_min, x_max = problem.spot_domain
    if not (x_min <= spot <= x_max):
        raise ValueError(f"shadow start {spot:g} outside the spot domain "
                         f"[{x_min:g}, {x_max:g}]")
    ask_surface, bid_surface = solve_bsb_pair(problem, grid)
    width = (1.0 + eps) ** 3
    ask_v = ask_surface.value_at(0.0, spot)
    bid_v = bid_surface.value_at(0.0, spot)
    ask = CpsQuote(ask_v, ask_v / width, ask_v * width)
    bid = CpsQuote(bid_v, bid_v / width, bid_v * width)
    return CpsPriceResult(ask=ask, bid=bid, cps=cps)
