"""Inverse-variance weighted line fit over frame predictions, fused with TTC.

The ball's x-location is modelled as affine in time, ``d(t) = b0 + b1 t``.
Each frame contributes with weight 1/sigma^2 to the 2x2 normal equations;
the impact time is the unweighted mean of the per-frame projections
``t_i + ttc_i`` and the impact location is the fitted line evaluated there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

from .predictor import FramePrediction
from .scene import US

CONDITION_LIMIT = 1e10


class RejectedObservationError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class WlsState:
    """Sufficient statistics, times in seconds relative to ``t_ref_us``.

    ``t_ref_us`` is the first pushed timestamp and only serves conditioning;
    fitted results are reported relative to ``t_first_us`` (the earliest).
    """

    n: int = 0
    t_ref_us: int | None = None
    t_first_us: int | None = None
    sw: float = 0.0
    swt: float = 0.0
    swtt: float = 0.0
    swd: float = 0.0
    swtd: float = 0.0
    projected_us: tuple[float, ...] = ()

    @property
    def sum_projected_us(self) -> float:
        return math.fsum(self.projected_us)


@dataclass(frozen=True)
class ImpactEstimate:
    intercept: float  # metres at t_first
    slope: float  # m/s
    t_bar_us: float  # mean projected impact time, relative to t_first
    t_first_us: int
    x_impact: float
    n: int

    @property
    def impact_time_us(self) -> float:
        return self.t_first_us + self.t_bar_us


def push_observation(state: WlsState, obs: FramePrediction) -> WlsState:
    if not obs.sigma > 0 or not math.isfinite(obs.sigma):
        raise RejectedObservationError(f"sigma must be positive and finite, got {obs.sigma}")
    t_ref = obs.t if state.t_ref_us is None else state.t_ref_us
    t_first = obs.t if state.t_first_us is None else min(state.t_first_us, obs.t)
    w = 1.0 / (obs.sigma * obs.sigma)
    tau = (obs.t - t_ref) / US
    return WlsState(
        n=state.n + 1,
        t_ref_us=t_ref,
        t_first_us=t_first,
        sw=state.sw + w,
        swt=state.swt + w * tau,
        swtt=state.swtt + w * tau * tau,
        swd=state.swd + w * obs.d,
        swtd=state.swtd + w * tau * obs.d,
        projected_us=state.projected_us + (obs.t + obs.ttc,),
    )


def accumulate(preds: Iterable[FramePrediction], *, equal_weights: bool = False) -> WlsState:
    """Push every prediction; ``equal_weights`` ignores the predicted sigmas."""
    state = WlsState()
    for p in preds:
        state = push_observation(state, replace(p, sigma=1.0) if equal_weights else p)
    return state


def _eigen_ratio(a: float, b: float, c: float) -> float:
    # symmetric [[a, b], [b, c]]
    half_tr = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    lo, hi = half_tr - rad, half_tr + rad
    if lo <= 0:
        return math.inf
    return hi / lo


def fit(state: WlsState) -> ImpactEstimate:
    if state.n < 2:
        raise DegenerateFitError(f"need at least 2 observations, have {state.n}")
    a, b, c = state.sw, state.swt, state.swtt
    if _eigen_ratio(a, b, c) > CONDITION_LIMIT:
        raise DegenerateFitError("normal equations ill-conditioned (timestamps too close)")
    det = a * c - b * b
    if not det > 0:
        raise DegenerateFitError("singular normal equations")
    b0 = (c * state.swd - b * state.swtd) / det
    b1 = (a * state.swtd - b * state.swd) / det
    # re-reference the intercept to the earliest frame
    shift = (state.t_first_us - state.t_ref_us) / US
    intercept = b0 + b1 * shift
    t_bar_us = state.sum_projected_us / state.n - state.t_first_us
    x_impact = intercept + b1 * (t_bar_us / US)
    return ImpactEstimate(intercept, b1, t_bar_us, state.t_first_us, x_impact, state.n)


def scaled_state(state: WlsState, c: float) -> WlsState:
    """The state that would result from multiplying every sigma by ``c``."""
    if not c > 0:
        raise ValueError("scale must be positive")
    k = 1.0 / (c * c)
    return replace(
        state,
        sw=state.sw * k,
        swt=state.swt * k,
        swtt=state.swtt * k,
        swd=state.swd * k,
        swtd=state.swtd * k,
    )


def scale_invariance_check(state: WlsState, c: float, tol: float = 1e-10) -> bool:
    """Whether scaling all sigmas by ``c`` leaves the fitted line unchanged."""
    base = fit(state)
    other = fit(scaled_state(state, c))
    scale = max(1.0, abs(base.intercept), abs(base.slope))
    return (
        abs(base.intercept - other.intercept) <= tol * scale
        and abs(base.slope - other.slope) <= tol * scale
    )


def fit_trace(preds: Iterable[FramePrediction]) -> list[tuple[int, int, float, float]]:
    """Re-fit after every push: rows ``(t_us, N, x_impact_m, t_bar_us)``."""
    rows = []
    state = WlsState()
    for p in preds:
        state = push_observation(state, p)
        try:
            est = fit(state)
        except DegenerateFitError:
            rows.append((p.t, state.n, math.nan, math.nan))
            continue
        rows.append((p.t, state.n, est.x_impact, est.t_bar_us))
    return rows


def write_fit_trace_csv(preds: Iterable[FramePrediction], target) -> None:
    lines = ["t_us,N,x_impact_m,t_bar_us"]
    lines += [f"{t},{n},{x!r},{tb!r}" for t, n, x, tb in fit_trace(preds)]
    text = "\n".join(lines) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w") as fh:
            fh.write(text)
