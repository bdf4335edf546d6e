"""Loss functions and the evaluation report (millimetres and milliseconds).

``loss_nll`` implements ``(1/2n) sum(log sigma + r^2 / sigma^2)``. Note the
1/2 multiplies the log term too, unlike the textbook Gaussian NLL
``sum(log sigma + r^2 / (2 sigma^2))``. The two forms are minimised at
different sigmas: ``sigma^2 = 2 r^2`` for this one, ``sigma^2 = r^2`` for the
Gaussian. Both minimisers are exposed below.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .pipeline import bucket_success
from .scene import GroundTruth

PRINTED = "printed"
GAUSSIAN = "gaussian"

DEFAULT_LAMBDA = 0.1
DEFAULT_DEADLINE_US = 160_000


def _pair(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("need at least one value")
    return a, b


def loss_l1(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def loss_nll(d, sigma, d_hat) -> float:
    d, s = _pair(d, sigma)
    _, h = _pair(d, d_hat)
    if np.any(~(s > 0)):
        raise ValueError("sigma must be positive")
    r = d - h
    return float(np.sum(np.log(s) + (r / s) ** 2) / (2 * d.size))


def loss_gaussian_nll(d, sigma, d_hat) -> float:
    """Textbook form without the constant, for comparison."""
    d, s = _pair(d, sigma)
    _, h = _pair(d, d_hat)
    if np.any(~(s > 0)):
        raise ValueError("sigma must be positive")
    r = d - h
    return float(np.mean(np.log(s) + 0.5 * (r / s) ** 2))


def loss_combined(pos_loss: float, time_loss: float, nll: float, lam: float = DEFAULT_LAMBDA) -> float:
    return float(pos_loss + time_loss + lam * nll)


def nll_optimal_sigma(residuals, form: str = PRINTED) -> float:
    """The shared sigma minimising the NLL of ``residuals``."""
    r = np.asarray(residuals, dtype=float)
    ms = float(np.mean(r * r))
    if form == PRINTED:
        return math.sqrt(2 * ms)
    if form == GAUSSIAN:
        return math.sqrt(ms)
    raise ValueError(f"unknown NLL form {form!r}")


def nll_optimal_scale(residuals, sigmas, form: str = PRINTED) -> float:
    """Factor ``c`` minimising the NLL when every reported sigma is scaled by ``c``.

    A calibrated predictor gives ``c = 1`` under the Gaussian form and
    ``c = sqrt(2)`` under the printed form.
    """
    r, s = _pair(residuals, sigmas)
    return nll_optimal_sigma(r / s, form)


# --------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values) -> "Stat":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(math.nan, math.nan, 0)
        return cls(float(v.mean()), float(v.std()), int(v.size))

    def __str__(self):
        return f"{self.mean:.3f}+-{self.std:.3f}"


@dataclass(frozen=True)
class MetricsReport:
    frame_location_mm: Stat
    frame_ttc_ms: Stat
    impact_location_mm: Stat
    collision_time_ms: Stat
    success_rate: float
    buckets: tuple[tuple[float, float, int, float], ...]
    episodes: int
    deadline_us: int

    def to_dict(self) -> dict:
        out = {k: asdict(v) for k, v in self.__dict__.items() if isinstance(v, Stat)}
        out["success_rate"] = self.success_rate
        out["buckets"] = [
            {"low_m": lo, "high_m": hi, "count": n, "success_rate": None if math.isnan(r) else r}
            for lo, hi, n, r in self.buckets
        ]
        out["episodes"] = self.episodes
        out["deadline_us"] = self.deadline_us
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)


def frame_errors(episodes, truths, deadline_us: int = DEFAULT_DEADLINE_US):
    """Per-frame |location| (m) and |TTC| (us) errors for frames before the deadline."""
    loc, ttc = [], []
    for ep, gt in zip(episodes, truths):
        for p in ep.predictions:
            if p.t - ep.trigger_us >= deadline_us:
                continue
            k = gt.frame_index(p.t)
            loc.append(abs(p.d - gt.x_m[k]))
            ttc.append(abs(p.ttc - gt.ttc_us[k]))
    return np.array(loc), np.array(ttc)


def _final_estimate(ep):
    return ep.estimate if ep.estimate is not None else ep.estimate_equal_weight


def _report(loc_m, ttc_us, impact_m, ctime_us, impact_x, caught, edges, deadline) -> MetricsReport:
    if edges is None:
        edges = np.round(np.linspace(-0.3, 0.3, 7), 9)
    return MetricsReport(
        frame_location_mm=Stat.of(np.asarray(loc_m, dtype=float) * 1e3),
        frame_ttc_ms=Stat.of(np.asarray(ttc_us, dtype=float) / 1e3),
        impact_location_mm=Stat.of(np.asarray(impact_m, dtype=float) * 1e3),
        collision_time_ms=Stat.of(np.asarray(ctime_us, dtype=float) / 1e3),
        success_rate=float(np.mean(caught)),
        buckets=tuple(bucket_success(impact_x, caught, np.asarray(edges))),
        episodes=len(caught),
        deadline_us=int(deadline),
    )


def compute_metrics(
    episodes: Sequence, truths: Sequence[GroundTruth], deadline: int = DEFAULT_DEADLINE_US, edges=None
) -> MetricsReport:
    """Per-frame errors use frames less than ``deadline`` after the trigger;
    per-trajectory errors use the final impact estimate. Episodes without an
    estimate only count towards the success rate."""
    if len(episodes) != len(truths):
        raise ValueError("episodes and ground truth must match")
    if not episodes:
        raise ValueError("no episodes")
    loc, ttc = frame_errors(episodes, truths, deadline)
    impact, ctime = [], []
    for ep in episodes:
        est = _final_estimate(ep)
        if est is None:
            continue
        impact.append(abs(est.x_impact - ep.impact_x))
        # both times are measured from the trigger, so it cancels
        ctime.append(abs(est.impact_time_us - ep.impact_us))
    return _report(
        loc, ttc, impact, ctime, [ep.impact_x for ep in episodes], [ep.caught for ep in episodes], edges, deadline
    )


FRAME_FIELDS = ("episode", "t_rel_us", "d_m", "sigma_m", "ttc_us", "true_x_m", "true_ttc_us")
EPISODE_FIELDS = (
    "episode", "trigger_us", "impact_x_m", "impact_z_m", "impact_us", "est_x_m", "est_impact_us",
    "est_equal_x_m", "table_index", "target_m", "command_us", "rail_arrival_us", "outcome", "reason",
)


def frame_rows(episodes, truths) -> list[dict]:
    rows = []
    for i, (ep, gt) in enumerate(zip(episodes, truths)):
        for p in ep.predictions:
            k = gt.frame_index(p.t)
            rows.append(dict(
                episode=i, t_rel_us=p.t - ep.trigger_us, d_m=p.d, sigma_m=p.sigma, ttc_us=p.ttc,
                true_x_m=float(gt.x_m[k]), true_ttc_us=float(gt.ttc_us[k]),
            ))
    return rows


def episode_rows(episodes) -> list[dict]:
    rows = []
    for i, ep in enumerate(episodes):
        est = _final_estimate(ep)
        eq = ep.estimate_equal_weight
        rows.append(dict(
            episode=i, trigger_us=ep.trigger_us, impact_x_m=ep.impact_x, impact_z_m=ep.impact_z,
            impact_us=ep.impact_us,
            est_x_m=None if est is None else est.x_impact,
            est_impact_us=None if est is None else est.impact_time_us,
            est_equal_x_m=None if eq is None else eq.x_impact,
            table_index=ep.table_index, target_m=ep.target_m, command_us=ep.command_us,
            rail_arrival_us=ep.rail_arrival_us, outcome=ep.outcome, reason=ep.reason,
        ))
    return rows


def _num(v):
    return None if v in (None, "", "None") else float(v)


def metrics_from_rows(ep_rows, fr_rows, deadline: int = DEFAULT_DEADLINE_US, edges=None) -> MetricsReport:
    """Rebuild the report from written per-episode and per-frame rows.

    Values may be strings as read back from CSV.
    """
    if not ep_rows:
        raise ValueError("no episodes")
    loc, ttc = [], []
    for r in fr_rows:
        if _num(r["t_rel_us"]) >= deadline:
            continue
        loc.append(abs(_num(r["d_m"]) - _num(r["true_x_m"])))
        ttc.append(abs(_num(r["ttc_us"]) - _num(r["true_ttc_us"])))
    impact, ctime = [], []
    for r in ep_rows:
        if _num(r["est_x_m"]) is None:
            continue
        impact.append(abs(_num(r["est_x_m"]) - _num(r["impact_x_m"])))
        ctime.append(abs(_num(r["est_impact_us"]) - _num(r["impact_us"])))
    return _report(
        loc, ttc, impact, ctime,
        [_num(r["impact_x_m"]) for r in ep_rows],
        [r["outcome"] == "caught" for r in ep_rows],
        edges, deadline,
    )
