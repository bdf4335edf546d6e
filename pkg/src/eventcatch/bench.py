"""Wall-clock throughput of the BEHI update and the estimator push."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .estimator import WlsState, push_observation
from .events import Behi, EventStream, SensorGeometry, behi_update
from .predictor import FramePrediction

DEFAULT_COUNTS = (100, 1_000, 10_000, 100_000, 1_000_000)


@dataclass(frozen=True)
class BenchResult:
    counts: tuple[int, ...]
    seconds: tuple[float, ...]  # best-of-reps per count
    empty_seconds: float  # fixed per-call cost (zero events)
    raw_exponent: float
    marginal_exponent: float
    frame_events: int
    frame_seconds: float  # one 640x480 update plus one estimator push

    def rows(self):
        return [
            {"events": n, "seconds": s, "ns_per_event": 1e9 * s / n}
            for n, s in zip(self.counts, self.seconds)
        ]

    def to_dict(self) -> dict:
        return {
            "update": self.rows(),
            "empty_call_seconds": self.empty_seconds,
            "raw_exponent": self.raw_exponent,
            "marginal_exponent": self.marginal_exponent,
            "frame_events": self.frame_events,
            "frame_update_push_seconds": self.frame_seconds,
        }


def random_stream(geometry: SensorGeometry, n: int, rng, t0: int = 0, t1: int = 10_000) -> EventStream:
    t = np.sort(rng.integers(t0, t1, n))
    x = rng.integers(0, geometry.width, n)
    y = rng.integers(0, geometry.height, n)
    p = np.where(rng.random(n) < 0.5, 1, -1)
    return EventStream(geometry, t, x, y, p)


def _time_update(geometry, stream, horizon, reps):
    best = np.inf
    blank = np.zeros(geometry.shape, dtype=bool)
    for _ in range(reps):
        img = Behi(geometry, blank, 0)  # copies, so the buffer is already paged in
        t0 = time.perf_counter()
        behi_update(img, stream, horizon)
        best = min(best, time.perf_counter() - t0)
    return best


def _slope(n, s):
    return float(np.polyfit(np.log(n), np.log(s), 1)[0])


def run_bench(
    counts=DEFAULT_COUNTS,
    geometry: SensorGeometry | None = None,
    *,
    reps: int | None = None,
    frame_events: int = 5_000,
    seed: int = 0,
) -> BenchResult:
    """Time ``behi_update`` on fresh images for each batch size.

    ``raw_exponent`` fits log(time) against log(events) directly, so the
    fixed per-call cost flattens it at small batches. ``marginal_exponent``
    fits the time above an empty update, which is the per-event part.
    """
    geometry = geometry or SensorGeometry(640, 480)
    rng = np.random.default_rng(seed)
    counts = tuple(int(c) for c in counts)
    empty = _time_update(geometry, EventStream.empty(geometry), 10_000, 200)
    secs = []
    for n in counts:
        r = reps or max(5, min(200, 2_000_000 // max(n, 1)))
        secs.append(_time_update(geometry, random_stream(geometry, n, rng), 10_000, r))
    n_arr = np.array(counts, dtype=float)
    s_arr = np.array(secs)
    raw = _slope(n_arr, s_arr)
    marginal = _slope(n_arr, np.maximum(s_arr - empty, 1e-12))

    # one frame: update onto a partly filled image, then push a prediction
    base = Behi(geometry, rng.random(geometry.shape) < 0.05, 10_000)
    stream = random_stream(geometry, frame_events, rng, 10_000, 20_000)
    obs = FramePrediction(20_000, 0.01, 0.005, 250_000.0)
    state = push_observation(WlsState(), FramePrediction(10_000, 0.0, 0.005, 260_000.0))
    best = np.inf
    for _ in range(50):
        img = Behi(geometry, base.bits, 10_000)
        t0 = time.perf_counter()
        behi_update(img, stream, 20_000)
        push_observation(state, obs)
        best = min(best, time.perf_counter() - t0)
    return BenchResult(counts, tuple(secs), empty, raw, marginal, frame_events, best)
