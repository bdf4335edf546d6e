"""Rest-to-rest constant-jerk rail moves, the position lookup table and catch geometry."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

CAUGHT = "caught"
MISSED_X = "missed_x"
MISSED_Z = "missed_z"

_EDGE_TOL = 1e-12


class OutOfRangeError(ValueError):
    pass


@dataclass(frozen=True)
class RailSpec:
    half_span: float = 0.300
    v_max: float = 10.0
    a_max: float = 50.0
    j_max: float = 1300.0
    net_width: float = 0.240
    net_height: float = 0.400
    net_z_center: float = 0.0

    def __post_init__(self):
        for name in ("half_span", "v_max", "a_max", "j_max", "net_width", "net_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class MotionPlan:
    """Seven constant-jerk phases; zero-length phases are kept for a fixed layout.

    Phase jerks (for a positive move) are +j, 0, -j, 0, -j, 0, +j.
    """

    displacement: float
    phases: tuple[float, ...]
    jerk: float
    duration: float
    _starts: np.ndarray = field(repr=False)
    _states: np.ndarray = field(repr=False)  # (7, 3): x, v, a at phase start

    @property
    def duration_us(self) -> int:
        return int(math.ceil(self.duration * 1e6 - 1e-6))

    @property
    def phase_jerks(self) -> np.ndarray:
        s = math.copysign(1.0, self.displacement) if self.displacement else 0.0
        return s * self.jerk * np.array([1, 0, -1, 0, -1, 0, 1], dtype=float)

    def sample(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Closed-form position, velocity, acceleration and jerk at times ``t`` (s)."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        k = np.clip(np.searchsorted(self._starts, t, side="right") - 1, 0, 6)
        dt = t - self._starts[k]
        j = self.phase_jerks[k]
        x0, v0, a0 = self._states[k, 0], self._states[k, 1], self._states[k, 2]
        pos = x0 + v0 * dt + a0 * dt**2 / 2 + j * dt**3 / 6
        vel = v0 + a0 * dt + j * dt**2 / 2
        acc = a0 + j * dt
        return pos, vel, acc, np.where(t >= self.duration, 0.0, j)


def _build(displacement: float, tj: float, ta: float, tv: float, jerk: float) -> MotionPlan:
    phases = (tj, ta, tj, tv, tj, ta, tj)
    starts = np.concatenate([[0.0], np.cumsum(phases)[:-1]])
    s = math.copysign(1.0, displacement) if displacement else 0.0
    jerks = s * jerk * np.array([1, 0, -1, 0, -1, 0, 1], dtype=float)
    states = np.zeros((7, 3))
    x = v = a = 0.0
    for i, (h, j) in enumerate(zip(phases, jerks)):
        states[i] = (x, v, a)
        x, v, a = x + v * h + a * h * h / 2 + j * h**3 / 6, v + a * h + j * h * h / 2, a + j * h
    return MotionPlan(displacement, phases, jerk, float(sum(phases)), starts, states)


def plan_move(spec: RailSpec, displacement: float) -> MotionPlan:
    """Minimum-time symmetric S-curve for a rest-to-rest move."""
    d = abs(float(displacement))
    if d > 2 * spec.half_span + 1e-12:
        raise OutOfRangeError(f"displacement {displacement:.4f} m exceeds rail travel {2 * spec.half_span:.3f} m")
    if d == 0.0:
        return _build(0.0, 0.0, 0.0, 0.0, spec.j_max)
    j, a, v = spec.j_max, spec.a_max, spec.v_max
    # accelerate straight to v_max; is the accel cap reached on the way?
    if v * j >= a * a:
        tj, ta = a / j, v / a - a / j
    else:
        tj, ta = math.sqrt(v / j), 0.0
    d_acc = v * (2 * tj + ta) / 2  # distance to reach v_max (velocity curve is point-symmetric)
    if 2 * d_acc <= d:
        return _build(displacement, tj, ta, (d - 2 * d_acc) / v, j)
    # peak velocity below v_max, no cruise
    tj = (d / (2 * j)) ** (1.0 / 3.0)
    if j * tj <= a:
        return _build(displacement, tj, 0.0, 0.0, j)
    tj = a / j
    # d = a (tj + ta)(2 tj + ta)
    ta = (-3 * tj + math.sqrt(tj * tj + 4 * d / a)) / 2
    return _build(displacement, tj, max(ta, 0.0), 0.0, j)


def integrate_jerk_profile(plan: MotionPlan, dt: float = 1e-6):
    """Numerically integrate the plan's piecewise-constant jerk on a uniform grid.

    Each grid cell gets the exact average jerk over the cell (from the phase
    boundaries), acceleration is its running sum and velocity / position use
    the trapezoid rule. Returns ``(t, x, v, a)`` on the grid including the
    end time.
    """
    n = int(math.ceil(plan.duration / dt))
    if n == 0:
        z = np.zeros(1)
        return z, z.copy(), z.copy(), z.copy()
    edges = np.minimum(np.arange(n + 1) * dt, plan.duration)
    bounds = np.concatenate([[0.0], np.cumsum(plan.phases)])
    jerks = plan.phase_jerks
    # integral of jerk from 0 to each grid edge = a(edge), computed phase by phase
    acc = np.zeros(n + 1)
    for k in range(7):
        lo, hi = bounds[k], bounds[k + 1]
        if hi <= lo or jerks[k] == 0:
            continue
        acc += jerks[k] * (np.clip(edges, lo, hi) - lo)
    h = np.diff(edges)
    vel = np.concatenate([[0.0], np.cumsum(0.5 * (acc[1:] + acc[:-1]) * h)])
    pos = np.concatenate([[0.0], np.cumsum(0.5 * (vel[1:] + vel[:-1]) * h)])
    return edges, pos, vel, acc


@dataclass(frozen=True, eq=False)
class MotionTable:
    targets: np.ndarray
    plans: tuple[MotionPlan, ...]
    spacing: float

    def __len__(self):
        return int(self.targets.shape[0])

    @property
    def center_index(self) -> int:
        return int(np.argmin(np.abs(self.targets)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "target_m", "duration_s"])
        for i, (tgt, plan) in enumerate(zip(self.targets.tolist(), self.plans)):
            w.writerow([i, repr(tgt), repr(plan.duration)])
        return buf.getvalue()


def build_table(spec: RailSpec, spacing: float = 0.1) -> MotionTable:
    """Targets at 0, +-spacing, ... up to the half span, each with its move from centre."""
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    n = int(math.floor(spec.half_span / spacing + 1e-9))
    k = np.arange(-n, n + 1)
    targets = k * spacing
    return MotionTable(targets, tuple(plan_move(spec, float(t)) for t in targets), spacing)


def select_command(table: MotionTable, x_impact: float) -> int:
    """Nearest table target to the clamped estimate; ties go toward the centre."""
    if len(table) == 0:
        raise ValueError("empty motion table")
    t = table.targets
    x = min(max(float(x_impact), float(t[0])), float(t[-1]))
    dist = np.abs(t - x)
    best = float(dist.min())
    near = np.flatnonzero(dist <= best + _EDGE_TOL)
    return int(near[np.argmin(np.abs(t[near]))])


def catch_outcome(net_center_x: float, ball_impact_x: float, ball_impact_z: float, spec: RailSpec) -> str:
    if abs(ball_impact_x - net_center_x) > spec.net_width / 2 + _EDGE_TOL:
        return MISSED_X
    if abs(ball_impact_z - spec.net_z_center) > spec.net_height / 2 + _EDGE_TOL:
        return MISSED_Z
    return CAUGHT
