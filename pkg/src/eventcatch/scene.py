"""Ballistic launches, pinhole projection, synthetic events and ground-truth labels.

World frame: the rail runs along x, the camera / rail plane is ``y = 0`` and
the launcher sits at positive y, gravity along -z.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import EventStream, SensorGeometry

GRAVITY = 9.81
US = 1_000_000

# world -> camera rotation for a camera at the rail plane looking at the
# launcher (+y): camera x = world x, camera y (down) = -world z, depth = world y
_FORWARD_Y = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


class InfeasibleLaunchError(ValueError):
    pass


class NoImpactError(ValueError):
    pass


class UnderdeterminedFitError(ValueError):
    pass


def _seed_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class LaunchSpec:
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    ball_radius: float = 0.02
    launch_time_us: int = 0
    spin_accel_z: float = 0.0

    def __post_init__(self):
        speed = math.sqrt(sum(v * v for v in self.velocity))
        if not 0.0 < speed <= 20.0:
            raise ValueError(f"launch speed must be in (0, 20] m/s, got {speed:.3f}")
        if not 0.0 < self.ball_radius <= 0.1:
            raise ValueError(f"ball radius must be in (0, 0.1] m, got {self.ball_radius}")
        if self.launch_time_us < 0:
            raise ValueError("launch time must be non-negative")

    @property
    def speed(self) -> float:
        return math.sqrt(sum(v * v for v in self.velocity))


@dataclass(frozen=True, eq=False)
class BallisticTrajectory:
    """Per-axis quadratics in seconds since ``t_start_us``.

    ``coeffs[axis] = (c0, c1, c2)`` so ``p(tau) = c0 + c1 tau + c2 tau^2``.
    """

    coeffs: np.ndarray
    t_start_us: int
    flight_s: float
    ball_radius: float = 0.02

    @property
    def t_impact_us(self) -> int:
        return self.t_start_us + int(round(self.flight_s * US))

    def position(self, t_us) -> np.ndarray:
        tau = (np.asarray(t_us, dtype=np.float64) - self.t_start_us) / US
        c = self.coeffs
        return np.stack([c[i, 0] + c[i, 1] * tau + c[i, 2] * tau * tau for i in range(3)], axis=-1)

    def position_at(self, tau_s: float) -> np.ndarray:
        c = self.coeffs
        return c[:, 0] + c[:, 1] * tau_s + c[:, 2] * tau_s * tau_s

    @property
    def impact_point(self) -> np.ndarray:
        return self.position_at(self.flight_s)


@dataclass(frozen=True, eq=False)
class CameraModel:
    geometry: SensorGeometry = field(default_factory=lambda: SensorGeometry(640, 480))
    focal_px: float = 500.0
    principal_point: tuple[float, float] | None = None
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: np.ndarray = field(default_factory=lambda: _FORWARD_Y.copy())
    near_m: float = 0.1

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ValueError("focal length must be positive")
        if self.principal_point is None:
            g = self.geometry
            object.__setattr__(self, "principal_point", ((g.width - 1) / 2.0, (g.height - 1) / 2.0))
        cx, cy = self.principal_point
        if not (0 <= cx <= self.geometry.width - 1 and 0 <= cy <= self.geometry.height - 1):
            raise ValueError("principal point must lie inside the image")

    def to_camera(self, p_world) -> np.ndarray:
        p = np.asarray(p_world, dtype=np.float64) - np.asarray(self.position)
        return p @ np.asarray(self.rotation).T

    def to_world(self, p_cam) -> np.ndarray:
        return np.asarray(p_cam, dtype=np.float64) @ np.asarray(self.rotation) + np.asarray(self.position)

    def project(self, p_world) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pixel (u, v) and depth for world points."""
        pc = self.to_camera(p_world)
        cx, cy = self.principal_point
        z = pc[..., 2]
        return cx + self.focal_px * pc[..., 0] / z, cy + self.focal_px * pc[..., 1] / z, z

    def back_project(self, u, v, depth) -> np.ndarray:
        cx, cy = self.principal_point
        pc = np.stack(
            [(np.asarray(u) - cx) * depth / self.focal_px, (np.asarray(v) - cy) * depth / self.focal_px, np.asarray(depth, dtype=np.float64)],
            axis=-1,
        )
        return self.to_world(pc)


@dataclass(frozen=True)
class NoiseSpec:
    spurious_rate: float = 0.0  # events / pixel / second
    jitter_px: float = 0.0
    background_rate: float = 0.0  # events / second
    background_region: tuple[int, int, int, int] | None = None  # x0, y0, x1, y1 pixels
    background_blobs: int = 2

    def __post_init__(self):
        if min(self.spurious_rate, self.jitter_px, self.background_rate) < 0:
            raise ValueError("noise rates must be non-negative")
        if self.background_blobs < 1:
            raise ValueError("need at least one background blob")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    t_us: np.ndarray
    positions: np.ndarray  # (N, 3) world metres
    x_m: np.ndarray
    ttc_us: np.ndarray
    impact_x: float
    impact_z: float
    impact_t_us: int

    def __len__(self):
        return int(self.t_us.shape[0])

    def frame_index(self, t_us: int) -> int:
        i = int(np.searchsorted(self.t_us, t_us))
        if i >= len(self) or self.t_us[i] != t_us:
            raise KeyError(f"no ground-truth frame at t={t_us}")
        return i

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_us,x_m,ttc_us\n")
        for t, x, ttc in zip(self.t_us.tolist(), self.x_m.tolist(), self.ttc_us.tolist()):
            buf.write(f"{t},{x!r},{ttc}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class SceneConfig:
    """Launcher placement, launch ranges and the world models one campaign shares."""

    launcher_distance: float = 4.0
    launcher_x: float = 0.0
    launcher_height: float = 0.0
    target_z: float = 0.0
    ball_radius: float = 0.02
    target_x_range: tuple[float, float] = (-0.3, 0.3)
    speed_range: tuple[float, float] = (5.0, 13.0)
    spin_range: tuple[float, float] = (0.0, 0.0)
    camera: CameraModel = field(default_factory=CameraModel)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    micro_step_us: int = 1000


# --------------------------------------------------------------------------


def sample_launch(
    rng_seed,
    target_x_range=(-0.3, 0.3),
    speed_range=(5.0, 13.0),
    *,
    launcher_distance: float = 4.0,
    launcher_x: float = 0.0,
    launcher_height: float = 0.0,
    target_z: float = 0.0,
    ball_radius: float = 0.02,
    spin_range=(0.0, 0.0),
    launch_time_us: int = 0,
) -> LaunchSpec:
    """Draw a launch aimed at a uniform target x with a uniform approach speed.

    ``speed`` is the approach speed toward the rail plane (|v_y|), so the
    flight time is ``launcher_distance / speed``. The vertical velocity is
    chosen so a gravity-only ball crosses the plane at ``target_z``; the
    optional spin term then perturbs z only.
    """
    lo, hi = target_x_range
    s_lo, s_hi = speed_range
    if lo > hi or s_lo > s_hi:
        raise ValueError("ranges must be ordered (low, high)")
    if s_lo <= 0:
        raise InfeasibleLaunchError("approach speed must be positive")
    if launcher_distance <= 0:
        raise InfeasibleLaunchError("launcher must sit in front of the rail plane")
    rng = _seed_rng(rng_seed)
    target_x = rng.uniform(lo, hi) if hi > lo else lo
    speed = rng.uniform(s_lo, s_hi) if s_hi > s_lo else s_lo
    spin = rng.uniform(*spin_range) if spin_range[1] > spin_range[0] else spin_range[0]
    flight = launcher_distance / speed
    vx = (target_x - launcher_x) / flight
    vz = (target_z - launcher_height + 0.5 * GRAVITY * flight * flight) / flight
    velocity = (vx, -speed, vz)
    if math.sqrt(vx * vx + speed * speed + vz * vz) > 20.0:
        raise InfeasibleLaunchError(
            f"reaching x={target_x:.3f} at {speed:.2f} m/s needs more than 20 m/s launch speed"
        )
    return LaunchSpec(
        position=(launcher_x, launcher_distance, launcher_height),
        velocity=velocity,
        ball_radius=ball_radius,
        launch_time_us=launch_time_us,
        spin_accel_z=spin,
    )


def sample_scene_launch(rng_seed, scene: SceneConfig) -> LaunchSpec:
    return sample_launch(
        rng_seed,
        scene.target_x_range,
        scene.speed_range,
        launcher_distance=scene.launcher_distance,
        launcher_x=scene.launcher_x,
        launcher_height=scene.launcher_height,
        target_z=scene.target_z,
        ball_radius=scene.ball_radius,
        spin_range=scene.spin_range,
    )


def trajectory_from_launch(spec: LaunchSpec) -> BallisticTrajectory:
    x0, y0, z0 = spec.position
    vx, vy, vz = spec.velocity
    if y0 == 0.0:
        flight = 0.0
    elif vy == 0.0 or (y0 > 0) == (vy > 0):
        raise NoImpactError("ball never reaches the rail plane")
    else:
        flight = -y0 / vy
    coeffs = np.array(
        [
            [x0, vx, 0.0],
            [y0, vy, 0.0],
            [z0, vz, 0.5 * (spec.spin_accel_z - GRAVITY)],
        ]
    )
    return BallisticTrajectory(coeffs, spec.launch_time_us, flight, spec.ball_radius)


def _quadratic_plane_crossing(c0: float, c1: float, c2: float) -> float:
    """Smallest tau >= 0 with c0 + c1 tau + c2 tau^2 == 0."""
    if c2 == 0.0:
        if c1 == 0.0:
            raise NoImpactError("trajectory never crosses the rail plane")
        tau = -c0 / c1
        if tau < 0:
            raise NoImpactError("trajectory crossed the rail plane before the fitted window")
        return tau
    disc = c1 * c1 - 4 * c2 * c0
    if disc < 0:
        raise NoImpactError("trajectory never crosses the rail plane")
    sq = math.sqrt(disc)
    q = -0.5 * (c1 + math.copysign(sq, c1))
    roots = sorted(r for r in (q / c2, c0 / q if q != 0 else math.inf) if r >= 0)
    if not roots:
        raise NoImpactError("trajectory never crosses the rail plane after the fitted window")
    return roots[0]


def fit_poly2(t_us, positions, ball_radius: float = 0.02) -> BallisticTrajectory:
    """Least-squares quadratic per axis through motion-capture samples.

    ``positions`` is (N, 3); NaN entries mark dropped samples per axis.
    """
    t_us = np.asarray(t_us, dtype=np.int64)
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape != (t_us.shape[0], 3):
        raise ValueError("positions must be (N, 3) matching timestamps")
    ok_any = ~np.all(np.isnan(pos), axis=1)
    if not ok_any.any():
        raise UnderdeterminedFitError("no samples")
    t0 = int(t_us[ok_any].min())
    coeffs = np.zeros((3, 3))
    for axis in range(3):
        ok = ~np.isnan(pos[:, axis])
        tau = (t_us[ok] - t0) / US
        if np.unique(tau).size < 3:
            raise UnderdeterminedFitError(
                f"axis {'xyz'[axis]} has fewer than 3 distinct timestamps"
            )
        A = np.stack([np.ones_like(tau), tau, tau * tau], axis=1)
        coeffs[axis], *_ = np.linalg.lstsq(A, pos[ok, axis], rcond=None)
    flight = _quadratic_plane_crossing(*coeffs[1])
    return BallisticTrajectory(coeffs, t0, flight, ball_radius)


def ground_truth_labels(traj: BallisticTrajectory, cam: CameraModel | None = None, frame_period_us: int = 10_000) -> GroundTruth:
    """One label per frame boundary ``t_start + k * period`` (k >= 1) up to impact."""
    if frame_period_us <= 0:
        raise ValueError("frame period must be positive")
    t_imp = traj.t_impact_us
    n = (t_imp - traj.t_start_us) // frame_period_us
    t = traj.t_start_us + frame_period_us * np.arange(1, n + 1, dtype=np.int64)
    pos = traj.position(t).reshape(-1, 3)
    # labelled at the whole-microsecond impact time so x and t agree exactly
    imp = traj.position(t_imp).reshape(3)
    return GroundTruth(
        t_us=t,
        positions=pos,
        x_m=pos[:, 0].copy(),
        ttc_us=(t_imp - t).astype(np.int64),
        impact_x=float(imp[0]),
        impact_z=float(imp[2]),
        impact_t_us=t_imp,
    )


# --------------------------------------------------------------------------
# Event synthesis


def _disk_track(traj: BallisticTrajectory, cam: CameraModel, step_us: int, t_end_us: int | None):
    t_stop = traj.t_impact_us if t_end_us is None else min(t_end_us, traj.t_impact_us)
    n = max(0, (t_stop - traj.t_start_us) // step_us)
    t = traj.t_start_us + step_us * np.arange(n + 1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        u, v, depth = cam.project(traj.position(t).reshape(-1, 3))
    keep = depth > cam.near_m
    if not keep.all():
        last = int(np.argmin(keep)) if keep[0] else 0
        t, u, v, depth = t[:last], u[:last], v[:last], depth[:last]
    r = cam.focal_px * traj.ball_radius / depth
    return t, u, v, r


def _ball_events(traj, cam, step_us, rng, jitter_px, t_end_us):
    g = cam.geometry
    t, u, v, r = _disk_track(traj, cam, step_us, t_end_us)
    if jitter_px > 0 and t.size:
        u = u + rng.normal(0.0, jitter_px, u.shape)
        v = v + rng.normal(0.0, jitter_px, v.shape)
    chunks = []
    for k in range(1, t.size):
        x0 = max(0, int(math.floor(min(u[k - 1] - r[k - 1], u[k] - r[k]))))
        x1 = min(g.width - 1, int(math.ceil(max(u[k - 1] + r[k - 1], u[k] + r[k]))))
        y0 = max(0, int(math.floor(min(v[k - 1] - r[k - 1], v[k] - r[k]))))
        y1 = min(g.height - 1, int(math.ceil(max(v[k - 1] + r[k - 1], v[k] + r[k]))))
        if x1 < x0 or y1 < y0:
            continue
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        prev = (xs - u[k - 1]) ** 2 + (ys - v[k - 1]) ** 2 <= r[k - 1] ** 2
        cur = (xs - u[k]) ** 2 + (ys - v[k]) ** 2 <= r[k] ** 2
        on = cur & ~prev
        off = prev & ~cur
        n_on, n_off = int(on.sum()), int(off.sum())
        if n_on + n_off == 0:
            continue
        ex = np.concatenate([xs[on], xs[off]])
        ey = np.concatenate([ys[on], ys[off]])
        ep = np.concatenate([np.ones(n_on, np.int8), -np.ones(n_off, np.int8)])
        et = rng.integers(t[k - 1], t[k], size=ex.size)
        chunks.append((et, ex, ey, ep))
    return chunks, (int(t[0]) if t.size else traj.t_start_us, int(t[-1]) if t.size else traj.t_start_us)


def _spurious_events(geometry: SensorGeometry, rate: float, t0: int, t1: int, rng):
    n = rng.poisson(rate * geometry.pixels * (t1 - t0) / US) if t1 > t0 else 0
    return (
        rng.integers(t0, t1, n) if n else np.zeros(0, np.int64),
        rng.integers(0, geometry.width, n),
        rng.integers(0, geometry.height, n),
        rng.choice(np.array([-1, 1], np.int8), n),
    )


def _background_events(geometry: SensorGeometry, noise: NoiseSpec, t0: int, t1: int, step_us: int, rng):
    """Edge events of rectangular blobs drifting across the background region."""
    if noise.background_rate <= 0 or t1 <= t0:
        return None
    x0, y0, x1, y1 = noise.background_region or (0, 0, geometry.width, geometry.height)
    w, h = x1 - x0, y1 - y0
    nb = noise.background_blobs
    size = np.stack([rng.uniform(0.1, 0.3, nb) * w, rng.uniform(0.3, 0.6, nb) * h], axis=1)
    start = np.stack([rng.uniform(x0, x1, nb), rng.uniform(y0, y1, nb)], axis=1)
    vel = np.stack([rng.uniform(-1, 1, nb) * w, rng.uniform(-0.2, 0.2, nb) * h], axis=1)  # px/s
    steps = np.arange(t0, t1, step_us, dtype=np.int64)
    per_step = rng.poisson(noise.background_rate * step_us / US, steps.size)
    total = int(per_step.sum())
    if total == 0:
        return None
    ts = np.repeat(steps, per_step) + rng.integers(0, step_us, total)
    ts = np.minimum(ts, t1 - 1)
    blob = rng.integers(0, nb, total)
    tau = (ts - t0) / US
    centre = start[blob] + vel[blob] * tau[:, None]
    # wrap inside region so blobs keep crossing it
    centre[:, 0] = x0 + np.mod(centre[:, 0] - x0, w)
    centre[:, 1] = y0 + np.mod(centre[:, 1] - y0, h)
    # uniform point on rectangle perimeter
    bw, bh = size[blob, 0], size[blob, 1]
    s = rng.uniform(0, 2 * (bw + bh))
    px = np.where(s < bw, s, np.where(s < bw + bh, bw, np.where(s < 2 * bw + bh, 2 * bw + bh - s, 0.0)))
    py = np.where(s < bw, 0.0, np.where(s < bw + bh, s - bw, np.where(s < 2 * bw + bh, bh, 2 * (bw + bh) - s)))
    ex = np.clip(np.round(centre[:, 0] - bw / 2 + px), 0, geometry.width - 1).astype(np.int64)
    ey = np.clip(np.round(centre[:, 1] - bh / 2 + py), 0, geometry.height - 1).astype(np.int64)
    # leading vertical edge brightens, trailing darkens
    lead = np.sign(vel[blob, 0]) * np.sign(px - bw / 2)
    ep = np.where(lead >= 0, 1, -1).astype(np.int8)
    return ts, ex, ey, ep


def synthesize_events(
    traj: BallisticTrajectory,
    cam: CameraModel,
    noise: NoiseSpec | None = None,
    rng_seed=0,
    *,
    micro_step_us: int = 1000,
    t_end_us: int | None = None,
    return_ball_mask: bool = False,
):
    """Contour-change events for the projected ball disk plus optional clutter.

    The disk is rendered every ``micro_step_us``; a pixel entering the disk
    fires +1, leaving fires -1, timestamped uniformly within the step. Ball,
    spurious and background events use independent random streams derived
    from ``rng_seed``, so changing one noise level leaves the others intact.
    """
    noise = noise or NoiseSpec()
    g = cam.geometry
    ss = np.random.SeedSequence(rng_seed if not isinstance(rng_seed, np.random.SeedSequence) else rng_seed.entropy)
    ball_rng, spur_rng, bg_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    chunks, (t0, t1) = _ball_events(traj, cam, micro_step_us, ball_rng, noise.jitter_px, t_end_us)
    t_hi = traj.t_impact_us if t_end_us is None else min(t_end_us, traj.t_impact_us)
    t0 = traj.t_start_us
    n_ball = sum(c[0].size for c in chunks)
    if noise.spurious_rate > 0:
        chunks.append(_spurious_events(g, noise.spurious_rate, t0, t_hi, spur_rng))
    bg = _background_events(g, noise, t0, t_hi, micro_step_us, bg_rng)
    if bg is not None:
        chunks.append(bg)
    if not chunks:
        stream = EventStream.empty(g)
        return (stream, np.zeros(0, bool)) if return_ball_mask else stream
    t = np.concatenate([c[0] for c in chunks])
    x = np.concatenate([c[1] for c in chunks])
    y = np.concatenate([c[2] for c in chunks])
    p = np.concatenate([c[3] for c in chunks])
    order = np.argsort(t, kind="stable")
    stream = EventStream(g, t[order], x[order], y[order], p[order])
    if return_ball_mask:
        is_ball = np.zeros(t.size, bool)
        is_ball[:n_ball] = True
        return stream, is_ball[order]
    return stream


def write_ground_truth_csv(truth: GroundTruth, target) -> None:
    text = truth.to_csv()
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    else:
        target.write(text)


def read_ground_truth_csv(source) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    rows = list(csv.DictReader(io.StringIO(text)))
    return (
        np.array([int(r["t_us"]) for r in rows], dtype=np.int64),
        np.array([float(r["x_m"]) for r in rows]),
        np.array([int(r["ttc_us"]) for r in rows], dtype=np.int64),
    )
