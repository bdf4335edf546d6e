"""Per-frame prediction stage: (x-location, sigma, time-to-collision) from a BEHI.

Two implementations share the :func:`predict` entry point:

``analytic``
    Finds the ball's leading edge among the pixels the latest update set,
    fits a circle to it, takes depth from the apparent radius and TTC from
    how fast that radius grows over the caller-supplied history.
``noisy_oracle``
    Ground truth plus Gaussian noise whose std falls linearly with frame
    index; the reported sigma is the generating std.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .events import Behi
from .scene import US, CameraModel, GroundTruth

ANALYTIC = "analytic"
NOISY_ORACLE = "noisy_oracle"

# Gaussian mean absolute deviation per unit std
HALF_NORMAL_MEAN = math.sqrt(2.0 / math.pi)

SIGMA_FLOOR_M = 1e-6


class NoDetectionError(RuntimeError):
    """The analytic predictor found nothing ball-like in the frame."""


@dataclass(frozen=True)
class Detection:
    t_us: int
    u: float
    v: float
    radius_px: float


@dataclass(frozen=True)
class FramePrediction:
    t: int  # frame timestamp, us
    d: float  # ball x-location, world metres
    sigma: float  # metres
    ttc: float  # us from t
    detection: Detection | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.ttc >= 0:
            raise ValueError(f"ttc must be non-negative, got {self.ttc}")


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = NOISY_ORACLE
    early_std_m: float = 0.0
    late_std_m: float = 0.0
    profile_frames: int = 12
    ttc_std_us: float = 0.0
    seed: int = 0
    # analytic only
    ball_radius_m: float = 0.02
    pixel_noise_px: float = 0.5
    history_frames: int = 12
    nominal_speed_mps: float = 9.0
    speed_bounds_mps: tuple[float, float] = (4.0, 20.0)
    max_ttc_us: float = 1_500_000.0
    min_component_px: int = 3
    min_looming_growth: float = 0.25

    def __post_init__(self):
        if self.kind not in (ANALYTIC, NOISY_ORACLE):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if min(self.early_std_m, self.late_std_m, self.ttc_std_us) < 0:
            raise ValueError("noise stds must be non-negative")
        if self.early_std_m < self.late_std_m:
            raise ValueError("early-frame std must be at least the late-frame std")
        if self.profile_frames < 1:
            raise ValueError("profile needs at least one frame")

    def position_std(self, frame: int) -> float:
        """Noise std for a frame index, linear from early to late then flat."""
        n = self.profile_frames
        if n == 1:
            return self.late_std_m
        a = min(max(frame, 0), n - 1) / (n - 1)
        return self.early_std_m + a * (self.late_std_m - self.early_std_m)


def predict(
    image: Behi | None,
    cam: CameraModel,
    config: PredictorConfig,
    truth: GroundTruth | None = None,
    frame: int | None = None,
    history: Sequence[Detection] = (),
) -> FramePrediction:
    if config.kind == NOISY_ORACLE:
        if truth is None:
            raise ValueError("noisy_oracle predictor needs ground truth")
        if frame is None:
            if image is None:
                raise ValueError("need a frame index or an image to locate the frame")
            frame = truth.frame_index(image.horizon)
        return _oracle(truth, frame, config)
    if image is None:
        raise ValueError("analytic predictor needs an image")
    return _analytic(image, cam, config, history)


def _frame_noise(seed: int, frame: int) -> np.ndarray:
    return np.random.default_rng([seed, frame]).standard_normal(2)


def _oracle(truth: GroundTruth, frame: int, config: PredictorConfig) -> FramePrediction:
    # per-frame stream so frame k draws the same noise however many frames run
    std = config.position_std(frame)
    dx, dt = _frame_noise(config.seed, frame)
    d = float(truth.x_m[frame]) + std * dx
    ttc = max(0.0, float(truth.ttc_us[frame]) + config.ttc_std_us * dt)
    return FramePrediction(int(truth.t_us[frame]), d, max(std, SIGMA_FLOOR_M), ttc)


# --------------------------------------------------------------------------
# analytic


def _fit_circle(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    """Algebraic (Kasa) circle fit."""
    A = np.stack([xs, ys, np.ones_like(xs)], axis=1)
    b = xs * xs + ys * ys
    (a0, a1, a2), *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = a0 / 2, a1 / 2
    r2 = a2 + cx * cx + cy * cy
    return float(cx), float(cy), float(math.sqrt(max(r2, 0.0)))


def detect_ball(image: Behi, history: Sequence[Detection] = (), min_component_px: int = 3) -> Detection:
    """Locate the ball's current disk from the pixels set by the latest update."""
    fresh = image.fresh_mask()
    if not fresh.any():
        raise NoDetectionError(f"no new pixels at t={image.horizon}")
    labels, n = ndimage.label(ndimage.binary_dilation(fresh), structure=np.ones((3, 3)))
    labels = labels * fresh
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    candidates = np.flatnonzero(sizes >= min_component_px)
    if candidates.size == 0:
        raise NoDetectionError(f"no component of at least {min_component_px} px")
    if history:
        prev = history[-1]
        cents = ndimage.center_of_mass(fresh, labels, candidates)
        dist = [math.hypot(cx - prev.u, cy - prev.v) for cy, cx in cents]
        best = int(candidates[int(np.argmin(dist))])
    else:
        best = int(candidates[np.argmax(sizes[candidates])])
    comp = labels == best
    # outer rim: component pixels with an unset 4-neighbour in the whole image
    bits = image.bits.astype(bool)
    inner = ndimage.binary_erosion(bits, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    rim = comp & ~inner
    ys, xs = np.nonzero(rim if rim.sum() >= 3 else comp)
    if xs.size < 3:
        raise NoDetectionError("too few rim pixels for a circle fit")
    cx, cy, r = _fit_circle(xs.astype(float), ys.astype(float))
    # rim pixel centres sit about half a pixel inside the true edge
    r += 0.5
    cy_all, cx_all = np.nonzero(comp)
    extent = max(np.ptp(cx_all), np.ptp(cy_all)) + 1.0
    if not r <= extent:
        # nearly collinear rim: the fit blows up, fall back to the blob itself
        cx, cy, r = float(cx_all.mean()), float(cy_all.mean()), extent / 2
    if not (np.isfinite(cx) and np.isfinite(cy)) or r <= 0.5:
        raise NoDetectionError("degenerate circle fit")
    return Detection(image.horizon, cx, cy, r)


def _analytic(image: Behi, cam: CameraModel, config: PredictorConfig, history: Sequence[Detection]) -> FramePrediction:
    det = detect_ball(image, history, config.min_component_px)
    f = cam.focal_px
    depth = f * config.ball_radius_m / det.radius_px
    world = cam.back_project(det.u, det.v, depth)
    cx, _ = cam.principal_point
    # pixel noise on centre and radius, pushed through x = (u - cx) Z / f
    su = config.pixel_noise_px
    sigma = (depth / f) * math.hypot(su, (det.u - cx) * su / det.radius_px)
    recent = list(history[-(config.history_frames - 1):]) if config.history_frames > 1 else []
    ttc = _looming_ttc(recent + [det], config.ball_radius_m, f, config.speed_bounds_mps, config.min_looming_growth)
    if ttc is None:
        ttc = depth / config.nominal_speed_mps * US
    ttc = min(ttc, config.max_ttc_us)
    return FramePrediction(image.horizon, float(world[0]), max(sigma, SIGMA_FLOOR_M), max(0.0, ttc), det)


def _looming_ttc(
    dets: Sequence[Detection],
    ball_radius_m: float,
    focal_px: float,
    speed_bounds=(4.0, 20.0),
    min_growth: float = 0.25,
) -> float | None:
    """TTC from the apparent-radius growth over the detection history.

    Depth is proportional to 1/radius; a line through depth(t) gives the
    approach speed and the current depth. The speed is clamped because a
    few-pixel disk makes the slope noisy; without clear radius growth over
    the window there is no usable looming signal and None is returned.
    """
    if len(dets) < 3:
        return None
    if dets[-1].radius_px < (1 + min_growth) * min(d.radius_px for d in dets):
        return None
    t = np.array([d.t_us for d in dets], dtype=float) / US
    r = np.array([d.radius_px for d in dets])
    depth = focal_px * ball_radius_m / r
    if np.ptp(t) <= 0:
        return None
    # depth std grows like 1 / r^2 for a fixed pixel error on r
    slope, intercept = np.polyfit(t - t[-1], depth, 1, w=r * r)
    if intercept <= 0:
        return None
    speed = min(max(-slope, speed_bounds[0]), speed_bounds[1])
    return float(intercept / speed * US)


# --------------------------------------------------------------------------


def calibrate_noise_profile(
    target_per_frame_error: float,
    *,
    early_late_ratio: float = 10.0,
    profile_frames: int = 12,
    target_ttc_error_us: float = 8_990.0,
    seed: int = 0,
) -> PredictorConfig:
    """Noisy-oracle config whose expected per-frame |d - truth| equals the target.

    The profile runs linearly from ``ratio * late`` to ``late`` over
    ``profile_frames``; the mean absolute Gaussian error of a frame with
    std s is s * sqrt(2 / pi), which fixes ``late`` in closed form. A zero
    target returns a noise-free config.
    """
    if target_per_frame_error < 0:
        raise ValueError("target error must be non-negative")
    if early_late_ratio < 1:
        raise ValueError("early/late ratio must be at least 1")
    if target_per_frame_error == 0:
        return PredictorConfig(kind=NOISY_ORACLE, profile_frames=profile_frames, seed=seed)
    base = PredictorConfig(
        kind=NOISY_ORACLE, early_std_m=early_late_ratio, late_std_m=1.0, profile_frames=profile_frames
    )
    mean_std = np.mean([base.position_std(k) for k in range(profile_frames)])
    late = target_per_frame_error / (HALF_NORMAL_MEAN * mean_std)
    return replace(
        base,
        early_std_m=early_late_ratio * late,
        late_std_m=late,
        ttc_std_us=target_ttc_error_us / HALF_NORMAL_MEAN,
        seed=seed,
    )


def reference_per_frame_error(config: PredictorConfig, episodes: int = 200, seed: int = 12345) -> float:
    """Realised mean |d - truth| of the oracle over a reference set of frames."""
    errs = []
    for ep in range(episodes):
        cfg = replace(config, seed=seed + ep)
        for k in range(config.profile_frames):
            errs.append(abs(cfg.position_std(k) * _frame_noise(cfg.seed, k)[0]))
    return float(np.mean(errs))


def write_predictions_csv(preds: Sequence[FramePrediction], target) -> None:
    lines = ["t_us,d_m,sigma_m,ttc_us"]
    lines += [f"{p.t},{p.d!r},{p.sigma!r},{p.ttc!r}" for p in preds]
    text = "\n".join(lines) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w") as fh:
            fh.write(text)
