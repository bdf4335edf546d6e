"""Latency-budgeted perception-action episodes and seeded catch campaigns.

One episode: launch -> frames every ``frame_period_us`` -> predictions ->
impact estimate -> one rail command -> catch outcome. Latencies are modelled
as fixed costs so episodes replay identically on any host.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .actuation import CAUGHT, MotionTable, RailSpec, build_table, catch_outcome, select_command
from .estimator import DegenerateFitError, ImpactEstimate, accumulate, fit
from .events import Behi, behi_update
from .predictor import ANALYTIC, FramePrediction, NoDetectionError, PredictorConfig, predict
from .scene import (
    GroundTruth,
    LaunchSpec,
    SceneConfig,
    ground_truth_labels,
    sample_scene_launch,
    synthesize_events,
    trajectory_from_launch,
)

HARDWARE = "hardware"
TTC_THRESHOLD = "ttc_threshold"

MISSED = "missed"
REASON_DEADLINE = "deadline"
REASON_NO_PERCEPTION = "no-perception"

POLICY_ESTIMATE = "estimate"
POLICY_RANDOM = "random"


@dataclass(frozen=True)
class PipelineConfig:
    frame_period_us: int = 10_000
    batch_size: int = 12
    inference_latency_us: int = 20_000
    perception_budget_us: int = 150_000
    trigger_mode: str = HARDWARE
    ttc_threshold_us: int = 210_000
    estimation_latency_us: int = 500
    command_latency_us: int = 500
    table_spacing: float = 0.1
    use_uncertainty: bool = True
    command_policy: str = POLICY_ESTIMATE
    seed: int = 0

    def __post_init__(self):
        for name in ("frame_period_us", "inference_latency_us", "perception_budget_us", "ttc_threshold_us"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if min(self.estimation_latency_us, self.command_latency_us) < 0:
            raise ValueError("latencies must be non-negative")
        if self.trigger_mode not in (HARDWARE, TTC_THRESHOLD):
            raise ValueError(f"unknown trigger mode {self.trigger_mode!r}")
        if self.command_policy not in (POLICY_ESTIMATE, POLICY_RANDOM):
            raise ValueError(f"unknown command policy {self.command_policy!r}")
        # one batch plus its inference has to fit the perception window
        perception = self.batch_size * self.frame_period_us + self.inference_latency_us
        if self.trigger_mode == HARDWARE and perception > self.perception_budget_us:
            raise ValueError(
                f"batch of {self.batch_size} frames plus inference takes {perception} us, "
                f"over the {self.perception_budget_us} us perception budget"
            )


def trigger_decision(mode: str, predictions: Sequence[FramePrediction], config: PipelineConfig) -> str:
    """``"fire"`` or ``"wait"``."""
    if mode == HARDWARE:
        return "fire"
    if mode != TTC_THRESHOLD:
        raise ValueError(f"unknown trigger mode {mode!r}")
    if not predictions:
        raise ValueError("ttc_threshold trigger needs at least one prediction")
    return "fire" if predictions[-1].ttc <= config.ttc_threshold_us else "wait"


@dataclass
class EpisodeResult:
    launch: LaunchSpec
    trigger_mode: str
    trigger_us: int
    fire_us: int | None
    frames_processed: int
    predictions: list[FramePrediction]
    estimate: ImpactEstimate | None
    estimate_equal_weight: ImpactEstimate | None
    command_us: int | None
    table_index: int | None
    target_m: float | None
    plan_duration_us: int | None
    rail_arrival_us: int | None
    impact_us: int
    impact_x: float
    impact_z: float
    outcome: str
    reason: str
    ledger: dict[str, int] = field(default_factory=dict)
    trace: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def caught(self) -> bool:
        return self.outcome == CAUGHT

    def trace_csv(self) -> str:
        lines = ["t_us,stage,detail"]
        lines += [f"{t},{stage},{detail}" for t, stage, detail in self.trace]
        return "\n".join(lines) + "\n"


def _select(est, table, pipe, rng):
    if pipe.command_policy == POLICY_RANDOM:
        return int(rng.integers(len(table)))
    if est is None:
        return table.center_index
    return select_command(table, est.x_impact)


def run_episode(
    launch: LaunchSpec,
    scene: SceneConfig,
    pred: PredictorConfig,
    rail: RailSpec,
    pipe: PipelineConfig,
    *,
    table: MotionTable | None = None,
    seed: int | None = None,
) -> EpisodeResult:
    """Simulate one launch end to end.

    ``seed`` (default ``pipe.seed``) drives event synthesis, predictor noise
    and the random command policy through independent child streams.
    """
    table = table or build_table(rail, pipe.table_spacing)
    seed = pipe.seed if seed is None else seed
    ev_seed, pred_seed, cmd_seed = np.random.SeedSequence(seed).generate_state(3)
    pred = replace(pred, seed=int(pred_seed))
    cam = scene.camera
    traj = trajectory_from_launch(launch)
    truth = ground_truth_labels(traj, cam, pipe.frame_period_us)
    impact_us, impact_x, impact_z = truth.impact_t_us, truth.impact_x, truth.impact_z
    t0 = traj.t_start_us
    trace: list[tuple[int, str, str]] = [(t0, "launch", f"speed={launch.speed:.3f}m/s")]

    hardware = pipe.trigger_mode == HARDWARE
    n_frames = min(pipe.batch_size, len(truth)) if hardware else len(truth)
    stream = None
    if pred.kind == ANALYTIC:
        t_end = int(truth.t_us[n_frames - 1]) if n_frames else t0
        stream = synthesize_events(
            traj, cam, scene.noise, int(ev_seed), micro_step_us=scene.micro_step_us, t_end_us=t_end
        )

    trigger_us = t0
    if hardware:
        trace.append((trigger_us, "trigger", "hardware launch detection"))
    image = Behi.zeros(cam.geometry, t0) if stream is not None else None
    history = []
    predictions: list[FramePrediction] = []
    fired_frame = None
    last_frame_us = t0
    processed = 0
    for k in range(n_frames):
        t_frame = int(truth.t_us[k])
        last_frame_us = t_frame
        processed += 1
        if image is not None:
            image = behi_update(image, stream.window(image.horizon, t_frame), t_frame)
        try:
            p = predict(image, cam, pred, truth, k, history)
        except NoDetectionError:
            trace.append((t_frame, "frame", f"k={k} no detection"))
            continue
        predictions.append(p)
        if p.detection is not None:
            history.append(p.detection)
        trace.append((t_frame, "frame", f"k={k} d={p.d:.4f} sigma={p.sigma:.4f} ttc={p.ttc:.0f}"))
        if not hardware and trigger_decision(pipe.trigger_mode, predictions, pipe) == "fire":
            fired_frame = t_frame
            break

    if hardware:
        decision_frame = last_frame_us
    else:
        decision_frame = fired_frame if fired_frame is not None else last_frame_us
    ledger = {
        "accumulation": decision_frame - trigger_us,
        "inference": pipe.inference_latency_us,
        "estimation": pipe.estimation_latency_us,
        "command": pipe.command_latency_us,
    }
    fire_us = decision_frame + pipe.inference_latency_us
    command_us = trigger_us + sum(ledger.values())
    trace.append((fire_us, "inference", f"{len(predictions)} predictions"))

    result = EpisodeResult(
        launch=launch,
        trigger_mode=pipe.trigger_mode,
        trigger_us=trigger_us,
        fire_us=fire_us,
        frames_processed=processed,
        predictions=predictions,
        estimate=None,
        estimate_equal_weight=None,
        command_us=None,
        table_index=None,
        target_m=None,
        plan_duration_us=None,
        rail_arrival_us=None,
        impact_us=impact_us,
        impact_x=impact_x,
        impact_z=impact_z,
        outcome=MISSED,
        reason="",
        ledger=ledger,
        trace=trace,
    )
    if not predictions:
        result.reason = REASON_NO_PERCEPTION
        trace.append((fire_us, "outcome", f"{MISSED} {REASON_NO_PERCEPTION}"))
        trace.append((impact_us, "impact", f"x={impact_x:.4f}"))
        return result

    try:
        weighted = fit(accumulate(predictions))
    except DegenerateFitError:
        weighted = None
    try:
        equal = fit(accumulate(predictions, equal_weights=True))
    except DegenerateFitError:
        equal = None
    est = weighted if pipe.use_uncertainty else equal
    result.estimate, result.estimate_equal_weight = weighted, equal
    trace.append(
        (fire_us + pipe.estimation_latency_us, "estimate",
         "degenerate fit, centre fallback" if est is None else f"x_impact={est.x_impact:.4f} t_bar={est.t_bar_us:.0f}")
    )

    idx = _select(est, table, pipe, np.random.default_rng(int(cmd_seed)))
    plan = table.plans[idx]
    result.command_us = command_us
    result.table_index = idx
    result.target_m = float(table.targets[idx])
    result.plan_duration_us = plan.duration_us
    result.rail_arrival_us = command_us + plan.duration_us
    trace.append((command_us, "command", f"index={idx} target={result.target_m:.3f}"))
    trace.append((result.rail_arrival_us, "rail_arrival", f"duration_us={plan.duration_us}"))
    trace.append((impact_us, "impact", f"x={impact_x:.4f} z={impact_z:.4f}"))

    if result.rail_arrival_us > impact_us:
        result.reason = REASON_DEADLINE
    else:
        result.outcome = catch_outcome(result.target_m, impact_x, impact_z, rail)
        if result.outcome != CAUGHT:
            result.reason = result.outcome.split("_", 1)[1]
    trace.append((max(impact_us, result.rail_arrival_us), "outcome", f"{result.outcome} {result.reason}".strip()))
    return result


# --------------------------------------------------------------------------
# campaigns


@dataclass
class CampaignResult:
    seed: int
    episodes: list[EpisodeResult]
    truths: list[GroundTruth]
    bucket_edges: np.ndarray

    @property
    def success_rate(self) -> float:
        return float(np.mean([e.caught for e in self.episodes])) if self.episodes else math.nan

    def bucket_rates(self) -> list[tuple[float, float, int, float]]:
        """(low, high, count, success rate) per impact-location bucket."""
        return bucket_success([e.impact_x for e in self.episodes], [e.caught for e in self.episodes], self.bucket_edges)


def bucket_edges_for(rail: RailSpec, width: float = 0.1) -> np.ndarray:
    n = int(round(2 * rail.half_span / width))
    return np.round(np.linspace(-rail.half_span, rail.half_span, n + 1), 9)


def bucket_success(impact_x, caught, edges: np.ndarray):
    x = np.asarray(impact_x, dtype=float)
    caught = np.asarray(caught, dtype=float)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    rows = []
    for b in range(len(edges) - 1):
        m = idx == b
        rows.append((float(edges[b]), float(edges[b + 1]), int(m.sum()), float(caught[m].mean()) if m.any() else math.nan))
    return rows


def episode_seeds(seed: int, n: int) -> list[tuple[int, int]]:
    """(launch seed, episode seed) per episode, stable for a campaign seed."""
    kids = np.random.SeedSequence(seed).spawn(n)
    return [tuple(int(s) for s in k.generate_state(2)) for k in kids]


def run_campaign(
    n: int,
    scene: SceneConfig,
    pred: PredictorConfig,
    rail: RailSpec,
    pipe: PipelineConfig,
    seed: int = 0,
    *,
    workers: int = 1,
) -> CampaignResult:
    """``n`` seeded launches sharing one configuration.

    The same ``seed`` gives the same launches and predictor noise whatever
    the trigger mode or command policy, so campaigns can be compared
    episode by episode.
    """
    if n < 1:
        raise ValueError("campaign needs at least one episode")
    table = build_table(rail, pipe.table_spacing)
    seeds = episode_seeds(seed, n)

    def one(i):
        launch_seed, ep_seed = seeds[i]
        launch = sample_scene_launch(launch_seed, scene)
        res = run_episode(launch, scene, pred, rail, pipe, table=table, seed=ep_seed)
        truth = ground_truth_labels(trajectory_from_launch(launch), scene.camera, pipe.frame_period_us)
        return res, truth

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(one, range(n)))
    else:
        out = [one(i) for i in range(n)]
    return CampaignResult(seed, [o[0] for o in out], [o[1] for o in out], bucket_edges_for(rail))
