"""One launch from trigger to outcome, with the latency ledger."""

# %%
from eventcatch import PipelineConfig, PredictorConfig, RailSpec, SceneConfig, run_episode
from eventcatch.config import REFERENCE_FRAME_ERROR_M
from eventcatch.predictor import ANALYTIC, calibrate_noise_profile
from eventcatch.scene import sample_launch

scene, rail, pipe = SceneConfig(), RailSpec(), PipelineConfig()
launch = sample_launch(11, (-0.22, -0.22), (9.0, 9.0))

# %% Perfect perception: the rail is commanded 141 ms after the trigger
ep = run_episode(launch, scene, PredictorConfig(), rail, pipe, seed=0)
print(ep.trace_csv())
print("ledger (us):", ep.ledger)

# %% Noisy perception with reported uncertainty, then the event-driven detector
for name, pred in (
    ("calibrated oracle", calibrate_noise_profile(REFERENCE_FRAME_ERROR_M)),
    ("analytic detector", PredictorConfig(kind=ANALYTIC, ball_radius_m=scene.ball_radius)),
):
    ep = run_episode(launch, scene, pred, rail, pipe, seed=4)
    est = ep.estimate or ep.estimate_equal_weight
    print(f"{name:18s} x_impact {est.x_impact:+.4f} (true {ep.impact_x:+.4f})  target {ep.target_m:+.1f}  {ep.outcome}")
    for p in ep.predictions[::3]:
        print(f"    t={p.t / 1e3:5.0f} ms  x={p.d:+.4f} +- {p.sigma:.4f}  ttc={p.ttc / 1e3:6.1f} ms")
