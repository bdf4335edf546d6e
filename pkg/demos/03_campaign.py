"""A seeded campaign: success by target bucket and what the uncertainty weights buy."""

# %%
import numpy as np

from eventcatch import PipelineConfig, RailSpec, SceneConfig, run_campaign
from eventcatch.config import REFERENCE_FRAME_ERROR_M
from eventcatch.metrics import compute_metrics
from eventcatch.pipeline import POLICY_RANDOM, TTC_THRESHOLD
from eventcatch.predictor import calibrate_noise_profile

scene, rail = SceneConfig(), RailSpec()
pred = calibrate_noise_profile(REFERENCE_FRAME_ERROR_M)
camp = run_campaign(120, scene, pred, rail, PipelineConfig(), seed=1)
rep = compute_metrics(camp.episodes, camp.truths)
print(f"per-frame x error {rep.frame_location_mm} mm, ttc error {rep.frame_ttc_ms} ms")
print(f"impact error {rep.impact_location_mm} mm, collision time {rep.collision_time_ms} ms")
print(f"success {rep.success_rate:.3f}")
for lo, hi, n, r in rep.buckets:
    print(f"  [{lo:+.1f}, {hi:+.1f})  n={n:3d}  {r:.2f}")

# %% Inverse-variance weights against a plain least-squares line
w = [abs(e.estimate.x_impact - e.impact_x) for e in camp.episodes]
u = [abs(e.estimate_equal_weight.x_impact - e.impact_x) for e in camp.episodes]
print(f"weighted {1e3 * np.mean(w):.1f} mm  equal {1e3 * np.mean(u):.1f} mm")

# %% Random commands on the same launches, and the ttc-threshold trigger
rand = run_campaign(120, scene, pred, rail, PipelineConfig(command_policy=POLICY_RANDOM), seed=1)
ttc = run_campaign(120, scene, pred, rail, PipelineConfig(trigger_mode=TTC_THRESHOLD), seed=1)
print(f"random {rand.success_rate:.3f}  ttc-threshold {ttc.success_rate:.3f}")
