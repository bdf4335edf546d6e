"""Jerk-limited rail moves and whether they fit inside a flight."""

# %%
import numpy as np

from eventcatch import PipelineConfig, RailSpec, build_table, plan_move
from eventcatch.actuation import integrate_jerk_profile

rail = RailSpec()
plan = plan_move(rail, 0.283)
print(f"283 mm in {plan.duration * 1e3:.1f} ms, phases (ms):", np.round(np.array(plan.phases) * 1e3, 2))
t = np.linspace(0, plan.duration, 9)
for ti, x, v, a, j in zip(t, *plan.sample(t)):
    print(f"  {ti * 1e3:6.1f} ms  x={x:.4f}  v={v:5.2f}  a={a:6.1f}  j={j:7.0f}")

# %% The closed form against brute-force integration of the jerk
tt, x, v, a = integrate_jerk_profile(plan, 1e-6)
print("max |closed - numeric| =", float(np.max(np.abs(plan.sample(tt)[0] - x))))

# %% Precomputed table commands and the time left after perception
pipe = PipelineConfig()
command = pipe.batch_size * pipe.frame_period_us + pipe.inference_latency_us
command += pipe.estimation_latency_us + pipe.command_latency_us
table = build_table(rail, pipe.table_spacing)
for speed in (6.0, 9.0, 13.0):
    flight = 4.0 / speed * 1e6
    slack = flight - command
    reach = [c for c, p in zip(table.targets, table.plans) if p.duration_us <= slack]
    print(f"{speed:4.1f} m/s: flight {flight / 1e3:.0f} ms, rail gets {slack / 1e3:.0f} ms, reachable {min(reach):+.1f}..{max(reach):+.1f} m")
