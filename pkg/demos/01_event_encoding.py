"""Encoding a ball's event stream as a binary history image and an event volume."""

# %% A ball at 10 m/s, rendered as contour events for the first 120 ms
import numpy as np

from eventcatch import SceneConfig, behi_from_events, behi_resize, behi_update, event_volume_from_events
from eventcatch.events import behi_deserialize, behi_serialize, representation_size_bits
from eventcatch.scene import sample_launch, synthesize_events, trajectory_from_launch

scene = SceneConfig()
launch = sample_launch(3, (0.15, 0.15), (10.0, 10.0))
traj = trajectory_from_launch(launch)
events = synthesize_events(traj, scene.camera, rng_seed=3, t_end_us=120_000)
print(f"{len(events)} events, flight {traj.flight_s * 1e3:.0f} ms")

# %% One image per 10 ms frame, updated in place of re-encoding
img = behi_from_events(events, 10_000)
for k in range(2, 13):
    img = behi_update(img, events.window(img.horizon, k * 10_000), k * 10_000)
    print(f"t={img.horizon / 1e3:5.0f} ms  set={img.count():5d}  new={img.fresh_pixels.size:4d}")
assert img == behi_from_events(events, 120_000)

# %% The same 120 ms as a 12-bin volume keeps timing but costs far more storage
vol = event_volume_from_events(events, 12)
print("polarity mass", vol.channel_mass(), "counts", int(np.sum(events.p > 0)), int(np.sum(events.p < 0)))
g = scene.camera.geometry
for kind, c in (("behi", 1), ("event_volume", 12), ("grayscale_stack", 12)):
    print(f"{kind:16s}{representation_size_bits(kind, g, c) / 8 / 1024:10.1f} KiB")

# %% Network input size and the on-disk form
small = behi_resize(img, 320, 240)
blob = behi_serialize(img)
print(f"resized set={small.count()}  serialized {len(blob)} bytes")
assert behi_deserialize(blob) == img
