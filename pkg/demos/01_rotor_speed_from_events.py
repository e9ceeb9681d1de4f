# %% [markdown]
# # Rotor speed from a patch of events
#
# A spinning two-blade propeller seen from above makes every pixel on its disc
# flicker twice per revolution. Counting events in the top-left quarter of the
# disc therefore gives a signal whose fundamental is the blade-passage
# frequency. This script renders one second of a hovering target, extracts
# that signal for each motor and turns it into rad/s.

# %%
import numpy as np

from evprop.rpm import RoiSignal, bin_events, estimate_frequency, freq_to_omega
from evprop.sim import SimSetup, blade_passage_frequency, simulate

setup = SimSetup()
flight, observer, events = simulate("hover", 1_000_000, setup, seed=0)
truth = flight[-1].motor_omega
print(f"{len(events)} events, true rotor speeds {np.round(truth, 1)} rad/s")
print(f"blade-passage frequencies {np.round(blade_passage_frequency(truth), 2)} Hz")

# %% [markdown]
# Project each motor into the image to get a bounding box, keep the events in
# its top-left quarter and bin the last 100 ms at 0.2 ms.

# %%
from evprop.geometry import project, world_to_cam
from evprop.rpm import extract_roi_events

window, bin_us = 100_000, 200
t_end = 1_000_000
k = setup.intrinsics
depth = setup.observer_altitude - flight[0].p[2]
r_px = setup.generator.prop_radius * k.fx / depth
for i, motor in enumerate(setup.generator.motor_positions):
    c = project(world_to_cam(flight[-1].p + np.asarray(motor), setup.extrinsics, observer[-1]), k)
    bbox = (int(c[0] - r_px), int(c[1] - r_px), int(c[0] + r_px), int(c[1] + r_px))
    roi = extract_roi_events(events, bbox)
    counts = bin_events(roi["t"], t_end - window, bin_us, window // bin_us)
    f = estimate_frequency(RoiSignal(bin_us, counts, window))
    print(f"motor {i + 1}: {len(roi)} ROI events, f = {f:.2f} Hz, "
          f"omega = {freq_to_omega(f):.1f} rad/s (true {truth[i]:.1f})")

# %% [markdown]
# The spectral peak is refined between FFT bins, so the estimate lands well
# inside half a hertz even though the bin spacing of the padded 100 ms window is
# 2.5 Hz.
