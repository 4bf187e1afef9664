"""Quantized phase beamforming on one reflecting surface.

Prints the cascaded gain for a few phase resolutions next to the brute
force best, then the full gain table of a small scenario.
"""
import numpy as np

from fres import build_channel_set, generate_scenario
from fres.channel import cascaded_gain, irs_uav_channel, qpb_phase, ue_irs_channel
from fres.checks import enumerate_best_gain
from fres.env import PhysicalConstants

c = PhysicalConstants(elements_per_irs=3)
ue = np.array([10.0, 20.0, 0.0])
irs = np.array([50.0, 50.0, 15.0])
uav = np.array([80.0, 40.0, 30.0])
h_ur = ue_irs_channel(ue, irs, c)
h_rv = irs_uav_channel(irs, uav, c)

print("levels   qpb gain        enumerated")
for n_p in (1, 2, 4, 8):
    g = cascaded_gain(h_ur, qpb_phase(h_ur, h_rv, n_p), h_rv)
    print(f"{n_p:>6}   {g:.6e}   {enumerate_best_gain(h_ur, h_rv, n_p):.6e}")

# more levels approach the continuous optimum
for n_p in (16, 64, 1024):
    print(n_p, cascaded_gain(h_ur, qpb_phase(h_ur, h_rv, n_p), h_rv))

sc = generate_scenario(seed=1, n_ues=4, m_uavs=2)
ch = build_channel_set(sc)
print()
print("gain (dB), rows are UEs and columns UAVs")
print(np.round(ch.gain_db(), 2))
print("rate (Mbit/s)")
print(np.round(ch.rates / 1e6, 3))
