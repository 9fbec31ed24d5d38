"""
Labelling breach windows from optical tracking
==============================================

The drill tip is tracked in camera space while the vertebra mesh lives in CT
space. Register the two with ICP, intersect the planned pin axis with the
mesh, then find the tracked sample that comes closest to the far wall.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from psent import geometry, labeling, simulate
from psent.geometry import RigidTransform

rng = np.random.default_rng(7)
scenario = simulate.random_scenario(rng, jitter_mm=0.05)
traj, truth, mesh = simulate.gen_trajectory(scenario, seed=7)
print("tracked samples:", len(traj), "at %.0f Hz" % scenario.tracking_rate_hz)
print("mesh: %d vertices, %d triangles" % (len(mesh.vertices), len(mesh.faces)))

# --- registration -----------------------------------------------------------
# pretend we only know the pose up to a perturbation and recover it with ICP
# from noisy surface points seen by the camera
t_ct_cam = scenario.t_ct_cam
surface = mesh.vertices[rng.choice(len(mesh.vertices), 800, replace=False)]
seen = t_ct_cam.apply(surface) + rng.normal(0.0, 0.1, surface.shape)
guess = RigidTransform(Rotation.from_rotvec([0.05, -0.03, 0.04]).as_matrix() @ t_ct_cam.rotation,
                       t_ct_cam.translation + np.array([2.0, -1.0, 1.5]))
history = []
est = geometry.icp_register(surface, seen, init=guess, history=history)
print("ICP iterations: %d, final MSE %.4f mm^2" % (len(history), history[-1]))
print("rotation error %.3f deg, translation error %.3f mm" % (
    geometry.rotation_angle_deg(est, t_ct_cam), np.linalg.norm(est.translation - t_ct_cam.translation)))

# --- entry, exit and breach -------------------------------------------------
ep_ct, sp_ct = geometry.pin_mesh_intersection(mesh, scenario.entry_point_ct, scenario.path_direction_ct)
print("pin enters at", np.round(ep_ct, 2), "and leaves at", np.round(sp_ct, 2))

auto = labeling.autolabel(traj, mesh, est, scenario.entry_point_ct, scenario.path_direction_ct)
print("entry sample %d, exit sample %d" % (auto.entry_index, auto.exit_index))
print("breach estimate %.0f ms, simulator truth %.0f ms" % (auto.breach.time_ms, truth.breach_time_ms))

# the distance curves behind the estimate
d_entry, d_mesh = geometry.distance_curves(traj, mesh, est, est.apply(ep_ct))
k = auto.breach.index
print("at the breach sample: %.1f mm from entry, %.2f mm from the nearest vertex" % (d_entry[k], d_mesh[k]))

# --- window labels ----------------------------------------------------------
interval = auto.interval(200.0)
starts = np.arange(0.0, scenario.duration_ms - 100.0 + 1e-9, 25.0)
labels = labeling.label_windows(starts, interval)
print("breach interval [%.0f, %.0f] ms -> %d breach windows" % (interval.start_ms, interval.end_ms, labels.sum()))
