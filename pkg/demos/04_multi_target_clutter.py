"""Three crossing targets under clutter and missed detections.

The stress scenario for data association: three targets fly through a
common crossing point in the eleven-camera rig while every camera also
reports one false feature per frame on average and misses 5% of real
detections. The run is scored for identity switches, merges and RMSE.

Run:  python3 demos/04_multi_target_clutter.py
"""

import numpy as np

from camtrack3d.association import GateConfig
from camtrack3d.hub import TrackerWorld, packets_to_assembled, process_frame
from camtrack3d.metrics import evaluate
from camtrack3d.simharness import (
    generate_rig,
    preset,
    simulate_truth,
    synthesize_observations,
)
from camtrack3d.tracker import ObservationModel, ProcessModel

spec = preset("bigcyl", seed=105, clutter_rate=1.0, detection_prob=0.95)
cams = generate_rig(spec)
truths = simulate_truth(spec, 3, 600, crossing=True)

min_d = min(np.linalg.norm(truths[i].position(t) - truths[j].position(t))
            for t in range(600) for i in range(3) for j in range(i + 1, 3))
print(f"scenario: 3 targets, 600 frames at {spec.fps:.0f} fps, "
      f"{spec.n_cameras} cameras")
print(f"minimum pairwise target distance during the run: {min_d * 1000:.0f} mm")
print(f"clutter {spec.clutter_rate}/camera-frame, detection {spec.detection_prob}")

packets = synthesize_observations(truths, cams, spec)
frames = packets_to_assembled(packets, spec.n_cameras)
world = TrackerWorld(process=ProcessModel(dt=spec.dt),
                     observation=ObservationModel(cameras=cams),
                     gate=GateConfig())

est_frames = {}
merges = 0
for af in frames:
    for ev in process_frame(world, af):
        for b in ev.births:
            t = next(x for x in world.targets if x.target_id == b)
            d = min(np.linalg.norm(t.position - tr.position(af.frame))
                    for tr in truths)
            if af.frame < 5 or d < 0.1:
                print(f"  frame {af.frame:3d}: track {b} born "
                      f"{d * 1000:6.1f} mm from nearest target")
        nonnull = [c for c in ev.assignments.columns.values()
                   if any(i is not None for i in c)]
        if len(nonnull) != len(set(nonnull)):
            merges += 1
    est_frames[af.frame] = {t.target_id: t.mean.copy() for t in world.targets}

report = evaluate(est_frames, truths, matching_radius=0.05)
print(f"\nframes with identical post-resolution assignment subsets: {merges}")
print(f"identity switches: {report['id_switches']}")
print(f"position RMSE:     {report['position_rmse'] * 1000:.2f} mm")
print(f"fragmentation:     {report['fragmentation']}")
print(f"tracks created:    {report['track_count']} "
      "(clutter-born tracks are starved and culled within a few frames)")
print(f"spawn search work: {world.stats.spawn.camera_combinations} camera "
      f"combinations over {world.stats.spawn.passes} passes, "
      f"{world.stats.spawn.hypotheses_triangulated} hypotheses triangulated")
print(f"likelihood gating: {world.stats.likelihood.dist2d_evals} image-distance "
      f"tests, only {world.stats.likelihood.mahalanobis_evals} reached the "
      "expensive ray test")
