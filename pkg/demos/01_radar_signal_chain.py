"""From a synthetic corridor to radar heatmaps and an OS-CFAR point cloud.

Run with ``python demos/01_radar_signal_chain.py [outdir]``.  Writes PGM
images of the range-azimuth heatmap, the BEV truth and the CFAR output so
they can be eyeballed side by side.
"""

import sys
from pathlib import Path

import numpy as np

from radardiff import io
from radardiff.detectors import CfarConfig, cfar_2d, detections_to_points
from radardiff.geometry import fov_filter, rasterize
from radardiff.metrics import evaluate_frame
from radardiff.radar_dsp import azimuth_resolution, make_rah, make_rdh, rah_to_polar_grid
from radardiff.signal_sim import WaveformConfig, generate_scene, ground_truth_points, simulate_frame

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/signal_chain")
out.mkdir(parents=True, exist_ok=True)

# A 77 GHz chirp with 8 virtual antennas: 0.195 m range bins, 14 degree beams.
cfg = WaveformConfig()
print(f"range bin {cfg.range_bin_size:.4f} m, max range {cfg.max_range:.1f} m, "
      f"v_max {cfg.max_velocity:.2f} m/s, beam {np.rad2deg(azimuth_resolution(cfg.n_virtual)):.1f} deg")

# One corridor frame.  Wall points carry random phases so they do not add coherently.
scene = generate_scene("corridor", seed=1)
cube = simulate_frame(scene, cfg, noise_std=1.0, rng=np.random.default_rng(0))
print(f"{len(scene.scatterers)} scatterers -> cube {cube.data.shape}")

rah_db = make_rah(cube, 64, scale="db")
rah_pow = make_rah(cube, 64, scale="power")
rdh = make_rdh(cube)
io.write_pgm(out / "rah_db.pgm", rah_db.values)
io.write_pgm(out / "rdh.pgm", rdh.values / rdh.values.max())

# The truth and the condition share one polar grid.
gt = ground_truth_points(scene)
truth = rasterize(gt, 64, 64)
io.write_pgm(out / "truth_bev.pgm", truth.values)
io.write_pgm(out / "condition_bev.pgm", rah_to_polar_grid(rah_db, 64, 64, 12.8, np.deg2rad(120)))

# OS-CFAR is robust to neighbouring strong returns; CA is shown for contrast.
for variant in ("OS", "CA"):
    cfar = CfarConfig(variant)
    pts = fov_filter(detections_to_points(cfar_2d(rah_pow, cfar), rah_pow))
    m = evaluate_frame(gt, pts)
    io.write_pgm(out / f"{variant.lower()}cfar_bev.pgm", rasterize(pts, 64, 64).values)
    print(f"{variant}-CFAR alpha={cfar.scale_factor:.2f}: {len(pts)} points, "
          f"CD {m.cd:.3f} m, HD {m.hd:.3f} m, F {m.fscore:.3f}")
print(f"images in {out}/")
