"""Dataset, teacher, distillation and benchmark on a laptop-sized config.

Run with ``python demos/03_toy_pipeline.py [config.yaml]``; defaults to
``configs/smoke.yaml`` which finishes in under two minutes.  The full
experiment (``configs/experiment.yaml``) takes about 15 minutes on one core.
"""

import json
import logging
import sys
import time
from pathlib import Path

from radardiff.bench import ExperimentConfig, run_pipeline

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
path = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parents[1] / "configs" / "smoke.yaml")
cfg = ExperimentConfig.load(path)

t0 = time.perf_counter()
result = run_pipeline(cfg)
print(f"finished in {time.perf_counter() - t0:.0f} s; outputs in {cfg.out}")
print((result["out"] / "table.csv").read_text())
for method, info in result["metadata"]["methods"].items():
    agg = info["aggregate"]
    print(f"{method:13s} CD {agg['cd']:.3f} m  HD {agg['hd']:.3f} m  F {agg['fscore']:.3f}  "
          f"calls/frame {info['network_calls_per_frame']}  s/frame {info['seconds_per_frame']:.4f}")
print(json.dumps(result["metadata"]["methods"].get("oscfar", {}).get("chosen_alpha")))
