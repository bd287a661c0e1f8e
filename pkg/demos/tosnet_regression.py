"""Train the onset-time network on a small phantom set and compare it with the threshold baseline.

Writes per-case curve plots to ``OUT`` (default /tmp/lvtos_demo_tos).

    python3 demos/tosnet_regression.py [OUT]
"""
import sys
from pathlib import Path

import numpy as np

from lvtos.phantom import PhantomSpec, make_dataset, split
from lvtos.pipeline import case_strain_matrix
from lvtos.svg import tos_curve_plot
from lvtos.tosnet import TosTrainConfig, compare_methods, train_tosnet

out = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/lvtos_demo_tos")
out.mkdir(parents=True, exist_ok=True)

cases, manifest = make_dataset(50, PhantomSpec(), seed=4)
train, test = split(cases, manifest)
ck, rows = train_tosnet([case_strain_matrix(c) for c in train], [c.tos for c in train],
                        hyper=TosTrainConfig(lr=3e-3, steps=300))
print("training mse %.2f -> %.2f" % (rows[0]["loss"], np.mean([r["loss"] for r in rows[-20:]])))

rep = compare_methods([(f"case_{i}", case_strain_matrix(c), c.tos) for i, c in enumerate(test)], ck)
for r in rep["rows"]:
    print(f"{r['case']:8s} network {r['tosnet_rmse_ms']:5.1f} ms   baseline {r['baseline_rmse_ms']:5.1f} ms")
print("pooled: network %.1f ms, baseline %.1f ms" % (rep["summary"]["tosnet_rmse_ms"],
                                                     rep["summary"]["baseline_rmse_ms"]))
for cid, truth, base, pred in rep["curves"][:3]:
    (out / f"{cid}.svg").write_text(tos_curve_plot(truth, base, pred, title=cid))
print("plots in", out)
