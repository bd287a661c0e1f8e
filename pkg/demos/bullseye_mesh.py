"""17-sector bulls-eye and 3D activation mesh from four phantom slices.

Ground-truth onsets of four phantoms stand in for basal, two mid and apical
slices. Writes ``bullseye.svg`` and ``activation_mesh.txt`` to ``OUT``.

    python3 demos/bullseye_mesh.py [OUT]
"""
import sys
from pathlib import Path

from lvtos.aha import reconstruct_surface, render_bullseye, stack_from_curves, to_aha, write_mesh
from lvtos.phantom import PhantomSpec, make_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/lvtos_demo_aha")
out.mkdir(parents=True, exist_ok=True)

cases, _ = make_dataset(4, PhantomSpec(noise_sigma=0.0), seed=7)
stack = stack_from_curves([c.tos.tos_ms for c in cases], radii_mm=[28.0, 26.0, 22.0, 15.0])
m = to_aha(stack)
for sid in range(1, 18):
    print(f"sector {sid:2d}: {m.sector(sid):6.1f} ms")
(out / "bullseye.svg").write_text(render_bullseye(m))
mesh = reconstruct_surface(stack, radial_resolution=4, angular_resolution=72)
write_mesh(out / "activation_mesh.txt", mesh)
print(f"{len(mesh.vertices)} vertices, {len(mesh.faces)} faces; files in {out}")
