"""Generate a synthetic chest phantom and walk one case through projection.

Run:  python3 demos/01_phantom_and_projection.py
"""

import tempfile
from pathlib import Path

import numpy as np

from mvpad import generate_dataset, load_manifest_cases, project_case

out = Path(tempfile.mkdtemp(prefix="mvpad_demo_"))
manifest = generate_dataset(2, 1, seed=42, out_dir=out)
print(f"wrote corpus to {out}")
print(manifest.read_text())

cases, records = load_manifest_cases(manifest)
case = cases[records[-1].case_id]  # the abnormal one
ct = case.ct.voxels
print(f"case {case.case_id}: dims {ct.shape}, HU range [{ct.min()}, {ct.max()}]")
print(f"ground-truth anomaly voxels: {int(case.gt.voxels.sum())}")

for side in ("right", "left"):
    lung = case.lungs.mask(side).voxels
    print(f"{side} lung: {int((lung > 0).sum())} voxels")

# six truncated-MIP projections on a 256x256 canvas, canonical order
pairs = project_case(case.ct, case.lungs)
for img, mask in pairs:
    inside = img.pixels[mask.pixels > 0]
    print(
        f"{img.ptype.value:15s} bbox={img.geometry.bbox} scale={img.geometry.scale:.2f} "
        f"lung pixels={int(mask.pixels.sum()):6d} "
        f"intensity p50={np.median(inside):.3f} max={inside.max():.3f}"
    )
