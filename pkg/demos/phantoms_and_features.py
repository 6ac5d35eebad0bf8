"""
Phantom volumes and tumor shape features
========================================

Generate a few brain-like phantoms, look at one slice in the terminal and
print the nine-component condition vector of each tumor.
"""

import numpy as np

from sblds.features import condition_vector, sphericity, surface_area, voxel_volume
from sblds.phantom import PhantomSpec, generate_case

spec = PhantomSpec()  # 32 x 32 x 16 voxels, 1 to 3 lobes per tumor
image, mask = generate_case(seed=0, spec=spec)
print("dims (W, H, D):", image.dims, "tumor voxels:", int(mask.data.sum()))

# the slice through the tumor's center, drawn with characters
z = int(np.argmax(mask.data.sum(axis=(1, 2))))
shades = " .:-=+*#%@"
for row_img, row_msk in zip(image.slice(z), mask.data[z]):
    print("".join("O" if m else shades[min(int(v * len(shades)), len(shades) - 1)] for v, m in zip(row_img, row_msk)))

# features: normalized volume and area, sphericity, center of mass, bounding box
for seed in range(5):
    _, m = generate_case(seed, spec)
    c = condition_vector(m)
    print(f"seed {seed}: V={voxel_volume(m):4d} A={surface_area(m):4d} "
          f"sphericity={sphericity(voxel_volume(m), surface_area(m)):.3f} com={tuple(round(x, 2) for x in c.com)}")
