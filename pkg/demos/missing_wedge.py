# %% [markdown]
# Where the missing frequencies are. A 120 degree parallel scan leaves a 60
# degree double wedge of the 2D spectrum unmeasured; the binary mask marks it
# and FBP puts almost no energy there.

# %%
import pathlib
import sys

import numpy as np

from psdm_ct import (build_geometry, build_missing_wedge_mask, centered_dft2, fbp,
                     forward_project, fourier_fuse, write_png)
from psdm_ct.fusion import frequency_orientation

out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# %% Mask for 0..120 degrees
n = 128
geom = build_geometry("parallel", 0.0, np.deg2rad(120), 120, 182, 1.0, fov_radius=91)
mask = build_missing_wedge_mask(geom, (n, n))
phi = np.rad2deg(frequency_orientation((n, n)))
print("masked fraction", round(float(mask.mean()), 3))
print("orientations masked", round(float(phi[mask == 1].min()), 1), "to",
      round(float(phi[mask == 1].max()), 1), "deg")
write_png(out / "wedge_mask.png", mask, (0.0, 1.0))

# %% Energy of an FBP reconstruction inside and outside the wedge
x = np.arange(n) - (n - 1) / 2
X, Y = np.meshgrid(x, x)
blob = np.exp(-(X**2 + Y**2) / 400) * (1 + 0.5 * np.cos(X / 3))
rec = fbp(forward_project(blob, geom), geom, "ramlak", (n, n))
power = np.abs(centered_dft2(rec)) ** 2
print("energy ratio outside/inside", f"{power[mask == 0].sum() / power[mask == 1].sum():.1f}")
write_png(out / "log_spectrum.png", np.log1p(power))

# %% Fusion puts the masked part of a prior image back
fused = fourier_fuse(blob, rec, mask)
err = lambda a: float(np.sqrt(np.mean((a - blob) ** 2)))
print(f"rmse fbp {err(rec):.4f}, fused {err(fused):.4f}")
