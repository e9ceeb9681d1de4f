# %% [markdown]
# # Thrust axis from one propeller disc
#
# A circle of known radius projects to an ellipse. Lifting the ellipse into the
# cone through the camera centre gives two circle poses that explain it equally
# well. This script builds the ellipse of a tilted disc, recovers both
# candidates, and shows how a prior weighs them.

# %%
import math

import numpy as np

from evprop.detect import fit_conic_direct
from evprop.geometry import CameraIntrinsics, mixture_normal, p1e_disc_normal, project

k = CameraIntrinsics()
tilt = math.radians(20)
normal = np.array([0.0, math.sin(tilt), -math.cos(tilt)])
centre = np.array([0.05, -0.02, 1.0])
radius = 0.1

# points on the 3-D rim, projected through the pinhole model
e1 = np.cross(normal, [1.0, 0, 0])
e1 /= np.linalg.norm(e1)
e2 = np.cross(normal, e1)
t = np.linspace(0, 2 * math.pi, 200, endpoint=False)
rim = centre + radius * (np.outer(np.cos(t), e1) + np.outer(np.sin(t), e2))
pixels = project(rim, k) + np.random.default_rng(0).normal(0, 0.3, (200, 2))

# %%
conic = fit_conic_direct(pixels)
cands = p1e_disc_normal(conic, k, radius)
for n, c in cands:
    err = math.degrees(math.acos(np.clip(n @ normal, -1, 1)))
    print(f"normal {np.round(n, 4)}  centre {np.round(c, 4)}  error {err:.2f} deg")

# %% [markdown]
# One candidate is the true disc; the other is its mirror about the viewing
# ray. A confident prior selects one; a vague prior averages them, which keeps
# a filter from committing to the wrong branch.

# %%
normals = [n for n, _ in cands]
for spread in (0.02, 0.2, 2.0):
    m = mixture_normal(normals, normal, np.eye(3) * spread**2)
    print(f"prior spread {spread}: combined normal {np.round(m, 4)}")
