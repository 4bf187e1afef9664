"""UAV hover points from fuzzy clustering of the UE positions."""
import numpy as np

from fres import generate_scenario
from fres.placement import ls_fcm

sc = generate_scenario(seed=0, n_ues=20, m_uavs=3)
xy = sc.ue_positions[:, :2]

centers = ls_fcm(xy, 3, seed=0)
print("centers (m):")
print(np.round(centers, 1))

# alpha = 2 is plain FCM; alpha = 1 weights far UEs less
for alpha in (1.0, 2.0):
    print(alpha, np.round(ls_fcm(xy, 3, pathloss_exponent=alpha, seed=0), 1).tolist())

# relabeling the UEs gives the same centers
perm = np.random.default_rng(5).permutation(len(xy))
print("permutation invariant:", np.allclose(np.sort(ls_fcm(xy[perm], 3, seed=0), axis=0), np.sort(centers, axis=0)))

d = np.linalg.norm(xy[:, None, :] - centers[None], axis=2)
print("UEs per nearest center:", np.bincount(d.argmin(1), minlength=3))
