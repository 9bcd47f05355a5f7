"""
Certifying strong quasar-convexity by sampling
==============================================

Check the proven constants of the capped loss, then inflate them and watch
the checker object. Ends with a point where star-convexity fails.
"""

# %%
import numpy as np

from qprox import bench
from qprox.losses import CappedLoss
from qprox.quasar_cert import BallSampler, QuasarCert, check_growth_error_bound, check_interpolation

loss = CappedLoss(1.0, 0.25)
c = loss.quasar_constants()
print("kappa = %.4f, gamma = %.4f" % (c.kappa, c.gamma))

# %%
# The anchor of the capped loss is the origin.
cert = QuasarCert(c.kappa, c.gamma, np.zeros(3))
sampler = BallSampler(np.zeros(3), 5.0, seed=1)
print(check_interpolation(loss.value, cert, sampler, 2000))
print(check_growth_error_bound(loss.value, loss.subgrad, cert, BallSampler(np.zeros(3), 5.0, seed=2), 2000))

# %%
# Inflate gamma a thousand times; the checker should now report violations.
bad = cert.scaled(gamma_factor=1e3)
print(check_interpolation(loss.value, bad, BallSampler(np.zeros(3), 5.0, seed=1), 2000))

# %%
# Witnesses that the objectives are not star-convex.
for problem, construction, margin, check in bench.nonstar_witnesses(2024, trials=20):
    print("%-7s %-22s margin %.6g (recomputed %.6g)" % (problem, construction, margin, check))
