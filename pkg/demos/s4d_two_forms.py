"""One diagonal state-space layer, two evaluation routes.

The recurrence x[k+1] = Abar x[k] + Bbar u[k] and the length-L
convolution with the unrolled kernel compute the same map. Training
uses the FFT convolution; the recurrence is the ground truth.
"""

import time
import numpy as np

from jointhrrp.temporal import S4dParams, s4d_kernel, s4d_recurrent

rng = np.random.default_rng(3)
L, H, m = 512, 8, 8

p = S4dParams(
    a_re=-np.exp(rng.normal(size=(H, m))),
    a_im=rng.normal(scale=3.0, size=(H, m)),
    b=rng.normal(size=(H, m)) + 1j * rng.normal(size=(H, m)),
    c_out=rng.normal(size=(H, m)) + 1j * rng.normal(size=(H, m)),
    log_dt=rng.uniform(np.log(1e-3), np.log(1e-1), size=H),
    d=rng.normal(size=H),
)
u = rng.normal(size=(L, H))

t0 = time.perf_counter()
y_rec = s4d_recurrent(u, p)
t_rec = time.perf_counter() - t0

t0 = time.perf_counter()
k = s4d_kernel(p, L)  # [H, L]
y_conv = np.stack([np.convolve(u[:, h], k[h])[:L] for h in range(H)], axis=1)
y_conv += u * p.d[None, :]
t_conv = time.perf_counter() - t0

diff = np.max(np.abs(y_rec - y_conv))
print(f"sequence {L} x {H} channels, {m} conjugate mode pairs")
print(f"recurrent {t_rec*1e3:7.2f} ms   convolution {t_conv*1e3:7.2f} ms")
print(f"max |recurrent - convolution| = {diff:.3e}")
