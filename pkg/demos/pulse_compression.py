"""Walk through the basic radar chain: chirp, echo, matched filter.

A point target at range R shows up after pulse compression as a sharp
peak at the bin 2*R/c * fs. Run this to see the numbers line up.
"""

import numpy as np

from jointhrrp.signal import (
    RadarWaveformSpec, ComplexSeries, lfm_pulse, matched_filter,
    range_to_bin, _shift,
)

wf = RadarWaveformSpec()  # 10 MHz chirp, 10 us pulse, 20 MHz sampling
pulse = lfm_pulse(wf)
print(f"pulse: {wf.n_samples} samples, bandwidth {wf.bandwidth/1e6:.0f} MHz")

# a single scatterer at 2.8 km, received in a 1024-bin window
rng_m = 2800.0
d = range_to_bin(rng_m, wf.sample_rate)
echo = ComplexSeries(0.7 * _shift(pulse.samples, d, 1024), wf.sample_rate)
print(f"target at {rng_m:.0f} m -> expected peak bin {d}")

prof = matched_filter(echo, pulse)
mag = np.abs(prof.samples)
peak = int(np.argmax(mag))
print(f"compressed peak at bin {peak}, value {mag[peak]:.1f}")
print(f"theory: amplitude * n_samples = {0.7 * wf.n_samples:.1f}")

# mainlobe width ~ fs/B samples
half = mag >= mag[peak] / np.sqrt(2.0)
print(f"-3 dB mainlobe width: {int(np.sum(half))} bins "
      f"(fs/B = {wf.sample_rate / wf.bandwidth:.0f})")
