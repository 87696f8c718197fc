"""Generate each of the four jamming mechanisms against the same chirp
and show what pulse compression makes of them.

C&I and ISRJ slice and repeat the intercepted pulse, so they compress
into trains of false peaks. SMSP retransmits faster sub-chirps and
smears. NCJ convolves the pulse with a noise kernel and raises a noise
shelf instead of discrete spikes.
"""

import numpy as np

from jointhrrp.signal import (
    RadarWaveformSpec, CandISpec, ISRJSpec, SMSPSpec, NCJSpec,
    lfm_pulse, gen_candi, gen_isrj, gen_smsp, gen_ncj,
    matched_filter, ComplexSeries,
)

wf = RadarWaveformSpec()
pulse = lfm_pulse(wf)
T = wf.pulse_width


def describe(name, series):
    prof = matched_filter(ComplexSeries(series.samples[:1024], wf.sample_rate)
                          if len(series) >= 1024 else series, pulse)
    mag = np.abs(prof.samples)
    peak = float(mag.max())
    # count distinct lobes above half the max
    above = mag > 0.5 * peak
    lobes = int(np.sum(np.diff(above.astype(int)) == 1) + above[0])
    print(f"{name:6s} len {len(series):5d}  peak {peak:9.1f}  "
          f"lobes>{0.5:.1f}max {lobes}")


describe("candi", gen_candi(pulse, CandISpec(n_c=10, n_r=3)))
describe("isrj", gen_isrj(pulse, ISRJSpec(p=3, q=1, t_i=T / 6, duty=0.5)))

m_s = 3
freqs = tuple(-wf.bandwidth / 2 for _ in range(m_s))
slopes = tuple(m_s * wf.bandwidth / T for _ in range(m_s))
describe("smsp", gen_smsp(SMSPSpec(m_s=m_s, freqs=freqs, slopes=slopes), wf))

describe("ncj", gen_ncj(pulse, NCJSpec(kernel_len=32, kernel_seed=9)))
