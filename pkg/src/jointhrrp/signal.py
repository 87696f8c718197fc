"""Radar waveforms, jamming generators, target echoes, and pulse compression.

Conventions, fixed once and used by every consumer and every test oracle:

- The transmit pulse is a baseband LFM chirp swept -B/2..+B/2 over the pulse.
- Delays are realized as nearest-sample shifts of the sampled waveform; the
  generators' internal delays follow the same convention.
- rect(t) is the indicator of [0, 1); the unit step u(t) is 1 for t >= 0.
- Doppler is a per-component complex exponential on global window time,
  applied before pulse compression; velocity maps to Doppler at an assumed
  10 GHz carrier.
- matched_filter output index n is the non-negative lag n: a copy of the
  reference delayed by d samples peaks at output bin d.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

logger = logging.getLogger(__name__)

C_LIGHT = 299792458.0
CARRIER_HZ = 10e9

JAM_TYPES = ("candi", "isrj", "smsp", "ncj")


@dataclass(frozen=True)
class RadarWaveformSpec:
    bandwidth: float = 10e6
    pulse_width: float = 10e-6
    sample_rate: float = 20e6
    carrier_removed: bool = True

    def __post_init__(self):
        if self.bandwidth < 0 or self.pulse_width <= 0:
            raise ValueError("bandwidth must be >= 0 and pulse_width > 0")
        if self.bandwidth > 0 and self.sample_rate < 2 * self.bandwidth:
            raise ValueError("sample_rate must be at least 2x bandwidth")
        n = self.pulse_width * self.sample_rate
        if abs(n - round(n)) > 1e-9:
            raise ValueError(
                f"pulse_width*sample_rate = {n} is not an integer sample count")

    @property
    def n_samples(self) -> int:
        return int(round(self.pulse_width * self.sample_rate))


@dataclass
class ComplexSeries:
    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.size < 1:
            raise ValueError("series must have at least one sample")
        if not np.isfinite(self.samples).all():
            raise ValueError("non-finite sample values")

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class CandISpec:
    n_c: int
    n_r: int
    amplitude: float = 1.0
    delay: float = 0.0
    doppler: float = 0.0

    def __post_init__(self):
        if self.n_c < 1 or self.n_r < 1:
            raise ValueError("n_c and n_r must be >= 1")


@dataclass(frozen=True)
class ISRJSpec:
    p: int
    q: int
    t_i: float
    duty: float
    amplitude: float = 1.0
    delay: float = 0.0
    doppler: float = 0.0

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must be >= 1")
        if self.t_i <= 0:
            raise ValueError("t_i must be positive")
        if not 0.3 <= self.duty <= 0.5:
            raise ValueError(f"duty {self.duty} outside [0.3, 0.5]")


@dataclass(frozen=True)
class SMSPSpec:
    m_s: int
    freqs: tuple
    slopes: tuple
    amplitude: float = 1.0
    delay: float = 0.0
    doppler: float = 0.0

    def __post_init__(self):
        if self.m_s < 1:
            raise ValueError("m_s must be >= 1")
        if len(self.freqs) != self.m_s or len(self.slopes) != self.m_s:
            raise ValueError("freqs and slopes must have length m_s")


@dataclass(frozen=True)
class NCJSpec:
    kernel_len: int
    kernel_seed: int
    amplitude: float = 1.0
    delay: float = 0.0
    doppler: float = 0.0

    def __post_init__(self):
        if self.kernel_len < 1:
            raise ValueError("kernel_len must be >= 1")


@dataclass(frozen=True)
class TargetTemplateSpec:
    class_id: int
    scatterer_positions: tuple
    scatterer_amplitudes: tuple
    aspect_jitter: float = 0.01

    def __post_init__(self):
        if len(self.scatterer_positions) < 2:
            raise ValueError("need at least 2 scatterers per class")
        if len(self.scatterer_positions) != len(self.scatterer_amplitudes):
            raise ValueError("positions and amplitudes must align")


def lfm_pulse(spec: RadarWaveformSpec) -> ComplexSeries:
    """Unit-amplitude baseband LFM chirp, instantaneous freq -B/2 .. +B/2."""
    n = spec.n_samples
    t = np.arange(n) / spec.sample_rate
    phase = 2.0 * np.pi * (-0.5 * spec.bandwidth * t
                           + spec.bandwidth / (2.0 * spec.pulse_width) * t * t)
    return ComplexSeries(np.exp(1j * phase), spec.sample_rate)


def matched_filter(received: ComplexSeries, reference: ComplexSeries) -> ComplexSeries:
    """Correlate with the reference; output[n] = sum_k r[n+k] conj(ref[k]).

    Output keeps the received length (non-negative lags only), so a
    reference copy delayed by d samples peaks at bin d.
    """
    if received.sample_rate != reference.sample_rate:
        raise ValueError("sample rates differ")
    nr, nf = len(received), len(reference)
    L = sfft.next_fast_len(nr + nf - 1)
    R = sfft.fft(received.samples, L)
    F = sfft.fft(reference.samples, L)
    corr = sfft.ifft(R * np.conj(F), L)[:nr]
    return ComplexSeries(corr, received.sample_rate, received.t0)


def _shift(x: np.ndarray, d: int, n_out: int) -> np.ndarray:
    """Nearest-sample delayed copy on an n_out grid: out[n] = x[n-d]."""
    out = np.zeros(n_out, dtype=np.complex128)
    lo = max(0, d)
    hi = min(n_out, d + x.size)
    if hi > lo:
        out[lo:hi] = x[lo - d:hi - d]
    return out


def gen_candi(x: ComplexSeries, spec: CandISpec) -> ComplexSeries:
    """Chopped-and-interleaved repeater: delayed copies under periodic gates.

    out(t) = A * sum_r sum_c x(t - r*T/(Nc*Nr)) * [u(t - c*T/Nc) - u(t - c*T/Nc - T/Nr)]
    with T the pulse width spanned by x. Gates may overlap when Nr < Nc; the
    stacking is intentional (energy is recalibrated downstream).
    """
    fs = x.sample_rate
    T = len(x) / fs
    n_c, n_r, A = spec.n_c, spec.n_r, spec.amplitude
    extent_samples = (n_c - 1) * len(x) / n_c + len(x) / n_r
    n_out = max(len(x), int(np.ceil(extent_samples - 1e-9)))
    t = np.arange(n_out) / fs
    delayed_sum = np.zeros(n_out, dtype=np.complex128)
    for r in range(n_r):
        d = int(round(fs * r * T / (n_c * n_r)))
        delayed_sum += _shift(x.samples, d, n_out)
    gate_sum = np.zeros(n_out)
    for c in range(n_c):
        lo = c * T / n_c
        gate_sum += ((t >= lo) & (t < lo + T / n_r)).astype(float)
    return ComplexSeries(A * delayed_sum * gate_sum, fs)


def isrj_slot(p: int, q: int, q_total: int) -> int:
    """Slot index alpha(p, q) = (p-1)(Q+1) + q of the p-th repeat cycle."""
    return (p - 1) * (q_total + 1) + q


def gen_isrj(x: ComplexSeries, spec: ISRJSpec, max_len: int | None = None) -> ComplexSeries:
    """Interrupted-sampling repeater: rect-gated delayed slices.

    out(t) = A * sum_{p=1..P} sum_{q=1..Q} rect((t - alpha*T_I)/T_I) * x(t - q*T_I),
    alpha = (p-1)(Q+1)+q, rect = indicator of [0,1). Slices past max_len are
    truncated and counted in the log.
    """
    fs = x.sample_rate
    P, Q, t_i, A = spec.p, spec.q, spec.t_i, spec.amplitude
    alpha_max = isrj_slot(P, Q, Q)
    n_full = int(np.ceil((alpha_max + 1) * t_i * fs - 1e-9))
    n_out = n_full if max_len is None else min(n_full, max_len)
    t = np.arange(n_out) / fs
    out = np.zeros(n_out, dtype=np.complex128)
    truncated = 0
    for p in range(1, P + 1):
        for q in range(1, Q + 1):
            a = isrj_slot(p, q, Q)
            if max_len is not None and (a + 1) * t_i * fs > n_out:
                truncated += 1
            arg = (t - a * t_i) / t_i
            gate = (arg >= 0.0) & (arg < 1.0)
            d = int(round(fs * q * t_i))
            out += gate * _shift(x.samples, d, n_out)
    if truncated:
        logger.warning("gen_isrj: %d slice(s) truncated by the window", truncated)
    return ComplexSeries(A * out, fs)


def gen_smsp(spec: SMSPSpec, wf: RadarWaveformSpec) -> ComplexSeries:
    """Piecewise-chirp retransmission on slices [(m-1)T/Ms, m*T/Ms), global t.

    sample value A * exp(j*2*pi*(f_m t + k_m t^2 / 2)) inside slice m.
    """
    n = wf.n_samples
    if spec.m_s > n:
        raise ValueError(f"m_s={spec.m_s} exceeds sample count {n}")
    fs = wf.sample_rate
    T = wf.pulse_width
    t = np.arange(n) / fs
    out = np.zeros(n, dtype=np.complex128)
    for m in range(1, spec.m_s + 1):
        gate = (t >= (m - 1) * T / spec.m_s) & (t < m * T / spec.m_s)
        f_m, k_m = spec.freqs[m - 1], spec.slopes[m - 1]
        out[gate] = np.exp(2j * np.pi * (f_m * t[gate] + 0.5 * k_m * t[gate] ** 2))
    return ComplexSeries(spec.amplitude * out, fs)


def ncj_kernel(spec: NCJSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.kernel_seed)
    re = rng.standard_normal(spec.kernel_len)
    im = rng.standard_normal(spec.kernel_len)
    return (re + 1j * im) / np.sqrt(2.0)


def gen_ncj(x: ComplexSeries, spec: NCJSpec, rng=None) -> ComplexSeries:
    """Noise-convolution jamming: A * (x conv w), w complex white Gaussian.

    The kernel is reproducible from kernel_seed; the rng argument is accepted
    for interface symmetry but unused. Full convolution; trimming to the
    simulation window happens at placement.
    """
    w = ncj_kernel(spec)
    out = np.convolve(x.samples, w)
    return ComplexSeries(spec.amplitude * out, x.sample_rate)


def range_to_bin(range_m: float, fs: float) -> int:
    return int(round(2.0 * range_m / C_LIGHT * fs))


def velocity_to_doppler(v_mps: float) -> float:
    return 2.0 * v_mps * CARRIER_HZ / C_LIGHT


def synth_target_echo(tmpl: TargetTemplateSpec, aspect: float,
                      wf: RadarWaveformSpec, rng: np.random.Generator,
                      window_len: int = 1024) -> ComplexSeries:
    """Superpose delayed, weighted pulse copies on the window grid.

    Scatterer positions are projected as centroid + (pos - centroid) *
    cos(aspect + jitter); one jitter draw per call. No Doppler (static
    targets). Raises if a projected scatterer falls outside the window.
    """
    pulse = lfm_pulse(wf)
    fs = wf.sample_rate
    jitter = rng.normal(0.0, tmpl.aspect_jitter)
    pos = np.asarray(tmpl.scatterer_positions, dtype=np.float64)
    amps = np.asarray(tmpl.scatterer_amplitudes, dtype=np.float64)
    centroid = pos.mean()
    proj = centroid + (pos - centroid) * np.cos(aspect + jitter)
    out = np.zeros(window_len, dtype=np.complex128)
    for p, a in zip(proj, amps):
        d = range_to_bin(p, fs)
        if d < 0 or d >= window_len:
            raise ValueError(f"scatterer at {p:.1f} m maps to bin {d}, outside window")
        out += a * _shift(pulse.samples, d, window_len)
    return ComplexSeries(out, fs)


def awgn(n: int, power: float, rng: np.random.Generator,
         sample_rate: float = 1.0) -> ComplexSeries:
    """i.i.d. circular complex Gaussian with per-sample variance = power."""
    if power < 0:
        raise ValueError("power must be non-negative")
    s = np.sqrt(power / 2.0)
    samples = s * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return ComplexSeries(samples, sample_rate)


def place_component(sig: ComplexSeries, delay_bins: int, doppler_hz: float,
                    window_len: int) -> np.ndarray:
    """Shift into the window and apply the Doppler exponential on window time."""
    placed = _shift(sig.samples, delay_bins, window_len)
    if doppler_hz != 0.0:
        t = np.arange(window_len) / sig.sample_rate
        placed = placed * np.exp(2j * np.pi * doppler_hz * t)
    return placed


def compress_to_profile(window: ComplexSeries, pulse: ComplexSeries) -> np.ndarray:
    """Pulse-compress a window series and return the magnitude profile (f64)."""
    return np.abs(matched_filter(window, pulse).samples)


def energy(x: np.ndarray) -> float:
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return float(np.sum(x.real ** 2 + x.imag ** 2))
    return float(np.sum(x * x))
