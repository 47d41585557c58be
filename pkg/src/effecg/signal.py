"""ECG preprocessing and fiducial-point extraction.

FIR bandpass (windowed sinc), z-score standardization, adaptive-threshold
R-peak detection, R-anchored P-wave search, clip/pad with validity masks,
and a ground-truth synthetic ECG generator used as the test oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EcgRecord:
    """One multi-lead ECG sample: C leads by N sampling points, in mV."""

    samples: np.ndarray          # [C, N] float64
    sample_rate: float
    age: int | None = None
    gender: str | None = None    # "F" or "M"
    labels: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be [C,N], got shape {self.samples.shape}")
        if self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise ValueError("record needs at least one lead and one sample")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.age is not None and self.age < 0:
            raise ValueError(f"age must be non-negative, got {self.age}")
        if self.gender is not None and self.gender not in ("F", "M"):
            raise ValueError(f"gender must be 'F' or 'M', got {self.gender!r}")

    @property
    def leads(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass
class FirFilter:
    """Linear-phase FIR bandpass: odd-length symmetric coefficients."""

    coefficients: np.ndarray
    low_hz: float
    high_hz: float
    sample_rate: float

    @property
    def taps(self) -> int:
        return len(self.coefficients)

    @property
    def delay(self) -> int:
        return (self.taps - 1) // 2


@dataclass
class FiducialFeature:
    """Padded fiducial index sequence with a validity mask.

    Masked-off positions carry ``pad_value``; the mask is authoritative,
    the sentinel is cosmetic.
    """

    values: np.ndarray   # [T] int64
    mask: np.ndarray     # [T] float64 in {0,1}
    pad_value: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask must have equal length")

    @property
    def valid_values(self) -> np.ndarray:
        return self.values[self.mask > 0.5]


def design_bandpass(low_hz: float = 3.0, high_hz: float = 45.0,
                    sample_rate: float = 500.0, taps: int = 201) -> FirFilter:
    """Windowed-sinc bandpass with a Hamming window.

    Coefficients are the difference of two lowpass kernels, so the DC gain
    is near zero and the response is symmetric (linear phase).
    """
    if taps % 2 == 0 or taps < 3:
        raise ValueError(f"taps must be odd and >= 3, got {taps}")
    if not (0.0 < low_hz < high_hz < sample_rate / 2.0):
        raise ValueError(
            f"band edges must satisfy 0 < low < high < fs/2, got "
            f"low={low_hz}, high={high_hz}, fs={sample_rate}"
        )
    m = np.arange(taps) - (taps - 1) / 2.0
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(taps) / (taps - 1))

    def lowpass(cutoff_hz: float) -> np.ndarray:
        f = cutoff_hz / sample_rate
        lp = 2.0 * f * np.sinc(2.0 * f * m) * window
        return lp / lp.sum()  # unity DC gain despite truncation

    # difference of unity-gain lowpasses: the DC terms cancel exactly
    return FirFilter(lowpass(high_hz) - lowpass(low_hz), low_hz, high_hz, sample_rate)


def frequency_response(fir: FirFilter, freqs_hz) -> np.ndarray:
    """Complex response H(f) = sum_n h[n] exp(-i 2 pi f n / fs)."""
    freqs = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    n = np.arange(fir.taps)
    phase = -2j * np.pi * np.outer(freqs, n) / fir.sample_rate
    return (np.exp(phase) @ fir.coefficients)


def apply_filter(signal: np.ndarray, fir: FirFilter) -> np.ndarray:
    """Zero-phase filtering: forward pass shifted by the group delay.

    The signal is zero-extended at the edges; output length equals input
    length.
    """
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    full = np.convolve(x, fir.coefficients[::-1])
    return full[fir.delay : fir.delay + len(x)]


def standardize(signal: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance rescaling (population sigma).

    Constant inputs map to zeros: sigma is floored at 1e-12 instead of
    raising.
    """
    x = np.asarray(signal, dtype=np.float64)
    mu = x.mean()
    sigma = x.std()
    if sigma < 1e-12:
        return np.zeros_like(x)
    return (x - mu) / sigma


@dataclass
class DetectorConfig:
    """Constants of the adaptive QRS detection pipeline.

    The integration window, refractory period, threshold adaptation rate
    and search-back factor follow the standard description of the
    Hamilton/Pan-Tompkins family; all are exposed here.
    """

    integration_window_s: float = 0.08
    refractory_s: float = 0.2
    adaptation: float = 0.125
    threshold_fraction: float = 0.25
    searchback_factor: float = 0.5
    searchback_rr_factor: float = 1.66
    refine_window_s: float = 0.04
    min_signal_s: float = 0.5


def _local_maxima(x: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1
    return idx


def detect_r_peaks(filtered: np.ndarray, sample_rate: float,
                   config: DetectorConfig | None = None) -> np.ndarray:
    """Locate R-peaks in a bandpassed single-lead signal.

    Pipeline: differentiate, rectify, moving-window integrate, then pick
    peaks with an adaptive dual threshold, a refractory period and a
    half-threshold search-back. Each detection is refined to the local
    maximum of |filtered| within the refine window.
    """
    cfg = config or DetectorConfig()
    x = np.asarray(filtered, dtype=np.float64).reshape(-1)
    n = len(x)
    if n < cfg.min_signal_s * sample_rate:
        warnings.warn("signal shorter than the detectable minimum; no peaks reported")
        return np.array([], dtype=np.int64)

    deriv = np.empty_like(x)
    deriv[:-1] = np.diff(x)
    deriv[-1] = deriv[-2] if n > 1 else 0.0
    rect = np.abs(deriv)
    win = max(1, int(round(cfg.integration_window_s * sample_rate)))
    mwi = np.convolve(rect, np.ones(win) / win, mode="same")

    candidates = _local_maxima(mwi)
    if candidates.size == 0:
        return np.array([], dtype=np.int64)

    refractory = int(round(cfg.refractory_s * sample_rate))
    head = mwi[: min(n, int(2 * sample_rate))]
    spk = 0.5 * head.max()
    npk = head.mean()
    if spk <= npk:
        spk = npk + 1e-12
    threshold = npk + cfg.threshold_fraction * (spk - npk)

    beats: list[int] = []
    rr_history: list[int] = []
    last = -refractory

    for idx in candidates:
        peak = mwi[idx]
        if idx - last < refractory:
            continue
        if peak > threshold:
            accept = idx
        else:
            npk = cfg.adaptation * peak + (1.0 - cfg.adaptation) * npk
            threshold = npk + cfg.threshold_fraction * (spk - npk)
            # search-back: a long gap with a half-threshold peak is a beat
            accept = None
            if rr_history and beats:
                avg_rr = float(np.mean(rr_history[-8:]))
                if idx - last > cfg.searchback_rr_factor * avg_rr and \
                        peak > cfg.searchback_factor * threshold:
                    accept = idx
            if accept is None:
                continue
        if beats:
            rr_history.append(accept - last)
        beats.append(accept)
        last = accept
        spk = cfg.adaptation * peak + (1.0 - cfg.adaptation) * spk
        threshold = npk + cfg.threshold_fraction * (spk - npk)

    if not beats:
        return np.array([], dtype=np.int64)

    # refine each detection to the strongest |filtered| sample nearby
    half = int(round(cfg.refine_window_s * sample_rate))
    refined: list[int] = []
    for b in beats:
        lo = max(0, b - half)
        hi = min(n, b + half + 1)
        refined.append(lo + int(np.argmax(np.abs(x[lo:hi]))))

    # deduplicate refinements that collapsed inside the refractory period
    final: list[int] = []
    for r in refined:
        if final and r - final[-1] < refractory:
            if np.abs(x[r]) > np.abs(x[final[-1]]):
                final[-1] = r
            continue
        final.append(r)
    return np.array(final, dtype=np.int64)


def detect_p_waves(filtered: np.ndarray, r_peaks: np.ndarray, sample_rate: float,
                   window_s: tuple[float, float] = (0.2, 0.08),
                   min_amplitude_ratio: float = 0.05) -> list[int | None]:
    """Search for one P-wave per R-peak, anchored before it.

    For each R at index r the window [r - window_s[0], r - window_s[1]]
    is scanned; the argmax is reported when its amplitude exceeds
    ``min_amplitude_ratio`` times the R amplitude, else None. Beats whose
    window precedes the signal start are skipped (None).
    """
    x = np.asarray(filtered, dtype=np.float64).reshape(-1)
    early = int(round(window_s[0] * sample_rate))
    late = int(round(window_s[1] * sample_rate))
    out: list[int | None] = []
    for r in np.asarray(r_peaks, dtype=np.int64):
        lo, hi = r - early, r - late
        if lo < 0 or hi <= lo:
            out.append(None)
            continue
        seg = x[lo:hi]
        cand = lo + int(np.argmax(seg))
        if x[cand] > min_amplitude_ratio * abs(x[r]):
            out.append(cand)
        else:
            out.append(None)
    return out


def clip_pad(indices, target_len: int, pad_value: int = -1) -> FiducialFeature:
    """Clip/pad an index sequence to ``target_len`` with a validity mask.

    Longer sequences are truncated from the tail; shorter ones are
    right-padded with ``pad_value`` and mask 0.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    seq = [int(v) for v in indices]
    kept = seq[:target_len]
    n_valid = len(kept)
    values = np.full(target_len, pad_value, dtype=np.int64)
    values[:n_valid] = kept
    mask = np.zeros(target_len, dtype=np.float64)
    mask[:n_valid] = 1.0
    return FiducialFeature(values=values, mask=mask, pad_value=pad_value)


def synth_ecg(beats: int, bpm: float = 75.0, fs: float = 500.0,
              noise_std: float = 0.0, p_amplitude: float = 0.15,
              seed: int = 0, leads: int = 1, amplitude: float = 1.0
              ) -> tuple[EcgRecord, dict[str, np.ndarray]]:
    """Generate a synthetic ECG with exact fiducial ground truth.

    Each beat is a Gaussian P bump, a sharp triangular QRS and a broad
    T bump; white noise is added on top. Deterministic for a seed. The
    returned truth dict holds the R and P sample indices.
    """
    if not (30.0 <= bpm <= 220.0):
        raise ValueError(f"bpm must lie in [30, 220], got {bpm}")
    if beats < 1:
        raise ValueError(f"beats must be >= 1, got {beats}")
    rng = np.random.default_rng(seed)

    period = fs * 60.0 / bpm
    lead_in = int(round(0.4 * fs))
    r_idx = lead_in + np.round(np.arange(beats) * period).astype(np.int64)
    p_offset = int(round(0.15 * fs))
    p_idx = r_idx - p_offset
    n = int(r_idx[-1] + round(0.6 * fs))

    t = np.arange(n, dtype=np.float64)
    base = np.zeros(n)
    qrs_half = max(1, int(round(0.025 * fs)))
    sigma_p = 0.02 * fs
    sigma_t = 0.035 * fs
    t_offset = int(round(0.22 * fs))
    for r in r_idx:
        lo, hi = max(0, r - qrs_half), min(n, r + qrs_half + 1)
        base[lo:hi] += 1.0 - np.abs(t[lo:hi] - r) / qrs_half
        if p_amplitude != 0.0:
            base += p_amplitude * np.exp(-0.5 * ((t - (r - p_offset)) / sigma_p) ** 2)
        base += 0.3 * np.exp(-0.5 * ((t - (r + t_offset)) / sigma_t) ** 2)
    base *= amplitude

    gains = 1.0 / (1.0 + 0.3 * np.arange(leads))
    samples = gains[:, None] * base[None, :]
    if noise_std > 0.0:
        samples = samples + rng.normal(0.0, noise_std, size=samples.shape)

    record = EcgRecord(samples=samples, sample_rate=fs)
    return record, {"r": r_idx, "p": p_idx}


def synth_ecg_fixed(duration_s: float, bpm: float = 75.0, fs: float = 500.0,
                    noise_std: float = 0.0, p_amplitude: float = 0.15,
                    seed: int = 0, leads: int = 1, amplitude: float = 1.0
                    ) -> tuple[EcgRecord, dict[str, np.ndarray]]:
    """Fixed-duration variant of synth_ecg: exactly duration_s * fs samples.

    Only whole beats are generated (the record is zero-padded to length),
    so the returned truth covers every beat present in the signal.
    """
    n = int(round(duration_s * fs))
    period = fs * 60.0 / bpm
    margins = round(0.4 * fs) + round(0.6 * fs)
    beats = max(1, int(np.floor((n - margins) / period)) + 1)
    record, truth = synth_ecg(beats, bpm, fs, noise_std, p_amplitude, seed,
                              leads, amplitude)
    samples = record.samples[:, :n]
    if samples.shape[1] < n:
        pad = n - samples.shape[1]
        samples = np.pad(samples, ((0, 0), (0, pad)))
        if noise_std > 0.0:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF1]))
            samples[:, -pad:] += rng.normal(0.0, noise_std, size=(samples.shape[0], pad))
    cropped = EcgRecord(samples, fs, record.age, record.gender, set(record.labels))
    keep = truth["r"] < n
    return cropped, {"r": truth["r"][keep], "p": truth["p"][keep]}


def extract_fiducials(record: EcgRecord, fir: FirFilter | None = None,
                      reference_lead: int = 0,
                      detector: DetectorConfig | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Bandpass + standardize the reference lead, then detect R and P.

    Returns the R-peak indices and the subset of P-wave indices that were
    actually found (absent beats dropped).
    """
    if fir is None:
        fir = design_bandpass(sample_rate=record.sample_rate)
    lead = record.samples[reference_lead]
    filtered = standardize(apply_filter(lead, fir))
    r_peaks = detect_r_peaks(filtered, record.sample_rate, detector)
    p_opt = detect_p_waves(filtered, r_peaks, record.sample_rate)
    p_peaks = np.array([p for p in p_opt if p is not None], dtype=np.int64)
    return r_peaks, p_peaks
