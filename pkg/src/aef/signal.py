"""EMI dataset ingestion, synthetic dataset generation, time-series synthesis
from spectral lines, and Hann-windowed FFT magnitude extraction.

CSV schema (header required, UTF-8):
``freq_hz,peak_dbua,avg_dbua,min_dbua,bandwidth_hz,time_interval_s`` where
``min_dbua`` and ``time_interval_s`` may be empty. Canonical form sorts rows
by frequency and formats numbers with 6 significant digits.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels

CSV_HEADER = "freq_hz,peak_dbua,avg_dbua,min_dbua,bandwidth_hz,time_interval_s"

EMI_BAND_LOW = 100e3
EMI_BAND_HIGH = 30e6


class DatasetFormatError(ValueError):
    """Malformed or schema-violating dataset file."""


def dbua_from_linear(x: float) -> float:
    """Linear microamps to dB-microamps."""
    if x <= 0:
        raise ValueError(f"amplitude must be positive for dB conversion, got {x}")
    return 20.0 * math.log10(x)


def linear_from_dbua(x: float) -> float:
    """dB-microamps to linear microamps."""
    return 10.0 ** (x / 20.0)


@dataclass(frozen=True)
class EmiLine:
    """One measured interference line."""

    frequency: float
    peak: float
    average: float
    minimum: float | None = None
    bandwidth: float = 0.0
    time_interval: float | None = None

    def __post_init__(self) -> None:
        if self.frequency <= 0:
            raise ValueError("line frequency must be positive")
        if self.peak < self.average:
            raise ValueError(f"peak ({self.peak}) must be >= average ({self.average})")
        if self.minimum is not None and self.average < self.minimum:
            raise ValueError(f"average ({self.average}) must be >= minimum ({self.minimum})")
        if self.bandwidth < 0:
            raise ValueError("bandwidth must be non-negative")


@dataclass(frozen=True)
class EmiDataset:
    """A named collection of interference lines within a frequency band."""

    name: str
    band_low: float
    band_high: float
    lines: tuple[EmiLine, ...]

    def __post_init__(self) -> None:
        if not self.band_low < self.band_high:
            raise ValueError("band_low must be below band_high")
        lines = tuple(sorted(self.lines, key=lambda ln: ln.frequency))
        for ln in lines:
            if not (self.band_low <= ln.frequency <= self.band_high):
                raise ValueError(
                    f"line at {ln.frequency} Hz outside band [{self.band_low}, {self.band_high}]"
                )
        object.__setattr__(self, "lines", lines)

    def __len__(self) -> int:
        return len(self.lines)

    @property
    def max_frequency(self) -> float:
        return self.lines[-1].frequency if self.lines else self.band_low


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled real amplitude record in microamps."""

    sample_rate: float
    samples: np.ndarray

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class Spectrum:
    """Single-sided amplitude spectrum in linear microamps."""

    bin_frequencies: np.ndarray
    magnitudes: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.bin_frequencies, dtype=np.float64)
        m = np.asarray(self.magnitudes, dtype=np.float64)
        if f.shape != m.shape:
            raise ValueError("bin_frequencies and magnitudes must have equal length")
        if np.any(m < 0):
            raise ValueError("magnitudes must be non-negative")
        object.__setattr__(self, "bin_frequencies", f)
        object.__setattr__(self, "magnitudes", m)

    def magnitudes_dbua(self, floor: float = 1e-10) -> np.ndarray:
        """dB-microamp view; zero bins clamp to the floor (1e-10 uA = -200 dBuA)."""
        return 20.0 * np.log10(np.maximum(self.magnitudes, floor))


def _parse_optional(text: str, column: str, lineno: int) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: bad value {text!r} in column {column}") from None


def load_dataset(path: str | os.PathLike, name: str | None = None,
                 band: tuple[float, float] | None = None) -> EmiDataset:
    """Load and validate a dataset CSV.

    The band defaults to the hull of the line frequencies (clipped into the
    supported EMI band) unless given explicitly; rows outside an explicit
    band raise.
    """
    rows: list[EmiLine] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise DatasetFormatError(f"expected header {CSV_HEADER!r}, got {header!r}")
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) != 6:
                raise DatasetFormatError(f"line {lineno}: expected 6 columns, got {len(parts)}")
            try:
                freq = float(parts[0])
                peak = float(parts[1])
                avg = float(parts[2])
                bw = float(parts[4])
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from None
            minimum = _parse_optional(parts[3], "min_dbua", lineno)
            interval = _parse_optional(parts[5], "time_interval_s", lineno)
            try:
                rows.append(EmiLine(freq, peak, avg, minimum, bw, interval))
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from None

    if band is None:
        if rows:
            lo = min(ln.frequency for ln in rows)
            hi = max(ln.frequency for ln in rows)
        else:
            lo, hi = EMI_BAND_LOW, EMI_BAND_HIGH
        band = (min(lo, EMI_BAND_LOW), max(hi, EMI_BAND_HIGH))
    ds_name = name if name is not None else os.path.splitext(os.path.basename(str(path)))[0]
    return EmiDataset(ds_name, band[0], band[1], tuple(rows))


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6g}"


def save_dataset(dataset: EmiDataset, path: str | os.PathLike) -> None:
    """Write canonical-form CSV: sorted by frequency, 6 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for ln in dataset.lines:
            fh.write(
                ",".join(
                    (
                        _fmt(ln.frequency),
                        _fmt(ln.peak),
                        _fmt(ln.average),
                        _fmt(ln.minimum),
                        _fmt(ln.bandwidth),
                        _fmt(ln.time_interval),
                    )
                )
                + "\n"
            )


def synthesize_timeseries(
    dataset: EmiDataset,
    sample_rate: float,
    duration: float,
    harmonics: int = 3,
    rng_seed: int = 0,
    harmonic_decay: float = 1.0,
    random_phase: bool = True,
    amplitude_basis: str = "peak",
) -> TimeSeries:
    """Sum of sinusoids at each line frequency and its harmonics.

    Harmonic k of a line carries amplitude/k**harmonic_decay; phases are drawn
    per (line, harmonic) from a generator seeded with ``rng_seed``, so equal
    seeds give bit-identical series. ``amplitude_basis`` selects the peak or
    the average column as the linear amplitude source.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if harmonics < 1:
        raise ValueError("harmonics must be >= 1")
    if amplitude_basis not in ("peak", "average"):
        raise ValueError("amplitude_basis must be 'peak' or 'average'")
    if dataset.lines:
        f_max = dataset.max_frequency * harmonics
        if sample_rate <= 2.0 * f_max:
            raise ValueError(
                f"sample rate {sample_rate} Hz violates Nyquist for content up to {f_max} Hz"
            )

    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    rng = np.random.default_rng(rng_seed)
    for ln in dataset.lines:
        level = ln.peak if amplitude_basis == "peak" else ln.average
        amp = linear_from_dbua(level)
        for k in range(1, harmonics + 1):
            phase = rng.uniform(0.0, 2.0 * math.pi) if random_phase else 0.0
            out += (amp / k**harmonic_decay) * np.sin(2.0 * math.pi * k * ln.frequency * t + phase)
    return TimeSeries(sample_rate, out)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * math.pi * np.arange(n) / n)


def windowed_fft_magnitude(ts: TimeSeries) -> Spectrum:
    """Single-sided amplitude spectrum of the Hann-windowed record.

    The raw (2/N)|FFT| magnitude is scaled by the Hann coherent-gain
    correction (x2) so a bin-aligned sine reports its physical amplitude;
    the DC and Nyquist bins carry no single-sided doubling.
    """
    x = ts.samples
    n = x.size
    if n < 8 or n & (n - 1):
        raise ValueError(f"sample count must be a power of two >= 8, got {n}")
    spec = _kernels.fft_radix2((x * hann_window(n)).astype(np.complex128))
    half = n // 2
    mags = np.abs(spec[: half + 1]) * (2.0 / n) * 2.0  # Eq. scaling + Hann correction
    mags[0] *= 0.5
    mags[half] *= 0.5
    freqs = np.arange(half + 1) * (ts.sample_rate / n)
    return Spectrum(freqs, mags)


@dataclass(frozen=True)
class SyntheticProfile:
    """Recipe for a random synthetic dataset standing in for measured data."""

    band_low: float
    band_high: float
    line_count: int
    amp_low_dbua: float = 20.0
    amp_high_dbua: float = 50.0
    harmonic_decay: float = 1.0
    bandwidth_hz: float = 9e3

    def __post_init__(self) -> None:
        if self.line_count < 1:
            raise ValueError("line_count must be >= 1")
        if not (EMI_BAND_LOW <= self.band_low < self.band_high <= EMI_BAND_HIGH):
            raise ValueError(
                f"band must lie within [{EMI_BAND_LOW:g}, {EMI_BAND_HIGH:g}] Hz"
            )
        if self.amp_low_dbua > self.amp_high_dbua:
            raise ValueError("amplitude range must be non-decreasing")


def generate_synthetic_dataset(profile: SyntheticProfile, rng_seed: int,
                               name: str = "synthetic") -> EmiDataset:
    """Deterministic random dataset: log-uniform frequencies, uniform peaks,
    averages 3 to 10 dB under the peaks."""
    rng = np.random.default_rng(rng_seed)
    freqs = np.exp(rng.uniform(math.log(profile.band_low), math.log(profile.band_high),
                               profile.line_count))
    peaks = rng.uniform(profile.amp_low_dbua, profile.amp_high_dbua, profile.line_count)
    drops = rng.uniform(3.0, 10.0, profile.line_count)
    lines = tuple(
        EmiLine(float(f), float(p), float(p - d), bandwidth=profile.bandwidth_hz)
        for f, p, d in zip(freqs, peaks, drops)
    )
    return EmiDataset(name, profile.band_low, profile.band_high, lines)
