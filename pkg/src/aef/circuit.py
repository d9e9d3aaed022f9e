"""Analytic frequency-domain model of the voltage-sensing, current-injecting
active EMI filter: branch impedances, closed-loop response, loop gain, phase
margin, and the four design equations used by the tuning procedure.

All functions are pure; grid-sized evaluations delegate to the kernel backend
(compiled when available). Sign convention: insertion-loss curves report
20*log10(|V_out/V_source|), so negative dB means attenuation.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

DB_FLOOR = -200.0


class NumericDomainError(ValueError):
    """A circuit evaluation produced a non-finite or out-of-domain value."""


@dataclass(frozen=True)
class ComponentSet:
    """Passive element values of the filter plus source/load terminations.

    ``c_inject`` is the tunable element; the environment clamps it to
    [10 pF, 500 nF]. ``z_damp``, ``z_source`` and ``z_load`` are modeled as
    pure resistances.
    """

    c_sense: float = 100e-9
    c_inject: float = 470e-9
    c_comp: float = 1e-9
    c_comp1: float = 100e-9
    l: float = 1e-6
    r_comp: float = 1e3
    r_comp1: float = 0.5
    r_feedback: float = 50e3
    z_damp: float = 1.8
    z_source: float = 5.0
    z_load: float = 50.0

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"component {name} must be positive and finite, got {value}")

    @property
    def kappa(self) -> float:
        """Fixed capacitance ratio c_sense/c_comp used by the design equations."""
        return self.c_sense / self.c_comp

    def with_c_inject(self, c_inject: float) -> "ComponentSet":
        return ComponentSet(**{**self.__dict__, "c_inject": c_inject})


@dataclass(frozen=True)
class OpAmpModel:
    """Single-pole op-amp: G_OL(jw) = dc_gain / (1 + j*f/pole_frequency).

    ``controlled_gain`` is the tunable scale on the controlled gain stage,
    G(jw) = controlled_gain * G_OL(jw).
    """

    dc_gain: float = 1e5
    pole_frequency: float = 10e3
    controlled_gain: float = 1.0

    def __post_init__(self) -> None:
        if self.dc_gain <= 0 or self.pole_frequency <= 0:
            raise ValueError("dc_gain and pole_frequency must be positive")
        if self.controlled_gain < 0:
            raise ValueError("controlled_gain must be non-negative")

    def open_loop_gain(self, f: float) -> complex:
        return self.dc_gain / (1.0 + 1j * f / self.pole_frequency)

    def controlled(self, f: float) -> complex:
        return self.controlled_gain * self.open_loop_gain(f)


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing positive evaluation frequencies in Hz."""

    points: tuple[float, ...]

    def __post_init__(self) -> None:
        pts = tuple(float(p) for p in self.points)
        if not pts:
            raise ValueError("grid must be non-empty")
        if pts[0] <= 0 or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid points must be positive and strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    @classmethod
    def log_spaced(cls, f_low: float, f_high: float, n: int) -> "FrequencyGrid":
        return cls(tuple(np.geomspace(f_low, f_high, n)))


@dataclass(frozen=True)
class ComplexResponse:
    """A complex transfer ratio sampled on a frequency grid."""

    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != (len(self.grid),):
            raise ValueError("values length must match grid length")
        if not np.all(np.isfinite(vals)):
            raise NumericDomainError("non-finite response values")
        object.__setattr__(self, "values", vals)


def feedback_impedance(components: ComponentSet, f: float) -> complex:
    """Total feedback impedance: R_feedback parallel to the two RC branches."""
    if f <= 0:
        raise ValueError("frequency must be positive")
    w = 2.0 * math.pi * f
    y = (
        1.0 / components.r_feedback
        + 1.0 / (components.r_comp + 1.0 / (1j * w * components.c_comp))
        + 1.0 / (components.r_comp1 + 1.0 / (1j * w * components.c_comp1))
    )
    z = 1.0 / y
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise NumericDomainError(f"feedback impedance overflow at f={f}")
    return z


def closed_loop_ratio(components: ComponentSet, opamp: OpAmpModel, f: float) -> complex:
    """Output-to-source voltage ratio 1 - G*Zfb/(Zs + Zfb); |ratio| < 1 attenuates."""
    zfb = feedback_impedance(components, f)
    denom = components.z_source + zfb
    # z_source is a positive resistance, so the denominator cannot vanish
    assert abs(denom) > 0
    return 1.0 - opamp.controlled(f) * zfb / denom


def loop_gain(components: ComponentSet, opamp: OpAmpModel, f: float) -> complex:
    """Loop gain G_OL * G * Zfb/(Zs + Zfb); sets the phase and gain margins."""
    zfb = feedback_impedance(components, f)
    return opamp.open_loop_gain(f) * opamp.controlled(f) * zfb / (components.z_source + zfb)


def injection_coupling(
    components: ComponentSet, f: float, c_inject: float | None = None, q_inject: float | None = None
) -> complex:
    """Band-pass coupling of the injection branch at frequency f.

    The branch behaves as a series resonator tuned by c_inject, resonant at
    f_r = 1/(2*pi*sqrt(kappa*l*c_inject)) (the same resonance condition the
    capacitor design equation solves). ``q_inject`` defaults to the quality
    factor implied by the damping resistor at the component set's nominal
    capacitance, sqrt(kappa*l/c_inject)/z_damp.
    """
    c = components.c_inject if c_inject is None else c_inject
    if c <= 0:
        raise ValueError("c_inject must be positive")
    q = default_injection_q(components) if q_inject is None else q_inject
    f_res = 1.0 / (2.0 * math.pi * math.sqrt(components.kappa * components.l * c))
    return 1.0 / (1.0 + 1j * q * (f / f_res - f_res / f))


def default_injection_q(components: ComponentSet) -> float:
    """Quality factor of the injection resonator at the nominal capacitance."""
    return math.sqrt(components.kappa * components.l / components.c_inject) / components.z_damp


def injected_response(
    components: ComponentSet,
    opamp: OpAmpModel,
    f: float,
    c_inject: float | None = None,
    q_inject: float | None = None,
) -> complex:
    """Line response with the injection branch in the loop: 1/(1 + T*coupling).

    This is the response the environment exposes; the injection coupling makes
    it depend on the tunable capacitance, peaking in attenuation where the
    branch resonates at the interference frequency.
    """
    t = loop_gain(components, opamp, f)
    k = injection_coupling(components, f, c_inject=c_inject, q_inject=q_inject)
    return 1.0 / (1.0 + t * k)


def injected_response_grid(
    components: ComponentSet,
    opamp: OpAmpModel,
    freqs: np.ndarray,
    c_inject: float | None = None,
    q_inject: float | None = None,
) -> np.ndarray:
    """Vectorized ``injected_response`` over an array of frequencies."""
    c = components.c_inject if c_inject is None else c_inject
    q = default_injection_q(components) if q_inject is None else q_inject
    return _kernels.injected_response_arr(
        np.asarray(freqs, dtype=np.float64),
        components.r_feedback,
        components.r_comp,
        components.c_comp,
        components.r_comp1,
        components.c_comp1,
        components.z_source,
        opamp.dc_gain,
        opamp.pole_frequency,
        opamp.controlled_gain,
        components.kappa,
        components.l,
        c,
        q,
    )


def closed_loop_ratio_grid(components: ComponentSet, opamp: OpAmpModel, freqs: np.ndarray) -> np.ndarray:
    return _kernels.closed_loop_ratio_arr(
        np.asarray(freqs, dtype=np.float64),
        components.r_feedback,
        components.r_comp,
        components.c_comp,
        components.r_comp1,
        components.c_comp1,
        components.z_source,
        opamp.dc_gain,
        opamp.pole_frequency,
        opamp.controlled_gain,
    )


def loop_gain_grid(components: ComponentSet, opamp: OpAmpModel, freqs: np.ndarray) -> np.ndarray:
    return _kernels.loop_gain_arr(
        np.asarray(freqs, dtype=np.float64),
        components.r_feedback,
        components.r_comp,
        components.c_comp,
        components.r_comp1,
        components.c_comp1,
        components.z_source,
        opamp.dc_gain,
        opamp.pole_frequency,
        opamp.controlled_gain,
    )


@dataclass(frozen=True)
class PhaseMarginResult:
    margin_deg: float
    crossover_hz: float
    multiple_crossovers: bool = False


def phase_margin(
    components: ComponentSet,
    opamp: OpAmpModel,
    grid: FrequencyGrid,
    rel_tol: float = 1e-6,
) -> PhaseMarginResult | None:
    """Phase margin at the unity-gain crossover of the loop gain.

    Scans the grid for sign changes of |T| - 1, refines each bracket by
    bisection in log frequency to ``rel_tol`` relative accuracy, and reports
    180 deg + phase(T) at the lowest crossover. Returns None when |T| never
    crosses unity on the grid; flags multi-crossover loops.
    """
    mags = np.abs(loop_gain_grid(components, opamp, grid.as_array()))
    above = mags > 1.0
    brackets = [
        (grid.points[i], grid.points[i + 1])
        for i in range(len(grid) - 1)
        if above[i] != above[i + 1]
    ]
    if not brackets:
        return None

    f_lo, f_hi = brackets[0]
    while (f_hi - f_lo) / f_lo > rel_tol:
        f_mid = math.sqrt(f_lo * f_hi)
        lo_above = abs(loop_gain(components, opamp, f_lo)) > 1.0
        mid_above = abs(loop_gain(components, opamp, f_mid)) > 1.0
        if lo_above != mid_above:
            f_hi = f_mid
        else:
            f_lo = f_mid
    f_cross = math.sqrt(f_lo * f_hi)
    phase = math.degrees(cmath.phase(loop_gain(components, opamp, f_cross)))
    return PhaseMarginResult(180.0 + phase, f_cross, multiple_crossovers=len(brackets) > 1)


def cutoff_frequency(f_switching: float, attenuation_db: float) -> float:
    """Decade-rule control bandwidth: f_switching / 10^(|attenuation|/40)."""
    if f_switching <= 0:
        raise ValueError("switching frequency must be positive")
    return f_switching / 10.0 ** (abs(attenuation_db) / 40.0)


def inject_capacitance_for_cutoff(l: float, kappa: float, f_cutoff: float) -> float:
    """Capacitance whose kappa-scaled series resonance with l lands at f_cutoff."""
    if min(l, kappa, f_cutoff) <= 0:
        raise ValueError("all inputs must be positive")
    return 1.0 / (kappa * (2.0 * math.pi * f_cutoff) ** 2 * l)


def damping_impedance(kappa: float, l: float, c_inject: float) -> float:
    """Damping resistance kappa*sqrt(l/(kappa*c_inject)) against low-frequency ringing."""
    if min(kappa, l, c_inject) <= 0:
        raise ValueError("all inputs must be positive")
    return kappa * math.sqrt(l / (kappa * c_inject))


def insertion_loss_curve(
    components: ComponentSet, opamp: OpAmpModel, grid: FrequencyGrid
) -> np.ndarray:
    """20*log10(|closed_loop_ratio|) per grid point; negative means attenuation.

    Zero-magnitude ratios clamp to a -200 dB floor so downstream RMSE stays
    finite.
    """
    mags = np.abs(closed_loop_ratio_grid(components, opamp, grid.as_array()))
    return db_from_magnitude(mags)


def db_from_magnitude(mags: np.ndarray, floor_db: float = DB_FLOOR) -> np.ndarray:
    """Magnitude ratio to dB with a finite floor for zeros."""
    mags = np.asarray(mags, dtype=np.float64)
    floor_lin = 10.0 ** (floor_db / 20.0)
    return 20.0 * np.log10(np.maximum(mags, floor_lin))
