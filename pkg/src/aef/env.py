"""MDP wrapper around the filter circuit: spectrum observation, discrete
capacitance actions, logarithmic attenuation reward, and episode lifecycle.

The interference time series is synthesized once per environment and its
base spectrum cached; each step only re-evaluates the closed-loop response
at the current capacitance, which keeps stepping cheap enough for training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .circuit import (
    ComponentSet,
    FrequencyGrid,
    OpAmpModel,
    db_from_magnitude,
    default_injection_q,
    injected_response_grid,
)
from .signal import (
    EmiDataset,
    Spectrum,
    linear_from_dbua,
    synthesize_timeseries,
    windowed_fft_magnitude,
)

Action = int

DB_FLOOR_LINEAR = 1e-10  # -200 dBuA


class EpisodeTerminalError(RuntimeError):
    """step() called on a finished episode."""


@dataclass(frozen=True)
class EnvConfig:
    """Environment parameters: plant, dataset, action set, episode rules."""

    components: ComponentSet
    opamp: OpAmpModel
    dataset: EmiDataset
    tau_emi: float = 15.0
    c_min: float = 10e-12
    c_max: float = 500e-9
    delta_set: tuple[float, ...] = (-10e-9, -5e-9, 0.0, 5e-9, 10e-9)
    max_steps: int = 6000
    penalty: float = -15.0
    grid: FrequencyGrid | None = None
    # spectrum synthesis
    sample_rate: float = 1.28e6
    fft_size: int = 4096
    harmonics: int = 3
    harmonic_decay: float = 1.0
    synthesis_seed: int = 0
    amplitude_basis: str = "peak"
    random_phase: bool = True
    # response model
    injection_q: float | None = None
    # episode rules and observation shaping
    success_hold: int | None = 10
    emi_mode: str = "max"
    obs_bins: int = 40

    def __post_init__(self) -> None:
        if not self.c_min < self.c_max:
            raise ValueError("c_min must be below c_max")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        deltas = tuple(float(d) for d in self.delta_set)
        if 0.0 not in deltas:
            raise ValueError("delta_set must include 0")
        if sorted(deltas) != sorted(-d for d in deltas):
            raise ValueError("delta_set must be symmetric about zero")
        if self.emi_mode not in ("max", "mean"):
            raise ValueError("emi_mode must be 'max' or 'mean'")
        if self.fft_size < 8 or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two >= 8")
        object.__setattr__(self, "delta_set", deltas)


@dataclass(frozen=True)
class EnvState:
    """Observed filtered spectrum, current capacitance, and response curve."""

    emi_out: np.ndarray      # dBuA per grid bin
    c_t: float               # farads
    f_response: np.ndarray   # dB per grid bin, negative = attenuation
    c_min: float
    c_max: float

    def __post_init__(self) -> None:
        if not (self.c_min <= self.c_t <= self.c_max):
            raise ValueError(f"c_t {self.c_t} outside [{self.c_min}, {self.c_max}]")
        if self.emi_out.shape != self.f_response.shape:
            raise ValueError("state arrays must have equal length")


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    terminal: bool
    info: dict


def reward(emi_before: float, emi_after: float, tau: float = 15.0,
           penalty: float = -15.0) -> float:
    """Log-ratio attenuation reward with a constant penalty above the target.

    Both EMI scalars arrive in dBuA; below the threshold the reward is the
    base-10 log difference of the linear amplitudes (one decade of reduction
    scores 1.0), otherwise the flat penalty applies.
    """
    if not (math.isfinite(emi_before) and math.isfinite(emi_after)):
        raise ValueError("EMI scalars must be finite")
    if emi_after > tau:
        return penalty
    lin_before = linear_from_dbua(emi_before)
    lin_after = linear_from_dbua(emi_after)
    if lin_before <= 0 or lin_after <= 0:
        raise ValueError("linear EMI magnitudes must be positive")
    return math.log10(lin_before) - math.log10(lin_after)


def cumulative_return(rewards, gamma: float) -> float:
    """Discounted sum of a reward sequence."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    total = 0.0
    factor = 1.0
    for r in rewards:
        total += factor * r
        factor *= gamma
    return total


def _pool_edges(n: int, bins: int) -> np.ndarray:
    return np.linspace(0, n, bins + 1).astype(int)


def observation_vector(state: EnvState, bins: int) -> np.ndarray:
    """Flatten a state to [max-pooled emi_out, normalized c, max-pooled response].

    Fixed length 2*bins + 1; pooling uses max so a single spectral spike
    lands in exactly one pooled slot with its full magnitude.
    """
    n = state.emi_out.size
    if bins > n:
        raise ValueError(f"bins {bins} exceeds grid length {n}")
    edges = _pool_edges(n, bins)
    emi = np.array([state.emi_out[a:b].max() for a, b in zip(edges[:-1], edges[1:])])
    resp = np.array([state.f_response[a:b].max() for a, b in zip(edges[:-1], edges[1:])])
    c_norm = (state.c_t - state.c_min) / (state.c_max - state.c_min)
    return np.concatenate([emi, [c_norm], resp])


class AefEnv:
    """Single-owner mutable episode driver over the analytic plant."""

    def __init__(self, config: EnvConfig):
        self.config = config
        duration = config.fft_size / config.sample_rate
        ts = synthesize_timeseries(
            config.dataset,
            config.sample_rate,
            duration,
            harmonics=config.harmonics,
            rng_seed=config.synthesis_seed,
            harmonic_decay=config.harmonic_decay,
            random_phase=config.random_phase,
            amplitude_basis=config.amplitude_basis,
        )
        if ts.samples.size != config.fft_size:
            raise ValueError("sample_rate * duration must equal fft_size")
        self.base_spectrum: Spectrum = windowed_fft_magnitude(ts)

        if config.grid is not None:
            freqs = config.grid.as_array()
            idx = np.rint(freqs / (config.sample_rate / config.fft_size)).astype(int)
            idx = np.clip(idx, 0, config.fft_size // 2)
            self._base_linear = self.base_spectrum.magnitudes[idx]
            self.grid = config.grid
        else:
            f = self.base_spectrum.bin_frequencies
            mask = (f >= config.dataset.band_low) & (f <= config.dataset.band_high) & (f > 0)
            if not mask.any():
                raise ValueError("no spectrum bins inside the dataset band")
            self._base_linear = self.base_spectrum.magnitudes[mask]
            self.grid = FrequencyGrid(tuple(f[mask]))

        self._freqs = self.grid.as_array()
        self._q = (
            config.injection_q
            if config.injection_q is not None
            else default_injection_q(config.components)
        )
        self._c: float = config.components.c_inject
        self._scalar: float = math.nan
        self._steps = 0
        self._streak = 0
        self._terminal = True
        self._trace: list[tuple] = []

    @property
    def n_actions(self) -> int:
        return len(self.config.delta_set)

    @property
    def injection_q(self) -> float:
        return self._q

    def response_db(self, c: float) -> np.ndarray:
        """Response curve (dB, negative = attenuation) at capacitance c."""
        resp = injected_response_grid(
            self.config.components, self.config.opamp, self._freqs,
            c_inject=c, q_inject=self._q,
        )
        return db_from_magnitude(np.abs(resp))

    def _observe(self, c: float) -> tuple[EnvState, float]:
        resp = injected_response_grid(
            self.config.components, self.config.opamp, self._freqs,
            c_inject=c, q_inject=self._q,
        )
        mag = np.abs(resp)
        filtered = self._base_linear * mag
        emi_out = 20.0 * np.log10(np.maximum(filtered, DB_FLOOR_LINEAR))
        f_response = db_from_magnitude(mag)
        state = EnvState(emi_out, c, f_response, self.config.c_min, self.config.c_max)
        if self.config.emi_mode == "max":
            scalar = float(emi_out.max())
        else:
            scalar = 20.0 * math.log10(max(float(filtered.mean()), DB_FLOOR_LINEAR))
        return state, scalar

    def static_emi(self, c: float) -> tuple[float, EnvState]:
        """Scalar EMI and full state at a capacitance, without episode state."""
        state, scalar = self._observe(c)
        return scalar, state

    def reset(self, episode_seed: int) -> EnvState:
        """Start an episode at a seeded random capacitance inside the range."""
        rng = np.random.default_rng(episode_seed)
        self._c = float(rng.uniform(self.config.c_min, self.config.c_max))
        state, self._scalar = self._observe(self._c)
        self._steps = 0
        self._streak = 0
        self._terminal = False
        self._trace = []
        self.state = state
        return state

    def step(self, action: Action) -> StepResult:
        """Apply a capacitance delta, recompute the spectrum, score the move."""
        if self._terminal:
            raise EpisodeTerminalError("episode is terminal; call reset() first")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")

        c_raw = self._c + self.config.delta_set[action]
        c_new = min(max(c_raw, self.config.c_min), self.config.c_max)
        clamped = c_new != c_raw

        emi_before = self._scalar
        state, emi_after = self._observe(c_new)
        r = reward(emi_before, emi_after, self.config.tau_emi, self.config.penalty)

        self._c = c_new
        self._scalar = emi_after
        self._steps += 1
        if emi_after <= self.config.tau_emi:
            self._streak += 1
        else:
            self._streak = 0
        terminal = self._steps >= self.config.max_steps or (
            self.config.success_hold is not None and self._streak >= self.config.success_hold
        )
        self._terminal = terminal
        self.state = state
        self._trace.append((self._steps, c_new, emi_before, emi_after, r, terminal))
        return StepResult(
            state,
            r,
            terminal,
            info={
                "clamped": clamped,
                "emi_scalar_before": emi_before,
                "emi_scalar_after": emi_after,
            },
        )

    def export_trace(self, path) -> None:
        """Write the current episode trace as CSV."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,c_farads,emi_before_dbua,emi_after_dbua,reward,terminal\n")
            for step, c, before, after, r, terminal in self._trace:
                fh.write(f"{step},{c!r},{before!r},{after!r},{r!r},{int(terminal)}\n")
