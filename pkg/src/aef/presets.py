"""Ready-made benchmark scenarios.

The single-tone scenario is the desk-scale workhorse: one dominant
interference line whose optimal injection capacitance sits a handful of
action steps inside the tunable range, with the line amplitude chosen so
that near-optimal tuning lands the filtered level just under the EMI target.
The same builder generates frequency-shifted variants for generalization
tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .circuit import (
    ComponentSet,
    OpAmpModel,
    inject_capacitance_for_cutoff,
    injected_response,
    loop_gain,
)
from .config import EnvParams, RunConfig, save_run_config
from .env import EnvConfig
from .signal import EmiDataset, EmiLine, save_dataset

TAU_EMI_DBUA = 15.0


@dataclass(frozen=True)
class Scenario:
    run_config: RunConfig
    dataset: EmiDataset
    env_config: EnvConfig
    tone_hz: float
    c_optimal: float
    attenuation_optimal_db: float


def single_tone_scenario(
    f_tone: float = 200e3,
    loop_gain_target: float = 30.0,
    q_inject: float = 8.0,
    margin_db: float = 2.5,
    max_steps: int = 300,
    agent_kind: str = "eqrl",
    seeds: tuple[int, ...] = (0,),
    dataset_path: str = "single_tone.csv",
    output_dir: str = "runs/single_tone",
) -> Scenario:
    """Build the single-dominant-tone benchmark.

    The compensation capacitor is enlarged to 10 nF so the capacitance ratio
    drops to 10 and the optimal injection capacitance lands in the tens of
    nanofarads, wide enough for the 5 nF action grid to resolve. The
    controlled gain is solved so the loop gain magnitude at the tone equals
    ``loop_gain_target``, and the line amplitude is set ``margin_db`` under
    what optimal tuning can attenuate down to the EMI target.
    """
    components = ComponentSet(c_comp=10e-9)
    unit = OpAmpModel(controlled_gain=1.0)
    gain = loop_gain_target / abs(loop_gain(components, unit, f_tone))
    opamp = OpAmpModel(controlled_gain=gain)

    c_opt = inject_capacitance_for_cutoff(components.l, components.kappa, f_tone)
    response = injected_response(components, opamp, f_tone, c_inject=c_opt, q_inject=q_inject)
    attn_opt = -20.0 * math.log10(abs(response))
    peak = round(TAU_EMI_DBUA + attn_opt - margin_db, 2)

    dataset = EmiDataset(
        "single_tone",
        band_low=100e3,
        band_high=600e3,
        lines=(EmiLine(f_tone, peak, peak - 6.0, bandwidth=9e3),),
    )
    env_params = EnvParams(
        max_steps=max_steps,
        harmonics=1,
        injection_q=q_inject,
    )
    run_config = RunConfig(
        components=components,
        opamp=opamp,
        env=env_params,
        agent_kind=agent_kind,
        dataset_path=dataset_path,
        seeds=seeds,
        output_dir=output_dir,
    )
    env_config = run_config.env_config(dataset)
    return Scenario(run_config, dataset, env_config, f_tone, c_opt, attn_opt)


def shifted_tone_scenario(base: Scenario, f_tone: float, margin_db: float = 2.5) -> Scenario:
    """Same plant, tone moved to ``f_tone`` with its amplitude re-leveled.

    Used as the held-out generalization set: the optimal capacitance and the
    attainable attenuation both move with the tone, so only a policy that
    reads the spectrum can track them.
    """
    components = base.env_config.components
    opamp = base.env_config.opamp
    q = base.env_config.injection_q
    assert q is not None
    c_opt = inject_capacitance_for_cutoff(components.l, components.kappa, f_tone)
    response = injected_response(components, opamp, f_tone, c_inject=c_opt, q_inject=q)
    attn_opt = -20.0 * math.log10(abs(response))
    peak = round(TAU_EMI_DBUA + attn_opt - margin_db, 2)

    dataset = EmiDataset(
        "single_tone_shifted",
        band_low=base.dataset.band_low,
        band_high=base.dataset.band_high,
        lines=(EmiLine(f_tone, peak, peak - 6.0, bandwidth=9e3),),
    )
    env_config = replace(base.env_config, dataset=dataset)
    run_config = replace(base.run_config, dataset_path="single_tone_shifted.csv")
    return Scenario(run_config, dataset, env_config, f_tone, c_opt, attn_opt)


def write_scenario(scenario: Scenario, config_path, dataset_path) -> None:
    """Materialize a scenario as a config JSON plus a dataset CSV."""
    save_dataset(scenario.dataset, dataset_path)
    save_run_config(replace(scenario.run_config, dataset_path=str(dataset_path)), config_path)
