"""Biphoton wavefunctions of chi(2) waveguide arrays from classical sum-frequency generation."""

from biphoton.errors import (
    ConfigError,
    DegenerateConfigurationError,
    FitError,
    NumericalAccuracyError,
)
from biphoton.device import (
    BandParams,
    DeviceSpec,
    PolingPattern,
    coupling_matrix,
    dump_device_config,
    load_device,
    reference_device_path,
    parse_device_config,
    poling_sign,
)
from biphoton.propagation import TransferMatrix, mode_amplitudes, propagate
from biphoton.engines import (
    BiphotonWavefunction,
    SfgResult,
    fit_proportionality,
    sfg_amplitude_green,
    sfg_simulate_ode,
    spdc_wavefunction,
)
from biphoton.rates import (
    CoincidenceRecord,
    EfficiencyMap,
    integrated_pair_rate,
    pair_rate_spectral_density,
    relative_amplitudes_from_counts,
    relative_amplitudes_from_sfg,
    shg_subtract,
    spdc_rate_from_counts,
)
from biphoton.reconstruction import (
    InterferogramTrace,
    PhaseSet,
    SchmidtResult,
    extract_relative_phase,
    fidelity,
    fidelity_error_mc,
    fit_single_tone,
    fit_two_tone,
    schmidt,
    synth_coincidences,
    synthesize_traces,
)

__version__ = "0.1.0"

__all__ = [
    "BandParams",
    "BiphotonWavefunction",
    "CoincidenceRecord",
    "ConfigError",
    "DegenerateConfigurationError",
    "DeviceSpec",
    "EfficiencyMap",
    "FitError",
    "InterferogramTrace",
    "NumericalAccuracyError",
    "PhaseSet",
    "PolingPattern",
    "SchmidtResult",
    "SfgResult",
    "TransferMatrix",
    "coupling_matrix",
    "dump_device_config",
    "extract_relative_phase",
    "fidelity",
    "fidelity_error_mc",
    "fit_proportionality",
    "fit_single_tone",
    "fit_two_tone",
    "integrated_pair_rate",
    "load_device",
    "mode_amplitudes",
    "pair_rate_spectral_density",
    "reference_device_path",
    "parse_device_config",
    "poling_sign",
    "propagate",
    "relative_amplitudes_from_counts",
    "relative_amplitudes_from_sfg",
    "schmidt",
    "sfg_amplitude_green",
    "sfg_simulate_ode",
    "shg_subtract",
    "spdc_rate_from_counts",
    "spdc_wavefunction",
    "synth_coincidences",
    "synthesize_traces",
]
