"""Sideband cooling of a silica whispering-gallery resonator.

Forward models for the two-level-system mechanics, split-mode optics,
dynamical backaction and heating, plus spectrum analysis and a coupled fit
of detuning series.  Angular frequencies are in rad/s everywhere except
where a name ends in ``_hz``.
"""
__version__ = "0.1.0"

from .errors import ConfigError, NumericalError, RegimeError, RegimeWarning, SidebandCoolError
from .units import HBAR, K_B, angular, to_hz
from .tls import TlsMaterial, TlsModel, TlsCurve, FixedMechanics, thermometer
from .cavity import CavityConfig, Drive, FieldPair, mean_fields, total_photons, absorbed_power
from .backaction import MechanicalMode, backaction_response, effective_damping, effective_frequency
from .thermal import Environment, sample_temperature, effective_temperature, mean_occupancy, noise_budget
from .spectra import Spectrum, CalibrationTone, fit_lorentzian, calibrate_spectrum
from .fitseries import DetuningPoint, FitParameters, SeriesModel, fit
from .config import load_config

__all__ = [
    "__version__", "ConfigError", "NumericalError", "RegimeError", "RegimeWarning", "SidebandCoolError",
    "HBAR", "K_B", "angular", "to_hz", "TlsMaterial", "TlsModel", "TlsCurve", "FixedMechanics", "thermometer",
    "CavityConfig", "Drive", "FieldPair", "mean_fields", "total_photons", "absorbed_power", "MechanicalMode",
    "backaction_response", "effective_damping", "effective_frequency", "Environment", "sample_temperature",
    "effective_temperature", "mean_occupancy", "noise_budget", "Spectrum", "CalibrationTone",
    "fit_lorentzian", "calibrate_spectrum", "DetuningPoint", "FitParameters", "SeriesModel", "fit",
    "load_config",
]
