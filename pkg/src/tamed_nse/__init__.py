"""Pseudo-spectral simulator and verification lab for the stochastic tamed 3D Navier-Stokes equations."""

from .config import Config, ConfigError, format_config, load_config, parse_config, parse_text
from .operators import RHS, DriftParams, Forcing, NoiseModel, make_forcing
from .sde_integrator import BlowUpError, SimConfig, simulate_ensemble, simulate_path
from .spectral_core import Grid, PhysicalField, SpectralField, read_snapshot, write_snapshot
from .taming import TamingFunction

__all__ = [
    "BlowUpError", "Config", "ConfigError", "DriftParams", "Forcing", "Grid", "NoiseModel", "PhysicalField",
    "RHS", "SimConfig", "SpectralField", "TamingFunction", "format_config", "load_config", "make_forcing",
    "parse_config", "parse_text", "read_snapshot", "simulate_ensemble", "simulate_path", "write_snapshot",
]
