"""Simulation, design and control of an inerter-pendulum energy-harvesting suspension."""

from .errors import ConfigError, IpvaError, NumericalError
from .params import SuspensionParams, preset, table1
from .road import LRDE, PERFECT, Noisy, PreviewMode, RoadModel, RoadSignal, generate

__all__ = [
    "ConfigError", "IpvaError", "NumericalError",
    "SuspensionParams", "preset", "table1",
    "LRDE", "PERFECT", "Noisy", "PreviewMode", "RoadModel", "RoadSignal", "generate",
]

__version__ = "0.1.0"
