"""Simulation and analysis of a tendon-driven robot stiffened by layer jamming.

The robot is a planar serial chain whose joints carry pressure-modulated
LuGre friction. See the README for the model, the CLI and the test suite.
"""
from .errors import ConfigError, ConvergenceError, LJSimError, NumericalInstabilityError
from .interconnect import FullState, InputProfile, Trajectory, simulate, vector_field
from .lugre import LuGreParams
from .model import RobotParams, RobotState

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "LJSimError", "NumericalInstabilityError",
    "FullState", "InputProfile", "Trajectory", "simulate", "vector_field",
    "LuGreParams", "RobotParams", "RobotState",
]
