"""Run configurations accepted by the commands."""

from .estimate import EstimateConfig, GridRequest
from .loader import load_request
from .simulate import SimulateRequest

__all__ = ["EstimateConfig", "GridRequest", "SimulateRequest", "load_request"]
