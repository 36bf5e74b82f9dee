from typing import Optional

import msgspec

from core.simulation.mc_harness import McConfig


class SimulateRequest(msgspec.Struct, omit_defaults=True, kw_only=True):
    """A Monte Carlo experiment plus where to put its artifacts."""

    experiment: McConfig
    output: str = "results"
    checkpoint: Optional[str] = None
