"""Multi-agent CBF-QP safety filters with proprioceptive feedback loops.

Modules: ``dynamics`` (bicycle plant), ``barrier`` (CBF rows), ``qp``
(active-set solver), ``controllers`` (no-MPF / full-MPF / split-MPF),
``impairment`` (actuator operators and passivity checks), ``fastloop``
(delay stability lab), ``scenario`` and ``metrics`` (lane-swap Monte Carlo).
"""
from .controllers import ControllerKind, SafetyFilter
from .dynamics import ControlInput, VehicleParams, VehicleState

__version__ = "0.1.0"

__all__ = ["ControllerKind", "SafetyFilter", "ControlInput", "VehicleParams", "VehicleState",
           "__version__"]
