"""Dynamic ramping constraints and demand-response scheduling for a flat
reactor-separator process."""

from .process import (Bounds, ControlSchedule, InputVec, ProcessParams,
                      StateVec, Trajectory, check_bounds, ode_rhs, simulate)
from .transform import (OperatingStrategy, RampingPoint, backtransform,
                        fit_operating_strategy, psi_Fp, solve_T1,
                        steady_state_point)

__all__ = [
    "Bounds", "ControlSchedule", "InputVec", "ProcessParams", "StateVec",
    "Trajectory", "check_bounds", "ode_rhs", "simulate",
    "OperatingStrategy", "RampingPoint", "backtransform",
    "fit_operating_strategy", "psi_Fp", "solve_T1", "steady_state_point",
]
