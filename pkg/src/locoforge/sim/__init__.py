from .core import (
    ActuationInput,
    KinematicsResult,
    SimState,
    SimulationDiverged,
    arm_pd_torque,
    contact_forces,
    forward_dynamics,
    forward_kinematics,
    inverse_dynamics,
    mass_matrix,
    mechanical_energy,
    point_jacobian,
    step,
    step_batch,
    wheel_normal_force,
)
from .model import ARM_JOINTS, COORD_NAMES, LEG_JOINTS, N_DOF, WHEEL, ModelSpec

__all__ = [
    "ActuationInput", "KinematicsResult", "ModelSpec", "SimState", "SimulationDiverged",
    "arm_pd_torque", "contact_forces", "forward_dynamics", "forward_kinematics",
    "inverse_dynamics", "mass_matrix", "mechanical_energy", "point_jacobian", "step",
    "step_batch", "wheel_normal_force", "ARM_JOINTS", "COORD_NAMES", "LEG_JOINTS",
    "N_DOF", "WHEEL",
]
