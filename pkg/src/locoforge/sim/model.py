"""Robot description for the planar wheel-legged base with a 3-joint arm.

Coordinates ``q = [x, z, pitch, hip, knee, wheel, a1, a2, a3]``. Angles are
counter-clockwise in the x-z plane (x forward, z up). Leg links hang along
-z of their parent frame at zero angle, arm links point along +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Tuple

import numpy as np

N_DOF = 9
COORD_NAMES = ("x", "z", "pitch", "hip", "knee", "wheel", "a1", "a2", "a3")
LEG_JOINTS = (3, 4)
WHEEL = 5
ARM_JOINTS = (6, 7, 8)
ACTUATED = (3, 4, 5, 6, 7, 8)

# joint types
PRISMATIC_X = 1
PRISMATIC_Z = 2
REVOLUTE = 0

BASE_BODY = 2
ARM_BODIES = (6, 7, 8)
CHASSIS_BODIES = (2, 3, 4, 5)


@dataclass(frozen=True)
class ModelSpec:
    """Physical parameters. Defaults are hand-picked for stable desk-scale
    training, not measured from any real robot."""

    base_mass: float = 10.0
    base_inertia: float = 0.1
    base_half_length: float = 0.15
    base_radius: float = 0.06
    hip_offset: Tuple[float, float] = (0.0, -0.05)
    shoulder_offset: Tuple[float, float] = (0.0, 0.12)

    thigh_mass: float = 1.0
    thigh_length: float = 0.2
    shank_mass: float = 1.0
    shank_length: float = 0.2
    wheel_mass: float = 2.0
    wheel_radius: float = 0.1
    wheel_inertia: float = 0.02

    arm_masses: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    arm_lengths: Tuple[float, float, float] = (0.25, 0.25, 0.25)
    # about each link centre of mass (slender rods by default)
    arm_inertias: Tuple[float, float, float] = (0.0026041666666666665,) * 3

    q_lower: Tuple[float, ...] = (-1.0, -2.6, -1.6, -2.6, -1.8)
    q_upper: Tuple[float, ...] = (2.0, 0.2, 0.6, 2.6, 1.8)
    torque_limits: Tuple[float, ...] = (60.0, 60.0, 20.0, 15.0, 15.0, 15.0)

    contact_stiffness: float = 1.0e5
    contact_damping: float = 1500.0
    friction_coefficient: float = 1.0
    slip_damping: float = 2000.0
    arm_contact_stiffness: float = 2.0e3
    arm_contact_damping: float = 20.0
    arm_contact_radius: float = 0.02

    arm_kp: float = 100.0
    arm_kd: float = 2.0
    gravity: float = 9.81

    contacts: bool = True
    locked_joints: Tuple[int, ...] = ()

    def __post_init__(self):
        pos = [
            "base_mass", "base_inertia", "thigh_mass", "thigh_length", "shank_mass",
            "shank_length", "wheel_mass", "wheel_radius", "wheel_inertia",
            "contact_stiffness", "base_radius", "base_half_length",
        ]
        for name in pos:
            if not getattr(self, name) > 0:
                raise ValueError(f"model.{name} must be > 0")
        for name in ("arm_masses", "arm_lengths", "arm_inertias"):
            v = getattr(self, name)
            if len(v) != 3 or min(v) <= 0:
                raise ValueError(f"model.{name} must hold 3 positive values")
        if len(self.q_lower) != 5 or len(self.q_upper) != 5:
            raise ValueError("joint limits cover hip, knee, a1, a2, a3")
        if any(lo >= hi for lo, hi in zip(self.q_lower, self.q_upper)):
            raise ValueError("q_lower must be < q_upper for every joint")
        if len(self.torque_limits) != 6 or min(self.torque_limits) <= 0:
            raise ValueError("torque_limits holds 6 positive values")
        for name in ("contact_damping", "friction_coefficient", "slip_damping",
                     "arm_contact_damping", "arm_kp", "arm_kd", "gravity"):
            if getattr(self, name) < 0:
                raise ValueError(f"model.{name} must be >= 0")

    # ------------------------------------------------------------------
    @property
    def arm_lower(self) -> np.ndarray:
        return np.asarray(self.q_lower[2:], dtype=np.float64)

    @property
    def arm_upper(self) -> np.ndarray:
        return np.asarray(self.q_upper[2:], dtype=np.float64)

    @property
    def leg_lower(self) -> np.ndarray:
        return np.asarray(self.q_lower[:2], dtype=np.float64)

    @property
    def leg_upper(self) -> np.ndarray:
        return np.asarray(self.q_upper[:2], dtype=np.float64)

    @property
    def arm_reach(self) -> float:
        return float(sum(self.arm_lengths))

    @property
    def total_mass(self) -> float:
        return float(self.tables.mass.sum())

    def with_(self, **kw) -> "ModelSpec":
        return replace(self, **kw)

    @cached_property
    def tables(self) -> "BodyTables":
        return BodyTables.from_model(self)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


@dataclass(frozen=True)
class BodyTables:
    """Flat arrays describing the kinematic tree, laid out for the kernels."""

    parent: np.ndarray
    jtype: np.ndarray
    placement: np.ndarray  # (9, 2) joint origin in parent frame
    mass: np.ndarray
    com: np.ndarray  # (9, 2) centre of mass in body frame
    inertia: np.ndarray  # rotational inertia about the com
    link_tip: np.ndarray  # (3, 2) distal point of each arm link, body frame
    torque_limits: np.ndarray  # (9,) zero where unactuated
    contact: np.ndarray  # scalars indexed by the K_* constants in dynamics
    locked: np.ndarray  # (9,) bool

    @classmethod
    def from_model(cls, m: ModelSpec) -> "BodyTables":
        parent = np.array([-1, 0, 1, 2, 3, 4, 2, 6, 7], dtype=np.int64)
        jtype = np.array([PRISMATIC_X, PRISMATIC_Z] + [REVOLUTE] * 7, dtype=np.int64)
        L1, L2, L3 = m.arm_lengths
        placement = np.array([
            [0.0, 0.0], [0.0, 0.0], [0.0, 0.0],
            list(m.hip_offset),
            [0.0, -m.thigh_length],
            [0.0, -m.shank_length],
            list(m.shoulder_offset),
            [0.0, L1],
            [0.0, L2],
        ], dtype=np.float64)
        mass = np.array([0.0, 0.0, m.base_mass, m.thigh_mass, m.shank_mass,
                         m.wheel_mass, *m.arm_masses], dtype=np.float64)
        com = np.array([
            [0.0, 0.0], [0.0, 0.0], [0.0, 0.0],
            [0.0, -0.5 * m.thigh_length],
            [0.0, -0.5 * m.shank_length],
            [0.0, 0.0],
            [0.0, 0.5 * L1], [0.0, 0.5 * L2], [0.0, 0.5 * L3],
        ], dtype=np.float64)
        inertia = np.array([
            0.0, 0.0, m.base_inertia,
            m.thigh_mass * m.thigh_length ** 2 / 12.0,
            m.shank_mass * m.shank_length ** 2 / 12.0,
            m.wheel_inertia, *m.arm_inertias,
        ], dtype=np.float64)
        tip = np.array([[0.0, L1], [0.0, L2], [0.0, L3]], dtype=np.float64)
        tl = np.zeros(9)
        tl[3:] = m.torque_limits
        contact = np.array([
            m.contact_stiffness, m.contact_damping, m.friction_coefficient,
            m.slip_damping, m.arm_contact_stiffness, m.arm_contact_damping,
            m.arm_contact_radius, m.wheel_radius, m.base_half_length,
            m.base_radius, m.gravity, 1.0 if m.contacts else 0.0,
            m.arm_kp, m.arm_kd,
        ], dtype=np.float64)
        locked = np.zeros(9, dtype=np.bool_)
        for j in m.locked_joints:
            locked[int(j)] = True
        return cls(parent, jtype, placement, mass, com, inertia, tip, tl, contact, locked)

    def as_tuple(self):
        return (self.parent, self.jtype, self.placement, self.mass, self.com,
                self.inertia, self.link_tip, self.torque_limits, self.contact, self.locked)

