"""Vectorised kinematics over a batch of environments (numpy)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ARM_BODIES, CHASSIS_BODIES, REVOLUTE, PRISMATIC_X, ModelSpec


@dataclass
class BatchKinematics:
    origins: np.ndarray  # (n, 9, 2)
    angles: np.ndarray  # (n, 9)
    coms: np.ndarray  # (n, 9, 2)
    p_ee: np.ndarray  # (n, 2) base frame
    R_ee: np.ndarray  # (n,)
    arm_centroid: np.ndarray  # (n, 2) world
    base_centroid: np.ndarray  # (n, 2) world
    total_com: np.ndarray  # (n, 2) world


def batch_kinematics(model: ModelSpec, Q: np.ndarray) -> BatchKinematics:
    t = model.tables
    n = Q.shape[0]
    origins = np.zeros((n, 9, 2))
    angles = np.zeros((n, 9))
    for i in range(9):
        p = t.parent[i]
        r = np.broadcast_to(t.placement[i], (n, 2)).copy()
        if t.jtype[i] == PRISMATIC_X:
            r[:, 0] += Q[:, i]
        elif t.jtype[i] != REVOLUTE:
            r[:, 1] += Q[:, i]
        if p >= 0:
            ap = angles[:, p]
            o = origins[:, p]
        else:
            ap = np.zeros(n)
            o = np.zeros((n, 2))
        c, s = np.cos(ap), np.sin(ap)
        origins[:, i, 0] = o[:, 0] + c * r[:, 0] - s * r[:, 1]
        origins[:, i, 1] = o[:, 1] + s * r[:, 0] + c * r[:, 1]
        angles[:, i] = ap + (Q[:, i] if t.jtype[i] == REVOLUTE else 0.0)
    c, s = np.cos(angles), np.sin(angles)
    coms = np.empty((n, 9, 2))
    coms[..., 0] = origins[..., 0] + c * t.com[:, 0] - s * t.com[:, 1]
    coms[..., 1] = origins[..., 1] + s * t.com[:, 0] + c * t.com[:, 1]
    tip = t.link_tip[2]
    ee = origins[:, 8] + np.stack([c[:, 8] * tip[0] - s[:, 8] * tip[1],
                                   s[:, 8] * tip[0] + c[:, 8] * tip[1]], axis=1)
    rel = ee - origins[:, 2]
    cp, sp = c[:, 2], s[:, 2]
    p_ee = np.stack([cp * rel[:, 0] + sp * rel[:, 1], -sp * rel[:, 0] + cp * rel[:, 1]], axis=1)
    m = t.mass
    arm = list(ARM_BODIES)
    ch = list(CHASSIS_BODIES)
    arm_c = np.einsum("b,nbk->nk", m[arm], coms[:, arm]) / m[arm].sum()
    base_c = np.einsum("b,nbk->nk", m[ch], coms[:, ch]) / m[ch].sum()
    tot = np.einsum("b,nbk->nk", m, coms) / m.sum()
    return BatchKinematics(origins, angles, coms, p_ee, angles[:, 8] - angles[:, 2],
                           arm_c, base_c, tot)
