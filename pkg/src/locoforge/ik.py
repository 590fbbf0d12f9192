"""Planar 3-link arm kinematics in the base frame and a damped least-squares IK."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numba import njit

from .sim.model import ModelSpec


def arm_fk(model: ModelSpec, q_arm) -> Tuple[np.ndarray, np.ndarray]:
    """Gripper position (..., 2) and angle (...) in the base frame."""
    q_arm = np.asarray(q_arm, dtype=np.float64)
    phi = np.cumsum(q_arm, axis=-1)
    L = np.asarray(model.arm_lengths)
    x = model.shoulder_offset[0] - np.sum(L * np.sin(phi), axis=-1)
    z = model.shoulder_offset[1] + np.sum(L * np.cos(phi), axis=-1)
    return np.stack([x, z], axis=-1), phi[..., 2]


def arm_jacobian(model: ModelSpec, q_arm) -> np.ndarray:
    """d p_ee / d q_arm, shape (2, 3)."""
    q_arm = np.asarray(q_arm, dtype=np.float64)
    phi = np.cumsum(q_arm)
    L = np.asarray(model.arm_lengths)
    dx = -L * np.cos(phi)
    dz = -L * np.sin(phi)
    # joint j moves every link from j outwards
    J = np.empty((2, 3))
    for j in range(3):
        J[0, j] = dx[j:].sum()
        J[1, j] = dz[j:].sum()
    return J


def reachable(model: ModelSpec, target, margin: float = 0.0) -> bool:
    d = np.hypot(target[0] - model.shoulder_offset[0], target[1] - model.shoulder_offset[1])
    return bool(d <= model.arm_reach - margin)


@dataclass
class IKResult:
    q: np.ndarray
    success: bool
    error: float
    iterations: int


@njit(cache=True)
def _dls(lengths, shoulder, lo, hi, target, q, tol, max_iters, damping, posture, use_posture, posture_gain):
    """Damped least-squares iterations on a 3-link chain (scalar code for speed)."""
    err = np.inf
    for it in range(max_iters + 1):
        p0 = shoulder[0]
        p1 = shoulder[1]
        phi = 0.0
        c = np.empty(3)
        s = np.empty(3)
        for i in range(3):
            phi += q[i]
            c[i] = np.cos(phi)
            s[i] = np.sin(phi)
            p0 -= lengths[i] * s[i]
            p1 += lengths[i] * c[i]
        e0 = target[0] - p0
        e1 = target[1] - p1
        err = np.sqrt(e0 * e0 + e1 * e1)
        if err < tol or it == max_iters:
            return q, err, it
        J = np.zeros((2, 3))
        for j in range(3):
            for i in range(j, 3):
                J[0, j] -= lengths[i] * c[i]
                J[1, j] -= lengths[i] * s[i]
        a = J[0, 0] ** 2 + J[0, 1] ** 2 + J[0, 2] ** 2
        b = J[0, 0] * J[1, 0] + J[0, 1] * J[1, 1] + J[0, 2] * J[1, 2]
        d = J[1, 0] ** 2 + J[1, 1] ** 2 + J[1, 2] ** 2
        lam = damping * damping
        det = (a + lam) * (d + lam) - b * b
        y0 = ((d + lam) * e0 - b * e1) / det
        y1 = (-b * e0 + (a + lam) * e1) / det
        dq = np.empty(3)
        for j in range(3):
            dq[j] = J[0, j] * y0 + J[1, j] * y1
        if use_posture:
            # null-space projector I - J^T (J J^T)^-1 J
            det0 = a * d - b * b + 1e-12
            r = np.empty(3)
            for j in range(3):
                r[j] = posture[j] - q[j]
            w0 = J[0, 0] * r[0] + J[0, 1] * r[1] + J[0, 2] * r[2]
            w1 = J[1, 0] * r[0] + J[1, 1] * r[1] + J[1, 2] * r[2]
            z0 = (d * w0 - b * w1) / det0
            z1 = (-b * w0 + a * w1) / det0
            for j in range(3):
                dq[j] += posture_gain * (r[j] - J[0, j] * z0 - J[1, j] * z1)
        n = max(abs(dq[0]), abs(dq[1]), abs(dq[2]))
        if n > 0.5:
            for j in range(3):
                dq[j] *= 0.5 / n
        for j in range(3):
            q[j] = min(max(q[j] + dq[j], lo[j]), hi[j])
    return q, err, max_iters


# fallback seeds tried in order when the first solve stalls against a limit
_SEEDS = ((-0.3, -1.3, -0.3), (0.0, 0.0, 0.0), (-1.0, -1.0, 0.5), (0.3, -2.0, -1.0),
          (-1.2, 1.0, 1.0), (-0.8, -2.2, 1.2))


def arm_ik(
    model: ModelSpec,
    target,
    q_init=None,
    tol: float = 1e-3,
    max_iters: int = 200,
    damping: float = 0.01,
    posture: Optional[np.ndarray] = None,
    posture_gain: float = 0.1,
) -> IKResult:
    """Position-only IK for the gripper, target given in the base frame.

    Damped least-squares steps with a null-space pull toward ``posture``;
    joints are clamped to their limits after every step. A solve that stalls
    is retried from a fixed list of seed poses. Returns the best iterate with
    ``success=False`` when the target is out of reach or every retry hits the
    iteration cap.
    """
    target = np.asarray(target, dtype=np.float64).reshape(2)
    lo, hi = model.arm_lower, model.arm_upper
    if q_init is None:
        q_init = np.clip(np.asarray(_SEEDS[0]), lo, hi)
    q = np.clip(np.asarray(q_init, dtype=np.float64).copy(), lo, hi)
    if not np.all(np.isfinite(target)):
        return IKResult(q, False, np.inf, 0)
    # anything within tol of the reach circle can still be met to within tol
    if not reachable(model, target, margin=-tol):
        p, _ = arm_fk(model, q)
        return IKResult(q, False, float(np.linalg.norm(target - p)), 0)
    use_post = posture is not None
    post = np.asarray(posture if use_post else np.zeros(3), dtype=np.float64)
    lengths = np.asarray(model.arm_lengths, dtype=np.float64)
    shoulder = np.asarray(model.shoulder_offset, dtype=np.float64)
    best = None
    total = 0
    for seed in (q,) + tuple(np.clip(np.asarray(s_, dtype=np.float64), lo, hi) for s_ in _SEEDS):
        qs, err, it = _dls(lengths, shoulder, lo, hi, target, seed.copy(), float(tol), int(max_iters),
                           float(damping), post, use_post, float(posture_gain))
        total += it
        if err < tol:
            return IKResult(qs, True, err, total)
        if best is None or err < best[1]:
            best = (qs, err)
    return IKResult(best[0], False, best[1], total)
