"""Constructions separating no-regret from gradient equilibrium, with analytic targets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np

from .descent import LearnerState, StepSchedule, Trajectory, gd_step, trajectory_from_arrays
from .losses import LossInstance, subgradient

NAMES = ("nr-not-geq-abs", "geq-not-nr-abs", "nr-not-geq-squared", "zero-regret-bias", "spiral")


@dataclass
class Construction:
    name: str
    thetas: np.ndarray
    losses: List[LossInstance]
    analytic: Dict[str, float] = field(default_factory=dict)
    grads: Optional[np.ndarray] = None
    eta: float = 1.0

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        if self.thetas.ndim == 1:
            self.thetas = self.thetas[:, None]
        n = len(self.losses)
        if self.thetas.shape[0] not in (n, n + 1):
            raise ValueError("thetas and losses must have equal length")
        if self.grads is None:
            self.grads = np.array([subgradient(l, th) for l, th in zip(self.losses, self.thetas)]).reshape(n, -1)
        bad = [k for k, v in self.analytic.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"analytic values not finite: {bad}")

    @property
    def T(self) -> int:
        return len(self.losses)

    def trajectory(self) -> Trajectory:
        return trajectory_from_arrays(self.thetas, self.grads, self.eta)

    def avg_grad(self) -> np.ndarray:
        return self.grads.mean(axis=0)

    def measured(self) -> Dict[str, float]:
        """Simulated counterparts of the analytic quantities."""
        from .equilibrium import regret

        traj = self.trajectory()
        rep = regret(traj, self.losses)
        g = self.avg_grad()
        out = {"avg_regret": rep.avg_regret, "avg_grad_norm": float(np.linalg.norm(g))}
        if g.shape[0] == 1:
            out["avg_grad"] = float(g[0])
        return out


def nr_not_geq_abs(T: int) -> Construction:
    """Iterates ``1/t`` on ``|theta|``: regret vanishes while the average gradient stays 1."""
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(1, T + 1, dtype=float)
    thetas = 1.0 / t
    losses = [LossInstance("absolute", y=0.0) for _ in range(T)]
    harmonic = float(np.sum(1.0 / t))
    return Construction(
        "nr-not-geq-abs",
        thetas,
        losses,
        {"avg_grad": 1.0, "avg_regret": harmonic / T},
    )


def geq_not_nr_abs(T: int, c: float) -> Construction:
    """Iterates alternating ``+c, -c`` on ``|theta|``: gradients cancel, regret stays ``c``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not c > 0:
        raise ValueError("c must be positive")
    signs = np.where(np.arange(1, T + 1) % 2 == 1, 1.0, -1.0)
    losses = [LossInstance("absolute", y=0.0) for _ in range(T)]
    return Construction(
        "geq-not-nr-abs",
        c * signs,
        losses,
        {"avg_grad": float(signs.sum()) / T, "avg_regret": float(c)},
    )


def _exact(x) -> Fraction:
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def nr_not_geq_squared(a: float, b: float, n: int, m: int, reps: int) -> Construction:
    """Repeating blocks on squared losses with zero regret but a fixed average gradient.

    The responses repeat ``a`` (n times) then ``b`` (m times); the iterates
    repeat ``u = a`` then ``v = b + sqrt(alpha a^2 / beta + b^2)``.
    """
    if not (a < 0 < b):
        raise ValueError("need a < 0 < b")
    if not (int(n) == n and int(m) == m and n > m >= 1):
        raise ValueError("need integers n > m >= 1")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    n, m = int(n), int(m)
    if n * _exact(a) + m * _exact(b) != 0:
        raise ValueError(f"n*a + m*b must be exactly 0, got {n}*{a} + {m}*{b}")
    alpha = n / (n + m)
    beta = m / (n + m)
    v = b + math.sqrt(alpha * a * a / beta + b * b)
    y_block = [a] * n + [b] * m
    th_block = [a] * n + [v] * m
    ys = y_block * reps
    thetas = np.array(th_block * reps, dtype=float)
    losses = [LossInstance("squared", y=float(y)) for y in ys]
    return Construction(
        "nr-not-geq-squared",
        thetas,
        losses,
        {
            "avg_grad": math.sqrt(alpha * beta * a * a + beta * beta * b * b),
            "avg_regret": 0.0,
            "v": v,
            "oracle_sq_error": alpha * a * a + beta * b * b,
        },
    )


def zero_regret_bias(y) -> Construction:
    """Iterates ``y_t + s_T`` matching the best constant's squared error while biased by ``s_T``.

    ``avg_sq_error`` uses the unhalved error ``(y - theta)^2``; the halved
    loss objects give zero regret for the same reason.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise ValueError("need a nonempty sequence")
    s = float(np.sqrt(np.mean((y - y.mean()) ** 2)))
    thetas = y + s
    losses = [LossInstance("squared", y=float(v)) for v in y]
    return Construction(
        "zero-regret-bias",
        thetas,
        losses,
        {"avg_sq_error": s * s, "bias": s, "avg_regret": 0.0, "avg_grad": s},
    )


def spiral_zero_curvature(eta: float, L: float, T: int, theta1=(1.0, 0.0)) -> Construction:
    """Gradients of norm ``L`` perpendicular to the iterate; the iterates turn counter-clockwise.

    Each round's loss is a linear-GLM loss whose feature is the clockwise
    unit normal to ``theta_t`` and whose response is ``-L``, so its gradient
    at ``theta_t`` is ``L`` times that normal and the step ``-eta g`` points
    counter-clockwise.
    """
    th = np.asarray(theta1, dtype=float).reshape(-1)
    if th.shape != (2,):
        raise ValueError("the spiral lives in two dimensions")
    if not np.linalg.norm(th) > 0:
        raise ValueError("theta_1 must be nonzero")
    if not (eta > 0 and L > 0):
        raise ValueError("eta and L must be positive")
    if T < 0:
        raise ValueError("T must be >= 0")
    state = LearnerState(th, StepSchedule.constant(eta))
    thetas = np.empty((T + 1, 2))
    thetas[0] = th
    grads = np.empty((T, 2))
    losses = []
    for t in range(T):
        cur = state.theta
        normal = np.array([cur[1], -cur[0]]) / math.hypot(cur[0], cur[1])
        loss = LossInstance("glm-linear", y=-L, x=normal)
        g = subgradient(loss, cur)
        losses.append(loss)
        grads[t] = g
        gd_step(state, g)
        thetas[t + 1] = state.theta
    sq0 = float(th @ th)
    return Construction(
        "spiral",
        thetas,
        losses,
        {"final_sq_norm": sq0 + eta * eta * L * L * T, "step_grad_norm": float(L)},
        grads=grads,
        eta=eta,
    )


def build(name: str, **params) -> Construction:
    if name == "nr-not-geq-abs":
        return nr_not_geq_abs(int(params["T"]))
    if name == "geq-not-nr-abs":
        return geq_not_nr_abs(int(params["T"]), float(params["c"]))
    if name == "nr-not-geq-squared":
        return nr_not_geq_squared(params["a"], params["b"], params["n"], params["m"], int(params["reps"]))
    if name == "zero-regret-bias":
        return zero_regret_bias(params["y"])
    if name == "spiral":
        return spiral_zero_curvature(float(params["eta"]), float(params["L"]), int(params["T"]))
    raise ValueError(f"unknown construction {name!r}; choose from {', '.join(NAMES)}")
