"""Loss families, subgradients, restorative-field checks and horizon helpers.

Every loss acts on the *effective response* ``r = y - f`` (``f`` defaults to
zero), so a base prediction can be debiased by fitting an additive correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

LOSS_KINDS = ("squared", "quantile", "absolute", "logistic", "glm-linear", "glm-logistic")
UNIVARIATE_KINDS = ("squared", "quantile", "absolute", "logistic")
GLM_KINDS = ("glm-linear", "glm-logistic")
REG_KINDS = ("none", "l1", "l2-half", "l2-full", "simplex", "l2-ball")
SET_KINDS = ("simplex", "l2-ball")
CURVATURES = ("zero", "constant", "quadratic")

# set-membership slack for characteristic regularizers
_SET_TOL = 1e-9


class InvalidLoss(ValueError):
    """Raised when a loss or regularizer is malformed or used out of range."""


def sigmoid(u):
    """Logistic function, evaluated on the branch that cannot overflow."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u > 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def softplus(u):
    """``log(1 + e^u)`` without overflow."""
    return np.logaddexp(0.0, u)


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    lam: float = 0.0
    radius: Optional[float] = None

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise InvalidLoss(f"unknown regularizer kind {self.kind!r}")
        if not self.lam >= 0:
            raise InvalidLoss(f"lambda must be nonnegative, got {self.lam}")
        if self.kind == "l2-ball" and not (self.radius is not None and self.radius > 0):
            raise InvalidLoss("l2-ball regularizer needs a positive radius")

    @property
    def is_set(self) -> bool:
        return self.kind in SET_KINDS

    def value(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "none":
            return 0.0
        if self.kind == "l1":
            return self.lam * float(np.abs(theta).sum())
        if self.kind == "l2-half":
            return 0.5 * self.lam * float(theta @ theta)
        if self.kind == "l2-full":
            return self.lam * float(theta @ theta)
        return 0.0 if self.contains(theta) else math.inf

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "simplex":
            return bool(np.all(theta >= -_SET_TOL) and abs(theta.sum() - 1.0) <= _SET_TOL)
        if self.kind == "l2-ball":
            return bool(np.linalg.norm(theta) <= self.radius * (1 + _SET_TOL))
        return True


NO_REG = RegularizerSpec()


@dataclass(frozen=True)
class RestorativeSpec:
    h: float
    curvature: str = "zero"
    kappa: float = 0.0

    def __post_init__(self):
        if not self.h >= 0:
            raise InvalidLoss("horizon must be nonnegative")
        if self.curvature not in CURVATURES:
            raise InvalidLoss(f"unknown curvature {self.curvature!r}")
        if self.curvature == "constant" and not self.kappa >= 0:
            raise InvalidLoss("constant curvature needs kappa >= 0")


@dataclass(frozen=True, eq=False)
class LossInstance:
    """One round's loss.

    ``kind`` is one of :data:`LOSS_KINDS`. ``a``/``b`` are the range endpoints of
    the generalized logistic family; ``tau`` the quantile level.
    """

    kind: str
    y: float = 0.0
    x: Optional[np.ndarray] = None
    f: Optional[float] = None
    tau: float = 0.5
    a: float = 0.0
    b: float = 1.0
    reg: Optional[RegularizerSpec] = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidLoss(f"unknown loss kind {self.kind!r}")
        if self.kind == "quantile" and not 0.0 <= self.tau <= 1.0:
            raise InvalidLoss(f"tau must lie in [0, 1], got {self.tau}")
        if self.kind in ("logistic", "glm-logistic"):
            if not self.a < self.b:
                raise InvalidLoss(f"need a < b, got a={self.a}, b={self.b}")
            r = self.response
            if not self.a <= r <= self.b:
                raise InvalidLoss(f"response {r} outside [{self.a}, {self.b}]")
        if self.kind in GLM_KINDS:
            if self.x is None:
                raise InvalidLoss(f"{self.kind} needs a feature vector")
            x = np.asarray(self.x, dtype=float).reshape(-1)
            if not np.all(np.isfinite(x)):
                raise InvalidLoss("feature vector has non-finite entries")
            object.__setattr__(self, "x", x)
        if self.reg is not None and not isinstance(self.reg, RegularizerSpec):
            raise InvalidLoss("reg must be a RegularizerSpec")

    @property
    def response(self) -> float:
        return self.y - (self.f or 0.0)

    @property
    def dim(self) -> int:
        return 1 if self.x is None else self.x.shape[0]

    def without_reg(self) -> "LossInstance":
        if self.reg is None:
            return self
        return LossInstance(self.kind, self.y, self.x, self.f, self.tau, self.a, self.b, None)


def _as_theta(loss: LossInstance, theta) -> np.ndarray:
    if isinstance(theta, np.ndarray) and theta.ndim == 1 and theta.dtype == np.float64:
        th = theta
    else:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.ndim != 1 or th.shape[0] != loss.dim:
        raise InvalidLoss(f"theta has shape {th.shape}, loss expects dimension {loss.dim}")
    return th


def _base_value(loss: LossInstance, th: np.ndarray) -> float:
    r = loss.response
    k = loss.kind
    if k == "squared":
        return 0.5 * (r - th[0]) ** 2
    if k == "quantile":
        u = r - th[0]
        return loss.tau * u if u >= 0 else (loss.tau - 1.0) * u
    if k == "absolute":
        return abs(th[0] - r)
    if k == "logistic":
        u = th[0]
        return float(-r * u + (loss.b - loss.a) * softplus(u) + loss.a * u)
    u = float(loss.x @ th)
    if k == "glm-linear":
        return 0.5 * (r - u) ** 2
    return float(-r * u + (loss.b - loss.a) * softplus(u) + loss.a * u)


def _base_subgradient(loss: LossInstance, th: np.ndarray) -> np.ndarray:
    r = loss.response
    k = loss.kind
    if k == "squared":
        return np.array([th[0] - r])
    if k == "quantile":
        # tie at theta == r resolved to -tau
        return np.array([1.0 - loss.tau if th[0] > r else -loss.tau])
    if k == "absolute":
        return np.array([float(np.sign(th[0] - r))])
    if k == "logistic":
        return np.array([(loss.b - loss.a) * sigmoid(th[0]) + loss.a - r])
    u = float(loss.x @ th)
    if k == "glm-linear":
        return loss.x * (u - r)
    return loss.x * ((loss.b - loss.a) * sigmoid(u) + loss.a - r)


def regularizer_subgradient(reg: RegularizerSpec, theta) -> np.ndarray:
    """Deterministic subgradient of a penalty: ``l1`` uses sign with 0 at 0."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if reg.kind == "none":
        return np.zeros_like(th)
    if reg.kind == "l1":
        return reg.lam * np.sign(th)
    if reg.kind == "l2-half":
        return reg.lam * th
    if reg.kind == "l2-full":
        return 2.0 * reg.lam * th
    raise InvalidLoss(f"{reg.kind} is a set constraint; use a proximal step instead")


def eval(loss: LossInstance, theta) -> float:  # noqa: A001 - mirrors the operation name
    """Loss value at ``theta``, regularizer included (``inf`` off a constraint set)."""
    th = _as_theta(loss, theta)
    val = _base_value(loss, th)
    if loss.reg is not None:
        val += loss.reg.value(th)
    return float(val)


def subgradient(loss: LossInstance, theta) -> np.ndarray:
    """The chosen (generalized) subgradient at ``theta``.

    Set constraints contribute the zero vector, which lies in the normal cone
    at every feasible point.
    """
    th = _as_theta(loss, theta)
    g = _base_subgradient(loss, th)
    if loss.reg is not None and not loss.reg.is_set:
        g = g + regularizer_subgradient(loss.reg, th)
    return g


def restorative_check(loss: LossInstance, theta, spec: RestorativeSpec, eta: float = 0.0) -> bool:
    th = _as_theta(loss, theta)
    if np.linalg.norm(th) <= spec.h:
        return True
    g = subgradient(loss, th)
    inner = float(g @ th)
    if spec.curvature == "zero":
        phi = 0.0
    elif spec.curvature == "constant":
        phi = spec.kappa
    else:
        if not eta > 0:
            raise InvalidLoss("quadratic curvature needs eta > 0")
        phi = 0.5 * eta * float(g @ g)
    return inner >= phi


def horizon_quantile(y: float) -> float:
    return abs(y)


def horizon_logistic(y: float, a: float, b: float) -> float:
    """Smallest zero-curvature horizon for the generalized logistic loss."""
    if not a < b:
        raise InvalidLoss("need a < b")
    if not a <= y <= b:
        raise InvalidLoss(f"y={y} outside [{a}, {b}]")
    if y == a or y == b:
        return math.inf
    v = math.log((y - a) / (b - y))
    return abs(v)


def _check_band(epsilon, a, b):
    if not a < b:
        raise InvalidLoss("need a < b")
    if not 0 < epsilon < (b - a) / 2:
        raise InvalidLoss(f"epsilon must lie in (0, {(b - a) / 2})")


def horizon_logistic_bounded(epsilon: float, a: float, b: float) -> float:
    """The closed-form band horizon ``log((b - a) / (2 eps))`` used by the logistic bounds.

    This is smaller than :func:`horizon_logistic` at the band edges, so it is
    not a restorative horizon for every response in ``[a + eps, b - eps]``;
    :func:`horizon_logistic_band` gives the one that is.
    """
    _check_band(epsilon, a, b)
    return math.log((b - a) / (2 * epsilon))


def horizon_logistic_band(epsilon: float, a: float, b: float) -> float:
    """Smallest horizon valid for every response in ``[a + eps, b - eps]``.

    The per-response horizon is largest at the band edges.
    """
    _check_band(epsilon, a, b)
    return math.log((b - a - epsilon) / epsilon)


def _logistic_stationary_point(tol: float = 1e-10) -> float:
    # root of u = 1 + exp(-u); bracketed by [1, 2]
    lo, hi = 1.0, 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid - 1.0 - math.exp(-mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _unit_logistic_infimum() -> float:
    u = _logistic_stationary_point()
    return (float(sigmoid(u)) - 1.0) * u


_UNIT_LOGISTIC_INF = _unit_logistic_infimum()


def infimum_logistic_inner(a: float, b: float) -> float:
    """``inf_u g(u) u`` over responses in ``[a, b]`` for the generalized logistic gradient.

    The unit-range value is found by bisection on the stationarity condition
    and then scaled by ``b - a``.
    """
    if not a < b:
        raise InvalidLoss("need a < b")
    return (b - a) * _UNIT_LOGISTIC_INF


def infimum_squared_inner(a1: float, a2: float, bbound: float) -> float:
    """Lower bound on ``a1 (u - y) u - a2 (u - y)^2`` over all u and ``|y| <= bbound``."""
    if not a1 > a2:
        raise InvalidLoss(f"need a1 > a2, got a1={a1}, a2={a2}")
    b2 = bbound * bbound
    return -((a1 - 2 * a2) ** 2) * b2 / (4 * (a1 - a2)) - a2 * b2


def stack_losses(losses: Sequence[LossInstance]) -> int:
    """Common dimension of a loss sequence (raises on mismatch)."""
    dims = {loss.dim for loss in losses}
    if len(dims) > 1:
        raise InvalidLoss(f"losses disagree on dimension: {sorted(dims)}")
    return dims.pop() if dims else 0


def eval_many(losses: Sequence[LossInstance], thetas) -> np.ndarray:
    """``[eval(losses[t], thetas[t]) for t]``, vectorized when the kinds agree.

    Regularizer terms are included. ``thetas`` has one row per loss.
    """
    losses = list(losses)
    n = len(losses)
    th = np.asarray(thetas, dtype=float)
    if th.ndim == 1:
        th = th[:, None]
    if th.shape[0] != n:
        raise InvalidLoss("need one theta per loss")
    if n == 0:
        return np.zeros(0)
    kinds = {loss.kind for loss in losses}
    if len(kinds) > 1 or any(loss.reg is not None for loss in losses):
        return np.array([eval(loss, row) for loss, row in zip(losses, th)])
    k = kinds.pop()
    r = np.array([loss.response for loss in losses])
    if k in GLM_KINDS:
        X = np.vstack([loss.x for loss in losses])
        if X.shape[1] != th.shape[1]:
            raise InvalidLoss("theta dimension does not match features")
        u = np.einsum("ij,ij->i", X, th)
    else:
        if th.shape[1] != 1:
            raise InvalidLoss("univariate losses need scalar theta")
        u = th[:, 0]
    if k in ("squared", "glm-linear"):
        return 0.5 * (r - u) ** 2
    if k == "quantile":
        tau = np.array([loss.tau for loss in losses])
        d = r - u
        return np.where(d >= 0, tau * d, (tau - 1.0) * d)
    if k == "absolute":
        return np.abs(u - r)
    a = np.array([loss.a for loss in losses])
    b = np.array([loss.b for loss in losses])
    return -r * u + (b - a) * softplus(u) + a * u
