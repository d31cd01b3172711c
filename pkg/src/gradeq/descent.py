"""Online update engines.

Three update modes share one :class:`LearnerState`:

* plain gradient descent (identity mirror, no regularizer);
* composite subgradient steps, ``theta <- theta - eta (g + g_r(theta))``, used
  when a penalty is handled through its subgradient;
* proximal mirror descent, a mirror step followed by the Bregman prox of the
  regularizer (identity or negative-entropy mirror map).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .losses import (
    NO_REG,
    InvalidLoss,
    LossInstance,
    RegularizerSpec,
    regularizer_subgradient,
    subgradient,
)

__all__ = [
    "StepSchedule",
    "LearnerState",
    "Trajectory",
    "StepError",
    "gd_step",
    "composite_step",
    "prox_mirror_step",
    "regularizer_subgradient",
    "run_stream",
    "project_simplex",
    "project_ball",
]

MIRRORS = ("identity", "entropy")
WEIGHT_FLOOR = 1e-300
_LOG_FLOOR = math.log(WEIGHT_FLOOR)


class StepError(RuntimeError):
    """A failure inside an online run, tagged with the 1-based timestep."""

    def __init__(self, t: int, cause: BaseException):
        super().__init__(f"step {t}: {cause}")
        self.t = t
        self.cause = cause


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``eta_t`` for ``t = 1, 2, ...``.

    kind ``constant`` uses ``eta``; ``polynomial`` gives ``c * t**-alpha``;
    ``explicit`` reads ``values[t-1]``.
    """

    kind: str = "constant"
    eta: float = 0.1
    c: float = 1.0
    alpha: float = 0.5
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "constant":
            if not (self.eta >= 0 and math.isfinite(self.eta)):
                raise ValueError(f"constant step must be finite and >= 0, got {self.eta}")
        elif self.kind == "polynomial":
            if not self.c > 0:
                raise ValueError("polynomial schedule needs c > 0")
            if not 0 <= self.alpha < 1:
                raise ValueError("polynomial schedule needs alpha in [0, 1)")
        elif self.kind == "explicit":
            if self.values is None or len(self.values) == 0:
                raise ValueError("explicit schedule needs a nonempty list of steps")
            vals = tuple(float(v) for v in self.values)
            if any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise ValueError("explicit steps must be positive and finite")
            object.__setattr__(self, "values", vals)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls("constant", eta=eta)

    @classmethod
    def polynomial(cls, c: float, alpha: float) -> "StepSchedule":
        return cls("polynomial", c=c, alpha=alpha)

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "StepSchedule":
        return cls("explicit", values=tuple(values))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def eta_at(self, t: int) -> float:
        if t < 1:
            raise ValueError("timesteps are 1-based")
        if self.kind == "constant":
            return self.eta
        if self.kind == "polynomial":
            return self.c * t ** (-self.alpha)
        if t > len(self.values):
            raise ValueError(f"explicit schedule has only {len(self.values)} steps")
        return self.values[t - 1]

    def etas(self, T: int) -> np.ndarray:
        return np.array([self.eta_at(t) for t in range(1, T + 1)], dtype=float)

    def is_nonincreasing(self, T: Optional[int] = None) -> bool:
        if self.kind != "explicit":
            return True
        vals = self.values if T is None else self.values[:T]
        return all(b <= a for a, b in zip(vals, vals[1:]))


@dataclass
class LearnerState:
    """Mutable single-owner learner.

    ``prox`` picks the proximal update for a penalty regularizer; otherwise a
    penalty enters through its subgradient. Set regularizers always use the
    proximal update. ``reg_grad_init`` is the regularizer subgradient taken at
    ``theta_1`` by the proximal identity (zero by default).
    """

    theta: np.ndarray
    schedule: StepSchedule = field(default_factory=StepSchedule)
    mirror: str = "identity"
    reg: RegularizerSpec = NO_REG
    prox: bool = False
    t: int = 1
    trace: Optional[list] = None
    reg_grad_init: Optional[np.ndarray] = None
    log_theta: Optional[np.ndarray] = field(default=None, repr=False)
    last_reg_grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        if self.theta.ndim != 1:
            raise ValueError("theta must be a vector")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.mirror not in MIRRORS:
            raise ValueError(f"unknown mirror map {self.mirror!r}")
        if self.mirror == "entropy":
            if self.reg.kind not in ("none", "simplex"):
                raise ValueError(f"entropy mirror does not support regularizer {self.reg.kind!r}")
            if np.any(self.theta <= 0):
                raise ValueError("entropy mirror needs positive weights")
            if self.reg.kind == "simplex" and abs(self.theta.sum() - 1.0) > 1e-12:
                raise ValueError("initial weights must sum to 1")
            if self.log_theta is None:
                self.log_theta = np.log(self.theta)
        if self.reg.is_set:
            self.prox = True
            if not self.reg.contains(self.theta):
                raise ValueError(f"initial theta lies outside the {self.reg.kind} set")
        if self.reg_grad_init is None:
            self.reg_grad_init = np.zeros_like(self.theta)
        else:
            self.reg_grad_init = np.asarray(self.reg_grad_init, dtype=float).reshape(self.theta.shape)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @property
    def mode(self) -> str:
        if self.mirror == "entropy" or self.prox:
            return "prox"
        if self.reg.kind == "none":
            return "gd"
        return "composite"

    def grad_mirror(self) -> np.ndarray:
        """``grad Phi(theta)`` with the additive constant of the entropy map dropped."""
        if self.mirror == "identity":
            return self.theta.copy()
        return self.log_theta.copy()

    def _record(self, g, eta, g_r_used, g_r_next):
        if self.trace is not None:
            self.trace.append((self.theta.copy(), np.array(g, dtype=float), eta, g_r_used, g_r_next))


def _check_grad(state: LearnerState, g) -> np.ndarray:
    if not (isinstance(g, np.ndarray) and g.dtype == np.float64):
        g = np.atleast_1d(np.asarray(g, dtype=float))
    if g.shape != state.theta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match theta {state.theta.shape}")
    return g


def gd_step(state: LearnerState, g) -> LearnerState:
    if state.mirror != "identity" or state.reg.kind != "none":
        raise ValueError("gd_step needs the identity mirror and no regularizer")
    g = _check_grad(state, g)
    eta = state.schedule.eta_at(state.t)
    state._record(g, eta, None, None)
    state.theta = state.theta - eta * g
    state.t += 1
    return state


def composite_step(state: LearnerState, g) -> LearnerState:
    """Subgradient step on ``loss + penalty`` at the current iterate."""
    if state.mirror != "identity" or state.reg.is_set:
        raise ValueError("composite steps need the identity mirror and a penalty regularizer")
    g = _check_grad(state, g)
    eta = state.schedule.eta_at(state.t)
    g_r = regularizer_subgradient(state.reg, state.theta)
    state._record(g, eta, g_r, None)
    state.theta = state.theta - eta * (g + g_r)
    state.t += 1
    return state


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    shift = css[rho] / (rho + 1.0)
    return np.maximum(v - shift, 0.0)


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(v))
    if nrm <= radius:
        return v.copy()
    return v * (radius / nrm)


def _prox_identity(reg: RegularizerSpec, z: np.ndarray, eta: float) -> np.ndarray:
    k = reg.kind
    if k == "none":
        return z.copy()
    if k == "l1":
        return np.sign(z) * np.maximum(np.abs(z) - eta * reg.lam, 0.0)
    if k == "l2-half":
        return z / (1.0 + eta * reg.lam)
    if k == "l2-full":
        return z / (1.0 + 2.0 * eta * reg.lam)
    if k == "l2-ball":
        return project_ball(z, reg.radius)
    return project_simplex(z)


def prox_mirror_step(state: LearnerState, g) -> LearnerState:
    """Mirror step then Bregman prox; records ``g_r(theta_{t+1})``.

    Under the entropy mirror with the simplex constraint this is the
    multiplicative-weights update computed in the log domain.
    """
    g = _check_grad(state, g)
    eta = state.schedule.eta_at(state.t)
    if not eta > 0:
        raise ValueError("proximal steps need a positive step size")
    if state.mirror == "identity":
        z = state.theta - eta * g
        new = _prox_identity(state.reg, z, eta)
        g_r = (z - new) / eta
        state._record(g, eta, None, g_r)
        state.theta = new
    else:
        log_z = state.log_theta - eta * g
        if state.reg.kind == "simplex":
            top = log_z.max()
            lse = top + math.log(float(np.exp(log_z - top).sum()))
            log_new = log_z - lse
        else:
            log_new = log_z.copy()
        if np.any(log_new < _LOG_FLOOR):
            log_new = np.maximum(log_new, _LOG_FLOOR)
            if state.reg.kind == "simplex":
                top = log_new.max()
                log_new = log_new - (top + math.log(float(np.exp(log_new - top).sum())))
        new = np.exp(log_new)
        if np.any(new <= 0) or not np.all(np.isfinite(new)):
            raise ValueError("entropy mirror produced nonpositive weights")
        g_r = (log_z - log_new) / eta
        state._record(g, eta, None, g_r)
        state.theta = new
        state.log_theta = log_new
    state.last_reg_grad = g_r
    state.t += 1
    return state


def step(state: LearnerState, g) -> LearnerState:
    mode = state.mode
    if mode == "gd":
        return gd_step(state, g)
    if mode == "composite":
        return composite_step(state, g)
    return prox_mirror_step(state, g)


@dataclass
class Trajectory:
    """Output of :func:`run_stream`.

    Dense storage keeps every iterate. ``grads`` are loss subgradients only;
    ``reg_grads[t]`` is the regularizer subgradient at ``theta_{t+1}`` (row 0
    belongs to ``theta_1``), so ``grads + reg_grads[:-1]`` are the full
    gradients. ``duals`` holds ``grad Phi(theta_t)`` under the entropy map.

    With ``store="sums"`` only endpoints and running sums are kept.
    """

    T: int
    dim: int
    schedule: StepSchedule
    mirror: str
    reg: RegularizerSpec
    mode: str
    thetas: Optional[np.ndarray] = None
    grads: Optional[np.ndarray] = None
    etas: Optional[np.ndarray] = None
    losses: Optional[np.ndarray] = None
    reg_grads: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    # running-sum summary (always filled)
    theta_first: Optional[np.ndarray] = None
    theta_last: Optional[np.ndarray] = None
    dual_first: Optional[np.ndarray] = None
    dual_last: Optional[np.ndarray] = None
    reg_grad_first: Optional[np.ndarray] = None
    reg_grad_last: Optional[np.ndarray] = None
    grad_sum: Optional[np.ndarray] = None
    delta_theta_sum: Optional[np.ndarray] = None
    inv_eta_last: float = 0.0
    loss_sum: float = 0.0

    @property
    def dense(self) -> bool:
        return self.thetas is not None

    def full_grads(self) -> np.ndarray:
        """Loss plus regularizer subgradients per step."""
        if self.mode == "gd":
            return self.grads
        return self.grads + self.reg_grads[:-1]


def run_stream(losses: Sequence[LossInstance], state: LearnerState, store: str = "dense") -> Trajectory:
    """Apply ``subgradient`` then the configured step to each loss in order.

    The state is advanced in place. Loss-attached regularizers must agree with
    ``state.reg``; the learner applies the regularizer itself.
    """
    if store not in ("dense", "sums"):
        raise ValueError("store must be 'dense' or 'sums'")
    losses = list(losses)
    T = len(losses)
    d = state.dim
    mode = state.mode
    dense = store == "dense"
    theta_first = state.theta.copy()
    dual_first = state.grad_mirror()
    if mode == "composite":
        reg_first = regularizer_subgradient(state.reg, state.theta)
    else:
        reg_first = state.reg_grad_init.copy()

    if dense:
        thetas = np.empty((T + 1, d))
        thetas[0] = state.theta
        grads = np.empty((T, d))
        etas = np.empty(T)
        vals = np.empty(T)
        reg_grads = np.empty((T + 1, d))
        reg_grads[0] = reg_first
        duals = None
        if state.mirror == "entropy":
            duals = np.empty((T + 1, d))
            duals[0] = dual_first
    grad_sum = np.zeros(d)
    dtheta_sum = np.zeros(d)
    loss_sum = 0.0
    inv_prev = 0.0
    from .losses import eval as loss_eval

    # one error-state context for the whole loop: overflow or NaN becomes a StepError
    with np.errstate(over="raise", invalid="raise"):
        for i, loss in enumerate(losses):
            t = state.t
            try:
                if loss.reg is not None and loss.reg != state.reg:
                    raise InvalidLoss("loss regularizer disagrees with the learner's regularizer")
                base = loss.without_reg()
                g = subgradient(base, state.theta)
                val = loss_eval(base, state.theta)
                eta = state.schedule.eta_at(t)
                th_t = state.theta
                g_r_now = regularizer_subgradient(state.reg, th_t) if mode == "composite" else None
                step(state, g)
                # arithmetic overflow already raises; a finite loss value implies a finite
                # gradient for every loss kind, so this only catches non-finite inputs
                if not (math.isfinite(val) and np.isfinite(state.theta).all()):
                    raise FloatingPointError("non-finite loss or iterate")
            except (ValueError, ArithmeticError) as exc:
                raise StepError(t, exc) from exc
            inv = 1.0 / eta if eta > 0 else 0.0
            dtheta_sum += (inv - inv_prev) * th_t
            inv_prev = inv
            grad_sum += g
            loss_sum += val
            if dense:
                thetas[i + 1] = state.theta
                grads[i] = g
                etas[i] = eta
                vals[i] = val
                if mode == "composite":
                    reg_grads[i] = g_r_now
                    reg_grads[i + 1] = regularizer_subgradient(state.reg, state.theta)
                elif mode == "prox":
                    reg_grads[i + 1] = state.last_reg_grad
                else:
                    reg_grads[i + 1] = 0.0
                if duals is not None:
                    duals[i + 1] = state.log_theta

    if mode == "composite":
        reg_last = regularizer_subgradient(state.reg, state.theta)
    elif mode == "prox" and T > 0:
        reg_last = state.last_reg_grad.copy()
    else:
        reg_last = reg_first.copy() if T == 0 else np.zeros(d)
    traj = Trajectory(
        T=T,
        dim=d,
        schedule=state.schedule,
        mirror=state.mirror,
        reg=state.reg,
        mode=mode,
        theta_first=theta_first,
        theta_last=state.theta.copy(),
        dual_first=dual_first,
        dual_last=state.grad_mirror(),
        reg_grad_first=reg_first,
        reg_grad_last=reg_last,
        grad_sum=grad_sum,
        delta_theta_sum=dtheta_sum,
        inv_eta_last=inv_prev,
        loss_sum=loss_sum,
    )
    if dense:
        traj.thetas = thetas
        traj.grads = grads
        traj.etas = etas
        traj.losses = vals
        traj.reg_grads = reg_grads
        traj.duals = duals
    return traj


def trajectory_from_arrays(thetas, grads, eta: float, losses=None) -> Trajectory:
    """Wrap externally built iterates and gradients as a constant-step trajectory."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    grads = np.asarray(grads, dtype=float)
    if grads.ndim == 1:
        grads = grads[:, None]
    T, d = grads.shape
    if thetas.shape[0] not in (T, T + 1) or thetas.shape[1] != d:
        raise ValueError("thetas must have T or T+1 rows matching the gradient dimension")
    vals = np.zeros(T) if losses is None else np.asarray(losses, dtype=float)
    sched = StepSchedule.constant(eta)
    last = thetas[-1] if thetas.shape[0] == T + 1 else thetas[-1] - eta * grads[-1]
    inv = 1.0 / eta if eta > 0 else 0.0
    return Trajectory(
        T=T,
        dim=d,
        schedule=sched,
        mirror="identity",
        reg=NO_REG,
        mode="gd",
        thetas=thetas if thetas.shape[0] == T + 1 else np.vstack([thetas, last]),
        grads=grads,
        etas=np.full(T, eta),
        losses=vals,
        reg_grads=np.zeros((T + 1, d)),
        theta_first=thetas[0].copy(),
        theta_last=np.array(last),
        dual_first=thetas[0].copy(),
        dual_last=np.array(last),
        reg_grad_first=np.zeros(d),
        reg_grad_last=np.zeros(d),
        grad_sum=grads.sum(axis=0),
        delta_theta_sum=inv * thetas[0],
        inv_eta_last=inv,
        loss_sum=float(vals.sum()),
    )


def trace_records(state: LearnerState) -> List[tuple]:
    return list(state.trace or [])
