"""Diagnostics over trajectories: average gradients, exact identities, bounds, regret."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from .descent import Trajectory
from .losses import LossInstance, eval_many, subgradient

# relative slack used when comparing a measured norm with a bound, absorbs roundoff only
BOUND_RTOL = 1e-12


class OracleError(RuntimeError):
    """Numeric regret oracle failed to reach its tolerance."""


@dataclass
class EquilibriumReport:
    t: np.ndarray
    avg_grad_norm: np.ndarray
    identity_residual: Optional[np.ndarray] = None
    bound: Optional[np.ndarray] = None
    satisfied: Optional[np.ndarray] = None
    avg_grad: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.t)

    def attach_bound(self, bound) -> "EquilibriumReport":
        bound = np.broadcast_to(np.asarray(bound, dtype=float), self.avg_grad_norm.shape).copy()
        self.bound = bound
        self.satisfied = within_bound(self.avg_grad_norm, bound)
        return self

    @property
    def satisfaction_fraction(self) -> Optional[float]:
        if self.satisfied is None or len(self.satisfied) == 0:
            return None
        return float(np.count_nonzero(self.satisfied)) / len(self.satisfied)

    def final(self) -> float:
        return float(self.avg_grad_norm[-1]) if len(self.t) else float("nan")


def within_bound(values, bound) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    bound = np.asarray(bound, dtype=float)
    return values <= bound + BOUND_RTOL * np.abs(bound)


@dataclass
class RegretReport:
    cumulative_loss: float
    oracle_loss: float
    oracle_theta: np.ndarray
    avg_regret: float
    oracle_kind: str
    tolerance: float = 0.0
    converged: bool = True


def prefix_average(rows) -> np.ndarray:
    """Running means of the rows of a (T, d) array."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    T = rows.shape[0]
    return np.cumsum(rows, axis=0) / np.arange(1, T + 1)[:, None]


def report_from_grads(grads) -> EquilibriumReport:
    """Prefix average-gradient report for an arbitrary gradient series."""
    avg = prefix_average(grads)
    T = avg.shape[0]
    return EquilibriumReport(
        t=np.arange(1, T + 1),
        avg_grad_norm=np.linalg.norm(avg, axis=1),
        avg_grad=avg,
    )


def avg_gradient(traj: Trajectory, full: bool = True) -> EquilibriumReport:
    """Prefix averages of the stored gradients.

    ``full`` adds the regularizer subgradients used by composite or proximal runs.
    """
    if traj.T == 0:
        raise ValueError("empty trajectory")
    if not traj.dense:
        gs = traj.grad_sum
        if full and traj.mode != "gd":
            raise ValueError("summary trajectories only carry loss-gradient sums")
        avg = (gs / traj.T)[None, :]
        return EquilibriumReport(t=np.array([traj.T]), avg_grad_norm=np.linalg.norm(avg, axis=1), avg_grad=avg)
    grads = traj.full_grads() if full else traj.grads
    return report_from_grads(grads)


def _prefix_T(traj: Trajectory) -> np.ndarray:
    return np.arange(1, traj.T + 1) if traj.dense else np.array([traj.T])


def identity_constant_step(traj: Trajectory) -> np.ndarray:
    """Residual of the telescoping identity at every prefix."""
    if not traj.schedule.is_constant:
        raise ValueError("identity_constant_step needs a constant schedule")
    if traj.mode == "prox" and not (traj.mirror == "identity" and traj.reg.kind == "none"):
        raise ValueError("use identity_pmd for proximal trajectories")
    if traj.T == 0:
        raise ValueError("empty trajectory")
    eta = traj.schedule.eta
    if not eta > 0:
        return np.full(traj.T if traj.dense else 1, np.nan)
    Ts = _prefix_T(traj)
    if traj.dense:
        lhs = np.cumsum(traj.full_grads(), axis=0) / Ts[:, None]
        rhs = (traj.thetas[0][None, :] - traj.thetas[1:]) / (eta * Ts[:, None])
    else:
        lhs = (traj.grad_sum / traj.T)[None, :]
        rhs = ((traj.theta_first - traj.theta_last) / (eta * traj.T))[None, :]
    return np.linalg.norm(lhs - rhs, axis=1)


def step_increments(etas) -> np.ndarray:
    """``Delta_t = 1/eta_t - 1/eta_{t-1}`` with ``1/eta_0 = 0``."""
    inv = 1.0 / np.asarray(etas, dtype=float)
    return np.diff(inv, prepend=0.0)


def identity_decaying_step(traj: Trajectory) -> np.ndarray:
    """Residual of the arbitrary-step identity at every prefix."""
    if traj.T == 0:
        raise ValueError("empty trajectory")
    if traj.mode == "prox" and not (traj.mirror == "identity" and traj.reg.kind == "none"):
        raise ValueError("decaying-step identity applies to gradient steps only")
    if traj.dense:
        if traj.etas is None or np.any(~(traj.etas > 0)):
            raise ValueError("missing or nonpositive step record")
        Ts = _prefix_T(traj)
        delta = step_increments(traj.etas)
        lhs = np.cumsum(traj.full_grads(), axis=0)
        weighted = np.cumsum(delta[:, None] * traj.thetas[:-1], axis=0)
        rhs = weighted - traj.thetas[1:] * (1.0 / traj.etas)[:, None]
        return np.linalg.norm(lhs - rhs, axis=1) / Ts
    if traj.mode != "gd":
        raise ValueError("summary trajectories only support plain gradient steps")
    rhs = traj.delta_theta_sum - traj.theta_last * traj.inv_eta_last
    return np.array([np.linalg.norm(traj.grad_sum - rhs) / traj.T])


def _pmd_anchor(traj: Trajectory):
    """``grad Phi(theta_t) + eta g_r(theta_t)`` for t = 1..T+1."""
    eta = traj.schedule.eta
    duals = traj.duals if traj.duals is not None else traj.thetas
    return duals + eta * traj.reg_grads


def identity_pmd(traj: Trajectory) -> np.ndarray:
    """Residual of the proximal mirror-descent identity at every prefix."""
    if not traj.schedule.is_constant:
        raise ValueError("identity_pmd needs a constant schedule")
    if traj.T == 0:
        raise ValueError("empty trajectory")
    if traj.mode == "composite":
        raise ValueError("composite trajectories follow the plain telescoping identity")
    eta = traj.schedule.eta
    if traj.dense:
        if traj.reg_grads is None:
            raise ValueError("missing regularizer-subgradient trace")
        Ts = _prefix_T(traj)
        A = _pmd_anchor(traj)
        lhs = np.cumsum(traj.full_grads(), axis=0) / Ts[:, None]
        rhs = (A[0][None, :] - A[1:]) / (eta * Ts[:, None])
        return np.linalg.norm(lhs - rhs, axis=1)
    raise ValueError("identity_pmd needs a dense trajectory")


# ---------------------------------------------------------------- bounds


def _series(params, key, T, default=None):
    if key not in params or params[key] is None:
        if default is None:
            raise KeyError(f"bound needs parameter {key!r}")
        val = default
    else:
        val = params[key]
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full(T, float(arr))
    if arr.shape[0] != T:
        raise ValueError(f"parameter {key!r} has length {arr.shape[0]}, expected {T}")
    return arr


def _scalar(params, key, default=None):
    if key not in params or params[key] is None:
        if default is None:
            raise KeyError(f"bound needs parameter {key!r}")
        return float(default)
    return float(params[key])


class _Ctx:
    def __init__(self, traj, params):
        self.params = params
        if isinstance(traj, Trajectory):
            self.traj = traj
            self.T = traj.T if traj.dense else 1
            self.Ts = _prefix_T(traj).astype(float)
            t1 = float(np.linalg.norm(traj.theta_first))
            if traj.dense:
                nxt = np.linalg.norm(traj.thetas[1:], axis=1)
                running_max = np.maximum.accumulate(np.linalg.norm(traj.thetas, axis=1))[1:]
                self.etas = traj.etas
            else:
                nxt = np.array([np.linalg.norm(traj.theta_last)])
                running_max = None
                self.etas = None
        else:
            self.traj = None
            T = int(traj)
            if T < 1:
                raise ValueError("T must be >= 1")
            self.T = T
            self.Ts = np.arange(1, T + 1, dtype=float)
            t1 = 0.0
            nxt = None
            running_max = None
            self.etas = None
        self.theta1 = _scalar(params, "theta1_norm", t1)
        if "theta_next_norm" in params:
            nxt = _series(params, "theta_next_norm", self.T)
        self.theta_next = nxt
        if "max_theta_norm" in params:
            running_max = _series(params, "max_theta_norm", self.T)
        self.running_max = running_max

    def eta(self):
        if "eta" in self.params:
            return _scalar(self.params, "eta")
        if self.traj is not None and self.traj.schedule.is_constant:
            return self.traj.schedule.eta
        raise KeyError("bound needs parameter 'eta'")

    def counts(self):
        if "counts" in self.params:
            return _series(self.params, "counts", self.T)
        return self.Ts


def _safe_div(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(np.broadcast(num, den).shape, np.inf)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _b_gd(c: _Ctx):
    if c.theta_next is None:
        raise KeyError("bound needs iterates or 'theta_next_norm'")
    return _safe_div(c.theta1 + c.theta_next, c.eta() * c.Ts)


def _b_zero_curv_1d(c: _Ctx, lip_key="L"):
    eta = c.eta()
    L = _series(c.params, lip_key, c.T)
    h = _series(c.params, "h", c.T)
    Ts = c.counts()
    return _safe_div(2 * c.theta1 + eta * L + h, eta * Ts)


def _b_zero_curv(c: _Ctx):
    eta = c.eta()
    L = _series(c.params, "L", c.T)
    h = _series(c.params, "h", c.T)
    Ts = c.Ts
    return 2 * c.theta1 / (eta * Ts) + np.sqrt(L**2 / Ts + 2 * L * h / (eta * Ts))


def _b_quantile_avg(c: _Ctx):
    eta = c.eta()
    b = _series(c.params, "b", c.T)
    return _safe_div(2 * c.theta1 + eta + b, eta * c.counts())


def _b_quantile_cov(c: _Ctx):
    eta = c.eta()
    b = _series(c.params, "b", c.T)
    return _safe_div(eta + b, eta * c.counts())


def _squared_terms(c: _Ctx):
    eta = c.eta()
    b = _series(c.params, "b", c.T)
    delta = _scalar(c.params, "delta", default_delta(eta))
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return eta, b * eta * (1 + 1 / delta) + b / delta


def _b_squared_avg(c: _Ctx):
    eta, core = _squared_terms(c)
    return _safe_div(2 * c.theta1 + core, eta * c.counts())


def _b_squared_bias(c: _Ctx):
    eta, core = _squared_terms(c)
    return _safe_div(core, eta * c.counts())


def _b_logistic_avg(c: _Ctx):
    eta = c.eta()
    lo = _scalar(c.params, "range_a", -1.0)
    hi = _scalar(c.params, "range_b", 1.0)
    eps = _series(c.params, "epsilon", c.T)
    return _safe_div(2 * c.theta1 + (hi - lo) * eta + np.log((hi - lo) / (2 * eps)), eta * c.counts())


def _b_logistic_bias(c: _Ctx):
    eta = c.eta()
    eps = _series(c.params, "epsilon", c.T)
    return _safe_div(2 * eta + np.log(1 / eps), eta * c.counts())


def _b_logistic_band_avg(c: _Ctx):
    # horizon log((b - a - eps)/eps): the largest per-response horizon in the band
    eta = c.eta()
    lo = _scalar(c.params, "range_a", -1.0)
    hi = _scalar(c.params, "range_b", 1.0)
    eps = _series(c.params, "epsilon", c.T)
    return _safe_div(2 * c.theta1 + (hi - lo) * eta + np.log((hi - lo - eps) / eps), eta * c.counts())


def _b_lasso_cov(c: _Ctx):
    eta = c.eta()
    lam = _scalar(c.params, "lam")
    cc = _scalar(c.params, "c")
    d = _scalar(c.params, "d")
    if not lam > 0:
        raise ValueError("lasso bound needs lambda > 0")
    Lr = 2 * cc + lam * math.sqrt(d)
    Ts = c.Ts
    return Lr / Ts + (1.116 + eta * Lr**2) / (2 * lam * eta * Ts) + lam * math.sqrt(d)


def ridge_constant(eta: float, lam: float, c: float, b: float) -> float:
    """The ``C(lambda)`` constant of the ridge decorrelation bound."""
    if not (lam > 0 and eta > 0):
        raise ValueError("ridge constant needs eta, lambda > 0")
    if not eta < 1.0 / (lam + c * c / 2):
        raise ValueError(f"eta={eta} inadmissible: need eta < 1/(lambda + c^2/2)")
    c2, b2 = c * c, b * b
    inner = (1 - lam * eta - eta * c2) ** 2 * b2 / (4 * (1 - lam * eta - eta * c2 / 2)) + eta * c2 * b2 / 2
    return inner / (1 - lam * eta / 2) * (eta * (c2 + lam) + 1)


def _b_ridge_cov(c: _Ctx):
    eta = c.eta()
    lam = _scalar(c.params, "lam")
    cc = _scalar(c.params, "c")
    b = _scalar(c.params, "b")
    C = ridge_constant(eta, lam, cc, b)
    Ts = c.Ts
    return b * cc / Ts + math.sqrt(C) / (math.sqrt(lam) * eta * Ts) + math.sqrt(lam * C) + lam * eta * b * cc


def _b_ridge_avg(c: _Ctx):
    # general-theta_1 form with C_2 = sqrt(C_0) (eta (c^2 + lambda) + 1)
    eta = c.eta()
    lam = _scalar(c.params, "lam")
    cc = _scalar(c.params, "c")
    b = _scalar(c.params, "b")
    C = ridge_constant(eta, lam, cc, b)
    factor = eta * (cc * cc + lam) + 1
    C0 = C / factor
    C1 = 2 * c.theta1 + eta * b * cc
    C2 = math.sqrt(C0) * factor
    C3 = math.sqrt(lam) * C2 + lam * (c.theta1 + eta * b * cc)
    Ts = c.Ts
    return C1 / (eta * Ts) + C2 / (math.sqrt(lam) * eta * Ts) + C3


def _b_lasso_avg(c: _Ctx):
    eta = c.eta()
    lam = _scalar(c.params, "lam")
    cc = _scalar(c.params, "c")
    d = _scalar(c.params, "d")
    lo = _scalar(c.params, "range_a", -1.0)
    hi = _scalar(c.params, "range_b", 1.0)
    if not lam > 0:
        raise ValueError("lasso bound needs lambda > 0")
    L = cc * (hi - lo) + lam * math.sqrt(d)
    C1 = 2 * c.theta1 + eta * L
    C2 = 0.279 * (hi - lo) + eta * L * L / 2
    Ts = c.Ts
    return C1 / (eta * Ts) + C2 / (lam * eta * Ts) + lam * math.sqrt(d)


def _capped(fn):
    def inner(c: _Ctx):
        return fn(c) * _scalar(c.params, "cap", 1.0)

    return inner


def _b_lrt(c: _Ctx):
    if c.running_max is None or c.etas is None:
        raise KeyError("lrt bound needs a dense trajectory")
    delta = np.abs(step_increments(c.etas))
    return 2.0 / c.Ts * c.running_max * np.cumsum(delta)


def _b_dec(c: _Ctx):
    if c.running_max is None or c.etas is None:
        raise KeyError("dec bound needs a dense trajectory")
    return 2.0 * c.running_max / (c.etas * c.Ts)


def _poly(c: _Ctx):
    sched = c.traj.schedule if c.traj is not None else None
    cc = _scalar(c.params, "c", sched.c if sched is not None and sched.kind == "polynomial" else None)
    alpha = _scalar(c.params, "alpha", sched.alpha if sched is not None and sched.kind == "polynomial" else None)
    return cc, alpha


def _b_lrt_linear(c: _Ctx, lip_key="L"):
    cc, alpha = _poly(c)
    L = _series(c.params, lip_key, c.T)
    h = _series(c.params, "h", c.T)
    scale = c.Ts ** (1 - alpha)
    return 2 * c.theta1 / cc / scale + 2 * (L + h / cc) / scale


def _b_lrt_zero_curv(c: _Ctx):
    cc, alpha = _poly(c)
    L = _series(c.params, "L", c.T)
    h = _series(c.params, "h", c.T)
    t = c.Ts
    terms = np.cumsum(t ** (-2 * alpha) * L**2 + 2 * t ** (-alpha) * h * L / cc)
    return 2 * c.theta1 / cc / t ** (1 - alpha) + np.sqrt(terms / t ** (2 * (1 - alpha)))


def _b_pmd(c: _Ctx):
    if c.traj is None or not c.traj.dense:
        raise KeyError("pmd bound needs a dense trajectory")
    A = _pmd_anchor(c.traj)
    eta = c.eta()
    n0 = np.linalg.norm(A[0])
    return (n0 + np.linalg.norm(A[1:], axis=1)) / (eta * c.Ts)


BOUNDS: Dict[str, Callable[[_Ctx], np.ndarray]] = {
    "gd_avg_grad": _b_gd,
    "zero_curv_1d": _b_zero_curv_1d,
    "zero_curv": _b_zero_curv,
    "pos_curv": _b_zero_curv_1d,
    "quad_curv": lambda c: _b_zero_curv_1d(c, "L_T"),
    "quantile_avg_grad": _b_quantile_avg,
    "quantile_coverage": _b_quantile_cov,
    "squared_avg_grad": _b_squared_avg,
    "squared_bias": _b_squared_bias,
    "logistic_avg_grad": _b_logistic_avg,
    "logistic_bias": _b_logistic_bias,
    "logistic_band_avg_grad": _b_logistic_band_avg,
    "glm_linear_avg_grad": _b_squared_avg,
    "glm_logistic_avg_grad": _b_logistic_avg,
    "squared_groupwise_bias": _b_squared_bias,
    "logistic_groupwise_bias": _b_logistic_bias,
    "logistic_lasso_avg_grad": _b_lasso_avg,
    "logistic_lasso_covariance": _b_lasso_cov,
    "squared_ridge_avg_grad": _b_ridge_avg,
    "squared_ridge_covariance": _b_ridge_cov,
    "logistic_lasso_multiaccuracy": _capped(_b_lasso_cov),
    "squared_ridge_multiaccuracy": _capped(_b_ridge_cov),
    "lrt": _b_lrt,
    "dec": _b_dec,
    "zero_curv_1d_lrt": _b_lrt_linear,
    "zero_curv_lrt": _b_lrt_zero_curv,
    "pos_curv_lrt": _b_lrt_linear,
    "quad_curv_lrt": lambda c: _b_lrt_linear(c, "L_T"),
    "pmd": _b_pmd,
}


def bound_eval(traj: Union[Trajectory, int], bound_id: str, params: Optional[dict] = None) -> np.ndarray:
    """Evaluate a named bound at every prefix.

    ``traj`` may be an integer horizon when the bound only needs constants.
    Group bounds read per-prefix group sizes from ``params["counts"]``;
    prefixes with an empty group evaluate to ``inf``.
    """
    if bound_id not in BOUNDS:
        raise KeyError(f"unknown bound {bound_id!r}")
    ctx = _Ctx(traj, dict(params or {}))
    out = np.asarray(BOUNDS[bound_id](ctx), dtype=float)
    return np.broadcast_to(out, (ctx.T,)).copy()


def default_delta(eta: float) -> float:
    """Largest delta in (0, 1) with ``eta <= 2(1 - delta)/(1 + delta)^2``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if eta >= 2:
        return float("nan")
    return (math.sqrt(4 * eta + 1) - eta - 1) / eta


def delta_admissible(eta: float, delta: float) -> bool:
    return 0 < delta < 1 and eta <= 2 * (1 - delta) / (1 + delta) ** 2 * (1 + 1e-12)


# ---------------------------------------------------------------- regret


def _golden_min(fn, lo, hi, tol=1e-8, max_iter=500):
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    it = 0
    while b - a > tol and it < max_iter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
        it += 1
    x = 0.5 * (a + b)
    return x, b - a <= tol


def _bracket_1d(fn, start=0.0, width=1.0, limit=1e8):
    """Expand an interval around ``start`` until the convex ``fn`` rises on both ends."""
    lo, hi = start - width, start + width
    f0 = fn(start)
    while fn(lo) < f0 and width < limit:
        width *= 2
        lo = start - width
    width_hi = 1.0
    while fn(hi) < f0 and width_hi < limit:
        width_hi *= 2
        hi = start + width_hi
    ok = width < limit and width_hi < limit
    return lo, hi, ok


def _lower_quantile(vals, tau):
    s = np.sort(vals)
    k = max(1, math.ceil(tau * len(s) - 1e-12))
    return float(s[k - 1])


def regret(
    traj: Trajectory,
    losses: Sequence[LossInstance],
    tol: float = 1e-8,
    allow_unconverged: bool = False,
) -> RegretReport:
    """Average regret against the best fixed parameter in hindsight."""
    losses = list(losses)
    if not traj.dense:
        raise ValueError("regret needs a dense trajectory")
    if len(losses) != traj.T:
        raise ValueError("losses and trajectory lengths differ")
    T = traj.T
    if T == 0:
        raise ValueError("empty trajectory")
    cum = float(eval_many(losses, traj.thetas[:T]).sum())
    kinds = {loss.kind for loss in losses}
    has_reg = any(loss.reg is not None and loss.reg.kind != "none" for loss in losses)
    d = traj.dim

    def total(th):
        th = np.atleast_1d(th)
        return float(eval_many(losses, np.broadcast_to(th, (T, d))).sum())

    kind = next(iter(kinds)) if len(kinds) == 1 else None
    resp = np.array([loss.response for loss in losses])
    theta_star = None
    oracle_kind = "closed-form"
    converged = True
    used_tol = 0.0
    if not has_reg and kind == "squared":
        theta_star = np.array([resp.mean()])
    elif not has_reg and kind == "absolute":
        theta_star = np.array([_lower_quantile(resp, 0.5)])
    elif not has_reg and kind == "quantile" and len({loss.tau for loss in losses}) == 1:
        theta_star = np.array([_lower_quantile(resp, losses[0].tau)])
    elif not has_reg and kind == "glm-linear":
        X = np.vstack([loss.x for loss in losses])
        theta_star = np.linalg.lstsq(X, resp, rcond=None)[0]
    elif d == 1:
        fn = lambda u: total(np.array([u]))  # noqa: E731
        start = float(np.median(resp)) if kinds <= {"quantile", "absolute", "squared"} else 0.0
        lo, hi, ok = _bracket_1d(fn, start)
        x, conv = _golden_min(fn, lo, hi, tol)
        theta_star = np.array([x])
        oracle_kind = f"numeric(golden-section, tol={tol:g})"
        converged = ok and conv
        used_tol = tol
    else:
        from scipy.optimize import minimize

        def avg_grad(th):
            return np.sum([subgradient(loss, th) for loss in losses], axis=0) / T

        gtol = 1e-6
        res = minimize(
            lambda th: total(th) / T,
            np.zeros(d),
            jac=avg_grad,
            method="L-BFGS-B",
            options={"gtol": gtol * 1e-2, "ftol": 1e-15, "maxiter": 10000},
        )
        theta_star = np.asarray(res.x)
        gnorm = float(np.linalg.norm(avg_grad(theta_star)))
        oracle_kind = f"numeric(l-bfgs, gtol={gtol:g})"
        converged = gnorm <= gtol
        used_tol = gtol
    if not converged and not allow_unconverged:
        raise OracleError(f"regret oracle did not converge ({oracle_kind})")
    best = total(theta_star)
    return RegretReport(
        cumulative_loss=cum,
        oracle_loss=best,
        oracle_theta=theta_star,
        avg_regret=(cum - best) / T,
        oracle_kind=oracle_kind,
        tolerance=used_tol,
        converged=converged,
    )


def regret_from_thetas(thetas, losses: Sequence[LossInstance], **kw) -> RegretReport:
    """Regret for iterates that did not come from :func:`run_stream`."""
    from .descent import trajectory_from_arrays

    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    grads = np.zeros_like(thetas[: len(losses)])
    traj = trajectory_from_arrays(thetas[: len(losses)], grads, 1.0)
    return regret(traj, losses, **kw)


# ---------------------------------------------------------------- no-move regret


def nmr_grid(dim: int, radius: float, grid_size: int) -> np.ndarray:
    """Deterministic shifts in the closed radius-ball, always including 0."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    if dim == 1:
        pts = np.linspace(-radius, radius, max(grid_size, 2))[:, None]
        return np.vstack([np.zeros((1, 1)), pts])
    from scipy.stats import qmc

    halton = qmc.Halton(d=dim, scramble=False).random(grid_size)
    pts = (2.0 * halton - 1.0) * radius
    pts = pts[np.linalg.norm(pts, axis=1) <= radius]
    axes = np.vstack([np.eye(dim) * radius, -np.eye(dim) * radius])
    return np.vstack([np.zeros((1, dim)), axes, pts])


def nmr_estimate(traj: Trajectory, losses: Sequence[LossInstance], radius: float, grid_size: int = 201) -> float:
    """Smallest average loss change over deterministic constant shifts of the iterates.

    Sampling only part of the ball means the value is an upper estimate of
    the true infimum.
    """
    losses = list(losses)
    if not traj.dense:
        raise ValueError("nmr_estimate needs a dense trajectory")
    T = len(losses)
    if T == 0:
        return 0.0
    thetas = traj.thetas[:T]
    base = eval_many(losses, thetas)
    best = 0.0
    for delta in nmr_grid(traj.dim, radius, grid_size):
        val = float((eval_many(losses, thetas + delta) - base).mean())
        best = min(best, val)
    return best
