"""Post-hoc correction pipelines built on online gradient steps.

Every pipeline consumes a :class:`Stream` of base predictions ``f`` and
responses ``y`` (plus optional group or feature vectors ``z``) and returns
the per-step adjusted predictions together with equilibrium diagnostics.

Scalar pipelines run plain float loops; the vector pipelines perform the
same operations in the same order so that reductions (one group, one
expert) reproduce the scalar results bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .equilibrium import (
    EquilibriumReport,
    bound_eval,
    default_delta,
    delta_admissible,
    report_from_grads,
    within_bound,
)


class GuaranteeWarning(UserWarning):
    """The chosen parameters fall outside the range where the bound is proven."""


def _sig(u: float) -> float:
    if u > 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


# ---------------------------------------------------------------- data types


@dataclass
class StreamRecord:
    f: float
    y: float
    z: Optional[Sequence[float]] = None
    x_id: Optional[str] = None


@dataclass
class GroupVector:
    bits: np.ndarray
    labels: Tuple[str, ...]

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=float).reshape(-1)
        self.labels = tuple(self.labels)
        if len(self.labels) < 1:
            raise ValueError("a group vector needs at least one label")
        if self.bits.shape[0] != len(self.labels):
            raise ValueError("bits and labels differ in length")
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise ValueError("group bits must be 0 or 1")


@dataclass
class Stream:
    """Column-oriented stream: ``f``, ``y`` of length T and optional ``z`` of shape (T, d)."""

    f: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = None
    labels: Optional[List[str]] = None
    disjoint: bool = False
    ids: Optional[List[str]] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.f is None:
            self.f = np.zeros_like(self.y)
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        if self.f.shape != self.y.shape:
            raise ValueError("f and y differ in length")
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.y))):
            raise ValueError("stream contains non-finite values")
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=float)
            if self.z.ndim == 1:
                self.z = self.z[:, None]
            if self.z.shape[0] != self.y.shape[0]:
                raise ValueError("z must have one row per record")
            if not np.all(np.isfinite(self.z)):
                raise ValueError("z contains non-finite values")
            if self.labels is None:
                self.labels = [f"g{j}" for j in range(self.z.shape[1])]
            self.labels = list(self.labels)
            if len(self.labels) != self.z.shape[1]:
                raise ValueError("need one label per column of z")
        if self.disjoint:
            self.check_disjoint()

    def __len__(self):
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return 0 if self.z is None else self.z.shape[1]

    @classmethod
    def from_records(cls, records: Sequence[StreamRecord], labels=None, disjoint=False) -> "Stream":
        records = list(records)
        f = [r.f for r in records]
        y = [r.y for r in records]
        z = None
        if records and records[0].z is not None:
            z = np.array([np.asarray(r.z, dtype=float) for r in records])
        ids = [r.x_id for r in records] if any(r.x_id is not None for r in records) else None
        return cls(np.array(f, dtype=float), np.array(y, dtype=float), z, labels, disjoint, ids)

    def records(self) -> List[StreamRecord]:
        out = []
        for t in range(self.T):
            z = None if self.z is None else self.z[t].copy()
            out.append(StreamRecord(float(self.f[t]), float(self.y[t]), z, None if self.ids is None else self.ids[t]))
        return out

    def check_groups(self):
        if self.z is None:
            raise ValueError("this pipeline needs group vectors")
        if not np.all((self.z == 0) | (self.z == 1)):
            raise ValueError("group columns must be 0/1")

    def check_disjoint(self):
        self.check_groups()
        bad = np.nonzero(self.z.sum(axis=1) > 1)[0]
        if bad.size:
            raise ValueError(f"stream declared disjoint but record {int(bad[0]) + 1} is in several groups")

    def check_classification(self):
        if np.any((self.f < 0) | (self.f > 1)):
            t = int(np.nonzero((self.f < 0) | (self.f > 1))[0][0]) + 1
            raise ValueError(f"record {t}: base probability outside [0, 1]")
        if np.any((self.y != 0) & (self.y != 1)):
            t = int(np.nonzero((self.y != 0) & (self.y != 1))[0][0]) + 1
            raise ValueError(f"record {t}: classification labels must be 0 or 1")

    def subset(self, mask) -> "Stream":
        mask = np.asarray(mask, dtype=bool)
        z = None if self.z is None else self.z[mask]
        ids = None if self.ids is None else [i for i, m in zip(self.ids, mask) if m]
        return Stream(self.f[mask], self.y[mask], z, self.labels, self.disjoint, ids)


@dataclass
class GroupReport:
    label: str
    count: int
    bias: Optional[float]
    bias_series: np.ndarray
    bound_series: Optional[np.ndarray] = None
    satisfied: Optional[np.ndarray] = None
    sublinear: bool = False

    @property
    def is_null(self) -> bool:
        return self.count == 0

    @property
    def all_satisfied(self) -> Optional[bool]:
        if self.satisfied is None:
            return None
        return bool(np.all(self.satisfied))


@dataclass
class PipelineResult:
    """Per-step outputs plus diagnostics.

    ``adjustment`` is the learned correction added to ``f``; ``adjusted`` is
    the emitted prediction (clipped to [0, 1] for classification, whose
    unclipped value sits in ``adjusted_raw``). ``report`` tracks the main
    equilibrium quantity of the pipeline.
    """

    kind: str
    f: np.ndarray
    y: np.ndarray
    adjustment: np.ndarray
    adjusted: np.ndarray
    report: EquilibriumReport
    thetas: np.ndarray
    adjusted_raw: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    labels: Optional[List[str]] = None
    group_reports: Optional[Dict[str, GroupReport]] = None
    extras: Dict[str, object] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.y.shape[0]

    def columns(self) -> List[str]:
        cols = ["t", "f", "y", "adjustment", "adjusted"]
        if self.adjusted_raw is not None:
            cols.append("adjusted_raw")
        if self.z is not None:
            cols += [f"group:{lab}" for lab in self.labels]
        return cols

    def rows(self):
        for i in range(self.T):
            row = [i + 1, self.f[i], self.y[i], self.adjustment[i], self.adjusted[i]]
            if self.adjusted_raw is not None:
                row.append(self.adjusted_raw[i])
            if self.z is not None:
                row += list(self.z[i])
            yield row


# ---------------------------------------------------------------- helpers


def _resolve_b(resid: np.ndarray, b: Optional[float]) -> float:
    observed = float(np.max(np.abs(resid))) if resid.size else 0.0
    if b is None:
        return observed
    if not b >= 0:
        raise ValueError("b must be nonnegative")
    if observed > b * (1 + 1e-12):
        t = int(np.argmax(np.abs(resid) > b)) + 1
        raise ValueError(f"record {t}: |y - f| exceeds the supplied bound b={b}")
    return float(b)


def _telescoping(G: np.ndarray, thetas: np.ndarray, eta: float) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    th = np.asarray(thetas, dtype=float)
    if th.ndim == 1:
        th = th[:, None]
    T = G.shape[0]
    if T == 0:
        return np.zeros(0)
    if not eta > 0:
        return np.full(T, np.nan)
    Ts = np.arange(1, T + 1)[:, None]
    lhs = np.cumsum(G, axis=0) / Ts
    rhs = (th[0][None, :] - th[1:]) / (eta * Ts)
    return np.linalg.norm(lhs - rhs, axis=1)


def _delta_for(eta: float, delta: Optional[float]) -> float:
    if delta is None:
        delta = default_delta(eta) if eta > 0 else float("nan")
    if not (eta > 0 and delta_admissible(eta, delta)):
        warnings.warn(
            f"eta={eta} with delta={delta} violates eta <= 2(1-delta)/(1+delta)^2; bound not guaranteed",
            GuaranteeWarning,
            stacklevel=3,
        )
    return delta


def _check_eta(eta: float):
    if not (eta >= 0 and math.isfinite(eta)):
        raise ValueError(f"eta must be finite and nonnegative, got {eta}")


def _group_reports(
    z: np.ndarray,
    labels: Sequence[str],
    err: np.ndarray,
    bound_id: Optional[str],
    params: dict,
) -> Dict[str, GroupReport]:
    T = z.shape[0]
    out = {}
    for j, lab in enumerate(labels):
        member = z[:, j] != 0
        counts = np.cumsum(member)
        sums = np.cumsum(np.where(member, err * z[:, j], 0.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            series = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        n = int(counts[-1]) if T else 0
        bound = sat = None
        if bound_id is not None and T:
            bound = bound_eval(T, bound_id, dict(params, counts=counts))
            active = counts > 0
            sat = within_bound(np.abs(series[active]), bound[active])
        out[lab] = GroupReport(
            label=lab,
            count=n,
            bias=None if n == 0 else float(series[-1]),
            bias_series=series,
            bound_series=bound,
            satisfied=sat,
            sublinear=n > 0 and n < math.sqrt(T),
        )
    return out


def _resolve_lam(lam: Union[float, str], T: int) -> float:
    if isinstance(lam, str):
        key = lam.replace(" ", "").lower()
        if key == "1/t":
            return 1.0 / T
        if key in ("1/sqrt(t)", "1/sqrtt"):
            return 1.0 / math.sqrt(T)
        return float(lam)
    return float(lam)


# ---------------------------------------------------------------- debiasing


def debias_regression(
    stream: Stream,
    eta: float,
    b: Optional[float] = None,
    delta: Optional[float] = None,
    theta1: float = 0.0,
) -> PipelineResult:
    """Additive online bias correction under squared loss.

    ``b`` bounds ``|y - f|`` (observed maximum when omitted). ``delta`` defaults
    to the largest value admissible for ``eta``.
    """
    _check_eta(eta)
    T = stream.T
    f, y = stream.f, stream.y
    b = _resolve_b(y - f, b)
    theta = float(theta1)
    thetas = np.empty(T + 1)
    thetas[0] = theta
    adj = np.empty(T)
    out = np.empty(T)
    grads = np.empty(T)
    for t in range(T):
        pred = f[t] + theta
        g = pred - y[t]
        adj[t] = theta
        out[t] = pred
        grads[t] = g
        theta = theta - eta * g
        thetas[t + 1] = theta
    rep = report_from_grads(grads)
    rep.identity_residual = _telescoping(grads, thetas, eta)
    extras = {"b": b}
    if T and eta > 0:
        dl = _delta_for(eta, delta)
        extras["delta"] = dl
        extras["guarantee_valid"] = bool(delta_admissible(eta, dl))
        if theta1 == 0:
            bnd = bound_eval(T, "squared_bias", {"eta": eta, "b": b, "delta": dl})
        else:
            bnd = bound_eval(T, "squared_avg_grad", {"eta": eta, "b": b, "delta": dl, "theta1_norm": abs(theta1)})
        rep.attach_bound(bnd)
    return PipelineResult("debias-regression", f, y, adj, out, rep, thetas[:, None], extras=extras)


def _clip_probs(f: np.ndarray, epsilon: float) -> np.ndarray:
    if not 0 < epsilon < 0.5:
        raise ValueError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    return np.clip(f, epsilon, 1 - epsilon)


def debias_classification(stream: Stream, eta: float, epsilon: float = 0.01, theta1: float = 0.0) -> PipelineResult:
    """Online correction of probabilities with the shifted logistic link.

    Base probabilities are clipped into ``[epsilon, 1 - epsilon]`` first; the
    reported prediction is clamped to [0, 1] while updates use the raw value.
    """
    _check_eta(eta)
    stream.check_classification()
    p = _clip_probs(stream.f, epsilon)
    y = stream.y
    T = stream.T
    theta = float(theta1)
    thetas = np.empty(T + 1)
    thetas[0] = theta
    adj = np.empty(T)
    raw = np.empty(T)
    grads = np.empty(T)
    for t in range(T):
        a = 2.0 * _sig(theta) - 1.0
        pred = p[t] + a
        g = pred - y[t]
        adj[t] = a
        raw[t] = pred
        grads[t] = g
        theta = theta - eta * g
        thetas[t + 1] = theta
    rep = report_from_grads(grads)
    rep.identity_residual = _telescoping(grads, thetas, eta)
    if T and eta > 0:
        if theta1 == 0:
            bnd = bound_eval(T, "logistic_bias", {"eta": eta, "epsilon": epsilon})
        else:
            bnd = bound_eval(T, "logistic_avg_grad", {"eta": eta, "epsilon": epsilon, "theta1_norm": abs(theta1)})
        rep.attach_bound(bnd)
    return PipelineResult(
        "debias-classification",
        p,
        y,
        adj,
        np.clip(raw, 0.0, 1.0),
        rep,
        thetas[:, None],
        adjusted_raw=raw,
        extras={"epsilon": epsilon},
    )


# ---------------------------------------------------------------- multigroup


def _attach_disjoint_bound(rep: EquilibriumReport, groups: Dict[str, GroupReport], z: np.ndarray, per_group: np.ndarray):
    # each coordinate of the average gradient is (T_j/T) times its group bias,
    # so it is bounded by the group numerator over eta*T
    active = np.cumsum(z != 0, axis=0) > 0
    bnd = np.sqrt((active * per_group[:, None] ** 2).sum(axis=1))
    rep.attach_bound(bnd)


def multigroup_regression(
    stream: Stream,
    eta: float,
    b: Optional[float] = None,
    delta: Optional[float] = None,
) -> PipelineResult:
    """Simultaneous debiasing over groups: linear GLM on group indicators."""
    _check_eta(eta)
    stream.check_groups()
    T, d = stream.T, stream.d
    f, y, z = stream.f, stream.y, stream.z
    b = _resolve_b(y - f, b)
    theta = np.zeros(d)
    thetas = np.empty((T + 1, d))
    thetas[0] = theta
    adj = np.empty(T)
    out = np.empty(T)
    err = np.empty(T)
    grads = np.empty((T, d))
    for t in range(T):
        zt = z[t]
        a = float(zt @ theta)
        pred = f[t] + a
        e = pred - y[t]
        g = zt * e
        adj[t] = a
        out[t] = pred
        err[t] = e
        grads[t] = g
        theta = theta - eta * g
        thetas[t + 1] = theta
    rep = report_from_grads(grads)
    rep.identity_residual = _telescoping(grads, thetas, eta)
    extras: Dict[str, object] = {"b": b}
    bound_id = None
    params: dict = {}
    if stream.disjoint and eta > 0 and T:
        dl = _delta_for(eta, delta)
        extras["delta"] = dl
        bound_id = "squared_groupwise_bias"
        params = {"eta": eta, "b": b, "delta": dl}
    groups = _group_reports(z, stream.labels, err, bound_id, params)
    if bound_id is not None:
        per = bound_eval(T, bound_id, dict(params, counts=np.ones(T)))[0] / np.arange(1, T + 1)
        _attach_disjoint_bound(rep, groups, z, per)
    return PipelineResult(
        "multigroup-regression", f, y, adj, out, rep, thetas, z=z, labels=stream.labels,
        group_reports=groups, extras=extras,
    )


def multigroup_classification(stream: Stream, eta: float, epsilon: float = 0.01) -> PipelineResult:
    """Simultaneous probability debiasing over groups."""
    _check_eta(eta)
    stream.check_groups()
    stream.check_classification()
    T, d = stream.T, stream.d
    p = _clip_probs(stream.f, epsilon)
    y, z = stream.y, stream.z
    theta = np.zeros(d)
    thetas = np.empty((T + 1, d))
    thetas[0] = theta
    adj = np.empty(T)
    raw = np.empty(T)
    err = np.empty(T)
    grads = np.empty((T, d))
    for t in range(T):
        zt = z[t]
        a = 2.0 * _sig(float(zt @ theta)) - 1.0
        pred = p[t] + a
        e = pred - y[t]
        g = zt * e
        adj[t] = a
        raw[t] = pred
        err[t] = e
        grads[t] = g
        theta = theta - eta * g
        thetas[t + 1] = theta
    rep = report_from_grads(grads)
    rep.identity_residual = _telescoping(grads, thetas, eta)
    bound_id = None
    params: dict = {}
    if stream.disjoint and eta > 0 and T:
        bound_id = "logistic_groupwise_bias"
        params = {"eta": eta, "epsilon": epsilon}
    groups = _group_reports(z, stream.labels, err, bound_id, params)
    if bound_id is not None:
        per = bound_eval(T, bound_id, dict(params, counts=np.ones(T)))[0] / np.arange(1, T + 1)
        _attach_disjoint_bound(rep, groups, z, per)
    return PipelineResult(
        "multigroup-classification", p, y, adj, np.clip(raw, 0.0, 1.0), rep, thetas,
        adjusted_raw=raw, z=z, labels=stream.labels, group_reports=groups, extras={"epsilon": epsilon},
    )


# ---------------------------------------------------------------- decorrelation


def covariance_series(resid, z) -> np.ndarray:
    """``|| (1/t) sum_{s<=t} resid_s z_s ||`` for every prefix ``t``."""
    resid = np.asarray(resid, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != resid.shape[0]:
        raise ValueError("residuals and features are misaligned")
    if resid.size == 0:
        return np.zeros(0)
    prod = resid[:, None] * z
    avg = np.cumsum(prod, axis=0) / np.arange(1, resid.size + 1)[:, None]
    return np.linalg.norm(avg, axis=1)


def multiaccuracy_sup(resid, z, norm_cap: float = 1.0) -> float:
    """Largest average correlation of the residuals with any linear map of norm at most ``norm_cap``."""
    resid = np.asarray(resid, dtype=float).reshape(-1)
    if resid.size == 0:
        return 0.0
    return float(covariance_series(resid, z)[-1]) * norm_cap


def decorrelate_ridge(
    stream: Stream,
    eta: float,
    lam: Union[float, str] = "1/T",
    b: Optional[float] = None,
    c: Optional[float] = None,
) -> PipelineResult:
    """Ridge-penalized squared-loss steps on ``f + z.theta``; reports residual-feature covariance."""
    _check_eta(eta)
    if stream.z is None:
        raise ValueError("decorrelation needs feature vectors z")
    T, d = stream.T, stream.d
    f, y, z = stream.f, stream.y, stream.z
    lam = _resolve_lam(lam, max(T, 1))
    if not lam > 0:
        raise ValueError("lambda must be positive")
    b = _resolve_b(y - f, b)
    znorm = float(np.max(np.linalg.norm(z, axis=1))) if T else 0.0
    if c is None:
        c = znorm
    elif znorm > c * (1 + 1e-12):
        raise ValueError(f"feature norm {znorm} exceeds c={c}")
    if eta > 0 and not eta < 1.0 / (lam + c * c / 2):
        raise ValueError(f"eta={eta} inadmissible: need eta < 1/(lambda + c^2/2) = {1.0 / (lam + c * c / 2)}")
    theta = np.zeros(d)
    thetas = np.empty((T + 1, d))
    thetas[0] = theta
    adj = np.empty(T)
    out = np.empty(T)
    err = np.empty(T)
    full = np.empty((T, d))
    for t in range(T):
        zt = z[t]
        a = float(zt @ theta)
        pred = f[t] + a
        e = pred - y[t]
        g = zt * e + lam * theta
        adj[t] = a
        out[t] = pred
        err[t] = e
        full[t] = g
        theta = theta - eta * g
        thetas[t + 1] = theta
    cov = covariance_series(err, z)
    rep = EquilibriumReport(t=np.arange(1, T + 1), avg_grad_norm=cov)
    rep.identity_residual = _telescoping(full, thetas, eta)
    if T and eta > 0:
        rep.attach_bound(bound_eval(T, "squared_ridge_covariance", {"eta": eta, "lam": lam, "c": c, "b": b}))
    return PipelineResult(
        "decorrelate-ridge", f, y, adj, out, rep, thetas, z=z, labels=stream.labels,
        extras={"lam": lam, "b": b, "c": c, "residual": err},
    )


def decorrelate_lasso_logistic(
    stream: Stream,
    eta: float,
    lam: Union[float, str] = "1/sqrt(T)",
    c: Optional[float] = None,
) -> PipelineResult:
    """Lasso-penalized logistic steps on ``p + 2 sigma(z.theta) - 1``; reports covariance."""
    _check_eta(eta)
    if stream.z is None:
        raise ValueError("decorrelation needs feature vectors z")
    stream.check_classification()
    T, d = stream.T, stream.d
    p, y, z = stream.f, stream.y, stream.z
    lam = _resolve_lam(lam, max(T, 1))
    if not lam > 0:
        raise ValueError("lambda must be positive")
    znorm = float(np.max(np.linalg.norm(z, axis=1))) if T else 0.0
    if c is None:
        c = znorm
    elif znorm > c * (1 + 1e-12):
        raise ValueError(f"feature norm {znorm} exceeds c={c}")
    theta = np.zeros(d)
    thetas = np.empty((T + 1, d))
    thetas[0] = theta
    adj = np.empty(T)
    raw = np.empty(T)
    err = np.empty(T)
    full = np.empty((T, d))
    for t in range(T):
        zt = z[t]
        a = 2.0 * _sig(float(zt @ theta)) - 1.0
        pred = p[t] + a
        e = pred - y[t]
        g = zt * e + lam * np.sign(theta)
        adj[t] = a
        raw[t] = pred
        err[t] = e
        full[t] = g
        theta = theta - eta * g
        thetas[t + 1] = theta
    cov = covariance_series(err, z)
    rep = EquilibriumReport(t=np.arange(1, T + 1), avg_grad_norm=cov)
    rep.identity_residual = _telescoping(full, thetas, eta)
    if T and eta > 0:
        rep.attach_bound(bound_eval(T, "logistic_lasso_covariance", {"eta": eta, "lam": lam, "c": c, "d": d}))
    return PipelineResult(
        "decorrelate-lasso", p, y, adj, np.clip(raw, 0.0, 1.0), rep, thetas, adjusted_raw=raw,
        z=z, labels=stream.labels, extras={"lam": lam, "c": c, "residual": err},
    )


# ---------------------------------------------------------------- quantiles


def pinball(u, tau: float):
    """Quantile loss of the residual ``u = y - q``."""
    u = np.asarray(u, dtype=float)
    return np.where(u >= 0, tau * u, (tau - 1.0) * u)


def quantile_track(stream: Stream, tau: float, eta: float, b: Optional[float] = None, theta1: float = 0.0) -> PipelineResult:
    """Online quantile tracking of ``y`` around ``f``.

    The step uses ``1{y <= f + theta} - tau``, the same indicator that the
    coverage counter sums, so coverage and the average gradient coincide.
    """
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    _check_eta(eta)
    T = stream.T
    f, y = stream.f, stream.y
    b = _resolve_b(y - f, b)
    theta = float(theta1)
    thetas = np.empty(T + 1)
    thetas[0] = theta
    adj = np.empty(T)
    out = np.empty(T)
    cover = np.empty(T, dtype=np.int64)
    grads = np.empty(T)
    for t in range(T):
        q = f[t] + theta
        c = 1 if y[t] <= q else 0
        g = c - tau
        adj[t] = theta
        out[t] = q
        cover[t] = c
        grads[t] = g
        theta = theta - eta * g
        thetas[t + 1] = theta
    rep = report_from_grads(grads)
    rep.identity_residual = _telescoping(grads, thetas, eta)
    if T and eta > 0:
        if theta1 == 0:
            rep.attach_bound(bound_eval(T, "quantile_coverage", {"eta": eta, "b": b}))
        else:
            rep.attach_bound(bound_eval(T, "quantile_avg_grad", {"eta": eta, "b": b, "theta1_norm": abs(theta1)}))
    counts = np.cumsum(cover)
    coverage = counts / np.arange(1, T + 1) if T else np.zeros(0)
    extras = {
        "b": b,
        "tau": tau,
        "cover": cover,
        "coverage": coverage,
        "quantile_loss": float(np.mean(pinball(y - out, tau))) if T else float("nan"),
    }
    return PipelineResult("track-quantile", f, y, adj, out, rep, thetas[:, None], extras=extras)


@dataclass
class EnsembleState:
    experts: np.ndarray
    weights: np.ndarray
    nus: np.ndarray
    nu_ens: float
    tau: float

    def __post_init__(self):
        self.experts = np.asarray(self.experts, dtype=float).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.nus = np.asarray(self.nus, dtype=float).reshape(-1)
        K = self.experts.shape[0]
        if K < 1:
            raise ValueError("need at least one expert")
        if self.weights.shape[0] != K or self.nus.shape[0] != K:
            raise ValueError("experts, weights and rates differ in length")
        if np.any(~(self.nus > 0)) or not self.nu_ens > 0:
            raise ValueError("all rates must be positive")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")


def quantile_ensemble(
    stream: Stream,
    tau: float,
    nus: Sequence[float],
    nu_ens: float,
    theta1: Optional[Sequence[float]] = None,
) -> PipelineResult:
    """Quantile experts with different rates, mixed by multiplicative weights.

    Each expert tracks its own coverage error; the weights follow the
    gradient of the quantile loss of the mixed prediction.
    """
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    nus = np.asarray(nus, dtype=float).reshape(-1)
    K = nus.shape[0]
    if K < 1:
        raise ValueError("need at least one expert")
    th0 = np.zeros(K) if theta1 is None else np.asarray(theta1, dtype=float).reshape(-1)
    state = EnsembleState(th0, np.full(K, 1.0 / K), nus, float(nu_ens), tau)
    T = stream.T
    f, y = stream.f, stream.y
    theta = state.experts.copy()
    logw = np.log(state.weights)
    w = state.weights.copy()
    floor = math.log(1e-300)
    experts_hist = np.empty((T + 1, K))
    experts_hist[0] = theta
    weights_hist = np.empty((T + 1, K))
    weights_hist[0] = w
    adj = np.empty(T)
    out = np.empty(T)
    cover = np.empty(T, dtype=np.int64)
    expert_out = np.empty((T, K))
    grads = np.empty(T)
    for t in range(T):
        a = float(w @ theta)
        q = f[t] + a
        c = 1 if y[t] <= q else 0
        sigma = c - tau
        qk = f[t] + theta
        sk = np.where(y[t] <= qk, 1.0, 0.0) - tau
        adj[t] = a
        out[t] = q
        cover[t] = c
        grads[t] = sigma
        expert_out[t] = qk
        logz = logw - nu_ens * theta * sigma
        top = logz.max()
        logw = logz - (top + math.log(float(np.exp(logz - top).sum())))
        if np.any(logw < floor):
            logw = np.maximum(logw, floor)
            top = logw.max()
            logw = logw - (top + math.log(float(np.exp(logw - top).sum())))
        w = np.exp(logw)
        theta = theta - nus * sk
        experts_hist[t + 1] = theta
        weights_hist[t + 1] = w
    rep = report_from_grads(grads)
    rep.identity_residual = np.full(T, np.nan)
    counts = np.cumsum(cover)
    Ts = np.arange(1, T + 1)
    expert_cover = (y[:, None] <= expert_out).astype(float) if T else np.zeros((0, K))
    extras = {
        "tau": tau,
        "cover": cover,
        "coverage": counts / Ts if T else np.zeros(0),
        "weights": weights_hist,
        "experts": experts_hist,
        "expert_predictions": expert_out,
        "expert_coverage": expert_cover.mean(axis=0) if T else np.full(K, np.nan),
        "quantile_loss": float(np.mean(pinball(y - out, tau))) if T else float("nan"),
        "expert_quantile_loss": pinball(y[:, None] - expert_out, tau).mean(axis=0) if T else np.full(K, np.nan),
    }
    return PipelineResult("ensemble", f, y, adj, out, rep, experts_hist, extras=extras)


# ---------------------------------------------------------------- Elo


@dataclass
class EloTable:
    scores: np.ndarray
    counts: np.ndarray
    signed_residual: np.ndarray
    raw_residual: np.ndarray
    names: Optional[List[str]] = None

    @property
    def M(self) -> int:
        return self.scores.shape[0]

    def _per_count(self, v):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, v / np.maximum(self.counts, 1), np.nan)

    @property
    def signed_bias(self) -> np.ndarray:
        return self._per_count(self.signed_residual)

    @property
    def raw_bias(self) -> np.ndarray:
        return self._per_count(self.raw_residual)

    def rows(self):
        names = self.names or [str(m) for m in range(self.M)]
        sb, rb = self.signed_bias, self.raw_bias
        for m in range(self.M):
            yield [names[m], self.scores[m], int(self.counts[m]),
                   None if self.counts[m] == 0 else sb[m], None if self.counts[m] == 0 else rb[m]]


@dataclass
class EloResult:
    table: EloTable
    thetas: np.ndarray
    probs: np.ndarray
    battles: np.ndarray
    report: EquilibriumReport
    grads: np.ndarray
    eta: float

    def averaged_scores(self, burn_in: float = 0.5) -> np.ndarray:
        """Mean of the score iterates after discarding the first ``burn_in`` fraction.

        Constant-rate Elo scores keep fluctuating around their limit; the tail
        average is the stable estimate of the underlying strengths.
        """
        if not 0 <= burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        start = int(burn_in * (self.thetas.shape[0] - 1)) + 1
        return self.thetas[min(start, self.thetas.shape[0] - 1):].mean(axis=0)

    def signed_bias_at(self, T: int) -> np.ndarray:
        """Per-model signed residual over the first ``T`` battles divided by appearances."""
        a, b = self.battles[:T, 0], self.battles[:T, 1]
        M = self.table.M
        counts = np.bincount(a, minlength=M) + np.bincount(b, minlength=M)
        s = self.grads[:T].sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, s / np.maximum(counts, 1), np.nan)


def elo_run(
    battles,
    M: int,
    eta: float,
    lam: float = 0.0,
    schedule=None,
    names: Optional[List[str]] = None,
    theta1=None,
) -> EloResult:
    """Online Elo on ``(a, b, y)`` battles with 0-based model indices.

    ``y = 1`` means model ``b`` won; ``p = sigma(theta_b - theta_a)``. An
    optional lasso term ``lam * sign(theta)`` is added to the step, and a
    :class:`~gradeq.descent.StepSchedule` can replace the constant rate.
    """
    battles = np.asarray(battles, dtype=float)
    if battles.size == 0:
        battles = battles.reshape(0, 3)
    if battles.ndim != 2 or battles.shape[1] != 3:
        raise ValueError("battles must be rows of (a, b, y)")
    if M < 1:
        raise ValueError("need at least one model")
    _check_eta(eta)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    T = battles.shape[0]
    ab = battles[:, :2]
    if np.any(ab != np.round(ab)) or np.any(ab < 0) or np.any(ab >= M):
        t = int(np.nonzero(np.any((ab != np.round(ab)) | (ab < 0) | (ab >= M), axis=1))[0][0]) + 1
        raise ValueError(f"battle {t}: competitor index outside 0..{M - 1}")
    idx = ab.astype(np.int64)
    if np.any(idx[:, 0] == idx[:, 1]):
        t = int(np.nonzero(idx[:, 0] == idx[:, 1])[0][0]) + 1
        raise ValueError(f"battle {t}: a model cannot face itself")
    ys = battles[:, 2]
    if np.any((ys != 0) & (ys != 1)):
        t = int(np.nonzero((ys != 0) & (ys != 1))[0][0]) + 1
        raise ValueError(f"battle {t}: outcome must be 0 or 1")
    theta = np.zeros(M) if theta1 is None else np.asarray(theta1, dtype=float).reshape(M).copy()
    thetas = np.empty((T + 1, M))
    thetas[0] = theta
    probs = np.empty(T)
    grads = np.zeros((T, M))
    counts = np.zeros(M, dtype=np.int64)
    signed = np.zeros(M)
    rawr = np.zeros(M)
    for t in range(T):
        a, b = int(idx[t, 0]), int(idx[t, 1])
        yt = ys[t]
        p = _sig(theta[b] - theta[a])
        r = p - yt
        step = eta if schedule is None else schedule.eta_at(t + 1)
        grads[t, a] = -r
        grads[t, b] = r
        probs[t] = p
        counts[a] += 1
        counts[b] += 1
        signed[a] -= r
        signed[b] += r
        rawr[a] += r
        rawr[b] += r
        if lam > 0:
            theta = theta - step * (grads[t] + lam * np.sign(theta))
        else:
            theta[a] = theta[a] + step * r
            theta[b] = theta[b] - step * r
        thetas[t + 1] = theta
    rep = report_from_grads(grads) if T else EquilibriumReport(np.zeros(0, int), np.zeros(0))
    if T and schedule is None and lam == 0:
        rep.identity_residual = _telescoping(grads, thetas, eta)
        if eta > 0:
            nxt = np.linalg.norm(thetas[1:], axis=1)
            rep.attach_bound(bound_eval(T, "gd_avg_grad", {"eta": eta, "theta1_norm": float(np.linalg.norm(thetas[0])),
                                                          "theta_next_norm": nxt}))
    table = EloTable(theta.copy(), counts, signed, rawr, names)
    return EloResult(table, thetas, probs, idx, rep, grads, eta)
