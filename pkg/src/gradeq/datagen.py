"""Seeded synthetic streams.

All randomness comes from ``numpy.random.Generator(Philox(seed))``, a
counter-based generator whose output is fixed across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .losses import sigmoid
from .pipelines import Stream, StreamRecord

KINDS = (
    "iid-gaussian",
    "piecewise-shift",
    "drifting-mean",
    "uniform",
    "bernoulli-calibrated",
    "bradley-terry",
    "grouped",
    "drastic-drop",
)


@dataclass
class BattleRecord:
    a: int
    b: int
    y: int


@dataclass
class StreamSpec:
    """What to generate.

    ``params`` by kind (defaults in brackets):

    * iid-gaussian: mu [0], sigma [1], f [0]
    * piecewise-shift: segments, a list of (length, mu, sigma); f [0]
    * drifting-mean: rate, sigma [1], f [0]
    * uniform: half_width [1], f [0]
    * bernoulli-calibrated: p_low [0.05], p_high [0.95], offset [0]
    * bradley-terry: strengths (length M)
    * grouped: base ("gaussian" or "bernoulli"), assignment ("disjoint" or
      "overlapping"), d, proportions (disjoint) or probs (overlapping),
      offsets (per group), labels, plus the base kind's parameters
    * drastic-drop: mu_before [0], mu_after [-2], frac_after [0.1], sigma [1]
    """

    kind: str
    length: int
    seed: int = 0
    b: Optional[float] = None
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown stream kind {self.kind!r}")
        if int(self.length) != self.length or self.length < 1:
            raise ValueError("length must be a positive integer")
        self.length = int(self.length)
        self.seed = int(self.seed)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.b is not None and not self.b > 0:
            raise ValueError("clipping bound b must be positive")
        _validate(self)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "length": self.length, "seed": self.seed, "b": self.b, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "StreamSpec":
        known = {"kind", "length", "seed", "b", "params"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown stream spec keys: {sorted(extra)}")
        return cls(d["kind"], d["length"], d.get("seed", 0), d.get("b"), dict(d.get("params", {})))

    @property
    def is_battles(self) -> bool:
        return self.kind == "bradley-terry"


def _p(spec, key, default=None):
    val = spec.params.get(key, default)
    if val is None:
        raise ValueError(f"{spec.kind} needs parameter {key!r}")
    return val


def _validate(spec: StreamSpec):
    k = spec.kind
    if k in ("iid-gaussian", "drifting-mean", "drastic-drop") and not float(spec.params.get("sigma", 1.0)) >= 0:
        raise ValueError("sigma must be nonnegative")
    if k == "piecewise-shift":
        segs = _p(spec, "segments")
        if not segs:
            raise ValueError("piecewise-shift needs segments")
        total = 0
        for seg in segs:
            n, _, sd = seg
            if int(n) != n or n < 1 or not sd >= 0:
                raise ValueError(f"bad segment {seg}")
            total += int(n)
        if total != spec.length:
            raise ValueError(f"segment lengths sum to {total}, expected {spec.length}")
    if k == "drifting-mean":
        _p(spec, "rate")
    if k == "drastic-drop" and not 0 < float(spec.params.get("frac_after", 0.1)) < 1:
        raise ValueError("frac_after must lie in (0, 1)")
    if k == "bernoulli-calibrated":
        lo, hi = float(spec.params.get("p_low", 0.05)), float(spec.params.get("p_high", 0.95))
        if not 0 <= lo <= hi <= 1:
            raise ValueError("need 0 <= p_low <= p_high <= 1")
    if k == "bradley-terry":
        s = np.asarray(_p(spec, "strengths"), dtype=float)
        if s.ndim != 1 or s.size < 2 or not np.all(np.isfinite(s)):
            raise ValueError("strengths must be a finite vector of length >= 2")
    if k == "grouped":
        base = spec.params.get("base", "gaussian")
        if base not in ("gaussian", "bernoulli"):
            raise ValueError("grouped base must be 'gaussian' or 'bernoulli'")
        assign = spec.params.get("assignment", "disjoint")
        d = int(_p(spec, "d"))
        if d < 1:
            raise ValueError("need d >= 1 groups")
        if assign == "disjoint":
            props = np.asarray(spec.params.get("proportions", [1.0 / d] * d), dtype=float)
            if props.shape != (d,) or np.any(props < 0) or abs(props.sum() - 1) > 1e-9:
                raise ValueError("proportions must be d nonnegative numbers summing to 1")
        elif assign == "overlapping":
            probs = np.asarray(_p(spec, "probs"), dtype=float)
            if probs.shape != (d,) or np.any((probs < 0) | (probs > 1)):
                raise ValueError("probs must be d numbers in [0, 1]")
        else:
            raise ValueError("assignment must be 'disjoint' or 'overlapping'")
        offs = np.asarray(spec.params.get("offsets", [0.0] * d), dtype=float)
        if offs.shape != (d,):
            raise ValueError("offsets must have one entry per group")
        labels = spec.params.get("labels")
        if labels is not None and len(labels) != d:
            raise ValueError("labels must have one entry per group")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _clip(f, y, b):
    if b is None:
        return y
    return f + np.clip(y - f, -b, b)


def _gaussian_like(spec: StreamSpec, rng):
    T = spec.length
    k = spec.kind
    f = np.full(T, float(spec.params.get("f", 0.0)))
    noise = rng.standard_normal(T)
    if k == "iid-gaussian":
        mu = np.full(T, float(spec.params.get("mu", 0.0)))
        sd = np.full(T, float(spec.params.get("sigma", 1.0)))
    elif k == "piecewise-shift":
        mu = np.concatenate([np.full(int(n), float(m)) for n, m, _ in spec.params["segments"]])
        sd = np.concatenate([np.full(int(n), float(s)) for n, _, s in spec.params["segments"]])
    elif k == "drifting-mean":
        mu = float(spec.params["rate"]) * np.arange(1, T + 1)
        sd = np.full(T, float(spec.params.get("sigma", 1.0)))
    else:
        after = max(1, int(round(T * float(spec.params.get("frac_after", 0.1)))))
        mu = np.full(T, float(spec.params.get("mu_before", 0.0)))
        mu[T - after:] = float(spec.params.get("mu_after", -2.0))
        sd = np.full(T, float(spec.params.get("sigma", 1.0)))
    y = f + mu + sd * noise
    return f, y


def _bernoulli(spec: StreamSpec, rng, offsets=None):
    T = spec.length
    lo, hi = float(spec.params.get("p_low", 0.05)), float(spec.params.get("p_high", 0.95))
    p = lo + (hi - lo) * rng.random(T)
    u = rng.random(T)
    shift = float(spec.params.get("offset", 0.0)) if offsets is None else offsets
    truth = np.clip(p + shift, 0.0, 1.0)
    y = (u < truth).astype(float)
    return p, y


def _groups(spec: StreamSpec, rng):
    T = spec.length
    d = int(spec.params["d"])
    if spec.params.get("assignment", "disjoint") == "disjoint":
        props = np.asarray(spec.params.get("proportions", [1.0 / d] * d), dtype=float)
        idx = rng.choice(d, size=T, p=props / props.sum())
        z = np.zeros((T, d))
        z[np.arange(T), idx] = 1.0
    else:
        probs = np.asarray(spec.params["probs"], dtype=float)
        z = (rng.random((T, d)) < probs[None, :]).astype(float)
    return z


def generate(spec: StreamSpec) -> Union[List[StreamRecord], List[BattleRecord]]:
    """Records for ``spec``; identical output for identical spec and seed."""
    rng = rng_for(spec.seed)
    T = spec.length
    if spec.kind == "bradley-terry":
        s = np.asarray(spec.params["strengths"], dtype=float)
        M = s.size
        a = rng.integers(0, M, size=T)
        off = rng.integers(1, M, size=T)
        b = (a + off) % M
        u = rng.random(T)
        prob = sigmoid(s[b] - s[a])
        y = (u < prob).astype(int)
        return [BattleRecord(int(i), int(j), int(v)) for i, j, v in zip(a, b, y)]
    z = None
    if spec.kind in ("iid-gaussian", "piecewise-shift", "drifting-mean", "drastic-drop"):
        f, y = _gaussian_like(spec, rng)
    elif spec.kind == "uniform":
        hw = float(spec.params.get("half_width", 1.0))
        f = np.full(T, float(spec.params.get("f", 0.0)))
        y = f + rng.uniform(-hw, hw, size=T)
    elif spec.kind == "bernoulli-calibrated":
        f, y = _bernoulli(spec, rng)
    else:
        z = _groups(spec, rng)
        offs = np.asarray(spec.params.get("offsets", [0.0] * z.shape[1]), dtype=float)
        shift = z @ offs
        if spec.params.get("base", "gaussian") == "gaussian":
            f = np.full(T, float(spec.params.get("f", 0.0)))
            y = f + float(spec.params.get("mu", 0.0)) + shift + float(spec.params.get("sigma", 1.0)) * rng.standard_normal(T)
        else:
            f, y = _bernoulli(spec, rng, offsets=shift)
    if spec.kind not in ("bernoulli-calibrated",) and not (spec.kind == "grouped" and spec.params.get("base") == "bernoulli"):
        y = _clip(f, y, spec.b)
    return [StreamRecord(float(f[t]), float(y[t]), None if z is None else z[t].copy()) for t in range(T)]


def group_labels(spec: StreamSpec) -> Optional[List[str]]:
    if spec.kind != "grouped":
        return None
    d = int(spec.params["d"])
    return list(spec.params.get("labels") or [f"g{j}" for j in range(d)])


def generate_stream(spec: StreamSpec) -> Stream:
    """Column form of :func:`generate` for stream kinds."""
    if spec.is_battles:
        raise ValueError("bradley-terry specs produce battles; use generate_battles")
    recs = generate(spec)
    disjoint = spec.kind == "grouped" and spec.params.get("assignment", "disjoint") == "disjoint"
    return Stream.from_records(recs, labels=group_labels(spec), disjoint=disjoint)


def generate_battles(spec: StreamSpec) -> np.ndarray:
    if not spec.is_battles:
        raise ValueError("not a bradley-terry spec")
    return np.array([(r.a, r.b, r.y) for r in generate(spec)], dtype=float).reshape(-1, 3)


def bounded_scores(spec: StreamSpec, b: float) -> np.ndarray:
    """Scores ``y - f`` of a stream clipped into ``[-b, b]``."""
    if not b > 0:
        raise ValueError("b must be positive")
    st = generate_stream(spec)
    return np.clip(st.y - st.f, -b, b)


def drastic_drop(length: int, seed: int = 0, mu_before: float = 0.0, mu_after: float = -2.0,
                 frac_after: float = 0.1, sigma: float = 1.0, b: Optional[float] = None) -> StreamSpec:
    """Preset: a stable regime followed by an abrupt terminal shift."""
    return StreamSpec("drastic-drop", length, seed, b,
                      {"mu_before": mu_before, "mu_after": mu_after, "frac_after": frac_after, "sigma": sigma})


def seeds(base: int, n: int) -> List[int]:
    """``n`` distinct derived seeds for repeated runs."""
    ss = np.random.SeedSequence(int(base))
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(n)]
