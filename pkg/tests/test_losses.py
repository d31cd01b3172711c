import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradeq import losses as L
from gradeq.losses import LossInstance, RegularizerSpec, RestorativeSpec

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize(
    "loss, theta, expected",
    [
        (LossInstance("squared", y=1.0), 0.0, 0.5),
        (LossInstance("quantile", y=0.0, tau=0.5), 2.0, 1.0),
        (LossInstance("absolute", y=1.0), -2.0, 3.0),
    ],
)
def test_eval_examples(loss, theta, expected):
    assert L.eval(loss, theta) == expected


def test_eval_logistic_matches_high_precision():
    want = float(-0 * 0 + mpmath.log(1 + mpmath.e**0))
    assert L.eval(LossInstance("logistic", y=0.0, a=0.0, b=1.0), 0.0) == pytest.approx(want, abs=1e-15)
    assert want == pytest.approx(0.6931471805599453)


@pytest.mark.parametrize(
    "loss, theta, expected",
    [
        (LossInstance("quantile", y=1.0, tau=0.5), 0.0, [-0.5]),
        (LossInstance("quantile", y=1.0, tau=0.3), 1.0, [-0.3]),
        (LossInstance("squared", y=1.0), 3.0, [2.0]),
        (LossInstance("glm-linear", y=2.0, x=np.array([1.0, 0.0])), np.array([0.0, 5.0]), [-2.0, 0.0]),
        (LossInstance("absolute", y=0.0), 0.0, [0.0]),
    ],
)
def test_subgradient_examples(loss, theta, expected):
    np.testing.assert_array_equal(L.subgradient(loss, theta), expected)


@pytest.mark.parametrize("tau", [0.0, 0.1, 0.5, 0.9, 1.0])
def test_quantile_tie_is_minus_tau(tau):
    y = 0.37
    assert L.subgradient(LossInstance("quantile", y=y, tau=tau), y)[0] == -tau


def test_response_uses_base_prediction():
    loss = LossInstance("squared", y=3.0, f=1.0)
    assert loss.response == 2.0
    assert L.subgradient(loss, 0.5)[0] == -1.5


def _random_loss(kind, rng):
    if kind == "squared":
        return LossInstance("squared", y=rng.normal(), f=rng.normal())
    if kind == "quantile":
        return LossInstance("quantile", y=rng.normal(), tau=rng.uniform())
    if kind == "absolute":
        return LossInstance("absolute", y=rng.normal())
    if kind == "logistic":
        a = rng.uniform(-2, 0)
        b = a + rng.uniform(0.1, 3)
        return LossInstance("logistic", y=rng.uniform(a, b), a=a, b=b)
    x = rng.normal(size=3)
    if kind == "glm-linear":
        return LossInstance("glm-linear", y=rng.normal(), x=x)
    return LossInstance("glm-logistic", y=rng.uniform(-1, 1), x=x, a=-1.0, b=1.0)


@pytest.mark.parametrize("kind", L.LOSS_KINDS)
def test_finite_difference(kind):
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(1000):
        loss = _random_loss(kind, rng)
        th = rng.normal(size=loss.dim) * 3
        if kind in ("quantile", "absolute") and abs(th[0] - loss.response) < 1e-3:
            continue  # kink
        g = L.subgradient(loss, th)
        fd = np.empty(loss.dim)
        for i in range(loss.dim):
            e = np.zeros(loss.dim)
            e[i] = h
            fd[i] = (L.eval(loss, th + e) - L.eval(loss, th - e)) / (2 * h)
        assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(1.0, np.abs(g)))


@pytest.mark.parametrize("kind", L.LOSS_KINDS)
def test_subgradient_inequality(kind):
    rng = np.random.default_rng(1)
    for _ in range(1000):
        loss = _random_loss(kind, rng)
        th = rng.normal(size=loss.dim) * 3
        z = rng.normal(size=loss.dim) * 3
        lhs = L.eval(loss, z)
        rhs = L.eval(loss, th) + float(L.subgradient(loss, th) @ (z - th))
        assert lhs >= rhs - 1e-9 * max(1.0, abs(lhs))


@given(y=finite, tau=st.floats(0, 1), sign=st.sampled_from([-1.0, 1.0]))
def test_quantile_horizon_is_restorative(y, tau, sign):
    h = L.horizon_quantile(y)
    th = sign * (h + 1e-6)
    loss = LossInstance("quantile", y=y, tau=tau)
    assert L.restorative_check(loss, th, RestorativeSpec(h))


@settings(max_examples=300)
@given(frac=st.floats(0.001, 0.999), lo=st.floats(-5, 5), width=st.floats(0.1, 10), sign=st.sampled_from([-1.0, 1.0]))
def test_logistic_horizon_is_restorative(frac, lo, width, sign):
    hi = lo + width
    y = lo + frac * width
    h = L.horizon_logistic(y, lo, hi)
    loss = LossInstance("logistic", y=y, a=lo, b=hi)
    assert L.restorative_check(loss, sign * (h + 1e-6), RestorativeSpec(h))


def test_horizon_examples():
    assert L.horizon_quantile(-3.0) == 3.0
    assert L.horizon_logistic(0.5, 0.0, 1.0) == 0.0
    assert L.horizon_logistic_bounded(0.05, 0.0, 1.0) == pytest.approx(float(mpmath.log(10)), abs=1e-15)
    assert L.horizon_logistic(1.0, 0.0, 1.0) == math.inf


def test_band_horizon_covers_all_interior_responses():
    eps, a, b = 0.05, 0.0, 1.0
    H = L.horizon_logistic_band(eps, a, b)
    ys = np.linspace(a + eps, b - eps, 1001)
    per = np.array([L.horizon_logistic(y, a, b) for y in ys])
    assert np.all(per <= H + 1e-12)
    assert per.max() == pytest.approx(H, abs=1e-12)
    assert H == pytest.approx(math.log(19.0))


def test_closed_form_band_horizon_is_short_at_the_edges():
    # log((b-a)/(2 eps)) undercuts the per-response horizon near the band edges
    eps, a, b = 0.05, 0.0, 1.0
    assert L.horizon_logistic_bounded(eps, a, b) < L.horizon_logistic(a + eps, a, b)
    loss = LossInstance("logistic", y=a + eps, a=a, b=b)
    h = L.horizon_logistic_bounded(eps, a, b)
    assert not L.restorative_check(loss, -(h + 0.1), RestorativeSpec(h))


@pytest.mark.parametrize(
    "loss, theta, spec, eta, expected",
    [
        (LossInstance("quantile", y=0.5, tau=0.5), 2.0, RestorativeSpec(1.0), 0.0, True),
        (LossInstance("squared", y=1.0), 0.5, RestorativeSpec(0.1, "quadratic"), 0.5, False),
        (LossInstance("squared", y=1.0), 0.0, RestorativeSpec(0.1, "quadratic"), 0.5, True),
        (LossInstance("absolute", y=3.0), 0.0, RestorativeSpec(0.5, "constant", 2.0), 0.0, True),
        (LossInstance("squared", y=0.0), 3.0, RestorativeSpec(1.0, "constant", 9.0), 0.0, True),
        (LossInstance("squared", y=0.0), 3.0, RestorativeSpec(1.0, "constant", 9.5), 0.0, False),
    ],
)
def test_restorative_examples(loss, theta, spec, eta, expected):
    assert L.restorative_check(loss, theta, spec, eta) is expected


def test_quadratic_curvature_needs_eta():
    with pytest.raises(L.InvalidLoss):
        L.restorative_check(LossInstance("squared", y=1.0), 5.0, RestorativeSpec(0.1, "quadratic"), 0.0)


def _grid_logistic_inf():
    u = np.linspace(-20, 20, 10**6)
    return float(np.min((L.sigmoid(u) - 1.0) * u))


def test_logistic_infimum_against_grid():
    v = L.infimum_logistic_inner(0.0, 1.0)
    assert v == pytest.approx(-0.2784645, abs=1e-7)
    assert abs(v - _grid_logistic_inf()) <= 1e-6
    assert v >= -0.279


@given(a=st.floats(-10, 10), w=st.floats(1e-3, 10))
def test_logistic_infimum_scale_law(a, w):
    assert L.infimum_logistic_inner(a, a + w) == (a + w - a) * L.infimum_logistic_inner(0.0, 1.0)


def test_logistic_infimum_scaled_example():
    assert L.infimum_logistic_inner(0.0, 2.0) == pytest.approx(-0.5569290, abs=1e-7)


def _grid_squared_inf(a1, a2, b):
    u = np.linspace(-3 * b - 1, 3 * b + 1, 4001)[:, None]
    y = np.linspace(-b, b, 401)[None, :]
    return float(np.min(a1 * (u - y) * u - a2 * (u - y) ** 2))


@pytest.mark.parametrize("a1, a2, b, expected", [(1, 0, 1, -0.25), (2, 1, 0, 0.0), (1, 0.25, 2, -4 / 3)])
def test_squared_infimum(a1, a2, b, expected):
    v = L.infimum_squared_inner(a1, a2, b)
    assert v == pytest.approx(expected, abs=1e-12)
    assert v == pytest.approx(_grid_squared_inf(a1, a2, b), abs=2e-3)
    assert v <= _grid_squared_inf(a1, a2, b) + 1e-12


@pytest.mark.parametrize(
    "kind, lam, theta, expected",
    [
        ("l1", 0.5, [2.0, 0.0, -1.0], [0.5, 0.0, -0.5]),
        ("l2-half", 2.0, [1.0, 1.0], [2.0, 2.0]),
        ("l2-full", 1.0, [3.0], [6.0]),
        ("none", 1.0, [3.0], [0.0]),
    ],
)
def test_regularizer_subgradient(kind, lam, theta, expected):
    np.testing.assert_array_equal(L.regularizer_subgradient(RegularizerSpec(kind, lam), theta), expected)


def test_regularizer_forms_differ_by_two():
    th = np.array([1.0, -2.0])
    half = RegularizerSpec("l2-half", 0.3)
    full = RegularizerSpec("l2-full", 0.3)
    assert full.value(th) == pytest.approx(2 * half.value(th))


def test_set_regularizers():
    ball = RegularizerSpec("l2-ball", radius=1.0)
    assert ball.value(np.array([0.6, 0.8])) == 0.0
    assert ball.value(np.array([1.0, 1.0])) == math.inf
    with pytest.raises(L.InvalidLoss):
        L.regularizer_subgradient(ball, [0.0, 0.0])
    loss = LossInstance("squared", y=1.0, reg=RegularizerSpec("simplex"))
    assert L.subgradient(loss, 0.5)[0] == -0.5


def test_loss_with_penalty_adds_subgradient():
    loss = LossInstance("squared", y=1.0, reg=RegularizerSpec("l1", 0.25))
    assert L.subgradient(loss, 2.0)[0] == 1.25
    assert L.eval(loss, 2.0) == 0.5 + 0.5


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "hinge"},
        {"kind": "quantile", "tau": 1.5},
        {"kind": "logistic", "y": 2.0, "a": 0.0, "b": 1.0},
        {"kind": "logistic", "y": 0.5, "a": 1.0, "b": 1.0},
        {"kind": "glm-linear", "y": 1.0},
        {"kind": "glm-linear", "y": 1.0, "x": [np.nan]},
    ],
)
def test_invalid_losses(kwargs):
    with pytest.raises(L.InvalidLoss):
        LossInstance(**kwargs)


@pytest.mark.parametrize("kwargs", [{"kind": "l3"}, {"kind": "l1", "lam": -1.0}, {"kind": "l2-ball"}])
def test_invalid_regularizers(kwargs):
    with pytest.raises(L.InvalidLoss):
        RegularizerSpec(**kwargs)


def test_theta_dimension_checked():
    with pytest.raises(L.InvalidLoss):
        L.eval(LossInstance("glm-linear", y=1.0, x=[1.0, 2.0]), [1.0])


def test_sigmoid_stable_at_extremes():
    assert L.sigmoid(800.0) == 1.0
    assert L.sigmoid(-800.0) == 0.0
    np.testing.assert_allclose(L.sigmoid(np.array([-1.0, 0.0, 1.0])), [0.2689414213699951, 0.5, 0.7310585786300049])
    assert float(L.softplus(1000.0)) == 1000.0


def test_eval_many_matches_loop():
    rng = np.random.default_rng(2)
    for kind in L.LOSS_KINDS:
        ls = [_random_loss(kind, rng) for _ in range(20)]
        th = rng.normal(size=(20, ls[0].dim))
        np.testing.assert_allclose(L.eval_many(ls, th), [L.eval(l, t) for l, t in zip(ls, th)], rtol=1e-13, atol=1e-13)
    mixed = [LossInstance("squared", y=1.0), LossInstance("absolute", y=0.0)]
    np.testing.assert_array_equal(L.eval_many(mixed, [0.0, -2.0]), [0.5, 2.0])


def test_stack_losses_dimension_mismatch():
    with pytest.raises(L.InvalidLoss):
        L.stack_losses([LossInstance("squared"), LossInstance("glm-linear", x=[1.0, 2.0])])
    assert L.stack_losses([]) == 0
