import math

import numpy as np
import pytest

from gradeq import datagen as G
from gradeq.losses import sigmoid
from gradeq.pipelines import quantile_track, Stream


def test_iid_gaussian_deterministic():
    spec = G.StreamSpec("iid-gaussian", 5, 7, params={"mu": 0.0, "sigma": 1.0})
    a, b = G.generate(spec), G.generate(spec)
    assert a == b
    assert [r.y for r in a] != [r.y for r in G.generate(G.StreamSpec("iid-gaussian", 5, 8))]


def test_uses_philox():
    spec = G.StreamSpec("iid-gaussian", 4, 7)
    ref = np.random.Generator(np.random.Philox(7)).standard_normal(4)
    np.testing.assert_array_equal([r.y for r in G.generate(spec)], ref)


def test_bradley_terry_win_rate():
    spec = G.StreamSpec("bradley-terry", 100_000, 1, params={"strengths": [0.0, 1.0]})
    b = G.generate_battles(spec)
    # y = 1 when model b wins; orient every battle as "model 1 wins"
    wins = np.where(b[:, 1] == 1, b[:, 2], 1 - b[:, 2])
    assert wins.mean() == pytest.approx(float(sigmoid(1.0)), abs=0.005)


def test_bradley_terry_win_matrix_within_three_se():
    s = np.array([0.0, 0.7, -0.4])
    spec = G.StreamSpec("bradley-terry", 300_000, 2, params={"strengths": s.tolist()})
    b = G.generate_battles(spec).astype(int)
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            m = (b[:, 0] == i) & (b[:, 1] == j)
            n = int(m.sum())
            assert n >= 40_000
            p = float(sigmoid(s[j] - s[i]))
            se = math.sqrt(p * (1 - p) / n)
            assert abs(b[m, 2].mean() - p) <= 3 * se


def test_battles_never_self_play():
    b = G.generate_battles(G.StreamSpec("bradley-terry", 5000, 3, params={"strengths": [0, 1, 2, 3]}))
    assert np.all(b[:, 0] != b[:, 1])
    assert set(np.unique(b[:, :2])) == {0.0, 1.0, 2.0, 3.0}


def test_disjoint_groups_one_bit():
    spec = G.StreamSpec("grouped", 1000, 4, params={"assignment": "disjoint", "d": 2, "proportions": [0.5, 0.5]})
    st = G.generate_stream(spec)
    assert st.disjoint
    np.testing.assert_array_equal(st.z.sum(axis=1), 1.0)
    assert 0.45 < st.z[:, 0].mean() < 0.55


def test_overlapping_groups_rates():
    spec = G.StreamSpec("grouped", 20_000, 5, params={"assignment": "overlapping", "d": 3, "probs": [0.1, 0.5, 0.9]})
    st = G.generate_stream(spec)
    assert not st.disjoint
    np.testing.assert_allclose(st.z.mean(axis=0), [0.1, 0.5, 0.9], atol=0.015)


def test_group_offsets_injected():
    spec = G.StreamSpec("grouped", 20_000, 6, params={"assignment": "disjoint", "d": 2, "offsets": [0.0, 2.0],
                                                      "sigma": 0.5})
    st = G.generate_stream(spec)
    assert np.mean(st.y[st.z[:, 1] == 1]) == pytest.approx(2.0, abs=0.03)
    assert np.mean(st.y[st.z[:, 0] == 1]) == pytest.approx(0.0, abs=0.03)


def test_grouped_bernoulli_miscalibration():
    spec = G.StreamSpec("grouped", 40_000, 7, params={"base": "bernoulli", "assignment": "disjoint", "d": 2,
                                                      "offsets": [0.0, 0.1]})
    st = G.generate_stream(spec)
    for j, off in enumerate([0.0, 0.1]):
        m = st.z[:, j] == 1
        assert np.mean(st.y[m] - st.f[m]) == pytest.approx(off, abs=0.01)
    assert set(np.unique(st.y)) == {0.0, 1.0}


@pytest.mark.parametrize("kind, params", [
    ("iid-gaussian", {"sigma": 3.0}),
    ("piecewise-shift", {"segments": [[100, 0, 1], [100, 4, 2]]}),
    ("drifting-mean", {"rate": 0.05}),
    ("uniform", {"half_width": 5.0}),
    ("drastic-drop", {}),
])
def test_clipping_respects_bound(kind, params):
    spec = G.StreamSpec(kind, 200, 8, b=1.0, params=params)
    st = G.generate_stream(spec)
    assert np.max(np.abs(st.y - st.f)) <= 1.0


def test_bounded_scores():
    spec = G.StreamSpec("iid-gaussian", 1000, 9, params={"sigma": 4.0})
    s = G.bounded_scores(spec, 1.0)
    assert np.max(np.abs(s)) <= 1.0
    with pytest.raises(ValueError):
        G.bounded_scores(spec, 0.0)


def test_uniform_scores_coverage_gap():
    spec = G.StreamSpec("uniform", 5000, 10)
    s = G.bounded_scores(spec, 1.0)
    eta = 0.05
    res = quantile_track(Stream(np.zeros(s.size), s), 0.9, eta, b=1.0)
    gap = np.abs(res.extras["coverage"] - 0.9)
    assert np.all(gap <= (eta + 1) / (eta * np.arange(1, s.size + 1)) * (1 + 1e-12))


def test_constant_scores_oscillate_with_width_eta():
    s = np.full(200, 0.3)
    eta = 0.1
    res = quantile_track(Stream(np.zeros(200), s), 0.5, eta)
    th = res.thetas[100:, 0]
    # once the threshold reaches the constant score it alternates by eta/2 steps
    assert th.max() - th.min() <= eta / 2 + 1e-12
    assert np.all(np.abs(th - 0.3) <= eta / 2 + 1e-12)


def test_piecewise_segments():
    spec = G.StreamSpec("piecewise-shift", 20_000, 11, params={"segments": [[10_000, 0, 1], [10_000, 3, 0.5]]})
    st = G.generate_stream(spec)
    assert st.y[:10_000].mean() == pytest.approx(0.0, abs=0.03)
    assert st.y[10_000:].mean() == pytest.approx(3.0, abs=0.02)
    assert st.y[10_000:].std() == pytest.approx(0.5, abs=0.02)


def test_drastic_drop_preset():
    spec = G.drastic_drop(10_000, seed=12, mu_after=-2.0, frac_after=0.2, sigma=0.1)
    st = G.generate_stream(spec)
    assert st.y[:8000].mean() == pytest.approx(0.0, abs=0.01)
    assert st.y[8000:].mean() == pytest.approx(-2.0, abs=0.01)


def test_drifting_mean():
    st = G.generate_stream(G.StreamSpec("drifting-mean", 1000, 13, params={"rate": 0.01, "sigma": 0.0}))
    np.testing.assert_allclose(st.y, 0.01 * np.arange(1, 1001))


@pytest.mark.parametrize("kind, length, params, b", [
    ("nope", 10, {}, None),
    ("iid-gaussian", 0, {}, None),
    ("iid-gaussian", 10, {}, -1.0),
    ("piecewise-shift", 10, {"segments": [[5, 0, 1]]}, None),
    ("piecewise-shift", 10, {}, None),
    ("drifting-mean", 10, {}, None),
    ("bernoulli-calibrated", 10, {"p_low": 0.8, "p_high": 0.2}, None),
    ("bradley-terry", 10, {"strengths": [1.0]}, None),
    ("bradley-terry", 10, {"strengths": [0.0, float("inf")]}, None),
    ("grouped", 10, {"d": 2, "proportions": [0.7, 0.7]}, None),
    ("grouped", 10, {"d": 2, "assignment": "overlapping"}, None),
    ("grouped", 10, {"d": 2, "offsets": [1.0]}, None),
    ("grouped", 10, {"d": 2, "base": "poisson"}, None),
])
def test_invalid_specs(kind, length, params, b):
    with pytest.raises(ValueError):
        G.StreamSpec(kind, length, 0, b, params)


def test_spec_dict_round_trip():
    spec = G.StreamSpec("grouped", 30, 14, 2.0, {"d": 2, "offsets": [0.0, 1.0]})
    back = G.StreamSpec.from_dict(spec.to_dict())
    assert back == spec
    a, b = G.generate_stream(back), G.generate_stream(spec)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
    with pytest.raises(ValueError):
        G.StreamSpec.from_dict({"kind": "uniform", "length": 3, "colour": 1})


def test_battles_spec_dispatch():
    bt = G.StreamSpec("bradley-terry", 10, 0, params={"strengths": [0, 1]})
    with pytest.raises(ValueError):
        G.generate_stream(bt)
    with pytest.raises(ValueError):
        G.generate_battles(G.StreamSpec("uniform", 10))


def test_seeds_distinct_and_reproducible():
    a = G.seeds(5, 50)
    assert len(set(a)) == 50
    assert a == G.seeds(5, 50)
    assert a != G.seeds(6, 50)
