import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from choicepred.beast import BeastParams
from choicepred.errors import ContractError, UndefinedEnoError
from choicepred.evaluation import (
    COMPARISON_MODELS, COMPETITION_ANCHORS, EnoCurve, LearnerSettings, bootstrap_diff_ci,
    default_curve, eno, eno_or_nan, fit_eno_curve, risk_subset, run_ablation, run_comparison, score,
)
from choicepred.features import ForesightSpec
from choicepred.learn import BoostConfig, ForestConfig
from choicepred.problems import generate_problems

# published (MSE x 100, ENO) rows of the competition leaderboard
LEADERBOARD = [(0.569, 23.7), (0.589, 22.7), (0.605, 22.0), (0.613, 21.7), (0.614, 21.6),
               (0.621, 21.4), (0.640, 20.6), (0.648, 20.3), (0.663, 19.8), (0.668, 19.6),
               (0.672, 19.5), (0.692, 18.8), (0.702, 18.5), (0.706, 18.4), (0.741, 17.4),
               (0.749, 17.2), (0.823, 15.4)]
# published (MSE, ENO) pairs of the single-model comparison on the risk-only subset
COMPARISON_PAIRS = [(0.0100, 15.24), (0.0092, 16.75), (0.0198, 7.24), (0.0190, 7.57),
                    (0.1406, 0.97), (0.0232, 6.13), (0.0434, 3.20), (0.0311, 4.51),
                    (0.2378, 0.57), (0.0375, 3.72)]


# -- ENO -----------------------------------------------------------------------

def test_anchor_solve():
    c = default_curve()
    assert c.floor == pytest.approx(9.77e-4, rel=1e-3)
    assert c.scale == pytest.approx(0.1117, rel=1e-3)
    for m, e in COMPETITION_ANCHORS:
        assert eno(m, c) == pytest.approx(e, rel=1e-12)


@pytest.mark.parametrize("mse100,expected", LEADERBOARD)
def test_leaderboard_rows(mse100, expected):
    assert eno(mse100 / 100, default_curve()) == pytest.approx(expected, rel=0.02)


def test_comparison_refit():
    c = fit_eno_curve(COMPARISON_PAIRS)
    assert eno(0.0092, c) == pytest.approx(16.75, rel=0.03)
    for m, e in COMPARISON_PAIRS:
        assert eno(m, c) == pytest.approx(e, rel=0.03)


def test_eno_identities():
    c = EnoCurve(0.001, 0.1)
    assert eno(0.101, c) == pytest.approx(1.0)
    assert eno(0.011, c) == pytest.approx(10.0)
    with pytest.raises(UndefinedEnoError):
        eno(0.001, c)
    assert math.isnan(eno_or_nan(0.0005, c))


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_eno_decreasing(m1, m2):
    c = default_curve()
    if m1 < m2:
        assert eno(m1, c) >= eno(m2, c)


@given(st.tuples(st.floats(1e-3, 0.05), st.floats(1, 40)), st.tuples(st.floats(1e-3, 0.05), st.floats(1, 40)))
def test_two_point_fit_exact(p1, p2):
    if abs(p1[0] - p2[0]) < 1e-6 or abs(1 / p1[1] - 1 / p2[1]) < 1e-6:
        return
    a = (p1[0] - p2[0]) / (1 / p1[1] - 1 / p2[1])
    if a <= 0:
        return  # MSE must fall as ENO rises for a valid curve
    c = fit_eno_curve([p1, p2])
    for m, e in (p1, p2):
        assert c.mse(e) == pytest.approx(m, rel=1e-9, abs=1e-12)


def test_curve_contract():
    with pytest.raises(ContractError):
        fit_eno_curve([(0.01, 3.0)])
    with pytest.raises(ContractError):
        fit_eno_curve([(0.01, 3.0), (0.01, 4.0)])
    with pytest.raises(ContractError):
        EnoCurve(0.0, -1.0)


# -- scoring -------------------------------------------------------------------

def rates(n, seed):
    rng = np.random.default_rng(seed)
    return {f"q{i}": rng.random(5) * 0.8 + 0.1 for i in range(n)}


def test_perfect_predictions():
    obs = rates(60, 0)
    rep = score(obs, obs)
    assert rep.mse == 0 and rep.n_problems == 60
    assert math.isnan(rep.eno)


def test_constant_offset():
    obs = rates(60, 1)
    rep = score({k: v + 0.1 for k, v in obs.items()}, obs)
    assert rep.mse == pytest.approx(0.01, abs=1e-12)
    assert rep.squared_errors.shape == (60, 5)
    assert rep.eno == pytest.approx(eno(0.01, default_curve()))


def test_score_order_invariant():
    obs, pred = rates(30, 2), rates(30, 3)
    shuffled = dict(reversed(list(pred.items())))
    assert score(shuffled, obs).mse == score(pred, obs).mse
    assert score(shuffled, obs).to_csv() == score(pred, obs).to_csv()


def test_score_errors():
    obs = rates(5, 4)
    with pytest.raises(ContractError):
        score(dict(list(obs.items())[:4]), obs)
    bad = dict(obs)
    bad["q0"] = np.array([0.1, 0.2, 1.2, 0.3, 0.4])
    with pytest.raises(ContractError):
        score(bad, obs)
    with pytest.raises(ContractError):
        score({"q0": [0.1] * 4}, {"q0": [0.1] * 4})


def test_noise_never_helps_on_average():
    obs, pred = rates(60, 5), rates(60, 6)
    base = score(pred, obs).mse
    worse = 0
    for s in range(20):
        rng = np.random.default_rng(s)
        noisy = {k: np.clip(v + rng.normal(0, 0.05, 5), 0, 1) for k, v in pred.items()}
        worse += score(noisy, obs).mse
    assert worse / 20 >= base


# -- bootstrap -----------------------------------------------------------------

def test_bootstrap_identical_errors():
    e = np.random.default_rng(0).random(60)
    assert bootstrap_diff_ci(e, e) == (0.0, 0.0)


def test_bootstrap_shift_excludes_zero():
    e = np.random.default_rng(1).random(60) * 0.01
    lo, hi = bootstrap_diff_ci(e, e + 0.005 + np.random.default_rng(2).normal(0, 0.001, 60))
    assert 0 < lo < hi


def test_bootstrap_deterministic_and_nested():
    rng = np.random.default_rng(3)
    a, b = rng.random(60) * 0.01, rng.random(60) * 0.01
    assert bootstrap_diff_ci(a, b, seed=4) == bootstrap_diff_ci(a, b, seed=4)
    lo95, hi95 = bootstrap_diff_ci(a, b, level=0.95, seed=4)
    lo99, hi99 = bootstrap_diff_ci(a, b, level=0.99, seed=4)
    assert lo99 <= lo95 <= hi95 <= hi99


def test_bootstrap_contract():
    with pytest.raises(ContractError):
        bootstrap_diff_ci([], [])
    with pytest.raises(ContractError):
        bootstrap_diff_ci([1.0, 2.0], [1.0])
    with pytest.raises(ContractError):
        bootstrap_diff_ci([1.0], [1.0], level=1.0)


# -- protocols -----------------------------------------------------------------

FAST = LearnerSettings(ForestConfig(n_trees=25), BoostConfig(n_rounds=60), n_runs=1)


@pytest.fixture(scope="module")
def synthetic():
    probs = generate_problems(60, seed=21)
    truth = BeastParams(n_agents=300)
    from choicepred.beast import beast_predict_many
    y = beast_predict_many(probs, truth, 5)
    data = [(p, y[p.id]) for p in probs]
    return data[:45], data[45:], y


def test_ablation_table_shape(synthetic):
    train, test, y = synthetic
    res = run_ablation(train, test, y, settings=FAST, seeds=(0, 1))
    assert [(c, a) for c, a, _, _ in res.summary()] == [
        (c, a) for a in ("forest", "boost") for c in ("full", "insights_only", "foresight_only")]
    assert len(res.rows) == 12
    assert res.to_csv().splitlines()[0] == "condition,algorithm,mse,eno"
    again = run_ablation(train, test, y, settings=FAST, seeds=(0, 1))
    assert again.to_csv() == res.to_csv()


def test_ablation_with_true_foresight_reaches_noise_floor(synthetic):
    train, test, y = synthetic
    res = run_ablation(train, test, y, algorithms=("forest",), settings=FAST,
                       conditions=("foresight_only", "insights_only"))
    assert res.mse("forest", "foresight_only") < res.mse("forest", "insights_only")


def test_ablation_rejects_overlap(synthetic):
    train, test, y = synthetic
    with pytest.raises(ContractError):
        run_ablation(train, train[:3], y, settings=FAST)


def test_comparison_rows(synthetic):
    train, test, _ = synthetic
    grids = {"cpt_stochastic": {"mu": [0.1, 0.25]}, "cpt_deterministic": {}, "dbs": {}, "ph": {}}
    res = run_comparison(train, test, seed=1, grids=grids, beast_params=BeastParams(n_agents=300),
                         settings=LearnerSettings(ForestConfig(n_trees=20), n_runs=2), n_sim=200)
    assert [r.model for r in res.rows] == list(COMPARISON_MODELS)
    assert all(0 <= r.mse_raw <= 1 and 0 <= r.mse_foresight <= 1 for r in res.rows)
    assert res.to_csv().splitlines()[0] == "model,mse_raw,eno_raw,mse_foresight,eno_foresight"
    assert all(not p.amb for p, _ in risk_subset(train))
