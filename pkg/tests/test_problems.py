
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from choicepred.errors import ContractError
from choicepred.problems import (
    MAX_LOT_NUM, PH_SET, ChoiceProblem, GeneratorTrace, LotShape, OptionSpec,
    OutcomeDistribution, dist_stats, expand_lottery, generate_problem, generate_problems,
    joint_distribution, option_distribution, round_half_away, sample_joint, validate_problem,
)
from choicepred.rng import substream

from oracles import joint_by_grid, lottery_exact


def legal_lotteries():
    out = [(1, LotShape.NONE)]
    out += [(n, LotShape.SYMM) for n in range(3, MAX_LOT_NUM + 1, 2)]
    out += [(n, s) for s in (LotShape.RSKEW, LotShape.LSKEW) for n in range(2, MAX_LOT_NUM + 1)]
    return out


def as_dict(d: OutcomeDistribution) -> dict:
    return dict(d.pairs())


# -- lotteries ---------------------------------------------------------------

def test_degenerate_lottery():
    assert as_dict(expand_lottery(10, 1, "-")) == {10.0: 1.0}


def test_symmetric_three_outcomes():
    assert as_dict(expand_lottery(10, 3, LotShape.SYMM)) == {9.0: 0.25, 10.0: 0.5, 11.0: 0.25}


def test_right_skew_two_outcomes():
    d = expand_lottery(10, 2, LotShape.RSKEW)
    assert as_dict(d) == {9.0: 0.5, 11.0: 0.5}
    assert d.mean == 10


@pytest.mark.parametrize("lot_num,shape", legal_lotteries())
@pytest.mark.parametrize("ev", [-37, 0, 13, 211])
def test_lottery_matches_exact_rational_form(lot_num, shape, ev):
    exact = lottery_exact(ev, lot_num, shape.value)
    got = as_dict(expand_lottery(ev, lot_num, shape))
    assert sorted(got) == sorted(float(x) for x in exact)
    for x, p in exact.items():
        assert got[float(x)] == pytest.approx(float(p), abs=1e-15)
    assert sum(exact.values()) == 1
    assert sum(x * p for x, p in exact.items()) == ev


@pytest.mark.parametrize("lot_num,shape", [(2, "-"), (1, "Symm"), (4, "Symm"), (0, "R-skew"),
                                            (11, "L-skew"), (1, "R-skew")])
def test_illegal_lottery_rejected(lot_num, shape):
    with pytest.raises(ContractError):
        expand_lottery(5, lot_num, shape)


def test_shape_literals_parse():
    assert [LotShape.parse(s) for s in ("-", "Symm", "R-skew", "L-skew")] == list(LotShape)
    with pytest.raises(ValueError):
        LotShape.parse("skewed")


@given(st.integers(-50, 256), st.sampled_from(legal_lotteries()))
def test_lottery_mean_and_mass(ev, combo):
    d = expand_lottery(ev, *combo)
    assert abs(d.probs.sum() - 1) <= 1e-12
    assert abs(d.mean - ev) <= 1e-9
    assert np.all(np.diff(d.payoffs) > 0)


# -- options -----------------------------------------------------------------

def test_option_sure_thing():
    assert as_dict(option_distribution(OptionSpec(0, 10, 1.0))) == {10.0: 1.0}


def test_option_simple_mixture():
    d = option_distribution(OptionSpec(0, 20, 0.5))
    assert as_dict(d) == {0.0: 0.5, 20.0: 0.5}
    assert d.mean == 10


def test_option_merges_coincident_payoff():
    d = option_distribution(OptionSpec(9, 10, 0.5, 3, "Symm"))
    assert as_dict(d) == {9.0: 0.625, 10.0: 0.25, 11.0: 0.125}
    assert d.mean == 9.5


option_specs = st.builds(
    lambda lo, hi, ph, combo: OptionSpec(lo, hi, ph, *combo),
    st.integers(-50, 200), st.integers(-50, 200), st.sampled_from(PH_SET),
    st.sampled_from(legal_lotteries()),
)


@given(option_specs)
def test_option_closure_and_mean(opt):
    d = option_distribution(opt)
    assert abs(d.probs.sum() - 1) <= 1e-12
    assert d.mean == pytest.approx(opt.p_high * opt.high + (1 - opt.p_high) * opt.low, abs=1e-9)


def test_bad_option_fields():
    with pytest.raises(ContractError):
        OptionSpec(0, 1, 0.0)
    with pytest.raises(ContractError):
        OptionSpec(0, 1, 1.2)
    with pytest.raises(ContractError):
        ChoiceProblem(OptionSpec(0, 1, 1.0), OptionSpec(0, 2, 1.0), corr=2)


def test_distribution_contract():
    with pytest.raises(ContractError):
        OutcomeDistribution(np.array([1.0, 1.0]), np.array([0.5, 0.5]))
    with pytest.raises(ContractError):
        OutcomeDistribution(np.array([1.0, 2.0]), np.array([0.5, 0.6]))
    with pytest.raises(ContractError):
        OutcomeDistribution.from_pairs([(1, -0.1), (2, 1.1)])


def test_quantile_is_left_continuous():
    d = OutcomeDistribution.from_pairs([(1, 0.5), (3, 0.5)])
    assert d.quantile(0.0) == 1
    assert d.quantile(0.5) == 1
    assert d.quantile(0.5000001) == 3


# -- stats -------------------------------------------------------------------

@pytest.mark.parametrize("pairs,expected", [
    ([(10, 1.0)], (10, 0, 10, 10)),
    ([(0, 0.5), (20, 0.5)], (10, 10, 0, 20)),
    ([(-1, 0.9), (9, 0.1)], (0, 3, -1, 9)),
])
def test_dist_stats(pairs, expected):
    got = dist_stats(OutcomeDistribution.from_pairs(pairs))
    assert got == pytest.approx(expected, abs=1e-12)


# -- coupling ----------------------------------------------------------------

def test_identical_options_comonotone():
    opt = OptionSpec(0, 20, 0.5, 3, "Symm")
    prob = ChoiceProblem(opt, opt, amb=True, corr=1)
    for u in np.linspace(0, 0.999, 37):
        s = sample_joint(prob, float(u))
        assert s.payoff_a == s.payoff_b


def test_anti_coupling_pairs():
    prob = ChoiceProblem(OptionSpec(1, 3, 0.5), OptionSpec(2, 4, 0.5), corr=-1)
    seen = {}
    grid = (np.arange(1000) + 0.5) / 1000
    for u in grid:
        s = sample_joint(prob, float(u))
        seen[(s.payoff_a, s.payoff_b)] = seen.get((s.payoff_a, s.payoff_b), 0) + 1
    assert seen == {(1.0, 4.0): 500, (3.0, 2.0): 500}


def test_independent_quantiles():
    opt = OptionSpec(0, 20, 0.5)
    prob = ChoiceProblem(opt, opt, amb=True)
    s = sample_joint(prob, 0.2, 0.9)
    assert (s.payoff_a, s.payoff_b) == (0.0, 20.0)


def test_sample_joint_contract():
    sure = OptionSpec(5, 5, 1.0)
    risky = OptionSpec(0, 10, 0.5)
    with pytest.raises(ContractError):
        sample_joint(ChoiceProblem(sure, risky, corr=1), 0.3)
    with pytest.raises(ContractError):
        sample_joint(ChoiceProblem(risky, risky, corr=1), 1.0)
    with pytest.raises(ContractError):
        sample_joint(ChoiceProblem(risky, OptionSpec(1, 9, 0.5)), 0.3)


@settings(max_examples=40, deadline=None)
@given(option_specs, option_specs, st.sampled_from([-1, 0, 1]))
def test_joint_law_against_grid(opt_a, opt_b, corr):
    da, db = option_distribution(opt_a), option_distribution(opt_b)
    a, b, p = joint_distribution(da, db, corr)
    got = {(x, y): w for x, y, w in zip(a.tolist(), b.tolist(), p.tolist())}
    ref = joint_by_grid(da.pairs(), db.pairs(), corr, n=20_000)
    assert abs(sum(got.values()) - 1) <= 1e-12
    assert set(k for k, v in ref.items() if v > 2e-4) <= set(got)
    for k, v in got.items():
        assert ref.get(k, 0.0) == pytest.approx(v, abs=2e-4)
    # marginals reproduce the option distributions
    for vals, dist in ((a, da), (b, db)):
        marg = {}
        for x, w in zip(vals.tolist(), p.tolist()):
            marg[x] = marg.get(x, 0.0) + w
        assert marg.keys() == as_dict(dist).keys()
        for x, w in as_dict(dist).items():
            assert marg[x] == pytest.approx(w, abs=1e-12)


def test_joint_law_fine_grid_exact_case():
    da = option_distribution(OptionSpec(-3, 4, 0.4, 5, "R-skew"))
    db = option_distribution(OptionSpec(2, 1, 0.75, 3, "Symm"))
    for corr in (-1, 1):
        a, b, p = joint_distribution(da, db, corr)
        ref = joint_by_grid(da.pairs(), db.pairs(), corr)
        got = {(x, y): w for x, y, w in zip(a.tolist(), b.tolist(), p.tolist())}
        assert set(got) == {k for k, v in ref.items() if v > 0}
        for k in got:
            assert got[k] == pytest.approx(ref[k], abs=1e-5)


# -- validation --------------------------------------------------------------

def test_validation_rules():
    risky = OptionSpec(0, 10, 0.5)
    assert validate_problem(ChoiceProblem(risky, OptionSpec(0, 20, 0.5))) == ()
    assert "a" in validate_problem(ChoiceProblem(risky, OptionSpec(0, 300, 0.5)))
    assert "a" in validate_problem(ChoiceProblem(risky, OptionSpec(-51, 10, 0.5)))
    assert validate_problem(ChoiceProblem(risky, risky)) == ("b",)
    assert validate_problem(ChoiceProblem(risky, risky, amb=True)) == ()
    assert validate_problem(ChoiceProblem(risky, OptionSpec(3, 3, 1.0), amb=True)) == ("c",)
    assert validate_problem(ChoiceProblem(OptionSpec(5, 5, 1.0), risky, corr=-1)) == ("d",)


def test_swap_keeps_corr_and_refuses_ambiguity():
    p = ChoiceProblem(OptionSpec(0, 10, 0.5), OptionSpec(1, 9, 0.5), corr=-1, id="x")
    q = p.swapped()
    assert (q.option_a, q.option_b, q.corr, q.id) == (p.option_b, p.option_a, -1, "x")
    with pytest.raises(ContractError):
        ChoiceProblem(p.option_a, p.option_b, amb=True).swapped()


# -- generation --------------------------------------------------------------

def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, -2.5, 2.4999, -7.6)] == [1, 2, 3, -1, -3, 2, -8]


def test_forced_degenerate_a():
    for k in range(25):
        p = generate_problem(substream(3, k), force_degenerate_a=True)
        a = p.option_a
        assert a.low == a.high and a.p_high == 1.0 and a.lot_num == 1
        assert float(a.high).is_integer() and -10 <= a.high <= 30


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_generated_problems_valid(seed):
    p = generate_problem(substream(seed, 0))
    assert validate_problem(p) == ()
    assert p.option_a.p_high in PH_SET and p.option_b.p_high in PH_SET
    for opt in (p.option_a, p.option_b):
        assert float(opt.low).is_integer() and float(opt.high).is_integer()


def test_generation_seeded_and_parallel_stable():
    a = generate_problems(40, seed=9)
    b = generate_problems(40, seed=9, workers=4)
    assert a == b
    assert [p.id for p in a] == [f"p{k}" for k in range(1, 41)]
    assert a != generate_problems(40, seed=10)


def test_generator_marginals_2000():
    trace = GeneratorTrace()
    probs = generate_problems(2000, seed=1, trace=trace)
    amb = np.mean([p.amb for p in probs])
    assert abs(amb - 0.2) < 0.02
    assert all(validate_problem(p) == () for p in probs)
    assert set(trace.ph_draws) <= set(PH_SET)
    assert trace.attempts >= 2000
