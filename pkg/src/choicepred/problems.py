"""Choice problems: lottery expansion, payoff distributions, coupling, generation.

A problem pairs two options. Each option pays a lottery with expected value
``H`` with probability ``pH`` and ``L`` otherwise; the lottery spreads ``H``
over ``lot_num`` outcomes with a symmetric (binomial) or skewed (truncated
geometric) shape. Option B may be ambiguous and the two payoffs may be
perfectly correlated (``corr = +1``) or anti-correlated (``corr = -1``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ContractError
from .rng import substream

PH_SET = (0.01, 0.05, 0.1, 0.2, 0.25, 0.4, 0.5, 0.6, 0.75, 0.8, 0.9, 0.95, 0.99, 1.0)
SKEW_DRAWS = (-7, -6, -5, -4, -3, -2, 2, 3, 4, 5, 6, 7, 8)
SYMM_DRAWS = (3, 5, 7, 9)
PAYOFF_MIN, PAYOFF_MAX = -50, 256
MAX_LOT_NUM = 10


class LotShape(str, enum.Enum):
    NONE = "-"
    SYMM = "Symm"
    RSKEW = "R-skew"
    LSKEW = "L-skew"

    @classmethod
    def parse(cls, text: str) -> "LotShape":
        key = text.strip()
        aliases = {"-": cls.NONE, "none": cls.NONE, "": cls.NONE,
                   "symm": cls.SYMM, "r-skew": cls.RSKEW, "rskew": cls.RSKEW,
                   "l-skew": cls.LSKEW, "lskew": cls.LSKEW}
        try:
            return aliases[key.lower()]
        except KeyError:
            raise ValueError(f"unknown LotShape literal {text!r}") from None


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    """Finite payoff distribution, payoffs strictly ascending, probabilities positive."""

    payoffs: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.payoffs.shape != self.probs.shape or self.payoffs.ndim != 1 or len(self.payoffs) == 0:
            raise ContractError("payoffs and probs must be non-empty 1-d arrays of equal length")
        if np.any(np.diff(self.payoffs) <= 0):
            raise ContractError("payoffs must be strictly ascending")
        if np.any(self.probs <= 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ContractError("probabilities must be positive and sum to 1")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "OutcomeDistribution":
        """Build from (payoff, prob) pairs; equal payoffs are merged, zero masses dropped."""
        merged: dict[float, float] = {}
        for x, p in pairs:
            if p < 0:
                raise ContractError(f"negative probability {p}")
            if p > 0:
                merged[float(x)] = merged.get(float(x), 0.0) + float(p)
        xs = sorted(merged)
        return cls(np.array(xs, dtype=float), np.array([merged[x] for x in xs], dtype=float))

    @classmethod
    def point(cls, x: float) -> "OutcomeDistribution":
        return cls(np.array([float(x)]), np.array([1.0]))

    def __eq__(self, other):
        if not isinstance(other, OutcomeDistribution):
            return NotImplemented
        return (len(self.payoffs) == len(other.payoffs)
                and np.array_equal(self.payoffs, other.payoffs)
                and np.allclose(self.probs, other.probs, rtol=0, atol=1e-12))

    __hash__ = None

    def __len__(self):
        return len(self.payoffs)

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.payoffs.tolist(), self.probs.tolist()))

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    @property
    def mean(self) -> float:
        return float(np.dot(self.payoffs, self.probs))

    @property
    def sd(self) -> float:
        var = float(np.dot((self.payoffs - self.mean) ** 2, self.probs))
        return math.sqrt(max(var, 0.0))

    @property
    def min(self) -> float:
        return float(self.payoffs[0])

    @property
    def max(self) -> float:
        return float(self.payoffs[-1])

    @property
    def has_variance(self) -> bool:
        return len(self.payoffs) > 1

    def quantile(self, u):
        """Left-continuous inverse CDF: smallest payoff x with F(x) >= u."""
        idx = np.searchsorted(self.cdf, u, side="left")
        return self.payoffs[np.minimum(idx, len(self.payoffs) - 1)]


def dist_stats(d: OutcomeDistribution) -> tuple[float, float, float, float]:
    """Exact (mean, sd, min, max) of a finite distribution."""
    return d.mean, d.sd, d.min, d.max


def expand_lottery(ev: float, lot_num: int, lot_shape: LotShape | str) -> OutcomeDistribution:
    """Spread ``ev`` over ``lot_num`` outcomes keeping the mean at ``ev``."""
    shape = LotShape.parse(lot_shape) if isinstance(lot_shape, str) else lot_shape
    _check_lottery(lot_num, shape)
    if shape is LotShape.NONE:
        return OutcomeDistribution.point(ev)
    if shape is LotShape.SYMM:
        k = lot_num - 1
        return OutcomeDistribution.from_pairs(
            [(ev - k / 2 + j, math.comb(k, j) / 2**k) for j in range(k + 1)])
    n = lot_num
    masses = [0.5**i for i in range(1, n)] + [0.5 ** (n - 1)]
    if shape is LotShape.RSKEW:
        offsets = [-n - 1 + 2**i for i in range(1, n + 1)]
    else:
        offsets = [n + 1 - 2**i for i in range(1, n + 1)]
    return OutcomeDistribution.from_pairs([(ev + o, m) for o, m in zip(offsets, masses)])


def _check_lottery(lot_num: int, shape: LotShape) -> None:
    if not isinstance(lot_num, (int, np.integer)) or lot_num < 1 or lot_num > MAX_LOT_NUM:
        raise ContractError(f"lot_num must be an integer in 1..{MAX_LOT_NUM}, got {lot_num!r}")
    if (shape is LotShape.NONE) != (lot_num == 1):
        raise ContractError(f"lot_shape {shape.value!r} is incompatible with lot_num={lot_num}")
    if shape is LotShape.SYMM and lot_num % 2 == 0:
        raise ContractError(f"symmetric lotteries need an odd lot_num, got {lot_num}")


@dataclass(frozen=True)
class OptionSpec:
    low: float
    high: float
    p_high: float
    lot_num: int = 1
    lot_shape: LotShape = LotShape.NONE

    def __post_init__(self):
        if isinstance(self.lot_shape, str) and not isinstance(self.lot_shape, LotShape):
            object.__setattr__(self, "lot_shape", LotShape.parse(self.lot_shape))
        if not (0.0 < self.p_high <= 1.0):
            raise ContractError(f"p_high must lie in (0, 1], got {self.p_high}")
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ContractError("payoffs must be finite")
        _check_lottery(self.lot_num, self.lot_shape)

    @property
    def ev(self) -> float:
        return self.p_high * self.high + (1.0 - self.p_high) * self.low


def option_distribution(opt: OptionSpec) -> OutcomeDistribution:
    """Mixture of the lottery (weight pH) and the point mass ``L`` (weight 1 - pH)."""
    lottery = expand_lottery(opt.high, opt.lot_num, opt.lot_shape)
    pairs = [(x, opt.p_high * p) for x, p in lottery.pairs()]
    if opt.p_high < 1.0:
        pairs.append((opt.low, 1.0 - opt.p_high))
    return OutcomeDistribution.from_pairs(pairs)


@dataclass(frozen=True)
class ChoiceProblem:
    option_a: OptionSpec
    option_b: OptionSpec
    amb: bool = False
    corr: int = 0
    id: str = ""

    def __post_init__(self):
        if self.corr not in (-1, 0, 1):
            raise ContractError(f"corr must be -1, 0 or 1, got {self.corr!r}")
        object.__setattr__(self, "amb", bool(self.amb))
        object.__setattr__(self, "corr", int(self.corr))

    @cached_property
    def dist_a(self) -> OutcomeDistribution:
        return option_distribution(self.option_a)

    @cached_property
    def dist_b(self) -> OutcomeDistribution:
        return option_distribution(self.option_b)

    def swapped(self) -> "ChoiceProblem":
        if self.amb:
            raise ContractError("an ambiguous problem cannot swap options (ambiguity belongs to B)")
        return ChoiceProblem(self.option_b, self.option_a, False, self.corr, self.id)

    def with_id(self, new_id: str) -> "ChoiceProblem":
        return ChoiceProblem(self.option_a, self.option_b, self.amb, self.corr, new_id)


@dataclass(frozen=True)
class JointSample:
    payoff_a: float
    payoff_b: float


def couple(dist_a: OutcomeDistribution, dist_b: OutcomeDistribution, corr: int,
           u: np.ndarray, u_b: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised quantile coupling of two marginals."""
    a = dist_a.quantile(u)
    if corr == 1:
        b = dist_b.quantile(u)
    elif corr == -1:
        b = dist_b.quantile(1.0 - np.asarray(u))
    else:
        if u_b is None:
            raise ContractError("independent payoffs (corr = 0) need a second uniform")
        b = dist_b.quantile(u_b)
    return a, b


def sample_joint(problem: ChoiceProblem, u: float, u_b: float | None = None) -> JointSample:
    """One joint payoff realisation from uniform(s) on [0, 1)."""
    if not (0.0 <= u < 1.0) or (u_b is not None and not (0.0 <= u_b < 1.0)):
        raise ContractError("uniforms must lie in [0, 1)")
    if problem.corr != 0 and not (problem.dist_a.has_variance and problem.dist_b.has_variance):
        raise ContractError("correlated payoffs require both options to have variance")
    a, b = couple(problem.dist_a, problem.dist_b, problem.corr, np.float64(u),
                  None if u_b is None else np.float64(u_b))
    return JointSample(float(a), float(b))


def joint_distribution(dist_a: OutcomeDistribution, dist_b: OutcomeDistribution,
                       corr: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact joint law of (payoff_a, payoff_b) under the coupling; returns (a, b, prob)."""
    if corr == 0:
        a = np.repeat(dist_a.payoffs, len(dist_b))
        b = np.tile(dist_b.payoffs, len(dist_a))
        p = np.outer(dist_a.probs, dist_b.probs).ravel()
        return a, b, p
    cuts_b = dist_b.cdf if corr == 1 else 1.0 - dist_b.cdf[:-1][::-1]
    cuts = np.unique(np.concatenate([[0.0], dist_a.cdf, cuts_b, [1.0]]))
    keep = np.concatenate([[True], np.diff(cuts) > 1e-12])
    cuts = cuts[keep]
    cuts[-1] = 1.0
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    a, b = couple(dist_a, dist_b, corr, mids)
    p = np.diff(cuts)
    merged: dict[tuple[float, float], float] = {}
    for x, y, w in zip(a.tolist(), b.tolist(), p.tolist()):
        merged[(x, y)] = merged.get((x, y), 0.0) + w
    keys = list(merged)
    return (np.array([k[0] for k in keys]), np.array([k[1] for k in keys]),
            np.array([merged[k] for k in keys]))


# -- validation ---------------------------------------------------------------

RULES = {
    "a": "an outcome larger than 256 or smaller than -50 has positive probability",
    "b": "options are identically distributed and B is not ambiguous",
    "c": "B is ambiguous but has a single possible outcome",
    "d": "payoffs are correlated but an option has no variance",
}


def validate_problem(problem: ChoiceProblem) -> tuple[str, ...]:
    """Return the violated rejection rules ('a'..'d'); an empty tuple means valid."""
    da, db = problem.dist_a, problem.dist_b
    violations = []
    if min(da.min, db.min) < PAYOFF_MIN or max(da.max, db.max) > PAYOFF_MAX:
        violations.append("a")
    if not problem.amb and da == db:
        violations.append("b")
    if problem.amb and not db.has_variance:
        violations.append("c")
    if problem.corr != 0 and not (da.has_variance and db.has_variance):
        violations.append("d")
    return tuple(violations)


# -- generation ---------------------------------------------------------------

def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass
class GeneratorTrace:
    """Every categorical draw made by the generator, including rejected attempts."""

    attempts: int = 0
    restarts_ev: int = 0
    rejections: dict[str, int] = field(default_factory=lambda: {r: 0 for r in RULES})
    ph_draws: list[float] = field(default_factory=list)
    corr_draws: list[int] = field(default_factory=list)
    amb_draws: list[int] = field(default_factory=list)
    degenerate_a_draws: int = 0


def _draw_payoffs(rng: np.random.Generator, ev: float, p_high: float,
                  round_sure: bool) -> tuple[int | float, int | float]:
    """Draw (L, H) with pH < 1 around target ``ev``."""
    temp = round_half_away(rng.triangular(-50.0, ev, 120.0))
    if temp > ev:
        high = temp
        low = round_half_away((ev - high * p_high) / (1.0 - p_high))
    elif temp < ev:
        low = temp
        high = round_half_away((ev - low * (1.0 - p_high)) / p_high)
    else:
        low = high = round_half_away(ev) if round_sure else ev
    return low, high


def _draw_lottery(rng: np.random.Generator, p_degenerate: float, p_skew: float) -> tuple[int, LotShape]:
    r = rng.random()
    if r < p_degenerate:
        return 1, LotShape.NONE
    if r < p_degenerate + p_skew:
        temp = SKEW_DRAWS[rng.integers(len(SKEW_DRAWS))]
        return (temp, LotShape.RSKEW) if temp > 0 else (-temp, LotShape.LSKEW)
    return SYMM_DRAWS[rng.integers(len(SYMM_DRAWS))], LotShape.SYMM


def _attempt(rng: np.random.Generator, trace: GeneratorTrace,
             force_degenerate_a: bool | None) -> ChoiceProblem | None:
    ev_a_target = int(rng.integers(-10, 31))
    degenerate_a = rng.random() < 0.4 if force_degenerate_a is None else force_degenerate_a
    if degenerate_a:
        trace.degenerate_a_draws += 1
        opt_a = OptionSpec(ev_a_target, ev_a_target, 1.0, 1, LotShape.NONE)
    else:
        p_high = PH_SET[rng.integers(len(PH_SET))]
        trace.ph_draws.append(p_high)
        if p_high == 1.0:
            low = high = ev_a_target
        else:
            low, high = _draw_payoffs(rng, ev_a_target, p_high, round_sure=True)
        lot_num, shape = _draw_lottery(rng, 0.6, 0.2)
        opt_a = OptionSpec(low, high, p_high, lot_num, shape)

    dev = float(np.mean(rng.uniform(-20.0, 20.0, size=5)))
    ev_b_target = opt_a.ev + dev
    if ev_b_target < -50:
        trace.restarts_ev += 1
        return None

    p_high = PH_SET[rng.integers(len(PH_SET))]
    trace.ph_draws.append(p_high)
    if p_high == 1.0:
        low = high = round_half_away(ev_b_target)
    else:
        low, high = _draw_payoffs(rng, ev_b_target, p_high, round_sure=True)
    lot_num, shape = _draw_lottery(rng, 0.5, 0.25)
    opt_b = OptionSpec(low, high, p_high, lot_num, shape)

    r = rng.random()
    corr = 0 if r < 0.8 else (1 if r < 0.9 else -1)
    amb = bool(rng.random() >= 0.8)
    trace.corr_draws.append(corr)
    trace.amb_draws.append(int(amb))
    return ChoiceProblem(opt_a, opt_b, amb, corr)


def generate_problem(rng: np.random.Generator, problem_id: str = "",
                     trace: GeneratorTrace | None = None, max_restarts: int = 10_000,
                     force_degenerate_a: bool | None = None) -> ChoiceProblem:
    """Draw one problem with the selection algorithm, resampling until it is valid.

    ``force_degenerate_a`` pins the first branch of the option-A draw (used to
    exercise that branch deterministically); ``None`` draws it with probability 0.4.
    """
    trace = trace if trace is not None else GeneratorTrace()
    for _ in range(max_restarts + 1):
        trace.attempts += 1
        problem = _attempt(rng, trace, force_degenerate_a)
        if problem is None:
            continue
        bad = validate_problem(problem)
        if not bad:
            return problem.with_id(problem_id)
        for rule in bad:
            trace.rejections[rule] += 1
    raise RuntimeError(f"problem generation exceeded {max_restarts} restarts")


def generate_problems(n: int, seed: int, prefix: str = "p", workers: int = 1,
                      trace: GeneratorTrace | None = None) -> list[ChoiceProblem]:
    """``n`` problems, problem ``k`` drawn from substream ``(seed, k)``."""
    def one(k: int, tr: GeneratorTrace | None = None) -> ChoiceProblem:
        return generate_problem(substream(seed, k), f"{prefix}{k + 1}", trace=tr)

    if trace is not None or workers <= 1:
        return [one(k, trace) for k in range(n)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n)))
