"""BEAST-family simulation of repeated choice with feedback.

Each simulated agent faces the problem for 25 trials. On every trial each
option is valued as its best EV estimate plus the mean of ``kappa`` mental
draws plus Gaussian noise, and the higher value is chosen. Mental draws use
one of four tools (unbiased, equal weighting, sign, contingent pessimism).
From trial 6 on the agent sees both payoffs after each choice, and a mental
draw is replaced by a draw from that experience with probability rising
linearly to 1 over the learning horizon (shorter for ambiguous problems).

Noise shrinks on problems that look trivial (subjective dominance) and grows
on complex ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .problems import ChoiceProblem, OutcomeDistribution, couple, joint_distribution
from .rng import substream

N_TRIALS = 25
N_BLOCKS = 5
NO_FEEDBACK_TRIALS = 5
AGENT_CHUNK = 1000


class Tool(enum.IntEnum):
    UNBIASED = 0
    UNIFORM = 1
    SIGN = 2
    PESSIMISM = 3


@dataclass(frozen=True)
class BeastParams:
    sigma: float = 2.0
    kappa: int = 5
    tool_probs: tuple[float, float, float, float] = (0.4, 0.2, 0.2, 0.2)
    w_amb: float = 0.3
    t_learn: float = 15.0
    t_learn_amb: float = 8.0
    psi_trivial: float = 0.25
    psi_complex: float = 1.5
    n_agents: int = 4000

    def __post_init__(self):
        object.__setattr__(self, "tool_probs", tuple(float(p) for p in self.tool_probs))
        if len(self.tool_probs) != 4 or min(self.tool_probs) < 0 or abs(sum(self.tool_probs) - 1) > 1e-12:
            raise ContractError("tool_probs must be four non-negative weights summing to 1")
        if self.sigma < 0 or int(self.kappa) < 1 or int(self.n_agents) < 1:
            raise ContractError("sigma must be >= 0, kappa and n_agents >= 1")
        if not 0 <= self.w_amb <= 1:
            raise ContractError("w_amb must lie in [0, 1]")
        if self.t_learn < 1 or self.t_learn_amb < 1 or self.t_learn_amb > self.t_learn:
            raise ContractError("learning horizons must satisfy 1 <= t_learn_amb <= t_learn")
        if not (0 < self.psi_trivial <= 1) or self.psi_complex < 1:
            raise ContractError("need psi_trivial in (0, 1] and psi_complex >= 1")
        object.__setattr__(self, "kappa", int(self.kappa))
        object.__setattr__(self, "n_agents", int(self.n_agents))


def ambiguous_prior(dist_b: OutcomeDistribution, w_amb: float) -> OutcomeDistribution:
    """Weight ``w_amb`` on the worst outcome, the rest spread evenly over all outcomes."""
    n = len(dist_b)
    probs = np.full(n, (1.0 - w_amb) / n)
    probs[0] += w_amb
    return OutcomeDistribution(dist_b.payoffs.copy(), probs / probs.sum())


def perceived_distributions(problem: ChoiceProblem, w_amb: float = BeastParams.w_amb
                            ) -> tuple[OutcomeDistribution, OutcomeDistribution]:
    if problem.amb:
        return problem.dist_a, ambiguous_prior(problem.dist_b, w_amb)
    return problem.dist_a, problem.dist_b


def subjective_dominance(problem: ChoiceProblem, w_amb: float = BeastParams.w_amb) -> str | None:
    """'A' or 'B' when the EV rule and the equal-weighting rule agree and the
    favoured option is never worse in any joint realisation; otherwise None."""
    da, db = perceived_distributions(problem, w_amb)
    d_ev = db.mean - da.mean
    d_unif = db.payoffs.mean() - da.payoffs.mean()
    if d_ev > 0 and d_unif > 0:
        favoured = "B"
    elif d_ev < 0 and d_unif < 0:
        favoured = "A"
    else:
        return None
    a, b, _ = joint_distribution(da, db, problem.corr)
    no_regret = np.all(b >= a) if favoured == "B" else np.all(a >= b)
    return favoured if no_regret else None


def is_complex(problem: ChoiceProblem) -> bool:
    na, nb = len(problem.dist_a), len(problem.dist_b)
    return (na >= 2 and nb >= 3) or (na >= 3 and nb >= 2)


def noise_multiplier(problem: ChoiceProblem, params: BeastParams) -> float:
    if subjective_dominance(problem, params.w_amb) is not None:
        return params.psi_trivial
    if is_complex(problem):
        return params.psi_complex
    return 1.0


def mental_draw(problem: ChoiceProblem, tool: Tool, buffer: Sequence[tuple[float, float]],
                rng: np.random.Generator, w_amb: float = BeastParams.w_amb,
                experience: bool = False) -> tuple[float, float]:
    """One mental draw ``(value_a, value_b)``.

    With ``experience`` set and a non-empty buffer, the unbiased and sign tools
    resample a remembered joint outcome instead of the description.
    """
    da, db = perceived_distributions(problem, w_amb)
    tool = Tool(tool)
    if tool is Tool.PESSIMISM:
        return da.min, db.min
    if tool is Tool.UNIFORM:
        return (float(da.payoffs[rng.integers(len(da))]), float(db.payoffs[rng.integers(len(db))]))
    if experience and len(buffer) > 0:
        a, b = buffer[rng.integers(len(buffer))]
    else:
        a, b = couple(da, db, problem.corr, rng.random(), rng.random())
        a, b = float(a), float(b)
    if tool is Tool.SIGN:
        r = _payoff_range(problem)
        return float(np.sign(a) * r), float(np.sign(b) * r)
    return a, b


def _payoff_range(problem: ChoiceProblem) -> float:
    return float(max(np.abs(problem.dist_a.payoffs).max(), np.abs(problem.dist_b.payoffs).max()))


def experience_weights(params: BeastParams, amb: bool) -> np.ndarray:
    """Per-trial probability that a mental draw comes from experience."""
    horizon = params.t_learn_amb if amb else params.t_learn
    t = np.arange(1, N_TRIALS + 1)
    return np.minimum(1.0, np.maximum(0, t - NO_FEEDBACK_TRIALS) / horizon)


def simulate_agents(problem: ChoiceProblem, params: BeastParams, rng: np.random.Generator,
                    n: int) -> np.ndarray:
    """Boolean (n, 25) matrix of B choices for ``n`` independent agents.

    Feedback does not depend on choices (both payoffs are shown), so all
    trials are drawn at once.
    """
    da_true, db_true = problem.dist_a, problem.dist_b
    da, db = perceived_distributions(problem, params.w_amb)
    T, K = N_TRIALS, params.kappa
    n_fb = T - NO_FEEDBACK_TRIALS

    fa, fb = couple(da_true, db_true, problem.corr, rng.random((n, n_fb)), rng.random((n, n_fb)))
    tool_u = rng.random((n, T, K), dtype=np.float32)
    u1 = rng.random((n, T, K), dtype=np.float32)
    u2 = rng.random((n, T, K), dtype=np.float32)
    exp_u = rng.random((n, T, K), dtype=np.float32)
    noise = rng.standard_normal((n, T, 2))
    coin = rng.random((n, T))

    tools = np.searchsorted(np.cumsum(params.tool_probs)[:-1], tool_u, side="right")
    va, vb = couple(da, db, problem.corr, u1, u2)
    sign = tools == Tool.SIGN
    if sign.any():
        r = _payoff_range(problem)
        va = np.where(sign, np.sign(va) * r, va)
        vb = np.where(sign, np.sign(vb) * r, vb)
    uniform = tools == Tool.UNIFORM
    va = np.where(uniform, da.payoffs[np.minimum((u1 * len(da)).astype(np.intp), len(da) - 1)], va)
    vb = np.where(uniform, db.payoffs[np.minimum((u2 * len(db)).astype(np.intp), len(db) - 1)], vb)
    pess = tools == Tool.PESSIMISM
    va = np.where(pess, da.min, va)
    vb = np.where(pess, db.min, vb)

    # buffer at trial t holds the feedback of trials 6..t-1; given exp_u < theta,
    # exp_u / theta is again uniform and picks the remembered trial
    buf_len = np.maximum(0, np.arange(1, T + 1) - NO_FEEDBACK_TRIALS - 1)
    theta = experience_weights(params, problem.amb)
    live = np.nonzero(buf_len > 0)[0]
    th = theta[live][None, :, None]
    e = exp_u[:, live, :]
    use_exp = e < th
    held = buf_len[live][None, :, None]
    idx = np.minimum((e / th * held).astype(np.intp), held - 1)
    rows = np.arange(n)[:, None, None]
    va[:, live, :] = np.where(use_exp, fa[rows, idx], va[:, live, :])
    vb[:, live, :] = np.where(use_exp, fb[rows, idx], vb[:, live, :])

    scale = params.sigma * noise_multiplier(problem, params)
    value_a = da.mean + va.mean(axis=2) + scale * noise[..., 0]
    value_b = db.mean + vb.mean(axis=2) + scale * noise[..., 1]
    return (value_b > value_a) | ((value_b == value_a) & (coin < 0.5))


def simulate_agent(problem: ChoiceProblem, params: BeastParams, rng: np.random.Generator) -> np.ndarray:
    """25 binary choices (1 = B) of a single agent."""
    return simulate_agents(problem, params, rng, 1)[0].astype(int)


def block_rates(choices: np.ndarray) -> np.ndarray:
    """Average B-choice rate per 5-trial block over agents."""
    counts = choices.reshape(len(choices), N_BLOCKS, -1).sum(axis=(0, 2))
    return counts / (choices.shape[0] * (N_TRIALS // N_BLOCKS))


def beast_predict(problem: ChoiceProblem, params: BeastParams, seed: int) -> np.ndarray:
    """Five block rates averaged over ``params.n_agents`` simulated agents.

    Agents are simulated in fixed chunks, chunk ``c`` drawing from substream
    ``(seed, problem.id, c)``, so the output does not depend on scheduling.
    """
    total = np.zeros(N_BLOCKS)
    n_left, chunk = params.n_agents, 0
    while n_left > 0:
        m = min(AGENT_CHUNK, n_left)
        choices = simulate_agents(problem, params, substream(seed, problem.id, chunk), m)
        total += choices.reshape(m, N_BLOCKS, -1).sum(axis=(0, 2))
        n_left -= m
        chunk += 1
    return total / (params.n_agents * (N_TRIALS // N_BLOCKS))


def beast_predict_many(problems: Sequence[ChoiceProblem], params: BeastParams, seed: int,
                       workers: int = 1) -> dict[str, np.ndarray]:
    if workers <= 1:
        return {p.id: beast_predict(p, params, seed) for p in problems}
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rates = list(pool.map(lambda p: beast_predict(p, params, seed), problems))
    return {p.id: r for p, r in zip(problems, rates)}
