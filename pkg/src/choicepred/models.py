"""Classical choice models: cumulative prospect theory, the priority heuristic,
decision by sampling, and exhaustive grid-search fitting.

All three predict a single P(B) per problem that is repeated over the five
blocks. They are models of described risk; ambiguous problems are rejected
in ``"strict"`` mode and treated as equiprobable outcomes in ``"permissive"``
mode.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Literal, Mapping, Sequence

import numpy as np

from .errors import ContractError, UnsupportedInputError
from .problems import ChoiceProblem, OutcomeDistribution
from .rng import substream

N_BLOCKS = 5
SHEKELS_PER_POUND = 4.5
Ambiguity = Literal["strict", "permissive"]


def risk_distributions(problem: ChoiceProblem, ambiguity: Ambiguity = "strict"
                       ) -> tuple[OutcomeDistribution, OutcomeDistribution]:
    """Distributions a described-risk model sees; ambiguous B becomes equiprobable."""
    if not problem.amb:
        return problem.dist_a, problem.dist_b
    if ambiguity == "strict":
        raise UnsupportedInputError(f"problem {problem.id!r} is ambiguous; model runs in strict mode")
    xs = problem.dist_b.payoffs
    return problem.dist_a, OutcomeDistribution(xs.copy(), np.full(len(xs), 1.0 / len(xs)))


# -- cumulative prospect theory -----------------------------------------------

@dataclass(frozen=True)
class CptParams:
    alpha: float = 0.88
    gamma: float = 0.89
    delta: float = 0.9
    lam: float = 1.2
    mu: float | None = None

    def __post_init__(self):
        for name in ("alpha", "gamma", "delta", "lam"):
            if not getattr(self, name) > 0:
                raise ContractError(f"CPT parameter {name} must be positive")
        if self.mu is not None and self.mu < 0:
            raise ContractError("CPT logit sensitivity mu must be non-negative")

    @property
    def stochastic(self) -> bool:
        return self.mu is not None


DETERMINISTIC_CPT = CptParams(0.88, 0.89, 0.9, 1.2)
STOCHASTIC_CPT = CptParams(0.91, 0.84, 0.83, 1.14, 0.25)


def cpt_utility(x, alpha: float, lam: float):
    x = np.asarray(x, dtype=float)
    mag = np.abs(x) ** alpha
    out = np.where(x >= 0, mag, -lam * mag)
    return float(out) if out.ndim == 0 else out


def cpt_weight(p, gamma: float, delta: float):
    """Two-parameter weighting: delta p^gamma / (delta p^gamma + (1 - p)^gamma)."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    num = delta * p**gamma
    out = num / (num + (1.0 - p) ** gamma)
    return float(out) if out.ndim == 0 else out


def decision_weights(d: OutcomeDistribution, gamma: float, delta: float) -> np.ndarray:
    """Rank-dependent weights: cumulative from the worst loss, decumulative from the best gain."""
    x, p = d.payoffs, d.probs
    pi = np.empty(len(x))
    k = int(np.searchsorted(x, 0.0, side="left"))  # x[:k] < 0 <= x[k:]
    # the outermost step of each side ends exactly at its side's total mass,
    # so one-sided prospects telescope to w(1) = 1 without rounding drift
    loss_mass = float(p[:k].sum()) if k < len(x) else 1.0
    cum = 0.0
    for i in range(k):
        upper = loss_mass if i == k - 1 else cum + p[i]
        pi[i] = cpt_weight(upper, gamma, delta) - cpt_weight(cum, gamma, delta)
        cum += p[i]
    dec = 0.0
    for j in range(len(x) - 1, k - 1, -1):
        upper = 1.0 - loss_mass if j == k and k > 0 else (1.0 if j == k else dec + p[j])
        pi[j] = cpt_weight(upper, gamma, delta) - cpt_weight(dec, gamma, delta)
        dec += p[j]
    return pi


def cpt_weighted_value(prospect: OutcomeDistribution, params: CptParams) -> float:
    pi = decision_weights(prospect, params.gamma, params.delta)
    return float(np.dot(pi, cpt_utility(prospect.payoffs, params.alpha, params.lam)))


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def cpt_choice(wv_a, wv_b, mu: float | None):
    """P(B) from weighted values; hard choice with 0.5 on ties when ``mu`` is None."""
    wv_a, wv_b = np.asarray(wv_a, float), np.asarray(wv_b, float)
    if mu is None:
        return np.where(wv_b > wv_a, 1.0, np.where(wv_b < wv_a, 0.0, 0.5))
    return _logistic(mu * (wv_b - wv_a))


def cpt_predict(problem: ChoiceProblem, params: CptParams,
                mode: Literal["deterministic", "stochastic"] | None = None,
                ambiguity: Ambiguity = "strict") -> float:
    mode = mode or ("stochastic" if params.stochastic else "deterministic")
    if mode == "stochastic" and params.mu is None:
        raise ContractError("stochastic CPT needs mu")
    da, db = risk_distributions(problem, ambiguity)
    mu = params.mu if mode == "stochastic" else None
    return float(cpt_choice(cpt_weighted_value(da, params), cpt_weighted_value(db, params), mu))


class _PaddedProspects:
    """Prospects padded to a common width for batched weighted values during fitting."""

    def __init__(self, dists: Sequence[OutcomeDistribution]):
        width = max(len(d) for d in dists)
        self.x = np.zeros((len(dists), width))
        self.p = np.zeros((len(dists), width))
        for r, d in enumerate(dists):
            self.x[r, :len(d)] = d.payoffs
            self.p[r, :len(d)] = d.probs
        # padding sits at the right end with payoff 0 and mass 0: it adds nothing
        # to either cumulative sum and u(0) = 0
        self.loss = self.x < 0
        losses = np.where(self.loss, self.p, 0.0)
        gains = np.where(self.loss, 0.0, self.p)
        cum = np.cumsum(losses, axis=1)
        dec = np.cumsum(gains[:, ::-1], axis=1)[:, ::-1]
        zero = np.zeros((len(dists), 1))
        # rank-dependent intervals: (lower, upper] cumulative mass of each outcome
        self.lower = np.where(self.loss, np.hstack([zero, cum[:, :-1]]), np.hstack([dec[:, 1:], zero]))
        upper = np.where(self.loss, cum, dec)
        # pin each side's outermost step to its exact total mass
        loss_mass = cum[:, -1]
        n_loss = self.loss.sum(axis=1)
        rows = np.arange(len(dists))
        has_gain = n_loss < np.array([len(d) for d in dists])
        upper[rows[~has_gain], n_loss[~has_gain] - 1] = 1.0
        upper[rows[has_gain], n_loss[has_gain]] = np.where(n_loss[has_gain] > 0, 1.0 - loss_mass[has_gain], 1.0)
        self.upper = upper

    def weighted_values(self, alpha, gamma, delta, lam) -> np.ndarray:
        pi = cpt_weight(self.upper, gamma, delta) - cpt_weight(self.lower, gamma, delta)
        u = np.abs(self.x) ** alpha * np.where(self.loss, -lam, 1.0)
        return np.sum(pi * u, axis=1)


# -- priority heuristic -------------------------------------------------------

def prominent_round(v: float) -> float:
    """Nearest number in {1, 2, 5} x 10^k; exact midpoints go up."""
    if v <= 0:
        return 0.0
    k = math.floor(math.log10(v))
    cands = [c * 10.0**k for c in (1, 2, 5, 10)]
    best = cands[0]
    for c in cands[1:]:
        if abs(v - c) <= abs(v - best):
            best = c
    return best


_PROB_STEP = 0.1 + 1e-12


def priority_heuristic_predict(problem: ChoiceProblem, ambiguity: Ambiguity = "strict") -> float:
    da, db = risk_distributions(problem, ambiguity)
    ev_a, ev_b = da.mean, db.mean
    if ev_a != 0 and ev_b != 0 and (ev_a > 0) == (ev_b > 0):
        hi, lo = max(abs(ev_a), abs(ev_b)), min(abs(ev_a), abs(ev_b))
        if hi / lo > 2:
            return 1.0 if ev_b > ev_a else 0.0
    aspiration = prominent_round(max(np.abs(da.payoffs).max(), np.abs(db.payoffs).max()) / 10.0)
    if abs(db.min - da.min) > aspiration:
        return 1.0 if db.min > da.min else 0.0
    pa_min, pb_min = da.probs[0], db.probs[0]
    if abs(pb_min - pa_min) > _PROB_STEP:
        return 1.0 if pb_min < pa_min else 0.0
    if abs(db.max - da.max) > aspiration:
        return 1.0 if db.max > da.max else 0.0
    pa_max, pb_max = da.probs[-1], db.probs[-1]
    if abs(pb_max - pa_max) > _PROB_STEP:
        return 1.0 if pb_max > pa_max else 0.0
    return 0.5


# -- decision by sampling -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class DbsContext:
    """Long-term memory: empirical amounts (shekels) and probabilities."""

    amounts: np.ndarray
    probabilities: np.ndarray
    source: str = "default"

    def __post_init__(self):
        if len(self.amounts) == 0 or len(self.probabilities) == 0:
            raise ContractError("decision-by-sampling context lists must be non-empty")


def default_context() -> DbsContext:
    rng = np.random.default_rng(20180724)
    amounts = np.round(rng.lognormal(mean=math.log(20.0), sigma=1.1, size=1000), 2)
    return DbsContext(amounts, np.round(np.linspace(0.01, 0.99, 99), 2), "default")


def _read_column(path: str | Path) -> np.ndarray:
    vals = []
    for line in Path(path).read_text().splitlines():
        cell = line.split(",")[0].strip()
        if not cell or cell.startswith("#"):
            continue
        try:
            vals.append(float(cell))
        except ValueError:
            continue  # header
    return np.array(vals)


def load_context(amounts_csv: str | Path, probabilities_csv: str | Path,
                 currency: Literal["shekel", "pound"] = "shekel") -> DbsContext:
    amounts = _read_column(amounts_csv)
    if currency == "pound":
        amounts = amounts * SHEKELS_PER_POUND
    return DbsContext(amounts, _read_column(probabilities_csv), f"{amounts_csv}|{probabilities_csv}|{currency}")


@dataclass(frozen=True)
class DbsParams:
    outcome_threshold: float = 1.0
    prob_threshold: float = 0.1
    choice_threshold: int = 1
    context: DbsContext = field(default_factory=default_context, compare=False)

    def __post_init__(self):
        if self.outcome_threshold < 0 or self.prob_threshold < 0:
            raise ContractError("thresholds must be non-negative")
        if self.choice_threshold < 1:
            raise ContractError("choice_threshold must be at least 1")


def dbs_predict(problem: ChoiceProblem, params: DbsParams, rng: np.random.Generator,
                n_sim: int = 2000, ambiguity: Ambiguity = "strict", max_steps: int = 500) -> float:
    """Monte Carlo share of simulated choices that go to B.

    Each step picks a target option and attribute (amount or probability) at
    random, then compares one of the target's values with a value from the
    other option or from memory. A comparison is favourable when the target
    beats the comparison by more than the attribute's threshold. Losses are
    compared against the mirrored (negated) memory amounts. A choice is made
    once the net tally reaches ``choice_threshold`` for either option;
    undecided runs after ``max_steps`` count as half.
    """
    if n_sim < 1:
        raise ContractError("n_sim must be at least 1")
    da, db = risk_distributions(problem, ambiguity)
    ctx = params.context
    xa, pa, xb, pb = da.payoffs, da.probs, db.payoffs, db.probs
    tally = np.zeros(n_sim, dtype=np.int64)
    done = np.zeros(n_sim, dtype=bool)
    won_b = np.zeros(n_sim, dtype=bool)
    ct = params.choice_threshold
    for _ in range(max_steps):
        tgt_b = rng.random(n_sim) < 0.5
        use_prob = rng.random(n_sim) < 0.5
        from_memory = rng.random(n_sim) < 0.5
        ut, uc, um = rng.random(n_sim), rng.random(n_sim), rng.random(n_sim)
        ia_t, ib_t = (ut * len(xa)).astype(int), (ut * len(xb)).astype(int)
        ia_c, ib_c = (uc * len(xa)).astype(int), (uc * len(xb)).astype(int)
        t_amt = np.where(tgt_b, xb[ib_t], xa[ia_t])
        t_prob = np.where(tgt_b, pb[ib_t], pa[ia_t])
        c_amt = np.where(tgt_b, xa[ia_c], xb[ib_c])
        c_prob = np.where(tgt_b, pa[ia_c], pb[ib_c])
        m_amt = ctx.amounts[(um * len(ctx.amounts)).astype(int)]
        m_amt = np.where(t_amt < 0, -m_amt, m_amt)
        m_prob = ctx.probabilities[(um * len(ctx.probabilities)).astype(int)]
        target = np.where(use_prob, t_prob, t_amt)
        comp = np.where(use_prob, np.where(from_memory, m_prob, c_prob),
                        np.where(from_memory, m_amt, c_amt))
        thr = np.where(use_prob, params.prob_threshold, params.outcome_threshold)
        fav = (target - comp > thr) & ~done
        tally += np.where(fav, np.where(tgt_b, 1, -1), 0)
        new_b = ~done & (tally >= ct)
        new_a = ~done & (tally <= -ct)
        won_b |= new_b
        done |= new_b | new_a
        if done.all():
            break
    return float((won_b.sum() + 0.5 * (~done).sum()) / n_sim)


# -- static predictions & grid fitting ----------------------------------------

STATIC_KINDS = ("cpt_deterministic", "cpt_stochastic", "ph", "dbs")
MODEL_KINDS = STATIC_KINDS + ("beast",)


def static_predict(kind: str, problem: ChoiceProblem, params, seed: int = 0,
                   ambiguity: Ambiguity = "strict", n_sim: int = 2000) -> float:
    if kind == "cpt_deterministic":
        return cpt_predict(problem, params, "deterministic", ambiguity)
    if kind == "cpt_stochastic":
        return cpt_predict(problem, params, "stochastic", ambiguity)
    if kind == "ph":
        return priority_heuristic_predict(problem, ambiguity)
    if kind == "dbs":
        return dbs_predict(problem, params, substream(seed, "dbs", problem.id), n_sim, ambiguity)
    raise ContractError(f"unknown static model kind {kind!r}")


def default_params(kind: str):
    if kind == "cpt_deterministic":
        return DETERMINISTIC_CPT
    if kind == "cpt_stochastic":
        return STOCHASTIC_CPT
    if kind == "dbs":
        return DbsParams()
    if kind == "ph":
        return None
    if kind == "beast":
        from .beast import BeastParams
        return BeastParams()
    raise ContractError(f"unknown model kind {kind!r}")


DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "cpt_deterministic": {"alpha": [0.7, 0.8, 0.88, 0.95, 1.0], "gamma": [0.6, 0.7, 0.8, 0.89, 1.0],
                          "delta": [0.6, 0.75, 0.9, 1.0, 1.2], "lam": [1.0, 1.2, 1.5, 2.0]},
    "cpt_stochastic": {"alpha": [0.8, 0.91, 1.0], "gamma": [0.7, 0.84, 1.0],
                       "delta": [0.7, 0.83, 1.0], "lam": [1.0, 1.14, 1.5],
                       "mu": [0.05, 0.1, 0.25, 0.5, 1.0]},
    "dbs": {"outcome_threshold": [0.0, 1.0, 5.0], "prob_threshold": [0.0, 0.1, 0.2],
            "choice_threshold": [1, 2, 3]},
    "ph": {},
    "beast": {"sigma": [1.0, 2.0, 4.0], "t_learn": [8.0, 15.0]},
}


@dataclass(frozen=True)
class FitResult:
    kind: str
    params: object
    mse: float
    table: tuple[tuple[dict, float], ...]


def grid_points(grid: Mapping[str, Sequence]) -> list[dict]:
    if any(len(v) == 0 for v in grid.values()):
        raise ContractError("every grid axis needs at least one candidate")
    for name, vals in grid.items():
        for v in vals:
            if not math.isfinite(float(v)):
                raise ContractError(f"grid value {v!r} for {name} is not finite")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _targets(train, blocks) -> np.ndarray:
    y = np.array([np.asarray(r, dtype=float) for _, r in train])
    if y.ndim != 2 or y.shape[1] != N_BLOCKS:
        raise ContractError("observed rates must have five blocks per problem")
    if np.any((y < 0) | (y > 1)):
        raise ContractError("observed rates must lie in [0, 1]")
    return y[:, list(blocks)]


def _wrap_failure(problem: ChoiceProblem, exc: Exception) -> Exception:
    err = type(exc)(f"problem {problem.id!r}: {exc}")
    err.__cause__ = exc
    return err


def fit_grid(kind: str, grid: Mapping[str, Sequence],
             train: Sequence[tuple[ChoiceProblem, Sequence[float]]],
             blocks: Iterable[int] = range(N_BLOCKS), seed: int = 0,
             base=None, ambiguity: Ambiguity = "strict", n_sim: int = 1000,
             n_agents: int | None = None, workers: int = 1) -> FitResult:
    """Exhaustive grid search minimising MSE against observed block rates.

    ``blocks`` holds 0-based block indices to score. Grid axes override fields
    of ``base`` (the model's default parameters when omitted). Ties keep the
    earliest grid point in ``itertools.product`` order.
    """
    blocks = tuple(blocks)
    y = _targets(train, blocks)
    problems = [p for p, _ in train]
    base = base if base is not None else default_params(kind)
    points = grid_points(grid) if grid else [{}]
    table = []

    if kind in ("cpt_deterministic", "cpt_stochastic"):
        for p in problems:
            try:
                risk_distributions(p, ambiguity)
            except Exception as exc:
                raise _wrap_failure(p, exc)
        pairs = [risk_distributions(p, ambiguity) for p in problems]
        pa, pb = _PaddedProspects([a for a, _ in pairs]), _PaddedProspects([b for _, b in pairs])
        cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        for point in points:
            params = replace(base, **point)
            if kind == "cpt_deterministic":
                params = replace(params, mu=None)
            elif params.mu is None:
                raise ContractError("stochastic CPT grid needs mu (in the grid or the base)")
            key = (params.alpha, params.gamma, params.delta, params.lam)
            if key not in cache:
                cache[key] = (pa.weighted_values(*key), pb.weighted_values(*key))
            pred = cpt_choice(*cache[key], params.mu)
            table.append((params, float(np.mean((y - pred[:, None]) ** 2))))
    elif kind in ("ph", "dbs"):
        for point in points:
            params = replace(base, **point) if base is not None else None
            preds = []
            for p in problems:
                try:
                    preds.append(static_predict(kind, p, params, seed, ambiguity, n_sim))
                except Exception as exc:
                    raise _wrap_failure(p, exc)
            table.append((params, float(np.mean((y - np.array(preds)[:, None]) ** 2))))
    elif kind == "beast":
        from .beast import beast_predict_many
        for point in points:
            params = replace(base, **point)
            if n_agents is not None:
                params = replace(params, n_agents=n_agents)
            pred = beast_predict_many(problems, params, seed, workers=workers)
            pred = np.array([pred[p.id] for p in problems])[:, list(blocks)]
            table.append((params, float(np.mean((y - pred) ** 2))))
    else:
        raise ContractError(f"unknown model kind {kind!r}")

    best = min(range(len(table)), key=lambda i: (table[i][1], i))
    return FitResult(kind, table[best][0], table[best][1],
                     tuple((_as_dict(p), m) for p, m in table))


# -- parameter files ----------------------------------------------------------

PARAMS_FORMAT = "1"


def _as_dict(params) -> dict:
    if params is None:
        return {}
    out = {}
    for f in fields(params):
        v = getattr(params, f.name)
        if isinstance(v, DbsContext):
            out[f.name] = v.source
        elif isinstance(v, tuple):
            out.update({f"{f.name}.{i}": x for i, x in enumerate(v)})
        else:
            out[f.name] = v
    return out


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_params(path: str | Path, kind: str, params) -> None:
    lines = [f"format={PARAMS_FORMAT}", f"kind={kind}"]
    lines += [f"{k}={format_value(v)}" for k, v in _as_dict(params).items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_flat(path: str | Path) -> dict[str, str]:
    """Flat ``key=value`` text; blank lines and ``#`` comments ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(text: str, like):
    if text == "none":
        return None
    if isinstance(like, bool):
        return bool(int(text))
    if isinstance(like, int):
        return int(text)
    return float(text)


def params_from_dict(kind: str, raw: Mapping[str, str]):
    base = default_params(kind)
    if base is None:
        return None
    kw = {}
    for f in fields(base):
        cur = getattr(base, f.name)
        if isinstance(cur, DbsContext):
            src = raw.get(f.name, "default")
            if src != "default":
                a, p, cur_unit = src.split("|")
                kw[f.name] = load_context(a, p, cur_unit)
        elif isinstance(cur, tuple):
            kw[f.name] = tuple(float(raw.get(f"{f.name}.{i}", x)) for i, x in enumerate(cur))
        elif f.name in raw:
            kw[f.name] = _coerce(raw[f.name], cur if cur is not None else 0.0)
    return replace(base, **kw)


def read_params(path: str | Path):
    """Return ``(kind, params)`` from a parameter file."""
    raw = read_flat(path)
    if raw.get("format") != PARAMS_FORMAT:
        raise ContractError(f"{path}: unsupported parameter format {raw.get('format')!r}")
    kind = raw.get("kind")
    if kind not in MODEL_KINDS:
        raise ContractError(f"{path}: unknown model kind {kind!r}")
    rest = {k: v for k, v in raw.items() if k not in ("format", "kind")}
    return kind, params_from_dict(kind, rest)


def read_grid(path: str | Path, kind: str) -> dict[str, list]:
    """Grid file: one ``name=v1,v2,...`` line per axis."""
    base = default_params(kind)
    grid = {}
    for k, v in read_flat(path).items():
        like = getattr(base, k, 0.0) if base is not None else 0.0
        grid[k] = [_coerce(x.strip(), like if like is not None else 0.0) for x in v.split(",")]
    return grid
