"""Scoring and experiment protocols.

Predictions and observations are mappings from problem id to five block
rates. A model's error is the mean squared error over all (problem, block)
cells; ENO re-expresses it on a sample-size scale through the curve
``MSE = A + B / ENO``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, UndefinedEnoError
from .features import ForesightSpec, assemble, foresight_column
from .learn import BoostConfig, ForestConfig, fit_model
from .models import DEFAULT_GRIDS, STATIC_KINDS, fit_grid
from .problems import ChoiceProblem
from .rng import derive_seed, substream

N_BLOCKS = 5
Rates = Mapping[str, Sequence[float]]

# (MSE, ENO) of the winning and the 15th-ranked submissions on the competition set
COMPETITION_ANCHORS = ((0.00569, 23.7), (0.00823, 15.4))


# ---- ENO --------------------------------------------------------------------

@dataclass(frozen=True)
class EnoCurve:
    """``MSE = floor + scale / ENO``."""

    floor: float
    scale: float

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.floor) and math.isfinite(self.scale)):
            raise ContractError("ENO curve needs a finite floor and a positive scale")

    def eno(self, mse: float) -> float:
        return eno(mse, self)

    def mse(self, n: float) -> float:
        return self.floor + self.scale / n


def fit_eno_curve(points: Sequence[tuple[float, float]]) -> EnoCurve:
    """Least-squares fit of ``MSE = A + B / ENO`` (exact for two points)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ContractError("need at least two (MSE, ENO) points")
    if np.ptp(pts[:, 0]) == 0:
        raise ContractError("anchor MSEs are all identical")
    design = np.column_stack([np.ones(len(pts)), 1.0 / pts[:, 1]])
    (a, b), *_ = np.linalg.lstsq(design, pts[:, 0], rcond=None)
    return EnoCurve(float(a), float(b))


def eno(mse: float, curve: EnoCurve) -> float:
    if not mse > curve.floor:
        raise UndefinedEnoError(f"MSE {mse!r} is not above the curve floor {curve.floor!r}")
    return curve.scale / (mse - curve.floor)


def eno_or_nan(mse: float, curve: EnoCurve) -> float:
    try:
        return eno(mse, curve)
    except UndefinedEnoError:
        return float("nan")


def default_curve() -> EnoCurve:
    return fit_eno_curve(COMPETITION_ANCHORS)


# ---- scoring ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScoreReport:
    ids: tuple[str, ...]
    squared_errors: np.ndarray  # (n_problems, 5)
    mse: float
    eno: float

    @property
    def n_problems(self) -> int:
        return len(self.ids)

    @property
    def per_problem(self) -> np.ndarray:
        return self.squared_errors.mean(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "sq_error"])
        for pid, e in zip(self.ids, self.per_problem):
            w.writerow([pid, repr(float(e))])
        w.writerow(["__overall_mse__", repr(self.mse)])
        w.writerow(["__eno__", repr(self.eno)])
        w.writerow(["__n_problems__", self.n_problems])
        return buf.getvalue()


def _block_array(rates: Rates, ids: Sequence[str], what: str, blocks: Sequence[int]) -> np.ndarray:
    out = np.empty((len(ids), len(blocks)))
    for i, pid in enumerate(ids):
        v = np.asarray(rates[pid], dtype=float)
        if v.shape != (N_BLOCKS,):
            raise ContractError(f"{what} for {pid!r} need {N_BLOCKS} block rates")
        out[i] = v[[b - 1 for b in blocks]]
    if np.any(~np.isfinite(out)) or np.any((out < 0) | (out > 1)):
        raise ContractError(f"{what} must lie in [0, 1]")
    return out


def score(predictions: Rates, observed: Rates, curve: EnoCurve | None = None,
          blocks: Sequence[int] = (1, 2, 3, 4, 5)) -> ScoreReport:
    """Block-level squared errors. Problems are reported in sorted id order."""
    if set(predictions) != set(observed):
        extra = sorted(set(predictions) ^ set(observed))
        raise ContractError(f"prediction and observation ids differ: {', '.join(extra[:5])}")
    if not observed:
        raise ContractError("nothing to score")
    ids = tuple(sorted(observed))
    sq = (_block_array(predictions, ids, "predictions", blocks)
          - _block_array(observed, ids, "observations", blocks)) ** 2
    mse = float(sq.mean())
    return ScoreReport(ids, sq, mse, eno_or_nan(mse, curve or default_curve()))


def bootstrap_diff_ci(errors_a: Sequence[float], errors_b: Sequence[float], n_boot: int = 2501,
                      level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval for ``MSE_b - MSE_a`` over problems resampled with replacement."""
    ea = np.asarray(errors_a, dtype=float)
    eb = np.asarray(errors_b, dtype=float)
    if ea.size == 0 or ea.shape != eb.shape or ea.ndim != 1:
        raise ContractError("need two non-empty, aligned per-problem error lists")
    if not 0 < level < 1 or n_boot < 1:
        raise ContractError("level must lie in (0, 1) and n_boot >= 1")
    idx = substream(seed, "bootstrap").integers(0, len(ea), (n_boot, len(ea)))
    diffs = (eb - ea)[idx].mean(axis=1)
    lo, hi = np.quantile(diffs, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


# ---- protocols --------------------------------------------------------------

Labelled = Sequence[tuple[ChoiceProblem, Sequence[float]]]
ALGORITHMS = ("forest", "boost")
CONDITIONS = ("full", "insights_only", "foresight_only")


@dataclass(frozen=True)
class LearnerSettings:
    forest: ForestConfig = ForestConfig()
    boost: BoostConfig = BoostConfig()
    n_runs: int = 1

    def config(self, algo: str):
        return self.forest if algo == "forest" else self.boost


def _check_split(train: Labelled, test: Labelled) -> None:
    overlap = {p.id for p, _ in train} & {p.id for p, _ in test}
    if overlap:
        raise ContractError(f"train and test share problem ids: {', '.join(sorted(overlap)[:5])}")


def _fit_predict(algo, train_m, test_m, seed, settings: LearnerSettings, workers: int) -> np.ndarray:
    y = train_m.require_targets()
    out = np.zeros(len(test_m))
    for run in range(settings.n_runs):
        model = fit_model(algo, train_m.X, y, derive_seed(seed, algo, run), train_m.row_keys,
                          settings.config(algo), workers, train_m.schema_version)
        out += model.predict(test_m.X, test_m.schema_version)
    return out / settings.n_runs


def _as_rates(matrix, pred: np.ndarray) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for pid, blk, v in zip(matrix.ids, matrix.blocks, pred):
        out.setdefault(pid, np.full(N_BLOCKS, np.nan))[blk - 1] = v
    return out


@dataclass(frozen=True)
class AblationRow:
    seed: int
    algorithm: str
    condition: str
    mse: float
    eno: float


@dataclass(frozen=True)
class AblationResult:
    rows: tuple[AblationRow, ...]
    curve: EnoCurve

    def mse(self, algorithm: str, condition: str, seed: int | None = None) -> float:
        vals = [r.mse for r in self.rows if r.algorithm == algorithm and r.condition == condition
                and (seed is None or r.seed == seed)]
        return float(np.mean(vals))

    def summary(self) -> list[tuple[str, str, float, float]]:
        out = []
        for algo in dict.fromkeys(r.algorithm for r in self.rows):
            for cond in dict.fromkeys(r.condition for r in self.rows):
                m = self.mse(algo, cond)
                out.append((cond, algo, m, eno_or_nan(m, self.curve)))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "algorithm", "mse", "eno"])
        for cond, algo, m, e in self.summary():
            w.writerow([cond, algo, repr(m), repr(e)])
        return buf.getvalue()


def run_ablation(train: Labelled, test: Labelled, foresight: ForesightSpec | Rates,
                 algorithms: Sequence[str] = ALGORITHMS, seeds: Sequence[int] = (0,),
                 conditions: Sequence[str] = CONDITIONS, settings: LearnerSettings = LearnerSettings(),
                 curve: EnoCurve | None = None, workers: int = 1) -> AblationResult:
    """Train each algorithm on each feature condition and score it on ``test``.

    The foresight column is computed once for all problems and shared by the
    conditions that use it.
    """
    _check_split(train, test)
    curve = curve or default_curve()
    tr_p = [p for p, _ in train]
    te_p = [p for p, _ in test]
    y_tr = {p.id: r for p, r in train}
    y_te = {p.id: r for p, r in test}
    spec = foresight if isinstance(foresight, ForesightSpec) else ForesightSpec(values=foresight)
    fs = foresight_column(tr_p + te_p, spec, workers)
    mats = {c: (assemble(tr_p, y_tr, fs, c), assemble(te_p, None, fs, c)) for c in conditions}
    rows = []
    for seed in seeds:
        for algo in algorithms:
            for cond in conditions:
                tr_m, te_m = mats[cond]
                pred = _fit_predict(algo, tr_m, te_m, derive_seed(seed, "ablation"), settings, workers)
                rep = score(_as_rates(te_m, pred), y_te, curve)
                rows.append(AblationRow(int(seed), algo, cond, rep.mse, rep.eno))
    return AblationResult(tuple(rows), curve)


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    mse_raw: float
    eno_raw: float
    mse_foresight: float
    eno_foresight: float


@dataclass(frozen=True)
class ComparisonResult:
    rows: tuple[ComparisonRow, ...]
    fitted: dict = field(default_factory=dict, compare=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "mse_raw", "eno_raw", "mse_foresight", "eno_foresight"])
        for r in self.rows:
            w.writerow([r.model, repr(r.mse_raw), repr(r.eno_raw), repr(r.mse_foresight), repr(r.eno_foresight)])
        return buf.getvalue()


COMPARISON_MODELS = ("beast", "cpt_stochastic", "cpt_deterministic", "dbs", "ph")


def risk_subset(data: Labelled) -> list[tuple[ChoiceProblem, Sequence[float]]]:
    return [(p, r) for p, r in data if not p.amb]


def run_comparison(train: Labelled, test: Labelled, seed: int = 0,
                   models: Sequence[str] = COMPARISON_MODELS,
                   grids: Mapping[str, Mapping] | None = None, beast_params=None,
                   settings: LearnerSettings = LearnerSettings(n_runs=20), curve: EnoCurve | None = None,
                   n_sim: int = 1000, workers: int = 1) -> ComparisonResult:
    """Single-model comparison on first-block choices of unambiguous problems.

    Static models are grid-fitted on the first block of the unambiguous
    training problems. BEAST uses ``beast_params`` as given (fit it beforehand
    on all training data) or is grid-fitted on all blocks of all training
    problems. Each model is scored on its own and as the foresight column of a
    forest over the problem parameters, averaged over ``settings.n_runs`` fits.
    """
    _check_split(train, test)
    curve = curve or default_curve()
    grids = dict(DEFAULT_GRIDS if grids is None else grids)
    tr_r, te_r = risk_subset(train), risk_subset(test)
    if not tr_r or not te_r:
        raise ContractError("no unambiguous problems in train or test")
    tr_p, te_p = [p for p, _ in tr_r], [p for p, _ in te_r]
    first = lambda data: {p.id: np.full(N_BLOCKS, float(r[0])) for p, r in data}
    y_tr, y_te = first(tr_r), first(te_r)
    rows, fitted = [], {}
    for kind in models:
        if kind == "beast":
            params = beast_params
            if params is None:
                params = fit_grid("beast", grids.get("beast", {}), train, seed=seed, workers=workers).params
            spec = ForesightSpec("beast", params, seed)
        elif kind in STATIC_KINDS:
            params = fit_grid(kind, grids.get(kind, {}), tr_r, blocks=(0,), seed=seed, n_sim=n_sim).params
            spec = ForesightSpec(kind, params, seed, n_sim=n_sim)
        else:
            raise ContractError(f"unknown model {kind!r}")
        fitted[kind] = params
        fs = foresight_column(tr_p + te_p, spec, workers)
        first_fs = {pid: np.full(N_BLOCKS, v[0]) for pid, v in fs.items()}
        raw = score({p.id: first_fs[p.id] for p in te_p}, y_te, curve, blocks=(1,))
        tr_m = assemble(tr_p, y_tr, first_fs, "problem_foresight", blocks=(1,))
        te_m = assemble(te_p, None, first_fs, "problem_foresight", blocks=(1,))
        pred = _fit_predict("forest", tr_m, te_m, derive_seed(seed, "compare", kind), settings, workers)
        hybrid = score({pid: np.full(N_BLOCKS, v) for pid, v in zip(te_m.ids, pred)}, y_te, curve, blocks=(1,))
        rows.append(ComparisonRow(kind, raw.mse, raw.eno, hybrid.mse, hybrid.eno))
    return ComparisonResult(tuple(rows), fitted)
