"""Design matrices for learning block choice rates.

A row describes one (problem, block) pair with four groups of columns:

* objective: the twelve numbers defining the problem plus block and feedback,
* naive: B-minus-A differences of EV, SD, minimum and maximum,
* psychological: twelve hand-built summaries, each tied to one mechanism of
  the BEAST simulator (regret, dominance, equal weighting, sign heuristics,
  pessimism, ambiguity, triviality, complexity),
* foresight: a behavioural model's prediction for that block.

The two LotShape columns are one-hot encoded after the ablation has picked
its logical columns.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import beast as beast_mod
from .errors import ContractError, SchemaMismatchError
from .models import STATIC_KINDS, Ambiguity, default_params, static_predict
from .problems import ChoiceProblem, LotShape, OutcomeDistribution, joint_distribution

N_BLOCKS = beast_mod.N_BLOCKS
SCHEMA_VERSION = "pf31-v1"

PROBLEM_COLUMNS = ("Ha", "pHa", "La", "LotShapeA", "LotNumA",
                   "Hb", "pHb", "Lb", "LotShapeB", "LotNumB", "Amb", "Corr")
TIME_COLUMNS = ("Block", "Feedback")
OBJECTIVE_COLUMNS = PROBLEM_COLUMNS + TIME_COLUMNS
NAIVE_COLUMNS = ("dEV", "dSD", "dMin", "dMax")
PSYCH_COLUMNS = ("pBetter", "dominance", "dUnifEV", "dSignEV", "dPLoss", "dPWin",
                 "pessimismGap", "subjDominance", "complex", "ambUnifGap", "ambPessGap", "dProbMode")
FORESIGHT_COLUMN = "foresight"

ABLATIONS: dict[str, tuple[str, ...]] = {
    "full": OBJECTIVE_COLUMNS + NAIVE_COLUMNS + PSYCH_COLUMNS + (FORESIGHT_COLUMN,),
    "insights_only": OBJECTIVE_COLUMNS + NAIVE_COLUMNS + PSYCH_COLUMNS,
    "foresight_only": OBJECTIVE_COLUMNS + (FORESIGHT_COLUMN,),
    "objective_only": OBJECTIVE_COLUMNS,
    # problem parameters and a model prediction, used when comparing single models
    "problem_foresight": PROBLEM_COLUMNS + (FORESIGHT_COLUMN,),
}
SHAPE_LEVELS = (LotShape.NONE, LotShape.SYMM, LotShape.RSKEW, LotShape.LSKEW)
_SHAPE_SUFFIX = {LotShape.NONE: "none", LotShape.SYMM: "symm", LotShape.RSKEW: "rskew",
                 LotShape.LSKEW: "lskew"}


# ---- feature values -------------------------------------------------------

def naive_features(problem: ChoiceProblem, w_amb: float = beast_mod.BeastParams.w_amb) -> np.ndarray:
    """(dEV, dSD, dMin, dMax), B minus A; an ambiguous B is read through the BEAST prior."""
    da, db = beast_mod.perceived_distributions(problem, w_amb)
    return np.array([db.mean - da.mean, db.sd - da.sd, db.min - da.min, db.max - da.max])


def _stochastic_dominance(da: OutcomeDistribution, db: OutcomeDistribution, tol: float = 1e-12) -> int:
    """+1 if B first-order dominates A, -1 if A dominates B, else 0."""
    grid = np.union1d(da.payoffs, db.payoffs)
    fa = np.array([da.probs[da.payoffs <= x].sum() for x in grid])
    fb = np.array([db.probs[db.payoffs <= x].sum() for x in grid])
    if np.all(fb <= fa + tol) and np.any(fb < fa - tol):
        return 1
    if np.all(fa <= fb + tol) and np.any(fa < fb - tol):
        return -1
    return 0


def _modal_mass(d: OutcomeDistribution) -> float:
    # argmax returns the first maximum, i.e. the smallest payoff among tied modes
    return float(d.probs[np.argmax(d.probs)])


def psychological_features(problem: ChoiceProblem, w_amb: float = beast_mod.BeastParams.w_amb) -> np.ndarray:
    """The twelve values named in ``PSYCH_COLUMNS``, B-oriented where that makes sense."""
    da, db = beast_mod.perceived_distributions(problem, w_amb)
    a, b, p = joint_distribution(da, db, problem.corr)
    p_better = float(p[b > a].sum() - p[a > b].sum())
    dominance = _stochastic_dominance(da, db)
    d_unif = float(db.payoffs.mean() - da.payoffs.mean())
    r = float(max(np.abs(da.payoffs).max(), np.abs(db.payoffs).max()))
    d_sign = r * float(np.dot(db.probs, np.sign(db.payoffs)) - np.dot(da.probs, np.sign(da.payoffs)))
    d_loss = float(db.probs[db.payoffs < 0].sum() - da.probs[da.payoffs < 0].sum())
    d_win = float(db.probs[db.payoffs > 0].sum() - da.probs[da.payoffs > 0].sum())
    span = max(da.max, db.max) - min(da.min, db.min)
    pess = (db.min - da.min) / span if span > 0 else 0.0
    subj = {"A": -1, "B": 1, None: 0}[beast_mod.subjective_dominance(problem, w_amb)]
    cplx = 1.0 if beast_mod.is_complex(problem) else 0.0
    amb_unif = float(problem.dist_b.payoffs.mean() - da.mean) if problem.amb else 0.0
    amb_pess = float(problem.dist_b.min - da.mean) if problem.amb else 0.0
    d_mode = _modal_mass(db) - _modal_mass(da)
    return np.array([p_better, dominance, d_unif, d_sign, d_loss, d_win, pess, subj, cplx,
                     amb_unif, amb_pess, d_mode], dtype=float)


def _objective(problem: ChoiceProblem) -> list:
    oa, ob = problem.option_a, problem.option_b
    return [oa.high, oa.p_high, oa.low, oa.lot_shape, oa.lot_num,
            ob.high, ob.p_high, ob.low, ob.lot_shape, ob.lot_num,
            int(problem.amb), problem.corr]


# ---- foresight --------------------------------------------------------------

@dataclass(frozen=True)
class ForesightSpec:
    """Which model supplies the foresight column.

    ``kind`` is one of the model kinds (``beast`` or a static model). With
    ``values`` set, those per-problem block rates are used verbatim instead.
    """

    kind: str = "beast"
    params: object = None
    seed: int = 0
    ambiguity: Ambiguity = "strict"
    n_sim: int = 2000
    values: Mapping[str, Sequence[float]] | None = field(default=None, compare=False)


def foresight_column(problems: Sequence[ChoiceProblem], spec: ForesightSpec,
                     workers: int = 1) -> dict[str, np.ndarray]:
    """Five predicted block rates per problem id."""
    if spec.values is not None:
        out = {}
        for p in problems:
            if p.id not in spec.values:
                raise ContractError(f"no foresight values for problem {p.id!r}")
            out[p.id] = _five(spec.values[p.id], f"foresight for {p.id!r}")
        return out
    params = spec.params if spec.params is not None else default_params(spec.kind)
    if spec.kind == "beast":
        return beast_mod.beast_predict_many(problems, params, spec.seed, workers)
    if spec.kind in STATIC_KINDS:
        return {p.id: np.full(N_BLOCKS, static_predict(spec.kind, p, params, spec.seed, spec.ambiguity, spec.n_sim))
                for p in problems}
    raise ContractError(f"unknown foresight model {spec.kind!r}")


def _five(values, what: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (N_BLOCKS,):
        raise ContractError(f"{what} needs {N_BLOCKS} block values")
    return v


# ---- design matrix ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Numeric matrix with one row per (problem, block)."""

    columns: tuple[str, ...]
    X: np.ndarray
    ids: tuple[str, ...]
    blocks: np.ndarray
    y: np.ndarray | None = None
    schema_version: str = ""

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def row_keys(self) -> list[tuple[str, int]]:
        return list(zip(self.ids, self.blocks.tolist()))

    def require_targets(self) -> np.ndarray:
        if self.y is None:
            raise ContractError("design matrix has no targets")
        return self.y

    def subset(self, keep: np.ndarray) -> "DesignMatrix":
        keep = np.asarray(keep)
        return DesignMatrix(self.columns, self.X[keep], tuple(np.asarray(self.ids, dtype=object)[keep]),
                            self.blocks[keep], None if self.y is None else self.y[keep], self.schema_version)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version={self.schema_version}\n")
        w = csv.writer(buf, lineterminator="\n")
        head = ["id", "block", *self.columns] + (["target"] if self.y is not None else [])
        w.writerow(head)
        for i in range(len(self)):
            row = [self.ids[i], int(self.blocks[i]), *(repr(float(v)) for v in self.X[i])]
            if self.y is not None:
                row.append(repr(float(self.y[i])))
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path) -> "DesignMatrix":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("# schema_version="):
            raise SchemaMismatchError(f"{path}: missing schema_version line")
        version = lines[0].split("=", 1)[1]
        reader = csv.reader(lines[1:])
        head = next(reader)
        has_y = head[-1] == "target"
        cols = tuple(head[2:-1] if has_y else head[2:])
        if version != schema_for(cols):
            raise SchemaMismatchError(f"{path}: columns do not match schema {version!r}")
        ids, blocks, X, y = [], [], [], []
        for row in reader:
            ids.append(row[0])
            blocks.append(int(row[1]))
            X.append([float(v) for v in row[2:2 + len(cols)]])
            if has_y:
                y.append(float(row[-1]))
        return cls(cols, np.array(X, dtype=float).reshape(len(ids), len(cols)), tuple(ids),
                   np.array(blocks, dtype=int), np.array(y) if has_y else None, version)


def expanded_columns(logical: Sequence[str]) -> tuple[str, ...]:
    out = []
    for name in logical:
        if name.startswith("LotShape"):
            out.extend(f"{name}_{_SHAPE_SUFFIX[s]}" for s in SHAPE_LEVELS)
        else:
            out.append(name)
    return tuple(out)


def schema_for(columns: Sequence[str]) -> str:
    """Schema tag for an expanded column list (``pf31-v1:<ablation>``)."""
    for name, logical in ABLATIONS.items():
        if tuple(columns) == expanded_columns(logical):
            return f"{SCHEMA_VERSION}:{name}"
    raise SchemaMismatchError("column list matches no known feature set")


def assemble(problems: Sequence[ChoiceProblem],
             targets: Mapping[str, Sequence[float]] | None = None,
             foresight: ForesightSpec | Mapping[str, Sequence[float]] | None = None,
             ablation: str = "full", blocks: Sequence[int] = (1, 2, 3, 4, 5),
             workers: int = 1) -> DesignMatrix:
    """Build the design matrix for ``problems`` (rows in input order, then block).

    ``foresight`` is required when the ablation has a foresight column; pass
    a spec to run a model or a mapping of precomputed block rates. ``blocks``
    (1-based) restricts the rows, e.g. ``(1,)`` for first-block analyses.
    """
    if ablation not in ABLATIONS:
        raise ContractError(f"unknown ablation {ablation!r}; choose from {', '.join(ABLATIONS)}")
    ids = [p.id for p in problems]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ContractError(f"duplicate problem ids: {', '.join(dup)}")
    blocks = tuple(int(b) for b in blocks)
    if not blocks or any(b < 1 or b > N_BLOCKS for b in blocks):
        raise ContractError("blocks must lie in 1..5")
    if targets is not None:
        if len(targets) != len(problems):
            raise ContractError(f"{len(targets)} target rows for {len(problems)} problems")
        missing = [i for i in ids if i not in targets]
        if missing:
            raise ContractError(f"no targets for problems: {', '.join(missing[:5])}")
    logical = ABLATIONS[ablation]
    fs = None
    if FORESIGHT_COLUMN in logical:
        if foresight is None:
            raise ContractError(f"ablation {ablation!r} needs a foresight source")
        spec = foresight if isinstance(foresight, ForesightSpec) else ForesightSpec(values=foresight)
        fs = foresight_column(problems, spec, workers)
    need_insights = NAIVE_COLUMNS[0] in logical

    columns = expanded_columns(logical)
    rows, row_ids, row_blocks, y = [], [], [], []
    for p in problems:
        static = _objective(p)
        insights = (list(naive_features(p)) + list(psychological_features(p))) if need_insights else []
        tgt = _five(targets[p.id], f"targets for {p.id!r}") if targets is not None else None
        for blk in blocks:
            values = dict(zip(PROBLEM_COLUMNS, static))
            values["Block"] = blk
            values["Feedback"] = 0 if blk == 1 else 1
            if need_insights:
                values.update(zip(NAIVE_COLUMNS + PSYCH_COLUMNS, insights))
            if fs is not None:
                values[FORESIGHT_COLUMN] = fs[p.id][blk - 1]
            row = []
            for name in logical:
                v = values[name]
                if name.startswith("LotShape"):
                    row.extend(1.0 if v is s else 0.0 for s in SHAPE_LEVELS)
                else:
                    row.append(float(v))
            rows.append(row)
            row_ids.append(p.id)
            row_blocks.append(blk)
            if tgt is not None:
                y.append(tgt[blk - 1])
    X = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    if not np.all(np.isfinite(X)):
        raise ContractError("non-finite feature value")
    return DesignMatrix(columns, X, tuple(row_ids), np.array(row_blocks, dtype=int),
                        np.array(y) if targets is not None else None, f"{SCHEMA_VERSION}:{ablation}")
