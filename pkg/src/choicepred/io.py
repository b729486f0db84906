"""Reading and writing problem, rate and manifest files.

Numbers are written in a canonical form: integral values without a decimal
point, everything else as the shortest decimal that round-trips.

Aggregate files hold one row per (problem, block)::

    id,LA,HA,pHA,LotNumA,LotShapeA,LB,HB,pHB,LotNumB,LotShapeB,Amb,Corr,block,feedback,rate,n_subjects

Raw trial files hold one row per (subject, problem, trial) with the same
problem columns plus ``subject_id``, ``trial`` (1-25), ``choice_B`` (0/1) and
optionally ``payoff_a``/``payoff_b``. A column-mapping side file (lines of
``our_name=their_name``) renames columns of files with other headers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, IngestError
from .problems import ChoiceProblem, LotShape, OptionSpec, validate_problem

N_BLOCKS = 5
N_TRIALS = 25
PROBLEM_FIELDS = ("LA", "HA", "pHA", "LotNumA", "LotShapeA",
                  "LB", "HB", "pHB", "LotNumB", "LotShapeB", "Amb", "Corr")
AGGREGATE_FIELDS = ("id",) + PROBLEM_FIELDS + ("block", "feedback", "rate", "n_subjects")
RAW_FIELDS = ("subject_id", "problem_id") + PROBLEM_FIELDS + ("trial", "choice_B")
PREDICTION_FIELDS = ("id", "block", "rate")


def fmt(v) -> str:
    """Canonical text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_text(path: str | Path, text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return p


# ---- column mapping ---------------------------------------------------------

def read_mapping(path: str | Path | None) -> dict[str, str]:
    """``ours=theirs`` lines; blank lines and ``#`` comments are ignored."""
    if path is None:
        return {}
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise IngestError("expected ours=theirs", n)
        ours, theirs = (s.strip() for s in line.split("=", 1))
        out[ours] = theirs
    return out


def _rows(path: str | Path, required: Sequence[str], mapping: Mapping[str, str]):
    """Yield (line number, {our field: text}) for every data row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file", 1) from None
        header = [h.strip() for h in header]
        pos = {}
        for name in required:
            src = mapping.get(name, name)
            if src not in header:
                raise IngestError(f"missing column {src!r}", 1, name)
            pos[name] = header.index(src)
        for n, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", n)
            yield n, {name: row[i].strip() for name, i in pos.items()}


def _num(rec, name, line, kind=float):
    text = rec[name]
    try:
        v = float(text)
    except ValueError:
        raise IngestError(f"not a number: {text!r}", line, name) from None
    if not math.isfinite(v):
        raise IngestError(f"not finite: {text!r}", line, name)
    if kind is int:
        if v != int(v):
            raise IngestError(f"not an integer: {text!r}", line, name)
        return int(v)
    return v


def _problem(rec, line, pid) -> ChoiceProblem:
    for name in ("pHA", "pHB"):
        p = _num(rec, name, line)
        if not 0 < p <= 1:
            raise IngestError(f"probability {p!r} outside (0, 1]", line, name)
    shapes = {}
    for name in ("LotShapeA", "LotShapeB"):
        try:
            shapes[name] = LotShape.parse(rec[name])
        except ValueError:
            raise IngestError(f"unknown LotShape literal {rec[name]!r}", line, name) from None
    amb = _num(rec, "Amb", line, int)
    corr = _num(rec, "Corr", line, int)
    if amb not in (0, 1):
        raise IngestError(f"Amb must be 0 or 1, got {amb}", line, "Amb")
    if corr not in (-1, 0, 1):
        raise IngestError(f"Corr must be -1, 0 or 1, got {corr}", line, "Corr")
    try:
        a = OptionSpec(_num(rec, "LA", line), _num(rec, "HA", line), _num(rec, "pHA", line),
                       _num(rec, "LotNumA", line, int), shapes["LotShapeA"])
        b = OptionSpec(_num(rec, "LB", line), _num(rec, "HB", line), _num(rec, "pHB", line),
                       _num(rec, "LotNumB", line, int), shapes["LotShapeB"])
        prob = ChoiceProblem(a, b, bool(amb), corr, pid)
    except ContractError as exc:
        raise IngestError(str(exc), line) from None
    bad = validate_problem(prob)
    if bad:
        raise IngestError(f"problem {pid!r} violates rule(s) {', '.join(bad)}", line)
    return prob


def problem_fields(p: ChoiceProblem) -> list[str]:
    a, b = p.option_a, p.option_b
    return [fmt(a.low), fmt(a.high), fmt(a.p_high), fmt(a.lot_num), a.lot_shape.value,
            fmt(b.low), fmt(b.high), fmt(b.p_high), fmt(b.lot_num), b.lot_shape.value,
            fmt(int(p.amb)), fmt(p.corr)]


# ---- problem files ----------------------------------------------------------

def problems_to_csv(problems: Iterable[ChoiceProblem]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("id",) + PROBLEM_FIELDS)
    for p in problems:
        w.writerow([p.id] + problem_fields(p))
    return buf.getvalue()


def read_problems(path: str | Path, mapping: Mapping[str, str] | None = None) -> list[ChoiceProblem]:
    out, seen = [], set()
    for line, rec in _rows(path, ("id",) + PROBLEM_FIELDS, mapping or {}):
        pid = rec["id"]
        if not pid:
            raise IngestError("empty id", line, "id")
        if pid in seen:
            raise IngestError(f"duplicate problem id {pid!r}", line, "id")
        seen.add(pid)
        out.append(_problem(rec, line, pid))
    return out


# ---- aggregate rates --------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Problems with observed block rates (and subject counts when known)."""

    problems: tuple[ChoiceProblem, ...]
    rates: dict[str, np.ndarray]
    n_subjects: dict[str, int]

    def labelled(self) -> list[tuple[ChoiceProblem, np.ndarray]]:
        return [(p, self.rates[p.id]) for p in self.problems]

    def subset(self, ids: Iterable[str]) -> "Dataset":
        keep = set(ids)
        probs = tuple(p for p in self.problems if p.id in keep)
        return Dataset(probs, {p.id: self.rates[p.id] for p in probs},
                       {p.id: self.n_subjects[p.id] for p in probs if p.id in self.n_subjects})


def aggregate_to_csv(problems: Sequence[ChoiceProblem], rates: Mapping[str, Sequence[float]],
                     n_subjects: Mapping[str, int] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_FIELDS)
    for p in problems:
        r = np.asarray(rates[p.id], dtype=float)
        n = (n_subjects or {}).get(p.id, 0)
        for blk in range(1, N_BLOCKS + 1):
            w.writerow([p.id] + problem_fields(p) + [blk, 0 if blk == 1 else 1, fmt(r[blk - 1]), fmt(n)])
    return buf.getvalue()


def read_aggregate(path: str | Path, mapping: Mapping[str, str] | None = None) -> Dataset:
    problems: dict[str, ChoiceProblem] = {}
    rates: dict[str, dict[int, float]] = {}
    counts: dict[str, int] = {}
    mapping = mapping or {}
    required = AGGREGATE_FIELDS if "n_subjects" in mapping or _has_column(path, "n_subjects", mapping) \
        else AGGREGATE_FIELDS[:-1]
    for line, rec in _rows(path, required, mapping):
        pid = rec["id"]
        prob = _problem(rec, line, pid)
        if pid in problems and problems[pid] != prob:
            raise IngestError(f"problem {pid!r} is defined differently on another row", line)
        problems.setdefault(pid, prob)
        blk = _num(rec, "block", line, int)
        if not 1 <= blk <= N_BLOCKS:
            raise IngestError(f"block {blk} outside 1..5", line, "block")
        fb = _num(rec, "feedback", line, int)
        if fb != (0 if blk == 1 else 1):
            raise IngestError(f"feedback={fb} inconsistent with block {blk}", line, "feedback")
        rate = _num(rec, "rate", line)
        if not 0 <= rate <= 1:
            raise IngestError(f"rate {rate!r} outside [0, 1]", line, "rate")
        if blk in rates.setdefault(pid, {}):
            raise IngestError(f"duplicate block {blk} for problem {pid!r}", line, "block")
        rates[pid][blk] = rate
        if "n_subjects" in rec:
            counts[pid] = _num(rec, "n_subjects", line, int)
    for pid, r in rates.items():
        if len(r) != N_BLOCKS:
            raise IngestError(f"problem {pid!r} has {len(r)} blocks, expected {N_BLOCKS}")
    return Dataset(tuple(problems.values()),
                   {pid: np.array([r[b] for b in range(1, N_BLOCKS + 1)]) for pid, r in rates.items()},
                   counts)


def _has_column(path, name, mapping) -> bool:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    return mapping.get(name, name) in [h.strip() for h in header]


def read_raw_trials(path: str | Path, mapping: Mapping[str, str] | None = None) -> Dataset:
    """Pool raw choices to block rates: mean over subjects and the five trials of each block."""
    problems: dict[str, ChoiceProblem] = {}
    sums: dict[str, np.ndarray] = {}
    cnts: dict[str, np.ndarray] = {}
    subjects: dict[str, set] = {}
    seen: set[tuple[str, str, int]] = set()
    for line, rec in _rows(path, RAW_FIELDS, mapping or {}):
        pid = rec["problem_id"]
        prob = _problem(rec, line, pid)
        if pid in problems and problems[pid] != prob:
            raise IngestError(f"problem {pid!r} is defined differently on another row", line)
        problems.setdefault(pid, prob)
        trial = _num(rec, "trial", line, int)
        if not 1 <= trial <= N_TRIALS:
            raise IngestError(f"trial {trial} outside 1..25", line, "trial")
        choice = _num(rec, "choice_B", line, int)
        if choice not in (0, 1):
            raise IngestError(f"choice_B must be 0 or 1, got {choice}", line, "choice_B")
        key = (rec["subject_id"], pid, trial)
        if key in seen:
            raise IngestError(f"duplicate trial {trial} for subject {key[0]!r}", line, "trial")
        seen.add(key)
        blk = (trial - 1) // (N_TRIALS // N_BLOCKS)
        sums.setdefault(pid, np.zeros(N_BLOCKS))[blk] += choice
        cnts.setdefault(pid, np.zeros(N_BLOCKS))[blk] += 1
        subjects.setdefault(pid, set()).add(rec["subject_id"])
    rates = {}
    for pid in problems:
        if np.any(cnts[pid] == 0):
            raise IngestError(f"problem {pid!r} lacks trials in some block")
        rates[pid] = sums[pid] / cnts[pid]
    return Dataset(tuple(problems.values()), rates, {pid: len(s) for pid, s in subjects.items()})


def ingest(path: str | Path, fmt_name: str = "aggregate-csv", mapping_path: str | Path | None = None) -> Dataset:
    mapping = read_mapping(mapping_path)
    if fmt_name == "aggregate-csv":
        return read_aggregate(path, mapping)
    if fmt_name == "raw-trial-csv":
        return read_raw_trials(path, mapping)
    raise ContractError(f"unknown ingest format {fmt_name!r}")


# ---- predictions ------------------------------------------------------------

def predictions_to_csv(rates: Mapping[str, Sequence[float]], ids: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_FIELDS)
    for pid in ids if ids is not None else rates:
        for blk, v in enumerate(np.asarray(rates[pid], dtype=float), 1):
            w.writerow([pid, blk, fmt(v)])
    return buf.getvalue()


def read_predictions(path: str | Path) -> dict[str, np.ndarray]:
    """Read ``id,block,rate`` rows; the observation columns of an aggregate file also work."""
    out: dict[str, dict[int, float]] = {}
    for line, rec in _rows(path, PREDICTION_FIELDS, {}):
        blk = _num(rec, "block", line, int)
        if not 1 <= blk <= N_BLOCKS:
            raise IngestError(f"block {blk} outside 1..5", line, "block")
        v = _num(rec, "rate", line)
        if not 0 <= v <= 1:
            raise IngestError(f"rate {v!r} outside [0, 1]", line, "rate")
        out.setdefault(rec["id"], {})[blk] = v
    for pid, r in out.items():
        if len(r) != N_BLOCKS:
            raise IngestError(f"problem {pid!r} has {len(r)} blocks, expected {N_BLOCKS}")
    return {pid: np.array([r[b] for b in range(1, N_BLOCKS + 1)]) for pid, r in out.items()}


# ---- manifests ----------------------------------------------------------------

def write_manifest(path: str | Path, command: str, seed: int, config: Mapping[str, object],
                   inputs: Sequence[str | Path], outputs: Sequence[str | Path], version: str) -> Path:
    """Flat ``key=value`` record of a run; no timestamps, so reruns are byte-identical."""
    lines = ["format=1", f"command={command}", f"seed={seed}", f"toolkit_version={version}"]
    lines += [f"config.{k}={v}" for k, v in sorted(config.items())]
    for p in inputs:
        lines.append(f"input.{Path(p).name}={sha256_file(p)}")
    for p in outputs:
        lines.append(f"output.{Path(p).name}={sha256_file(p)}")
    return write_text(path, "\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out
