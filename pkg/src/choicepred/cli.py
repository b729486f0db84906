"""Command-line front end.

Every subcommand takes ``--seed``, ``--workers`` and ``--config`` (a flat
``key=value`` file whose keys are option names; explicit flags win) and writes
a manifest next to its main output. Failures print one JSON object on stderr
and exit with 1 (usage), 2 (invalid input) or 3 (internal error).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import io as cio
from .beast import BeastParams, beast_predict_many
from .errors import ContractError, IngestError, SchemaMismatchError, UndefinedEnoError, UnsupportedInputError
from .evaluation import (LearnerSettings, bootstrap_diff_ci, default_curve, fit_eno_curve, run_ablation,
                         run_comparison, score)
from .features import ABLATIONS, DesignMatrix, ForesightSpec, assemble
from .learn import BoostConfig, ForestConfig, fit_model, load_model, save_model
from .models import DEFAULT_GRIDS, MODEL_KINDS, default_params, fit_grid, read_flat, read_grid, read_params, write_params
from .plotting import plot_ablation, plot_comparison, plot_scores
from .problems import generate_problems

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2, 3
VALIDATION_ERRORS = (ContractError, IngestError, SchemaMismatchError, UndefinedEnoError,
                     UnsupportedInputError, FileNotFoundError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---- helpers ------------------------------------------------------------------

def _manifest(args, outputs: Sequence[Path], inputs: Sequence[str | None]) -> None:
    # paths are reduced to file names so reruns in other directories match byte for byte
    config = {k: Path(v).name if isinstance(v, str) and "/" in v else v for k, v in sorted(vars(args).items())
              if k not in ("func", "config", "workers") and v is not None}
    cio.write_manifest(Path(str(outputs[0]) + ".manifest"), args.command, args.seed, config,
                       list(dict.fromkeys(p for p in inputs if p)), outputs, __version__)


def _dataset(path: str, mapping: str | None, raw: bool = False) -> cio.Dataset:
    return cio.ingest(path, "raw-trial-csv" if raw else "aggregate-csv", mapping)


def _ints(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _beast_params(path: str | None, n_agents: int | None) -> BeastParams:
    params = BeastParams()
    if path:
        kind, params = read_params(path)
        if kind != "beast":
            raise ContractError(f"{path} holds {kind} parameters, expected beast")
    if n_agents:
        from dataclasses import replace
        params = replace(params, n_agents=n_agents)
    return params


def _learner_settings(args) -> LearnerSettings:
    return LearnerSettings(ForestConfig(n_trees=args.n_trees), BoostConfig(n_rounds=args.n_rounds), args.n_runs)


# ---- commands ---------------------------------------------------------------

def cmd_generate(args) -> list[Path]:
    problems = generate_problems(args.n, args.seed, args.prefix, args.workers)
    out = cio.write_text(args.out, cio.problems_to_csv(problems))
    _manifest(args, [out], [])
    return [out]


def cmd_simulate(args) -> list[Path]:
    problems = cio.read_problems(args.problems, cio.read_mapping(args.mapping))
    params = _beast_params(args.params, args.n_agents)
    rates = beast_predict_many(problems, params, args.seed, args.workers)
    out = cio.write_text(args.out, cio.aggregate_to_csv(problems, rates, {p.id: params.n_agents for p in problems}))
    _manifest(args, [out], [args.problems, args.params])
    return [out]


def cmd_fit(args) -> list[Path]:
    data = _dataset(args.data, args.mapping, args.raw)
    labelled = data.labelled()
    if args.risk_only:
        labelled = [(p, r) for p, r in labelled if not p.amb]
    grid = read_grid(args.grid, args.model) if args.grid else DEFAULT_GRIDS[args.model]
    result = fit_grid(args.model, grid, labelled, blocks=[b - 1 for b in _ints(args.blocks)], seed=args.seed,
                      ambiguity=args.ambiguity, n_sim=args.n_sim, n_agents=args.n_agents, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_params(out, args.model, result.params)
    _manifest(args, [out], [args.data, args.grid])
    return [out]


def _foresight(args) -> ForesightSpec | dict | None:
    if args.foresight_file:
        return cio.read_predictions(args.foresight_file)
    if args.foresight_params:
        kind, params = read_params(args.foresight_params)
    else:
        kind, params = args.foresight_model, default_params(args.foresight_model)
    if kind == "beast" and args.n_agents:
        from dataclasses import replace
        params = replace(params, n_agents=args.n_agents)
    return ForesightSpec(kind, params, args.seed, args.ambiguity, args.n_sim)


def cmd_featurize(args) -> list[Path]:
    if args.data:
        data = _dataset(args.data, args.mapping, args.raw)
        problems, targets = list(data.problems), data.rates
    elif args.problems:
        problems, targets = cio.read_problems(args.problems, cio.read_mapping(args.mapping)), None
    else:
        raise UsageError("featurize needs --data or --problems")
    needs = "foresight" in ABLATIONS[args.ablation]
    matrix = assemble(problems, targets, _foresight(args) if needs else None, args.ablation,
                      _ints(args.blocks), args.workers)
    out = cio.write_text(args.out, matrix.to_csv())
    _manifest(args, [out], [args.data or args.problems, args.foresight_file, args.foresight_params])
    return [out]


def cmd_train(args) -> list[Path]:
    matrix = DesignMatrix.read_csv(args.matrix)
    config = ForestConfig(n_trees=args.n_trees) if args.algo == "forest" else BoostConfig(n_rounds=args.n_rounds)
    model = fit_model(args.algo, matrix.X, matrix.require_targets(), args.seed, matrix.row_keys, config,
                      args.workers, matrix.schema_version)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    _manifest(args, [out], [args.matrix])
    return [out]


def cmd_predict(args) -> list[Path]:
    model = load_model(args.model)
    matrix = DesignMatrix.read_csv(args.matrix)
    pred = model.predict(matrix.X, matrix.schema_version)
    rates: dict[str, np.ndarray] = {}
    for pid, blk, v in zip(matrix.ids, matrix.blocks, pred):
        rates.setdefault(pid, np.full(5, np.nan))[blk - 1] = v
    if any(np.isnan(r).any() for r in rates.values()):
        raise ContractError("predict needs all five blocks of every problem in the matrix")
    out = cio.write_text(args.out, cio.predictions_to_csv(rates))
    _manifest(args, [out], [args.model, args.matrix])
    return [out]


def cmd_evaluate(args) -> list[Path]:
    pred = cio.read_predictions(args.predictions)
    obs = _dataset(args.observed, args.mapping, args.raw).rates
    curve = fit_eno_curve(_anchor_points(args.anchors)) if args.anchors else default_curve()
    report = score(pred, obs, curve)
    text = report.to_csv()
    labels, mses = ["model"], [report.mse]
    if args.baseline:
        other = score(cio.read_predictions(args.baseline), obs, curve)
        lo, hi = bootstrap_diff_ci(report.per_problem, other.per_problem, args.n_boot, args.level, args.seed)
        text += f"__baseline_mse__,{other.mse!r}\n__ci_low__,{lo!r}\n__ci_high__,{hi!r}\n"
        labels.append("baseline")
        mses.append(other.mse)
    out = cio.write_text(args.out, text)
    outputs = [out]
    if args.plot:
        outputs.append(plot_scores(labels, mses, args.plot))
    _manifest(args, outputs, [args.predictions, args.observed, args.baseline])
    return outputs


def _anchor_points(text: str) -> list[tuple[float, float]]:
    pts = []
    for pair in text.split(";"):
        m, e = pair.split(":")
        pts.append((float(m), float(e)))
    return pts


def _beast_foresight(args, train) -> BeastParams:
    if args.beast_params:
        return _beast_params(args.beast_params, args.n_agents)
    grid = read_grid(args.grid, "beast") if args.grid else DEFAULT_GRIDS["beast"]
    return fit_grid("beast", grid, train, seed=args.seed, n_agents=args.n_agents, workers=args.workers).params


def cmd_ablate(args) -> list[Path]:
    train = _dataset(args.train, args.mapping).labelled()
    test = _dataset(args.test, args.mapping).labelled()
    params = _beast_foresight(args, train)
    res = run_ablation(train, test, ForesightSpec("beast", params, args.seed), args.algorithms.split(","),
                       _ints(args.seeds) or [args.seed], settings=_learner_settings(args), workers=args.workers)
    out = cio.write_text(args.out, res.to_csv())
    outputs = [out]
    if args.plot:
        outputs.append(plot_ablation(res.summary(), args.plot))
    _manifest(args, outputs, [args.train, args.test, args.beast_params, args.grid])
    return outputs


def cmd_compare(args) -> list[Path]:
    train = _dataset(args.train, args.mapping).labelled()
    test = _dataset(args.test, args.mapping).labelled()
    params = _beast_foresight(args, train)
    res = run_comparison(train, test, args.seed, args.models.split(","), beast_params=params,
                         settings=_learner_settings(args), n_sim=args.n_sim, workers=args.workers)
    out = cio.write_text(args.out, res.to_csv())
    outputs = [out]
    if args.plot:
        outputs.append(plot_comparison(res.rows, args.plot))
    _manifest(args, outputs, [args.train, args.test, args.beast_params, args.grid])
    return outputs


# ---- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="choicepred", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--config", help="flat key=value file; explicit flags win")
        p.add_argument("--mapping", help="column-mapping side file (ours=theirs)")
        p.set_defaults(func=func)
        return p

    def data_flags(p):
        p.add_argument("--raw", action="store_true", help="input is raw trials rather than aggregate rates")

    def sim_flags(p):
        p.add_argument("--n-agents", type=int, default=None, help="simulated agents per problem (BEAST)")
        p.add_argument("--n-sim", type=int, default=1000, help="simulated choices per problem (DbS)")
        p.add_argument("--ambiguity", choices=("strict", "permissive"), default="strict")

    def learner_flags(p):
        p.add_argument("--n-trees", type=int, default=500)
        p.add_argument("--n-rounds", type=int, default=978)
        p.add_argument("--n-runs", type=int, default=1)

    p = command("generate", cmd_generate, "draw random choice problems")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--prefix", default="p")
    p.add_argument("--out", required=True)

    p = command("simulate", cmd_simulate, "synthetic block rates from the BEAST simulator")
    p.add_argument("--problems", required=True)
    p.add_argument("--params")
    p.add_argument("--n-agents", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = command("fit", cmd_fit, "grid-search a model's parameters")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid")
    p.add_argument("--blocks", default="1,2,3,4,5")
    p.add_argument("--risk-only", action="store_true")
    p.add_argument("--out", required=True)
    data_flags(p)
    sim_flags(p)

    p = command("featurize", cmd_featurize, "build a design matrix")
    p.add_argument("--data")
    p.add_argument("--problems")
    p.add_argument("--ablation", choices=tuple(ABLATIONS), default="full")
    p.add_argument("--blocks", default="1,2,3,4,5")
    p.add_argument("--foresight-model", choices=MODEL_KINDS, default="beast")
    p.add_argument("--foresight-params")
    p.add_argument("--foresight-file")
    p.add_argument("--out", required=True)
    data_flags(p)
    sim_flags(p)

    p = command("train", cmd_train, "fit a forest or boosted model on a design matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--algo", choices=("forest", "boost"), default="forest")
    p.add_argument("--n-trees", type=int, default=500)
    p.add_argument("--n-rounds", type=int, default=978)
    p.add_argument("--out", required=True)

    p = command("predict", cmd_predict, "predict block rates with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)

    p = command("evaluate", cmd_evaluate, "score predictions against observed rates")
    p.add_argument("--predictions", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--baseline", help="second predictions file for a bootstrap comparison")
    p.add_argument("--anchors", help="ENO curve anchors as mse:eno;mse:eno")
    p.add_argument("--n-boot", type=int, default=2501)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--plot")
    p.add_argument("--out", required=True)
    data_flags(p)

    for name, func, help_ in (("ablate", cmd_ablate, "insight/foresight ablation table"),
                              ("compare", cmd_compare, "single models alone and as foresight")):
        p = command(name, func, help_)
        p.add_argument("--train", required=True)
        p.add_argument("--test", required=True)
        p.add_argument("--beast-params", help="BEAST parameters; grid-fitted on --train when omitted")
        p.add_argument("--grid", help="BEAST grid file used when fitting")
        p.add_argument("--plot")
        p.add_argument("--out", required=True)
        sim_flags(p)
        learner_flags(p)
        if name == "ablate":
            p.add_argument("--algorithms", default="forest,boost")
            p.add_argument("--seeds", default="")
        else:
            p.add_argument("--models", default="beast,cpt_stochastic,cpt_deterministic,dbs,ph")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    # read --config before the full parse so config values can satisfy required options
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    if not known.config or known.command not in choices:
        return parser.parse_args(argv)
    sub = choices[known.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in read_flat(known.config).items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "func", "help"):
            raise UsageError(f"unknown config key {key!r} for {known.command}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = value.lower() in ("1", "true", "yes")
        else:
            defaults[dest] = action.type(value) if action.type else value
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _error(code: int, exc: BaseException) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("line", "field"):
        if getattr(exc, attr, None) is not None:
            record[attr] = getattr(exc, attr)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        args.func(args)
    except UsageError as exc:
        return _error(EXIT_USAGE, exc)
    except VALIDATION_ERRORS as exc:
        return _error(EXIT_INVALID, exc)
    except Exception as exc:  # noqa: BLE001
        return _error(EXIT_INTERNAL, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
