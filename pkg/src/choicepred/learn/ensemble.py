"""Random forest and second-order gradient boosting on top of :mod:`.tree`.

Both learners are deterministic given ``seed``: tree ``t`` (or boosting round
``t``) draws everything from ``substream(seed, t)``. Rows are first put in a
canonical order (by row key when given) so that shuffling the training set
leaves the model unchanged.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ContractError, SchemaMismatchError
from ..rng import derive_seed, substream
from .tree import RegressionTree, fit_tree, presort

MODEL_FORMAT = "1"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # None: max(1, floor(p / 3))
    min_node_size: int = 5
    max_depth: int | None = None

    def __post_init__(self):
        if self.n_trees < 1 or self.min_node_size < 1 or (self.mtry is not None and self.mtry < 1):
            raise ContractError("need n_trees >= 1, min_node_size >= 1 and mtry >= 1")

    def resolved_mtry(self, p: int) -> int:
        return self.mtry if self.mtry is not None else max(1, p // 3)


@dataclass(frozen=True)
class BoostConfig:
    learning_rate: float = 0.01088
    max_depth: int = 3
    n_rounds: int = 978
    gamma: float = 0.01224
    reg_alpha: float = 0.04306
    reg_lambda: float = 2.90538
    colsample: float = 0.99120
    subsample: float = 0.50796
    min_child_weight: float = 1.0

    def __post_init__(self):
        if not (0 < self.colsample <= 1 and 0 < self.subsample <= 1):
            raise ContractError("colsample and subsample must lie in (0, 1]")
        if self.learning_rate <= 0 or self.n_rounds < 0 or self.max_depth < 1:
            raise ContractError("need learning_rate > 0, n_rounds >= 0, max_depth >= 1")


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """A fitted forest (mean of trees) or boosted model (base + lr * sum)."""

    kind: str
    trees: tuple[RegressionTree, ...]
    n_features: int
    schema: str = ""
    seed: int = 0
    config: dict = field(default_factory=dict)
    base_score: float = 0.0
    learning_rate: float = 1.0

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaMismatchError(f"model expects {self.n_features} features, got {X.shape[-1]}")
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        if self.kind == "forest":
            return total / len(self.trees)
        return self.base_score + self.learning_rate * total

    def predict(self, X: np.ndarray, schema: str | None = None) -> np.ndarray:
        """Predicted choice rates, clipped to [0, 1]."""
        if schema is not None and self.schema and schema != self.schema:
            raise SchemaMismatchError(f"model schema {self.schema!r} does not match {schema!r}")
        return np.clip(self.predict_raw(X), 0.0, 1.0)


def _canonical(X, y, row_keys):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ContractError("X must be 2-d with one target per row")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ContractError("features and targets must be finite")
    if row_keys is None:
        return X, y
    keys = list(row_keys)
    if len(keys) != len(y):
        raise ContractError("one row key per row")
    order = sorted(range(len(keys)), key=lambda i: keys[i])
    return X[order], y[order]


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def fit_forest(X: np.ndarray, y: np.ndarray, config: ForestConfig = ForestConfig(), seed: int = 0,
               row_keys: Sequence | None = None, workers: int = 1, schema: str = "") -> EnsembleModel:
    """Bagged CART trees with a fresh feature subset at every split."""
    X, y = _canonical(X, y, row_keys)
    n, p = X.shape
    mtry = config.resolved_mtry(p)

    def grow(t):
        rng = substream(seed, t)
        rows = rng.integers(0, n, n)
        keys = rng.random((2 * n + 1, p)) if mtry < p else None
        return fit_tree(X, y, rows=rows, mtry=mtry, feature_keys=keys,
                        min_node_size=config.min_node_size, max_depth=config.max_depth)

    trees = _map(grow, range(config.n_trees), workers)
    return EnsembleModel("forest", tuple(trees), p, schema, seed, asdict(config))


def fit_boosted(X: np.ndarray, y: np.ndarray, config: BoostConfig = BoostConfig(), seed: int = 0,
                row_keys: Sequence | None = None, schema: str = "") -> EnsembleModel:
    """Squared-error boosting: g = prediction - target, h = 1."""
    X, y = _canonical(X, y, row_keys)
    n, p = X.shape
    order = presort(X)
    base = float(y.mean())
    pred = np.full(n, base)
    n_cols = max(1, int(round(config.colsample * p)))
    trees = []
    for t in range(config.n_rounds):
        rng = substream(seed, t)
        rows = np.nonzero(rng.random(n) < config.subsample)[0]
        if len(rows) == 0:
            rows = np.array([rng.integers(n)])
        cols = np.sort(rng.permutation(p)[:n_cols])
        tree = fit_tree(X, grad=pred - y, rows=rows, features=cols, max_depth=config.max_depth,
                        reg_lambda=config.reg_lambda, reg_alpha=config.reg_alpha,
                        gamma_split=config.gamma, min_child_weight=config.min_child_weight,
                        presorted=order)
        pred += config.learning_rate * tree.predict(X)
        trees.append(tree)
    return EnsembleModel("boost", tuple(trees), p, schema, seed, asdict(config), base, config.learning_rate)


def fit_model(kind: str, X, y, seed: int = 0, row_keys=None, config=None, workers: int = 1,
              schema: str = "") -> EnsembleModel:
    if kind == "forest":
        return fit_forest(X, y, config or ForestConfig(), seed, row_keys, workers, schema)
    if kind == "boost":
        return fit_boosted(X, y, config or BoostConfig(), seed, row_keys, schema)
    raise ContractError(f"unknown learner {kind!r}; expected forest or boost")


def averaged_predictions(kind: str, X_train, y_train, X_test, n_runs: int = 20, seed: int = 0,
                         row_keys=None, config=None, workers: int = 1) -> np.ndarray:
    """Mean clipped prediction over ``n_runs`` fits with seeds ``(seed, run)``."""
    out = np.zeros(len(X_test))
    for run in range(n_runs):
        out += fit_model(kind, X_train, y_train, derive_seed(seed, "run", run), row_keys, config, workers).predict(X_test)
    return out / n_runs


# ---- model files ---------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_model(model: EnsembleModel, path: str | Path) -> None:
    """Plain-text model: ``key=value`` header, then one CSV record per node in pre-order."""
    lines = ["# choicepred model", f"format={MODEL_FORMAT}", f"kind={model.kind}",
             f"schema={model.schema}", f"seed={model.seed}", f"n_features={model.n_features}",
             f"base_score={model.base_score!r}", f"learning_rate={model.learning_rate!r}"]
    lines += [f"config.{k}={_fmt(v)}" for k, v in sorted(model.config.items())]
    lines.append(f"n_trees={len(model.trees)}")
    lines.append("tree,node_id,feature,threshold,left,right,leaf_value")
    for t, tree in enumerate(model.trees):
        for i in range(tree.n_nodes):
            leaf = tree.feature[i] < 0
            lines.append(",".join([str(t), str(i), str(int(tree.feature[i])),
                                   "" if leaf else repr(float(tree.threshold[i])),
                                   str(int(tree.left[i])), str(int(tree.right[i])),
                                   repr(float(tree.value[i]))]))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_config(raw: dict[str, str]) -> dict:
    out = {}
    for k, v in raw.items():
        if v == "none":
            out[k] = None
        else:
            try:
                out[k] = int(v)
            except ValueError:
                out[k] = float(v)
    return out


def load_model(path: str | Path) -> EnsembleModel:
    text = Path(path).read_text().splitlines()
    header: dict[str, str] = {}
    config: dict[str, str] = {}
    k = 0
    while k < len(text) and not text[k].startswith("tree,"):
        line = text[k].strip()
        k += 1
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if key.startswith("config."):
            config[key[len("config."):]] = value
        else:
            header[key] = value
    if header.get("format") != MODEL_FORMAT:
        raise ContractError(f"unsupported model format {header.get('format')!r}")
    rows: dict[int, list] = {}
    for line in text[k + 1:]:
        if not line.strip():
            continue
        t, i, f, thr, l, r, v = line.split(",")
        rows.setdefault(int(t), []).append((int(i), int(f), float(thr) if thr else np.nan,
                                            int(l), int(r), float(v)))
    trees = []
    for t in range(int(header["n_trees"])):
        recs = sorted(rows[t])
        cols = list(zip(*recs))
        trees.append(RegressionTree(np.array(cols[1], dtype=np.int64), np.array(cols[2]),
                                    np.array(cols[3], dtype=np.int64), np.array(cols[4], dtype=np.int64),
                                    np.array(cols[5])))
    return EnsembleModel(header["kind"], tuple(trees), int(header["n_features"]), header.get("schema", ""),
                         int(header["seed"]), _parse_config(config), float(header["base_score"]),
                         float(header["learning_rate"]))
