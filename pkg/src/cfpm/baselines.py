"""Correlation-based regressors used as foils for the structural route.

Two predictors trained on the situation feature table: a variance-
reduction regression tree (binary splits, mean-valued leaves) and a lazy
locally weighted / k-nearest-neighbour regressor over the same
normalized-L1 metric the explanation pipeline uses.  Both score a
modified instance as if it were a fresh observation, which is exactly why
their accuracy collapses on counterfactual instances: neither the
recovered noise nor the downstream effects of an intervention exist for
them.

Accuracy for these regressors is the fraction of predictions within a
relative tolerance: |pred - true| <= eps * max(|true|, 1).  The tolerance
is reported alongside every number because the figure is meaningless
without it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .explain import Candidate, SemPredictor
from .sem import Sem
from .situations import Instance, NumericDomain, SituationTable


class TrainingError(ValueError):
    pass


def _numeric_matrix(
    table: SituationTable, features: Sequence[str]
) -> np.ndarray:
    """Rows x features matrix of floats with NaN for missing values."""
    out = np.full((len(table.rows), len(features)), np.nan)
    for i, row in enumerate(table.rows):
        for j, name in enumerate(features):
            v = row.values.get(name)
            if v is None:
                continue
            if isinstance(v, str):
                raise TrainingError(f"feature {name!r} is categorical, expected numeric")
            out[i, j] = float(v)
    return out


def _target_vector(table: SituationTable) -> np.ndarray:
    target = table.plan.target.name
    values = []
    for row in table.rows:
        v = row.values.get(target)
        if v is None or isinstance(v, str):
            raise TrainingError(f"target {target!r} must be numeric and present in every row")
        values.append(float(v))
    return np.asarray(values)


def _column_medians(X: np.ndarray, features: Sequence[str]) -> np.ndarray:
    medians = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            raise TrainingError(f"feature {features[j]!r} has no observed values")
        medians[j] = float(np.median(col))
    return medians


def _impute(X: np.ndarray, medians: np.ndarray) -> np.ndarray:
    X = X.copy()
    for j in range(X.shape[1]):
        col = X[:, j]
        col[np.isnan(col)] = medians[j]
    return X


class _Node:
    __slots__ = ("feature", "split", "left", "right", "value")

    def __init__(self, value: float):
        self.feature: int | None = None
        self.split = 0.0
        self.left: "_Node | None" = None
        self.right: "_Node | None" = None
        self.value = value


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exhaustive variance-reduction split search.

    Returns (sse, feature index, split value) for the split minimizing the
    summed squared error of the two children, or None when no split leaves
    min_leaf rows on each side.  Ties go to the lowest feature index and
    then the lowest split value, which keeps training deterministic.
    """
    n = len(y)
    best = None
    positions = np.arange(n - 1)
    sizes_left = positions + 1
    sizes_right = n - sizes_left
    for j in range(X.shape[1]):
        col = X[:, j]
        order = np.argsort(col, kind="stable")
        cs = col[order]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total, total_sq = csum[-1], csq[-1]
        sse_left = csq[:-1] - csum[:-1] ** 2 / sizes_left
        sse_right = (total_sq - csq[:-1]) - (total - csum[:-1]) ** 2 / sizes_right
        sse = sse_left + sse_right
        valid = (cs[:-1] < cs[1:]) & (sizes_left >= min_leaf) & (sizes_right >= min_leaf)
        if not valid.any():
            continue
        sse = np.where(valid, sse, np.inf)
        pos = int(np.argmin(sse))
        if best is None or sse[pos] < best[0]:
            best = (float(sse[pos]), j, float((cs[pos] + cs[pos + 1]) / 2))
    return best


class RegressionTree:
    """CART-style regression tree: greedy variance-reduction splits, mean leaves."""

    def __init__(
        self,
        features: Sequence[str],
        target: str,
        medians: np.ndarray,
        root: _Node,
        min_leaf: int,
        max_depth: int | None,
    ):
        self.features = tuple(features)
        self.target = target
        self.medians = medians
        self.root = root
        self.min_leaf = min_leaf
        self.max_depth = max_depth

    def predict_vector(self, x: np.ndarray) -> float:
        node = self.root
        while node.feature is not None:
            node = node.left if x[node.feature] <= node.split else node.right
        return node.value

    def predict_row(self, values: Mapping) -> float:
        x = np.empty(len(self.features))
        for j, name in enumerate(self.features):
            v = values.get(name)
            if v is None or isinstance(v, str):
                x[j] = self.medians[j]
            else:
                x[j] = float(v)
        return self.predict_vector(x)

    def leaf_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.feature is None:
                count += 1
            else:
                stack.extend((node.left, node.right))
        return count


def train_rt(
    table: SituationTable, min_leaf: int = 2, max_depth: int | None = None
) -> RegressionTree:
    """Fit a regression tree on the table's descriptive features.

    Growth stops when a split cannot leave `min_leaf` rows per child,
    when a node is pure, or at `max_depth` (None = unlimited).
    """
    if len(table.rows) < 2:
        raise TrainingError(f"need at least 2 rows to train, got {len(table.rows)}")
    if min_leaf < 1:
        raise TrainingError(f"min_leaf must be >= 1, got {min_leaf}")
    features = table.plan.descriptive_names
    y = _target_vector(table)
    X_raw = _numeric_matrix(table, features)
    medians = _column_medians(X_raw, features)
    X = _impute(X_raw, medians)

    root = _Node(float(np.mean(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        if len(idx) < 2 * min_leaf or np.all(ys == ys[0]):
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        found = _best_split(X[idx], ys, min_leaf)
        if found is None:
            continue
        _, j, split = found
        mask = X[idx, j] <= split
        node.feature = j
        node.split = split
        node.left = _Node(float(np.mean(ys[mask])))
        node.right = _Node(float(np.mean(ys[~mask])))
        stack.append((node.left, idx[mask], depth + 1))
        stack.append((node.right, idx[~mask], depth + 1))
    return RegressionTree(features, table.plan.target.name, medians, root, min_leaf, max_depth)


KERNEL_LINEAR = "linear"
KERNEL_UNIFORM = "uniform"


class LwlModel:
    """Lazy locally weighted regressor.

    Stores the training rows; a prediction is the kernel-weighted mean of
    the k nearest rows under the normalized-L1 metric (numeric features
    min-max scaled by the training domains, categorical features 0/1).
    The linear kernel weights neighbours by rank: k, k-1, ..., 1.
    """

    def __init__(
        self,
        features: Sequence[str],
        target: str,
        numeric_mask: np.ndarray,
        scaled: np.ndarray,
        categorical: list[list[str | None]],
        y: np.ndarray,
        los: np.ndarray,
        widths: np.ndarray,
        medians: np.ndarray,
        modes: list[str | None],
        k: int,
        kernel: str,
    ):
        self.features = tuple(features)
        self.target = target
        self.numeric_mask = numeric_mask
        self.scaled = scaled
        self.categorical = categorical
        self.y = y
        self.los = los
        self.widths = widths
        self.medians = medians
        self.modes = modes
        self.k = k
        self.kernel = kernel

    def _scale_query(self, values: Mapping) -> tuple[np.ndarray, list]:
        numeric = []
        cats = []
        num_idx = 0
        cat_idx = 0
        for j, name in enumerate(self.features):
            v = values.get(name)
            if self.numeric_mask[j]:
                if v is None or isinstance(v, str):
                    x = self.medians[num_idx]
                else:
                    x = float(v)
                width = self.widths[num_idx]
                lo = self.los[num_idx]
                numeric.append(0.0 if width == 0 else (x - lo) / width)
                num_idx += 1
            else:
                cats.append(self.modes[cat_idx] if v is None else v)
                cat_idx += 1
        return np.asarray(numeric), cats

    def predict_row(self, values: Mapping) -> float:
        q_num, q_cat = self._scale_query(values)
        dist = np.zeros(len(self.y))
        if q_num.size:
            dist += np.abs(self.scaled - q_num).sum(axis=1)
        for c, qv in enumerate(q_cat):
            col = self.categorical[c]
            dist += np.fromiter((0.0 if v == qv else 1.0 for v in col), float, len(col))
        order = np.argsort(dist, kind="stable")[: self.k]
        targets = self.y[order]
        if self.kernel == KERNEL_UNIFORM:
            return float(np.mean(targets))
        weights = np.arange(self.k, 0, -1, dtype=float)
        return float(np.dot(weights, targets) / weights.sum())


def train_lwl(table: SituationTable, k: int, kernel: str = KERNEL_LINEAR) -> LwlModel:
    if k < 1:
        raise TrainingError(f"k must be >= 1, got {k}")
    if k > len(table.rows):
        raise TrainingError(f"k={k} exceeds the {len(table.rows)} training rows")
    if kernel not in (KERNEL_LINEAR, KERNEL_UNIFORM):
        raise TrainingError(f"unknown kernel {kernel!r}")
    features = table.plan.descriptive_names
    y = _target_vector(table)

    numeric_mask = np.array(
        [isinstance(table.domains.get(f), NumericDomain) for f in features]
    )
    for j, name in enumerate(features):
        if name not in table.domains:
            raise TrainingError(f"feature {name!r} has no observed values")

    numeric_features = [f for f, m in zip(features, numeric_mask) if m]
    cat_features = [f for f, m in zip(features, numeric_mask) if not m]
    X_raw = _numeric_matrix_subset(table, numeric_features)
    medians = _column_medians(X_raw, numeric_features) if numeric_features else np.empty(0)
    X = _impute(X_raw, medians) if numeric_features else X_raw
    los = np.array([table.domains[f].lo for f in numeric_features])
    widths = np.array([table.domains[f].width for f in numeric_features])
    safe = np.where(widths == 0, 1.0, widths)
    scaled = (X - los) / safe
    scaled[:, widths == 0] = 0.0

    categorical: list[list] = []
    modes: list[str | None] = []
    for name in cat_features:
        col = [row.values.get(name) for row in table.rows]
        present = [v for v in col if v is not None]
        mode = min(
            sorted(set(present)), key=lambda v: (-present.count(v), v)
        ) if present else None
        categorical.append([mode if v is None else v for v in col])
        modes.append(mode)

    return LwlModel(
        features,
        table.plan.target.name,
        numeric_mask,
        scaled,
        categorical,
        y,
        los,
        widths,
        medians,
        modes,
        k,
        kernel,
    )


def _numeric_matrix_subset(table: SituationTable, features: Sequence[str]) -> np.ndarray:
    out = np.full((len(table.rows), len(features)), np.nan)
    for i, row in enumerate(table.rows):
        for j, name in enumerate(features):
            v = row.values.get(name)
            if v is not None:
                out[i, j] = float(v)
    return out


def predict_model(model, values: Mapping) -> float:
    """Plain model inference on a (possibly modified) instance.

    No abduction and no causal propagation: whatever values the mapping
    holds are taken at face value, missing ones are imputed.
    """
    return float(model.predict_row(values))


@dataclass(frozen=True)
class EvalReport:
    """Accuracy at a relative tolerance, with per-row residuals (pred - true)."""

    accuracy: float | None
    tolerance: float
    residuals: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.residuals)


def accuracy_report(
    predictions: Sequence[float], truths: Sequence[float], eps: float
) -> EvalReport:
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths differ in length")
    if not predictions:
        return EvalReport(None, eps, ())
    residuals = tuple(p - t for p, t in zip(predictions, truths))
    hits = sum(
        1 for p, t in zip(predictions, truths) if abs(p - t) <= eps * max(abs(t), 1.0)
    )
    return EvalReport(hits / len(predictions), eps, residuals)


def observational_accuracy(
    model, rows: Sequence[Instance], eps: float = 0.05
) -> EvalReport:
    """Accuracy of the model on held-out rows against their recorded target."""
    predictions = []
    truths = []
    for row in rows:
        truth = row.values.get(model.target)
        if truth is None or isinstance(truth, str):
            continue
        predictions.append(predict_model(model, row.values))
        truths.append(float(truth))
    return accuracy_report(predictions, truths, eps)


def counterfactual_accuracy(
    model,
    sem: Sem,
    instances: Sequence[Instance],
    candidates: Sequence[Candidate],
    eps: float = 0.05,
) -> EvalReport:
    """Accuracy against structural ground truth on every (instance, candidate) pair.

    The truth for a pair is the three-step counterfactual prediction; the
    model's answer substitutes the candidate values into the instance and
    scores it as a new data point.  Abduction failures propagate, so every
    instance must be consistent with the model.
    """
    predictor = SemPredictor(sem, model.target)
    predictions = []
    truths = []
    for instance in instances:
        for candidate in candidates:
            _, truth, _ = predictor.counterfactual(instance, candidate)
            predictions.append(
                predict_model(model, {**instance.values, **candidate.assignment})
            )
            truths.append(truth)
    return accuracy_report(predictions, truths, eps)


def split_rows(
    table: SituationTable, test_fraction: float, seed: int
) -> tuple[SituationTable, tuple[Instance, ...]]:
    """Seeded train/test split; the training part becomes a new table.

    Training domains are recomputed from the training rows only, so
    normalization never peeks at the held-out part.
    """
    if not 0 < test_fraction < 1:
        raise TrainingError(f"test fraction must be in (0, 1), got {test_fraction}")
    n = len(table.rows)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n - n_test < 2:
        raise TrainingError(
            f"insufficient rows for a {test_fraction:.0%} split: {n} rows"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    test_idx = set(int(i) for i in order[:n_test])
    train_rows = tuple(r for i, r in enumerate(table.rows) if i not in test_idx)
    test_rows = tuple(r for i, r in enumerate(table.rows) if i in test_idx)
    from .situations import compute_domains

    train_table = SituationTable(
        table.plan,
        train_rows,
        compute_domains(table.plan.feature_names, train_rows),
        table.dropped_missing_target,
    )
    return train_table, test_rows


def report_to_dict(report: EvalReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "tolerance": report.tolerance,
        "n": report.n,
        "residuals": list(report.residuals),
    }


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"
