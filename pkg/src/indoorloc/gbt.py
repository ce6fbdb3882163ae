"""Multinomial gradient-boosted regression trees with histogram split search.

The model is a stage-wise additive ensemble over K classes.  The initial score
vector holds the log of the weighted class priors (the constant minimizer of
multinomial deviance).  Every stage fits one depth-bounded regression tree per
class to the residual ``one_hot(y) - softmax(scores)`` and advances the scores
by ``learning_rate`` times a per-leaf Newton step
``((K-1)/K) * sum(w*residual) / sum(w*p*(1-p))`` with the denominator floored
at 1e-9.

Split search is histogram based.  Each feature column is pre-binned into at
most ``n_bins`` equal-frequency bins over its *distinct* values (so a single
heavily repeated value, such as a not-detected sentinel, occupies one bin and
any strictly increasing transform of a column leaves the binning unchanged).
Candidate splits are scored by weighted variance reduction of the residual
target, normalized by the node's total weight; ties resolve to the lowest
feature index, then the lowest bin boundary, so fitting is deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit, prange

__all__ = [
    "GbtParams",
    "RegressionTree",
    "GbtModel",
    "Binned",
    "SplitDecision",
    "build_bins",
    "find_best_split",
    "gbt_fit",
    "gbt_predict_scores",
    "gbt_predict_proba",
    "gbt_predict",
    "gbt_scores_all",
    "gbt_predict_all",
    "save_model",
    "load_model",
]

_NEWTON_DENOM_FLOOR = 1e-9
_GRADIENT_STOP = 1e-12
_PRIOR_FLOOR = 1e-15
# Bin ids are stored as uint8 during fitting.
_MAX_FIT_BINS = 255


@dataclass(frozen=True)
class GbtParams:
    """Hyperparameters for gradient-boosted tree fitting."""

    n_trees: int = 50
    max_depth: int = 5
    min_rows_per_leaf: int = 10
    min_split_improvement: float = 1e-5
    n_bins: int = 20
    learning_rate: float = 0.01
    sample_rate: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be positive, got {self.n_trees}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be positive, got {self.max_depth}")
        if self.min_rows_per_leaf < 1:
            raise ValueError(
                f"min_rows_per_leaf must be positive, got {self.min_rows_per_leaf}"
            )
        if self.min_split_improvement < 0:
            raise ValueError(
                "min_split_improvement must be non-negative, "
                f"got {self.min_split_improvement}"
            )
        if not 1 <= self.n_bins <= _MAX_FIT_BINS:
            raise ValueError(
                f"n_bins must be in [1, {_MAX_FIT_BINS}], got {self.n_bins}"
            )
        if self.learning_rate < 0:
            raise ValueError(
                f"learning_rate must be non-negative, got {self.learning_rate}"
            )
        if not 0.0 < self.sample_rate <= 1.0:
            raise ValueError(f"sample_rate must be in (0, 1], got {self.sample_rate}")


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """One fitted regression tree in flat-array form.

    ``feature[i] == -1`` marks node ``i`` as a leaf; internal nodes route a row
    left when ``x[feature] <= threshold``.  ``split_bin`` holds the equivalent
    bin boundary used during training, ``n_rows`` the training rows that
    reached each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    split_bin: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_rows: np.ndarray
    depth: int

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])


@dataclass(frozen=True, eq=False)
class GbtModel:
    """A fitted multinomial gradient-boosted tree ensemble."""

    classes: tuple
    initial_scores: np.ndarray
    stages: tuple  # tuple of per-stage tuples, one RegressionTree per class
    params: GbtParams
    feature_count: int
    train_losses: tuple  # weighted deviance after the prior and each stage

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_stages(self) -> int:
        return len(self.stages)


@dataclass(frozen=True, eq=False)
class Binned:
    """Result of quantile binning: internal edges and per-row bin ids."""

    edges: np.ndarray
    ids: np.ndarray

    @property
    def n_bins(self) -> int:
        return int(self.edges.shape[0]) + 1


@dataclass(frozen=True)
class SplitDecision:
    """A chosen split: rows with bin id <= bin_threshold go left."""

    bin_threshold: int
    improvement: float


def build_bins(column: Sequence[float], n_bins: int) -> Binned:
    """Bin a column into at most ``n_bins`` equal-frequency groups of its distinct values.

    The mapping is monotone (x <= y implies bin(x) <= bin(y)) and depends only
    on the rank order of the distinct values.
    """
    if n_bins < 1:
        raise ValueError(f"n_bins must be positive, got {n_bins}")
    values = np.asarray(column, dtype=np.float64).ravel()
    if values.size and not np.all(np.isfinite(values)):
        raise ValueError("column contains non-finite values")
    distinct = np.unique(values)
    if distinct.size <= 1:
        return Binned(
            edges=np.empty(0, dtype=np.float64),
            ids=np.zeros(values.shape, dtype=np.int64),
        )
    if distinct.size <= n_bins:
        uppers = distinct[:-1]
        lowers = distinct[1:]
    else:
        groups = np.array_split(distinct, n_bins)
        uppers = np.array([g[-1] for g in groups[:-1]])
        lowers = np.array([g[0] for g in groups[1:]])
    edges = (uppers + lowers) / 2.0
    # A midpoint can collapse onto the lower value for adjacent floats; rows
    # equal to an edge must still go left, which searchsorted(..., "left")
    # guarantees.
    ids = np.searchsorted(edges, values, side="left").astype(np.int64)
    return Binned(edges=edges, ids=ids)


def find_best_split(
    binned_column: Sequence[int],
    gradients: Sequence[float],
    hessians: Sequence[float],
    weights: Sequence[float],
    params: GbtParams,
) -> Optional[SplitDecision]:
    """Pick the bin boundary maximizing weighted variance reduction of the gradients.

    Returns None when no boundary clears ``min_split_improvement``, when either
    side would hold fewer than ``min_rows_per_leaf`` rows, or on empty input.
    """
    ids = np.asarray(binned_column, dtype=np.int64).ravel()
    g = np.asarray(gradients, dtype=np.float64).ravel()
    h = np.asarray(hessians, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if not ids.shape == g.shape == h.shape == w.shape:
        raise ValueError("binned_column, gradients, hessians and weights must align")
    if ids.size == 0:
        return None
    if ids.min() < 0 or ids.max() >= params.n_bins:
        raise ValueError("bin ids must lie in [0, n_bins)")
    if np.any(h < 0):
        raise ValueError("hessians must be non-negative")
    n_bins = params.n_bins
    cnt = np.bincount(ids, minlength=n_bins).astype(np.float64)
    sw = np.bincount(ids, weights=w, minlength=n_bins)
    swg = np.bincount(ids, weights=w * g, minlength=n_bins)
    swg2 = np.bincount(ids, weights=w * g * g, minlength=n_bins)
    improvements = _boundary_improvements(
        cnt[None, :], sw[None, :], swg[None, :], swg2[None, :], params.min_rows_per_leaf
    )[0]
    if improvements.size == 0:
        return None
    best = int(np.argmax(improvements))
    best_imp = float(improvements[best])
    if not np.isfinite(best_imp) or best_imp <= 0 or best_imp < params.min_split_improvement:
        return None
    return SplitDecision(bin_threshold=best, improvement=best_imp)


def gbt_fit(
    features,
    labels,
    sample_weights=None,
    params: GbtParams | None = None,
) -> GbtModel:
    """Fit a multinomial gradient-boosted tree ensemble.

    ``sample_weights`` default to uniform; they enter the class priors, the
    split criterion and the Newton leaf steps.  Fitting stops after
    ``params.n_trees`` stages or as soon as every residual magnitude falls
    below 1e-12 (e.g. a single-class target).
    """
    if params is None:
        params = GbtParams()
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"features must be a 2-D matrix, got ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    y = np.asarray(labels)
    n, n_features = X.shape
    if y.shape != (n,):
        raise ValueError(f"labels length {y.shape} does not match {n} rows")
    if sample_weights is None:
        w = np.ones(n, dtype=np.float64)
    else:
        w = np.asarray(sample_weights, dtype=np.float64).ravel()
        if w.shape != (n,):
            raise ValueError(f"sample_weights length {w.shape} does not match {n} rows")
        if np.any(w < 0):
            raise ValueError("sample_weights must be non-negative")
        if not np.any(w > 0):
            raise ValueError("sample_weights must not all be zero")
    if n == 0:
        raise ValueError("cannot fit on an empty dataset")

    class_values = np.unique(y)
    classes = tuple(class_values.tolist())
    k_classes = len(classes)
    y_idx = np.searchsorted(class_values, y)

    total_w = w.sum()
    priors = np.bincount(y_idx, weights=w, minlength=k_classes) / total_w
    initial_scores = np.log(np.maximum(priors, _PRIOR_FLOOR))

    binned_t = np.empty((n_features, n), dtype=np.uint8)
    bin_edges: list[np.ndarray] = []
    for j in range(n_features):
        binned = build_bins(X[:, j], params.n_bins)
        binned_t[j] = binned.ids
        bin_edges.append(binned.edges)

    scores = np.tile(initial_scores, (n, 1))
    one_hot = np.zeros((n, k_classes), dtype=np.float64)
    one_hot[np.arange(n), y_idx] = 1.0
    k_factor = (k_classes - 1) / k_classes if k_classes > 1 else 1.0
    rng = np.random.default_rng(params.seed)
    all_rows = np.arange(n, dtype=np.int64)

    stages = []
    losses = [_weighted_deviance(scores, y_idx, w, total_w)]
    for _ in range(params.n_trees):
        probs = _softmax(scores)
        residuals = one_hot - probs
        if np.max(np.abs(residuals)) < _GRADIENT_STOP:
            break
        hessians = probs * (1.0 - probs)
        if params.sample_rate < 1.0:
            m = max(1, int(round(params.sample_rate * n)))
            stage_rows = np.sort(rng.choice(n, size=min(m, n), replace=False))
            stage_rows = stage_rows.astype(np.int64)
        else:
            stage_rows = all_rows
        stage_trees = []
        for k in range(k_classes):
            tree, row_values = _build_tree(
                binned_t,
                bin_edges,
                stage_rows,
                residuals[:, k],
                hessians[:, k],
                w,
                params,
                k_factor,
            )
            if stage_rows.size < n:
                out_rows = np.setdiff1d(all_rows, stage_rows, assume_unique=True)
                row_values[out_rows] = _tree_values_binned(tree, binned_t, out_rows)
            scores[:, k] += params.learning_rate * row_values
            stage_trees.append(tree)
        stages.append(tuple(stage_trees))
        losses.append(_weighted_deviance(scores, y_idx, w, total_w))

    return GbtModel(
        classes=classes,
        initial_scores=initial_scores,
        stages=tuple(stages),
        params=params,
        feature_count=n_features,
        train_losses=tuple(losses),
    )


def gbt_predict_scores(model: GbtModel, row) -> np.ndarray:
    """Per-class additive scores for one feature vector."""
    return gbt_scores_all(model, np.asarray(row, dtype=np.float64).reshape(1, -1))[0]


def gbt_predict_proba(model: GbtModel, row) -> np.ndarray:
    """Softmax class probabilities for one feature vector."""
    return _softmax(gbt_predict_scores(model, row)[None, :])[0]


def gbt_predict(model: GbtModel, row):
    """Class label with the maximal score; ties go to the lowest class index."""
    scores = gbt_predict_scores(model, row)
    return model.classes[int(np.argmax(scores))]


def gbt_scores_all(model: GbtModel, features) -> np.ndarray:
    """Per-class scores for every row of a feature matrix."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise ValueError(
            f"expected shape (*, {model.feature_count}), got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    scores = np.tile(model.initial_scores, (X.shape[0], 1))
    lr = model.params.learning_rate
    for stage in model.stages:
        for k, tree in enumerate(stage):
            scores[:, k] += lr * _tree_values_raw(tree, X)
    return scores


def gbt_predict_all(model: GbtModel, features) -> np.ndarray:
    """Predicted class labels for every row of a feature matrix."""
    scores = gbt_scores_all(model, features)
    idx = np.argmax(scores, axis=1)
    return np.asarray(model.classes)[idx]


# ---------------------------------------------------------------------------
# serialization

_FORMAT = "indoorloc.gbt"
_VERSION = 1


def model_to_dict(model: GbtModel) -> dict:
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "params": asdict(model.params),
        "classes": list(model.classes),
        "initial_scores": model.initial_scores.tolist(),
        "feature_count": model.feature_count,
        "train_losses": list(model.train_losses),
        "stages": [
            [_tree_to_dict(tree) for tree in stage] for stage in model.stages
        ],
    }


def model_from_dict(payload: dict) -> GbtModel:
    if payload.get("format") != _FORMAT:
        raise ValueError(f"not a {_FORMAT} payload: format={payload.get('format')!r}")
    if payload.get("version") != _VERSION:
        raise ValueError(f"unsupported {_FORMAT} version {payload.get('version')!r}")
    return GbtModel(
        classes=tuple(payload["classes"]),
        initial_scores=np.asarray(payload["initial_scores"], dtype=np.float64),
        stages=tuple(
            tuple(_tree_from_dict(t) for t in stage) for stage in payload["stages"]
        ),
        params=GbtParams(**payload["params"]),
        feature_count=int(payload["feature_count"]),
        train_losses=tuple(payload["train_losses"]),
    )


def save_model(model: GbtModel, path: str | Path) -> None:
    """Write the model as self-describing JSON; floats round-trip exactly."""
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path) -> GbtModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def _tree_to_dict(tree: RegressionTree) -> dict:
    internal = tree.feature >= 0
    return {
        "feature": tree.feature.tolist(),
        "threshold": [
            float(t) if keep else None for t, keep in zip(tree.threshold, internal)
        ],
        "split_bin": tree.split_bin.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "n_rows": tree.n_rows.tolist(),
        "depth": tree.depth,
    }


def _tree_from_dict(payload: dict) -> RegressionTree:
    threshold = np.array(
        [np.nan if t is None else t for t in payload["threshold"]], dtype=np.float64
    )
    return RegressionTree(
        feature=np.asarray(payload["feature"], dtype=np.int32),
        threshold=threshold,
        split_bin=np.asarray(payload["split_bin"], dtype=np.int32),
        left=np.asarray(payload["left"], dtype=np.int32),
        right=np.asarray(payload["right"], dtype=np.int32),
        value=np.asarray(payload["value"], dtype=np.float64),
        n_rows=np.asarray(payload["n_rows"], dtype=np.int64),
        depth=int(payload["depth"]),
    )


# ---------------------------------------------------------------------------
# fitting internals


@njit(parallel=True, cache=True)
def _hist_kernel(binned_t, rows, w_node, wg_node, wg2_node, out):  # pragma: no cover
    # out: (n_features, 4, n_bins) zeroed; stats are count, sum w, sum w*g,
    # sum w*g*g.  Features are independent, so the parallel loop is
    # deterministic for any thread count.
    n_features = binned_t.shape[0]
    m = rows.shape[0]
    for f in prange(n_features):
        col = binned_t[f]
        acc = out[f]
        for i in range(m):
            b = col[rows[i]]
            acc[0, b] += 1.0
            acc[1, b] += w_node[i]
            acc[2, b] += wg_node[i]
            acc[3, b] += wg2_node[i]


def _boundary_improvements(cnt, sw, swg, swg2, min_rows):
    """Variance-reduction score for every bin boundary of every feature.

    Inputs have shape (n_features, n_bins); the result has shape
    (n_features, n_bins - 1) with -inf where a side would be under-filled.
    """
    ccnt = np.cumsum(cnt, axis=1)
    csw = np.cumsum(sw, axis=1)
    cswg = np.cumsum(swg, axis=1)
    cswg2 = np.cumsum(swg2, axis=1)
    tot_cnt = ccnt[:, -1:]
    tot_sw = csw[:, -1:]
    tot_swg = cswg[:, -1:]
    tot_swg2 = cswg2[:, -1:]

    left_cnt = ccnt[:, :-1]
    right_cnt = tot_cnt - left_cnt
    s_total = _scatter(tot_swg2, tot_swg, tot_sw)
    s_left = _scatter(cswg2[:, :-1], cswg[:, :-1], csw[:, :-1])
    s_right = _scatter(
        tot_swg2 - cswg2[:, :-1], tot_swg - cswg[:, :-1], tot_sw - csw[:, :-1]
    )
    denom = np.where(tot_sw > 0, tot_sw, 1.0)
    improvements = (s_total - s_left - s_right) / denom
    valid = (left_cnt >= min_rows) & (right_cnt >= min_rows)
    return np.where(valid, improvements, -np.inf)


def _scatter(swg2, swg, sw):
    # Weighted sum of squared deviations; clamped to guard cancellation.
    mean_term = np.divide(swg * swg, sw, out=np.zeros_like(swg), where=sw > 0)
    return np.maximum(swg2 - mean_term, 0.0)


def _pick_split(hist, params: GbtParams):
    improvements = _boundary_improvements(
        hist[:, 0], hist[:, 1], hist[:, 2], hist[:, 3], params.min_rows_per_leaf
    )
    if improvements.size == 0:
        return None
    flat = int(np.argmax(improvements))
    best = float(improvements.flat[flat])
    if not np.isfinite(best) or best <= 0 or best < params.min_split_improvement:
        return None
    n_boundaries = improvements.shape[1]
    return flat // n_boundaries, flat % n_boundaries, best


def _build_tree(
    binned_t, bin_edges, rows, residual, hessian, w, params: GbtParams, k_factor
):
    """Fit one tree to the residual target over ``rows``.

    Returns the tree and a length-n vector holding each sampled row's leaf
    value (other rows stay zero and are filled by the caller if needed).
    """
    n_features = binned_t.shape[0]
    n_total = binned_t.shape[1]
    wg = w * residual
    wg2 = wg * residual
    wh = w * hessian
    row_values = np.zeros(n_total, dtype=np.float64)

    feature = [np.int32(-1)]
    threshold = [np.nan]
    split_bin = [np.int32(-1)]
    left = [np.int32(-1)]
    right = [np.int32(-1)]
    value = [0.0]
    n_rows = [np.int64(0)]
    max_depth_seen = 0

    def new_node() -> int:
        feature.append(np.int32(-1))
        threshold.append(np.nan)
        split_bin.append(np.int32(-1))
        left.append(np.int32(-1))
        right.append(np.int32(-1))
        value.append(0.0)
        n_rows.append(np.int64(0))
        return len(feature) - 1

    def node_hist(node_rows):
        out = np.zeros((n_features, 4, params.n_bins), dtype=np.float64)
        _hist_kernel(binned_t, node_rows, w[node_rows], wg[node_rows], wg2[node_rows], out)
        return out

    def make_leaf(node: int, node_rows) -> None:
        num = wg[node_rows].sum()
        den = wh[node_rows].sum()
        leaf_value = k_factor * num / max(den, _NEWTON_DENOM_FLOOR)
        value[node] = leaf_value
        row_values[node_rows] = leaf_value

    def settle(node: int, node_rows, depth: int, hist) -> None:
        nonlocal max_depth_seen
        max_depth_seen = max(max_depth_seen, depth)
        n_rows[node] = np.int64(node_rows.size)
        if depth >= params.max_depth or node_rows.size < 2 * params.min_rows_per_leaf:
            make_leaf(node, node_rows)
            return
        if hist is None:
            hist = node_hist(node_rows)
        best = _pick_split(hist, params)
        if best is None:
            make_leaf(node, node_rows)
            return
        f, b, _ = best
        mask = binned_t[f, node_rows] <= b
        left_rows = node_rows[mask]
        right_rows = node_rows[~mask]
        # Build the smaller child's histogram and derive the sibling's by
        # subtraction from the parent's.
        if left_rows.size <= right_rows.size:
            left_hist = node_hist(left_rows)
            right_hist = hist - left_hist
        else:
            right_hist = node_hist(right_rows)
            left_hist = hist - right_hist
        feature[node] = np.int32(f)
        threshold[node] = float(bin_edges[f][b])
        split_bin[node] = np.int32(b)
        left_id = new_node()
        right_id = new_node()
        left[node] = np.int32(left_id)
        right[node] = np.int32(right_id)
        settle(left_id, left_rows, depth + 1, left_hist)
        settle(right_id, right_rows, depth + 1, right_hist)

    settle(0, rows, 0, None)
    tree = RegressionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        split_bin=np.asarray(split_bin, dtype=np.int32),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        n_rows=np.asarray(n_rows, dtype=np.int64),
        depth=max_depth_seen,
    )
    return tree, row_values


def _tree_values_binned(tree: RegressionTree, binned_t, rows) -> np.ndarray:
    """Leaf values for rows addressed through the pre-binned training matrix."""
    node = np.zeros(rows.size, dtype=np.int32)
    while True:
        feats = tree.feature[node]
        active = np.flatnonzero(feats >= 0)
        if active.size == 0:
            break
        cur = node[active]
        bins = binned_t[feats[active], rows[active]]
        go_left = bins <= tree.split_bin[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
    return tree.value[node]


def _tree_values_raw(tree: RegressionTree, X) -> np.ndarray:
    """Leaf values for raw feature rows (x <= threshold routes left)."""
    node = np.zeros(X.shape[0], dtype=np.int32)
    while True:
        feats = tree.feature[node]
        active = np.flatnonzero(feats >= 0)
        if active.size == 0:
            break
        cur = node[active]
        xv = X[active, feats[active]]
        go_left = xv <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
    return tree.value[node]


def _softmax(scores) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _weighted_deviance(scores, y_idx, w, total_w) -> float:
    probs = _softmax(scores)
    picked = probs[np.arange(scores.shape[0]), y_idx]
    return float(-(w * np.log(np.maximum(picked, 1e-300))).sum() / total_w)
