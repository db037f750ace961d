"""Urbanization forecasting: gradient-boosted trees, branch routing, metrics.

The model is a two-stage architecture. A boosted-tree classifier scores
each tile window for urbanization activity; windows above the routing
threshold go to the active branch (a per-tile trend extrapolator over the
input frames), the rest to a boosted-tree regressor over tabular
features. The boosted trees are implemented here directly: exact greedy
split search on gradient/hessian sums, squared loss for regression and
logistic loss for classification.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataUnavailableError,
    FormatError,
    PipelineError,
    UndefinedMetricError,
    ValidationError,
)
from .metrics import FrameSequence, TileMetricsTable, class_proportions
from .raster import BUILT

ACTIVE = "active"
STATIC = "static"

DEFAULT_TAU = 0.01
DEFAULT_W = 100.0
ROUTE_THRESHOLD_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))

_EPS = 1e-12
_MIN_GAIN = 1e-12


# -- losses ------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def _squared_loss(y: np.ndarray, raw: np.ndarray) -> float:
    return float(np.mean((raw - y) ** 2))


def _logistic_loss(y: np.ndarray, raw: np.ndarray) -> float:
    p = np.clip(_sigmoid(raw), 1e-15, 1.0 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# -- gradient-boosted trees ---------------------------------------------------


@dataclass(frozen=True)
class GBTParams:
    num_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 20
    loss: str = "squared"
    seed: int = 0

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValidationError(f"num_rounds must be >= 1, got {self.num_rounds}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.max_depth < 1:
            raise ValidationError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValidationError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.loss not in ("squared", "logistic"):
            raise ValidationError(f"unknown loss {self.loss!r}")


@dataclass
class GBTModel:
    base_score: float
    trees: list
    loss: str
    learning_rate: float
    num_features: int
    train_losses: list[float] = field(default_factory=list)

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        X = _check_features(X, self.num_features)
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        scratch = np.zeros(X.shape[0], dtype=np.float64)
        for tree in self.trees:
            scratch[:] = 0.0
            _tree_apply(tree, X, np.arange(X.shape[0]), scratch)
            out += self.learning_rate * scratch
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Regression value for squared loss, probability for logistic loss."""
        raw = self.predict_raw(X)
        return _sigmoid(raw) if self.loss == "logistic" else raw

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "num_features": self.num_features,
            "trees": self.trees,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GBTModel":
        try:
            return cls(
                base_score=float(doc["base_score"]),
                trees=list(doc["trees"]),
                loss=str(doc["loss"]),
                learning_rate=float(doc["learning_rate"]),
                num_features=int(doc["num_features"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model document: {exc}") from exc


def _check_features(X, num_features=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("feature matrix contains non-finite values")
    if num_features is not None and X.shape[1] != num_features:
        raise ValidationError(f"expected {num_features} features, got {X.shape[1]}")
    return X


def _tree_apply(node: dict, X: np.ndarray, idx: np.ndarray, out: np.ndarray) -> None:
    if "leaf" in node:
        out[idx] = node["leaf"]
        return
    go_left = X[idx, node["feature"]] < node["threshold"]
    _tree_apply(node["left"], X, idx[go_left], out)
    _tree_apply(node["right"], X, idx[~go_left], out)


def _find_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, idx: np.ndarray, msl: int):
    """Best (gain, feature, threshold, left_idx, right_idx) or None.

    Candidates are midpoints between consecutive distinct values; ties on
    gain resolve to the lowest feature index, then the lowest threshold,
    which the ascending scan order provides for free.
    """
    n = idx.size
    if n < 2 * msl:
        return None
    g_sum = g[idx].sum()
    h_sum = h[idx].sum()
    parent = g_sum * g_sum / (h_sum + _EPS)
    best = None
    for f in range(X.shape[1]):
        values = X[idx, f]
        order = np.argsort(values, kind="stable")
        xs = values[order]
        gp = np.cumsum(g[idx][order])
        hp = np.cumsum(h[idx][order])
        pos = np.arange(n - 1)
        ok = (xs[:-1] < xs[1:]) & (pos + 1 >= msl) & (n - pos - 1 >= msl)
        if not ok.any():
            continue
        cand = pos[ok]
        gl, hl = gp[cand], hp[cand]
        gr, hr = g_sum - gl, h_sum - hl
        gains = gl * gl / (hl + _EPS) + gr * gr / (hr + _EPS) - parent
        k = int(np.argmax(gains))  # first max = lowest threshold
        if gains[k] > _MIN_GAIN and (best is None or gains[k] > best[0]):
            p = int(cand[k])
            threshold = (float(xs[p]) + float(xs[p + 1])) / 2.0
            best = (float(gains[k]), f, threshold, idx[order[: p + 1]], idx[order[p + 1 :]])
    return best


def _build_tree(X, g, h, idx, depth, params: GBTParams) -> dict:
    split = None if depth >= params.max_depth else _find_split(X, g, h, idx, params.min_samples_leaf)
    if split is None:
        g_sum = g[idx].sum()
        h_sum = h[idx].sum()
        return {"leaf": float(-g_sum / (h_sum + _EPS))}
    _, f, threshold, left, right = split
    return {
        "feature": f,
        "threshold": threshold,
        "left": _build_tree(X, g, h, left, depth + 1, params),
        "right": _build_tree(X, g, h, right, depth + 1, params),
    }


def gbt_train(features, targets, params: GBTParams) -> GBTModel:
    """Boosted regression trees fit by exact greedy gradient boosting."""
    X = _check_features(features)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValidationError(f"targets shape {y.shape} does not match {X.shape[0]} samples")
    if not np.isfinite(y).all():
        raise ValidationError("targets contain non-finite values")
    if X.shape[0] < 2 * params.min_samples_leaf:
        raise ValidationError(
            f"need at least {2 * params.min_samples_leaf} samples, got {X.shape[0]}"
        )
    if params.loss == "logistic":
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValidationError("logistic loss needs targets in {0, 1}")
        mean = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
        base = math.log(mean / (1.0 - mean))
        loss_fn = _logistic_loss
    else:
        base = float(y.mean())
        loss_fn = _squared_loss

    raw = np.full(X.shape[0], base, dtype=np.float64)
    model = GBTModel(
        base_score=base,
        trees=[],
        loss=params.loss,
        learning_rate=params.learning_rate,
        num_features=X.shape[1],
        train_losses=[loss_fn(y, raw)],
    )
    scratch = np.zeros(X.shape[0], dtype=np.float64)
    all_idx = np.arange(X.shape[0])
    for _ in range(params.num_rounds):
        if params.loss == "logistic":
            p = _sigmoid(raw)
            g = p - y
            h = np.maximum(p * (1.0 - p), 1e-16)
        else:
            g = raw - y
            h = np.ones_like(y)
        tree = _build_tree(X, g, h, all_idx, 0, params)
        scratch[:] = 0.0
        _tree_apply(tree, X, all_idx, scratch)
        raw += params.learning_rate * scratch
        model.trees.append(tree)
        loss = loss_fn(y, raw)
        prev = model.train_losses[-1]
        if loss > prev + 1e-9 * max(1.0, abs(prev)):
            raise PipelineError(f"training loss increased: {prev} -> {loss}")
        model.train_losses.append(loss)
        if "leaf" in tree and abs(tree["leaf"]) < 1e-15:
            break  # converged; further rounds would be identical no-ops
    return model


# -- trend branch -------------------------------------------------------------


@dataclass(frozen=True)
class TrendModel:
    """Least-squares line over the input built series, extrapolated and clamped."""

    clamp_lo: float = 0.0
    clamp_hi: float = 1.0
    slope_epsilon: float = 0.0

    def __post_init__(self):
        if not self.clamp_lo < self.clamp_hi:
            raise ValidationError(f"clamp bounds out of order: [{self.clamp_lo}, {self.clamp_hi}]")
        if self.slope_epsilon < 0:
            raise ValidationError(f"slope_epsilon must be >= 0, got {self.slope_epsilon}")

    def predict(self, builts, horizon: int) -> float:
        b = np.asarray(builts, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValidationError("trend input must be a non-empty 1-D series")
        if horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {horizon}")
        n = b.size
        if n == 1:
            value = float(b[0])
        else:
            x = np.arange(n, dtype=np.float64)
            slope = float(np.cov(x, b, bias=True)[0, 1] / np.var(x))
            if abs(slope) < self.slope_epsilon:
                slope = 0.0
            intercept = float(b.mean() - slope * x.mean())
            value = intercept + slope * (n - 1 + horizon)
        return float(min(self.clamp_hi, max(self.clamp_lo, value)))

    def to_dict(self) -> dict:
        return {
            "kind": "trend",
            "clamp": [self.clamp_lo, self.clamp_hi],
            "slope_epsilon": self.slope_epsilon,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrendModel":
        try:
            if doc["kind"] != "trend":
                raise FormatError(f"unknown active regressor kind {doc['kind']!r}")
            lo, hi = doc["clamp"]
            return cls(clamp_lo=float(lo), clamp_hi=float(hi), slope_epsilon=float(doc["slope_epsilon"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed trend model: {exc}") from exc


# -- features and activity labels ---------------------------------------------


def tile_features(table: TileMetricsTable, tile_id: int, years) -> tuple[np.ndarray, int]:
    """(classifier feature vector, forward-fill flag) for one tile window.

    Features are the built proportions for the window years followed by
    their year-over-year deltas and the fill flag. Years missing from the
    table are forward-filled from the last seen value (backward-filled at
    the start) and flagged.
    """
    builts: list[float | None] = []
    for y in years:
        row = table.get(tile_id, int(y))
        builts.append(None if row is None else row.built)
    if all(b is None for b in builts):
        raise DataUnavailableError(f"tile {tile_id} has no table rows in years {list(years)}")
    filled = int(any(b is None for b in builts))
    if filled:
        last = next(b for b in builts if b is not None)  # backward-fill the head
        for k, b in enumerate(builts):
            if b is None:
                builts[k] = last
            else:
                last = b
    series = np.asarray(builts, dtype=np.float64)
    deltas = np.diff(series)
    return np.concatenate([series, deltas, [float(filled)]]), filled


def _activity_flag(table: TileMetricsTable, tile_id: int, window_years, tau: float) -> int:
    first = table.get(tile_id, int(window_years[0]))
    last = table.get(tile_id, int(window_years[-1]))
    if first is None or last is None:
        raise DataUnavailableError(
            f"tile {tile_id} lacks rows for window {window_years[0]}..{window_years[-1]}"
        )
    return int(last.built - first.built >= tau)


def label_activity(table: TileMetricsTable, window_years, tau: float = DEFAULT_TAU) -> dict[int, str]:
    """Per-tile activity labels over a year window: built growth >= tau is active."""
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    return {
        tile_id: ACTIVE if _activity_flag(table, tile_id, window_years, tau) else STATIC
        for tile_id in table.tile_ids()
    }


# -- metrics ------------------------------------------------------------------


def mse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1 or y.size < 1:
        raise ValidationError(f"need equal-length 1-D inputs, got {y.shape} and {y_hat.shape}")
    return float(np.mean((y - y_hat) ** 2))


def wmse(y, y_hat, alpha, w: float = DEFAULT_W) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    if y.shape != y_hat.shape or y.shape != a.shape or y.ndim != 1 or y.size < 1:
        raise ValidationError("need three equal-length 1-D inputs")
    if not np.isin(a, (0.0, 1.0)).all():
        raise ValidationError("alpha flags must be 0 or 1")
    return float(np.mean((y - y_hat) ** 2 * (1.0 + w * a)))


def r2(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1 or y.size < 2:
        raise ValidationError(f"need equal-length 1-D inputs of size >= 2, got {y.shape}")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        raise UndefinedMetricError("R^2 is undefined for zero-variance targets")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


# -- the two-stage model -------------------------------------------------------


@dataclass
class XGCLMModel:
    classifier: GBTModel
    static_regressor: GBTModel | None
    active_regressor: TrendModel
    route_threshold: float
    window: int
    tau: float = DEFAULT_TAU
    fallback_branch: str | None = None  # set when one training stratum was empty


@dataclass(frozen=True)
class PredictionResult:
    value: float
    branch: str
    probability: float
    fell_back: bool = False


def xgclm_predict(
    model: XGCLMModel,
    features: np.ndarray,
    sequence: FrameSequence | None = None,
    horizon: int | None = None,
) -> PredictionResult:
    """Route one tile window through the classifier to a branch prediction.

    ``features`` is the classifier vector from tile_features. The frame
    sequence supplies the trend series and horizon; without it the built
    series falls back to the feature vector and ``horizon`` is required.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValidationError(f"features must be 1-D, got shape {features.shape}")
    if horizon is None:
        if sequence is None:
            raise ValidationError("need a frame sequence or an explicit horizon")
        horizon = sequence.horizon
    prob = float(model.classifier.predict(features[None, :])[0])
    branch = ACTIVE if prob >= model.route_threshold else STATIC
    if model.fallback_branch is not None:
        branch = model.fallback_branch
    fell_back = False
    if branch == ACTIVE:
        if sequence is not None:
            builts = [class_proportions(f)[0][BUILT] for f in sequence.input_frames]
        else:
            builts = features[: model.window]
        value = model.active_regressor.predict(builts, horizon)
        return PredictionResult(value=value, branch=ACTIVE, probability=prob, fell_back=fell_back)
    if model.static_regressor is None:
        # static branch unavailable (trained single-branch); use the trend
        value = model.active_regressor.predict(features[: model.window], horizon)
        return PredictionResult(value=value, branch=ACTIVE, probability=prob, fell_back=True)
    x = np.concatenate([features, [float(horizon)]])
    value = float(model.static_regressor.predict(x[None, :])[0])
    value = float(min(1.0, max(0.0, value)))
    return PredictionResult(value=value, branch=STATIC, probability=prob, fell_back=fell_back)


def _dedup_windows(sequences):
    """One representative (tile_id, input_years) per window, insertion-ordered."""
    seen = {}
    for seq in sequences:
        seen.setdefault((seq.tile_id, seq.input_years), seq)
    return list(seen.values())


def xgclm_train(
    table: TileMetricsTable,
    sequences: list[FrameSequence],
    split: dict[int, str],
    params: GBTParams,
    tau: float = DEFAULT_TAU,
    w: float = DEFAULT_W,
) -> XGCLMModel:
    """Fit classifier, static regressor, and routing threshold.

    ``split`` assigns tile_ids to "train" or "val"; sequences of unknown
    tiles are ignored. The routing threshold minimizes validation WMSE
    over a fixed probability grid.
    """
    for tile_id, part in split.items():
        if part not in ("train", "val"):
            raise ValidationError(f"split for tile {tile_id} must be train or val, got {part!r}")
    train_seqs = [s for s in sequences if split.get(s.tile_id) == "train"]
    val_seqs = [s for s in sequences if split.get(s.tile_id) == "val"]
    if not train_seqs:
        raise ValidationError("no training sequences after applying the split")
    window = len(train_seqs[0].input_years)
    if any(len(s.input_years) != window for s in sequences):
        raise ValidationError("sequences mix different window lengths")

    # classifier: one sample per distinct tile window
    cls_windows = _dedup_windows(train_seqs)
    cls_x = []
    cls_y = []
    for seq in cls_windows:
        feats, _ = tile_features(table, seq.tile_id, seq.input_years)
        cls_x.append(feats)
        cls_y.append(_activity_flag(table, seq.tile_id, seq.input_years, tau))
    cls_params = GBTParams(
        num_rounds=params.num_rounds,
        learning_rate=params.learning_rate,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        loss="logistic",
        seed=params.seed,
    )
    classifier = gbt_train(np.array(cls_x), np.array(cls_y, dtype=np.float64), cls_params)

    # static regressor: static-labeled training windows, target at each horizon
    static_x = []
    static_y = []
    active_count = 0
    for seq in train_seqs:
        feats, _ = tile_features(table, seq.tile_id, seq.input_years)
        if _activity_flag(table, seq.tile_id, seq.input_years, tau):
            active_count += 1
            continue
        static_x.append(np.concatenate([feats, [float(seq.horizon)]]))
        static_y.append(seq.target_value)

    fallback_branch = None
    static_regressor = None
    reg_params = GBTParams(
        num_rounds=params.num_rounds,
        learning_rate=params.learning_rate,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        loss="squared",
        seed=params.seed,
    )
    if not static_x:
        fallback_branch = ACTIVE
    else:
        static_regressor = gbt_train(np.array(static_x), np.array(static_y), reg_params)
        if active_count == 0:
            fallback_branch = STATIC

    model = XGCLMModel(
        classifier=classifier,
        static_regressor=static_regressor,
        active_regressor=TrendModel(),
        route_threshold=0.5,
        window=window,
        tau=tau,
        fallback_branch=fallback_branch,
    )
    model.route_threshold = _scan_route_threshold(model, table, val_seqs, tau, w)
    return model


def _scan_route_threshold(model, table, val_seqs, tau, w) -> float:
    if not val_seqs or model.fallback_branch is not None:
        return 0.5
    probs = []
    trend_preds = []
    static_preds = []
    targets = []
    alphas = []
    for seq in val_seqs:
        feats, _ = tile_features(table, seq.tile_id, seq.input_years)
        probs.append(float(model.classifier.predict(feats[None, :])[0]))
        builts = [class_proportions(f)[0][BUILT] for f in seq.input_frames]
        trend_preds.append(model.active_regressor.predict(builts, seq.horizon))
        x = np.concatenate([feats, [float(seq.horizon)]])
        raw = float(model.static_regressor.predict(x[None, :])[0])
        static_preds.append(min(1.0, max(0.0, raw)))
        targets.append(seq.target_value)
        alphas.append(_activity_flag(table, seq.tile_id, seq.input_years, tau))
    probs = np.array(probs)
    trend_preds = np.array(trend_preds)
    static_preds = np.array(static_preds)
    targets = np.array(targets)
    alphas = np.array(alphas, dtype=np.float64)
    best_theta = None
    best_score = None
    for theta in ROUTE_THRESHOLD_GRID:
        preds = np.where(probs >= theta, trend_preds, static_preds)
        score = wmse(targets, preds, alphas, w)
        if best_score is None or score < best_score:
            best_theta = theta
            best_score = score
    return float(best_theta)


# -- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    horizon: int
    branch: str
    n_tiles: int
    mse: float | None
    wmse: float | None
    r2: float | None


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]


EVAL_CSV_HEADER = "horizon,branch,n_tiles,mse,wmse,r2"


def _metric_rows(horizon, branch, y, y_hat, alpha, w):
    n = len(y)
    if n == 0:
        return EvalRow(horizon, branch, 0, None, None, None)
    m = mse(y, y_hat)
    wm = wmse(y, y_hat, alpha, w)
    try:
        r = r2(y, y_hat) if n >= 2 else None
    except UndefinedMetricError:
        r = None
    return EvalRow(horizon, branch, n, m, wm, r)


def evaluate(
    model: XGCLMModel,
    table: TileMetricsTable,
    sequences: list[FrameSequence],
    horizons=(1, 2, 3),
    w: float = DEFAULT_W,
    tau: float | None = None,
) -> EvalReport:
    """Per-horizon metrics over test sequences, with per-branch breakdowns.

    The WMSE activity flag comes from label growth over each sequence's
    input window, independent of which branch the router chose.
    """
    if not sequences:
        raise ValidationError("cannot evaluate an empty test set")
    tau = model.tau if tau is None else tau
    rows = []
    for horizon in sorted(horizons):
        group = [s for s in sequences if s.horizon == horizon]
        y, y_hat, alpha, branches = [], [], [], []
        for seq in group:
            feats, _ = tile_features(table, seq.tile_id, seq.input_years)
            result = xgclm_predict(model, feats, sequence=seq)
            y.append(seq.target_value)
            y_hat.append(result.value)
            alpha.append(float(_activity_flag(table, seq.tile_id, seq.input_years, tau)))
            branches.append(result.branch)
        y = np.array(y)
        y_hat = np.array(y_hat)
        alpha = np.array(alpha)
        branches = np.array(branches)
        rows.append(_metric_rows(horizon, "overall", y, y_hat, alpha, w))
        for branch in (STATIC, ACTIVE):
            pick = branches == branch
            rows.append(_metric_rows(horizon, branch, y[pick], y_hat[pick], alpha[pick], w))
    return EvalReport(rows=tuple(rows))


def write_eval_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_CSV_HEADER.split(","))
        for row in report.rows:
            writer.writerow(
                [
                    row.horizon,
                    row.branch,
                    row.n_tiles,
                    "" if row.mse is None else repr(row.mse),
                    "" if row.wmse is None else repr(row.wmse),
                    "" if row.r2 is None else repr(row.r2),
                ]
            )


def read_eval_csv(path) -> EvalReport:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVAL_CSV_HEADER.split(","):
            raise FormatError(f"unexpected report header {header!r}", offset=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    EvalRow(
                        horizon=int(row[0]),
                        branch=row[1],
                        n_tiles=int(row[2]),
                        mse=float(row[3]) if row[3] else None,
                        wmse=float(row[4]) if row[4] else None,
                        r2=float(row[5]) if row[5] else None,
                    )
                )
            except (IndexError, ValueError) as exc:
                raise FormatError(f"bad report row: {exc}", offset=lineno) from exc
    return EvalReport(rows=tuple(rows))


# -- model persistence ----------------------------------------------------------


def save_model(model: XGCLMModel, path) -> None:
    doc = {
        "version": 1,
        "classifier": model.classifier.to_dict(),
        "static_regressor": None if model.static_regressor is None else model.static_regressor.to_dict(),
        "active_regressor": model.active_regressor.to_dict(),
        "route_threshold": model.route_threshold,
        "window": model.window,
        "tau": model.tau,
        "fallback_branch": model.fallback_branch,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path) -> XGCLMModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model file is not valid JSON: {exc}", offset=exc.pos) from exc
    try:
        if doc["version"] != 1:
            raise FormatError(f"unsupported model version {doc['version']}")
        return XGCLMModel(
            classifier=GBTModel.from_dict(doc["classifier"]),
            static_regressor=(
                None if doc["static_regressor"] is None else GBTModel.from_dict(doc["static_regressor"])
            ),
            active_regressor=TrendModel.from_dict(doc["active_regressor"]),
            route_threshold=float(doc["route_threshold"]),
            window=int(doc["window"]),
            tau=float(doc["tau"]),
            fallback_branch=doc["fallback_branch"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
