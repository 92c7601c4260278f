"""Anomaly behaviour analysis over feature rows.

A detector is a pair ``(f_norm, M)``: ``f_norm`` maps a sample to an
abnormality score in [0, 1] using the memory ``M`` (normalisation statistics
plus model parameters), and a sample is abnormal when the score exceeds the
threshold ``T``.  Models are small numpy implementations: Gini decision
trees, bagged random forests, a one-hidden-layer perceptron and logistic
regression.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_streams

FORMAT = "gpsids-detector"
VERSION = 1
MODEL_KINDS = ("dt", "rf", "mlp", "lr")
NORMAL, ABNORMAL = "Normal", "Abnormal"
DEFAULT_MARGINS = ((0.4, 0.5), (0.3, 0.5), (0.4, 0.6), (0.3, 0.6))


class DegenerateTraining(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class NoAlarm(LookupError):
    """No alarm was raised at or after the attack start."""


# --- normalisation -----------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Normalizer":
        means = X.mean(axis=0)
        scales = X.std(axis=0)
        # constant columns keep unit scale
        scales = np.where(scales > 0, scales, 1.0)
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(scales))):
            raise DegenerateTraining("non-finite feature statistics")
        return cls(means, scales)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.scales


# --- decision tree -------------------------------------------------------------

@dataclass
class DecisionTree:
    """Binary Gini tree stored as flat arrays; ``feature == -1`` marks a leaf."""

    max_depth: int = 12
    min_samples_split: int = 2
    max_features: int | None = None
    feature: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    threshold: np.ndarray = field(default_factory=lambda: np.zeros(0))
    left: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    right: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    value: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator | None = None) -> "DecisionTree":
        n_features = X.shape[1]
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(y[idx].mean()))
            return len(feature) - 1

        root = new_node(np.arange(len(y)))
        stack = [(root, np.arange(len(y)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            ones = int(y[idx].sum())
            if depth >= self.max_depth or len(idx) < self.min_samples_split or ones in (0, len(idx)):
                continue
            if self.max_features is None or self.max_features >= n_features:
                candidates = range(n_features)
            else:
                candidates = np.sort(rng.choice(n_features, self.max_features, replace=False))
            split = _best_split(X[idx], y[idx], candidates)
            if split is None:
                continue
            f, t = split
            mask = X[idx, f] <= t
            l_idx, r_idx = idx[mask], idx[~mask]
            feature[node], threshold[node] = int(f), float(t)
            left[node] = new_node(l_idx)
            right[node] = new_node(r_idx)
            stack.append((right[node], r_idx, depth + 1))
            stack.append((left[node], l_idx, depth + 1))
        self.feature = np.array(feature, dtype=int)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=int)
        self.right = np.array(right, dtype=int)
        self.value = np.array(value)
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def params(self) -> dict:
        return {"max_depth": self.max_depth, "min_samples_split": self.min_samples_split,
                "max_features": self.max_features, "feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(), "left": self.left.tolist(),
                "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_params(cls, p: dict) -> "DecisionTree":
        return cls(p["max_depth"], p["min_samples_split"], p["max_features"],
                   np.array(p["feature"], dtype=int), np.array(p["threshold"], dtype=float),
                   np.array(p["left"], dtype=int), np.array(p["right"], dtype=int),
                   np.array(p["value"], dtype=float))


def _best_split(X: np.ndarray, y: np.ndarray, candidates):
    """Lowest weighted Gini impurity; ties go to the lower feature, then threshold."""
    n = len(y)
    total = float(y.sum())
    best = None
    best_cost = math.inf
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    for f in candidates:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ones_left = np.cumsum(y[order])[:-1].astype(float)
        ones_right = total - ones_left
        # n * gini = n - (ones^2 + zeros^2) / n, summed over both children
        cost = (n_left - (ones_left ** 2 + (n_left - ones_left) ** 2) / n_left
                + n_right - (ones_right ** 2 + (n_right - ones_right) ** 2) / n_right)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        cost = np.where(valid, cost, math.inf)
        i = int(np.argmin(cost))
        if cost[i] < best_cost:
            best_cost = float(cost[i])
            best = (int(f), 0.5 * (xs[i] + xs[i + 1]))
    return best


@dataclass
class RandomForest:
    n_trees: int = 25
    max_depth: int = 12
    max_features: int | None = None  # None = round(sqrt(n_features))
    trees: list = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int) -> "RandomForest":
        n, d = X.shape
        k = self.max_features or max(1, round(math.sqrt(d)))
        self.trees = []
        for i in range(self.n_trees):
            rng = rng_streams.stream(seed, rng_streams.TRAINING, i)
            boot = rng.integers(0, n, n)
            tree = DecisionTree(self.max_depth, 2, k)
            self.trees.append(tree.fit(X[boot], y[boot], rng))
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        return np.mean([t.score(X) for t in self.trees], axis=0)

    def params(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth, "max_features": self.max_features,
                "trees": [t.params() for t in self.trees]}

    @classmethod
    def from_params(cls, p: dict) -> "RandomForest":
        return cls(p["n_trees"], p["max_depth"], p["max_features"],
                   [DecisionTree.from_params(t) for t in p["trees"]])


# --- perceptron ------------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def mlp_forward(params: dict, X: np.ndarray) -> np.ndarray:
    """Attack-class probability; ``params`` without ``W1`` is logistic regression."""
    if "W1" in params:
        h = np.tanh(X @ params["W1"] + params["b1"])
        return _sigmoid(h @ params["W2"] + params["b2"]).ravel()
    return _sigmoid(X @ params["W2"] + params["b2"]).ravel()


def mlp_loss_and_grad(params: dict, X: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
    """Mean binary cross-entropy and its analytic gradient."""
    n = len(y)
    if "W1" in params:
        h = np.tanh(X @ params["W1"] + params["b1"])
        z = h @ params["W2"] + params["b2"]
    else:
        h = X
        z = X @ params["W2"] + params["b2"]
    z = z.ravel()
    # log(1 + exp(z)) - y z, written stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = ((_sigmoid(z) - y) / n)[:, None]
    grad = {"W2": h.T @ dz, "b2": dz.sum(axis=0)}
    if "W1" in params:
        dh = (dz @ params["W2"].T) * (1.0 - h * h)
        grad["W1"] = X.T @ dh
        grad["b1"] = dh.sum(axis=0)
    return loss, grad


@dataclass
class Mlp:
    """Single hidden tanh layer (``hidden=0`` gives logistic regression).

    Mini-batch gradient descent with Adam step sizes.
    """

    hidden: int = 32
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 32
    params_: dict = field(default_factory=dict)

    def init(self, n_features: int, rng: np.random.Generator) -> dict:
        p = {}
        width = n_features
        if self.hidden:
            lim = math.sqrt(6.0 / (n_features + self.hidden))
            p["W1"] = rng.uniform(-lim, lim, (n_features, self.hidden))
            p["b1"] = np.zeros(self.hidden)
            width = self.hidden
        lim = math.sqrt(6.0 / (width + 1))
        p["W2"] = rng.uniform(-lim, lim, (width, 1))
        p["b2"] = np.zeros(1)
        return p

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int) -> "Mlp":
        rng = rng_streams.stream(seed, rng_streams.TRAINING, 0)
        p = self.init(X.shape[1], rng)
        m = {k: np.zeros_like(v) for k, v in p.items()}
        v = {k: np.zeros_like(val) for k, val in p.items()}
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        yf = y.astype(float)
        n = len(y)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                _, g = mlp_loss_and_grad(p, X[batch], yf[batch])
                step += 1
                c1 = 1.0 - beta1 ** step
                c2 = 1.0 - beta2 ** step
                for k in p:
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k]
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k]
                    p[k] = p[k] - self.learning_rate * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
        self.params_ = p
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params_, X)

    def params(self) -> dict:
        return {"hidden": self.hidden, "learning_rate": self.learning_rate, "epochs": self.epochs,
                "batch_size": self.batch_size,
                "weights": {k: v.tolist() for k, v in self.params_.items()}}

    @classmethod
    def from_params(cls, p: dict) -> "Mlp":
        weights = {k: np.array(v, dtype=float) for k, v in p["weights"].items()}
        return cls(p["hidden"], p["learning_rate"], p["epochs"], p["batch_size"], weights)


# --- detector ----------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    options: tuple = ()  # (name, value) pairs passed to the model constructor

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.kind!r}; choose from {MODEL_KINDS}")

    def build(self):
        opts = dict(self.options)
        if self.kind == "dt":
            return DecisionTree(**opts)
        if self.kind == "rf":
            return RandomForest(**opts)
        if self.kind == "lr":
            return Mlp(**{"hidden": 0, **opts})
        return Mlp(**opts)


@dataclass
class Detector:
    kind: str
    model: object
    normalizer: Normalizer
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.clip(self.model.score(self.normalizer(X)), 0.0, 1.0)

    def to_json(self) -> str:
        doc = {"format": FORMAT, "version": VERSION, "model": self.kind, "threshold": self.threshold,
               "means": self.normalizer.means.tolist(), "scales": self.normalizer.scales.tolist(),
               "params": self.model.params()}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Detector":
        doc = json.loads(text)
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise ValueError(f"not a {FORMAT} v{VERSION} document")
        loaders = {"dt": DecisionTree, "rf": RandomForest, "mlp": Mlp, "lr": Mlp}
        model = loaders[doc["model"]].from_params(doc["params"])
        norm = Normalizer(np.array(doc["means"], dtype=float), np.array(doc["scales"], dtype=float))
        return cls(doc["model"], model, norm, float(doc["threshold"]))


def _as_arrays(rows):
    if isinstance(rows, tuple) and len(rows) == 2 and isinstance(rows[0], np.ndarray):
        return rows
    from .dataset import feature_matrix
    return feature_matrix(rows)


def train(rows, model_spec: ModelSpec = ModelSpec(), seed: int = 0, threshold: float = 0.5) -> Detector:
    """Fit z-score statistics then the model; ``rows`` is FeatureRows or ``(X, y)``."""
    X, y = _as_arrays(rows)
    y = np.asarray(y, dtype=int)
    if len(y) == 0 or y.min() == y.max():
        raise DegenerateTraining("training data needs both normal and attack rows")
    if not np.all(np.isfinite(X)):
        raise DegenerateTraining("training features must be finite")
    norm = Normalizer.fit(X)
    Z = norm(X)
    model = model_spec.build()
    if isinstance(model, DecisionTree):
        model.fit(Z, y)
    else:
        model.fit(Z, y, seed)
    return Detector(model_spec.kind, model, norm, threshold)


def score(d: Detector, row) -> float:
    """Abnormality ``f_norm`` of one FeatureRow (or feature vector)."""
    x = row.features() if hasattr(row, "features") else row
    return float(d.scores(np.asarray(x, dtype=float)[None, :])[0])


def classify(score_value: float, T: float) -> str:
    if not 0.0 <= T <= 1.0:
        raise ValueError(f"threshold {T} outside [0, 1]")
    return ABNORMAL if score_value > T else NORMAL


# --- evaluation -------------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def accuracy(self) -> float:
        n = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / n if n else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    @property
    def fp_rate(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else 0.0

    @property
    def fn_rate(self) -> float:
        d = self.fn + self.tp
        return self.fn / d if d else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "fp_rate": self.fp_rate, "fn_rate": self.fn_rate}


def confusion(y_true, y_pred) -> Metrics:
    t = np.asarray(y_true, dtype=bool)
    p = np.asarray(y_pred, dtype=bool)
    return Metrics(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))


def evaluate(d: Detector, rows, T: float | None = None) -> Metrics:
    X, y = _as_arrays(rows)
    T = d.threshold if T is None else T
    return confusion(y, d.scores(X) > T)


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # index arrays
    counts: tuple  # (normal, attack) per fold

    def split(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.folds[i]
        train_idx = np.concatenate([f for j, f in enumerate(self.folds) if j != i])
        return np.sort(train_idx), test


def stratified_folds(labels, k: int, seed: int) -> FoldPlan:
    """Shuffle each class, then deal the classes in turn across the folds."""
    if len(labels) and hasattr(labels[0], "label"):
        labels = [r.label for r in labels]
    y = np.asarray(labels, dtype=int)
    if k < 2:
        raise ValueError("need at least two folds")
    rng = rng_streams.stream(seed, rng_streams.TRAINING, 1_000_003)
    dealt = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise TooFewSamples(f"class {cls} has {len(idx)} rows, fewer than {k} folds")
        dealt.append(rng.permutation(idx))
    order = np.concatenate(dealt)
    slot = np.arange(len(order)) % k
    folds = tuple(np.sort(order[slot == i]) for i in range(k))
    counts = tuple((int(np.sum(y[f] == 0)), int(np.sum(y[f] == 1))) for f in folds)
    return FoldPlan(folds, counts)


@dataclass
class CrossValidation:
    metrics: list
    scores: np.ndarray  # held-out score per row
    labels: np.ndarray

    @property
    def mean_f1(self) -> float:
        return float(np.mean([m.f1 for m in self.metrics]))


def cross_validate(rows, model_spec: ModelSpec, k: int = 5, seed: int = 0, T: float = 0.5) -> CrossValidation:
    X, y = _as_arrays(rows)
    plan = stratified_folds(y, k, seed)
    held_out = np.zeros(len(y))
    metrics = []
    for i in range(k):
        tr, te = plan.split(i)
        det = train((X[tr], y[tr]), model_spec, seed + i, T)
        held_out[te] = det.scores(X[te])
        metrics.append(confusion(y[te], held_out[te] > T))
    return CrossValidation(metrics, held_out, y)


@dataclass(frozen=True)
class SweepRow:
    lo: float
    hi: float
    normals_misclassified: int
    attacks_misclassified: int
    fp_rate: float
    fn_rate: float


def threshold_sweep(scores_normal, scores_attack, margins=DEFAULT_MARGINS) -> list:
    """Misclassification counts for each detection margin ``(lo, hi)``.

    A normal row is misclassified when its score exceeds ``lo``; an attack
    row when its score falls below ``hi``.  Rates use the class sizes.
    """
    sn = np.asarray(scores_normal, dtype=float)
    sa = np.asarray(scores_attack, dtype=float)
    if sn.size == 0 or sa.size == 0:
        raise ValueError("both score lists must be non-empty")
    table = []
    for lo, hi in margins:
        fp = int(np.sum(sn > lo))
        fn = int(np.sum(sa < hi))
        table.append(SweepRow(float(lo), float(hi), fp, fn, fp / sn.size, fn / sa.size))
    return table


def best_margin(table) -> SweepRow:
    """Lowest fn rate first (missed attacks cost most), then fp rate, then margin width."""
    return min(table, key=lambda r: (r.fn_rate, r.fp_rate, r.hi - r.lo))


# --- latency ---------------------------------------------------------------------------

def alarm_times(times, flags) -> list:
    return [float(t) for t, a in zip(times, flags) if a]


def detection_latency(alarm_stream, attack_start: float) -> float:
    """Seconds from attack start to the first alarm at or after it.

    ``alarm_stream`` is an iterable of alarm times or of ``(t, flag)`` pairs.
    """
    times = []
    for item in alarm_stream:
        if isinstance(item, tuple):
            if item[1]:
                times.append(float(item[0]))
        else:
            times.append(float(item))
    after = [t for t in times if t >= attack_start]
    if not after:
        raise NoAlarm(f"no alarm at or after t={attack_start}")
    return min(after) - attack_start


def latency_improvement(ml: float, baseline: float) -> float:
    if not baseline > 0:
        raise ValueError("baseline latency must be positive")
    return (baseline - ml) / baseline
