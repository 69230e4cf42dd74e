"""Regression and probabilistic-classification learners, a stacking
ensemble, and V-fold cross-fitting.

Learners are immutable configuration objects whose ``fit`` returns an
immutable fitted model, so fits on disjoint folds can run concurrently
and fitted models are safe for shared reads.  All fits are deterministic
given (data, config, seed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EstimationError

__all__ = [
    "OlsLearner",
    "LogisticLearner",
    "BoostedTreesLearner",
    "StackLearner",
    "FoldAssignment",
    "fold_assignment",
    "fit_ols",
    "fit_boosted_stumps",
    "fit_stack",
    "crossfit",
    "CrossFit",
    "nnls",
    "expand_features",
    "make_regression_learner",
    "make_classification_learner",
    "parse_config_file",
]

log = logging.getLogger("mtptraj")


def expand_features(x: np.ndarray, expansion: str) -> np.ndarray:
    """Feature expansion used by the linear learners.

    ``none`` passes features through; ``quadratic`` appends all squares
    and pairwise interactions.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError("design matrix must be 2-d")
    if expansion == "none":
        return x
    if expansion != "quadratic":
        raise ConfigurationError(f"unknown expansion {expansion!r}")
    q = x.shape[1]
    blocks = [x]
    for i in range(q):
        blocks.append(x[:, i:] * x[:, i][:, None])
    return np.hstack(blocks)


def _add_intercept(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


@dataclass(frozen=True)
class _LinearModel:
    beta: np.ndarray
    expansion: str

    def predict(self, x: np.ndarray) -> np.ndarray:
        xe = _add_intercept(expand_features(x, self.expansion))
        return xe @ self.beta


@dataclass(frozen=True)
class OlsLearner:
    """Least squares on optionally expanded features.

    Falls back to a trace-scaled ridge when the expanded system is not
    overdetermined or is rank deficient.
    """

    expansion: str = "none"

    def fit(self, x: np.ndarray, y: np.ndarray) -> _LinearModel:
        xe = _add_intercept(expand_features(x, self.expansion))
        y = np.asarray(y, dtype=np.float64)
        n, cols = xe.shape
        beta = None
        if n > cols:
            solution, _, rank, _ = np.linalg.lstsq(xe, y, rcond=None)
            if rank == cols:
                beta = solution
        if beta is None:
            gram = xe.T @ xe
            lam = 1e-6 * np.trace(gram) / cols
            try:
                beta = np.linalg.solve(gram + lam * np.eye(cols), xe.T @ y)
            except np.linalg.LinAlgError as exc:
                raise EstimationError(f"ridge-fallback solve failed: {exc}") from exc
        if not np.all(np.isfinite(beta)):
            raise EstimationError("least-squares produced non-finite coefficients")
        return _LinearModel(beta=beta, expansion=self.expansion)


def _expit(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class _LogisticModel:
    beta: np.ndarray
    expansion: str
    p_min: float

    def predict_prob(self, x: np.ndarray) -> np.ndarray:
        xe = _add_intercept(expand_features(x, self.expansion))
        return np.clip(_expit(xe @ self.beta), self.p_min, 1.0 - self.p_min)


@dataclass(frozen=True)
class LogisticLearner:
    """Binary logistic regression by IRLS with a tiny ridge for stability."""

    expansion: str = "none"
    p_min: float = 1e-3
    max_iter: int = 100
    tol: float = 1e-10

    def fit(self, x: np.ndarray, labels: np.ndarray) -> _LogisticModel:
        xe = _add_intercept(expand_features(x, self.expansion))
        y = np.asarray(labels, dtype=np.float64)
        n, cols = xe.shape
        beta = np.zeros(cols)
        lam = 1e-8 * n / cols
        for _ in range(self.max_iter):
            p = _expit(xe @ beta)
            w = np.maximum(p * (1.0 - p), 1e-10)
            grad = xe.T @ (y - p) - lam * beta
            hess = (xe * w[:, None]).T @ xe + lam * np.eye(cols)
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError as exc:
                raise EstimationError(f"IRLS solve failed: {exc}") from exc
            beta = beta + step
            if np.max(np.abs(step)) < self.tol:
                break
        if not np.all(np.isfinite(beta)):
            raise EstimationError("logistic fit produced non-finite coefficients")
        return _LogisticModel(beta=beta, expansion=self.expansion, p_min=self.p_min)


@dataclass(frozen=True)
class _TreeNode:
    value: float = 0.0
    feature: int = -1
    thresh: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _best_split(col: np.ndarray, g: np.ndarray, h: np.ndarray, n_thresholds: int):
    """Best threshold for one feature under the second-order gain
    G_L^2/H_L + G_R^2/H_R - G^2/H.  Returns (gain, threshold) or None."""
    order = np.argsort(col, kind="mergesort")
    xs = col[order]
    boundaries = np.nonzero(np.diff(xs) > 0)[0]
    if boundaries.size == 0:
        return None
    if boundaries.size > n_thresholds:
        pick = np.linspace(0, boundaries.size - 1, n_thresholds).round().astype(int)
        boundaries = boundaries[np.unique(pick)]
    gc = np.cumsum(g[order])
    hc = np.cumsum(h[order])
    g_tot, h_tot = gc[-1], hc[-1]
    gl = gc[boundaries]
    hl = hc[boundaries]
    gr = g_tot - gl
    hr = h_tot - hl
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = gl * gl / hl + gr * gr / hr - g_tot * g_tot / h_tot
    gains = np.where((hl > 1e-12) & (hr > 1e-12), gains, -np.inf)
    best = int(np.argmax(gains))
    if not np.isfinite(gains[best]) or gains[best] <= 1e-12:
        return None
    b = boundaries[best]
    return float(gains[best]), 0.5 * (xs[b] + xs[b + 1])


def _grow_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int,
               n_thresholds: int) -> _TreeNode:
    h_sum = float(np.sum(h))
    value = float(np.sum(g) / h_sum) if h_sum > 1e-12 else 0.0
    if depth == 0 or x.shape[0] < 4:
        return _TreeNode(value=value)
    best = None
    for j in range(x.shape[1]):
        cand = _best_split(x[:, j], g, h, n_thresholds)
        if cand is not None and (best is None or cand[0] > best[0]):
            best = (cand[0], j, cand[1])
    if best is None:
        return _TreeNode(value=value)
    _, j, thresh = best
    mask = x[:, j] <= thresh
    left = _grow_tree(x[mask], g[mask], h[mask], depth - 1, n_thresholds)
    right = _grow_tree(x[~mask], g[~mask], h[~mask], depth - 1, n_thresholds)
    return _TreeNode(value=value, feature=j, thresh=thresh, left=left, right=right)


def _tree_predict(node: _TreeNode, x: np.ndarray) -> np.ndarray:
    if node.is_leaf:
        return np.full(x.shape[0], node.value)
    out = np.empty(x.shape[0])
    mask = x[:, node.feature] <= node.thresh
    out[mask] = _tree_predict(node.left, x[mask])
    out[~mask] = _tree_predict(node.right, x[~mask])
    return out


@dataclass(frozen=True)
class _BoostedModel:
    base: float
    trees: tuple[_TreeNode, ...]
    learning_rate: float
    classification: bool
    p_min: float

    def _raw(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape[0], self.base)
        for tree in self.trees:
            out += self.learning_rate * _tree_predict(tree, x)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.classification:
            raise EstimationError("classification model: use predict_prob")
        return self._raw(x)

    def predict_prob(self, x: np.ndarray) -> np.ndarray:
        if not self.classification:
            raise EstimationError("regression model: use predict")
        return np.clip(_expit(self._raw(x)), self.p_min, 1.0 - self.p_min)


@dataclass(frozen=True)
class BoostedTreesLearner:
    """Gradient-boosted shallow trees (squared loss or log loss).

    Depth-2 trees by default; split search is an exact greedy scan over
    up to ``n_thresholds`` per-feature candidate cuts, so fits are fully
    deterministic.
    """

    rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 2
    n_thresholds: int = 32
    classification: bool = False
    p_min: float = 1e-3

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError("boosting needs rounds >= 1")

    def fit(self, x: np.ndarray, y: np.ndarray) -> _BoostedModel:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        trees = []
        if self.classification:
            pbar = float(np.clip(np.mean(y), 1e-6, 1.0 - 1e-6))
            base = float(np.log(pbar / (1.0 - pbar)))
            raw = np.full(y.shape[0], base)
            for _ in range(self.rounds):
                p = _expit(raw)
                g = y - p
                h = np.maximum(p * (1.0 - p), 1e-12)
                tree = _grow_tree(x, g, h, self.max_depth, self.n_thresholds)
                trees.append(tree)
                raw += self.learning_rate * _tree_predict(tree, x)
        else:
            base = float(np.mean(y))
            raw = np.full(y.shape[0], base)
            ones = np.ones(y.shape[0])
            for _ in range(self.rounds):
                g = y - raw
                tree = _grow_tree(x, g, ones, self.max_depth, self.n_thresholds)
                trees.append(tree)
                raw += self.learning_rate * _tree_predict(tree, x)
        return _BoostedModel(base=base, trees=tuple(trees),
                             learning_rate=self.learning_rate,
                             classification=self.classification, p_min=self.p_min)


def fit_ols(x, y, expansion: str = "none") -> _LinearModel:
    return OlsLearner(expansion=expansion).fit(x, y)


def fit_boosted_stumps(x, y, rounds: int = 200, learning_rate: float = 0.1,
                       max_depth: int = 2, classification: bool = False) -> _BoostedModel:
    return BoostedTreesLearner(rounds=rounds, learning_rate=learning_rate,
                               max_depth=max_depth,
                               classification=classification).fit(x, y)


def nnls(a: np.ndarray, b: np.ndarray, tol: float = 1e-10,
         max_sweeps: int = 10_000) -> np.ndarray:
    """Non-negative least squares by projected coordinate descent."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    gram = a.T @ a
    rhs = a.T @ b
    k = gram.shape[0]
    w = np.zeros(k)
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(k):
            if gram[j, j] <= 0.0:
                continue
            update = max(0.0, w[j] + (rhs[j] - gram[j] @ w) / gram[j, j])
            biggest = max(biggest, abs(update - w[j]))
            w[j] = update
        if biggest < tol:
            break
    return w


@dataclass(frozen=True)
class FoldAssignment:
    """Individual-level fold labels; a pure function of (seed, n, V)."""

    v: int
    labels: np.ndarray  # length n, values in 0..v-1

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.labels == fold)[0]


def fold_assignment(n: int, v: int, seed: int) -> FoldAssignment:
    if v < 1:
        raise ConfigurationError(f"fold count must be >= 1, got {v}")
    if v == 1:
        return FoldAssignment(v=1, labels=np.zeros(n, dtype=np.int64))
    if v > n:
        raise ConfigurationError(f"cannot split {n} individuals into {v} nonempty folds")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % v
    counts = np.bincount(labels, minlength=v)
    if n - counts.max() < 2:
        raise ConfigurationError(
            f"folds leave fewer than 2 training individuals (n={n}, V={v})")
    return FoldAssignment(v=v, labels=labels)


@dataclass(frozen=True)
class CrossFit:
    """Fold-specific fitted models with out-of-fold evaluation.

    Row i of any matrix passed to the ``*_rowwise`` methods is evaluated
    under the model fitted without individual i's fold, so predictions at
    the training design are the usual out-of-fold values.
    """

    folds: FoldAssignment
    models: tuple

    def predict_rowwise(self, x: np.ndarray) -> np.ndarray:
        return self._eval(x, "predict")

    def predict_prob_rowwise(self, x: np.ndarray) -> np.ndarray:
        return self._eval(x, "predict_prob")

    def _eval(self, x: np.ndarray, method: str) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.folds.v == 1:
            return getattr(self.models[0], method)(x)
        out = np.empty(x.shape[0])
        for fold, model in enumerate(self.models):
            idx = self.folds.fold_indices(fold)
            out[idx] = getattr(model, method)(x[idx])
        return out


def crossfit(x: np.ndarray, y: np.ndarray, learner, folds: FoldAssignment) -> CrossFit:
    """Fit ``learner`` per training complement; V=1 means fit on all."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != folds.n or y.shape[0] != folds.n:
        raise ConfigurationError("design rows must match the fold assignment")
    if folds.v == 1:
        return CrossFit(folds=folds, models=(learner.fit(x, y),))
    models = []
    for fold in range(folds.v):
        mask = folds.labels != fold
        models.append(learner.fit(x[mask], y[mask]))
    return CrossFit(folds=folds, models=tuple(models))


@dataclass(frozen=True)
class _StackModel:
    models: tuple
    weights: np.ndarray
    classification: bool
    p_min: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        preds = np.column_stack([m.predict(x) for m in self.models])
        return preds @ self.weights

    def predict_prob(self, x: np.ndarray) -> np.ndarray:
        preds = np.column_stack([m.predict_prob(x) for m in self.models])
        return np.clip(preds @ self.weights, self.p_min, 1.0 - self.p_min)


@dataclass(frozen=True)
class StackLearner:
    """Stacking ensemble with simplex weights from NNLS on out-of-fold
    predictions.

    The meta-criterion is squared error against the out-of-fold base
    predictions (for classifiers: squared error of probabilities against
    labels).  If normalization of the NNLS solution worsens that
    criterion past the best single base learner, the stack falls back to
    that learner.
    """

    learners: tuple
    v: int = 5
    seed: int = 0
    classification: bool = False
    p_min: float = 1e-3

    def __post_init__(self):
        if len(self.learners) < 1:
            raise ConfigurationError("stack needs at least one base learner")

    def fit(self, x: np.ndarray, y: np.ndarray) -> _StackModel:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(self.learners) == 1:
            model = self.learners[0].fit(x, y)
            return _StackModel(models=(model,), weights=np.array([1.0]),
                               classification=self.classification, p_min=self.p_min)
        v = min(self.v, max(2, x.shape[0] // 2))
        folds = fold_assignment(x.shape[0], v, self.seed)
        oof = np.empty((x.shape[0], len(self.learners)))
        for j, learner in enumerate(self.learners):
            cf = crossfit(x, y, learner, folds)
            oof[:, j] = (cf.predict_prob_rowwise(x) if self.classification
                         else cf.predict_rowwise(x))
        weights = nnls(oof, y)
        if not np.any(weights > 0.0):
            log.warning("stack NNLS returned all-zero weights; falling back to uniform")
            weights = np.ones(len(self.learners))
        weights = weights / weights.sum()
        risks = np.sum((oof - y[:, None]) ** 2, axis=0)
        stack_risk = float(np.sum((oof @ weights - y) ** 2))
        best = int(np.argmin(risks))
        if stack_risk > risks[best] + 1e-12:
            weights = np.zeros(len(self.learners))
            weights[best] = 1.0
        models = tuple(learner.fit(x, y) for learner in self.learners)
        return _StackModel(models=models, weights=weights,
                           classification=self.classification, p_min=self.p_min)


def fit_stack(learners, x, y, v: int = 5, seed: int = 0,
              classification: bool = False) -> _StackModel:
    return StackLearner(learners=tuple(learners), v=v, seed=seed,
                        classification=classification).fit(x, y)


def make_regression_learner(name: str, rounds: int = 200, learning_rate: float = 0.1,
                            stack_seed: int = 0):
    """Registry for CLI/config learner names."""
    if name == "ols":
        return OlsLearner(expansion="none")
    if name == "ols_quadratic":
        return OlsLearner(expansion="quadratic")
    if name == "boost":
        return BoostedTreesLearner(rounds=rounds, learning_rate=learning_rate)
    if name == "stack":
        return StackLearner(learners=(OlsLearner(expansion="quadratic"),
                                      BoostedTreesLearner(rounds=rounds,
                                                          learning_rate=learning_rate)),
                            seed=stack_seed)
    raise ConfigurationError(f"unknown regression learner {name!r}")


def make_classification_learner(name: str, p_min: float = 1e-3, rounds: int = 200,
                                learning_rate: float = 0.1, stack_seed: int = 0):
    if name == "logistic":
        return LogisticLearner(expansion="none", p_min=p_min)
    if name == "logistic_quadratic":
        return LogisticLearner(expansion="quadratic", p_min=p_min)
    if name == "boost":
        return BoostedTreesLearner(rounds=rounds, learning_rate=learning_rate,
                                   classification=True, p_min=p_min)
    if name == "stack":
        return StackLearner(learners=(LogisticLearner(expansion="quadratic", p_min=p_min),
                                      BoostedTreesLearner(rounds=rounds,
                                                          learning_rate=learning_rate,
                                                          classification=True, p_min=p_min)),
                            seed=stack_seed, classification=True, p_min=p_min)
    raise ConfigurationError(f"unknown classification learner {name!r}")


def parse_config_file(path) -> dict[str, str]:
    """Parse the simple ``key = value`` learner config format.

    Blank lines and ``#`` comments are ignored.  Recognized keys are
    documented in the README (m_learner, ratio_learner, folds, seed,
    p_min, ratio_p_min, boost_rounds, boost_learning_rate).
    """
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            out[key] = value
    return out
