"""Maneuver classifiers: quadratic GDA and AdaBoost.M2 over shallow trees.

Classes are indexed in the fixed order LCL, LK, LCR (see
:data:`laneproto.trajmodel.CLASSES`); every argmax tie is resolved towards the
lower index.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import BoostingStalled, CalibrationFailed, ClassAbsent, DegenerateFeatures
from .trajmodel import CLASS_INDEX, CLASSES, Kind

log = logging.getLogger(__name__)

N_CLASSES = len(CLASSES)
LK = CLASS_INDEX[Kind.LK]
MAX_BRANCH_NODES = 15
N_LEARNERS = 90
EPS_FLOOR = 1e-10
MODEL_SCHEMA = "laneproto.model/1"


def _argmax_low(scores: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Row-wise argmax preferring the lowest index among values within ``tol`` of the max."""
    scores = np.atleast_2d(scores)
    top = scores.max(axis=1, keepdims=True)
    return np.argmax(scores >= top - tol, axis=1)


# --------------------------------------------------------------------------
# quadratic Gaussian discriminant analysis


@dataclass
class GdaModel:
    means: np.ndarray  # (C, D)
    covs: np.ndarray  # (C, D, D)
    priors: np.ndarray  # (C,)
    variant: str = ""
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.covs = np.asarray(self.covs, dtype=float)
        self.priors = np.asarray(self.priors, dtype=float)
        if np.any(self.priors <= 0) or abs(self.priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must be positive and sum to one")
        self._chol = []
        self._logdet = np.empty(len(self.priors))
        for c, cov in enumerate(self.covs):
            try:
                cf = cho_factor(cov, lower=True)
            except np.linalg.LinAlgError as exc:
                raise DegenerateFeatures(f"class {CLASSES[c].value} covariance is singular") from exc
            self._chol.append(cf)
            self._logdet[c] = 2.0 * np.sum(np.log(np.diag(cf[0])))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_joint(self, X) -> np.ndarray:
        """``log pi_c - 1/2 log|Sigma_c| - 1/2 Mahalanobis^2`` per row and class."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], len(self.priors)))
        for c in range(len(self.priors)):
            diff = X - self.means[c]
            maha = np.einsum("ij,ji->i", diff, cho_solve(self._chol[c], diff.T))
            out[:, c] = np.log(self.priors[c]) - 0.5 * self._logdet[c] - 0.5 * maha
        return out

    def predict_proba(self, X) -> np.ndarray:
        lj = self.log_joint(X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, X) -> np.ndarray:
        return _argmax_low(self.log_joint(X), 1e-9)

    def with_priors(self, priors) -> "GdaModel":
        priors = np.asarray(priors, dtype=float)
        return GdaModel(self.means, self.covs, priors / priors.sum(), self.variant, dict(self.calibration))

    def to_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA, "model": "gda", "variant": self.variant, "classes": [k.value for k in CLASSES],
                "means": self.means.tolist(), "covs": self.covs.tolist(),
                "priors": self.priors.tolist(), "calibration": self.calibration}

    @classmethod
    def from_dict(cls, obj: dict) -> "GdaModel":
        return cls(obj["means"], obj["covs"], obj["priors"], obj.get("variant", ""),
                   obj.get("calibration", {}))


def gda_fit(X, y, priors=None, variant: str = "") -> GdaModel:
    """Per-class sample means and (unbiased) covariances with a small ridge.

    ``priors`` default to the class frequencies of ``y``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    dim = X.shape[1]
    means, covs = [], []
    for c, kind in enumerate(CLASSES):
        Xc = X[y == c]
        if Xc.shape[0] == 0:
            raise ClassAbsent(f"no training samples of class {kind.value}")
        if Xc.shape[0] < dim + 1:
            raise DegenerateFeatures(f"class {kind.value} has {Xc.shape[0]} samples for {dim} features")
        mu = Xc.mean(axis=0)
        cov = np.atleast_2d(np.cov(Xc, rowvar=False))
        ridge = 1e-6 * np.trace(cov) / dim
        if ridge <= 0:
            raise DegenerateFeatures(f"class {kind.value} features are constant")
        means.append(mu)
        covs.append(cov + ridge * np.eye(dim))
    if priors is None:
        priors = np.bincount(y, minlength=N_CLASSES) / y.size
    priors = np.asarray(priors, dtype=float)
    return GdaModel(np.array(means), np.array(covs), priors / priors.sum(), variant)


def gda_predict(model: GdaModel, f) -> tuple[Kind, np.ndarray]:
    """Class and normalised posterior of one feature vector."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size != model.dim or not np.all(np.isfinite(f)):
        raise ValueError("feature vector must be finite and match the model dimension")
    return CLASSES[int(model.predict(f[None, :])[0])], model.predict_proba(f[None, :])[0]


# --------------------------------------------------------------------------
# shallow decision trees


@dataclass
class DecisionTree:
    feature: np.ndarray  # -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, C) leaf class scores in [0, 1]

    @property
    def n_branch(self) -> int:
        return int(np.sum(self.feature >= 0))

    def apply(self, X) -> np.ndarray:
        """Leaf index per row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def scores(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict(self, X) -> np.ndarray:
        return _argmax_low(self.scores(X))

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "DecisionTree":
        return cls(np.array(obj["feature"], dtype=int), np.array(obj["threshold"], dtype=float),
                   np.array(obj["left"], dtype=int), np.array(obj["right"], dtype=int),
                   np.array(obj["value"], dtype=float).reshape(len(obj["feature"]), -1))


def _gini(cw: np.ndarray) -> np.ndarray:
    """Weighted Gini impurity ``W (1 - sum_c p_c^2)`` of class-weight vectors (last axis)."""
    tot = cw[..., 0] + cw[..., 1] + cw[..., 2]
    sq = cw[..., 0] ** 2 + cw[..., 1] ** 2 + cw[..., 2] ** 2
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(tot > 0, tot - sq / safe, 0.0)


@dataclass
class Binning:
    """Per-feature bin index of every training sample.

    With at most ``max_bins`` distinct values a feature gets one bin per
    value (splits are then exactly those of a full threshold search);
    otherwise bins are cut at quantiles, halfway between adjacent values.
    """

    codes: np.ndarray  # (N, F) bin index
    values: list[np.ndarray]  # per feature: bin values (exact) or upper bin edges
    exact: list[bool]
    n_bins: int

    @classmethod
    def build(cls, X: np.ndarray, max_bins: int = 256) -> "Binning":
        codes = np.empty(X.shape, dtype=np.int64)
        values, exact = [], []
        for f in range(X.shape[1]):
            u = np.unique(X[:, f])
            if u.size <= max_bins:
                mids = 0.5 * (u[1:] + u[:-1])
                values.append(u)
                exact.append(True)
            else:
                xs = np.sort(X[:, f])
                pos = np.unique(np.searchsorted(u, xs[np.linspace(0, xs.size - 1, max_bins + 1).astype(int)[1:-1]]))
                pos = pos[pos < u.size - 1]
                mids = 0.5 * (u[pos] + u[pos + 1])
                values.append(mids)
                exact.append(False)
            codes[:, f] = np.searchsorted(mids, X[:, f], side="left")
        n_bins = max(int(codes.max()) + 1 if codes.size else 1, 1)
        return cls(codes, values, exact, n_bins)

    def threshold(self, f: int, b: int, nb: int) -> float:
        """Cut between occupied bins ``b`` and ``nb`` of feature ``f``."""
        if self.exact[f]:
            u = self.values[f]
            return 0.5 * (u[b] + u[nb])
        return float(self.values[f][b])


def _best_split(binning: Binning, y: np.ndarray, W: np.ndarray, rows: np.ndarray,
                rng: np.random.Generator):
    """Best (gain, feature, threshold) for the samples ``rows``; ``None`` if unsplittable.

    Candidate cuts sit right after a bin occupied by the node.  Gains equal to
    the best within round-off are broken uniformly at random.
    """
    if rows.size < 2:
        return None
    F, B = binning.codes.shape[1], binning.n_bins
    key = (np.arange(F)[None, :] * B + binning.codes[rows]) * N_CLASSES + y[rows, None]
    hist = np.bincount(key.ravel(), weights=np.repeat(W[rows], F),
                       minlength=F * B * N_CLASSES).reshape(F, B, N_CLASSES)
    occ = np.bincount((key // N_CLASSES).ravel(), minlength=F * B).reshape(F, B) > 0
    cw = np.cumsum(hist, axis=1)
    total = cw[:, -1:, :]
    parent = _gini(total[0, 0])
    gain = parent - _gini(cw) - _gini(total - cw)
    more_right = np.cumsum(occ[:, ::-1], axis=1)[:, ::-1]
    valid = occ.copy()
    valid[:, :-1] &= more_right[:, 1:] > 0
    valid[:, -1] = False
    gain = np.where(valid, gain, -np.inf)
    top = gain.max()
    tol = 1e-12 * max(1.0, abs(parent))
    if not np.isfinite(top) or top <= tol:
        return None
    f_idx, b_idx = np.nonzero(gain >= top - tol)
    c = int(rng.integers(f_idx.size)) if f_idx.size > 1 else 0
    f, b = int(f_idx[c]), int(b_idx[c])
    nb = b + 1 + int(np.argmax(occ[f, b + 1:]))
    return float(gain[f, b]), f, binning.threshold(f, b, nb)


def _leaf_value(y: np.ndarray, W: np.ndarray, D: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Class scores ``1/2 (1 + g_c / G)`` maximising the pseudo-loss reduction of the leaf."""
    Wm = W[mask]
    G = Wm.sum()
    if G <= 0:
        return np.full(N_CLASSES, 0.5)
    g = np.bincount(y[mask], weights=Wm, minlength=N_CLASSES) - D[mask].sum(axis=0)
    return np.clip(0.5 * (1.0 + g / G), 0.0, 1.0)


def tree_fit(X, y, sample_weights=None, mislabel_weights=None, max_branch: int = MAX_BRANCH_NODES,
             seed: int = 42, binning: Binning | None = None) -> DecisionTree:
    """Best-first weighted-Gini tree with at most ``max_branch`` split nodes.

    ``mislabel_weights[i, c]`` is the boosting mass on (sample ``i``, wrong
    label ``c``); it defaults to spreading each sample weight evenly over its
    wrong labels.  Leaves hold confidence vectors in ``[0, 1]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    n = y.size
    W = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if np.any(W < 0) or W.sum() <= 0:
        raise ValueError("sample weights must be non-negative and not all zero")
    if mislabel_weights is None:
        D = np.repeat((W / (N_CLASSES - 1))[:, None], N_CLASSES, axis=1)
        D[np.arange(n), y] = 0.0
    else:
        D = np.asarray(mislabel_weights, dtype=float)
    rng = np.random.default_rng(seed)
    binning = binning if binning is not None else Binning.build(X)

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [None]
    masks = {0: np.ones(n, dtype=bool)}
    frontier = {}

    def consider(node: int) -> None:
        s = _best_split(binning, y, W, np.nonzero(masks[node])[0], rng)
        if s is not None:
            frontier[node] = s

    consider(0)
    n_branch = 0
    while frontier and n_branch < max_branch:
        node = max(frontier, key=lambda k: (frontier[k][0], -k))
        _, f, thr = frontier.pop(node)
        m = masks.pop(node)
        go_left = X[:, f] <= thr
        ids = []
        for child_mask in (m & go_left, m & ~go_left):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(None)
            cid = len(feature) - 1
            masks[cid] = child_mask
            ids.append(cid)
        feature[node], threshold[node], left[node], right[node] = f, thr, ids[0], ids[1]
        n_branch += 1
        for cid in ids:
            consider(cid)
    for node, m in masks.items():
        value[node] = _leaf_value(y, W, D, m)
    val = np.array([v if v is not None else np.full(N_CLASSES, 0.5) for v in value])
    return DecisionTree(np.array(feature), np.array(threshold), np.array(left), np.array(right), val)


# --------------------------------------------------------------------------
# AdaBoost.M2


@dataclass
class AdaBoostEnsemble:
    trees: list[DecisionTree]
    alphas: np.ndarray
    variant: str = ""
    seed: int = 42
    pseudo_losses: list[float] = field(default_factory=list)
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)

    def raw_scores(self, X) -> np.ndarray:
        out = np.zeros((np.atleast_2d(X).shape[0], N_CLASSES))
        for a, tree in zip(self.alphas, self.trees):
            out += a * tree.scores(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        """Vote shares: scores divided by the total learner weight."""
        return self.raw_scores(X) / self.alphas.sum()

    def predict(self, X) -> np.ndarray:
        return _argmax_low(self.raw_scores(X))

    def to_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA, "model": "bdt", "variant": self.variant, "classes": [k.value for k in CLASSES],
                "seed": self.seed, "alphas": self.alphas.tolist(),
                "pseudo_losses": list(self.pseudo_losses), "calibration": self.calibration,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, obj: dict) -> "AdaBoostEnsemble":
        return cls([DecisionTree.from_dict(t) for t in obj["trees"]], obj["alphas"],
                   obj.get("variant", ""), obj.get("seed", 42), obj.get("pseudo_losses", []),
                   obj.get("calibration", {}))


def adaboost_m2_fit(X, y, n_learners: int = N_LEARNERS, initial_weights=None, seed: int = 42,
                    max_branch: int = MAX_BRANCH_NODES, max_retries: int = 3,
                    variant: str = "") -> AdaBoostEnsemble:
    """Boost shallow trees on the mislabel distribution over (sample, wrong label) pairs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    if np.unique(y).size < 2:
        raise ClassAbsent("boosting needs at least two classes")
    n = y.size
    w0 = np.ones(n) if initial_weights is None else np.asarray(initial_weights, dtype=float)
    D = np.repeat(w0[:, None], N_CLASSES, axis=1)
    D[np.arange(n), y] = 0.0
    D /= D.sum()
    binning = Binning.build(X)
    rows = np.arange(n)
    ss = np.random.SeedSequence(seed)
    trees, alphas, losses = [], [], []
    for _ in range(n_learners):
        accepted = None
        for child in ss.spawn(max_retries + 1):
            W = D.sum(axis=1)
            tree = tree_fit(X, y, W, D, max_branch, int(child.generate_state(1)[0]), binning)
            h = tree.scores(X)
            eps = 0.5 * np.sum(D * (1.0 - h[rows, y][:, None] + h))
            if eps < 0.5:
                accepted = (tree, h, eps)
                break
        if accepted is None:
            break
        tree, h, eps = accepted
        eps = max(eps, EPS_FLOOR)
        beta = eps / (1.0 - eps)
        D = D * beta ** (0.5 * (1.0 + h[rows, y][:, None] - h))
        D[rows, y] = 0.0
        D /= D.sum()
        trees.append(tree)
        alphas.append(math.log(1.0 / beta))
        losses.append(float(eps))
    if not trees:
        raise BoostingStalled("no weak learner reached a pseudo-loss below 1/2")
    return AdaBoostEnsemble(trees, np.array(alphas), variant, seed, losses)


def ensemble_predict(ensemble: AdaBoostEnsemble, f) -> tuple[Kind, np.ndarray]:
    """Class and normalised vote scores of one feature vector."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("feature vector must be finite")
    scores = ensemble.predict_proba(f[None, :])[0]
    return CLASSES[int(_argmax_low(scores[None, :])[0])], scores


# --------------------------------------------------------------------------
# calibration of the lane-keeping miss rate


def lk_miss_rate(pred: np.ndarray, y: np.ndarray) -> float:
    lk = y == LK
    return float(np.mean(pred[lk] != LK)) if lk.any() else float("nan")


@dataclass
class CalibrationResult:
    model: object
    multiplier: float
    miss_rate: float
    converged: bool
    history: list[tuple[float, float]]

    def record(self) -> dict:
        return {"multiplier": self.multiplier, "lk_miss_rate": self.miss_rate,
                "converged": self.converged, "history": [list(h) for h in self.history]}


def calibrate_lk_missrate(trainer: Callable[[float], object], X_val, y_val, target: float = 0.11,
                          tol: float = 0.02, bounds=(1e-3, 1e3), max_iter: int = 20,
                          strict: bool = False) -> CalibrationResult:
    """Bisect a log-scale LK multiplier until the validation LK miss rate hits ``target``.

    ``trainer(m)`` returns a model whose ``predict`` gives class indices; a
    larger ``m`` must favour LK.  Without convergence the closest model is
    returned with ``converged=False`` (or :class:`CalibrationFailed` is raised
    when ``strict``).
    """
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    history: list[tuple[float, float]] = []
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        m = math.exp(mid)
        model = trainer(m)
        rate = lk_miss_rate(model.predict(X_val), np.asarray(y_val))
        history.append((m, rate))
        if best is None or abs(rate - target) < abs(best[2] - target):
            best = (model, m, rate)
        if abs(rate - target) <= tol:
            break
        if rate > target:
            lo = mid
        else:
            hi = mid
    model, m, rate = best
    res = CalibrationResult(model, m, rate, abs(rate - target) <= tol, history)
    if not res.converged:
        log.warning("LK miss-rate calibration stopped at %.3f (target %.3f)", rate, target)
        if strict:
            err = CalibrationFailed(f"LK miss rate {rate:.3f} not within {tol} of {target}")
            err.result = res
            raise err
    if hasattr(model, "calibration"):
        model.calibration = res.record()
    return res


def gda_trainer(X, y, variant: str = "") -> Callable[[float], GdaModel]:
    base = gda_fit(X, y, variant=variant)

    def train(m: float) -> GdaModel:
        p = base.priors.copy()
        p[LK] *= m
        return base.with_priors(p)

    return train


def bdt_trainer(X, y, variant: str = "", n_learners: int = N_LEARNERS, seed: int = 42,
                max_branch: int = MAX_BRANCH_NODES) -> Callable[[float], AdaBoostEnsemble]:
    y = np.asarray(y, dtype=int)

    def train(m: float) -> AdaBoostEnsemble:
        w = np.where(y == LK, m, 1.0)
        return adaboost_m2_fit(X, y, n_learners, w, seed, max_branch, variant=variant)

    return train


def model_to_json(model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def model_from_dict(obj: dict):
    if obj.get("model") == "gda":
        return GdaModel.from_dict(obj)
    if obj.get("model") == "bdt":
        return AdaBoostEnsemble.from_dict(obj)
    raise ValueError(f"unknown model tag {obj.get('model')!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
