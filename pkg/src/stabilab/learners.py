"""The two learning algorithms under study plus their risk estimators.

Ridge regression is fit in closed form from the objective

    (1/n) sum_i (y_i - <x_i, beta>)^2 + lam * ||beta||^2,

whose minimiser solves (X'X + n*lam*I) beta = X'y.  Because of the 1/n
factor, refitting on a leave-one-out sample of size n-1 uses the
regulariser (n-1)*lam; both the naive and the accelerated leave-one-out
paths honour this normalisation.

The kNN classifier votes over the k nearest training points in Euclidean
distance, with distance ties broken by lowest index, and classifies the
boundary case (label sum exactly k/2) as 1.

``ridge_loo_fast`` accelerates the leave-one-out risk with a rank-one
downdate: with A = X'X + (n-1)*lam*I, g = A^-1 X'y, s_j = x_j' A^-1 x_j,
the held-out residual is (y_j - x_j'g) / (1 - s_j).  A conditioning guard
falls back to a naive refit for any index where the downdate is unstable,
so the fast path is exact, never approximate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .core_math import solve_regularized
from .datagen import DataSpec, Dataset, SeedSpec, leave_one_out, sample_dataset

# 1/(1-s_j) beyond this means the downdated system is numerically singular.
DOWNDATE_CONDITION_LIMIT = 1e12


class CostKind(Enum):
    """Closed enum of supported cost functions."""

    SQUARED = "squared"
    ZERO_ONE = "zero_one"


@dataclass(frozen=True)
class KnnParams:
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class RidgeModel:
    """Fitted ridge coefficients with the regularisation and sample size used."""

    beta: tuple[float, ...]
    lam: float
    n_fit: int

    def beta_array(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps(
            {"lambda": self.lam, "n_fit": self.n_fit, "beta": list(self.beta)}
        )

    @classmethod
    def from_json(cls, text: str) -> "RidgeModel":
        obj = json.loads(text)
        return cls(
            beta=tuple(float(t) for t in obj["beta"]),
            lam=float(obj["lambda"]),
            n_fit=int(obj["n_fit"]),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path


@dataclass(frozen=True)
class RidgeAlgorithm:
    """Algorithm selector: ridge regression at a fixed lam."""

    lam: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be a positive real")


@dataclass(frozen=True)
class KnnAlgorithm:
    """Algorithm selector: kNN classification at a fixed k."""

    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


def ridge_fit(data: Dataset, lam: float) -> RidgeModel:
    """Closed-form ridge fit; symmetric in the training points."""
    if not (math.isfinite(lam) and lam > 0):
        raise ValueError("lam must be a positive real")
    n = data.n
    cov = data.xs.T @ data.xs / n
    rhs = data.xs.T @ data.ys / n
    beta = solve_regularized(cov, lam, rhs)
    return RidgeModel(beta=tuple(float(b) for b in beta), lam=lam, n_fit=n)


def predict(model: RidgeModel, x) -> float:
    """Inner product of the fitted coefficients with x."""
    x = np.asarray(x, dtype=np.float64)
    beta = model.beta_array()
    if x.shape != beta.shape:
        raise ValueError(f"dimension mismatch: beta {beta.shape}, x {x.shape}")
    return float(beta @ x)


def ridge_objective(data: Dataset, lam: float, beta) -> float:
    """The (1/n)-normalised ridge objective at an arbitrary coefficient vector."""
    beta = np.asarray(beta, dtype=np.float64)
    residuals = data.ys - data.xs @ beta
    return float(np.mean(residuals**2) + lam * float(beta @ beta))


def cost(kind: CostKind, y_hat: float, y: float) -> float:
    """Pointwise cost: squared error or 0-1 disagreement."""
    if kind is CostKind.SQUARED:
        return float((y_hat - y) ** 2)
    if kind is CostKind.ZERO_ONE:
        if y_hat not in (0.0, 1.0) or y not in (0.0, 1.0):
            raise ValueError("zero_one cost requires arguments in {0, 1}")
        return float(y_hat != y)
    raise ValueError(f"unknown cost kind {kind!r}")


def _require_binary_labels(ys: np.ndarray) -> None:
    if not np.all((ys == 0.0) | (ys == 1.0)):
        raise ValueError("kNN requires labels in {0, 1}")


def neighbor_order(data: Dataset, x) -> np.ndarray:
    """Training indices sorted by distance to x, ties broken by lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (data.d,):
        raise ValueError(f"query point must have shape ({data.d},)")
    dists = np.linalg.norm(data.xs - x[None, :], axis=1)
    return np.argsort(dists, kind="stable")


def knn_classify(data: Dataset, params: KnnParams, x) -> float:
    """Majority vote of the k nearest labels; boundary (sum == k/2) goes to 1."""
    if not 1 <= params.k <= data.n - 1:
        raise ValueError(f"k={params.k} out of range 1..{data.n - 1}")
    _require_binary_labels(data.ys)
    order = neighbor_order(data, x)
    vote = float(np.sum(data.ys[order[: params.k]]))
    return 1.0 if vote >= params.k / 2.0 else 0.0


def _downdate_core(data: Dataset, lam: float):
    """Shared quantities for the rank-one leave-one-out downdate.

    With A = X'X + (n-1)*lam*I returns g = A^-1 X'y, w (columns A^-1 x_j),
    s_j = x_j' A^-1 x_j, h = X g, and a mask of indices where 1 - s_j is
    too small for the downdate to be trusted.
    """
    n = data.n
    if n < 2:
        raise ValueError("leave-one-out needs n >= 2")
    xs, ys = data.xs, data.ys
    a = xs.T @ xs + (n - 1) * lam * np.eye(data.d)
    g = np.linalg.solve(a, xs.T @ ys)
    w = np.linalg.solve(a, xs.T)
    s = np.einsum("ij,ji->i", xs, w)
    h = xs @ g
    unstable = (1.0 - s) <= np.abs(s) / DOWNDATE_CONDITION_LIMIT
    return g, w, s, h, unstable


def _ridge_loo_betas(data: Dataset, lam: float) -> np.ndarray:
    """All n leave-one-out coefficient vectors, betas[j] = refit without point j.

    Exact: downdates where stable, naive refits elsewhere.
    """
    g, w, s, h, unstable = _downdate_core(data, lam)
    ys = data.ys
    denom_safe = np.where(unstable, 1.0, 1.0 - s)
    scale = (h - ys * s) / denom_safe
    betas = g[None, :] - ys[:, None] * w.T + scale[:, None] * w.T
    for j in np.nonzero(unstable)[0]:
        betas[j] = ridge_fit(leave_one_out(data, int(j) + 1), lam).beta_array()
    return betas


def loo_estimate(algorithm, data: Dataset, kind: CostKind) -> float:
    """Leave-one-out risk: average cost at each point of the model refit
    on the sample without it.  Naive implementation (n full refits)."""
    n = data.n
    if isinstance(algorithm, RidgeAlgorithm):
        if n < 2:
            raise ValueError("ridge leave-one-out needs n >= 2")
        total = 0.0
        for j in range(1, n + 1):
            model = ridge_fit(leave_one_out(data, j), algorithm.lam)
            y_hat = predict(model, data.xs[j - 1])
            total += cost(kind, y_hat, float(data.ys[j - 1]))
        return total / n
    if isinstance(algorithm, KnnAlgorithm):
        if n < algorithm.k + 2:
            raise ValueError("kNN leave-one-out needs n >= k + 2")
        params = KnnParams(algorithm.k)
        total = 0.0
        for j in range(1, n + 1):
            y_hat = knn_classify(leave_one_out(data, j), params, data.xs[j - 1])
            total += cost(kind, y_hat, float(data.ys[j - 1]))
        return total / n
    raise ValueError(f"unknown algorithm {algorithm!r}")


def ridge_loo_fast(data: Dataset, lam: float) -> float:
    """Rank-one-downdate leave-one-out risk for ridge with squared cost.

    Exactly equals loo_estimate(RidgeAlgorithm(lam), data, SQUARED); the
    shortcut residual (y_j - x_j'g)/(1 - s_j) is used where stable and a
    naive refit elsewhere.
    """
    if not (math.isfinite(lam) and lam > 0):
        raise ValueError("lam must be a positive real")
    _, _, s, h, unstable = _downdate_core(data, lam)
    ys = data.ys
    denom_safe = np.where(unstable, 1.0, 1.0 - s)
    sq = ((ys - h) / denom_safe) ** 2
    for j in np.nonzero(unstable)[0]:
        model = ridge_fit(leave_one_out(data, int(j) + 1), lam)
        sq[j] = (ys[j] - predict(model, data.xs[j])) ** 2
    return float(np.mean(sq))


class MonteCarloEstimate(NamedTuple):
    estimate: float
    std_error: float


def prediction_error_mc(
    predictor: RidgeModel | Callable[[np.ndarray], float],
    spec: DataSpec,
    m: int,
    kind: CostKind,
    seed: SeedSpec,
) -> MonteCarloEstimate:
    """Monte Carlo prediction error on m fresh draws from spec.

    ``predictor`` is either a RidgeModel (vectorised path) or any callable
    mapping a feature vector to a prediction (e.g. a kNN closure).
    Deterministic given the seed.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    test = sample_dataset(spec, m, seed)
    if isinstance(predictor, RidgeModel):
        preds = test.xs @ predictor.beta_array()
    else:
        preds = np.asarray([predictor(test.xs[i]) for i in range(m)], dtype=np.float64)
    if kind is CostKind.SQUARED:
        costs = (preds - test.ys) ** 2
    else:
        if not np.all((preds == 0.0) | (preds == 1.0)):
            raise ValueError("zero_one cost requires binary predictions")
        _require_binary_labels(test.ys)
        costs = (preds != test.ys).astype(np.float64)
    est = float(np.mean(costs))
    se = float(np.std(costs, ddof=1) / math.sqrt(m))
    return MonteCarloEstimate(est, se)
