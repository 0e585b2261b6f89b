"""Empirical L^q stability estimation and closed-form stability coefficients.

The empirical estimator draws, per replication, a training sample D of
size n and an independent test point (X, Y), fits the algorithm on D and
on the sample with point j removed, and averages the q-th power of the
absolute cost difference; the q-th root of the grand mean is the
estimate.  ``j_policy`` selects either a single fixed j (the last point)
or an average over all j, which is valid because the population quantity
does not depend on j for symmetric algorithms, and cuts variance.

Closed forms:

* ridge, squared cost, bounded features (q >= 1):
    gamma_q = 2 ||Y||_{2q}^2 (b_x^2/(n lam))
              (1 + (b_x^2+lam)/(lam(1-eta))) (1 + b_x^2/lam)
  valid on the domain  n*eta > 1,  lam > b_x^2/(n*eta - 1)  and
  lam > 1/(eta*(n-1)); the conjunction of both conditions is enforced,
  which is the stricter and therefore safe reading.

* kNN, 0-1 cost (q = 1):  gamma_1 = (4/sqrt(2*pi)) * sqrt(k)/n.

``ridge_param_diff_check`` evaluates both sides of the deterministic
coefficient-difference inequality that drives the ridge result, so the
bound can be checked on concrete samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .datagen import DataSpec, Dataset, SeedSpec, leave_one_out, sample_dataset
from .learners import (
    CostKind,
    KnnAlgorithm,
    RidgeAlgorithm,
    _ridge_loo_betas,
    cost,
    neighbor_order,
    predict,
    ridge_fit,
)

J_POLICIES = ("fixed_last", "average_all")


# ---------------------------------------------------------------------------
# Validity domain of the ridge stability results
# ---------------------------------------------------------------------------

def ridge_stability_violations(b_x: float, lam: float, eta: float, n: int) -> list[str]:
    """Violated inequalities (empty list means the domain is valid)."""
    out: list[str] = []
    if not (0.0 < eta < 1.0):
        out.append(f"eta in (0, 1) required, got eta = {eta}")
        return out
    if n < 2:
        out.append(f"n >= 2 required, got n = {n}")
        return out
    if n * eta <= 1.0:
        out.append(f"n * eta > 1 required, got n * eta = {n * eta}")
    else:
        floor = b_x**2 / (n * eta - 1.0)
        if lam <= floor:
            out.append(
                f"lam > b_x^2 / (n*eta - 1) required, got lam = {lam} <= {floor}"
            )
    floor2 = 1.0 / (eta * (n - 1))
    if lam <= floor2:
        out.append(f"lam > 1 / (eta*(n-1)) required, got lam = {lam} <= {floor2}")
    return out


def check_ridge_stability_domain(b_x: float, lam: float, eta: float, n: int) -> None:
    violations = ridge_stability_violations(b_x, lam, eta, n)
    if violations:
        raise ValueError("; ".join(violations))


def ridge_corollary_violations(b_x: float, lam: float, eta: float, n: int) -> list[str]:
    """Domain for the moment/PAC results: stability at both n and n-1."""
    if n < 3:
        return [f"n >= 3 required, got n = {n}"]
    seen: list[str] = []
    for m in (n, n - 1):
        for v in ridge_stability_violations(b_x, lam, eta, m):
            tagged = f"at sample size {m}: {v}"
            if tagged not in seen:
                seen.append(tagged)
    return seen


def check_ridge_corollary_domain(b_x: float, lam: float, eta: float, n: int) -> None:
    violations = ridge_corollary_violations(b_x, lam, eta, n)
    if violations:
        raise ValueError("; ".join(violations))


# ---------------------------------------------------------------------------
# Empirical estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityConfig:
    q: float
    n: int
    reps: int
    j_policy: str = "average_all"
    seed: SeedSpec = SeedSpec(0)

    def __post_init__(self) -> None:
        if self.q < 1.0:
            raise ValueError("q must be >= 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.reps < 2:
            raise ValueError("reps must be >= 2")
        if self.j_policy not in J_POLICIES:
            raise ValueError(f"j_policy must be one of {J_POLICIES}")


@dataclass(frozen=True)
class StabilityEstimate:
    s_q_hat: float
    std_error: float
    config: StabilityConfig


def _ridge_cost_diffs(
    data: Dataset, lam: float, x: np.ndarray, y: float, j_policy: str
) -> np.ndarray:
    full = ridge_fit(data, lam)
    c_full = cost(CostKind.SQUARED, predict(full, x), y)
    if j_policy == "average_all":
        betas = _ridge_loo_betas(data, lam)
        preds = betas @ x
        costs = (preds - y) ** 2
        return np.abs(c_full - costs)
    model = ridge_fit(leave_one_out(data, data.n), lam)
    c_loo = cost(CostKind.SQUARED, predict(model, x), y)
    return np.asarray([abs(c_full - c_loo)])


def _knn_cost_diffs(
    data: Dataset, k: int, x: np.ndarray, y: float, j_policy: str
) -> np.ndarray:
    n = data.n
    if n < k + 2:
        raise ValueError("kNN stability needs n >= k + 2")
    order = neighbor_order(data, x)
    ys = data.ys
    vote = float(np.sum(ys[order[:k]]))
    pred = 1.0 if vote >= k / 2.0 else 0.0
    next_label = float(ys[order[k]])

    def flipped(j0: int) -> float:
        # Removing a point outside the k nearest cannot change the vote.
        pos = np.nonzero(order[:k] == j0)[0]
        if pos.size == 0:
            return 0.0
        vote_new = vote - float(ys[j0]) + next_label
        pred_new = 1.0 if vote_new >= k / 2.0 else 0.0
        return float(pred != pred_new)

    if j_policy == "average_all":
        diffs = np.zeros(n)
        for p in range(k):
            j0 = int(order[p])
            vote_new = vote - float(ys[j0]) + next_label
            pred_new = 1.0 if vote_new >= k / 2.0 else 0.0
            diffs[j0] = float(pred != pred_new)
        return diffs
    return np.asarray([flipped(n - 1)])


def _power_mean_estimate(
    per_rep: np.ndarray, q: float, config: StabilityConfig
) -> StabilityEstimate:
    """Delta-method q-th-root estimate from per-replication q-th-power means."""
    mean_q = float(np.mean(per_rep))
    se_mean = float(np.std(per_rep, ddof=1) / math.sqrt(len(per_rep)))
    s_hat = mean_q ** (1.0 / q)
    if mean_q > 0.0:
        se = se_mean * s_hat / (q * mean_q)
    else:
        se = 0.0
    return StabilityEstimate(s_hat, se, config)


def stability_profile(
    algorithm,
    spec: DataSpec,
    kind: CostKind,
    config: StabilityConfig,
    qs: Iterable[float],
) -> dict[float, StabilityEstimate]:
    """Empirical stability at several q values sharing the same draws.

    Sharing draws makes the power-mean monotonicity in q hold exactly on
    the empirical measure.
    """
    qs = tuple(float(q) for q in qs)
    if any(q < 1.0 for q in qs):
        raise ValueError("all q must be >= 1")
    if isinstance(algorithm, RidgeAlgorithm):
        if kind is not CostKind.SQUARED:
            raise ValueError("ridge stability is defined for the squared cost")
    elif isinstance(algorithm, KnnAlgorithm):
        if kind is not CostKind.ZERO_ONE:
            raise ValueError("kNN stability is defined for the 0-1 cost")
        if config.n < algorithm.k + 2:
            raise ValueError("kNN stability needs n >= k + 2")
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    per_rep = {q: np.empty(config.reps) for q in qs}
    for r in range(config.reps):
        seed_r = config.seed.child(r)
        data = sample_dataset(spec, config.n, seed_r.child(0))
        test = sample_dataset(spec, 1, seed_r.child(1))
        x, y = test.xs[0], float(test.ys[0])
        if isinstance(algorithm, RidgeAlgorithm):
            diffs = _ridge_cost_diffs(data, algorithm.lam, x, y, config.j_policy)
        else:
            diffs = _knn_cost_diffs(data, algorithm.k, x, y, config.j_policy)
        for q in qs:
            per_rep[q][r] = float(np.mean(diffs**q))

    out: dict[float, StabilityEstimate] = {}
    for q in qs:
        cfg_q = StabilityConfig(q, config.n, config.reps, config.j_policy, config.seed)
        out[q] = _power_mean_estimate(per_rep[q], q, cfg_q)
    return out


def empirical_lq_stability(
    algorithm, spec: DataSpec, kind: CostKind, config: StabilityConfig
) -> StabilityEstimate:
    """Monte Carlo estimate of the L^q stability at config.q."""
    return stability_profile(algorithm, spec, kind, config, (config.q,))[config.q]


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RidgeStabilityInputs:
    b_x: float
    lam: float
    eta: float
    n: int
    y_norm_2q: float

    def __post_init__(self) -> None:
        if not (self.b_x > 0 and math.isfinite(self.b_x)):
            raise ValueError("b_x must be a positive real")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be a positive real")
        if math.isnan(self.y_norm_2q) or self.y_norm_2q < 0:
            raise ValueError("y_norm_2q must be nonnegative (may be +inf)")
        check_ridge_stability_domain(self.b_x, self.lam, self.eta, self.n)


def ridge_gamma_q(inputs: RidgeStabilityInputs) -> float:
    """Closed-form L^q stability coefficient for ridge with squared cost."""
    if math.isinf(inputs.y_norm_2q):
        return math.inf
    b2 = inputs.b_x**2
    lam = inputs.lam
    return (
        2.0
        * inputs.y_norm_2q**2
        * (b2 / (inputs.n * lam))
        * (1.0 + (b2 + lam) / (lam * (1.0 - inputs.eta)))
        * (1.0 + b2 / lam)
    )


def knn_gamma_1(k: int, n: int) -> float:
    """Closed-form L^1 (hypothesis) stability coefficient for kNN, 0-1 cost."""
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range 1..{n - 1}")
    return 4.0 / math.sqrt(2.0 * math.pi) * math.sqrt(k) / n


class ParamDiffCheck(NamedTuple):
    lhs: float
    rhs: float


def ridge_param_diff_check(
    data: Dataset, j: int, lam: float, eta: float, b_x: float
) -> ParamDiffCheck:
    """Both sides of the coefficient-difference inequality on a concrete sample.

    lhs is the Euclidean distance between the full fit and the fit with
    point j removed; rhs is the closed-form bound evaluated on the data.
    On the valid domain lhs <= rhs deterministically.
    """
    n = data.n
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta in (0, 1) required, got eta = {eta}")
    if n * eta <= 1.0:
        raise ValueError(f"n * eta > 1 required, got n * eta = {n * eta}")
    floor = b_x**2 / (n * eta - 1.0)
    if lam <= floor:
        raise ValueError(f"lam > b_x^2 / (n*eta - 1) required, got lam = {lam} <= {floor}")
    max_norm = float(np.max(np.linalg.norm(data.xs, axis=1)))
    if max_norm > b_x * (1.0 + 1e-12):
        raise ValueError(f"data violates the feature bound: max ||x|| = {max_norm} > {b_x}")
    if not 1 <= j <= n:
        raise ValueError(f"index j={j} out of range 1..{n}")

    beta_full = ridge_fit(data, lam).beta_array()
    beta_loo = ridge_fit(leave_one_out(data, j), lam).beta_array()
    lhs = float(np.linalg.norm(beta_full - beta_loo))

    abs_y = np.abs(data.ys)
    y_j = float(abs_y[j - 1])
    rest_mean = float((np.sum(abs_y) - y_j) / (n - 1))
    rhs = (b_x / (n * lam)) * (
        y_j + (b_x**2 + lam) / (lam * (1.0 - eta)) * rest_mean
    )
    return ParamDiffCheck(lhs, rhs)


# ---------------------------------------------------------------------------
# Population L^q norms of |Y|
# ---------------------------------------------------------------------------

_ENUM_MAX_D = 20


def _enumerate_clipped_labels(spec: DataSpec) -> np.ndarray:
    """All equally likely |Y| values for a noise-free clipped-linear label
    over sign-pattern features."""
    d = spec.d
    if d > _ENUM_MAX_D:
        raise ValueError(f"analytic enumeration supports d <= {_ENUM_MAX_D}")
    beta = np.asarray(spec.beta_star)
    scale = spec.b_x / math.sqrt(d)
    signs = np.asarray(
        [[1.0 if (i >> bit) & 1 else -1.0 for bit in range(d)] for i in range(2**d)]
    )
    ys = np.clip((signs * scale) @ beta, -spec.b_y, spec.b_y)
    return np.abs(ys)


def y_norm(
    spec: DataSpec,
    q: float,
    method: str = "analytic",
    m: int = 0,
    seed: SeedSpec | None = None,
) -> float:
    """Population L^q norm of |Y| under the given label distribution.

    ``method="analytic"`` is available for the Bernoulli label model (with
    its closed-form marginal) and for noise-free clipped-linear labels over
    sign-pattern features, where the finitely many outcomes are enumerated.
    ``method="mc"`` estimates the norm from m fresh draws.
    """
    if q < 1.0:
        raise ValueError("q must be >= 1")
    if method == "analytic":
        if spec.y_model == "bernoulli_label":
            return spec.bernoulli_p() ** (1.0 / q)
        if spec.y_model == "linear_clipped" and spec.noise_scale == 0.0 and (
            spec.x_family == "rademacher_coords"
        ):
            abs_y = _enumerate_clipped_labels(spec)
            return float(np.mean(abs_y**q) ** (1.0 / q))
        raise ValueError(
            "no closed-form |Y| moments for this spec; use method='mc'"
        )
    if method == "mc":
        if m < 2:
            raise ValueError("mc estimation needs m >= 2")
        if seed is None:
            raise ValueError("mc estimation needs a seed")
        data = sample_dataset(spec, m, seed)
        return float(np.mean(np.abs(data.ys) ** q) ** (1.0 / q))
    raise ValueError(f"unknown method {method!r}")


def y_norm_mc_std_error(spec: DataSpec, q: float, m: int, seed: SeedSpec) -> tuple[float, float]:
    """Monte Carlo ||Y||_q with its delta-method standard error."""
    if m < 2:
        raise ValueError("mc estimation needs m >= 2")
    data = sample_dataset(spec, m, seed)
    powered = np.abs(data.ys) ** q
    mean_q = float(np.mean(powered))
    se_mean = float(np.std(powered, ddof=1) / math.sqrt(m))
    norm = mean_q ** (1.0 / q)
    se = se_mean * norm / (q * mean_q) if mean_q > 0 else 0.0
    return norm, se


# ---------------------------------------------------------------------------
# Sweep export
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    algo: str
    q: float
    n: int
    lambda_or_k: float
    s_q_hat: float
    std_error: float
    gamma_theory: float
    dominated: str  # "true" | "false" | "skipped" | "no_theory"


def write_stability_csv(rows: Iterable[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    lines = ["algo,q,n,lambda_or_k,s_q_hat,std_error,gamma_theory,dominated"]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.algo,
                    f"{r.q:.17g}",
                    str(r.n),
                    f"{r.lambda_or_k:.17g}",
                    f"{r.s_q_hat:.17g}",
                    f"{r.std_error:.17g}",
                    f"{r.gamma_theory:.17g}",
                    r.dominated,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")
    return path
