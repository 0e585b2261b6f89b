"""Closed-form generalisation bounds and the moment-to-tail conversion.

Everything here is a pure formula evaluator; no clamping is applied even
when a bound exceeds the trivial cost range (vacuousness is reported by
the harness, not hidden here).

The single numerical constant KAPPA = 1.271 is the ceiling of the
universal constant in the generalised Efron-Stein moment inequality

    ||Z - EZ||_q <= sqrt(2*KAPPA*q) * sqrt(|| sum_j (Z - Z'_j)^2 ||_{q/2}),

and is shared by every evaluator in this module.  Using the ceiling is
conservative and keeps all inequalities valid.

The moment-to-tail device: if E|X|^q <= C (sum_i lam_i q^{alpha_i})^q for
all q >= q0, then for every x > 0

    P[ |X| > sum_i lam_i (e*x/min_j alpha_j)^{alpha_i} ]
        <= C * exp(q0 * min_j alpha_j) * exp(-x).

The two PAC bounds for ridge are exactly this device applied to the
moment corollary, with the one- and two-term specs built by
``bounded_tail_spec`` and ``subgaussian_tail_spec``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .datagen import DataSpec, Dataset, SeedSpec, replace_point, sample_dataset
from .learners import ridge_loo_fast

KAPPA = 1.271


# ---------------------------------------------------------------------------
# Gamma constants and moment bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaSet:
    """The three constants aggregating (b_x, lam, eta, kappa) that appear in
    the ridge moment and PAC bounds."""

    gamma1: float
    gamma2: float
    gamma3: float
    b_x: float
    lam: float
    eta: float
    kappa: float = KAPPA

    @property
    def total(self) -> float:
        return self.gamma1 + self.gamma2 + self.gamma3


def gamma_set(b_x: float, lam: float, eta: float) -> GammaSet:
    """Evaluate the three closed-form constants at kappa = 1.271."""
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta in (0, 1) required, got eta = {eta}")
    if not (b_x > 0 and math.isfinite(b_x)):
        raise ValueError("b_x must be a positive real")
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError("lam must be a positive real")
    b2 = b_x**2
    sk = math.sqrt(KAPPA)
    contraction = (1.0 + (b2 + lam) / (lam * (1.0 - eta))) * (1.0 + b2 / lam)
    gamma1 = 8.0 * sk * b2 / lam
    gamma2 = 2.0 * sk * b2 / lam * ((8.0 + math.sqrt(2.0)) * contraction + 4.0 * b2 / lam)
    gamma3 = 2.0 * b2 / lam * contraction
    return GammaSet(gamma1, gamma2, gamma3, b_x, lam, eta)


def moment_bound_generic(
    s_q_n: float, s_q_n1: float, var_term_norm: float, q: float, n: int
) -> float:
    """Moment bound on the centered LoO-minus-prediction-error deviation
    from stability at sizes n and n-1 plus the variance-term norm."""
    if q < 2.0:
        raise ValueError("q must be >= 2")
    if min(s_q_n, s_q_n1, var_term_norm) < 0.0:
        raise ValueError("stability and variance inputs must be nonnegative")
    return math.sqrt(KAPPA * q * n) * (
        math.sqrt(2.0) * s_q_n + 4.0 * s_q_n1
    ) + 2.0 * math.sqrt(KAPPA * q) / math.sqrt(n) * var_term_norm


def ridge_variance_term_bound(
    b_x: float, lam: float, y_norm_q: float, y_norm_2q: float
) -> float:
    """Closed-form bound on the variance-term norm for ridge."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if min(b_x, y_norm_q, y_norm_2q) < 0:
        raise ValueError("inputs must be nonnegative")
    return 4.0 * b_x**2 / lam * y_norm_q**2 + 4.0 * b_x**4 / lam**2 * y_norm_2q**2


def ridge_moment_bound(
    gammas: GammaSet,
    q: float,
    n: int,
    y_norm_q: float,
    y_norm_2q: float,
    centered: bool,
) -> float:
    """Ridge moment bound: (sqrt(q/n)) (G1 ||Y||_q^2 + G2 ||Y||_{2q}^2),
    plus (G3/n) ||Y||_{2q}^2 when not centered."""
    if q < 2.0:
        raise ValueError("q must be >= 2")
    if n < 3:
        raise ValueError("n must be >= 3")
    main = (
        math.sqrt(q)
        / math.sqrt(n)
        * (gammas.gamma1 * y_norm_q**2 + gammas.gamma2 * y_norm_2q**2)
    )
    if centered:
        return main
    return main + gammas.gamma3 / n * y_norm_2q**2


# ---------------------------------------------------------------------------
# Moment-to-tail conversion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailSpec:
    """Parameters of a polynomial-in-q moment envelope: prefactor c, starting
    order q0, and terms (lam_i, alpha_i)."""

    c: float
    q0: float
    terms: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "terms", tuple((float(a), float(b)) for a, b in self.terms)
        )
        if not self.terms:
            raise ValueError("terms must be nonempty")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError("c must be a positive real")
        if self.q0 < 1.0:
            raise ValueError("q0 must be >= 1")
        for lam_i, alpha_i in self.terms:
            if not (lam_i > 0 and math.isfinite(lam_i)):
                raise ValueError("every lam_i must be a positive real")
            if not (alpha_i > 0 and math.isfinite(alpha_i)):
                raise ValueError("every alpha_i must be a positive real")

    @property
    def min_alpha(self) -> float:
        return min(alpha for _, alpha in self.terms)


def tail_threshold(spec: TailSpec, x: float) -> float:
    """Deviation level sum_i lam_i (e*x/min_alpha)^{alpha_i} at tail level x."""
    if x <= 0:
        raise ValueError("x must be positive")
    base = math.e * x / spec.min_alpha
    return sum(lam_i * base**alpha_i for lam_i, alpha_i in spec.terms)


def tail_prob_bound(spec: TailSpec, x: float) -> float:
    """Failure probability c * exp(q0 * min_alpha) * exp(-x)."""
    if x <= 0:
        raise ValueError("x must be positive")
    return spec.c * math.exp(spec.q0 * spec.min_alpha) * math.exp(-x)


def bounded_tail_spec(gammas: GammaSet, b_y: float, n: int) -> TailSpec:
    """One-term spec whose threshold reproduces the bounded-label PAC bound."""
    return TailSpec(
        c=1.0, q0=2.0, terms=((b_y**2 * gammas.total / math.sqrt(n), 0.5),)
    )


def subgaussian_tail_spec(
    gammas: GammaSet, mean_y: float, v: float, n: int
) -> TailSpec:
    """Two-term spec whose threshold reproduces the sub-Gaussian PAC bound.

    The term coefficients are the polynomial-in-q moment coefficients
    2*G*(EY)^2/sqrt(n) and 16*e^2*G*v/sqrt(n); the (2e)^alpha factors of
    the final M1/M2 constants appear when the threshold is evaluated.
    """
    lam1 = 2.0 * gammas.total * mean_y**2 / math.sqrt(n)
    lam2 = 16.0 * math.e**2 * gammas.total * v / math.sqrt(n)
    return TailSpec(c=1.0, q0=2.0, terms=((lam1, 0.5), (lam2, 1.5)))


def pac_bound_bounded(gammas: GammaSet, b_y: float, n: int, x: float) -> float:
    """High-probability deviation bound for bounded labels:
    sqrt(2*e*x/n) * b_y^2 * (G1 + G2 + G3), failing with probability
    at most e * exp(-x)."""
    if x <= 0:
        raise ValueError("x must be positive")
    if n < 3:
        raise ValueError("n must be >= 3")
    if b_y < 0:
        raise ValueError("b_y must be nonnegative")
    return math.sqrt(2.0 * math.e * x / n) * b_y**2 * gammas.total


def pac_bound_subgaussian(
    gammas: GammaSet, mean_y: float, v: float, n: int, x: float
) -> float:
    """High-probability deviation bound for sub-Gaussian labels:
    (M1 (EY)^2 sqrt(x) + M2 v x^{3/2}) / sqrt(n) with
    M1 = 2 sqrt(2e) G and M2 = 16 e^2 (2e)^{3/2} G."""
    if x <= 0:
        raise ValueError("x must be positive")
    if n < 3:
        raise ValueError("n must be >= 3")
    if v <= 0:
        raise ValueError("v must be positive")
    g = gammas.total
    m1 = 2.0 * math.sqrt(2.0 * math.e) * g
    m2 = 16.0 * math.e**2 * (2.0 * math.e) ** 1.5 * g
    return (m1 * mean_y**2 * math.sqrt(x) + m2 * v * x**1.5) / math.sqrt(n)


# ---------------------------------------------------------------------------
# Generalised Efron-Stein empirical check
# ---------------------------------------------------------------------------

def _stat_constant(data: Dataset) -> float:
    return 0.0


def _stat_mean(data: Dataset) -> float:
    return float(np.mean(data.ys))


def _stat_max(data: Dataset) -> float:
    return float(np.max(data.ys))


STAT_REGISTRY: dict[str, Callable[..., float]] = {
    "constant": lambda data, lam: _stat_constant(data),
    "mean": lambda data, lam: _stat_mean(data),
    "max": lambda data, lam: _stat_max(data),
    "ridge_loo": lambda data, lam: ridge_loo_fast(data, lam),
}


# Degenerate (constant) statistics measure both sides at machine noise;
# differences below this absolute floor count as equality.
_FP_NOISE_FLOOR = 1e-12


class EfronSteinResult(NamedTuple):
    lhs: float
    rhs: float
    lhs_std_error: float
    rhs_std_error: float

    @property
    def margin(self) -> float:
        return 3.0 * (self.lhs_std_error + self.rhs_std_error)

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.margin + _FP_NOISE_FLOOR


def efron_stein_moment_check(
    f: str,
    spec: DataSpec,
    n: int,
    q: float,
    reps: int,
    seed: SeedSpec,
    ridge_lam: float = 1.0,
) -> EfronSteinResult:
    """Monte Carlo check of the generalised Efron-Stein moment inequality.

    For the statistic Z = f(Z_1, ..., Z_n) of the dataset, estimates
    lhs = ||Z - EZ||_q and rhs = sqrt(2*KAPPA*q) * sqrt(||sum_j (Z-Z'_j)^2
    ||_{q/2}), where Z'_j replaces point j with an independent copy.  The
    same draws feed the lhs and the inner norm to cut comparison noise;
    EZ is estimated on an independent stream of doubled size.
    """
    if f not in STAT_REGISTRY:
        raise ValueError(f"unknown statistic tag {f!r}; known: {sorted(STAT_REGISTRY)}")
    if q < 2.0:
        raise ValueError("q must be >= 2")
    if reps < 2:
        raise ValueError("reps must be >= 2")
    stat = STAT_REGISTRY[f]

    mean_seed = seed.child(0)
    ez_vals = np.empty(2 * reps)
    for r in range(2 * reps):
        ez_vals[r] = stat(sample_dataset(spec, n, mean_seed.child(r)), ridge_lam)
    ez = float(np.mean(ez_vals))

    main_seed = seed.child(1)
    centered_pow = np.empty(reps)
    sumsq_pow = np.empty(reps)
    for r in range(reps):
        seed_r = main_seed.child(r)
        data = sample_dataset(spec, n, seed_r.child(0))
        fresh = sample_dataset(spec, n, seed_r.child(1))
        z = stat(data, ridge_lam)
        sumsq = 0.0
        for j in range(1, n + 1):
            swapped = replace_point(data, j, (fresh.xs[j - 1], float(fresh.ys[j - 1])))
            sumsq += (z - stat(swapped, ridge_lam)) ** 2
        centered_pow[r] = abs(z - ez) ** q
        sumsq_pow[r] = sumsq ** (q / 2.0)

    mean_c = float(np.mean(centered_pow))
    se_c = float(np.std(centered_pow, ddof=1) / math.sqrt(reps))
    lhs = mean_c ** (1.0 / q)
    lhs_se = se_c * lhs / (q * mean_c) if mean_c > 0 else 0.0

    mean_s = float(np.mean(sumsq_pow))
    se_s = float(np.std(sumsq_pow, ddof=1) / math.sqrt(reps))
    # rhs = sqrt(2 kappa q) * mean_s^{1/q}
    rhs = math.sqrt(2.0 * KAPPA * q) * mean_s ** (1.0 / q)
    rhs_se = math.sqrt(2.0 * KAPPA * q) * se_s * mean_s ** (1.0 / q) / (q * mean_s) if mean_s > 0 else 0.0

    return EfronSteinResult(lhs, rhs, lhs_se, rhs_se)


# ---------------------------------------------------------------------------
# Bound sweep export
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundsRow:
    bound_name: str
    b_x: float
    lam: float
    eta: float
    n: int
    q_or_x: float
    value: float
    vacuous: bool


def write_bounds_csv(rows: Iterable[BoundsRow], path: str | Path) -> Path:
    path = Path(path)
    lines = ["bound_name,b_x,lambda,eta,n,q_or_x,value,vacuous"]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.bound_name,
                    f"{r.b_x:.17g}",
                    f"{r.lam:.17g}",
                    f"{r.eta:.17g}",
                    str(r.n),
                    f"{r.q_or_x:.17g}",
                    f"{r.value:.17g}",
                    "true" if r.vacuous else "false",
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")
    return path
