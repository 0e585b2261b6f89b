"""Experiment runner: seeded Monte Carlo campaigns that verify the bounds.

Five experiment kinds share one JSON config schema (``ExperimentConfig``):

* ``coverage``        -- does |LoO - prediction error| stay under the PAC
                         threshold at the promised frequency?
* ``rate``            -- log-log slope of the median deviation versus n.
* ``stability_sweep`` -- empirical S_q against the closed-form gamma.
* ``efron_stein``     -- moment-inequality check for registry statistics.
* ``bounds_table``    -- plain evaluation of every closed-form bound.

Determinism contract: reruns with an identical config produce byte-identical
CSV/JSON/SVG outputs.  All randomness flows from ``base_seed`` through
per-replication child streams, and reductions happen in fixed index order,
so the ``STABILAB_THREADS`` worker cap affects speed only, never results.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bounds import (
    BoundsRow,
    gamma_set,
    efron_stein_moment_check,
    pac_bound_bounded,
    pac_bound_subgaussian,
    ridge_moment_bound,
    write_bounds_csv,
)
from .datagen import DataSpec, SeedSpec, sample_dataset
from .learners import CostKind, KnnAlgorithm, RidgeAlgorithm, prediction_error_mc, ridge_fit, ridge_loo_fast
from .stability import (
    RidgeStabilityInputs,
    StabilityConfig,
    SweepRow,
    knn_gamma_1,
    ridge_corollary_violations,
    ridge_gamma_q,
    ridge_stability_violations,
    stability_profile,
    write_stability_csv,
    y_norm,
    y_norm_mc_std_error,
)

KINDS = ("coverage", "rate", "stability_sweep", "efron_stein", "bounds_table")

EFRON_STEIN_STATS = ("constant", "mean", "ridge_loo")

# Reserved stream roles, kept far away from grid indices.
_BOOTSTRAP_ROLE = 10**9
_YNORM_ROLE = 10**9 + 1

_YNORM_MC_DRAWS = 10**6
_BOOTSTRAP_RESAMPLES = 1000


class ConfigError(ValueError):
    """Bad config file or config values (CLI exit code 2)."""


class PreconditionError(RuntimeError):
    """A runtime precondition failed, e.g. the test_m precision gate
    (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlgorithmConfig:
    """Algorithm selector for the harness; ridge carries the eta used by the
    bound evaluators, and lam/k may be grids for sweep experiments."""

    name: str
    lam: tuple[float, ...] = ()
    eta: float | None = None
    k: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        if self.name == "ridge":
            if not self.lam or any(v <= 0 or not math.isfinite(v) for v in self.lam):
                raise ConfigError("ridge requires one or more positive lambda values")
            if self.eta is None or not (0.0 < self.eta < 1.0):
                raise ConfigError("ridge requires eta in (0, 1)")
            if self.k:
                raise ConfigError("ridge config must not set k")
        elif self.name == "knn":
            if not self.k or any(v < 1 for v in self.k):
                raise ConfigError("knn requires one or more k values >= 1")
            if self.lam or self.eta is not None:
                raise ConfigError("knn config must not set lambda or eta")
        else:
            raise ConfigError(f"unknown algorithm {self.name!r}")

    def single_lam(self) -> float:
        if len(self.lam) != 1:
            raise ConfigError("this experiment needs exactly one lambda value")
        return self.lam[0]

    def single_k(self) -> int:
        if len(self.k) != 1:
            raise ConfigError("this experiment needs exactly one k value")
        return self.k[0]


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    spec: DataSpec
    algorithm: AlgorithmConfig
    n_grid: tuple[int, ...]
    q_grid: tuple[float, ...]
    x_grid: tuple[float, ...]
    reps: int
    test_m: int
    base_seed: int
    out_dir: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))
        object.__setattr__(self, "q_grid", tuple(float(v) for v in self.q_grid))
        object.__setattr__(self, "x_grid", tuple(float(v) for v in self.x_grid))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.n_grid or not self.q_grid or not self.x_grid:
            raise ConfigError("n_grid, q_grid and x_grid must all be nonempty")
        if any(n < 2 for n in self.n_grid):
            raise ConfigError("all n_grid entries must be >= 2")
        if any(q < 1.0 for q in self.q_grid):
            raise ConfigError("all q_grid entries must be >= 1")
        if any(x <= 0.0 for x in self.x_grid):
            raise ConfigError("all x_grid entries must be positive")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.kind == "coverage" and self.reps < 50:
            raise ConfigError("coverage requires reps >= 50")
        if self.test_m < 2:
            raise ConfigError("test_m must be >= 2")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")

    def root_seed(self) -> SeedSpec:
        return SeedSpec(self.base_seed, 0)


_SPEC_KEYS = {"d", "x_family", "b_x", "y_model", "beta_star", "noise_scale", "b_y", "v"}
_ALG_KEYS = {"name", "lambda", "eta", "k"}
_CONFIG_KEYS = {
    "kind", "spec", "algorithm", "n_grid", "q_grid", "x_grid",
    "reps", "test_m", "base_seed", "out_dir",
}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _as_tuple(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def spec_from_dict(obj: dict) -> DataSpec:
    _check_keys(obj, _SPEC_KEYS, "spec")
    try:
        return DataSpec(
            d=int(obj["d"]),
            x_family=str(obj["x_family"]),
            b_x=float(obj["b_x"]),
            y_model=str(obj["y_model"]),
            beta_star=tuple(float(t) for t in obj["beta_star"]),
            noise_scale=float(obj.get("noise_scale", 0.0)),
            b_y=None if obj.get("b_y") is None else float(obj["b_y"]),
            v=None if obj.get("v") is None else float(obj["v"]),
        )
    except KeyError as exc:
        raise ConfigError(f"spec is missing required key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid spec: {exc}") from exc


def spec_to_dict(spec: DataSpec) -> dict:
    out = {
        "d": spec.d,
        "x_family": spec.x_family,
        "b_x": spec.b_x,
        "y_model": spec.y_model,
        "beta_star": list(spec.beta_star),
        "noise_scale": spec.noise_scale,
    }
    if spec.b_y is not None:
        out["b_y"] = spec.b_y
    if spec.v is not None:
        out["v"] = spec.v
    return out


def algorithm_from_dict(obj: dict) -> AlgorithmConfig:
    _check_keys(obj, _ALG_KEYS, "algorithm")
    name = str(obj.get("name", ""))
    return AlgorithmConfig(
        name=name,
        lam=_as_tuple(obj["lambda"]) if "lambda" in obj else (),
        eta=None if obj.get("eta") is None else float(obj["eta"]),
        k=_as_tuple(obj["k"]) if "k" in obj else (),
    )


def algorithm_to_dict(alg: AlgorithmConfig) -> dict:
    out: dict = {"name": alg.name}
    if alg.name == "ridge":
        out["lambda"] = list(alg.lam)
        out["eta"] = alg.eta
    else:
        out["k"] = list(alg.k)
    return out


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(obj, _CONFIG_KEYS, "config")
    try:
        return ExperimentConfig(
            kind=str(obj["kind"]),
            spec=spec_from_dict(obj["spec"]),
            algorithm=algorithm_from_dict(obj["algorithm"]),
            n_grid=_as_tuple(obj["n_grid"]),
            q_grid=_as_tuple(obj["q_grid"]),
            x_grid=_as_tuple(obj["x_grid"]),
            reps=int(obj["reps"]),
            test_m=int(obj["test_m"]),
            base_seed=int(obj["base_seed"]),
            out_dir=str(obj["out_dir"]),
        )
    except KeyError as exc:
        raise ConfigError(f"config is missing required key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "kind": config.kind,
        "spec": spec_to_dict(config.spec),
        "algorithm": algorithm_to_dict(config.algorithm),
        "n_grid": list(config.n_grid),
        "q_grid": list(config.q_grid),
        "x_grid": list(config.x_grid),
        "reps": config.reps,
        "test_m": config.test_m,
        "base_seed": config.base_seed,
        "out_dir": config.out_dir,
    }


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(obj)


# ---------------------------------------------------------------------------
# Replication scheduling
# ---------------------------------------------------------------------------

def _worker_count() -> int:
    raw = os.environ.get("STABILAB_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"STABILAB_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


def map_indexed(fn: Callable[[int], object], count: int) -> list:
    """Apply a pure indexed function over range(count), optionally on a
    thread pool; results come back in index order either way."""
    workers = _worker_count()
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


# ---------------------------------------------------------------------------
# Shared deviation sampling (coverage and rate)
# ---------------------------------------------------------------------------

def _analytic_y_mean(spec: DataSpec) -> float:
    """E[Y] for the built-in specs.  The linear models have mean zero by the
    symmetry of every feature family, the noise, and the clip; the Bernoulli
    model's marginal is its base probability."""
    if spec.y_model == "bernoulli_label":
        return spec.bernoulli_p()
    return 0.0


def _deviation_samples(
    config: ExperimentConfig, n: int, n_seed: SeedSpec
) -> tuple[np.ndarray, float]:
    """Per-replication |LoO - MC prediction error| samples for ridge at n.

    Returns the deviations plus the largest Monte Carlo standard error of
    the prediction-error estimate across replications.
    """
    lam = config.algorithm.single_lam()
    spec = config.spec

    def one(r: int) -> tuple[float, float]:
        seed_r = n_seed.child(r)
        data = sample_dataset(spec, n, seed_r.child(0))
        loo = ridge_loo_fast(data, lam)
        model = ridge_fit(data, lam)
        est, se = prediction_error_mc(
            model, spec, config.test_m, CostKind.SQUARED, seed_r.child(1)
        )
        return abs(loo - est), se

    results = map_indexed(one, config.reps)
    devs = np.asarray([d for d, _ in results])
    max_se = max(se for _, se in results)
    return devs, max_se


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageRow:
    n: int
    x: float
    threshold: float
    exceedance_rate: float
    failure_bound: float
    reps: int
    half_width: float
    vacuous: bool
    max_dev_ratio: float
    passed: bool


@dataclass
class CoverageReport:
    rows: list[CoverageRow]
    deviations: dict[int, np.ndarray]
    config: ExperimentConfig
    kind: str = "coverage"

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    def write_csv(self, path: Path) -> None:
        lines = [
            "n,x,threshold,exceedance_rate,failure_bound,reps,"
            "half_width,vacuous,max_dev_ratio,passed"
        ]
        for r in self.rows:
            lines.append(
                f"{r.n},{r.x:.17g},{r.threshold:.17g},{r.exceedance_rate:.17g},"
                f"{r.failure_bound:.17g},{r.reps},{r.half_width:.17g},"
                f"{str(r.vacuous).lower()},{r.max_dev_ratio:.17g},"
                f"{str(r.passed).lower()}"
            )
        path.write_text("\n".join(lines) + "\n")

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "config": config_to_dict(self.config),
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "deviations": {str(n): list(d) for n, d in self.deviations.items()},
        }


def run_coverage(config: ExperimentConfig) -> CoverageReport:
    if config.kind != "coverage":
        raise ConfigError(f"expected kind 'coverage', got {config.kind!r}")
    alg = config.algorithm
    if alg.name != "ridge":
        raise PreconditionError("coverage requires the ridge algorithm")
    lam, eta = alg.single_lam(), alg.eta
    spec = config.spec

    v = spec.subgaussian_v()
    if spec.b_y is None and v is None:
        raise PreconditionError(
            "coverage needs a spec with a label bound (b_y) or a sub-Gaussian proxy (v)"
        )
    gammas = gamma_set(spec.b_x, lam, eta)
    for n in config.n_grid:
        violations = ridge_corollary_violations(spec.b_x, lam, eta, n)
        if violations:
            raise PreconditionError("invalid lambda domain: " + "; ".join(violations))

    def threshold(n: int, x: float) -> float:
        if spec.b_y is not None:
            return pac_bound_bounded(gammas, spec.b_y, n, x)
        return pac_bound_subgaussian(gammas, _analytic_y_mean(spec), v, n, x)

    thresholds = {
        (n, x): threshold(n, x) for n in config.n_grid for x in config.x_grid
    }
    min_threshold = min(thresholds.values())

    root = config.root_seed()
    rows: list[CoverageRow] = []
    deviations: dict[int, np.ndarray] = {}
    for ni, n in enumerate(config.n_grid):
        devs, max_se = _deviation_samples(config, n, root.child(ni))
        if max_se >= 0.01 * min_threshold:
            raise PreconditionError(
                f"prediction-error standard error {max_se:.3e} exceeds 1% of the "
                f"smallest threshold {min_threshold:.3e}; increase test_m "
                f"(currently {config.test_m})"
            )
        deviations[n] = devs
        for x in config.x_grid:
            thr = thresholds[(n, x)]
            rate = float(np.mean(devs > thr))
            bound = math.e * math.exp(-x)
            p = min(bound, 1.0)
            half_width = 3.0 * math.sqrt(p * (1.0 - p) / config.reps)
            ratio = float(np.max(devs) / thr)
            if not math.isfinite(ratio):
                raise PreconditionError("deviation/threshold ratio is not finite")
            passed = rate <= bound + half_width
            rows.append(
                CoverageRow(
                    n=n,
                    x=x,
                    threshold=thr,
                    exceedance_rate=rate,
                    failure_bound=bound,
                    reps=config.reps,
                    half_width=half_width,
                    vacuous=bound >= 1.0,
                    max_dev_ratio=ratio,
                    passed=passed,
                )
            )
    return CoverageReport(rows, deviations, config)


# ---------------------------------------------------------------------------
# Rate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateRow:
    n: int
    median_deviation: float
    reps: int


@dataclass
class RateReport:
    rows: list[RateRow]
    slope: float
    slope_ci_low: float
    slope_ci_high: float
    config: ExperimentConfig
    kind: str = "rate"

    @property
    def all_pass(self) -> bool:
        return True  # the slope is reported, not gated, at this level

    def write_csv(self, path: Path) -> None:
        lines = ["n,median_deviation,reps"]
        for r in self.rows:
            lines.append(f"{r.n},{r.median_deviation:.17g},{r.reps}")
        path.write_text("\n".join(lines) + "\n")

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "config": config_to_dict(self.config),
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "slope": self.slope,
            "slope_ci_low": self.slope_ci_low,
            "slope_ci_high": self.slope_ci_high,
        }


def _require_geometric(n_grid: Sequence[int]) -> None:
    if len(n_grid) < 4:
        raise PreconditionError("rate needs at least 4 sample sizes")
    ratios = [n_grid[i + 1] / n_grid[i] for i in range(len(n_grid) - 1)]
    if any(r <= 1.0 for r in ratios):
        raise PreconditionError("n_grid must be strictly increasing")
    base = ratios[0]
    if any(abs(r / base - 1.0) > 0.1 for r in ratios):
        raise PreconditionError("n_grid must be geometrically spaced (within 10%)")


def run_rate(config: ExperimentConfig) -> RateReport:
    if config.kind != "rate":
        raise ConfigError(f"expected kind 'rate', got {config.kind!r}")
    if config.algorithm.name != "ridge":
        raise PreconditionError("rate requires the ridge algorithm")
    _require_geometric(config.n_grid)
    if config.reps < 100:
        raise PreconditionError("rate needs reps >= 100 per sample size")

    root = config.root_seed()
    all_devs: list[np.ndarray] = []
    for ni, n in enumerate(config.n_grid):
        devs, _ = _deviation_samples(config, n, root.child(ni))
        all_devs.append(devs)

    medians = np.asarray([float(np.median(d)) for d in all_devs])
    if np.any(medians <= 0.0):
        raise PreconditionError(
            "degenerate deviation medians (zero); the data distribution produces no spread"
        )

    log_n = np.log(np.asarray(config.n_grid, dtype=np.float64))
    slope = float(np.polyfit(log_n, np.log(medians), 1)[0])

    rng = root.child(_BOOTSTRAP_ROLE).generator()
    boot_slopes = np.empty(_BOOTSTRAP_RESAMPLES)
    reps = config.reps
    for b in range(_BOOTSTRAP_RESAMPLES):
        med_b = np.empty(len(all_devs))
        for i, devs in enumerate(all_devs):
            idx = rng.integers(0, reps, size=reps)
            med_b[i] = np.median(devs[idx])
        med_b = np.maximum(med_b, 1e-300)  # guard against degenerate resamples
        boot_slopes[b] = np.polyfit(log_n, np.log(med_b), 1)[0]
    ci_low, ci_high = np.percentile(boot_slopes, [2.5, 97.5])

    rows = [
        RateRow(n, float(m), config.reps)
        for n, m in zip(config.n_grid, medians)
    ]
    return RateReport(rows, slope, float(ci_low), float(ci_high), config)


# ---------------------------------------------------------------------------
# Stability sweep
# ---------------------------------------------------------------------------

def _json_safe(obj: dict) -> dict:
    """NaN/inf row entries (skipped or theory-free rows) become null."""
    return {
        k: (None if isinstance(v, float) and not math.isfinite(v) else v)
        for k, v in obj.items()
    }


@dataclass
class SweepReport:
    rows: list[SweepRow]
    config: ExperimentConfig
    kind: str = "stability_sweep"

    @property
    def all_pass(self) -> bool:
        return all(r.dominated != "false" for r in self.rows)

    def write_csv(self, path: Path) -> None:
        write_stability_csv(self.rows, path)

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "config": config_to_dict(self.config),
            "rows": [_json_safe(dataclasses.asdict(r)) for r in self.rows],
        }


def _ridge_norm_cache(
    config: ExperimentConfig, root: SeedSpec
) -> dict[float, tuple[float, float]]:
    """(norm, std_error) of ||Y||_{2q} per q; analytic where available, else
    a fixed-size Monte Carlo estimate whose error widens the dominance margin."""
    cache: dict[float, tuple[float, float]] = {}
    for qi, q in enumerate(config.q_grid):
        try:
            cache[q] = (y_norm(config.spec, 2.0 * q, method="analytic"), 0.0)
        except ValueError:
            cache[q] = y_norm_mc_std_error(
                config.spec, 2.0 * q, _YNORM_MC_DRAWS, root.child(_YNORM_ROLE).child(qi)
            )
    return cache


def run_stability_sweep(config: ExperimentConfig) -> SweepReport:
    if config.kind != "stability_sweep":
        raise ConfigError(f"expected kind 'stability_sweep', got {config.kind!r}")
    if any(q > 8.0 for q in config.q_grid):
        raise PreconditionError("stability sweep supports q in [1, 8]")
    alg = config.algorithm
    spec = config.spec
    root = config.root_seed()

    if alg.name == "ridge":
        params = list(alg.lam)
        cost_kind = CostKind.SQUARED
        norms = _ridge_norm_cache(config, root)
    else:
        params = list(alg.k)
        cost_kind = CostKind.ZERO_ONE

    combos = [(ni, n, pi, p) for ni, n in enumerate(config.n_grid)
              for pi, p in enumerate(params)]

    def run_combo(ci: int) -> list[SweepRow]:
        ni, n, pi, param = combos[ci]
        seed = root.child(ni).child(pi)
        out: list[SweepRow] = []
        if alg.name == "ridge":
            if ridge_stability_violations(spec.b_x, param, alg.eta, n):
                return [
                    SweepRow("ridge", q, n, param, math.nan, math.nan, math.nan, "skipped")
                    for q in config.q_grid
                ]
            algorithm = RidgeAlgorithm(param)
        else:
            if n < param + 2:
                return [
                    SweepRow("knn", q, n, param, math.nan, math.nan, math.nan, "skipped")
                    for q in config.q_grid
                ]
            algorithm = KnnAlgorithm(int(param))
        base_cfg = StabilityConfig(
            q=config.q_grid[0], n=n, reps=config.reps, j_policy="average_all", seed=seed
        )
        profile = stability_profile(algorithm, spec, cost_kind, base_cfg, config.q_grid)
        for q in config.q_grid:
            est = profile[q]
            if alg.name == "ridge":
                norm, norm_se = norms[q]
                gamma = ridge_gamma_q(
                    RidgeStabilityInputs(spec.b_x, param, alg.eta, n, norm)
                )
                gamma_se = 2.0 * gamma * norm_se / norm if norm > 0 else 0.0
                ok = est.s_q_hat <= gamma + 3.0 * (est.std_error + gamma_se)
                out.append(
                    SweepRow("ridge", q, n, param, est.s_q_hat, est.std_error,
                             gamma, "true" if ok else "false")
                )
            else:
                if q == 1.0:
                    gamma = knn_gamma_1(int(param), n)
                    ok = est.s_q_hat <= gamma + 3.0 * est.std_error
                    out.append(
                        SweepRow("knn", q, n, param, est.s_q_hat, est.std_error,
                                 gamma, "true" if ok else "false")
                    )
                else:
                    out.append(
                        SweepRow("knn", q, n, param, est.s_q_hat, est.std_error,
                                 math.nan, "no_theory")
                    )
        return out

    rows: list[SweepRow] = []
    for chunk in map_indexed(run_combo, len(combos)):
        rows.extend(chunk)
    return SweepReport(rows, config)


# ---------------------------------------------------------------------------
# Efron-Stein
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EfronSteinRow:
    f: str
    n: int
    q: float
    lhs: float
    rhs: float
    lhs_std_error: float
    rhs_std_error: float
    passed: bool


@dataclass
class EfronSteinReport:
    rows: list[EfronSteinRow]
    config: ExperimentConfig
    kind: str = "efron_stein"

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    def write_csv(self, path: Path) -> None:
        lines = ["f,n,q,lhs,rhs,lhs_std_error,rhs_std_error,passed"]
        for r in self.rows:
            lines.append(
                f"{r.f},{r.n},{r.q:.17g},{r.lhs:.17g},{r.rhs:.17g},"
                f"{r.lhs_std_error:.17g},{r.rhs_std_error:.17g},{str(r.passed).lower()}"
            )
        path.write_text("\n".join(lines) + "\n")

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "config": config_to_dict(self.config),
            "rows": [dataclasses.asdict(r) for r in self.rows],
        }


def run_efron_stein(config: ExperimentConfig) -> EfronSteinReport:
    if config.kind != "efron_stein":
        raise ConfigError(f"expected kind 'efron_stein', got {config.kind!r}")
    if any(q < 2.0 or q > 8.0 for q in config.q_grid):
        raise PreconditionError("efron_stein supports q in [2, 8]")
    ridge_lam = (
        config.algorithm.lam[0] if config.algorithm.name == "ridge" else 1.0
    )
    root = config.root_seed()
    rows: list[EfronSteinRow] = []
    jobs = [
        (fi, f, ni, n, qi, q)
        for fi, f in enumerate(EFRON_STEIN_STATS)
        for ni, n in enumerate(config.n_grid)
        for qi, q in enumerate(config.q_grid)
    ]

    def run_job(ji: int) -> EfronSteinRow:
        fi, f, ni, n, qi, q = jobs[ji]
        seed = root.child(fi).child(ni).child(qi)
        res = efron_stein_moment_check(
            f, config.spec, n, q, config.reps, seed, ridge_lam=ridge_lam
        )
        return EfronSteinRow(
            f, n, q, res.lhs, res.rhs, res.lhs_std_error, res.rhs_std_error, res.passed
        )

    rows = list(map_indexed(run_job, len(jobs)))
    return EfronSteinReport(rows, config)


# ---------------------------------------------------------------------------
# Bounds table
# ---------------------------------------------------------------------------

@dataclass
class BoundsReport:
    rows: list[BoundsRow]
    config: ExperimentConfig
    kind: str = "bounds_table"

    @property
    def all_pass(self) -> bool:
        return True  # pure formula evaluation; vacuousness is reported per row

    def write_csv(self, path: Path) -> None:
        write_bounds_csv(self.rows, path)

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "config": config_to_dict(self.config),
            "rows": [dataclasses.asdict(r) for r in self.rows],
        }


def _deviation_envelope(spec: DataSpec, lam: float) -> float:
    """Largest possible |LoO - prediction error| for bounded labels: both
    terms are averages of squared errors, each at most
    (b_y + b_x^2 b_y / lam)^2 given the fitted-coefficient norm bound."""
    if spec.b_y is None:
        return math.inf
    return (spec.b_y * (1.0 + spec.b_x**2 / lam)) ** 2


def run_bounds_table(config: ExperimentConfig) -> BoundsReport:
    if config.kind != "bounds_table":
        raise ConfigError(f"expected kind 'bounds_table', got {config.kind!r}")
    alg = config.algorithm
    if alg.name != "ridge":
        raise PreconditionError("bounds_table requires the ridge algorithm")
    lam, eta = alg.single_lam(), alg.eta
    spec = config.spec
    gammas = gamma_set(spec.b_x, lam, eta)
    envelope = _deviation_envelope(spec, lam)
    root = config.root_seed()

    norm_cache: dict[float, float] = {}

    def norm(q: float) -> float:
        if q not in norm_cache:
            try:
                norm_cache[q] = y_norm(spec, q, method="analytic")
            except ValueError:
                norm_cache[q] = y_norm(
                    spec, q, method="mc", m=_YNORM_MC_DRAWS,
                    seed=root.child(_YNORM_ROLE).child(len(norm_cache)),
                )
        return norm_cache[q]

    rows: list[BoundsRow] = []
    v = spec.subgaussian_v()
    for n in config.n_grid:
        domain_ok = not ridge_corollary_violations(spec.b_x, lam, eta, n)
        for q in config.q_grid:
            if q < 2.0 or not domain_ok:
                continue
            nq, n2q = norm(q), norm(2.0 * q)
            for name, centered in (
                ("ridge_moment_centered", True),
                ("ridge_moment_uncentered", False),
            ):
                value = ridge_moment_bound(gammas, q, n, nq, n2q, centered)
                rows.append(
                    BoundsRow(name, spec.b_x, lam, eta, n, q, value, value > envelope)
                )
        for x in config.x_grid:
            if n >= 3 and spec.b_y is not None:
                value = pac_bound_bounded(gammas, spec.b_y, n, x)
                rows.append(
                    BoundsRow("pac_bounded", spec.b_x, lam, eta, n, x, value,
                              value > envelope)
                )
            if n >= 3 and v is not None:
                value = pac_bound_subgaussian(gammas, _analytic_y_mean(spec), v, n, x)
                rows.append(
                    BoundsRow("pac_subgaussian", spec.b_x, lam, eta, n, x, value, False)
                )
    if not rows:
        raise PreconditionError(
            "bounds_table produced no rows; check the lambda domain and q_grid"
        )
    return BoundsReport(rows, config)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

RUNNERS = {
    "coverage": run_coverage,
    "rate": run_rate,
    "stability_sweep": run_stability_sweep,
    "efron_stein": run_efron_stein,
    "bounds_table": run_bounds_table,
}


def run_experiment(config: ExperimentConfig):
    return RUNNERS[config.kind](config)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

@contextmanager
def _run_lock(out_dir: Path):
    """Single-writer lock on the output directory for the emission phase."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".stabilab.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise PreconditionError(
            f"output directory is locked by another run: {lock}"
        ) from exc
    try:
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _svg_figure(
    series: list[tuple[str, list[tuple[float, float]]]],
    curve: list[tuple[float, float]],
    title: str,
    log_log: bool,
) -> str:
    """Tiny deterministic SVG scatter: circles for data series, a polyline
    for the reference curve, linear or log-log axes."""
    width, height, pad = 640.0, 420.0, 60.0

    def tx(v: float) -> float:
        return math.log10(v) if log_log else v

    pts = [p for _, s in series for p in s] + curve
    xs = [tx(p[0]) for p in pts]
    ys = [tx(p[1]) for p in pts if p[1] > 0 or not log_log]
    if not ys:
        ys = [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def px(v: float) -> float:
        return pad + (tx(v) - x_lo) / x_span * (width - 2 * pad)

    def py(v: float) -> float:
        return height - pad - (tx(v) - y_lo) / y_span * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}">',
        f'<rect width="{width:g}" height="{height:g}" fill="white"/>',
        f'<text x="{width / 2:g}" y="24" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad:g}" y1="{height - pad:g}" x2="{width - pad:g}" '
        f'y2="{height - pad:g}" stroke="black"/>',
        f'<line x1="{pad:g}" y1="{pad:g}" x2="{pad:g}" y2="{height - pad:g}" '
        f'stroke="black"/>',
    ]
    if curve:
        coords = " ".join(f"{px(a):.6g},{py(b):.6g}" for a, b in curve if b > 0 or not log_log)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="#888888" stroke-width="1.5"/>'
        )
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")
    for i, (label, pts_i) in enumerate(series):
        color = palette[i % len(palette)]
        for a, b in pts_i:
            if log_log and b <= 0:
                continue
            parts.append(
                f'<circle cx="{px(a):.6g}" cy="{py(b):.6g}" r="4" fill="{color}">'
                f"<title>{label}</title></circle>"
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _rate_svg(report: RateReport) -> str:
    pts = [(float(r.n), r.median_deviation) for r in report.rows]
    log_n = [math.log(p[0]) for p in pts]
    fit = np.polyfit(log_n, [math.log(p[1]) for p in pts], 1)
    curve = [
        (p[0], math.exp(fit[0] * math.log(p[0]) + fit[1])) for p in pts
    ]
    return _svg_figure(
        [("median deviation", pts)],
        curve,
        f"median |LoO - prediction error| vs n (slope {report.slope:.3f})",
        log_log=True,
    )


def _coverage_svg(report: CoverageReport) -> str:
    series = []
    for n in report.config.n_grid:
        pts = [(r.x, r.exceedance_rate) for r in report.rows if r.n == n]
        series.append((f"n={n}", pts))
    xs = sorted({r.x for r in report.rows})
    curve = [(x, math.e * math.exp(-x)) for x in xs]
    return _svg_figure(
        series, curve, "exceedance rate vs x against e*exp(-x)", log_log=False
    )


def emit_report(report, formats: Sequence[str], out_dir: str | Path | None = None) -> list[Path]:
    """Persist a report as CSV/JSON/SVG files named <kind>_<base_seed>.<ext>.

    SVG is produced for the kinds with a defined figure (coverage and rate);
    requesting it elsewhere is a no-op.  Emission holds a lock on the output
    directory so concurrent runs cannot interleave files.
    """
    if not report.rows:
        raise PreconditionError("refusing to emit an empty report")
    formats = [f.strip() for f in formats if f.strip()]
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise ConfigError(f"unknown emit formats: {sorted(unknown)}")
    out = Path(out_dir) if out_dir is not None else Path(report.config.out_dir)
    stem = f"{report.kind}_{report.config.base_seed}"
    written: list[Path] = []
    with _run_lock(out):
        if "csv" in formats:
            path = out / f"{stem}.csv"
            report.write_csv(path)
            written.append(path)
        if "json" in formats:
            path = out / f"{stem}.json"
            path.write_text(
                json.dumps(report.to_json_obj(), sort_keys=True, indent=2) + "\n"
            )
            written.append(path)
        if "svg" in formats:
            svg = None
            if report.kind == "rate":
                svg = _rate_svg(report)
            elif report.kind == "coverage":
                svg = _coverage_svg(report)
            if svg is not None:
                path = out / f"{stem}.svg"
                path.write_text(svg)
                written.append(path)
    return written
