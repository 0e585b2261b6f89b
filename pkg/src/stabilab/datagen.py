"""Synthetic data generation under almost-sure boundedness assumptions.

Every feature family is constructed so the Euclidean bound ||X||_2 <= b_x
holds by construction (never by rejection), which keeps sampling
deterministic given a seed and makes assumption verification exact:

* ``uniform_ball``      -- uniform on the radius-b_x ball.
* ``uniform_cube``      -- coordinates uniform on [-b_x/sqrt(d), b_x/sqrt(d)].
* ``rademacher_coords`` -- coordinates are +-b_x/sqrt(d), so ||X||_2 == b_x.

Label models:

* ``linear_clipped``   -- Y = clip(<beta_star, X> + noise, [-b_y, b_y]) with
  Gaussian noise of scale ``noise_scale``; requires b_y >= ||beta_star|| b_x
  so the clip is a projection of noise excursions only.
* ``linear_gaussian``  -- Y = <beta_star, X> + Gaussian noise (unbounded Y,
  sub-Gaussian with proxy v).
* ``bernoulli_label``  -- Y in {0, 1} with P(Y=1 | X) = clip(p0 + <beta_star,
  X>, 0, 1) where p0 is taken from ``noise_scale``.  For the symmetric
  feature families the marginal P(Y=1) equals p0 exactly whenever
  ||beta_star|| b_x <= min(p0, 1-p0).

Seeding uses a splitmix64-style avalanche of (base_seed, stream_index), so
distinct streams are reproducible regardless of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

X_FAMILIES = ("uniform_ball", "uniform_cube", "rademacher_coords")
Y_MODELS = ("linear_clipped", "linear_gaussian", "bernoulli_label")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(base_seed: int, stream_index: int) -> int:
    """Splitmix64 avalanche of (base_seed, stream_index) into one 64-bit seed."""
    x = (base_seed ^ ((stream_index * _GOLDEN) & _MASK64)) & _MASK64
    x = (x + _GOLDEN) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


@dataclass(frozen=True)
class SeedSpec:
    """A reproducible random stream: (base_seed, stream_index)."""

    base_seed: int
    stream_index: int = 0

    def __post_init__(self) -> None:
        if not 0 <= int(self.base_seed) <= _MASK64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        if int(self.stream_index) < 0:
            raise ValueError("stream_index must be nonnegative")

    def derived_seed(self) -> int:
        return _mix64(int(self.base_seed), int(self.stream_index))

    def child(self, stream_index: int) -> "SeedSpec":
        """Sub-stream rooted at this stream's derived seed."""
        return SeedSpec(self.derived_seed(), stream_index)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.derived_seed()))


@dataclass(frozen=True)
class DataSpec:
    """Distribution family plus the assumption parameters it satisfies."""

    d: int
    x_family: str
    b_x: float
    y_model: str
    beta_star: tuple[float, ...]
    noise_scale: float = 0.0
    b_y: float | None = None
    v: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta_star", tuple(float(t) for t in self.beta_star))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.x_family not in X_FAMILIES:
            raise ValueError(f"unknown x_family {self.x_family!r}")
        if self.y_model not in Y_MODELS:
            raise ValueError(f"unknown y_model {self.y_model!r}")
        if not (np.isfinite(self.b_x) and self.b_x > 0):
            raise ValueError("b_x must be a positive real")
        if len(self.beta_star) != self.d:
            raise ValueError("beta_star must have length d")
        if not all(math.isfinite(t) for t in self.beta_star):
            raise ValueError("beta_star entries must be finite")
        if not (math.isfinite(self.noise_scale) and self.noise_scale >= 0):
            raise ValueError("noise_scale must be nonnegative")
        if self.v is not None and not (math.isfinite(self.v) and self.v > 0):
            raise ValueError("v must be a positive real when given")

        if self.y_model in ("linear_clipped", "bernoulli_label"):
            if self.b_y is None:
                raise ValueError(f"{self.y_model} requires b_y")
            if not (math.isfinite(self.b_y) and self.b_y > 0):
                raise ValueError("b_y must be a positive real")
        if self.y_model == "linear_clipped" and self.b_y < self.beta_norm() * self.b_x:
            raise ValueError(
                "linear_clipped requires b_y >= ||beta_star||_2 * b_x "
                "(clipping must only project noise)"
            )
        if self.y_model == "bernoulli_label":
            if not 0.0 <= self.noise_scale <= 1.0:
                raise ValueError(
                    "bernoulli_label uses noise_scale as the base label "
                    "probability; it must lie in [0, 1]"
                )
            if self.b_y < 1.0:
                raise ValueError("bernoulli_label labels lie in {0,1}; b_y must be >= 1")

    def beta_norm(self) -> float:
        return float(np.linalg.norm(self.beta_star))

    def subgaussian_v(self) -> float | None:
        """Sub-Gaussian proxy for Y: the explicit v if set, else a derived
        default (noise variance plus the signal range ||beta||^2 b_x^2) for
        the Gaussian label model."""
        if self.v is not None:
            return self.v
        if self.y_model == "linear_gaussian":
            return self.noise_scale**2 + self.beta_norm() ** 2 * self.b_x**2
        return None

    def bernoulli_p(self) -> float:
        """Exact marginal P(Y=1) for the Bernoulli label model.

        Valid whenever the conditional probability never clips, i.e.
        ||beta_star|| b_x <= min(p0, 1-p0); raises otherwise.
        """
        if self.y_model != "bernoulli_label":
            raise ValueError("bernoulli_p only applies to bernoulli_label specs")
        p0 = self.noise_scale
        if self.beta_norm() * self.b_x > min(p0, 1.0 - p0) + 1e-12:
            raise ValueError(
                "bernoulli marginal is closed-form only when "
                "||beta_star|| * b_x <= min(p0, 1-p0)"
            )
        return p0


@dataclass(eq=False)
class Dataset:
    """A labeled sample: xs has shape (n, d), ys shape (n,)."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self) -> None:
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.xs.ndim != 2 or self.ys.ndim != 1:
            raise ValueError("xs must be (n, d) and ys (n,)")
        if self.xs.shape[0] != self.ys.shape[0]:
            raise ValueError("xs and ys disagree on n")
        if self.xs.shape[0] < 1:
            raise ValueError("dataset needs n >= 1")
        if not (np.all(np.isfinite(self.xs)) and np.all(np.isfinite(self.ys))):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]


def _sample_features(spec: DataSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    d = spec.d
    if spec.x_family == "uniform_ball":
        g = rng.standard_normal((n, d))
        norms = np.linalg.norm(g, axis=1)
        norms[norms == 0.0] = 1.0  # probability-zero guard
        radii = spec.b_x * rng.random(n) ** (1.0 / d)
        return g / norms[:, None] * radii[:, None]
    if spec.x_family == "uniform_cube":
        half = spec.b_x / math.sqrt(d)
        return rng.uniform(-half, half, size=(n, d))
    # rademacher_coords: signs scaled so the norm is exactly b_x
    signs = rng.integers(0, 2, size=(n, d)) * 2 - 1
    return signs * (spec.b_x / math.sqrt(d))


def _sample_labels(spec: DataSpec, xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    signal = xs @ np.asarray(spec.beta_star)
    if spec.y_model == "linear_clipped":
        noise = spec.noise_scale * rng.standard_normal(xs.shape[0])
        return np.clip(signal + noise, -spec.b_y, spec.b_y)
    if spec.y_model == "linear_gaussian":
        return signal + spec.noise_scale * rng.standard_normal(xs.shape[0])
    p = np.clip(spec.noise_scale + signal, 0.0, 1.0)
    return (rng.random(xs.shape[0]) < p).astype(np.float64)


def sample_dataset(spec: DataSpec, n: int, seed: SeedSpec) -> Dataset:
    """Draw n i.i.d. points; deterministic given (spec, n, seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed.generator()
    xs = _sample_features(spec, n, rng)
    ys = _sample_labels(spec, xs, rng)
    return Dataset(xs, ys)


def leave_one_out(data: Dataset, j: int) -> Dataset:
    """Remove the j-th point (1-based), preserving the order of the rest."""
    if data.n < 2:
        raise ValueError("leave_one_out needs n >= 2")
    if not 1 <= j <= data.n:
        raise ValueError(f"index j={j} out of range 1..{data.n}")
    keep = np.arange(data.n) != (j - 1)
    return Dataset(data.xs[keep], data.ys[keep])


def replace_point(data: Dataset, j: int, z_new: tuple[np.ndarray, float]) -> Dataset:
    """Swap the j-th point (1-based) for z_new = (x, y), all others untouched."""
    if not 1 <= j <= data.n:
        raise ValueError(f"index j={j} out of range 1..{data.n}")
    x_new, y_new = z_new
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (data.d,):
        raise ValueError(f"replacement x must have shape ({data.d},)")
    xs = data.xs.copy()
    ys = data.ys.copy()
    xs[j - 1] = x_new
    ys[j - 1] = float(y_new)
    return Dataset(xs, ys)


@dataclass(frozen=True)
class AssumptionReport:
    """Empirical check of the almost-sure bounds and the sub-Gaussian proxy."""

    max_x_norm: float
    max_abs_y: float
    x_bound_ok: bool
    y_bound_ok: bool | None
    subg_ratios: dict[int, float] = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return self.x_bound_ok and (self.y_bound_ok is not False)


def verify_assumptions(data: Dataset, spec: DataSpec) -> AssumptionReport:
    """Report max ||X||, max |Y| against the declared bounds.

    For specs with a sub-Gaussian proxy this also reports the ratios
    ||Y - mean(Y)||_q / (2e sqrt(v) sqrt(q)) for q in {2, 4, 8}; a valid
    proxy keeps these at or below 1 up to sampling noise (informational
    only, no pass/fail flag).
    """
    max_x = float(np.max(np.linalg.norm(data.xs, axis=1)))
    max_y = float(np.max(np.abs(data.ys)))
    # Allow one ulp-scale excursion from the norm computation itself.
    x_ok = max_x <= spec.b_x * (1.0 + 1e-12)
    y_ok = None if spec.b_y is None else max_y <= spec.b_y * (1.0 + 1e-12)

    ratios: dict[int, float] = {}
    v = spec.subgaussian_v()
    if v is not None:
        centered = np.abs(data.ys - data.ys.mean())
        for q in (2, 4, 8):
            emp = float(np.mean(centered**q) ** (1.0 / q))
            ratios[q] = emp / (2.0 * math.e * math.sqrt(v) * math.sqrt(q))
    return AssumptionReport(max_x, max_y, x_ok, y_ok, ratios)


def dataset_to_csv(data: Dataset, path: str | Path) -> Path:
    """Write `x1,...,xd,y` rows with 17 significant digits (exact round trip)."""
    path = Path(path)
    header = ",".join([f"x{i + 1}" for i in range(data.d)] + ["y"])
    lines = [header]
    for i in range(data.n):
        vals = [*data.xs[i], data.ys[i]]
        lines.append(",".join(f"{val:.17g}" for val in vals))
    path.write_text("\n".join(lines) + "\n")
    return path


def dataset_from_csv(path: str | Path) -> Dataset:
    """Read a dataset written by :func:`dataset_to_csv`."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise ValueError("empty dataset file")
    header = lines[0].split(",")
    if header[-1] != "y" or len(header) < 2:
        raise ValueError("malformed dataset header; expected x1,...,xd,y")
    d = len(header) - 1
    rows = [[float(tok) for tok in line.split(",")] for line in lines[1:]]
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != d + 1:
        raise ValueError("malformed dataset rows")
    return Dataset(arr[:, :d], arr[:, d])


def with_noise(spec: DataSpec, noise_scale: float) -> DataSpec:
    """Copy of spec with a different noise scale (convenience for tests)."""
    return replace(spec, noise_scale=noise_scale)
