"""Small dense linear algebra used throughout the package.

Matrices and vectors are plain float64 numpy arrays.  Everything here is a
pure function; symmetry and positive-semidefiniteness are checked with
relative tolerances (1e-12) because inputs arrive from floating-point
accumulation, never exactly.

Also provides executable forms of two matrix identities (an inverse-
difference factorisation and the operator-norm bound for regularised
PSD inverses) that the test suite exercises as properties.
"""

from __future__ import annotations

import numpy as np

SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-12
SOLVE_RESIDUAL_RTOL = 1e-10

# Inverses are treated as numerically singular past this condition estimate.
MAX_CONDITION = 1e14


def as_vector(v) -> np.ndarray:
    """Validate and return a 1-d float64 vector (dim >= 1, finite)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError(f"expected a vector with dim >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains non-finite entries")
    return arr


def as_square_matrix(m) -> np.ndarray:
    """Validate and return a square 2-d float64 matrix (dim >= 1, finite)."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite entries")
    return arr


def require_symmetric(m: np.ndarray, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Raise unless |m_ij - m_ji| <= rtol * max(1, |m_ij|) for all entries."""
    m = as_square_matrix(m)
    gap = np.abs(m - m.T)
    scale = np.maximum(1.0, np.abs(m))
    if np.any(gap > rtol * scale):
        raise ValueError("matrix is not symmetric within tolerance")
    return m


def require_psd(m: np.ndarray, rtol: float = PSD_RTOL) -> np.ndarray:
    """Raise unless the symmetric matrix m is PSD up to a relative tolerance."""
    m = require_symmetric(m)
    eigs = np.linalg.eigvalsh(0.5 * (m + m.T))
    scale = max(1.0, float(np.max(np.abs(eigs))) if eigs.size else 1.0)
    if float(eigs.min()) < -rtol * scale:
        raise ValueError("matrix is not positive semidefinite within tolerance")
    return m


def solve_regularized(s, lam: float, b) -> np.ndarray:
    """Solve (s + lam*I) v = b for a symmetric PSD matrix s and lam > 0.

    The shifted system is positive definite, so the solve is always
    well posed.  The result is verified to satisfy
    ||(s + lam*I) v - b|| <= 1e-10 * max(1, ||b||).
    """
    s = require_psd(s)
    b = as_vector(b)
    if s.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {s.shape[0]}, vector {b.shape[0]}")
    if not np.isfinite(lam) or lam <= 0.0:
        raise ValueError("lam must be a positive real")

    a = s + lam * np.eye(s.shape[0])
    v = np.linalg.solve(a, b)
    residual = float(np.linalg.norm(a @ v - b))
    if residual > SOLVE_RESIDUAL_RTOL * max(1.0, float(np.linalg.norm(b))):
        raise ArithmeticError(
            f"regularised solve residual {residual:.3e} exceeds tolerance"
        )
    return v


def operator_norm(m, rtol: float = 1e-8, max_iters: int = 500) -> float:
    """Largest singular value of m via power iteration on m.T @ m.

    Uses a fixed all-ones start vector (normalised) so repeated calls are
    bit-reproducible.  Iterates until successive estimates agree below
    1e-12 relative or max_iters is hit; if the iterate collapses into the
    null space, restarts deterministically from basis vectors.
    """
    m = as_square_matrix(m)
    d = m.shape[0]
    gram = m.T @ m

    def iterate(v0: np.ndarray) -> float | None:
        v = v0 / np.linalg.norm(v0)
        est = 0.0
        for _ in range(max_iters):
            w = gram @ v
            norm_w = float(np.linalg.norm(w))
            if norm_w == 0.0:
                return None  # v is in the null space of gram
            new_est = float(v @ w)
            v = w / norm_w
            if abs(new_est - est) <= 1e-12 * max(1.0, abs(new_est)):
                est = new_est
                break
            est = new_est
        return float(np.sqrt(max(est, 0.0)))

    result = iterate(np.ones(d))
    if result is None:
        # All-ones start happened to lie in the null space; try basis vectors.
        best = 0.0
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            r = iterate(e)
            if r is not None:
                best = max(best, r)
        return best
    return result


def _require_invertible(m: np.ndarray, name: str) -> np.ndarray:
    cond = float(np.linalg.cond(m))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ValueError(f"{name} is singular within tolerance (cond ~ {cond:.3e})")
    return np.linalg.inv(m)


def harville_residual(a, b) -> float:
    """Operator-norm residual of the inverse-difference factorisation.

    For invertible a and a + b (with I + b a^-1 invertible too), the
    identity  a^-1 - (a+b)^-1 = a^-1 b a^-1 (I + b a^-1)^-1  holds
    exactly; this returns ||LHS - RHS||_op, which should be ~0 (<= 1e-8
    for well-conditioned inputs).
    """
    a = as_square_matrix(a)
    b = as_square_matrix(b)
    if a.shape != b.shape:
        raise ValueError("a and b must share dimensions")
    d = a.shape[0]

    a_inv = _require_invertible(a, "a")
    apb_inv = _require_invertible(a + b, "a + b")
    middle = np.eye(d) + b @ a_inv
    middle_inv = _require_invertible(middle, "I + b a^-1")

    lhs = a_inv - apb_inv
    rhs = a_inv @ b @ a_inv @ middle_inv
    return operator_norm(lhs - rhs)
