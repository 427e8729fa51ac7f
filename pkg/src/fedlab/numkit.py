"""Dense numeric kernels: proximal maps, SVD, and Bregman distances.

Everything operates on plain ``numpy.ndarray`` values with float64 dtype.
Public entry points validate finiteness so NaN/Inf never propagates
silently into a solver loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError, ParameterError

Array = np.ndarray


def _as_float_array(x, name: str, ndim: int | None = None) -> Array:
    """Coerce to a float64 array and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ParameterError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def _positive_scalar(value, name: str) -> float:
    v = float(value)
    if not np.isfinite(v) or v <= 0.0:
        raise ParameterError(f"{name} must be a positive finite scalar, got {value!r}")
    return v


def _nonnegative_scalar(value, name: str) -> float:
    v = float(value)
    if not np.isfinite(v) or v < 0.0:
        raise ParameterError(f"{name} must be a nonnegative finite scalar, got {value!r}")
    return v


def soft_threshold_l1(v, tau) -> Array:
    """Entrywise soft threshold: sign(v) * max(|v| - tau, 0).

    This is the proximal map of tau * ||.||_1 and shrinks every entry
    toward zero by tau, zeroing whatever falls inside [-tau, tau].
    """
    arr = _as_float_array(v, "v")
    t = _nonnegative_scalar(tau, "tau")
    return np.sign(arr) * np.maximum(np.abs(arr) - t, 0.0)


def row_group_shrink(u, tau) -> Array:
    """Row-wise group shrinkage, the proximal map of tau * sum_i ||row_i||_2.

    Each row is scaled by max(1 - tau / ||row||_2, 0); rows with norm at
    most tau collapse to zero, and zero rows stay zero.
    """
    mat = _as_float_array(u, "u", ndim=2)
    t = _nonnegative_scalar(tau, "tau")
    norms = np.linalg.norm(mat, axis=1)
    scale = np.zeros_like(norms)
    nonzero = norms > 0.0
    scale[nonzero] = np.maximum(1.0 - t / norms[nonzero], 0.0)
    return mat * scale[:, None]


@dataclass(frozen=True)
class SvdResult:
    """Thin singular value decomposition A = U @ diag(sigma) @ V.T.

    ``u`` is (r, k), ``sigma`` is (k,) in descending order, ``v`` is (c, k),
    with k = min(r, c); both factor matrices have orthonormal columns.
    """

    u: Array
    sigma: Array
    v: Array


def svd(a) -> SvdResult:
    """Thin SVD with descending singular values.

    Raises NumericalError (with norm diagnostics) if the underlying
    factorization fails to converge.
    """
    mat = _as_float_array(a, "a", ndim=2)
    if mat.shape[0] == 0 or mat.shape[1] == 0:
        raise ParameterError(f"a must be nonempty, got shape {mat.shape}")
    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "singular value decomposition did not converge "
            f"(shape {mat.shape}, frobenius norm {np.linalg.norm(mat):.6e}, "
            f"max entry {np.max(np.abs(mat)):.6e})"
        ) from exc
    return SvdResult(u=u, sigma=s, v=vh.T)


def svt(a, tau) -> Array:
    """Singular value thresholding, the proximal map of tau * ||.||_*.

    Computes svd(a), soft thresholds the spectrum, and recomposes.
    """
    t = _nonnegative_scalar(tau, "tau")
    res = svd(a)
    shrunk = np.maximum(res.sigma - t, 0.0)
    return (res.u * shrunk) @ res.v.T


def nuclear_norm(a) -> float:
    """Sum of singular values."""
    return float(np.sum(svd(a).sigma))


_BREGMAN_GENERATORS = ("squared-euclidean", "negative-entropy")


def bregman_distance(x, y, generator: str = "squared-euclidean") -> float:
    """Bregman distance D_h(x, y) = h(x) - h(y) - <grad h(y), x - y>.

    Generators:
      squared-euclidean  h(x) = 0.5 ||x||^2; D = 0.5 ||x - y||^2.
      negative-entropy   h(x) = sum x log x; D = sum x log(x / y) - sum x + sum y,
                         defined only for strictly positive points.
    """
    xa = _as_float_array(x, "x")
    ya = _as_float_array(y, "y")
    if xa.shape != ya.shape:
        raise ParameterError(f"x and y must share a shape, got {xa.shape} vs {ya.shape}")
    if generator == "squared-euclidean":
        diff = xa - ya
        return 0.5 * float(np.dot(diff.ravel(), diff.ravel()))
    if generator == "negative-entropy":
        if np.any(xa <= 0.0) or np.any(ya <= 0.0):
            raise DomainError("negative-entropy distance requires strictly positive entries")
        return float(np.sum(xa * np.log(xa / ya)) - np.sum(xa) + np.sum(ya))
    raise ParameterError(
        f"unknown generator {generator!r}; expected one of {_BREGMAN_GENERATORS}"
    )
