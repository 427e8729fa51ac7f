"""Communication shields: lossy compression, robust aggregation, and
differential privacy for client uploads, plus a fault-injection knob.

Compressors consume a flat float64 vector and produce a CompressedPayload
that knows its own wire size. Byte accounting follows fixed rules:

  dense              8 bytes per coordinate
  sign               1 bit per coordinate (packed) + 8 bytes for the scale
  stochastic-quant   8 bytes for the norm + (1 sign bit + ceil(log2(s+1))
                     level bits) per coordinate, bit-packed
  sparse (topk /     12 bytes per surviving coordinate
  variance-budget)   (4-byte index + 8-byte value)

The stochastic compressors are unbiased: decompressing averages back to
the input in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

Array = np.ndarray


def _flat_vector(g, name: str = "g") -> Array:
    arr = np.asarray(g, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ParameterError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


@dataclass
class CompressedPayload:
    """One compressed vector plus everything needed to rebuild it."""

    kind: str
    size: int
    data: dict = field(repr=False)
    nbytes: int

    def decompress(self) -> Array:
        if self.kind == "dense":
            return self.data["values"].copy()
        if self.kind == "sign":
            bits = np.unpackbits(self.data["bits"], count=self.size)
            return self.data["scale"] * (2.0 * bits - 1.0)
        if self.kind == "stochastic-quant":
            signs = 2.0 * np.unpackbits(self.data["sign_bits"], count=self.size) - 1.0
            return self.data["norm"] * signs * (self.data["levels"] / self.data["s"])
        if self.kind in ("topk", "variance-budget"):
            out = np.zeros(self.size)
            out[self.data["indices"]] = self.data["values"]
            return out
        raise ParameterError(f"unknown payload kind {self.kind!r}")


def dense_payload(g) -> CompressedPayload:
    vec = _flat_vector(g)
    return CompressedPayload(kind="dense", size=vec.size, data={"values": vec.copy()}, nbytes=8 * vec.size)


def sign_compress(g) -> CompressedPayload:
    """One-bit quantization: (||g||_1 / d) * sign(g), with sign(0) = +1."""
    vec = _flat_vector(g)
    scale = float(np.sum(np.abs(vec)) / vec.size)
    bits = (vec >= 0.0).astype(np.uint8)
    return CompressedPayload(
        kind="sign",
        size=vec.size,
        data={"scale": scale, "bits": np.packbits(bits)},
        nbytes=math.ceil(vec.size / 8) + 8,
    )


def stochastic_quantize(g, levels: int, gen: np.random.Generator) -> CompressedPayload:
    """Unbiased quantization onto the grid {0, 1/s, ..., 1} * ||g||_2.

    Each coordinate rounds to one of its two bracketing levels with
    probabilities that preserve the expectation. A zero vector is
    returned exactly.
    """
    s = int(levels)
    if s < 1:
        raise ParameterError(f"levels must be >= 1, got {levels!r}")
    vec = _flat_vector(g)
    norm = float(np.linalg.norm(vec))
    bits_per_level = math.ceil(math.log2(s + 1))
    nbytes = 8 + math.ceil(vec.size * (1 + bits_per_level) / 8)
    if norm == 0.0:
        chosen = np.zeros(vec.size, dtype=np.int64)
        signs = np.ones(vec.size, dtype=np.uint8)
    else:
        scaled = np.abs(vec) / norm * s
        lower = np.floor(scaled)
        frac = scaled - lower
        chosen = (lower + (gen.random(vec.size) < frac)).astype(np.int64)
        signs = (vec >= 0.0).astype(np.uint8)
    return CompressedPayload(
        kind="stochastic-quant",
        size=vec.size,
        data={"norm": norm, "s": s, "levels": chosen, "sign_bits": np.packbits(signs)},
        nbytes=nbytes,
    )


def topk_sparsify(g, k: int) -> CompressedPayload:
    """Keep the k largest-magnitude coordinates; ties go to lower indices."""
    vec = _flat_vector(g)
    kk = int(k)
    if not 1 <= kk <= vec.size:
        raise ParameterError(f"k must lie in [1, {vec.size}], got {k!r}")
    order = np.lexsort((np.arange(vec.size), -np.abs(vec)))
    idx = np.sort(order[:kk])
    return CompressedPayload(
        kind="topk",
        size=vec.size,
        data={"indices": idx, "values": vec[idx].copy()},
        nbytes=12 * kk,
    )


def variance_budget_probabilities(g, budget: float) -> Array:
    """Keep-probabilities of the variance-budget sparsifier.

    Solves min sum p_j subject to sum g_j^2 / p_j = budget with
    0 < p_j <= 1 on the support of g: p_j = min(1, |g_j| / s) with the
    scalar s chosen by bisection (closed form when nothing clamps). Zero
    coordinates get probability 0 and are dropped. budget below
    ||g||_2^2 is infeasible: even keeping everything exceeds the budget.
    """
    vec = _flat_vector(g)
    eps = float(budget)
    if not np.isfinite(eps) or eps <= 0.0:
        raise ParameterError(f"budget must be > 0, got {budget!r}")
    abs_g = np.abs(vec)
    sq = vec * vec
    total_sq = float(np.sum(sq))
    if total_sq == 0.0:
        return np.zeros(vec.size)
    if eps < total_sq - 1e-12 * max(1.0, total_sq):
        raise ParameterError(
            f"budget {eps} is below the no-compression floor ||g||^2 = {total_sq}"
        )
    if eps <= total_sq:
        p = np.zeros(vec.size)
        p[abs_g > 0] = 1.0
        return p

    def constraint(scale: float) -> float:
        p = np.minimum(1.0, abs_g / scale)
        mask = abs_g > 0
        return float(np.sum(sq[mask] / p[mask]))

    top = float(np.max(abs_g))
    candidate = eps / float(np.sum(abs_g))
    if candidate >= top:
        scale = candidate
    else:
        lo, hi = 0.0, top
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == 0.0 or constraint(mid) < eps:
                lo = mid
            else:
                hi = mid
        scale = hi
    p = np.minimum(1.0, abs_g / scale)
    p[abs_g == 0.0] = 0.0
    return p


def variance_budget_sparsify(g, budget: float, gen: np.random.Generator) -> CompressedPayload:
    """Unbiased random sparsification with a second-moment budget.

    Coordinates survive independently with the probabilities from
    variance_budget_probabilities and survivors are rescaled by 1/p so
    the expectation is exact; E||output||^2 equals the budget (when
    feasible with slack).
    """
    vec = _flat_vector(g)
    p = variance_budget_probabilities(vec, budget)
    keep = gen.random(vec.size) < p
    idx = np.flatnonzero(keep)
    values = vec[idx] / p[idx]
    return CompressedPayload(
        kind="variance-budget",
        size=vec.size,
        data={"indices": idx, "values": values},
        nbytes=12 * idx.size,
    )


@dataclass(frozen=True)
class CompressionSpec:
    kind: str = "none"  # none | sign | qsgd | topk | varbudget
    levels: int = 0
    k: int = 0
    budget: float = 0.0


def compress(g, spec: CompressionSpec, gen: np.random.Generator | None = None) -> CompressedPayload:
    """Apply a configured compressor; kind 'none' wraps the vector densely."""
    if spec.kind == "none":
        return dense_payload(g)
    if spec.kind == "sign":
        return sign_compress(g)
    if spec.kind == "qsgd":
        if gen is None:
            raise ParameterError("stochastic quantization needs a random generator")
        return stochastic_quantize(g, spec.levels, gen)
    if spec.kind == "topk":
        return topk_sparsify(g, spec.k)
    if spec.kind == "varbudget":
        if gen is None:
            raise ParameterError("variance-budget sparsification needs a random generator")
        return variance_budget_sparsify(g, spec.budget, gen)
    raise ParameterError(f"unknown compression kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# robust aggregation


def _stack_updates(updates) -> Array:
    mat = np.stack([_flat_vector(u, "update") for u in updates])
    if mat.ndim != 2:
        raise ParameterError("updates must stack into a matrix")
    return mat


def krum_scores(updates, f: int) -> Array:
    """Sum of squared distances to each update's n-f-2 nearest peers."""
    mat = _stack_updates(updates)
    n = mat.shape[0]
    ff = int(f)
    if ff < 0:
        raise ParameterError(f"f must be >= 0, got {f!r}")
    if n < ff + 3:
        raise ParameterError(f"krum needs at least f + 3 = {ff + 3} updates, got {n}")
    closest = n - ff - 2
    sq = np.sum((mat[:, None, :] - mat[None, :, :]) ** 2, axis=2)
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = np.sum(others[:closest])
    return scores


def krum_select(updates, f: int) -> tuple[Array, int]:
    """The update with the smallest Krum score (lowest index on ties)."""
    mat = _stack_updates(updates)
    scores = krum_scores(mat, f)
    winner = int(np.argmin(scores))
    return mat[winner].copy(), winner


def coordinate_median(updates) -> Array:
    """Coordinatewise median; even counts average the two middle values."""
    mat = _stack_updates(updates)
    return np.median(mat, axis=0)


def trimmed_mean(updates, beta: float) -> Array:
    """Coordinatewise mean after dropping floor(beta*n) values at each end."""
    mat = _stack_updates(updates)
    b = float(beta)
    if not 0.0 <= b < 0.5:
        raise ParameterError(f"beta must lie in [0, 0.5), got {beta!r}")
    n = mat.shape[0]
    cut = int(math.floor(b * n))
    if 2 * cut >= n:
        raise ParameterError(f"trimming {cut} from each end empties {n} updates")
    ordered = np.sort(mat, axis=0)
    return np.mean(ordered[cut : n - cut], axis=0)


@dataclass(frozen=True)
class RobustSpec:
    rule: str = "none"  # none | krum | median | tmean
    f: int = 0
    beta: float = 0.0


def robust_aggregate(updates, spec: RobustSpec) -> Array:
    if spec.rule == "krum":
        vec, _ = krum_select(updates, spec.f)
        return vec
    if spec.rule == "median":
        return coordinate_median(updates)
    if spec.rule == "tmean":
        return trimmed_mean(updates, spec.beta)
    raise ParameterError(f"unknown robust rule {spec.rule!r}")


# ---------------------------------------------------------------------------
# differential privacy


@dataclass(frozen=True)
class DpSpec:
    mechanism: str = "none"  # none | laplace | gaussian
    epsilon: float = 0.0
    delta: float = 0.0
    clip: float = 0.0


def clip_norm(v, bound: float, order: int) -> Array:
    """Scale v down so its l1 or l2 norm is at most bound."""
    vec = _flat_vector(v, "v")
    c = float(bound)
    if not np.isfinite(c) or c <= 0.0:
        raise ParameterError(f"clip bound must be > 0, got {bound!r}")
    norm = float(np.sum(np.abs(vec))) if order == 1 else float(np.linalg.norm(vec))
    if norm > c:
        vec = vec * (c / norm)
    return vec


def gaussian_noise_sigma(epsilon: float, delta: float, clip: float) -> float:
    """Classic Gaussian-mechanism scale: clip * sqrt(2 ln(1.25/delta)) / epsilon."""
    if epsilon <= 0.0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon!r}")
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta!r}")
    return clip * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def dp_perturb(update, spec: DpSpec, gen: np.random.Generator) -> Array:
    """Clip then add calibrated noise.

    laplace clips the l1 norm and adds Laplace(clip/epsilon) noise per
    coordinate; gaussian clips the l2 norm and adds Gaussian noise with
    the standard (epsilon, delta) calibration.
    """
    vec = _flat_vector(update, "update")
    if spec.mechanism == "none":
        return vec.copy()
    if spec.mechanism == "laplace":
        if spec.epsilon <= 0.0:
            raise ParameterError(f"epsilon must be > 0, got {spec.epsilon!r}")
        clipped = clip_norm(vec, spec.clip, order=1)
        return clipped + gen.laplace(0.0, spec.clip / spec.epsilon, size=vec.size)
    if spec.mechanism == "gaussian":
        sigma = gaussian_noise_sigma(spec.epsilon, spec.delta, spec.clip)
        clipped = clip_norm(vec, spec.clip, order=2)
        return clipped + gen.normal(0.0, sigma, size=vec.size)
    raise ParameterError(f"unknown dp mechanism {spec.mechanism!r}")


# ---------------------------------------------------------------------------
# fault injection


@dataclass(frozen=True)
class ByzantineSpec:
    """Scale the transmitted payloads of the lowest ``count`` client ids."""

    count: int = 0
    factor: float = 1.0

    def applies_to(self, cid: int) -> bool:
        return cid <= self.count


@dataclass(frozen=True)
class ShieldSpec:
    compression: CompressionSpec = CompressionSpec()
    robust: RobustSpec = RobustSpec()
    dp: DpSpec = DpSpec()
    byzantine: ByzantineSpec = ByzantineSpec()

    @property
    def is_plain(self) -> bool:
        return (
            self.compression.kind == "none"
            and self.robust.rule == "none"
            and self.dp.mechanism == "none"
            and self.byzantine.count == 0
        )
