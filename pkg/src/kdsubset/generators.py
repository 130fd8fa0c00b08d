"""Candidate populations: Sobol' prefixes, the Fibonacci set and IID samples.

Random draws use numpy's ``Generator`` with the PCG64 bit generator, seeded
directly from the integer seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .kernels import BetaProductScore, GaussianMixtureScore, symmetric_mixture_2d
from .pointset import PointSet

__all__ = [
    "ConfigurationError",
    "GeneratorSpec",
    "GOLDEN_RATIO",
    "load_direction_numbers",
    "sobol",
    "fibonacci",
    "sample_iid",
    "generate",
]

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
_BITS = 52
_DEFAULT_TABLE = "new-joe-kuo-6.1000"


class ConfigurationError(ValueError):
    """Invalid generator or experiment configuration."""


@lru_cache(maxsize=4)
def load_direction_numbers(path: str | None = None) -> tuple:
    """Parse a Joe-Kuo direction-number table (columns ``d s a m_1 .. m_s``).

    Returns a tuple indexed by ``dim - 2`` of ``(s, a, (m_1, ..., m_s))``.
    """
    if path is None:
        text = resources.files("kdsubset").joinpath("data", _DEFAULT_TABLE).read_text()
    else:
        text = Path(path).read_text()
    rows = []
    for line in text.splitlines()[1:]:
        parts = line.split()
        if not parts:
            continue
        s, a = int(parts[1]), int(parts[2])
        rows.append((s, a, tuple(int(v) for v in parts[3 : 3 + s])))
    return tuple(rows)


def _direction_vectors(s: int, a: int, m: tuple) -> np.ndarray:
    """Direction numbers ``v_k = m_k 2^(BITS - k)`` for ``k = 1..BITS``."""
    mm = list(m)
    for k in range(s, _BITS):
        new = mm[k - s] ^ (mm[k - s] << s)
        for j in range(1, s):
            if (a >> (s - 1 - j)) & 1:
                new ^= mm[k - j] << j
        mm.append(new)
    return np.array([mm[k] << (_BITS - 1 - k) for k in range(_BITS)], dtype=np.uint64)


def sobol(n: int, d: int, table: str | None = None, skip: int = 0) -> PointSet:
    """First ``n`` points of the Sobol' sequence, origin included.

    Uses Gray-code ordering; point ``i`` is the XOR of the direction vectors
    selected by the bits of ``i ^ (i >> 1)``. ``skip`` drops that many leading
    points (``skip=1`` removes the origin).
    """
    rows = load_direction_numbers(table)
    if d < 1 or d > len(rows) + 1:
        raise ConfigurationError(f"Sobol' dimension must be in [1, {len(rows) + 1}], got {d}")
    if n < 1:
        raise ConfigurationError("need at least one point")
    if skip < 0 or n + skip > 1 << _BITS:
        raise ConfigurationError("prefix too long for the integer precision")
    gray = np.arange(skip, skip + n, dtype=np.uint64)
    gray ^= gray >> np.uint64(1)
    nbits = max(1, int(n + skip - 1).bit_length())
    out = np.empty((n, d))
    for j in range(d):
        if j == 0:
            v = np.array([1 << (_BITS - 1 - k) for k in range(_BITS)], dtype=np.uint64)
        else:
            v = _direction_vectors(*rows[j - 1])
        x = np.zeros(n, dtype=np.uint64)
        for b in range(nbits):
            x ^= np.where((gray >> np.uint64(b)) & np.uint64(1), v[b], np.uint64(0))
        out[:, j] = x.astype(np.float64) / float(1 << _BITS)
    return PointSet(out)


def fibonacci(m: int) -> PointSet:
    """Two-dimensional Fibonacci set ``{(k/m, frac(k * phi)) : k = 0..m-1}``."""
    if m < 1:
        raise ConfigurationError("need at least one point")
    k = np.arange(m, dtype=np.float64)
    return PointSet(np.column_stack([k / m, np.mod(k * GOLDEN_RATIO, 1.0)]))


@dataclass
class GeneratorSpec:
    kind: str
    dim: int = 2
    count: int = 1000
    seed: int = 0
    params: dict = field(default_factory=dict)


def _mixture_from_params(dim: int, params: dict) -> GaussianMixtureScore:
    if not params.get("means"):
        if dim != 2:
            raise ConfigurationError("default mixture is two-dimensional; pass means")
        return symmetric_mixture_2d()
    return GaussianMixtureScore(params["means"], params.get("covs"), params.get("weights"))


def _beta_from_params(dim: int, params: dict) -> BetaProductScore:
    alpha = np.broadcast_to(np.asarray(params.get("alpha", 2.0), dtype=float), (dim,))
    beta = np.broadcast_to(np.asarray(params.get("beta", 4.0), dtype=float), (dim,))
    return BetaProductScore(alpha, beta)


def target_model(kind: str, dim: int, params: dict):
    """Score model for an IID target kind (``iid-gaussian-mixture`` / ``iid-beta-product``)."""
    try:
        if kind in ("iid-gaussian-mixture", "gaussian-mixture", "mixture"):
            return _mixture_from_params(dim, params)
        if kind in ("iid-beta-product", "beta-product", "beta"):
            return _beta_from_params(dim, params)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    raise ConfigurationError(f"no target distribution for kind {kind!r}")


def sample_iid(spec: GeneratorSpec) -> PointSet:
    if spec.count < 1 or spec.dim < 1:
        raise ConfigurationError("count and dim must be positive")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "iid-uniform":
        return PointSet(rng.random((spec.count, spec.dim)))
    model = target_model(spec.kind, spec.dim, spec.params)
    if model.dim != spec.dim:
        raise ConfigurationError(f"distribution is {model.dim}-dimensional, spec says {spec.dim}")
    return PointSet(model.sample(spec.count, rng))


def generate(spec: GeneratorSpec) -> PointSet:
    if spec.kind == "sobol":
        return sobol(
            spec.count, spec.dim, spec.params.get("table"), int(spec.params.get("skip", 0))
        )
    if spec.kind == "fibonacci":
        if spec.dim != 2:
            raise ConfigurationError("the Fibonacci set is two-dimensional")
        return fibonacci(spec.count)
    if spec.kind.startswith("iid-"):
        return sample_iid(spec)
    raise ConfigurationError(f"unknown generator kind {spec.kind!r}")
