r"""Discrepancy kernels and target score models.

Every kernel exposes the three ingredients of a squared kernel discrepancy

.. math::
    D^2(P) = k_{F,F} - \frac{2}{n}\sum_i k_F(x_i) + \frac{1}{n^2}\sum_{i,j} k(x_i, x_j)

through ``gram`` (pairwise ``k``), ``kF`` (one-point integral) and ``kFF``
(constant). Kernels work on *features*: ``featurize`` validates points and, for
the Stein kernel, appends the score so that it is computed once per point.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from .pointset import DomainError, PointSet, as_array

__all__ = [
    "StarKernel",
    "WeightedStarKernel",
    "SteinKernel",
    "ScoreModel",
    "GaussianMixtureScore",
    "BetaProductScore",
    "symmetric_mixture_2d",
    "beta_product_2d",
    "star_k",
    "star_kF",
    "star_c",
    "wstar_k",
    "wstar_kF",
    "wstar_c",
    "score",
    "stein_k0",
    "median_bandwidth",
]

# rows * cols * d budget for one block of a pairwise evaluation
_BLOCK_ELEMENTS = 1 << 22


def _check_dim(x: np.ndarray, d: int) -> None:
    if x.shape[-1] != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {x.shape[-1]}")


def _check_unit_cube(X: np.ndarray) -> None:
    if not np.all((X >= 0.0) & (X <= 1.0)):
        raise DomainError("uniform-target kernels require coordinates in [0, 1]")


def _row_blocks(na: int, nb: int, d: int):
    step = max(1, _BLOCK_ELEMENTS // max(1, nb * d))
    for start in range(0, na, step):
        yield slice(start, min(na, start + step))


class _Kernel:
    family = ""
    dim: int | None = None

    def featurize(self, X) -> np.ndarray:
        raise NotImplementedError

    def gram(self, FA: np.ndarray, FB: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def diag(self, FA: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def kF(self, FA: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def kFF(self) -> float:
        raise NotImplementedError

    def resolve(self, d: int) -> "_Kernel":
        """Return a copy bound to dimension ``d`` (no-op when already bound)."""
        return self

    def pairwise(self, X, Y) -> np.ndarray:
        """Kernel matrix between raw point arrays."""
        return self.gram(self.featurize(X), self.featurize(Y))

    def points(self, F: np.ndarray) -> np.ndarray:
        return F


class StarKernel(_Kernel):
    """Kernel of the classical L2 star discrepancy, ``prod_j (1 - max(x_j, y_j))``."""

    family = "star"

    def __init__(self, dim: int | None = None):
        self.dim = dim

    def resolve(self, d):
        return StarKernel(d)

    def featurize(self, X):
        X = as_array(X)
        if self.dim is not None:
            _check_dim(X, self.dim)
        _check_unit_cube(X)
        return X

    def gram(self, FA, FB):
        K = np.ones((FA.shape[0], FB.shape[0]))
        for j in range(FA.shape[1]):
            K *= 1.0 - np.maximum.outer(FA[:, j], FB[:, j])
        return K

    def diag(self, FA):
        return np.prod(1.0 - FA, axis=1)

    def kF(self, FA):
        return np.prod((1.0 - FA**2) / 2.0, axis=1)

    @property
    def kFF(self):
        if self.dim is None:
            raise ValueError("kernel dimension not bound; call resolve(d)")
        return star_c(self.dim)

    def __repr__(self):
        return f"StarKernel(dim={self.dim})"


class WeightedStarKernel(_Kernel):
    """Product-weighted star kernel ``prod_j (1 + gamma_j (1 - max(x_j, y_j)))``."""

    family = "weighted-star"

    def __init__(self, gammas: Sequence[float] | float = 1.0, dim: int | None = None):
        g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise ValueError("weights gamma_j must be positive and finite")
        if g.size == 1 and dim is not None:
            g = np.full(dim, g[0])
        elif dim is not None and g.size != dim:
            raise ValueError(f"expected {dim} weights, got {g.size}")
        self._scalar = g.size == 1 and dim is None
        self.gammas = g
        self.dim = None if self._scalar else g.size

    def resolve(self, d):
        if self._scalar:
            return WeightedStarKernel(self.gammas[0], dim=d)
        return self

    def featurize(self, X):
        X = as_array(X)
        if self._scalar:
            raise ValueError("kernel dimension not bound; call resolve(d)")
        _check_dim(X, self.dim)
        _check_unit_cube(X)
        return X

    def gram(self, FA, FB):
        K = np.ones((FA.shape[0], FB.shape[0]))
        for j in range(FA.shape[1]):
            K *= 1.0 + self.gammas[j] * (1.0 - np.maximum.outer(FA[:, j], FB[:, j]))
        return K

    def diag(self, FA):
        return np.prod(1.0 + self.gammas * (1.0 - FA), axis=1)

    def kF(self, FA):
        return np.prod(1.0 + self.gammas * (1.0 - FA**2) / 2.0, axis=1)

    @property
    def kFF(self):
        return wstar_c(self.gammas)

    def __repr__(self):
        return f"WeightedStarKernel(gammas={self.gammas.tolist()})"


# ---------------------------------------------------------------------------
# score models


class ScoreModel:
    family = ""
    dim: int

    def score(self, X) -> np.ndarray:
        raise NotImplementedError

    def score_jacobian(self, X) -> np.ndarray:
        """Hessian of ``log q`` at each row of ``X``, shape ``(n, d, d)``."""
        raise NotImplementedError

    def log_density(self, X) -> np.ndarray:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def in_support(self, X) -> np.ndarray:
        X = as_array(X)
        return np.ones(X.shape[0], dtype=bool)


class GaussianMixtureScore(ScoreModel):
    """Finite mixture of multivariate normals."""

    family = "gaussian-mixture"

    def __init__(self, means, covs=None, weights=None):
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        ncomp, d = means.shape
        if covs is None:
            covs = np.broadcast_to(np.eye(d), (ncomp, d, d))
        covs = np.asarray(covs, dtype=np.float64).reshape(ncomp, d, d)
        if weights is None:
            weights = np.full(ncomp, 1.0 / ncomp)
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.size != ncomp or np.any(weights <= 0):
            raise ValueError("mixture weights must be positive, one per component")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        chol = []
        for c in covs:
            if not np.allclose(c, c.T, rtol=0, atol=1e-12):
                raise ValueError("covariance matrices must be symmetric")
            try:
                chol.append(np.linalg.cholesky(c))
            except np.linalg.LinAlgError:
                raise ValueError("covariance matrices must be positive definite") from None
        self.dim = d
        self.means = means
        self.covs = np.array(covs)
        self.weights = weights
        self._chol = np.array(chol)
        self._prec = np.array([np.linalg.inv(c) for c in covs])
        self._logw_norm = (
            np.log(weights)
            - 0.5 * d * math.log(2 * math.pi)
            - np.sum(np.log(np.diagonal(self._chol, axis1=1, axis2=2)), axis=1)
        )

    def _parts(self, X):
        X = as_array(X)
        _check_dim(X, self.dim)
        diff = self.means[None, :, :] - X[:, None, :]  # (n, c, d)
        u = np.einsum("cij,ncj->nci", self._prec, diff)  # precision @ (mu - x)
        quad = np.einsum("nci,nci->nc", diff, u)
        logp = self._logw_norm[None, :] - 0.5 * quad
        return u, logp

    def log_density(self, X):
        _, logp = self._parts(X)
        return logsumexp(logp, axis=1)

    def score(self, X):
        u, logp = self._parts(X)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        return np.einsum("nc,nci->ni", resp, u)

    def score_jacobian(self, X):
        u, logp = self._parts(X)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        s = np.einsum("nc,nci->ni", resp, u)
        J = -np.einsum("nc,cij->nij", resp, self._prec)
        J += np.einsum("nc,nci,ncj->nij", resp, u, u)
        J -= s[:, :, None] * s[:, None, :]
        return J

    def sample(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], z)

    def __repr__(self):
        return f"GaussianMixtureScore(components={len(self.weights)}, dim={self.dim})"


class BetaProductScore(ScoreModel):
    """Product of independent Beta marginals on the open unit cube."""

    family = "beta-product"

    def __init__(self, alpha, beta):
        a = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
        b = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        a, b = np.broadcast_arrays(a, b)
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("Beta shape parameters must be positive")
        self.alpha = a.copy()
        self.beta = b.copy()
        self.dim = a.size

    def in_support(self, X):
        X = as_array(X)
        return np.all((X > 0.0) & (X < 1.0), axis=1)

    def _checked(self, X):
        X = as_array(X)
        _check_dim(X, self.dim)
        if not np.all(self.in_support(X)):
            raise DomainError("Beta-product score is defined only on the open cube (0, 1)^d")
        return X

    def log_density(self, X):
        from scipy.special import betaln

        X = self._checked(X)
        return np.sum(
            (self.alpha - 1) * np.log(X)
            + (self.beta - 1) * np.log1p(-X)
            - betaln(self.alpha, self.beta),
            axis=1,
        )

    def score(self, X):
        X = self._checked(X)
        return (self.alpha - 1) / X - (self.beta - 1) / (1.0 - X)

    def score_jacobian(self, X):
        X = self._checked(X)
        diag = -(self.alpha - 1) / X**2 - (self.beta - 1) / (1.0 - X) ** 2
        J = np.zeros((X.shape[0], self.dim, self.dim))
        idx = np.arange(self.dim)
        J[:, idx, idx] = diag
        return J

    def sample(self, n, rng):
        return rng.beta(self.alpha, self.beta, size=(n, self.dim))

    def __repr__(self):
        return f"BetaProductScore(alpha={self.alpha.tolist()}, beta={self.beta.tolist()})"


def symmetric_mixture_2d() -> GaussianMixtureScore:
    """Equal-weight mixture of N((-1.5, 0), I) and N((1.5, 0), I)."""
    return GaussianMixtureScore([[-1.5, 0.0], [1.5, 0.0]])


def beta_product_2d() -> BetaProductScore:
    """Beta(2, 4) x Beta(2, 4)."""
    return BetaProductScore([2.0, 2.0], [4.0, 4.0])


# ---------------------------------------------------------------------------
# Stein kernel


class SteinKernel(_Kernel):
    """Langevin Stein kernel built on the RBF base kernel ``exp(-|x-y|^2 / 2h^2)``.

    Features are ``[x, s(x)]`` so the score is evaluated once per point.
    ``kF`` vanishes identically and ``kFF`` is zero.
    """

    family = "stein"

    def __init__(self, score_model: ScoreModel, bandwidth: float):
        if not (bandwidth > 0 and np.isfinite(bandwidth)):
            raise ValueError("bandwidth must be positive")
        self.score_model = score_model
        self.bandwidth = float(bandwidth)
        self.dim = score_model.dim

    def featurize(self, X):
        X = as_array(X)
        _check_dim(X, self.dim)
        return np.hstack([X, self.score_model.score(X)])

    def points(self, F):
        return F[:, : self.dim]

    def gram(self, FA, FB):
        d = self.dim
        h2 = self.bandwidth**2
        A, SA = FA[:, :d], FA[:, d:]
        B, SB = FB[:, :d], FB[:, d:]
        out = np.empty((A.shape[0], B.shape[0]))
        for rows in _row_blocks(A.shape[0], B.shape[0], d):
            R = A[rows, None, :] - B[None, :, :]
            r2 = np.sum(R * R, axis=2)
            cross = np.sum(R * (SA[rows, None, :] - SB[None, :, :]), axis=2)
            ss = np.sum(SA[rows, None, :] * SB[None, :, :], axis=2)
            k = np.exp(-r2 / (2.0 * h2))
            out[rows] = k * (d / h2 - r2 / h2**2 + cross / h2 + ss)
        return out

    def diag(self, FA):
        S = FA[:, self.dim :]
        return self.dim / self.bandwidth**2 + np.sum(S * S, axis=1)

    def kF(self, FA):
        return np.zeros(FA.shape[0])

    @property
    def kFF(self):
        return 0.0

    def grad_x(self, X, Y, SY=None) -> np.ndarray:
        """Gradient of ``k0(x, y)`` in ``x`` for rows ``x`` of ``X`` and ``y`` of ``Y``.

        Returns shape ``(len(X), len(Y), d)``; needs the score Jacobian.
        """
        X = as_array(X)
        Y = as_array(Y)
        if SY is None:
            SY = self.score_model.score(Y)
        d = self.dim
        h2 = self.bandwidth**2
        SX = self.score_model.score(X)
        J = self.score_model.score_jacobian(X)
        R = X[:, None, :] - Y[None, :, :]
        r2 = np.sum(R * R, axis=2)
        k = np.exp(-r2 / (2.0 * h2))
        ds = SX[:, None, :] - SY[None, :, :]
        A = d / h2 - r2 / h2**2 + np.sum(R * ds, axis=2) / h2 + (SX @ SY.T)
        gradA = (
            -2.0 * R / h2**2
            + (ds + np.einsum("rnd,rde->rne", R, J)) / h2
            + np.einsum("nd,rde->rne", SY, J)
        )
        return k[:, :, None] * (gradA - A[:, :, None] * R / h2)

    def grad_diag(self, X) -> np.ndarray:
        """Gradient of ``k0(x, x) = d/h^2 + |s(x)|^2`` at each row of ``X``."""
        X = as_array(X)
        SX = self.score_model.score(X)
        J = self.score_model.score_jacobian(X)
        return 2.0 * np.einsum("rde,re->rd", J, SX)

    def __repr__(self):
        return f"SteinKernel({self.score_model!r}, h={self.bandwidth:.6g})"


# ---------------------------------------------------------------------------
# single-point helpers


def _point(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=np.float64))


def star_k(x, y) -> float:
    x, y = _point(x), _point(y)
    _check_dim(y, x.size)
    return float(np.prod(1.0 - np.maximum(x, y)))


def star_kF(x) -> float:
    x = _point(x)
    return float(np.prod((1.0 - x**2) / 2.0))


def star_c(d: int) -> float:
    return 3.0 ** (-d)


def wstar_k(x, y, gammas) -> float:
    x, y = _point(x), _point(y)
    g = np.broadcast_to(_point(gammas), x.shape)
    _check_dim(y, x.size)
    return float(np.prod(1.0 + g * (1.0 - np.maximum(x, y))))


def wstar_kF(x, gammas) -> float:
    x = _point(x)
    g = np.broadcast_to(_point(gammas), x.shape)
    return float(np.prod(1.0 + g * (1.0 - x**2) / 2.0))


def wstar_c(gammas) -> float:
    return float(np.prod(1.0 + _point(gammas) / 3.0))


def score(model: ScoreModel, x) -> np.ndarray:
    """Score ``grad log q`` at a single point."""
    return model.score(_point(x)[None, :])[0]


def stein_k0(x, y, h: float, s: ScoreModel) -> float:
    K = SteinKernel(s, h)
    return float(K.pairwise(_point(x)[None, :], _point(y)[None, :])[0, 0])


def median_bandwidth(P, N: int | None = None) -> float:
    """Median-heuristic RBF bandwidth ``sqrt(med^2 / (2 ln(N + 1)))``.

    ``med`` is the median pairwise Euclidean distance of ``P``. ``N`` defaults
    to the number of points in ``P``.
    """
    X = as_array(P)
    if X.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    med = float(np.median(pdist(X)))
    if med == 0.0:
        raise ValueError("degenerate point set: all points identical")
    if N is None:
        N = X.shape[0]
    return math.sqrt(med**2 / (2.0 * math.log(N + 1)))
