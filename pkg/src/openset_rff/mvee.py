"""Minimum-volume enclosing ellipsoids and delta-shell outlier sampling.

An ellipsoid is stored as {z : ||A z + b|| <= 1} with A symmetric positive
definite. ``fit_mvee`` solves the log-det problem through its dual with
Khachiyan's barycentric coordinate ascent, plus Todd-Yildirim away steps so
that interior points are dropped from the support quickly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegeneratePointCloud, MveeNotConverged

log = logging.getLogger(__name__)

MAX_ITER = 100_000
DEFAULT_TOL = 1e-5
DELTA_GRID = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
_REG = 1e-9
_REFRESH = 256


@dataclass(frozen=True)
class Ellipsoid:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.size:
            raise ConfigError(f"ellipsoid shapes do not match: A {A.shape}, b {b.shape}")
        if not np.allclose(A, A.T, atol=1e-10 * max(1.0, np.abs(A).max())):
            raise ConfigError("ellipsoid matrix A must be symmetric")
        if np.linalg.eigvalsh(A).min() <= 1e-8:
            raise ConfigError("ellipsoid matrix A must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.b.size

    @property
    def center(self) -> np.ndarray:
        return -np.linalg.solve(self.A, self.b)

    def log_volume(self) -> float:
        """log det A^{-1}; the volume up to the unit-ball constant."""
        return -np.linalg.slogdet(self.A)[1]

    def contains(self, z, tol: float = 0.0) -> np.ndarray:
        return mahalanobis_norm(self, z) <= 1.0 + tol


@dataclass(frozen=True)
class ShellConfig:
    delta: float
    count: int

    def __post_init__(self):
        if not 0.0 < self.delta <= 10.0:
            raise ConfigError(f"delta must lie in (0, 10], got {self.delta}")
        if self.count < 0:
            raise ConfigError("count must be >= 0")


@dataclass
class KhachiyanResult:
    weights: np.ndarray
    iterations: int
    eps: float
    log_dets: list[float] = field(default_factory=list)


def mahalanobis_norm(e: Ellipsoid, z) -> np.ndarray | float:
    """||A z + b||_2 for a single point or each row of a point matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != e.dim:
        raise ConfigError(f"point dimension {z.shape[-1]} != ellipsoid dimension {e.dim}")
    out = np.linalg.norm(z @ e.A.T + e.b, axis=-1)
    return float(out) if out.ndim == 0 else out


def _check_points(points) -> np.ndarray:
    Z = np.asarray(points, dtype=np.float64)
    if Z.ndim != 2:
        raise ConfigError("points must be an (m, n) array")
    m, n = Z.shape
    if not np.all(np.isfinite(Z)):
        raise ConfigError("points must be finite")
    rank = np.linalg.matrix_rank(Z - Z.mean(axis=0)) if m > 1 else 0
    if m < n + 1 or rank < n:
        raise DegeneratePointCloud(rank, n)
    return Z


def khachiyan(points, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER, track: bool = False) -> KhachiyanResult:
    """Maximize log det(sum_i u_i q_i q_i^T) over the simplex, q_i = [z_i; 1].

    Stops once max_i M_i <= d (1 + tol) and min over the support of M_i >= d (1 - tol),
    where M_i = q_i^T X(u)^{-1} q_i and d = n + 1.
    """
    Z = _check_points(points)
    m, n = Z.shape
    d = n + 1
    # conditioning only; Khachiyan iterates are affine invariant
    mu, sd = Z.mean(axis=0), Z.std(axis=0)
    sd[sd == 0] = 1.0
    Q = np.hstack([(Z - mu) / sd, np.ones((m, 1))])
    u = np.full(m, 1.0 / m)

    def refresh(u):
        X = (Q * u[:, None]).T @ Q
        Xinv = np.linalg.inv(X)
        M = np.einsum("ij,jk,ik->i", Q, Xinv, Q)
        return Xinv, M, np.linalg.slogdet(X)[1]

    Xinv, M, logdet = refresh(u)
    log_dets = [logdet] if track else []
    eps = np.inf
    for it in range(1, max_iter + 1):
        j = int(np.argmax(M))
        eps_plus = M[j] / d - 1.0
        support = u > 0
        i = int(np.flatnonzero(support)[np.argmin(M[support])])
        eps_minus = 1.0 - M[i] / d
        eps = max(eps_plus, eps_minus)
        if eps <= tol:
            return KhachiyanResult(u, it - 1, eps_plus, log_dets)

        if eps_plus >= eps_minus:
            k = j
            alpha = (M[k] - d) / (d * (M[k] - 1.0))
        else:
            k = i
            cap = u[k] / (1.0 - u[k])
            alpha = -cap if M[k] - 1.0 <= 1e-12 else max((M[k] - d) / (d * (M[k] - 1.0)), -cap)

        w = Xinv @ Q[k]
        v = Q @ w
        denom = 1.0 - alpha + alpha * M[k]
        Xinv = (Xinv - (alpha / denom) * np.outer(w, w)) / (1.0 - alpha)
        M = (M - (alpha / denom) * v**2) / (1.0 - alpha)
        logdet += (d - 1) * np.log1p(-alpha) + np.log(denom)
        u *= 1.0 - alpha
        u[k] += alpha
        if u[k] < 1e-14 and alpha < 0:
            u[k] = 0.0

        if it % _REFRESH == 0:
            u = np.clip(u, 0.0, None)
            u /= u.sum()
            Xinv, M, logdet = refresh(u)
        if track:
            log_dets.append(logdet)
    raise MveeNotConverged(eps, max_iter)


def fit_mvee(points, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> Ellipsoid:
    """Minimum-volume ellipsoid containing every point (to within ``tol``)."""
    if not 0.0 < tol <= 1e-2:
        raise ConfigError(f"tol must lie in (0, 1e-2], got {tol}")
    Z = _check_points(points)
    n = Z.shape[1]
    res = khachiyan(Z, tol, max_iter)
    u = res.weights
    c = u @ Z
    S = (Z * u[:, None]).T @ Z - np.outer(c, c)
    S = (S + S.T) / 2 + _REG * np.eye(n)
    evals, evecs = np.linalg.eigh(S)
    # A = (S^{-1} / n)^{1/2}
    A = (evecs / np.sqrt(n * evals)) @ evecs.T
    A = (A + A.T) / 2
    b = -A @ c
    worst = np.linalg.norm(Z @ A.T + b, axis=1).max()
    if worst > 1.0:
        # the dual stop leaves a sub-tol violation; shrinking the map restores exact containment
        A, b = A / worst, b / worst
    log.debug("mvee: %d points in %d dims, %d iterations, eps %.2e", len(Z), n, res.iterations, res.eps)
    return Ellipsoid(A, b)


def sample_shell(e: Ellipsoid, s: ShellConfig, seed: int | np.random.Generator = 0) -> np.ndarray:
    """``s.count`` points with 1 < ||A z + b|| <= 1 + delta, volume-uniform in the mapped space."""
    rng = np.random.default_rng(seed)
    n = e.dim
    if s.count == 0:
        return np.zeros((0, n))
    Ainv = np.linalg.inv(e.A)
    log_top = n * np.log1p(s.delta)
    out = np.empty((0, n))
    while len(out) < s.count:
        k = s.count - len(out)
        g = rng.standard_normal((k, n))
        direction = g / np.linalg.norm(g, axis=1, keepdims=True)
        uni = 1.0 - rng.random(k)  # (0, 1]
        r = np.exp(np.log1p(uni * np.expm1(log_top)) / n)
        z = (r[:, None] * direction - e.b) @ Ainv.T
        # rounding in the back-map can push a point across a boundary; resample those
        norms = mahalanobis_norm(e, z)
        ok = (norms > 1.0) & (norms <= 1.0 + s.delta)
        out = np.vstack([out, z[ok]])
    return out


@dataclass
class ShellOutliers:
    samples: np.ndarray
    ellipsoid: Ellipsoid | None
    latent: np.ndarray
    authorized_latent: np.ndarray


def generate_ellipsoidal_outliers(ae, X, delta: float, count: int = 7500, seed: int = 0, tol: float = DEFAULT_TOL) -> ShellOutliers:
    """Encode X, fit its MVEE in latent space, sample the delta-shell, decode."""
    from . import generative

    shell = ShellConfig(delta, count)
    ZX = generative.encode(ae, X)
    if count == 0:
        return ShellOutliers(np.zeros((0, 256, 2), np.float32), None, np.zeros((0, ae.latent_dim)), ZX)
    e = fit_mvee(ZX, tol)
    z = sample_shell(e, shell, seed)
    return ShellOutliers(generative.decode(ae, z), e, z, ZX)
