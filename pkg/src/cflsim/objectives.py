"""Quadratic and least-squares objectives.

Convention used throughout the package: a quadratic with matrix A, vector b
and constant c has value w'Aw + b'w + c, gradient 2Aw + b and Hessian 2A.
The factor of two is applied consistently everywhere (the optimum solves
2Aw = -b) and the scalar loss reported for an iterate is the gradient norm
||2Aw + b||.

A least-squares objective over samples (X, y) is the mean squared residual
(1/n) sum_j (x_j'w - y_j)^2. It reduces to the quadratic with
A = (1/n) X'X, b = -(2/n) X'y, c = (1/n) y'y; both evaluation paths are kept
and must agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, UnboundedObjectiveError

# Relative threshold under which an eigenvalue of A counts as zero when
# solving for the optimum.
_NULLSPACE_RTOL = 1e-12
# Absolute tolerance on the component of b outside range(A) before the
# objective is declared unbounded below.
_UNBOUNDED_ATOL = 1e-8


@dataclass(frozen=True)
class QuadraticObjective:
    """Quadratic w'Aw + b'w + c with eigenvalue bounds [mu, lmax] for A."""

    a: np.ndarray
    b: np.ndarray
    c: float
    mu: float
    lmax: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got shape {a.shape}")
        if b.shape != (a.shape[0],):
            raise ValueError(f"b has shape {b.shape}, expected ({a.shape[0]},)")
        if not (np.isfinite(a).all() and np.isfinite(b).all() and np.isfinite(self.c)):
            raise ValueError("objective coefficients must be finite")
        if not np.allclose(a, a.T, atol=1e-10):
            raise ValueError("A must be symmetric")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True)
class SampleSet:
    """Feature matrix (n, d) with one scalar target per row."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"targets have shape {y.shape}, expected ({x.shape[0]},)")
        if x.shape[0] < 1:
            raise ValueError("sample set must contain at least one item")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)

    @property
    def n_items(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LeastSquaresObjective:
    """Mean squared residual objective plus its canonical quadratic form."""

    samples: SampleSet
    quad: QuadraticObjective

    @property
    def dim(self) -> int:
        return self.samples.dim


Objective = Union[QuadraticObjective, LeastSquaresObjective]


def _haar_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    # QR of a Gaussian matrix with the R-diagonal sign fix gives a
    # Haar-distributed orthogonal factor.
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def build_quadratic(
    dim: int,
    mu: float,
    lmax: float,
    seed: "int | np.random.Generator",
) -> QuadraticObjective:
    """Draw a random quadratic with spectrum in [mu, lmax].

    Eigenvalues are uniform on [mu, lmax] with the endpoints pinned: one
    eigenvalue equals mu exactly and one equals lmax exactly, so the stated
    convexity and smoothness bounds are attained. The eigenbasis is a
    Haar-random orthogonal matrix, b is standard normal and c = 0.

    When mu == 0 the pinned flat direction carries no forcing: the component
    of b along it is removed, so the minimum is attained and the gradient
    norm can reach zero. Without this the objective would be unbounded below
    and there would be no optimum to converge to.

    Parameters
    ----------
    dim : problem dimension, at least 2 (1 is allowed only when mu == lmax).
    mu : smallest eigenvalue of A, must satisfy 0 <= mu <= lmax.
    lmax : largest eigenvalue of A.
    seed : int master seed or an existing Generator.
    """
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    if not (np.isfinite(mu) and np.isfinite(lmax)):
        raise ConfigError("mu and lmax must be finite")
    if mu < 0:
        raise ConfigError(f"mu must be >= 0, got {mu}")
    if mu > lmax:
        raise ConfigError(f"mu={mu} exceeds lmax={lmax}")
    if dim == 1 and mu != lmax:
        raise ConfigError("dim=1 cannot pin both spectrum endpoints; use mu == lmax")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lam = rng.uniform(mu, lmax, size=dim)
    lam[0] = mu
    lam[-1] = lmax
    basis = _haar_orthogonal(rng, dim)
    a = basis.T @ (lam[:, None] * basis)
    a = (a + a.T) / 2.0
    b = rng.standard_normal(dim)
    flat = lam == 0.0
    if flat.any():
        rows = basis[flat]
        b = b - rows.T @ (rows @ b)
    return QuadraticObjective(a=a, b=b, c=0.0, mu=float(mu), lmax=float(lmax))


def fit_least_squares(samples: SampleSet) -> LeastSquaresObjective:
    """Reduce a sample set to its canonical quadratic.

    A = (1/n) X'X, b = -(2/n) X'y, c = (1/n) y'y. The eigenvalue bounds are
    taken from the Gram matrix spectrum (clamped at zero against roundoff).
    """
    x, y = samples.features, samples.targets
    n = samples.n_items
    a = x.T @ x / n
    a = (a + a.T) / 2.0
    b = -2.0 * (x.T @ y) / n
    c = float(y @ y) / n
    eigs = np.linalg.eigvalsh(a)
    mu = float(max(eigs[0], 0.0))
    lmax = float(max(eigs[-1], mu))
    quad = QuadraticObjective(a=a, b=b, c=c, mu=mu, lmax=lmax)
    return LeastSquaresObjective(samples=samples, quad=quad)


def canonical_quadratic(obj: Objective) -> QuadraticObjective:
    """Return the quadratic form of any objective variant."""
    if isinstance(obj, QuadraticObjective):
        return obj
    if isinstance(obj, LeastSquaresObjective):
        return obj.quad
    raise TypeError(f"not an objective: {type(obj).__name__}")


def _check_dim(obj: Objective, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (obj.dim,):
        raise ValueError(f"iterate has shape {w.shape}, expected ({obj.dim},)")
    return w


def gradient(obj: Objective, w: np.ndarray) -> np.ndarray:
    """Exact gradient at w.

    Least-squares objectives are evaluated through the residual path
    (2/n) X'(Xw - y) rather than through the fitted quadratic; the two are
    required to agree and tests compare them.
    """
    w = _check_dim(obj, w)
    if isinstance(obj, QuadraticObjective):
        return 2.0 * (obj.a @ w) + obj.b
    x, y = obj.samples.features, obj.samples.targets
    return 2.0 * (x.T @ (x @ w - y)) / obj.samples.n_items


def objective_value(obj: Objective, w: np.ndarray) -> float:
    w = _check_dim(obj, w)
    if isinstance(obj, QuadraticObjective):
        return float(w @ obj.a @ w + obj.b @ w + obj.c)
    r = obj.samples.features @ w - obj.samples.targets
    return float(r @ r) / obj.samples.n_items


def hessian(obj: Objective) -> np.ndarray:
    return 2.0 * canonical_quadratic(obj).a


def loss_metric(obj: Objective, w: np.ndarray) -> float:
    """Scalar progress metric: the gradient norm at w."""
    return float(np.linalg.norm(gradient(obj, w)))


def exact_optimum(obj: Objective) -> np.ndarray:
    """Minimizer of the objective, solving 2Aw = -b.

    For strictly positive definite A this is the unique optimum. For singular
    A the least-norm solution is returned provided b lies in range(A); if b
    has a component along the null space larger than 1e-8 the objective is
    unbounded below and UnboundedObjectiveError is raised.
    """
    quad = canonical_quadratic(obj)
    lam, basis = np.linalg.eigh(quad.a)
    b_modes = basis.T @ quad.b
    zero = np.abs(lam) <= _NULLSPACE_RTOL * max(float(np.abs(lam).max()), 1.0)
    if np.any(np.abs(b_modes[zero]) > _UNBOUNDED_ATOL):
        raise UnboundedObjectiveError(
            "objective is unbounded below: b has a component outside range(A)"
        )
    coeffs = np.zeros_like(b_modes)
    coeffs[~zero] = -b_modes[~zero] / (2.0 * lam[~zero])
    return basis @ coeffs


def flat_direction_component(obj: Objective, v: np.ndarray) -> np.ndarray:
    """Component of v lying in the null space of the objective's Hessian.

    Zero for strictly convex objectives. Used to keep forcing terms inside
    the curved subspace: an objective whose linear term has a piece along a
    flat direction has no minimizer.
    """
    quad = canonical_quadratic(obj)
    v = np.asarray(v, dtype=float)
    if v.shape != (quad.dim,):
        raise ValueError(f"vector has shape {v.shape}, expected ({quad.dim},)")
    lam, basis = np.linalg.eigh(quad.a)
    zero = np.abs(lam) <= _NULLSPACE_RTOL * max(float(np.abs(lam).max()), 1.0)
    if not zero.any():
        return np.zeros(quad.dim)
    rows = basis.T[zero]
    return rows.T @ (rows @ v)
