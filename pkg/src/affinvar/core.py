"""Value types for affine drift/diffusion coefficients and state spaces.

Everything here is an immutable container over float64 numpy arrays plus the
handful of evaluations the rest of the package is built on: affine scalars
``gamma.x + delta``, affine vector fields ``a x + b``, affine symmetric-matrix
fields ``A0 + sum_i A_i x_i``, polyhedra ``{gamma x + delta >= 0}`` and
quadric-bounded sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionMismatchError, NotSymmetricError
from .tolerances import TOL


def _asarray(a, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != ndim:
        raise DimensionMismatchError(f"{name} must have ndim={ndim}, got {arr.ndim}")
    arr.setflags(write=False)
    return arr


def symmetrize(S, rtol: float | None = None) -> np.ndarray:
    """Return (S + S^T)/2 after checking the asymmetry is within tolerance.

    Small asymmetry (I/O rounding) is absorbed; anything larger is rejected so
    that modeling errors do not pass silently.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {S.shape}")
    rtol = TOL.sym_rtol if rtol is None else rtol
    scale = max(1.0, float(np.abs(S).max()) if S.size else 0.0)
    asym = float(np.abs(S - S.T).max()) if S.size else 0.0
    if asym > rtol * scale:
        raise NotSymmetricError(f"matrix asymmetry {asym:.3e} exceeds {rtol:.1e} relative")
    out = 0.5 * (S + S.T)
    out.setflags(write=False)
    return out


def min_eigenvalue(S: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(S)[0])


def is_psd(S: np.ndarray, tol: float | None = None) -> bool:
    """Scale-relative PSD test: min eigenvalue >= -tol * (1 + spectral norm)."""
    tol = TOL.psd if tol is None else tol
    w = np.linalg.eigvalsh(S)
    return bool(w[0] >= -tol * (1.0 + abs(float(w[-1])) + abs(float(w[0]))))


def psd_square_root(S) -> np.ndarray:
    """Symmetric square root |S|^(1/2) = V diag(|lam|^(1/2)) V^T.

    For PSD input this is the unique PSD square root; for indefinite input the
    eigenvalues are replaced by their absolute values, which keeps the map
    total and continuous.  Supports batched input of shape (..., p, p).
    """
    S = np.asarray(S, dtype=float)
    if S.ndim == 2:
        symmetrize(S)  # reject non-symmetric input
    lam, V = np.linalg.eigh(0.5 * (S + np.swapaxes(S, -1, -2)))
    root = np.sqrt(np.abs(lam))
    return (V * root[..., None, :]) @ np.swapaxes(V, -1, -2)


@dataclass(frozen=True)
class AffineScalar:
    """Scalar affine functional x -> gamma.x + delta."""

    gamma: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", _asarray(self.gamma, 1, "gamma"))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        val = x @ self.gamma + self.delta
        return float(val) if val.ndim == 0 else val

    def __neg__(self) -> "AffineScalar":
        return AffineScalar(-self.gamma, -self.delta)

    def coefficients(self) -> np.ndarray:
        """Stacked (gamma, delta) vector, used for coefficient-level identities."""
        return np.concatenate([self.gamma, [self.delta]])


@dataclass(frozen=True)
class AffineVectorField:
    """Vector field x -> a x + b (the drift of an affine SDE)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _asarray(self.a, 2, "a"))
        object.__setattr__(self, "b", _asarray(self.b, 1, "b"))
        if self.a.shape[0] != self.a.shape[1] or self.a.shape[0] != self.b.shape[0]:
            raise DimensionMismatchError(
                f"drift shapes disagree: a {self.a.shape}, b {self.b.shape}")

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.a.T + self.b

    def row_functional(self, gamma: np.ndarray) -> AffineScalar:
        """The scalar functional x -> gamma . (a x + b)."""
        gamma = np.asarray(gamma, dtype=float)
        return AffineScalar(gamma @ self.a, float(gamma @ self.b))


@dataclass(frozen=True)
class AffineMatrixField:
    """Symmetric-matrix field x -> A0 + sum_k A_k x_k.

    ``nvars`` (number of variables) and ``size`` (matrix dimension) may differ;
    the diffusion matrix of a p-dimensional model has both equal to p, while
    the lower-right block of a canonical transform is a field of size p-m-n in
    m+n variables.
    """

    A0: np.ndarray
    A: np.ndarray  # shape (nvars, size, size)

    def __post_init__(self):
        A0 = symmetrize(self.A0)
        mats = [np.asarray(M, dtype=float) for M in self.A]
        if mats:
            A = np.stack([symmetrize(M) for M in mats])
            if A.shape[1:] != A0.shape:
                raise DimensionMismatchError(
                    f"coefficient shapes disagree: A0 {A0.shape}, A {A.shape}")
        else:
            A = np.zeros((0,) + A0.shape)
        A.setflags(write=False)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "A", A)

    @property
    def nvars(self) -> int:
        return self.A.shape[0]

    @property
    def size(self) -> int:
        return self.A0.shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            if x.shape[0] != self.nvars:
                raise DimensionMismatchError(
                    f"point has dimension {x.shape[0]}, field has {self.nvars} variables")
            return self.A0 + np.tensordot(x, self.A, axes=(0, 0))
        return self.A0 + np.tensordot(x, self.A, axes=(-1, 0))

    def row_functionals(self, gamma: np.ndarray) -> list[AffineScalar]:
        """Components of the row x -> gamma . theta(x), each an affine scalar."""
        gamma = np.asarray(gamma, dtype=float)
        const = gamma @ self.A0
        lin = np.einsum("i,kij->jk", gamma, self.A) if self.nvars else \
            np.zeros((self.size, 0))
        return [AffineScalar(lin[j], float(const[j])) for j in range(self.size)]

    def quad_functional(self, gamma: np.ndarray) -> AffineScalar:
        """The scalar x -> gamma . theta(x) . gamma^T."""
        gamma = np.asarray(gamma, dtype=float)
        lin = np.einsum("i,kij,j->k", gamma, self.A, gamma) if self.nvars else \
            np.zeros(0)
        return AffineScalar(lin, float(gamma @ self.A0 @ gamma))

    def congruence(self, L: np.ndarray, ell: np.ndarray) -> "AffineMatrixField":
        """Coefficient-exact congruence y -> L theta(L^-1 (y - ell)) L^T.

        Requires nvars == size (a genuine diffusion matrix field).
        """
        if self.nvars != self.size:
            raise DimensionMismatchError("congruence needs nvars == size")
        L = np.asarray(L, dtype=float)
        ell = np.asarray(ell, dtype=float)
        Minv = np.linalg.inv(L)
        m0 = -Minv @ ell
        base = self.A0 + np.tensordot(m0, self.A, axes=(0, 0))
        newA0 = L @ base @ L.T
        newA = np.einsum("kj,kab->jab", Minv, self.A)
        newA = np.einsum("ia,jab,kb->jik", L, newA, L)
        return AffineMatrixField(0.5 * (newA0 + newA0.T),
                                 0.5 * (newA + np.swapaxes(newA, -1, -2)))


def evaluate_theta(theta: AffineMatrixField, x) -> np.ndarray:
    """Evaluate A0 + sum_k A_k x_k at a point; result is symmetric."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != theta.nvars:
        raise DimensionMismatchError(
            f"point of dimension {x.shape} incompatible with {theta.nvars} variables")
    out = theta(x)
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class Polyhedron:
    """Intersection of half-spaces {x : gamma x + delta >= 0} (componentwise)."""

    gamma: np.ndarray  # (q, p)
    delta: np.ndarray  # (q,)
    minimal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gamma", _asarray(self.gamma, 2, "gamma"))
        object.__setattr__(self, "delta", _asarray(self.delta, 1, "delta"))
        if self.gamma.shape[0] != self.delta.shape[0]:
            raise DimensionMismatchError(
                f"facet counts disagree: gamma {self.gamma.shape}, delta {self.delta.shape}")

    @property
    def n_facets(self) -> int:
        return self.gamma.shape[0]

    @property
    def dim(self) -> int:
        return self.gamma.shape[1]

    def evaluate(self, x) -> np.ndarray:
        """Facet values u(x) = gamma x + delta; batched over leading axes."""
        x = np.asarray(x, dtype=float)
        return x @ self.gamma.T + self.delta

    def contains(self, x, tol: float | None = None) -> bool | np.ndarray:
        tol = TOL.membership if tol is None else tol
        vals = self.evaluate(x)
        return np.all(vals >= -tol, axis=-1)

    def facet(self, i: int) -> AffineScalar:
        return AffineScalar(self.gamma[i], float(self.delta[i]))

    def transformed(self, L: np.ndarray, ell: np.ndarray) -> "Polyhedron":
        """The image L X + ell, with rows gamma L^-1 and offsets delta - gamma L^-1 ell."""
        Minv = np.linalg.inv(np.asarray(L, dtype=float))
        g = self.gamma @ Minv
        d = self.delta - g @ np.asarray(ell, dtype=float)
        return Polyhedron(g, d, minimal=self.minimal)


@dataclass(frozen=True)
class QuadraticForm:
    """Phi(x) = x^T A x + b^T x + c with symmetric nonzero A."""

    A: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "A", symmetrize(self.A))
        object.__setattr__(self, "b", _asarray(self.b, 1, "b"))
        object.__setattr__(self, "c", float(self.c))
        if self.A.shape[0] != self.b.shape[0]:
            raise DimensionMismatchError(
                f"quadric shapes disagree: A {self.A.shape}, b {self.b.shape}")

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        val = np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.b + self.c
        return float(val) if val.ndim == 0 else val

    def gradient(self, x) -> np.ndarray:
        """Row gradient 2 x^T A + b^T."""
        x = np.asarray(x, dtype=float)
        return 2.0 * x @ self.A + self.b


@dataclass(frozen=True)
class QuadraticSpace:
    """State space bounded by a quadric: one side of {Phi = 0}.

    ``component`` selects {Phi > 0} ("positive") or {Phi < 0} ("negative");
    ``closed`` includes the boundary.
    """

    form: QuadraticForm
    component: str = "positive"
    closed: bool = True

    def __post_init__(self):
        if self.component not in ("positive", "negative"):
            raise DimensionMismatchError("component must be 'positive' or 'negative'")

    @property
    def dim(self) -> int:
        return self.form.dim

    def signed_value(self, x) -> float | np.ndarray:
        """Phi with sign flipped so that the state space is {value >= 0}."""
        val = self.form(x)
        return val if self.component == "positive" else -val

    def contains(self, x, tol: float | None = None) -> bool | np.ndarray:
        tol = TOL.membership if tol is None else tol
        val = self.signed_value(x)
        if self.closed:
            return np.asarray(val >= -tol)
        return np.asarray(val > -tol)


StateSpace = Union[Polyhedron, QuadraticSpace]


@dataclass(frozen=True)
class ModelSpec:
    """An affine SDE model: drift mu = a x + b, diffusion theta = A0 + sum A_i x_i,
    and a polyhedral or quadric-bounded state space, all of one dimension."""

    dimension: int
    drift: AffineVectorField
    diffusion: AffineMatrixField
    state_space: StateSpace

    def __post_init__(self):
        p = self.dimension
        if self.drift.dim != p:
            raise DimensionMismatchError(f"drift dimension {self.drift.dim} != {p}")
        if self.diffusion.nvars != p or self.diffusion.size != p:
            raise DimensionMismatchError(
                f"diffusion has {self.diffusion.nvars} vars / size {self.diffusion.size}, want {p}")
        if self.state_space.dim != p:
            raise DimensionMismatchError(
                f"state space dimension {self.state_space.dim} != {p}")

    def theta(self, x) -> np.ndarray:
        return self.diffusion(x)

    def mu(self, x) -> np.ndarray:
        return self.drift(x)


def change_model_coordinates(model: ModelSpec, L: np.ndarray, ell: np.ndarray,
                             new_space: StateSpace) -> ModelSpec:
    """The model seen through y = L x + ell: drift L a L^-1 y + (L b - L a L^-1 ell),
    diffusion by congruence, and the supplied image state space."""
    L = np.asarray(L, dtype=float)
    ell = np.asarray(ell, dtype=float)
    a = L @ model.drift.a @ np.linalg.inv(L)
    b = L @ model.drift.b - a @ ell
    return ModelSpec(model.dimension, AffineVectorField(a, b),
                     model.diffusion.congruence(L, ell), new_space)


def spot_check_psd(model: ModelSpec, points: np.ndarray,
                   tol: float | None = None) -> tuple[bool, float]:
    """Check theta(x) is PSD at each sample point (the X in D containment).

    Returns (all_pass, worst relative min-eigenvalue margin).
    """
    tol = TOL.psd if tol is None else tol
    worst = np.inf
    ok = True
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        S = model.diffusion(x)
        w = np.linalg.eigvalsh(0.5 * (S + S.T))
        scale = 1.0 + abs(float(w[-1])) + abs(float(w[0]))
        margin = float(w[0]) / scale
        worst = min(worst, margin)
        if margin < -tol:
            ok = False
    return ok, worst
