"""Quadratic state spaces: classification of quadrics into the three canonical
forms, the parabolic and conical kernel bases, diffusion-matrix
decompositions, square roots, and drift admissibility checks.

Polynomial identities are handled at coefficient level throughout: a quadratic
polynomial vanishing on a quadric is a constant multiple of the quadric's
polynomial, so "vanishes on the boundary" reduces to a finite linear solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .core import (AffineMatrixField, AffineVectorField, ModelSpec,
                   QuadraticForm, psd_square_root)
from .errors import (NegativeCError, NotAdmissibleError,
                     NotAdmissibleQuadricError, NotInSpanError,
                     NotNormalizedError, NumericalFailureError,
                     PhiVMismatchError, PreconditionFailedError,
                     PsdConditionFailedError, ZeroQuadraticPartError)
from .polyhedral import check_open_orthant_invariance
from .tolerances import TOL


# ---------------------------------------------------------------------------
# quadratic polynomials at coefficient level
# ---------------------------------------------------------------------------

def _affine_product(c1: float, l1: np.ndarray, c2: float, l2: np.ndarray):
    """(c1 + l1.x)(c2 + l2.x) as (const, lin, quad)."""
    quad = 0.5 * (np.outer(l1, l2) + np.outer(l2, l1))
    return c1 * c2, c1 * l2 + c2 * l1, quad


def _quad_vector(c: float, l: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Monomial coefficient vector [1, x_k, x_k^2, x_k x_l (k<l)]."""
    p = l.shape[0]
    iu, ju = np.triu_indices(p, k=1)
    return np.concatenate([[c], l, np.diagonal(Q), 2.0 * Q[iu, ju]])


def _grad_theta_component(phi: QuadraticForm, theta: AffineMatrixField, j: int):
    """(const, lin, quad) of the j-th entry of grad(Phi)(x) theta(x)."""
    p = phi.dim
    c_out, l_out, Q_out = 0.0, np.zeros(p), np.zeros((p, p))
    for i in range(p):
        ci, li = float(phi.b[i]), 2.0 * phi.A[i]
        cj, lj = float(theta.A0[i, j]), theta.A[:, i, j]
        c, l, Q = _affine_product(ci, li, cj, lj)
        c_out += c
        l_out += l
        Q_out += Q
    return c_out, l_out, Q_out


def verify_theta_zero_lemma(theta: AffineMatrixField) -> bool:
    """True iff all polynomial coefficients of x^T theta(x) vanish.

    By the cancellation lemma for symmetric affine matrix fields this happens
    only when theta is identically zero, which is what makes coefficient-level
    decomposition fits unique.
    """
    p = theta.size
    scale = 1.0 + float(np.abs(theta.A0).max(initial=0.0)) + \
        (float(np.abs(theta.A).max()) if theta.A.size else 0.0)
    for j in range(p):
        # linear coefficients: A0[i, j]
        if float(np.abs(theta.A0[:, j]).max()) > 1e-10 * scale:
            return False
        for i in range(p):
            for k in range(i, p):
                coeff = theta.A[k][i, j] + theta.A[i][k, j] if k != i \
                    else theta.A[i][i, j]
                if abs(coeff) > 1e-10 * scale:
                    return False
    return True


# ---------------------------------------------------------------------------
# quadric classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadricClassification:
    """Canonical form of a quadric under an affine change of coordinates.

    ``kind`` is "parabolic" (y_1 - sum_{i=2}^q y_i^2), "cone"
    (y_1^2 - sum_{i=2}^q y_i^2 + d) or "ellipsoid" (sum_{i=1}^q y_i^2 + d);
    ``sign`` * Phi(x) equals the canonical polynomial at y = T x + t.
    ``admissible`` records whether the §-classification allows the quadric to
    bound an affine-diffusion state space (parabolic, or cone with d = 0).
    """

    kind: str
    q: int
    d: float
    T: np.ndarray
    t: np.ndarray
    sign: int
    admissible: bool

    def to_canonical(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.T.T + self.t

    def canonical_value(self, y) -> float | np.ndarray:
        y = np.asarray(y, dtype=float)
        q = self.q
        if self.kind == "parabolic":
            val = y[..., 0] - np.sum(y[..., 1:q] ** 2, axis=-1)
        elif self.kind == "cone":
            val = y[..., 0] ** 2 - np.sum(y[..., 1:q] ** 2, axis=-1) + self.d
        else:
            val = np.sum(y[..., :q] ** 2, axis=-1) + self.d
        return float(val) if val.ndim == 0 else val


def _sorted_eig(A: np.ndarray):
    lam, V = np.linalg.eigh(A)
    order = np.argsort(-lam, kind="stable")
    lam, V = lam[order], V[:, order]
    for j in range(V.shape[1]):  # deterministic eigenvector signs
        col = V[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
    return lam, V


def classify_quadric(phi: QuadraticForm) -> QuadricClassification:
    """Orthogonal diagonalization plus completion of squares.

    Returns the canonical kind with the affine transform y = T x + t such that
    sign * Phi(x) equals the canonical polynomial at y, exactly at coefficient
    level (verified at random points to 1e-8).
    """
    p = phi.dim
    lam, V = _sorted_eig(phi.A)
    scale_eig = float(np.abs(lam).max())
    if scale_eig <= 1e-14 * (1.0 + float(np.abs(phi.b).max(initial=0.0))):
        raise ZeroQuadraticPartError("quadratic part vanishes")
    nonzero = np.abs(lam) > TOL.eig_zero * scale_eig
    idx_nz = np.nonzero(nonzero)[0]
    idx_z = np.nonzero(~nonzero)[0]
    btil = V.T @ phi.b

    # complete squares along the nonzero directions
    chat = phi.c - float(np.sum(btil[idx_nz] ** 2 / (4.0 * lam[idx_nz])))
    beta = V[:, idx_z] @ btil[idx_z] if idx_z.size else np.zeros(p)
    lin_scale = 1.0 + float(np.abs(phi.b).max(initial=0.0)) + scale_eig
    has_linear = float(np.linalg.norm(beta)) > TOL.eig_zero * lin_scale

    def _square_rows(indices, sign):
        rows, offs = [], []
        for j in indices:
            s = np.sqrt(np.abs(lam[j]))
            rows.append(s * V[:, j])
            offs.append(s * btil[j] / (2.0 * lam[j]))
        return rows, offs

    if has_linear:
        signs = np.sign(lam[idx_nz])
        if np.all(signs < 0):
            sign = 1
        elif np.all(signs > 0):
            sign = -1
        else:
            raise NotAdmissibleQuadricError(
                "mixed quadratic signature with a linear remainder is not one "
                "of the canonical forms")
        q = 1 + idx_nz.size
        rows, offs = _square_rows(idx_nz, sign)
        # remaining flat directions orthogonal to the linear functional
        if idx_z.size:
            Z = V[:, idx_z]
            bnorm = Z.T @ beta
            _, _, Vt = np.linalg.svd(bnorm[None, :])
            W = Z @ Vt[1:].T  # basis of the zero space orthogonal to beta
        else:
            W = np.zeros((p, 0))
        T = np.vstack([sign * beta, np.array(rows),
                       W.T]) if rows else np.vstack([sign * beta, W.T])
        t = np.concatenate([[sign * chat], offs, np.zeros(W.shape[1])])
        cls = QuadricClassification("parabolic", q, 0.0, T, t, sign, q >= 2)
    else:
        n_plus = int(np.sum(lam[idx_nz] > 0))
        n_minus = idx_nz.size - n_plus
        if n_minus == 0:
            kind, sign = "ellipsoid", 1
        elif n_plus == 0:
            kind, sign = "ellipsoid", -1
        elif n_plus == 1:
            kind, sign = "cone", 1
        elif n_minus == 1:
            kind, sign = "cone", -1
        else:
            raise NotAdmissibleQuadricError(
                "quadratic signature (>=2, >=2) is not one of the canonical forms")
        q = idx_nz.size
        if kind == "cone":
            pos = [j for j in idx_nz if sign * lam[j] > 0]
            neg = [j for j in idx_nz if sign * lam[j] < 0]
            order = pos + neg
        else:
            order = list(idx_nz)
        rows, offs = _square_rows(order, sign)
        Z = V[:, idx_z]
        T = np.vstack([np.array(rows), Z.T]) if rows else Z.T
        t = np.concatenate([offs, np.zeros(idx_z.size)])
        d = sign * chat
        admissible = kind == "cone" and abs(d) <= TOL.eig_zero * (1 + abs(chat)) \
            and q >= 2
        if admissible:
            d = 0.0
        cls = QuadricClassification(kind, q, float(d), T, t, sign, admissible)

    _verify_classification(cls, phi)
    return cls


def _verify_classification(cls: QuadricClassification, phi: QuadraticForm,
                           n_points: int = 50) -> None:
    rng = np.random.default_rng(4)
    Tinv = np.linalg.inv(cls.T)
    scale = 1.0 + abs(phi.c) + float(np.abs(phi.b).max(initial=0.0)) + \
        float(np.abs(phi.A).max())
    for _ in range(n_points):
        y = rng.standard_normal(phi.dim)
        x = Tinv @ (y - cls.t)
        resid = abs(cls.sign * phi(x) - cls.canonical_value(y))
        if resid > TOL.fit_residual * scale * (1.0 + float(y @ y)):
            raise NumericalFailureError(
                f"canonical transform residual {resid:.3e} out of tolerance")


# ---------------------------------------------------------------------------
# parabolic basis and decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineColumn:
    """Affine map x -> F0 + F x, a column of one of the kernel bases."""

    F0: np.ndarray
    F: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return self.F0 + np.asarray(x, dtype=float) @ self.F.T

    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.F0, self.F.reshape(-1)])


def zeta_parabolic(p: int, q: int) -> AffineMatrixField:
    """zeta(x) = [[4 x_1, 2 y^T], [2 y, Id]] as a q x q field in p variables."""
    A0 = np.zeros((q, q))
    A0[1:, 1:] = np.eye(q - 1)
    A = np.zeros((p, q, q))
    A[0][0, 0] = 4.0
    for k in range(1, q):
        A[k][0, k] = A[k][k, 0] = 2.0
    return AffineMatrixField(A0, A)


def eta_pairs(q: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(1, q - 1) for j in range(i + 1, q)]


def eta_matrix(x, q: int) -> np.ndarray:
    """eta(x): first row zero, below the rotation columns T_ij(y); shape
    (..., q, (q-1)(q-2)/2)."""
    x = np.asarray(x, dtype=float)
    pairs = eta_pairs(q)
    out = np.zeros(x.shape[:-1] + (q, len(pairs)))
    for col, (i, j) in enumerate(pairs):
        out[..., i, col] = x[..., j]
        out[..., j, col] = -x[..., i]
    return out


def parabolic_basis(p: int, q: int) -> list[AffineColumn]:
    """Basis of the space of affine maps a with (1, -2y^T) a(x) = 0 on the
    parabola {x_1 = y^T y}: the q columns of zeta plus the (q-1)(q-2)/2
    rotation columns of eta."""
    if not 2 <= q <= p:
        raise PreconditionFailedError(f"need 2 <= q <= p, got q={q}, p={p}")
    cols = []
    F = np.zeros((q, p))
    F[0, 0] = 4.0
    for k in range(1, q):
        F[k, k] = 2.0
    cols.append(AffineColumn(np.zeros(q), F))
    for j in range(1, q):
        F = np.zeros((q, p))
        F[0, j] = 2.0
        F0 = np.zeros(q)
        F0[j] = 1.0
        cols.append(AffineColumn(F0, F))
    for (i, j) in eta_pairs(q):
        F = np.zeros((q, p))
        F[i, j] = 1.0
        F[j, i] = -1.0
        cols.append(AffineColumn(np.zeros(q), F))
    return cols


@dataclass(frozen=True)
class ParabolicDecomposition:
    """theta = [[c zeta(x), A(x)], [A(x)^T, B(x)]] with A = zeta A1 + eta A2."""

    c: float
    A1: np.ndarray               # (q, p-q)
    A2: np.ndarray               # ((q-1)(q-2)/2, p-q)
    B: AffineMatrixField         # size p-q, in p variables
    q: int
    p: int

    @property
    def normalized(self) -> bool:
        return abs(self.c - 1.0) <= TOL.feasibility and \
            (self.A1.size == 0 or float(np.abs(self.A1).max()) <= TOL.feasibility)


def parabolic_theta_decompose(theta: AffineMatrixField,
                              q: int) -> ParabolicDecomposition:
    """Solve for the necessary structure of a diffusion matrix on the parabola
    {x_1 >= y^T y} in canonical coordinates.

    The upper-left q x q block must be a nonnegative multiple of zeta and the
    off-diagonal block columns must lie in the span of the zeta and eta
    columns; residuals above tolerance mean the matrix cannot generate an
    affine diffusion on the parabola.
    """
    p = theta.size
    if theta.nvars != p:
        raise PreconditionFailedError("theta must be a full diffusion field")
    if not 2 <= q <= p:
        raise PreconditionFailedError(f"need 2 <= q <= p, got q={q}, p={p}")
    scale = 1.0 + float(np.abs(theta.A0).max()) + float(np.abs(theta.A).max())

    zeta = zeta_parabolic(p, q)
    ul_vec = np.concatenate([theta.A0[:q, :q].reshape(-1),
                             theta.A[:, :q, :q].reshape(-1)])
    z_vec = np.concatenate([zeta.A0.reshape(-1), zeta.A.reshape(-1)])
    c = float(ul_vec @ z_vec / (z_vec @ z_vec))
    resid = float(np.abs(ul_vec - c * z_vec).max())
    if c < -TOL.lam_clip:
        raise NegativeCError(f"upper-left multiple c = {c:.3e} is negative")
    c = max(c, 0.0)

    r = p - q
    basis = parabolic_basis(p, q)
    design = np.stack([col.coefficients() for col in basis], axis=1)
    A1 = np.zeros((q, r))
    A2 = np.zeros((len(eta_pairs(q)), r))
    for l in range(r):
        col_vec = np.concatenate([theta.A0[:q, q + l],
                                  theta.A[:, :q, q + l].T.reshape(-1)])
        coef, *_ = np.linalg.lstsq(design, col_vec, rcond=None)
        resid = max(resid, float(np.abs(design @ coef - col_vec).max()))
        A1[:, l] = coef[:q]
        A2[:, l] = coef[q:]
    if resid > TOL.fit_residual * scale:
        raise NotAdmissibleError(
            f"theta violates the necessary parabolic structure "
            f"(residual {resid:.3e})")
    B = AffineMatrixField(theta.A0[q:, q:], theta.A[:, q:, q:])
    return ParabolicDecomposition(c, A1, A2, B, q, p)


def normalize_parabolic(theta: AffineMatrixField, q: int):
    """Rescale and shear coordinates so the decomposition has c = 1, A1 = 0.

    Returns (transform L, transformed theta, transformed decomposition); the
    state-space parabola {x_1 >= y^T y} is preserved by the transform.
    """
    dec = parabolic_theta_decompose(theta, q)
    r = theta.size - q
    if dec.c <= TOL.lam_clip:
        raise PreconditionFailedError(
            "c = 0: the parabola does not carry the square-root block")
    c = dec.c
    S = np.eye(theta.size)
    S[0, 0] = 1.0 / c
    for k in range(1, q):
        S[k, k] = 1.0 / np.sqrt(c)
    theta1 = theta.congruence(S, np.zeros(theta.size))
    dec1 = parabolic_theta_decompose(theta1, q)
    S2 = np.eye(theta.size)
    if r:
        S2[q:, :q] = -dec1.A1.T
    theta2 = theta1.congruence(S2, np.zeros(theta.size))
    dec2 = parabolic_theta_decompose(theta2, q)
    if not dec2.normalized:
        raise NumericalFailureError("normalization did not reach c=1, A1=0")
    return S2 @ S, theta2, dec2


def check_parabolic_psd_condition(dec: ParabolicDecomposition,
                                  samples: np.ndarray) -> tuple[bool, bool]:
    """The residual-block condition B(x) - A2^T eta(x)^T eta(x) A2 >= 0.

    Returns (passed, structural): structural means B matches the closed form
    (q-2) x_1 A2^T A2 at coefficient level, which implies the condition on the
    whole parabola; otherwise the condition is checked pointwise at the given
    state-space samples.
    """
    if not dec.normalized:
        raise NotNormalizedError("decomposition must have c = 1 and A1 = 0")
    q, p = dec.q, dec.p
    r = p - q
    if r == 0:
        return True, True
    AtA = dec.A2.T @ dec.A2
    target = (q - 2) * AtA
    scale = 1.0 + float(np.abs(target).max()) + float(np.abs(dec.B.A0).max()) \
        + (float(np.abs(dec.B.A).max()) if dec.B.A.size else 0.0)
    structural = float(np.abs(dec.B.A0).max()) <= TOL.feasibility * scale and \
        float(np.abs(dec.B.A[0] - target).max()) <= TOL.feasibility * scale and \
        (dec.B.A[1:].size == 0
         or float(np.abs(dec.B.A[1:]).max()) <= TOL.feasibility * scale)
    if structural:
        return True, True
    for x in np.atleast_2d(np.asarray(samples, dtype=float)):
        eta = eta_matrix(x[:q], q)
        R = dec.B(x) - dec.A2.T @ eta.T @ eta @ dec.A2
        w = np.linalg.eigvalsh(0.5 * (R + R.T))
        if w[0] < -TOL.psd * (1.0 + abs(float(w[-1]))):
            return False, False
    return True, False


def parabolic_square_root(dec: ParabolicDecomposition, check_points=None):
    """sigma(x) = [[xi(x), 0], [A2^T eta(x)^T, rho(x)]] with
    xi = [[2 sqrt|x_1 - y.y|, 2 y^T], [0, Id]] and rho the symmetric root of
    the residual block; sigma sigma^T = theta on the parabola."""
    if not dec.normalized:
        raise NotNormalizedError("decomposition must have c = 1 and A1 = 0")
    q, p = dec.q, dec.p
    r = p - q
    if check_points is not None:
        ok, _ = check_parabolic_psd_condition(dec, check_points)
        if not ok:
            raise PsdConditionFailedError(
                "residual block is not PSD at the supplied points")

    def sigma(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None] if single else x
        nb = xb.shape[0]
        out = np.zeros((nb, p, p))
        y = xb[:, 1:q]
        out[:, 0, 0] = 2.0 * np.sqrt(np.abs(xb[:, 0] - np.sum(y * y, axis=1)))
        out[:, 0, 1:q] = 2.0 * y
        idx = np.arange(1, q)
        out[:, idx, idx] = 1.0
        if r:
            eta = eta_matrix(xb[:, :q], q)
            out[:, q:, :q] = np.einsum("nqe,er->nrq", eta, dec.A2)
            Bx = dec.B(xb)
            resid = Bx - np.einsum("er,nqe,nqf,fs->nrs", dec.A2, eta, eta, dec.A2)
            out[:, q:, q:] = psd_square_root(resid)
        return out[0] if single else out

    return sigma


@dataclass(frozen=True)
class ParabolicDriftReport:
    structure_ok: bool
    psd_ok: bool
    q2_ok: bool
    closed_ok: bool
    closed_margin: float
    open_ok: bool
    open_margin: float
    d: np.ndarray

    @property
    def admissible(self) -> bool:
        return bool(self.structure_ok and self.psd_ok and self.q2_ok
                    and self.closed_ok)


def check_parabolic_drift(drift: AffineVectorField, q: int) -> ParabolicDriftReport:
    """Drift admissibility on the parabola in canonical coordinates (c = 1).

    Verifies the zero pattern of the first q drift rows, positive
    semidefiniteness of a_11 Id - 2 a_QQ, the matching condition on the
    degenerate directions, and the closed- and open-state-space lower bounds
    on b_1 (the open bound is the stochastic-invariance-of-the-interior
    strengthening)."""
    a, b = drift.a, drift.b
    p = drift.dim
    scale = 1.0 + float(np.abs(a).max(initial=0.0)) + float(np.abs(b).max(initial=0.0))
    tol = TOL.feasibility * scale
    structure_ok = True
    if p > q:
        structure_ok &= float(np.abs(a[0, q:]).max(initial=0.0)) <= tol
        structure_ok &= float(np.abs(a[1:q, q:]).max(initial=0.0)) <= tol
    structure_ok &= float(np.abs(a[1:q, 0]).max(initial=0.0)) <= tol

    M = a[0, 0] * np.eye(q - 1) - 2.0 * a[1:q, 1:q]
    Msym = 0.5 * (M + M.T)
    d, O = np.linalg.eigh(Msym)
    psd_ok = bool(d.min(initial=0.0) >= -TOL.psd * scale)
    lin = a[0, 1:q] - 2.0 * b[1:q]
    r = O.T @ lin
    q1 = d > TOL.psd * scale
    q2_ok = bool(np.abs(r[~q1]).max(initial=0.0) <= tol)
    penalty = float(np.sum(r[q1] ** 2 / (4.0 * d[q1]))) if q1.any() else 0.0
    closed_margin = float(b[0] - (q - 1) - penalty)
    open_margin = float(b[0] - (q + 1) - penalty)
    return ParabolicDriftReport(bool(structure_ok), psd_ok, q2_ok,
                                closed_margin >= -tol, closed_margin,
                                open_margin >= -tol, open_margin, d)


# ---------------------------------------------------------------------------
# conical basis and decomposition
# ---------------------------------------------------------------------------

def conical_basis(q: int) -> list[AffineMatrixField]:
    """Basis {zeta, rho(1), ..., rho(q-1)} of the symmetric affine matrix
    fields whose columns are annihilated by (x_1, -y^T) on the cone
    {x_1^2 = y^T y}."""
    if q < 2:
        raise PreconditionFailedError(f"need q >= 2, got {q}")
    out = []
    A = np.zeros((q, q, q))
    A[0] = np.eye(q)
    for k in range(1, q):
        A[k][0, k] = A[k][k, 0] = 1.0
    out.append(AffineMatrixField(np.zeros((q, q)), A))
    for i in range(1, q):
        A = np.zeros((q, q, q))
        A[0][i, 0] = A[0][0, i] = 1.0
        A[i][0, 0] = 1.0
        A[i][i, i] = 1.0
        for j in range(1, q):
            if j != i:
                A[i][j, j] = -1.0
        for k in range(1, q):
            if k != i:
                A[k][i, k] = A[k][k, i] = 1.0
        out.append(AffineMatrixField(np.zeros((q, q)), A))
    return out


@dataclass(frozen=True)
class ConicalDecomposition:
    coeff_zeta: float
    coeff_rho: np.ndarray  # (q-1,)


def conical_theta_decompose(theta: AffineMatrixField, q: int) -> ConicalDecomposition:
    """Least-squares fit of theta in the conical basis; the fit must be exact
    (residual below tolerance) since the basis spans all admissible diffusion
    matrices on the cone.

    Models with extra coordinates beyond the cone (p > q) are rejected: the
    basis lemma does not constrain the off-cone blocks, so only p = q models
    are supported."""
    if theta.size != q or theta.nvars != q:
        raise PreconditionFailedError(
            f"conical models require p = q = {q}; theta has size {theta.size}")
    basis = conical_basis(q)
    design = np.stack(
        [np.concatenate([f.A0.reshape(-1), f.A.reshape(-1)]) for f in basis],
        axis=1)
    target = np.concatenate([theta.A0.reshape(-1), theta.A.reshape(-1)])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = float(np.abs(design @ coef - target).max())
    scale = 1.0 + float(np.abs(target).max())
    if resid > TOL.fit_residual * scale:
        raise NotInSpanError(
            f"theta is not in the span of the conical basis (residual {resid:.3e})")
    return ConicalDecomposition(float(coef[0]), coef[1:])


def cone_square_root(q: int):
    """Closed-form symmetric root |zeta(x)|^(1/2) of the conical diffusion
    zeta(x) = [[x_1, y^T], [y, x_1 Id]].

    zeta has eigenvalues x_1 +- |y| on (1, +-y/|y|)/sqrt(2) and x_1 on the
    orthogonal complement of y inside the y-block, so the root is assembled
    from rank-one projectors without a per-point eigendecomposition.
    """

    def sigma(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None] if single else x
        n = xb.shape[0]
        x1 = xb[:, 0]
        y = xb[:, 1:q]
        r = np.linalg.norm(y, axis=1)
        safe = np.where(r > 0, r, 1.0)
        u = y / safe[:, None]
        sp = np.sqrt(np.abs(x1 + r))
        sm = np.sqrt(np.abs(x1 - r))
        s0 = np.sqrt(np.abs(x1))
        avg = 0.5 * (sp + sm)
        dif = 0.5 * (sp - sm)
        out = np.zeros((n, q, q))
        out[:, 0, 0] = avg
        out[:, 0, 1:] = dif[:, None] * u
        out[:, 1:, 0] = out[:, 0, 1:]
        uu = np.einsum("ni,nj->nij", u, u)
        eye = np.eye(q - 1)
        out[:, 1:, 1:] = avg[:, None, None] * uu + \
            s0[:, None, None] * (eye[None] - uu)
        degenerate = r == 0
        if degenerate.any():
            out[degenerate] = s0[degenerate, None, None] * np.eye(q)[None]
        return out[0] if single else out

    return sigma


@dataclass(frozen=True)
class ConeAdmissibilityReport:
    symmetry_ok: bool
    psd_ok: bool
    drift_margin: float
    drift_ok: bool

    @property
    def admissible(self) -> bool:
        return bool(self.symmetry_ok and self.psd_ok and self.drift_ok)


def check_cone_admissibility(drift: AffineVectorField, p: int,
                             q: int) -> ConeAdmissibilityReport:
    """Conditions for a strong solution on the open cone with theta = zeta:
    a_1Q = a_Q1^T, a_11 Id - a_QQ PSD, and b_1 - p/2 - |b_Q| >= 0."""
    a, b = drift.a, drift.b
    scale = 1.0 + float(np.abs(a).max(initial=0.0)) + float(np.abs(b).max(initial=0.0))
    tol = TOL.feasibility * scale
    sym_ok = bool(np.abs(a[0, 1:q] - a[1:q, 0]).max(initial=0.0) <= tol)
    M = a[0, 0] * np.eye(q - 1) - a[1:q, 1:q]
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    psd_ok = bool(w.min(initial=0.0) >= -TOL.psd * scale)
    margin = float(b[0] - 0.5 * p - np.linalg.norm(b[1:q]))
    return ConeAdmissibilityReport(sym_ok, psd_ok, margin, margin >= -tol)


# ---------------------------------------------------------------------------
# open-set invariance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpenInvarianceReport:
    v: np.ndarray | None
    phiv2_ok: bool
    sampled_only: bool
    min_value: float


def _canonical_parabolic_form(phi: QuadraticForm, p: int) -> int | None:
    """If phi is exactly x_1 - sum_{i=2}^q x_i^2, return q."""
    diag = np.diagonal(phi.A)
    off = phi.A - np.diag(diag)
    if float(np.abs(off).max()) > TOL.feasibility or abs(phi.c) > TOL.feasibility:
        return None
    if abs(phi.b[0] - 1.0) > TOL.feasibility or \
            float(np.abs(phi.b[1:]).max(initial=0.0)) > TOL.feasibility:
        return None
    if abs(diag[0]) > TOL.feasibility:
        return None
    neg = diag[1:] < -0.5
    q = 1 + int(np.sum(neg))
    expected = np.concatenate([[0.0], -np.ones(q - 1), np.zeros(p - q)])
    if float(np.abs(diag - expected).max()) > TOL.feasibility:
        return None
    return q


def _canonical_cone_form(phi: QuadraticForm, p: int) -> int | None:
    """If phi is exactly x_1^2 - sum_{i=2}^q x_i^2, return q."""
    diag = np.diagonal(phi.A)
    off = phi.A - np.diag(diag)
    if float(np.abs(off).max()) > TOL.feasibility or abs(phi.c) > TOL.feasibility \
            or float(np.abs(phi.b).max(initial=0.0)) > TOL.feasibility:
        return None
    if abs(diag[0] - 1.0) > TOL.feasibility:
        return None
    q = 1 + int(np.sum(diag[1:] < -0.5))
    expected = np.concatenate([[1.0], -np.ones(q - 1), np.zeros(p - q)])
    if float(np.abs(diag - expected).max()) > TOL.feasibility:
        return None
    return q


def check_open_invariance_general(phi, model: ModelSpec) -> OpenInvarianceReport:
    """Sufficient conditions for invariance of the open component of {Phi > 0}.

    First verifies at coefficient level that grad(Phi) theta = Phi v^T for a
    constant vector v (raising PhiVMismatchError otherwise); then checks
    grad(Phi) (mu - half column-sum correction) >= 0 on the state space, by
    the closed-form parabolic/conical reductions when the model is in those
    canonical forms, by the orthant condition for the determinant functional
    of the canonical diagonal model, and by a seeded low-discrepancy grid
    otherwise (flagged sampled-only)."""
    theta = model.diffusion
    p = model.dimension
    correction = 0.5 * np.array([theta.A[i][:, i] for i in range(p)]).sum(axis=0)

    if isinstance(phi, str) and phi == "det":
        # canonical diagonal model: Phi = x_1 ... x_p, grad(Phi) theta = Phi 1^T
        expected = np.stack([np.outer(np.eye(p)[i], np.eye(p)[i]) for i in range(p)])
        if float(np.abs(theta.A0).max()) > TOL.feasibility or \
                float(np.abs(theta.A - expected).max()) > TOL.feasibility:
            raise PreconditionFailedError(
                "determinant functional needs the canonical diagonal model")
        flags = check_open_orthant_invariance(model.drift)
        return OpenInvarianceReport(np.ones(p), bool(flags.all()), False,
                                    float(model.drift.b.min() - 0.5))

    if not isinstance(phi, QuadraticForm):
        raise PreconditionFailedError("phi must be a QuadraticForm or 'det'")

    # fit grad(Phi) theta = Phi v^T at coefficient level
    phi_vec = _quad_vector(phi.c, phi.b, phi.A)
    denom = float(phi_vec @ phi_vec)
    v = np.zeros(p)
    scale = 1.0 + float(np.abs(theta.A0).max()) + \
        (float(np.abs(theta.A).max()) if theta.A.size else 0.0)
    scale *= 1.0 + float(np.abs(phi.A).max()) + float(np.abs(phi.b).max(initial=0.0))
    for j in range(p):
        comp_vec = _quad_vector(*_grad_theta_component(phi, theta, j))
        v[j] = float(comp_vec @ phi_vec) / denom
        resid = float(np.abs(comp_vec - v[j] * phi_vec).max())
        if resid > TOL.psd * scale:
            raise PhiVMismatchError(
                f"grad(Phi) theta is not a constant multiple of Phi in "
                f"component {j} (residual {resid:.3e})")

    qpar = _canonical_parabolic_form(phi, p)
    if qpar is not None and qpar >= 2:
        rep = check_parabolic_drift(model.drift, qpar)
        return OpenInvarianceReport(v, rep.structure_ok and rep.psd_ok and
                                    rep.q2_ok and rep.open_ok, False,
                                    rep.open_margin)
    qcone = _canonical_cone_form(phi, p)
    if qcone is not None and qcone == p:
        rep = check_cone_admissibility(model.drift, p, qcone)
        return OpenInvarianceReport(v, rep.admissible, False, rep.drift_margin)

    # sampled fallback on a deterministic low-discrepancy grid
    sampler = qmc.Halton(d=p, seed=0)
    pts = 20.0 * sampler.random(10_000) - 10.0
    inside = model.state_space.contains(pts, tol=TOL.membership)
    pts = pts[np.asarray(inside)]
    if pts.shape[0] == 0:
        return OpenInvarianceReport(v, False, True, float("nan"))
    grad = phi.gradient(pts)
    w = np.einsum("ni,ni->n", grad, model.drift(pts) - correction)
    mn = float(w.min())
    return OpenInvarianceReport(v, mn >= -TOL.sampled_min, True, mn)


# ---------------------------------------------------------------------------
# kernel-dimension diagnostics (the basis lemmas, checked numerically)
# ---------------------------------------------------------------------------

def _quad_dim(p: int) -> int:
    return 1 + p + p * (p + 1) // 2


def _project_out(rows: np.ndarray, gen: np.ndarray) -> np.ndarray:
    gen = gen / np.linalg.norm(gen)
    return rows - np.outer(rows @ gen, gen)


def parabolic_kernel_dimension(p: int, q: int) -> int:
    """Numeric dimension of {a affine : (1, -2y^T) a(x) = 0 on the parabola},
    computed as the nullity of the coefficient operator modulo the parabola
    polynomial."""
    ncols = q * (p + 1)
    cols = []
    for idx in range(ncols):
        F0 = np.zeros(q)
        F = np.zeros((q, p))
        if idx < q:
            F0[idx] = 1.0
        else:
            k, var = divmod(idx - q, p)
            F[k, var] = 1.0
        c_out, l_out, Q_out = 0.0, np.zeros(p), np.zeros((p, p))
        # (1, -2y^T) a(x) = a_0(x) - 2 sum_k x_k a_k(x)
        c_out += F0[0]
        l_out += F[0]
        for k in range(1, q):
            ek = np.zeros(p)
            ek[k] = 1.0
            c, l, Q = _affine_product(0.0, ek, float(F0[k]), F[k])
            c_out += -2.0 * c
            l_out += -2.0 * l
            Q_out += -2.0 * Q
        cols.append(_quad_vector(c_out, l_out, Q_out))
    M = np.stack(cols, axis=1)
    gen = np.zeros(p)
    gen[0] = 1.0
    Qg = np.zeros((p, p))
    Qg[np.arange(1, q), np.arange(1, q)] = -1.0
    g = _quad_vector(0.0, gen, Qg)
    Mproj = _project_out(M.T, g).T
    rank = int(np.linalg.matrix_rank(Mproj, tol=TOL.fit_residual))
    return ncols - rank


def conical_space_dimension(q: int) -> int:
    """Numeric dimension of the space of symmetric affine matrix fields whose
    columns are annihilated by (x_1, -y^T) on the cone."""
    pairs = [(i, j) for i in range(q) for j in range(i, q)]
    nvar = (q + 1) * len(pairs)
    Qg = np.zeros((q, q))
    Qg[0, 0] = 1.0
    Qg[np.arange(1, q), np.arange(1, q)] = -1.0
    g = _quad_vector(0.0, np.zeros(q), Qg)
    gunit = g / np.linalg.norm(g)
    cols = []
    for idx in range(nvar):
        k, pos = divmod(idx, len(pairs))
        i, j = pairs[pos]
        A0 = np.zeros((q, q))
        A = np.zeros((q, q, q))
        if k == 0:
            A0[i, j] = A0[j, i] = 1.0
        else:
            A[k - 1][i, j] = A[k - 1][j, i] = 1.0
        comp_vecs = []
        row_lin = np.zeros((q, q))  # (x_1, -y): component r has linear coeff e_r*sign
        row_lin[0, 0] = 1.0
        for r in range(1, q):
            row_lin[r, r] = -1.0
        for col in range(q):
            c_out, l_out, Q_out = 0.0, np.zeros(q), np.zeros((q, q))
            for r in range(q):
                centry = float(A0[r, col])
                lentry = A[:, r, col]
                c, l, Q = _affine_product(0.0, row_lin[r], centry, lentry)
                c_out += c
                l_out += l
                Q_out += Q
            vecc = _quad_vector(c_out, l_out, Q_out)
            comp_vecs.append(vecc - (vecc @ gunit) * gunit)
        cols.append(np.concatenate(comp_vecs))
    M = np.stack(cols, axis=1)
    rank = int(np.linalg.matrix_rank(M, tol=TOL.fit_residual))
    return nvar - rank


def theta_cancellation_nullspace_dimension(p: int) -> int:
    """Numeric nullspace dimension of {coefficients of x^T theta(x)} = 0 over
    symmetric affine theta; the cancellation lemma says it is zero."""
    pairs = [(i, j) for i in range(p) for j in range(i, p)]
    nvar = (p + 1) * len(pairs)
    cols = []
    for idx in range(nvar):
        k, pos = divmod(idx, len(pairs))
        i, j = pairs[pos]
        A0 = np.zeros((p, p))
        A = np.zeros((p, p, p))
        if k == 0:
            A0[i, j] = A0[j, i] = 1.0
        else:
            A[k - 1][i, j] = A[k - 1][j, i] = 1.0
        comp = []
        for col in range(p):
            c_out, l_out, Q_out = 0.0, np.zeros(p), np.zeros((p, p))
            for r in range(p):
                er = np.zeros(p)
                er[r] = 1.0
                c, l, Q = _affine_product(0.0, er, float(A0[r, col]), A[:, r, col])
                c_out += c
                l_out += l
                Q_out += Q
            comp.append(_quad_vector(c_out, l_out, Q_out))
        cols.append(np.concatenate(comp))
    M = np.stack(cols, axis=1)
    rank = int(np.linalg.matrix_rank(M, tol=TOL.fit_residual))
    return nvar - rank


def excluded_quadric_forces_zero(p: int, d: float) -> bool:
    """For Phi = sum x_i^2 + d with d != 0: the only symmetric affine theta
    with x^T theta(x) = Phi(x) c^T for some constant vector c is theta = 0.
    Returns True when the numeric nullspace of the combined linear system is
    trivial."""
    pairs = [(i, j) for i in range(p) for j in range(i, p)]
    nv_theta = (p + 1) * len(pairs)
    nvar = nv_theta + p
    phi_vec = _quad_vector(float(d), np.zeros(p), np.eye(p))
    cols = []
    for idx in range(nvar):
        comp = []
        if idx < nv_theta:
            k, pos = divmod(idx, len(pairs))
            i, j = pairs[pos]
            A0 = np.zeros((p, p))
            A = np.zeros((p, p, p))
            if k == 0:
                A0[i, j] = A0[j, i] = 1.0
            else:
                A[k - 1][i, j] = A[k - 1][j, i] = 1.0
            for col in range(p):
                c_out, l_out, Q_out = 0.0, np.zeros(p), np.zeros((p, p))
                for r in range(p):
                    er = np.zeros(p)
                    er[r] = 1.0
                    c, l, Q = _affine_product(0.0, er, float(A0[r, col]), A[:, r, col])
                    c_out += c
                    l_out += l
                    Q_out += Q
                comp.append(_quad_vector(c_out, l_out, Q_out))
        else:
            j = idx - nv_theta
            for col in range(p):
                comp.append(-phi_vec if col == j else np.zeros_like(phi_vec))
        cols.append(np.concatenate(comp))
    M = np.stack(cols, axis=1)
    rank = int(np.linalg.matrix_rank(M, tol=TOL.fit_residual))
    return rank == nvar
