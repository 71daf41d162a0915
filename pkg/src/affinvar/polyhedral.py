"""Polyhedral state spaces: admissibility, canonical transform, square roots,
PSD facet decompositions, diagonalization by dimension extension, and the
classical square-root-diffusion model checks.

The boundary conditions checked here are the exact invariance conditions for
an affine SDE on a polyhedron: on every facet segment the diffusion row
``gamma_i theta(.)`` must vanish and the drift component ``gamma_i mu(.)`` must
be nonnegative.  Both are certified through the LP oracles in ``convex``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _minimize

from .convex import (FarkasCertificate, _detect_facet_multiple_unchecked,
                     chebyshev_radius, facet_relative_decompose,
                     farkas_decompose, interior_point, minimalize)
from .core import (AffineMatrixField, AffineScalar, AffineVectorField,
                   ModelSpec, Polyhedron, change_model_coordinates,
                   psd_square_root, symmetrize)
from .errors import (InteriorEmptyError, ModelInconsistencyError,
                     NotAdmissibleError, NotNonnegativeError,
                     NotNonnegativeOnFacetError, NotRepresentableError,
                     NumericalFailureError, PreconditionFailedError,
                     RankDeficiencyError)
from .tolerances import TOL


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FacetCheck:
    index: int
    diffusion_ok: bool
    coupling_row: np.ndarray | None       # B_i with gamma_i theta(.) = B_i u_i(.)
    diffusion_multiple: float | None      # c_i = B_i gamma_i^T (must be >= 0)
    drift_ok: bool
    drift_certificate: FarkasCertificate | None
    witness: np.ndarray | None
    message: str = ""


@dataclass(frozen=True)
class AdmissibilityReport:
    facets: list[FacetCheck]
    interior: np.ndarray
    polyhedron: Polyhedron

    @property
    def admissible(self) -> bool:
        return all(f.diffusion_ok and f.drift_ok for f in self.facets)


def _require_polyhedron(model: ModelSpec) -> Polyhedron:
    if not isinstance(model.state_space, Polyhedron):
        raise PreconditionFailedError("model state space is not polyhedral")
    poly = model.state_space
    return poly if poly.minimal else minimalize(poly)


def _facet_coupling_row(theta: AffineMatrixField, poly: Polyhedron,
                        i: int) -> np.ndarray | None:
    """B_i with gamma_i theta(.) = B_i u_i(.) coefficientwise, or None.

    Callers have already established a nonempty interior, which is what makes
    the componentwise facet-multiple detection conclusive.
    """
    row = np.empty(theta.size)
    for j, comp in enumerate(theta.row_functionals(poly.gamma[i])):
        lam = _detect_facet_multiple_unchecked(comp, poly, i)
        if lam is None:
            return None
        row[j] = lam
    return row


def check_polyhedral_admissibility(model: ModelSpec) -> AdmissibilityReport:
    """Facet-by-facet invariance conditions for a polyhedral state space.

    For each facet: (a) the row gamma_i theta(.) vanishes on the facet segment
    (every component is a multiple of u_i, and the quadratic multiple
    c_i = B_i gamma_i^T is nonnegative); (b) gamma_i mu(.) is nonnegative on
    the facet segment, certified by a facet-relative Farkas decomposition.
    """
    poly = _require_polyhedron(model)
    x0 = interior_point(poly)
    if x0 is None:
        raise InteriorEmptyError("polyhedron has empty interior")
    checks = []
    for i in range(poly.n_facets):
        B_i = _facet_coupling_row(model.diffusion, poly, i)
        c_i = None
        diffusion_ok = B_i is not None
        msg = ""
        if diffusion_ok:
            c_i = float(B_i @ poly.gamma[i])
            if c_i < -TOL.psd * (1.0 + abs(c_i)):
                diffusion_ok = False
                msg = "negative diffusion multiple on facet"
        else:
            msg = "diffusion row does not vanish on facet segment"
        cert = None
        witness = None
        drift_ok = True
        try:
            cert = facet_relative_decompose(
                model.drift.row_functional(poly.gamma[i]), poly, i)
        except NotNonnegativeOnFacetError as exc:
            drift_ok = False
            witness = exc.witness
            msg = (msg + "; " if msg else "") + "drift points outward on facet"
        checks.append(FacetCheck(i, diffusion_ok, B_i, c_i, drift_ok, cert,
                                 witness, msg))
    return AdmissibilityReport(checks, x0, poly)


# ---------------------------------------------------------------------------
# canonical transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CanonicalTransform:
    """Affine change of coordinates y = L x + ell block-diagonalizing theta.

    In the new coordinates theta becomes
    ``[[diag(y_1..y_m, 0_n), 0], [0, Psi(y_1..y_{m+n})]]`` and the state space
    becomes R^m_{>=0} x C x R^{p-m-n}.  ``facet_order`` maps positions in the
    transformed facet list back to original facet indices; ``facet_scale``
    holds the positive rescaling applied to each facet functional.
    """

    L: np.ndarray
    ell: np.ndarray
    m: int
    n: int
    psi: AffineMatrixField        # field of size p-m-n in m+n variables
    B: np.ndarray                 # (q, p) coupling rows, original facet order
    facet_order: np.ndarray       # permutation of original facet indices
    facet_scale: np.ndarray       # positive scale per original facet
    polyhedron: Polyhedron        # minimalized source polyhedron

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    def to_canonical(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.L.T + self.ell

    def from_canonical(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.ell) @ np.linalg.inv(self.L).T

    def block_matrix(self, y) -> np.ndarray:
        """The claimed block form [[diag(y_M, 0_N), 0], [0, Psi(y_{M u N})]]."""
        y = np.asarray(y, dtype=float)
        p, m, n = self.dim, self.m, self.n
        out = np.zeros((p, p))
        out[np.arange(m), np.arange(m)] = y[:m]
        if p > m + n:
            out[m + n:, m + n:] = self.psi(y[:m + n])
        return out

    def transformed_polyhedron(self) -> Polyhedron:
        poly = self.polyhedron
        g = poly.gamma * self.facet_scale[:, None]
        d = poly.delta * self.facet_scale
        reordered = Polyhedron(g[self.facet_order], d[self.facet_order],
                               minimal=poly.minimal)
        return reordered.transformed(self.L, self.ell)


def _rank(mat: np.ndarray) -> int:
    if mat.size == 0:
        return 0
    return int(np.linalg.matrix_rank(mat))


def _null_space_rows(mat: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of the row space,
    with a fixed sign convention (first significant entry positive)."""
    if mat.size == 0:
        return np.eye(dim)
    _, s, Vt = np.linalg.svd(mat)
    r = int(np.sum(s > max(mat.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    rows = Vt[r:].copy()
    for k in range(rows.shape[0]):
        nz = np.nonzero(np.abs(rows[k]) > 1e-12)[0]
        if nz.size and rows[k, nz[0]] < 0:
            rows[k] = -rows[k]
    return rows


def canonical_transform(model: ModelSpec) -> CanonicalTransform:
    """Construct the block-diagonalizing transform of the diffusion matrix.

    Requires the facet diffusion condition (every row gamma_i theta(.)
    vanishes on its facet segment); raises NotAdmissibleError otherwise.  The
    construction follows the coupling rows B_i = u_i(x0)^-1 gamma_i theta(x0)
    at the Chebyshev center x0, rescales the square-root facets so that
    B_i gamma_i^T = 1, completes the facet rows to a nonsingular matrix, and
    fits the lower-right block Psi as an affine function of the facet values.
    """
    poly = _require_polyhedron(model)
    theta = model.diffusion
    p, q = model.dimension, poly.n_facets
    x0 = interior_point(poly)
    if x0 is None:
        raise InteriorEmptyError("polyhedron has empty interior")

    for i in range(q):
        if _facet_coupling_row(theta, poly, i) is None:
            raise NotAdmissibleError(
                f"diffusion condition fails on facet {i}: gamma_i theta(.) "
                "does not vanish on the facet segment")

    theta0 = symmetrize(theta(x0))
    u0 = poly.evaluate(x0)
    B = (poly.gamma @ theta0) / u0[:, None]
    scale = 1.0 + float(np.linalg.norm(theta0))
    M = [i for i in range(q) if np.linalg.norm(B[i]) > TOL.zero_row * scale]

    facet_scale = np.ones(q)
    for i in M:
        c_i = float(B[i] @ poly.gamma[i])
        if c_i <= 0:
            raise NotAdmissibleError(
                f"facet {i} has nonpositive diffusion multiple {c_i:.3e}")
        facet_scale[i] = 1.0 / c_i
    gamma_s = poly.gamma * facet_scale[:, None]
    delta_s = poly.delta * facet_scale

    target = _rank(gamma_s)
    N: list[int] = []
    current = gamma_s[M]
    for i in range(q):
        if i in M:
            continue
        trial = np.vstack([current, gamma_s[i]]) if current.size else gamma_s[i][None]
        if _rank(trial) > _rank(current):
            N.append(i)
            current = trial
        if _rank(current) == target:
            break
    m, n = len(M), len(N)

    eta = _null_space_rows(np.vstack([B[M], gamma_s[N]]) if (m + n) else
                           np.zeros((0, p)), p)
    if eta.shape[0] != p - m - n:
        raise RankDeficiencyError(
            f"complement has dimension {eta.shape[0]}, expected {p - m - n}")
    L = np.vstack([gamma_s[M], gamma_s[N], eta]) if (m + n) else eta
    if abs(np.linalg.det(L)) <= 1e-12 * max(1.0, np.linalg.norm(L) ** p):
        raise RankDeficiencyError("assembled transform is singular")
    ell = np.concatenate([delta_s[M], delta_s[N], np.zeros(p - m - n)])

    order = np.array(M + N + [i for i in range(q) if i not in M and i not in N],
                     dtype=int)

    psi = _fit_psi(theta, poly, gamma_s, delta_s, order[:m + n], eta, x0)

    ct = CanonicalTransform(L, ell, m, n, psi, B, order, facet_scale, poly)
    _verify_block_identity(ct, theta)
    return ct


def _fit_psi(theta, poly, gamma_s, delta_s, mn_idx, eta, x0) -> AffineMatrixField:
    """Least-squares fit of eta theta(x) eta^T as an affine function of the
    facet values u_{M u N}(x), over affinely independent interior samples."""
    p = theta.size
    r = eta.shape[0]
    k = len(mn_idx)
    if r == 0:
        return AffineMatrixField(np.zeros((0, 0)), np.zeros((k, 0, 0)))
    radius = max(chebyshev_radius(poly), 10 * TOL.interior_slack)
    rng = np.random.default_rng(0)
    points = [x0]
    for idx in mn_idx:
        d = gamma_s[idx] / np.linalg.norm(gamma_s[idx])
        points.append(x0 + 0.5 * radius * d)
    for _ in range(2 * k + 8):
        d = rng.standard_normal(p)
        points.append(x0 + 0.5 * radius * d / np.linalg.norm(d))
    pts = np.array(points)
    uvals = pts @ gamma_s[mn_idx].T + delta_s[mn_idx] if k else np.zeros((len(pts), 0))
    targets = np.array([eta @ symmetrize(theta(x)) @ eta.T for x in pts])
    design = np.hstack([np.ones((len(pts), 1)), uvals])
    coef, *_ = np.linalg.lstsq(design, targets.reshape(len(pts), -1), rcond=None)
    pred = design @ coef
    scale = 1.0 + float(np.abs(targets).max()) if targets.size else 1.0
    resid = float(np.abs(pred - targets.reshape(len(pts), -1)).max()) if targets.size else 0.0
    if resid > TOL.fit_residual * scale:
        raise ModelInconsistencyError(
            f"lower-right block is not a function of the facet values "
            f"(residual {resid:.3e}); the state space is not contained in the "
            "PSD region of the diffusion")
    A0 = coef[0].reshape(r, r)
    A = coef[1:].reshape(k, r, r)
    return AffineMatrixField(0.5 * (A0 + A0.T), 0.5 * (A + np.swapaxes(A, 1, 2)))


def _verify_block_identity(ct: CanonicalTransform, theta: AffineMatrixField,
                           n_points: int = 100) -> None:
    canon = theta.congruence(ct.L, ct.ell)
    rng = np.random.default_rng(1)
    y0 = ct.to_canonical(interior_point(ct.polyhedron))
    worst = 0.0
    for _ in range(n_points):
        y = y0 + rng.standard_normal(ct.dim)
        diff = canon(y) - ct.block_matrix(y)
        worst = max(worst, float(np.abs(diff).max()))
    scale = 1.0 + float(np.abs(theta.A0).max()) + \
        (float(np.abs(theta.A).max()) if theta.A.size else 0.0)
    if worst > TOL.block_identity * scale:
        raise RankDeficiencyError(
            f"block identity residual {worst:.3e} exceeds tolerance; "
            "internal inconsistency in the canonical construction")


def transform_model(model: ModelSpec, ct: CanonicalTransform) -> ModelSpec:
    """The model in canonical coordinates y = L x + ell."""
    return change_model_coordinates(model, ct.L, ct.ell,
                                    ct.transformed_polyhedron())


def build_square_root(ct: CanonicalTransform):
    """Evaluator y -> sigma(y) in canonical coordinates.

    Upper-left block diag(sqrt(|y_M|), 0_N), lower-right block the symmetric
    square root |Psi(y_{M u N})|^(1/2).  Accepts a single point (p,) or a batch
    (N, p) and returns (p, p) or (N, p, p).
    """
    m, n = ct.m, ct.n
    p = ct.dim
    r = p - m - n
    psi = ct.psi

    def sigma(y):
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        ybatch = y[None] if single else y
        out = np.zeros(ybatch.shape[:-1] + (p, p))
        idx = np.arange(m)
        out[..., idx, idx] = np.sqrt(np.abs(ybatch[..., :m]))
        if r:
            out[..., m + n:, m + n:] = psd_square_root(psi(ybatch[..., :m + n]))
        return out[0] if single else out

    return sigma


# ---------------------------------------------------------------------------
# lifted drift
# ---------------------------------------------------------------------------

def lift_drift(model: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Matrices (a_bar, b_bar) with gamma mu(x) = a_bar u(x) + b_bar, a_bar
    having nonnegative off-diagonal entries and b_bar nonnegative.

    Assembled facet-by-facet from the facet-relative Farkas certificates of
    the drift condition; raises NotAdmissibleError when one fails.
    """
    poly = _require_polyhedron(model)
    q = poly.n_facets
    a_bar = np.zeros((q, q))
    b_bar = np.zeros(q)
    for i in range(q):
        try:
            cert = facet_relative_decompose(
                model.drift.row_functional(poly.gamma[i]), poly, i)
        except NotNonnegativeOnFacetError as exc:
            raise NotAdmissibleError(
                f"drift condition fails on facet {i}") from exc
        a_bar[i] = cert.lam
        b_bar[i] = cert.c
    lhs_lin = poly.gamma @ model.drift.a
    lhs_const = poly.gamma @ model.drift.b
    rhs_lin = a_bar @ poly.gamma
    rhs_const = a_bar @ poly.delta + b_bar
    scale = 1.0 + float(np.abs(lhs_lin).max(initial=0.0)) + \
        float(np.abs(lhs_const).max(initial=0.0))
    resid = max(float(np.abs(lhs_lin - rhs_lin).max(initial=0.0)),
                float(np.abs(lhs_const - rhs_const).max(initial=0.0)))
    if resid > TOL.feasibility * scale:
        raise NotAdmissibleError(
            f"lifted drift reconstruction residual {resid:.3e} out of tolerance")
    return a_bar, b_bar


# ---------------------------------------------------------------------------
# PSD facet decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsdFacetDecomposition:
    """theta(x) = B0 + sum_i Bi u_i(x) with every coefficient matrix PSD."""

    B0: np.ndarray
    Bi: np.ndarray  # (q, p, p)

    def reconstruct(self, poly: Polyhedron) -> AffineMatrixField:
        A0 = self.B0 + np.tensordot(poly.delta, self.Bi, axes=(0, 0))
        A = np.einsum("ik,iab->kab", poly.gamma, self.Bi)
        return AffineMatrixField(0.5 * (A0 + A0.T), 0.5 * (A + np.swapaxes(A, 1, 2)))

    def min_eigenvalue(self) -> float:
        vals = [float(np.linalg.eigvalsh(self.B0)[0])]
        vals += [float(np.linalg.eigvalsh(Bi)[0]) for Bi in self.Bi]
        return min(vals)


class _RouteFailed(Exception):
    pass


def check_triangle_condition(poly: Polyhedron) -> bool:
    """For each facet i: on the solution set of {u_j = 0, j != i} the value
    u_i must be constant and nonnegative.  An inconsistent system (empty
    solution set) counts as satisfied for that facet."""
    q, p = poly.gamma.shape
    for i in range(q):
        others = [j for j in range(q) if j != i]
        G = poly.gamma[others]
        d = poly.delta[others]
        if G.size:
            x_star, *_ = np.linalg.lstsq(G, -d, rcond=None)
            resid = float(np.abs(G @ x_star + d).max())
            scale = 1.0 + float(np.abs(d).max(initial=0.0))
            if resid > TOL.feasibility * scale:
                continue  # no solution: vacuously satisfied
            K = _null_space_rows(G, p)
        else:
            x_star = np.zeros(p)
            K = np.eye(p)
        if K.size and float(np.abs(K @ poly.gamma[i]).max()) > TOL.feasibility:
            return False  # u_i non-constant on the solution set
        if poly.facet(i)(x_star) < -TOL.psd:
            return False
    return True


def _verify_decomposition(dec: PsdFacetDecomposition, theta: AffineMatrixField,
                          poly: Polyhedron) -> None:
    rec = dec.reconstruct(poly)
    scale = 1.0 + float(np.abs(theta.A0).max()) + \
        (float(np.abs(theta.A).max()) if theta.A.size else 0.0)
    resid = float(np.abs(rec.A0 - theta.A0).max())
    if theta.A.size:
        resid = max(resid, float(np.abs(rec.A - theta.A).max()))
    if resid > TOL.feasibility * scale:
        raise _RouteFailed(f"reconstruction residual {resid:.3e}")
    for Bmat in [dec.B0, *dec.Bi]:
        w = np.linalg.eigvalsh(Bmat)
        if w[0] < -TOL.psd * (1.0 + abs(float(w[-1]))):
            raise _RouteFailed(f"coefficient matrix has eigenvalue {w[0]:.3e}")


def _route_full_row_rank(theta: AffineMatrixField,
                         poly: Polyhedron) -> PsdFacetDecomposition:
    """gamma full row-rank: read the coefficients off in canonical coordinates
    via the pseudo-inverse of gamma."""
    pinv = poly.gamma.T @ np.linalg.inv(poly.gamma @ poly.gamma.T)
    x_corner = -pinv @ poly.delta
    B0 = symmetrize(theta(x_corner))
    Bi = np.einsum("ki,kab->iab", pinv, theta.A)
    return PsdFacetDecomposition(np.asarray(B0), 0.5 * (Bi + np.swapaxes(Bi, 1, 2)))


def _route_gamma_inverse(theta: AffineMatrixField, poly: Polyhedron,
                         x0: np.ndarray) -> PsdFacetDecomposition:
    """(delta gamma) full row-rank plus the triangle condition: invert the
    extended coefficient matrix after translating to make all offsets positive."""
    q, p = poly.gamma.shape
    d_shift = poly.evaluate(x0)  # positive offsets in the translated frame
    Dg = np.hstack([d_shift[:, None], poly.gamma])
    completion = _null_space_rows(Dg, p + 1)
    Gamma = np.vstack([Dg, completion])
    if Gamma.shape != (p + 1, p + 1) or abs(np.linalg.det(Gamma)) < 1e-12:
        raise _RouteFailed("extended coefficient matrix is singular")
    Ninv = np.linalg.inv(Gamma)
    stack = np.concatenate([symmetrize(theta(x0))[None], theta.A], axis=0)
    Lam = np.einsum("ki,kab->iab", Ninv, stack)
    scale = 1.0 + float(np.abs(stack).max())
    tail = Lam[q:]
    if tail.size and float(np.abs(tail).max()) > TOL.feasibility * scale:
        raise _RouteFailed("artificial facet coefficients do not vanish")
    return PsdFacetDecomposition(np.zeros((p, p)), Lam[:q])


def _sym_vec_ops(p: int):
    """Orthonormal vectorization of symmetric p x p matrices (Frobenius-exact)."""
    idx_i, idx_j = np.triu_indices(p)
    w = np.where(idx_i == idx_j, 1.0, np.sqrt(2.0))

    def vec(S):
        return S[..., idx_i, idx_j] * w

    def unvec(v):
        S = np.zeros(v.shape[:-1] + (p, p))
        S[..., idx_i, idx_j] = v / w
        S[..., idx_j, idx_i] = v / w
        return S

    return vec, unvec, len(w)


def _route_projection(theta: AffineMatrixField, poly: Polyhedron):
    """Cone-distance minimization over the affine coefficient subspace.

    Minimizes the squared Frobenius distance from the PSD product cone over
    all coefficient tuples that reconstruct theta exactly.  A zero minimum is
    a decomposition; a positive minimum yields a verified separating
    functional, i.e. a proof that no decomposition exists.
    """
    q, p = poly.gamma.shape
    vec, unvec, s = _sym_vec_ops(p)
    nvar = (q + 1) * s
    scale = 1.0 + float(np.abs(theta.A0).max()) + \
        (float(np.abs(theta.A).max()) if theta.A.size else 0.0)

    # linear system: B0 + sum_i delta_i Bi = A0 ; sum_i gamma_ik Bi = A_k
    C = np.zeros(((p + 1) * s, nvar))
    rhs = np.zeros((p + 1) * s)
    C[:s, :s] = np.eye(s)
    for i in range(q):
        C[:s, (i + 1) * s:(i + 2) * s] = poly.delta[i] * np.eye(s)
    rhs[:s] = vec(theta.A0)
    for k in range(p):
        blk = slice((k + 1) * s, (k + 2) * s)
        for i in range(q):
            C[blk, (i + 1) * s:(i + 2) * s] = poly.gamma[i, k] * np.eye(s)
        rhs[blk] = vec(theta.A[k])

    part, _, _, _ = np.linalg.lstsq(C, rhs, rcond=None)
    if float(np.abs(C @ part - rhs).max()) > TOL.feasibility * scale:
        raise NotRepresentableError(
            "coefficient system has no solution: theta is not an affine "
            "combination of the facet functionals",
            diagnostic={"kind": "inconsistent-system"})
    _, sv_full, Vt = np.linalg.svd(C)
    ncons = int(np.sum(sv_full > max(C.shape) * np.finfo(float).eps * sv_full[0]))
    Z = Vt[ncons:].T  # (nvar, nfree)
    nfree = Z.shape[1]

    def blocks(v):
        return unvec(v.reshape(q + 1, s))

    def project_psd(Bs):
        lam, V = np.linalg.eigh(Bs)
        lam_pos = np.clip(lam, 0.0, None)
        return (V * lam_pos[..., None, :]) @ np.swapaxes(V, -1, -2)

    def objective(z):
        v = part + Z @ z
        Bs = blocks(v)
        gap = Bs - project_psd(Bs)
        f = float(np.sum(gap * gap))
        g = Z.T @ (2.0 * vec(gap).reshape(-1))
        return f, g

    if nfree:
        res = _minimize(objective, np.zeros(nfree), jac=True, method="L-BFGS-B",
                        options={"maxiter": 5000, "ftol": 1e-18, "gtol": 1e-14})
        v_star = part + Z @ res.x
    else:
        v_star = part
    Bs = blocks(v_star)
    gap = Bs - project_psd(Bs)
    gap_norm = float(np.sqrt(np.sum(gap * gap)))

    if gap_norm <= TOL.psd * scale:
        dec = PsdFacetDecomposition(Bs[0], Bs[1:])
        _verify_decomposition(dec, theta, poly)
        return dec

    # candidate separating functional: v = a* - P_K(a*) is blockwise NSD,
    # orthogonal to the free directions, with <v, a> = |v|^2 > 0 on the subspace
    grad_norm = float(np.linalg.norm(Z.T @ vec(gap).reshape(-1))) if Z.size else 0.0
    stationary = grad_norm <= 1e-6 * max(gap_norm, 1e-30)
    if stationary and gap_norm > TOL.sampled_min * scale:
        raise NotRepresentableError(
            f"no PSD facet decomposition exists: separating functional with "
            f"gap {gap_norm:.3e}",
            diagnostic={"kind": "separating-functional", "gap": gap_norm,
                        "separator": gap})
    raise NumericalFailureError(
        f"decomposition search inconclusive (gap {gap_norm:.3e}, "
        f"stationarity {grad_norm:.3e}); not a proof of nonexistence")


def psd_decompose(model: ModelSpec) -> PsdFacetDecomposition:
    """Decompose theta as B0 + sum_i Bi u_i with PSD coefficient matrices.

    Constructive routes: full row-rank gamma, or full row-rank (delta gamma)
    plus the triangle condition.  Otherwise a cone-distance search settles the
    question, returning a decomposition, a certified NotRepresentableError, or
    NumericalFailureError if inconclusive.
    """
    poly = _require_polyhedron(model)
    x0 = interior_point(poly)
    if x0 is None:
        raise InteriorEmptyError("polyhedron has empty interior")
    theta = model.diffusion
    q = poly.n_facets

    if _rank(poly.gamma) == q:
        try:
            dec = _route_full_row_rank(theta, poly)
            _verify_decomposition(dec, theta, poly)
            return dec
        except _RouteFailed:
            pass
    elif (_rank(np.hstack([poly.delta[:, None], poly.gamma])) == q
          and check_triangle_condition(poly)):
        try:
            dec = _route_gamma_inverse(theta, poly, x0)
            _verify_decomposition(dec, theta, poly)
            return dec
        except _RouteFailed:
            pass
    return _route_projection(theta, poly)


# ---------------------------------------------------------------------------
# diagonalization by dimension extension
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtendedModel:
    """Higher-dimensional model with diagonal diffusion projecting onto the
    original one through ``recovery``."""

    model: ModelSpec
    recovery: np.ndarray  # (p, p_ext) with R theta_ext(y) R^T = theta(R y)

    @property
    def dimension(self) -> int:
        return self.model.dimension


def _check_canonical_poly(poly: Polyhedron) -> None:
    q, p = poly.gamma.shape
    if q > p:
        raise PreconditionFailedError(
            "model is not in canonical coordinates (facets must be u_i(x) = x_i)")
    expected = np.zeros((q, p))
    expected[:, :q] = np.eye(q)
    if float(np.abs(poly.gamma - expected).max()) > TOL.feasibility or \
            float(np.abs(poly.delta).max(initial=0.0)) > TOL.feasibility:
        raise PreconditionFailedError(
            "model is not in canonical coordinates (facets must be u_i(x) = x_i)")


def diagonalize_extended(model: ModelSpec, dec: PsdFacetDecomposition) -> ExtendedModel:
    """Extend the dimension so the diffusion matrix becomes diagonal.

    In canonical coordinates with theta = [[diag(x_M, 0_N), 0], [0, Psi]] and
    Psi = Lam0 + sum_i Lam_i x_i (all Lam PSD, from ``dec``), the extended
    diagonal is diag(x_M, 0_N, w(x_Q), 0) with w(x_Q) = (1, x_1 1, ..., x_q 1)
    blocks of length p-q, and the original diffusion is recovered by the
    congruence with [[Id, 0], [0, (Lam^(1/2) Id)]].
    """
    poly = _require_polyhedron(model)
    _check_canonical_poly(poly)
    p = model.dimension
    q = poly.n_facets
    r = p - q
    theta = model.diffusion

    # which canonical coordinates carry sqrt diffusion
    diag_coeff = np.array([theta.A[k][k, k] for k in range(q)])
    m_mask = diag_coeff > 0.5

    Lam = np.concatenate([dec.B0[None, q:, q:], dec.Bi[:, q:, q:]], axis=0)
    Lhalf = np.concatenate([psd_square_root(Lam[i]) for i in range(q + 1)],
                           axis=1) if r else np.zeros((0, 0))

    wlen = (q + 1) * r
    ext = q + wlen + r
    recovery = np.zeros((p, ext))
    recovery[:q, :q] = np.eye(q)
    if r:
        recovery[q:, q:q + wlen] = Lhalf
        recovery[q:, q + wlen:] = np.eye(r)

    # diagonal diffusion: entries x_k (k in M), 0 (k in N), then the w blocks
    A0_ext = np.zeros((ext, ext))
    A_ext = np.zeros((ext, ext, ext))
    for k in range(q):
        if m_mask[k]:
            A_ext[k][k, k] = 1.0
    for j in range(r):
        A0_ext[q + j, q + j] = 1.0  # constant block of w
    for i in range(q):
        for j in range(r):
            pos = q + (i + 1) * r + j
            A_ext[i][pos, pos] = 1.0
    diffusion_ext = AffineMatrixField(A0_ext, A_ext)

    # drift: original drift on the first p recovered coordinates, zero on the
    # auxiliaries, pushed through the diagonalizing change of variables
    a_ext = np.zeros((ext, ext))
    b_ext = np.zeros(ext)
    a_comp = model.drift.a @ recovery  # drift of the recovered coordinates
    a_ext[:q] = a_comp[:q]
    b_ext[:q] = model.drift.b[:q]
    if r:
        # T^-1 = [[0, I_wlen], [I_r, -Lhalf]] maps (x_rest, aux) to the new frame
        a_ext[q:q + wlen] = 0.0
        a_ext[q + wlen:] = a_comp[q:]
        b_ext[q + wlen:] = model.drift.b[q:]
    drift_ext = AffineVectorField(a_ext, b_ext)

    gamma_ext = np.zeros((q, ext))
    gamma_ext[:, :q] = np.eye(q)
    space_ext = Polyhedron(gamma_ext, np.zeros(q), minimal=True)
    ext_model = ModelSpec(ext, drift_ext, diffusion_ext, space_ext)

    out = ExtendedModel(ext_model, recovery)
    _verify_extension(out, model)
    return out


def _verify_extension(ext: ExtendedModel, model: ModelSpec,
                      n_points: int = 25) -> None:
    rng = np.random.default_rng(2)
    scale = 1.0 + float(np.abs(model.diffusion.A0).max()) + \
        (float(np.abs(model.diffusion.A).max()) if model.diffusion.A.size else 0.0)
    for _ in range(n_points):
        y = np.abs(rng.standard_normal(ext.model.dimension))
        x = ext.recovery @ y
        lhs = ext.recovery @ ext.model.diffusion(y) @ ext.recovery.T
        rhs = model.diffusion(x)
        if float(np.abs(lhs - rhs).max()) > TOL.block_identity * scale * 10:
            raise PreconditionFailedError(
                "extension congruence residual out of tolerance; the supplied "
                "decomposition does not match the model")


# ---------------------------------------------------------------------------
# classical square-root-diffusion models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassicalModel:
    """theta = Sigma diag(v) Sigma^T with v(x) = beta x + alpha."""

    Sigma: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray

    def v_functional(self, i: int) -> AffineScalar:
        return AffineScalar(self.beta[i], float(self.alpha[i]))

    def reconstructed(self) -> AffineMatrixField:
        p = self.Sigma.shape[0]
        A0 = self.Sigma @ np.diag(self.alpha) @ self.Sigma.T
        A = np.stack([self.Sigma @ np.diag(self.beta[:, k]) @ self.Sigma.T
                      for k in range(p)])
        return AffineMatrixField(0.5 * (A0 + A0.T), 0.5 * (A + np.swapaxes(A, 1, 2)))


@dataclass(frozen=True)
class ClassicalReport:
    reconstruction_ok: bool
    containment_ok: bool
    w1: np.ndarray            # (q, p) bool: beta_i Sigma^j = 0 or v_j = c v_i, c > 0
    w2_ok: np.ndarray         # (q,) drift condition per facet
    feller_ok: np.ndarray     # (q,) strengthened drift condition per facet
    theta_pos_nonempty: bool
    witnesses: dict = field(default_factory=dict)

    @property
    def admissible(self) -> bool:
        return bool(self.reconstruction_ok and self.containment_ok
                    and self.w1.all() and self.w2_ok.all())

    @property
    def open_invariant(self) -> bool:
        return bool(self.admissible and self.feller_ok.all()
                    and self.theta_pos_nonempty)


def _positive_multiple(f: AffineScalar, g: AffineScalar) -> float | None:
    """c > 0 with f = c g at coefficient level, or None."""
    fc, gc = f.coefficients(), g.coefficients()
    denom = float(gc @ gc)
    if denom == 0.0:
        return None
    c = float(fc @ gc) / denom
    if c <= 0:
        return None
    if float(np.abs(fc - c * gc).max()) > TOL.feasibility * (1 + np.abs(fc).max()):
        return None
    return c


def check_classical(model: ModelSpec, cm: ClassicalModel) -> ClassicalReport:
    """Admissibility of the classical model theta = Sigma diag(v) Sigma^T.

    Checks, facet by facet: the orthogonality-or-alignment condition between
    the rows of v and the columns of Sigma; the drift condition on each facet
    segment; and the strengthened (Feller-type) drift condition implying open
    invariance.  Raises ModelInconsistencyError when cm does not reproduce the
    model's diffusion matrix.
    """
    poly = _require_polyhedron(model)
    p, q = model.dimension, poly.n_facets
    rec = cm.reconstructed()
    scale = 1.0 + float(np.abs(model.diffusion.A0).max()) + \
        (float(np.abs(model.diffusion.A).max()) if model.diffusion.A.size else 0.0)
    resid = max(float(np.abs(rec.A0 - model.diffusion.A0).max()),
                float(np.abs(rec.A - model.diffusion.A).max()) if rec.A.size else 0.0)
    reconstruction_ok = resid <= 1e-10 * scale
    if not reconstruction_ok:
        raise ModelInconsistencyError(
            f"Sigma diag(v) Sigma^T does not reproduce theta (residual {resid:.3e})")

    containment_ok = True
    witnesses: dict = {}
    for i in range(p):
        try:
            farkas_decompose(cm.v_functional(i), poly)
        except NotNonnegativeError as exc:
            containment_ok = False
            witnesses[f"v{i}"] = exc.witness

    # facet i corresponds to v_i after positive rescaling
    w1 = np.zeros((q, p), dtype=bool)
    for i in range(q):
        vi = cm.v_functional(i)
        aligned = _positive_multiple(vi, poly.facet(i)) is not None
        for j in range(p):
            if abs(float(cm.beta[i] @ cm.Sigma[:, j])) <= 1e-10 * (1 + np.abs(cm.Sigma).max()):
                w1[i, j] = True
            else:
                c = _positive_multiple(cm.v_functional(j), vi)
                w1[i, j] = aligned and c is not None

    w2_ok = np.zeros(q, dtype=bool)
    feller_ok = np.zeros(q, dtype=bool)
    SST = cm.Sigma @ cm.Sigma.T
    for i in range(q):
        drift_fn = AffineScalar(cm.beta[i] @ model.drift.a,
                                float(cm.beta[i] @ model.drift.b))
        try:
            facet_relative_decompose(drift_fn, poly, i)
            w2_ok[i] = True
        except NotNonnegativeOnFacetError as exc:
            witnesses[f"drift{i}"] = exc.witness
        half_term = 0.5 * float(cm.beta[i] @ SST @ cm.beta[i])
        strengthened = AffineScalar(drift_fn.gamma, drift_fn.delta - half_term)
        try:
            facet_relative_decompose(strengthened, poly, i)
            feller_ok[i] = True
        except NotNonnegativeOnFacetError as exc:
            witnesses[f"feller{i}"] = exc.witness

    x0 = interior_point(poly)
    theta_pos = False
    if x0 is not None:
        rng = np.random.default_rng(3)
        radius = max(chebyshev_radius(poly), 10 * TOL.interior_slack)
        for _ in range(32):
            d = rng.standard_normal(p)
            x = x0 + 0.4 * radius * d / np.linalg.norm(d)
            if np.linalg.eigvalsh(model.diffusion(x))[0] > 0:
                theta_pos = True
                break
        if not theta_pos and np.linalg.eigvalsh(model.diffusion(x0))[0] > 0:
            theta_pos = True

    return ClassicalReport(reconstruction_ok, containment_ok, w1, w2_ok,
                           feller_ok, theta_pos, witnesses)


def check_open_orthant_invariance(drift: AffineVectorField) -> np.ndarray:
    """Per-coordinate open-orthant invariance for the canonical model
    theta = diag(x): coordinate i passes iff a_ij >= 0 for all j != i and
    b_i >= 1/2.  The diagonal of a is irrelevant."""
    p = drift.dim
    out = np.zeros(p, dtype=bool)
    for i in range(p):
        off = np.delete(drift.a[i], i)
        out[i] = bool(np.all(off >= -TOL.lam_clip)
                      and drift.b[i] >= 0.5 - TOL.lam_clip)
    return out
