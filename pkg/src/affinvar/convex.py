"""LP-backed convex-analysis oracles for polyhedra.

Farkas-type certificates express an affine functional that is nonnegative on a
polyhedron as a nonnegative combination of the facet functionals plus a
constant.  All certificates returned here are re-verified by substitution at
coefficient level, so the LP backend only has to find feasible points, never
to be trusted blindly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import AffineScalar, Polyhedron
from .errors import (InteriorEmptyError, NotNonnegativeError,
                     NotNonnegativeOnFacetError, ToleranceWarning)
from .tolerances import TOL


@dataclass(frozen=True)
class FarkasCertificate:
    """Multipliers (lam, c) with d = lam . u + c at coefficient level."""

    lam: np.ndarray
    c: float

    def reconstruct(self, poly: Polyhedron) -> AffineScalar:
        return AffineScalar(self.lam @ poly.gamma,
                            float(self.lam @ poly.delta + self.c))

    def residual(self, d: AffineScalar, poly: Polyhedron) -> float:
        rec = self.reconstruct(poly)
        return float(np.abs(rec.coefficients() - d.coefficients()).max())


def _clamp(lam: np.ndarray, free: int | None) -> np.ndarray:
    out = lam.copy()
    mask = (out < 0) & (out >= -TOL.lam_clip)
    if free is not None:
        mask[free] = False
    out[mask] = 0.0
    return out


def _certificate_lp(d: AffineScalar, poly: Polyhedron,
                    free: int | None = None) -> FarkasCertificate | None:
    """Feasibility LP for d = lam.u + c with lam >= 0 (lam_free unconstrained), c >= 0."""
    q, p = poly.gamma.shape
    box = TOL.box
    # unknowns: lam (q), c (1); equations: p gamma rows + 1 offset row
    A_eq = np.zeros((p + 1, q + 1))
    A_eq[:p, :q] = poly.gamma.T
    A_eq[p, :q] = poly.delta
    A_eq[p, q] = 1.0
    b_eq = np.concatenate([d.gamma, [d.delta]])
    bounds = [(0.0, box)] * q + [(0.0, box)]
    if free is not None:
        bounds[free] = (-box, box)
    res = linprog(np.zeros(q + 1), A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if res.status != 0:
        return None
    lam = _clamp(res.x[:q], free)
    c = max(res.x[q], 0.0)
    if np.any(np.abs(res.x) > 0.999 * box):
        warnings.warn("certificate multiplier at the LP box bound",
                      ToleranceWarning, stacklevel=3)
    cert = FarkasCertificate(lam, float(c))
    if cert.residual(d, poly) > TOL.feasibility * (1.0 + np.abs(b_eq).max()):
        return None
    return cert


def _minimize_affine(d: AffineScalar, poly: Polyhedron,
                     facet: int | None = None) -> np.ndarray | None:
    """Witness search: minimize d over the polyhedron (restricted to facet if given),
    inside the |x|_inf <= box safety box since the set may be unbounded."""
    box = TOL.box
    A_ub, b_ub = -poly.gamma, poly.delta
    A_eq = b_eq = None
    if facet is not None:
        A_eq = poly.gamma[facet][None, :]
        b_eq = np.array([-poly.delta[facet]])
    res = linprog(d.gamma, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(-box, box)] * poly.dim, method="highs")
    return res.x if res.status == 0 else None


def farkas_decompose(d: AffineScalar, poly: Polyhedron) -> FarkasCertificate:
    """Certificate that d >= 0 on the polyhedron, or a witness of the contrary.

    Raises NotNonnegativeError carrying a point where d is negative when no
    certificate exists.
    """
    cert = _certificate_lp(d, poly)
    if cert is not None:
        return cert
    witness = _minimize_affine(d, poly)
    value = d(witness) if witness is not None else None
    raise NotNonnegativeError("no Farkas certificate: functional is negative "
                              "somewhere on the polyhedron",
                              witness=witness, value=value)


def facet_relative_decompose(d: AffineScalar, poly: Polyhedron,
                             i: int) -> FarkasCertificate:
    """Certificate that d >= 0 on the facet segment {u_i = 0} of the polyhedron.

    The i-th multiplier is unconstrained; all others and the constant must be
    nonnegative.
    """
    cert = _certificate_lp(d, poly, free=i)
    if cert is not None:
        return cert
    witness = _minimize_affine(d, poly, facet=i)
    value = d(witness) if witness is not None else None
    raise NotNonnegativeOnFacetError(
        f"functional is negative on facet segment {i}", facet=i,
        witness=witness, value=value)


def facet_nonempty(poly: Polyhedron, i: int) -> np.ndarray | None:
    """A point on the facet segment {u_i = 0} within the polyhedron, or None.

    The witness maximizes the minimum slack of the remaining facets, which
    keeps it away from lower-dimensional corners when possible.
    """
    q, p = poly.gamma.shape
    box = TOL.box
    others = [j for j in range(q) if j != i]
    # variables (x, r): maximize r with u_j(x) >= r * ||gamma_j||, u_i(x) = 0
    cost = np.zeros(p + 1)
    cost[p] = -1.0
    norms = np.linalg.norm(poly.gamma[others], axis=1) if others else np.zeros(0)
    A_ub = np.hstack([-poly.gamma[others], norms[:, None]]) if others else None
    b_ub = poly.delta[others] if others else None
    A_eq = np.hstack([poly.gamma[i][None, :], [[0.0]]])
    b_eq = np.array([-poly.delta[i]])
    bounds = [(-box, box)] * p + [(-box, box)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status != 0:
        return None
    x, r = res.x[:p], res.x[p]
    if r < -TOL.feasibility:
        return None
    return x


def interior_point(poly: Polyhedron) -> np.ndarray | None:
    """Chebyshev center: the point maximizing the minimum normalized slack.

    Returns None when the interior is empty (best slack below tolerance).
    The slack is box-constrained so unbounded polyhedra still give a center;
    when the best slack exceeds 1 a second stage picks the minimum-norm point
    at slack 1, keeping centers of unbounded sets near the origin.
    """
    q, p = poly.gamma.shape
    box = TOL.box
    norms = np.linalg.norm(poly.gamma, axis=1)
    if np.any((norms == 0) & (poly.delta < 0)):
        return None
    keep = norms > 0
    cost = np.zeros(p + 1)
    cost[p] = -1.0
    A_ub = np.hstack([-poly.gamma[keep], norms[keep, None]])
    b_ub = poly.delta[keep]
    bounds = [(-box, box)] * p + [(-box, box)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    x, r = res.x[:p], res.x[p]
    if r <= TOL.interior_slack:
        return None
    if r <= 1.0:
        return x
    # variables (x, t) with |x_i| <= t_i: minimize sum t at slack 1
    g = poly.gamma[keep]
    A2 = np.block([[-g, np.zeros((g.shape[0], p))],
                   [np.eye(p), -np.eye(p)],
                   [-np.eye(p), -np.eye(p)]])
    b2 = np.concatenate([poly.delta[keep] - norms[keep], np.zeros(2 * p)])
    cost2 = np.concatenate([np.zeros(p), np.ones(p)])
    res2 = linprog(cost2, A_ub=A2, b_ub=b2,
                   bounds=[(-box, box)] * p + [(0, box)] * p, method="highs")
    if res2.status == 0:
        return res2.x[:p]
    return x


def chebyshev_radius(poly: Polyhedron) -> float:
    x = interior_point(poly)
    if x is None:
        return 0.0
    norms = np.linalg.norm(poly.gamma, axis=1)
    norms[norms == 0] = 1.0
    return float(np.min(poly.evaluate(x) / norms))


def minimalize(poly: Polyhedron) -> Polyhedron:
    """Remove facets whose deletion leaves the set unchanged (one LP per facet)."""
    keep = list(range(poly.n_facets))
    i = 0
    while i < len(keep):
        idx = keep[i]
        others = [j for j in keep if j != idx]
        if not others:
            i += 1
            continue
        sub = Polyhedron(poly.gamma[others], poly.delta[others])
        val = _minimize_affine(poly.facet(idx), sub)
        if val is not None and poly.facet(idx)(val) >= -TOL.feasibility:
            keep.pop(i)  # facet cannot be violated while the others hold
            continue
        i += 1
    return Polyhedron(poly.gamma[keep], poly.delta[keep], minimal=True)


def _detect_facet_multiple_unchecked(v: AffineScalar, poly: Polyhedron,
                                     i: int) -> float | None:
    try:
        facet_relative_decompose(v, poly, i)
        facet_relative_decompose(-v, poly, i)
    except NotNonnegativeOnFacetError:
        return None
    u = poly.facet(i).coefficients()
    vc = v.coefficients()
    lam = float(u @ vc / (u @ u))
    resid = float(np.abs(vc - lam * u).max())
    if resid > TOL.feasibility * (1.0 + np.abs(vc).max()):
        return None
    return lam


def detect_facet_multiple(v: AffineScalar, poly: Polyhedron,
                          i: int) -> float | None:
    """If v vanishes identically on the facet segment {u_i = 0}, return the
    lambda with v = lambda * u_i as affine functionals; otherwise None.

    Requires a nonempty interior (raises InteriorEmptyError otherwise); in the
    degenerate case where the whole set lies inside the facet the multiplier
    would be arbitrary and no answer is meaningful.
    """
    if interior_point(poly) is None:
        raise InteriorEmptyError(
            "facet-multiple detection needs a nonempty interior "
            "(degenerate facet: the set may collapse onto the facet)")
    return _detect_facet_multiple_unchecked(v, poly, i)
