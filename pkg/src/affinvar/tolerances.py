"""Central numeric tolerances.

All comparisons in the package read from the module-level ``TOL`` instance so
that the CLI ``--tol`` flag can rescale every check consistently.  Individual
fields keep their relative proportions when rescaled.
"""

from dataclasses import dataclass, fields


@dataclass
class Tolerances:
    # value-type hygiene
    sym_rtol: float = 1e-12      # relative asymmetry absorbed by symmetrization
    membership: float = 1e-10    # polyhedron / quadric membership slack
    psd: float = 1e-9            # relative eigenvalue floor for PSD tests
    # linear programming / coefficient identities
    feasibility: float = 1e-8    # LP feasibility and coefficient-match residuals
    lam_clip: float = 1e-10      # clamp threshold for tiny negative multipliers
    interior_slack: float = 1e-9 # minimal Chebyshev radius counting as interior
    box: float = 1e6             # LP box bound for multipliers and witnesses
    # transforms and decompositions
    zero_row: float = 1e-9       # scale-relative zero test for coupling rows
    block_identity: float = 1e-9 # canonical-transform block residual
    fit_residual: float = 1e-8   # least-squares fit residuals (psi, bases)
    eig_zero: float = 1e-9       # relative eigenvalue-zero threshold (quadrics)
    sampled_min: float = 1e-7    # grid-minimum slack for sampled inequality checks


TOL = Tolerances()

_DEFAULTS = Tolerances()
_SCALABLE = (
    "membership", "psd", "feasibility", "lam_clip", "interior_slack",
    "zero_row", "block_identity", "fit_residual", "eig_zero", "sampled_min",
)


def set_global_tolerance(feasibility: float) -> None:
    """Rescale every check tolerance so that ``feasibility`` becomes the new
    LP/coefficient tolerance; the other fields keep their default ratios."""
    factor = feasibility / _DEFAULTS.feasibility
    for f in fields(Tolerances):
        if f.name in _SCALABLE:
            setattr(TOL, f.name, getattr(_DEFAULTS, f.name) * factor)


def reset_tolerances() -> None:
    for f in fields(Tolerances):
        setattr(TOL, f.name, getattr(_DEFAULTS, f.name))
