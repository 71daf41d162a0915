"""Command-line front end.

Subcommands: validate, canonicalize, decompose, classify, simulate.  Reports
are JSON (schema 1) written to stdout or --out; exit codes: 0 all required
checks passed, 1 checks failed, 2 parse error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .convex import interior_point, minimalize
from .core import (ModelSpec, Polyhedron, QuadraticForm, QuadraticSpace,
                   change_model_coordinates, spot_check_psd)
from .errors import (AffinvarError, NotAdmissibleError, NotInSpanError,
                     NotRepresentableError, NumericalFailureError, ParseError,
                     PreconditionFailedError)
from .modelio import load_model, model_hash, model_to_dict, save_model
from .polyhedral import (build_square_root, canonical_transform,
                         check_polyhedral_admissibility, lift_drift,
                         psd_decompose, transform_model)
from .quadratic import (QuadricClassification, check_cone_admissibility,
                        check_parabolic_drift, check_parabolic_psd_condition,
                        classify_quadric, cone_square_root,
                        conical_theta_decompose, normalize_parabolic,
                        parabolic_square_root, parabolic_theta_decompose)
from .simulate import Scheme, SimConfig, mean_ode, simulate_paths
from .tolerances import TOL, set_global_tolerance

EXIT_OK, EXIT_CHECKS, EXIT_PARSE, EXIT_INTERNAL = 0, 1, 2, 3


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _check(name: str, passed: bool, margin=None, certificate=None,
           witness=None, info=None) -> dict:
    entry = {"name": name, "passed": bool(passed)}
    if margin is not None:
        entry["margin"] = _tolist(margin)
    if certificate is not None:
        entry["certificate"] = _tolist(certificate)
    if witness is not None:
        entry["witness"] = _tolist(witness)
    if info is not None:
        entry["info"] = info
    return entry


def _report_base(command: str, model: ModelSpec) -> dict:
    kind = "polyhedral" if isinstance(model.state_space, Polyhedron) else "quadratic"
    return {
        "schema": 1,
        "version": __version__,
        "command": command,
        "model": {"hash": model_hash(model), "dimension": model.dimension,
                  "kind": kind},
        "checks": [],
    }


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=_tolist)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _classification_dict(cls: QuadricClassification) -> dict:
    return {"kind": cls.kind, "q": cls.q, "d": cls.d, "sign": cls.sign,
            "admissible": cls.admissible, "T": cls.T.tolist(),
            "t": cls.t.tolist()}


def _canonical_quadratic_model(model: ModelSpec):
    """Classify the quadric and move the model to canonical coordinates."""
    space = model.state_space
    cls = classify_quadric(space.form)
    flipped = (space.component == "positive") != (cls.sign == 1)
    component = "negative" if flipped else "positive"
    p = model.dimension
    if cls.kind == "parabolic":
        A = np.zeros((p, p))
        A[np.arange(1, cls.q), np.arange(1, cls.q)] = -1.0
        b = np.zeros(p)
        b[0] = 1.0
        canon_form = QuadraticForm(A, b, 0.0)
    elif cls.kind == "cone":
        A = np.zeros((p, p))
        A[0, 0] = 1.0
        A[np.arange(1, cls.q), np.arange(1, cls.q)] = -1.0
        canon_form = QuadraticForm(A, np.zeros(p), cls.d)
    else:
        A = np.zeros((p, p))
        A[np.arange(cls.q), np.arange(cls.q)] = 1.0
        canon_form = QuadraticForm(A, np.zeros(p), cls.d)
    new_space = QuadraticSpace(canon_form, component, space.closed)
    return cls, change_model_coordinates(model, cls.T, cls.t, new_space)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _validate_polyhedral(model: ModelSpec, report: dict) -> None:
    checks = report["checks"]
    poly = minimalize(model.state_space) if not model.state_space.minimal \
        else model.state_space
    model = ModelSpec(model.dimension, model.drift, model.diffusion, poly)
    x0 = interior_point(poly)
    checks.append(_check("interior-nonempty", x0 is not None,
                         witness=x0))
    if x0 is None:
        return
    rng = np.random.default_rng(5)
    pts = x0 + 0.05 * rng.standard_normal((32, model.dimension))
    pts = pts[np.asarray(poly.contains(pts))]
    ok, worst = spot_check_psd(model, np.vstack([x0[None], pts]))
    checks.append(_check("theta-psd-on-interior-samples", ok, margin=worst))

    adm = check_polyhedral_admissibility(model)
    for fc in adm.facets:
        checks.append(_check(
            f"facet-{fc.index}-diffusion", fc.diffusion_ok,
            margin=fc.diffusion_multiple,
            certificate=None if fc.coupling_row is None else fc.coupling_row,
            info=fc.message or None))
        checks.append(_check(
            f"facet-{fc.index}-drift", fc.drift_ok,
            certificate=None if fc.drift_certificate is None else
            {"lambda": fc.drift_certificate.lam.tolist(),
             "c": fc.drift_certificate.c},
            witness=fc.witness))

    if adm.admissible:
        a_bar, b_bar = lift_drift(model)
        report["lifted_drift"] = {"a_bar": a_bar.tolist(), "b_bar": b_bar.tolist()}
        ct = canonical_transform(model)
        report["canonical"] = {"m": ct.m, "n": ct.n}
        try:
            dec = psd_decompose(model)
            report["decompose"] = {"status": "ok",
                                   "min_eigenvalue": dec.min_eigenvalue()}
        except NotRepresentableError as exc:
            report["decompose"] = {"status": "not-representable",
                                   "detail": str(exc)}
        except NumericalFailureError as exc:
            report["decompose"] = {"status": "inconclusive", "detail": str(exc)}


def _validate_quadratic(model: ModelSpec, report: dict) -> None:
    checks = report["checks"]
    cls, canon = _canonical_quadratic_model(model)
    report["classification"] = _classification_dict(cls)
    checks.append(_check("quadric-admissible-kind", cls.admissible,
                         info=f"{cls.kind}(q={cls.q}, d={cls.d})"))
    if not cls.admissible:
        return
    if canon.state_space.component != "positive":
        checks.append(_check("state-space-side", False,
                             info="state space is the outside of the quadric"))
        return
    p, q = model.dimension, cls.q
    if cls.kind == "parabolic":
        dec = parabolic_theta_decompose(canon.diffusion, q)
        checks.append(_check("parabolic-structure", True, margin=dec.c))
        if dec.c <= TOL.lam_clip:
            checks.append(_check("square-root-block-present", False,
                                 info="c = 0; diffusion degenerate on the parabola"))
            return
        S, theta_n, dec_n = normalize_parabolic(canon.diffusion, q)
        model_n = change_model_coordinates(
            canon, S, np.zeros(p), canon.state_space)
        rng = np.random.default_rng(6)
        ys = rng.standard_normal((64, q - 1))
        samples = np.hstack([(np.sum(ys ** 2, axis=1) +
                              np.abs(rng.standard_normal(64)))[:, None], ys,
                             rng.standard_normal((64, p - q))])
        psd_ok, structural = check_parabolic_psd_condition(dec_n, samples)
        checks.append(_check("parabolic-psd-condition", psd_ok,
                             info="structural" if structural else "sampled"))
        drift_rep = check_parabolic_drift(model_n.drift, q)
        checks.append(_check("parabolic-drift-structure", drift_rep.structure_ok))
        checks.append(_check("parabolic-drift-psd", drift_rep.psd_ok))
        checks.append(_check("parabolic-drift-degenerate-match", drift_rep.q2_ok))
        checks.append(_check("parabolic-drift-lower-bound", drift_rep.closed_ok,
                             margin=drift_rep.closed_margin))
        report["open_invariance"] = {"passed": drift_rep.open_ok,
                                     "margin": drift_rep.open_margin}
    else:  # cone
        if q != p:
            checks.append(_check("cone-full-dimension", False,
                                 info="only p = q conical models are supported"))
            return
        try:
            cdec = conical_theta_decompose(canon.diffusion, q)
        except NotInSpanError as exc:
            checks.append(_check("conical-structure", False, info=str(exc)))
            return
        checks.append(_check("conical-structure", True,
                             certificate={"zeta": cdec.coeff_zeta,
                                          "rho": cdec.coeff_rho.tolist()}))
        if abs(cdec.coeff_zeta - 1.0) > TOL.feasibility or \
                float(np.abs(cdec.coeff_rho).max(initial=0.0)) > TOL.feasibility:
            checks.append(_check("cone-zeta-form", False,
                                 info="strong-solution route needs theta = zeta"))
            return
        rep = check_cone_admissibility(canon.drift, p, q)
        checks.append(_check("cone-drift-symmetry", rep.symmetry_ok))
        checks.append(_check("cone-drift-psd", rep.psd_ok))
        checks.append(_check("cone-drift-lower-bound", rep.drift_ok,
                             margin=rep.drift_margin))


def cmd_validate(args) -> int:
    model = load_model(args.model)
    report = _report_base("validate", model)
    if isinstance(model.state_space, Polyhedron):
        _validate_polyhedral(model, report)
    else:
        _validate_quadratic(model, report)
    passed = all(c["passed"] for c in report["checks"])
    report["passed"] = passed
    _emit(report, args.out)
    return EXIT_OK if passed else EXIT_CHECKS


# ---------------------------------------------------------------------------
# canonicalize / decompose / classify
# ---------------------------------------------------------------------------

def cmd_canonicalize(args) -> int:
    model = load_model(args.model)
    if not isinstance(model.state_space, Polyhedron):
        raise PreconditionFailedError("canonicalize applies to polyhedral models")
    report = _report_base("canonicalize", model)
    ct = canonical_transform(model)
    transformed = transform_model(model, ct)
    report["transform"] = {
        "L": ct.L.tolist(), "ell": ct.ell.tolist(), "m": ct.m, "n": ct.n,
        "M": ct.facet_order[:ct.m].tolist(),
        "N": ct.facet_order[ct.m:ct.m + ct.n].tolist(),
        "facet_order": ct.facet_order.tolist(),
        "facet_scale": ct.facet_scale.tolist(),
        "psi": {"A0": ct.psi.A0.tolist(), "A": [M.tolist() for M in ct.psi.A]},
        "B": ct.B.tolist(),
    }
    report["transformed_model"] = model_to_dict(transformed)
    report["checks"].append(_check("block-identity", True))
    report["passed"] = True
    if args.model_out:
        save_model(transformed, args.model_out)
    _emit(report, args.out)
    return EXIT_OK


def cmd_decompose(args) -> int:
    model = load_model(args.model)
    report = _report_base("decompose", model)
    if isinstance(model.state_space, Polyhedron):
        try:
            dec = psd_decompose(model)
        except NotRepresentableError as exc:
            report["decomposition"] = {"status": "not-representable",
                                       "detail": str(exc)}
            report["passed"] = False
            _emit(report, args.out)
            return EXIT_CHECKS
        report["decomposition"] = {
            "status": "ok", "B0": dec.B0.tolist(),
            "Bi": [M.tolist() for M in dec.Bi],
            "min_eigenvalue": dec.min_eigenvalue(),
        }
    else:
        cls, canon = _canonical_quadratic_model(model)
        report["classification"] = _classification_dict(cls)
        if cls.kind == "parabolic":
            dec = parabolic_theta_decompose(canon.diffusion, cls.q)
            report["decomposition"] = {
                "status": "ok", "kind": "parabolic", "c": dec.c,
                "A1": dec.A1.tolist(), "A2": dec.A2.tolist(),
                "B": {"A0": dec.B.A0.tolist(),
                      "A": [M.tolist() for M in dec.B.A]},
            }
        elif cls.kind == "cone":
            cdec = conical_theta_decompose(canon.diffusion, cls.q)
            report["decomposition"] = {
                "status": "ok", "kind": "conical",
                "coeff_zeta": cdec.coeff_zeta,
                "coeff_rho": cdec.coeff_rho.tolist(),
            }
        else:
            raise NotAdmissibleError("ellipsoid-type quadrics carry no affine diffusion")
    report["passed"] = True
    _emit(report, args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    model = load_model(args.model)
    if not isinstance(model.state_space, QuadraticSpace):
        raise PreconditionFailedError("classify applies to quadratic models")
    report = _report_base("classify", model)
    cls = classify_quadric(model.state_space.form)
    report["classification"] = _classification_dict(cls)
    report["passed"] = True
    _emit(report, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _simulation_setup(model: ModelSpec, x0):
    """Canonical model, sigma evaluator and coordinate maps for simulation."""
    if isinstance(model.state_space, Polyhedron):
        ct = canonical_transform(model)
        canon = transform_model(model, ct)
        sigma = build_square_root(ct)
        to_canon, from_canon = ct.to_canonical, ct.from_canonical
        default_x0 = interior_point(ct.polyhedron)  # Chebyshev center
    else:
        cls, canon = _canonical_quadratic_model(model)
        if canon.state_space.component != "positive":
            raise PreconditionFailedError(
                "simulation supports the inside component of the quadric only")
        Tinv = np.linalg.inv(cls.T)

        def to_canon(x):
            return np.asarray(x, dtype=float) @ cls.T.T + cls.t

        def from_canon(y):
            return (np.asarray(y, dtype=float) - cls.t) @ Tinv.T

        if cls.kind == "parabolic":
            S, _, dec_n = normalize_parabolic(canon.diffusion, cls.q)
            canon = change_model_coordinates(canon, S, np.zeros(model.dimension),
                                             canon.state_space)
            sigma = parabolic_square_root(dec_n)
            base_to, base_from = to_canon, from_canon
            Sinv = np.linalg.inv(S)

            def to_canon(x):
                return base_to(x) @ S.T

            def from_canon(y):
                return base_from(np.asarray(y, dtype=float) @ Sinv.T)

        elif cls.kind == "cone":
            cdec = conical_theta_decompose(canon.diffusion, cls.q)
            if abs(cdec.coeff_zeta - 1.0) > TOL.feasibility or \
                    float(np.abs(cdec.coeff_rho).max(initial=0.0)) > TOL.feasibility:
                raise PreconditionFailedError(
                    "simulation on cones needs theta = zeta")
            sigma = cone_square_root(cls.q)
        else:
            raise PreconditionFailedError("ellipsoid-type quadrics are not simulable")
        canon_start = np.zeros(model.dimension)
        canon_start[0] = 1.0
        default_x0 = from_canon(canon_start)
    start = np.asarray(x0, dtype=float) if x0 is not None \
        else np.asarray(default_x0, dtype=float)
    return canon, sigma, to_canon, from_canon, start


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    report = _report_base("simulate", model)
    x0 = np.array([float(v) for v in args.x0.split(",")]) if args.x0 else None
    canon, sigma, to_canon, from_canon, start = _simulation_setup(model, x0)
    steps = args.steps if args.steps else max(1, int(round(1000 * args.t)))
    scheme = Scheme.FULL_TRUNCATION_EULER if args.scheme == "full-truncation" \
        else Scheme.PLAIN_EULER
    cfg = SimConfig(to_canon(start), args.t, steps, args.paths, args.seed, scheme)
    ens = simulate_paths(canon, sigma, cfg)
    exited = ens.exit_flags >= 0
    final = from_canon(ens.states[:, -1])
    times_m, means_m = mean_ode(model, start, args.t)
    report["simulation"] = {
        "t": args.t, "steps": steps, "paths": args.paths, "seed": args.seed,
        "scheme": scheme.value, "x0": start.tolist(),
        "exit_fraction": float(np.count_nonzero(exited)) / args.paths,
        "nonfinite_paths": int(np.count_nonzero(ens.nonfinite)),
        "final_mean": final.mean(axis=0).tolist(),
        "final_std": final.std(axis=0).tolist(),
        "mean_ode_final": means_m[-1].tolist(),
    }
    if args.csv:
        original = from_canon(ens.states.reshape(-1, model.dimension)) \
            .reshape(ens.states.shape)
        with open(args.csv, "w") as fh:
            fh.write("t,path," + ",".join(f"x{i+1}" for i in range(model.dimension))
                     + "\n")
            for ipath in range(original.shape[0]):
                for it, t in enumerate(ens.times):
                    row = ",".join(repr(float(v)) for v in original[ipath, it])
                    fh.write(f"{float(t)!r},{ipath},{row}\n")
    report["passed"] = True
    _emit(report, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affinvar",
        description="Validate, canonicalize, decompose, classify and simulate "
                    "affine diffusions on polyhedral and quadratic state spaces")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("model", help="model JSON file")
        sp.add_argument("--out", help="write the JSON report to this file")
        sp.add_argument("--tol", type=float, default=None,
                        help="override the global check tolerance")
        sp.add_argument("--seed", type=int, default=0,
                        help="random seed (used by simulate)")

    sp = sub.add_parser("validate", help="run the admissibility suite")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("canonicalize", help="block-diagonalize the diffusion")
    common(sp)
    sp.add_argument("--model-out", help="write the transformed model here")
    sp.set_defaults(func=cmd_canonicalize)

    sp = sub.add_parser("decompose", help="PSD facet / parabolic / conical decomposition")
    common(sp)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("classify", help="canonical form of the quadric boundary")
    common(sp)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("simulate", help="Monte Carlo path simulation")
    common(sp)
    sp.add_argument("--t", type=float, default=1.0, help="horizon")
    sp.add_argument("--steps", type=int, default=0,
                    help="steps (default 1000 per unit time)")
    sp.add_argument("--paths", type=int, default=1000)
    sp.add_argument("--x0", help="comma-separated start point")
    sp.add_argument("--scheme", choices=["full-truncation", "plain"],
                    default="full-truncation")
    sp.add_argument("--csv", help="dump paths to CSV (t,path,x1,...)")
    sp.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "tol", None):
        set_global_tolerance(args.tol)
    try:
        return args.func(args)
    except ParseError as exc:
        print(json.dumps({"schema": 1, "error": "parse", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_PARSE
    except AffinvarError as exc:
        print(json.dumps({"schema": 1, "error": type(exc).__name__,
                          "detail": str(exc)}), file=sys.stderr)
        return EXIT_CHECKS if isinstance(
            exc, (NotAdmissibleError, NotRepresentableError,
                  PreconditionFailedError)) else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(json.dumps({"schema": 1, "error": "internal", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
