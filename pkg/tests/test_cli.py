import json

import numpy as np
import pytest

from affinvar.cli import main
from affinvar.modelio import fixture_path, load_model

FIXTURES = ("cir", "triangle_channel", "hyperbola_wedge", "parabola3", "cone3")

# expected validate verdicts for every shipped fixture
GOLDEN_VERDICTS = {
    "cir": 0,
    "triangle_channel": 0,
    "hyperbola_wedge": 1,   # facet diffusion conditions fail (representability
                            # example, not an invariant state space)
    "parabola3": 0,
    "cone3": 0,
}


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


def test_validate_cir(capsys):
    code, rep = _run(capsys, "validate", str(fixture_path("cir")))
    assert code == 0
    assert rep["passed"] and rep["schema"] == 1
    drift_checks = [c for c in rep["checks"] if c["name"] == "facet-0-drift"]
    assert drift_checks[0]["certificate"]["c"] == pytest.approx(1.0)
    assert rep["canonical"] == {"m": 1, "n": 0}
    assert rep["decompose"]["status"] == "ok"


def test_validate_triangle_channel_reports_not_representable(capsys):
    code, rep = _run(capsys, "validate", str(fixture_path("triangle_channel")))
    assert code == 0
    assert rep["passed"]
    assert rep["decompose"]["status"] == "not-representable"
    assert rep["canonical"] == {"m": 0, "n": 2}


def test_validate_golden_verdicts(capsys):
    for name, expected in GOLDEN_VERDICTS.items():
        code, _ = _run(capsys, "validate", str(fixture_path(name)))
        assert code == expected, name


def test_malformed_json_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main(["validate", str(bad)])
    capsys.readouterr()
    assert code == 2


def test_missing_field_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dimension": 1}))
    code = main(["validate", str(bad)])
    capsys.readouterr()
    assert code == 2


def test_decompose_hyperbola_wedge(capsys):
    code, rep = _run(capsys, "decompose", str(fixture_path("hyperbola_wedge")))
    assert code == 0
    dec = rep["decomposition"]
    assert dec["status"] == "ok"
    assert dec["min_eigenvalue"] >= -1e-8
    B0 = np.array(dec["B0"])
    Bi = np.array(dec["Bi"])
    m = load_model(fixture_path("hyperbola_wedge"))
    A0 = B0 + np.tensordot(m.state_space.delta, Bi, axes=(0, 0))
    assert np.abs(A0 - m.diffusion.A0).max() <= 1e-8


def test_decompose_triangle_channel_exit_one(capsys):
    code, rep = _run(capsys, "decompose", str(fixture_path("triangle_channel")))
    assert code == 1
    assert rep["decomposition"]["status"] == "not-representable"


def test_decompose_quadratic_fixtures(capsys):
    code, rep = _run(capsys, "decompose", str(fixture_path("parabola3")))
    assert code == 0
    assert rep["decomposition"]["kind"] == "parabolic"
    assert rep["decomposition"]["c"] == pytest.approx(1.0)
    code, rep = _run(capsys, "decompose", str(fixture_path("cone3")))
    assert code == 0
    assert rep["decomposition"]["kind"] == "conical"
    assert rep["decomposition"]["coeff_zeta"] == pytest.approx(1.0)


def test_classify_fixtures(capsys):
    code, rep = _run(capsys, "classify", str(fixture_path("parabola3")))
    assert code == 0 and rep["classification"]["kind"] == "parabolic"
    code, rep = _run(capsys, "classify", str(fixture_path("cone3")))
    assert code == 0 and rep["classification"]["kind"] == "cone"
    assert rep["classification"]["q"] == 3


def test_canonicalize_writes_transform_and_model(tmp_path, capsys):
    out_model = tmp_path / "canonical.json"
    code, rep = _run(capsys, "canonicalize", str(fixture_path("triangle_channel")),
                     "--model-out", str(out_model))
    assert code == 0
    assert rep["transform"]["m"] == 0 and rep["transform"]["n"] == 2
    transformed = load_model(out_model)
    assert transformed.dimension == 4
    # transformed facets: first two are coordinates
    g = transformed.state_space.gamma
    assert np.allclose(g[:2, :2], np.eye(2), atol=1e-12)


def test_simulate_cir_with_csv(tmp_path, capsys):
    csv = tmp_path / "paths.csv"
    code, rep = _run(capsys, "simulate", str(fixture_path("cir")),
                     "--t", "0.5", "--steps", "50", "--paths", "20",
                     "--seed", "4", "--x0", "0.3", "--csv", str(csv))
    assert code == 0
    sim = rep["simulation"]
    assert sim["exit_fraction"] == 0.0
    lines = csv.read_text().splitlines()
    assert lines[0] == "t,path,x1"
    assert len(lines) == 1 + 20 * 51
    t0, path0, x0 = lines[1].split(",")
    assert float(t0) == 0.0 and int(path0) == 0 and float(x0) == 0.3


def test_simulate_deterministic_reports(capsys):
    args = ["simulate", str(fixture_path("cir")), "--t", "0.2", "--steps", "20",
            "--paths", "10", "--seed", "9"]
    code1, rep1 = _run(capsys, *args)
    code2, rep2 = _run(capsys, *args)
    assert code1 == code2 == 0
    assert rep1 == rep2


def test_simulate_cone_fixture(capsys):
    code, rep = _run(capsys, "simulate", str(fixture_path("cone3")),
                     "--t", "0.2", "--steps", "100", "--paths", "50",
                     "--seed", "3", "--scheme", "plain")
    assert code == 0


def test_tol_flag(capsys):
    code, _ = _run(capsys, "validate", str(fixture_path("cir")),
                   "--tol", "1e-7")
    assert code == 0
    from affinvar.tolerances import TOL, reset_tolerances
    assert TOL.feasibility == pytest.approx(1e-7)
    reset_tolerances()
