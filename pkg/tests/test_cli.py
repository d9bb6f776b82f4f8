import json
import math

import numpy as np
import pytest

from tdistfit.accel import Scheme
from tdistfit.cli import (
    CSV_COLUMNS,
    EXIT_DATA,
    EXIT_NO_REGIONS,
    EXIT_OK,
    EXIT_USAGE,
    SimulationSpec,
    algorithm_label,
    main,
    parse_algorithm,
    rows_from_csv,
    rows_to_csv,
    run_simulation,
    summarize,
)
from tdistfit.estimators import AlgorithmKind
from tdistfit.noise import RegionReport, cartoon_image, noisy_image, write_csv_matrix, write_pgm


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def strip_timing(text):
    rows = rows_from_csv(text)
    for r in rows:
        r.pop("seconds")
    return rows


# -- argument parsing -----------------------------------------------------------------


def test_parse_algorithm():
    assert parse_algorithm("gmmf") == (AlgorithmKind.GMMF, Scheme.NONE)
    assert parse_algorithm("squarem-gmmf") == (AlgorithmKind.GMMF, Scheme.SQUAREM)
    assert parse_algorithm("daarem:mmf") == (AlgorithmKind.MMF, Scheme.DAAREM)
    assert algorithm_label(AlgorithmKind.MMF, Scheme.DAAREM) == "daarem-mmf"
    with pytest.raises(ValueError):
        parse_algorithm("fast-em")


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys)[0] == EXIT_USAGE
    assert run(capsys, "fit")[0] == EXIT_USAGE
    assert run(capsys, "simulate", "--tol", "-1")[0] == EXIT_USAGE
    assert run(capsys, "--help")[0] == EXIT_OK


def test_simulation_spec_validation():
    with pytest.raises(ValueError):
        SimulationSpec(d=2, n=2, nu_list=[1.0], trials=1)
    with pytest.raises(ValueError):
        SimulationSpec(d=2, n=10, nu_list=[1.0], trials=0)


# -- simulate -------------------------------------------------------------------------------


def test_simulate_deterministic(capsys):
    argv = ["simulate", "--n", 200, "--nu", 2, 5, "--trials", 1, "--seed", 11, "--format", "csv"]
    code1, out1, _ = run(capsys, *argv)
    code2, out2, _ = run(capsys, *argv)
    assert code1 == code2 == EXIT_OK
    assert out1.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert strip_timing(out1) == strip_timing(out2)
    assert len(rows_from_csv(out1)) == 2 * len(AlgorithmKind)


def test_simulate_independent_of_jobs():
    spec = SimulationSpec(
        d=2, n=150, nu_list=[3.0], trials=4, seed=5,
        algorithms=[(AlgorithmKind.MMF, Scheme.NONE), (AlgorithmKind.GMMF, Scheme.SQUAREM)],
    )
    a = run_simulation(spec, jobs=1)
    b = run_simulation(spec, jobs=2)
    for r in a + b:
        r.pop("seconds")
    assert a == b


def test_simulate_output_files(tmp_path, capsys):
    prefix = tmp_path / "out"
    code, out, _ = run(
        capsys, "simulate", "--d", 3, "--n", 100, "--nu", 4, "--sigma", "1 0 0; 0 2 0; 0 0 0.5",
        "--trials", 3, "--algorithms", "mmf", "daarem-gmmf", "--output", prefix,
    )
    assert code == EXIT_OK and out == ""
    rows = rows_from_csv((tmp_path / "out.csv").read_text())
    report = json.loads((tmp_path / "out.json").read_text())
    assert report["spec"]["sigma"][1][1] == 2.0
    assert set(report["cells"]) == {"mmf", "daarem-gmmf"}
    cell = report["cells"]["mmf"]["4.0"]
    assert cell["trials"] == 3
    mmf_rows = [r for r in rows if r["algo"] == "mmf"]
    assert cell["iterations_mean"] == pytest.approx(np.mean([r["iterations"] for r in mmf_rows]))
    assert cell["nu_hat"] == [r["nu_hat"] for r in mmf_rows]


def test_simulate_bad_sigma(capsys):
    code, _, err = run(capsys, "simulate", "--d", 2, "--sigma", "1 0 0; 0 1 0; 0 0 1", "--trials", 1)
    assert code == EXIT_DATA and "error" in err


def test_csv_round_trip():
    spec = SimulationSpec(d=2, n=80, nu_list=[1.5], trials=2, seed=3,
                          algorithms=[(AlgorithmKind.ECME, Scheme.NONE)])
    rows = run_simulation(spec)
    back = rows_from_csv(rows_to_csv(rows))
    assert back == rows
    assert summarize(back) == summarize(rows)


@pytest.mark.slow
def test_simulate_table_row_em(capsys):
    # Sigma = I, nu = 2, n = 1000, N = 100; EM mean iterations within [37, 55]
    code, out, _ = run(capsys, "simulate", "--nu", 2, "--trials", 100, "--algorithms", "em", "--format", "json")
    assert code == EXIT_OK
    cell = json.loads(out)["cells"]["em"]["2.0"]
    assert 37 <= cell["iterations_mean"] <= 55


# -- fit ------------------------------------------------------------------------------------


@pytest.fixture
def sample_csv(tmp_path):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((300, 2)) / np.sqrt(rng.chisquare(3, (300, 1)) / 3)
    path = tmp_path / "x.csv"
    path.write_text("a,b\n" + "\n".join(f"{float(u)!r},{float(v)!r}" for u, v in x))
    return path


def test_fit_fixed_nu_trace_identity(tmp_path, capsys):
    path = tmp_path / "three.csv"
    path.write_text("-1.0\n0.5\n4.0\n")
    code, out, _ = run(capsys, "fit", path, "--fixed-nu", 1, "--tol", "1e-12", "--algorithm", "mmf")
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["nu"] == 1.0
    x = np.array([-1.0, 0.5, 4.0])
    delta = (x - res["mu"][0]) ** 2 / res["sigma"][0][0]
    nu, d = 1.0, 1
    assert abs((d + nu) * np.mean(1.0 / (nu + delta)) - 1.0) <= 1e-8


def test_fit_gmmf_matches_mmf(sample_csv, capsys):
    _, out_g, _ = run(capsys, "fit", sample_csv, "--algorithm", "gmmf", "--tol", "1e-10")
    _, out_m, _ = run(capsys, "fit", sample_csv, "--algorithm", "mmf", "--tol", "1e-10")
    g, m = json.loads(out_g), json.loads(out_m)
    assert g["status"] == m["status"] == "Converged"
    assert g["nu"] == pytest.approx(m["nu"], rel=1e-4)
    assert g["objective_trace"][-1] == g["final_L"]


def test_fit_accelerated_and_output_file(sample_csv, tmp_path, capsys):
    dest = tmp_path / "res.json"
    code, out, _ = run(capsys, "fit", sample_csv, "--scheme", "squarem", "--output", dest)
    assert code == EXIT_OK and out == ""
    res = json.loads(dest.read_text())
    assert res["scheme"] == "squarem"
    assert res["map_evaluations"] >= res["iterations"]


def test_fit_max_iters_exit_code(sample_csv, capsys):
    code, out, _ = run(capsys, "fit", sample_csv, "--algorithm", "em", "--max-iters", 2)
    assert code == 1
    assert json.loads(out)["status"] == "MaxIters"


def test_fit_gaussian_limit_is_success(tmp_path, capsys):
    t = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    path = tmp_path / "circle.csv"
    path.write_text("\n".join(f"{float(np.cos(a))!r},{float(np.sin(a))!r}" for a in t))
    code, out, _ = run(capsys, "fit", path, "--algorithm", "gmmf")
    res = json.loads(out)
    assert code == EXIT_OK
    assert res["status"] == "GaussianLimit"
    assert res["gaussian_sigma"] is not None


@pytest.mark.parametrize(
    "content,pattern",
    [("", "empty"), ("1,2\n3,x\n", ":2:"), ("1,2\n3,4\n", "at least"), ("1,2\n3\n", ":2:")],
)
def test_fit_data_errors(tmp_path, capsys, content, pattern):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    code, _, err = run(capsys, "fit", path)
    assert code == EXIT_DATA
    assert pattern in err


def test_fit_missing_file(tmp_path, capsys):
    assert run(capsys, "fit", tmp_path / "nope.csv")[0] == EXIT_DATA


# -- noise-estimate ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def noisy_pixels():
    img = noisy_image(cartoon_image(256), 1.0, 10.0, np.random.default_rng(9))
    return np.clip(np.rint(img.pixels), 0, 65535).astype(int)


def test_noise_estimate_format_equivalence(tmp_path, capsys, noisy_pixels):
    write_pgm(tmp_path / "img.pgm", noisy_pixels)
    write_csv_matrix(tmp_path / "img.csv", noisy_pixels)
    code_a, out_a, _ = run(capsys, "noise-estimate", tmp_path / "img.pgm", "--min-regions", 5)
    code_b, out_b, _ = run(capsys, "noise-estimate", tmp_path / "img.csv", "--min-regions", 5)
    assert code_a == code_b == EXIT_OK
    a, b = RegionReport.from_json(out_a), RegionReport.from_json(out_b)
    assert a == b
    assert len(a.per_block) == len(a.blocks)
    assert a.nu_geom == pytest.approx(1.0, rel=0.3)


def test_noise_estimate_alpha_monotone(tmp_path, capsys, noisy_pixels):
    write_pgm(tmp_path / "img.pgm", noisy_pixels)
    counts = {}
    for alpha in (0.01, 0.5):
        code, out, _ = run(capsys, "noise-estimate", tmp_path / "img.pgm", "--alpha", alpha, "--min-regions", 10**6)
        assert code == EXIT_OK
        counts[alpha] = len(json.loads(out)["blocks"])
    assert counts[0.5] < counts[0.01]


def test_noise_estimate_no_regions(tmp_path, capsys):
    board = (np.indices((64, 64)).sum(axis=0) % 2) * 200
    write_pgm(tmp_path / "board.pgm", board)
    code, out, err = run(capsys, "noise-estimate", tmp_path / "board.pgm")
    assert code == EXIT_NO_REGIONS
    assert out == "" and "error" in err


def test_noise_estimate_degenerate_and_bad_image(tmp_path, capsys):
    write_pgm(tmp_path / "flat.pgm", np.full((64, 64), 7))
    code, out, _ = run(capsys, "noise-estimate", tmp_path / "flat.pgm", "--min-regions", 1)
    assert code == EXIT_DATA
    assert json.loads(out)["degenerate"] is True
    (tmp_path / "junk.pgm").write_bytes(b"P7\n")
    assert run(capsys, "noise-estimate", tmp_path / "junk.pgm")[0] == EXIT_DATA
    assert run(capsys, "noise-estimate", tmp_path / "flat.pgm", "--alpha", "1.5")[0] == EXIT_DATA


def test_json_report_round_trip(tmp_path, capsys, noisy_pixels):
    write_pgm(tmp_path / "img.pgm", noisy_pixels)
    _, out, _ = run(capsys, "noise-estimate", tmp_path / "img.pgm", "--min-regions", 5)
    rep = RegionReport.from_json(out)
    assert json.loads(rep.to_json()) == json.loads(out)
    assert all(math.isfinite(b.nu) or b.status != "Converged" for b in rep.per_block)
