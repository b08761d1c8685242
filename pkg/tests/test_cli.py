"""Integration-style tests for the CLI entry point."""

import json
from pathlib import Path
from typing import get_args

import numpy as np
import pandas as pd
import pytest

from gsrpde import cli, data_io
from gsrpde.config_models import StudyCase


@pytest.fixture()
def workspace(make_square, tmp_path: Path) -> dict[str, Path]:
    """Square mesh, pointwise gaussian/poisson data, an areal table and probes."""

    mesh = make_square(4)
    rng = np.random.default_rng(42)
    n = 80
    points = rng.uniform(0.05, 0.95, size=(n, 2))
    x1 = rng.uniform(0.0, 1.0, n)
    signal = np.sin(3.0 * points[:, 0]) + 0.8 * x1
    gaussian = pd.DataFrame(
        {"px": points[:, 0], "py": points[:, 1], "y": signal + 0.1 * rng.standard_normal(n), "x1": x1}
    )
    counts = gaussian.assign(y=rng.poisson(np.exp(1.0 + 0.5 * signal)))

    region_lines = [f"{t // 2} {t}" for t in range(mesh.n_triangles)]
    areal = pd.DataFrame(
        {
            "region_id": np.arange(mesh.n_triangles // 2),
            "y": rng.poisson(5.0, size=mesh.n_triangles // 2),
            "x1": rng.uniform(0.0, 1.0, size=mesh.n_triangles // 2),
        }
    )

    paths = {
        "mesh": data_io.write_mesh(mesh, tmp_path / "square.mesh"),
        "other_mesh": data_io.write_mesh(make_square(3), tmp_path / "other.mesh"),
        "gaussian": tmp_path / "gaussian.csv",
        "counts": tmp_path / "counts.csv",
        "areal": tmp_path / "areal.csv",
        "regions": tmp_path / "square.regions",
        "probes": tmp_path / "probes.csv",
    }
    gaussian.to_csv(paths["gaussian"], index=False)
    counts.to_csv(paths["counts"], index=False)
    areal.to_csv(paths["areal"], index=False)
    paths["regions"].write_text("\n".join(region_lines) + "\n", encoding="utf-8")
    pd.DataFrame({"px": [0.5, 0.25, 0.75], "py": [0.5, 0.6, 0.1]}).to_csv(paths["probes"], index=False)
    return paths


def test_fit_then_eval_round_trip(workspace, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """A fixed-lambda fit writes fit.json and nodal values that eval can reuse."""

    out = tmp_path / "fit"
    code = cli.main(
        ["fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["gaussian"]), "--lambda", "0.01", "--out", str(out)]
    )
    assert code == 0
    assert "family=gaussian lambda=0.01 iterations=1 converged=true" in capsys.readouterr().out
    document = json.loads((out / "fit.json").read_text(encoding="utf-8"))
    assert document["lambda"] == pytest.approx(0.01)
    assert document["covariate_names"] == ["x1"]
    assert not (out / "scan.csv").exists()
    nodal = pd.read_csv(out / "field.csv")
    assert list(nodal.columns) == ["node", "x", "y", "f"]
    assert len(nodal) == 25

    evaluated = tmp_path / "eval"
    code = cli.main(
        ["eval", "--fit", str(out / "fit.json"), "--mesh", str(workspace["mesh"]), "--grid", "5", "5", "--out", str(evaluated)]
    )
    assert code == 0
    grid = pd.read_csv(evaluated / "field.csv")
    assert len(grid) == 25
    # Grid points coincide with the mesh nodes of a 4 x 4 square.
    np.testing.assert_allclose(np.sort(grid["f"].to_numpy()), np.sort(nodal["f"].to_numpy()), atol=1e-12)

    code = cli.main(
        ["eval", "--fit", str(out / "fit.json"), "--mesh", str(workspace["mesh"]), "--points", str(workspace["probes"]), "--out", str(evaluated)]
    )
    assert code == 0
    assert len(pd.read_csv(evaluated / "field.csv")) == 3


def test_eval_rejects_a_different_mesh(workspace, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out = tmp_path / "fit"
    assert cli.main(["fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["gaussian"]), "--lambda", "1", "--out", str(out)]) == 0
    code = cli.main(
        ["eval", "--fit", str(out / "fit.json"), "--mesh", str(workspace["other_mesh"]), "--grid", "2", "2", "--out", str(out)]
    )
    assert code == 1
    assert "different mesh" in capsys.readouterr().err


@pytest.mark.parametrize("command", [["fit", "--gcv"], ["gcv-scan"]])
def test_gcv_writes_the_scan_table(workspace, tmp_path: Path, command: list[str]) -> None:
    out = tmp_path / "scan"
    code = cli.main(
        command
        + ["--mesh", str(workspace["mesh"]), "--data", str(workspace["counts"]), "--family", "poisson"]
        + ["--grid-min", "1e-3", "--grid-max", "10", "--grid-count", "5", "--grid", "3", "3", "--out", str(out)]
    )
    assert code == 0
    scan = pd.read_csv(out / "scan.csv")
    assert list(scan.columns) == ["lambda", "gcv", "edf", "converged"]
    assert len(scan) == 5
    assert list(pd.read_csv(out / "field.csv").columns) == ["x", "y", "f"]
    document = json.loads((out / "fit.json").read_text(encoding="utf-8"))
    assert document["lambda"] in scan["lambda"].tolist()


def test_areal_fit(workspace, tmp_path: Path) -> None:
    out = tmp_path / "areal"
    code = cli.main(
        ["fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["areal"]), "--regions", str(workspace["regions"])]
        + ["--family", "poisson", "--lambda", "0.1", "--out", str(out)]
    )
    assert code == 0
    assert json.loads((out / "fit.json").read_text(encoding="utf-8"))["family"] == "poisson"


def test_areal_data_requires_regions(workspace, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """region_id rows without --regions are an input error."""

    code = cli.main(
        ["fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["areal"]), "--lambda", "0.1", "--out", str(tmp_path)]
    )
    assert code == 1
    assert "--regions is required for areal data" in capsys.readouterr().err


def test_point_data_rejects_regions(workspace, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """A region file given with px,py rows is an input error."""

    code = cli.main(
        ["fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["gaussian"]), "--regions", str(workspace["regions"])]
        + ["--lambda", "0.1", "--out", str(tmp_path / "fit")]
    )
    assert code == 1
    assert "--regions only applies to areal data" in capsys.readouterr().err
    assert not (tmp_path / "fit" / "fit.json").exists()


@pytest.mark.parametrize(
    ("extra", "message"),
    [
        ([], "one of --lambda or --gcv is required"),
        (["--lambda", "1", "--gcv"], "not allowed with argument"),
        (["--lambda", "-1"], "greater than 0"),
        (["--gcv", "--gamma", "0.5"], "gamma must be >= 1"),
    ],
)
def test_invalid_fit_options(workspace, tmp_path: Path, capsys, extra: list[str], message: str) -> None:
    code = cli.main(["fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["gaussian"]), "--out", str(tmp_path)] + extra)
    assert code == 1
    assert message in capsys.readouterr().err


def test_missing_inputs_exit_with_one(workspace, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = cli.main(["fit", "--mesh", str(tmp_path / "none.mesh"), "--data", str(workspace["gaussian"]), "--lambda", "1"])
    assert code == 1
    assert "File not found" in capsys.readouterr().err
    assert cli.main(["fit", "--mesh", str(workspace["mesh"]), "--data", str(tmp_path / "none.csv"), "--lambda", "1"]) == 1
    assert cli.main(["frobnicate"]) == 1


def test_strict_non_convergence_exits_with_two(workspace, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """--strict turns a PIRLS iteration cap into a numerical failure and writes nothing."""

    out = tmp_path / "strict"
    args = ["fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["counts"]), "--family", "poisson"]
    args += ["--lambda", "0.1", "--max-iter", "1", "--out", str(out)]
    assert cli.main(args + ["--strict"]) == 2
    assert "did not converge" in capsys.readouterr().err
    assert not (out / "fit.json").exists()

    assert cli.main(args) == 0
    assert json.loads((out / "fit.json").read_text(encoding="utf-8"))["converged"] is False


def test_rank_deficient_covariates_exit_with_two(workspace, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    frame = pd.read_csv(workspace["gaussian"])
    frame["x2"] = 2.0 * frame["x1"]
    path = tmp_path / "collinear.csv"
    frame.to_csv(path, index=False)
    code = cli.main(["fit", "--mesh", str(workspace["mesh"]), "--data", str(path), "--lambda", "1", "--out", str(tmp_path)])
    assert code == 2
    assert "rank deficient" in capsys.readouterr().err


def test_stats_writes_variance_and_covariance(workspace, tmp_path: Path) -> None:
    out = tmp_path / "stats"
    code = cli.main(
        ["stats", "--mesh", str(workspace["mesh"]), "--data", str(workspace["gaussian"]), "--lambda", "0.1"]
        + ["--sigma2", "0.25", "--probes", str(workspace["probes"]), "--covariates", "--out", str(out)]
    )
    assert code == 0
    stats = pd.read_csv(out / "stats.csv")
    assert list(stats.columns) == ["x", "y", "variance"]
    assert (stats["variance"] >= 0).all()
    covariance = pd.read_csv(out / "covariance.csv")
    assert list(covariance.columns) == ["p0", "p1", "p2"]
    np.testing.assert_allclose(np.diag(covariance.to_numpy()), stats["variance"], rtol=1e-12)


def test_export_matrices(workspace, tmp_path: Path) -> None:
    out = tmp_path / "matrices"
    code = cli.main(["export-matrices", "--mesh", str(workspace["mesh"]), "--data", str(workspace["gaussian"]), "--out", str(out)])
    assert code == 0
    assert (out / "r0.txt").read_text(encoding="utf-8").splitlines()[0].startswith("25 25 ")
    assert (out / "r1.txt").exists()
    assert (out / "psi.txt").read_text(encoding="utf-8").splitlines()[0].startswith("80 25 ")

    bare = tmp_path / "bare"
    assert cli.main(["export-matrices", "--mesh", str(workspace["mesh"]), "--out", str(bare)]) == 0
    assert not (bare / "psi.txt").exists()


def test_simulate_is_reproducible(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Two runs with the same seed write identical tables."""

    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = cli.main(
            ["--threads", "2", "simulate", "--case", "areal-poisson", "--reps", "2", "--seed", "9", "--grid-count", "3", "--out", str(out)]
        )
        assert code == 0
        outputs.append(out)
    assert "x1: mean=" in capsys.readouterr().out
    for table in ("replicates.csv", "rmse.csv", "beta_summary.csv"):
        assert (outputs[0] / table).read_text(encoding="utf-8") == (outputs[1] / table).read_text(encoding="utf-8")
    assert len(pd.read_csv(outputs[0] / "replicates.csv")) == 2


def test_threads_from_environment(workspace, tmp_path: Path, monkeypatch: pytest.MonkeyPatch, capsys) -> None:
    args = ["gcv-scan", "--mesh", str(workspace["mesh"]), "--data", str(workspace["gaussian"]), "--grid-count", "3", "--out", str(tmp_path)]
    monkeypatch.setenv(cli.THREADS_ENV_VAR, "2")
    assert cli.main(args) == 0
    monkeypatch.setenv(cli.THREADS_ENV_VAR, "many")
    assert cli.main(args) == 1
    assert "must be an integer" in capsys.readouterr().err
    monkeypatch.delenv(cli.THREADS_ENV_VAR)
    assert cli.main(["--threads", "0"] + args) == 1


def test_config_file_errors_exit_with_one(workspace, write_file, tmp_path: Path, capsys) -> None:
    config = write_file(tmp_path / "bad.toml", "[telemetry]\nenabled = true\n")
    code = cli.main(["--config", str(config), "export-matrices", "--mesh", str(workspace["mesh"]), "--out", str(tmp_path)])
    assert code == 1
    assert "Unknown configuration section(s): telemetry" in capsys.readouterr().err


def test_config_file_sets_solver_defaults(workspace, write_file, tmp_path: Path) -> None:
    config = write_file(tmp_path / "gsrpde.toml", "[solver]\nmax_iter = 1\n")
    out = tmp_path / "fit"
    code = cli.main(
        ["--config", str(config), "fit", "--mesh", str(workspace["mesh"]), "--data", str(workspace["counts"])]
        + ["--family", "poisson", "--lambda", "0.1", "--out", str(out)]
    )
    assert code == 0
    assert json.loads((out / "fit.json").read_text(encoding="utf-8"))["iterations"] == 1


@pytest.mark.parametrize("case", get_args(StudyCase))
def test_simulate_accepts_every_study_case(case: str) -> None:
    assert cli.build_main_parser().parse_args(["simulate", "--case", case]).case == case


def test_simulate_rejects_unknown_case(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit):
        cli.build_main_parser().parse_args(["simulate", "--case", "areal-gamma"])
    assert "invalid choice" in capsys.readouterr().err
