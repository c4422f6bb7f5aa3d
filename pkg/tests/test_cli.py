import csv

import numpy as np
import pytest

from sumtrees.cli import fold_assignment, main
from sumtrees.io import read_draws, read_manifest

FAST = ["--m", "5", "--iters", "30", "--burn-in", "10", "--seed", "7"]


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "sim.csv"
    assert main(["simulate", "--n", "120", "--seed", "3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, sim):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--data", str(sim), *FAST, "--out", str(out)]) == 0
    return out


def test_simulate(sim, tmp_path):
    rows = _read_csv(sim)
    assert len(rows) == 120 and list(rows[0]) == ["y", "x1", "x2", "x3"]
    other = tmp_path / "again.csv"
    main(["simulate", "--n", "120", "--seed", "3", "--out", str(other)])
    assert other.read_bytes() == sim.read_bytes()


def test_simulate_single_row(tmp_path):
    assert main(["simulate", "--n", "1", "--out", str(tmp_path / "one.csv")]) == 0
    assert len(_read_csv(tmp_path / "one.csv")) == 1


def test_fit_artifacts(fit_dir):
    assert {p.name for p in fit_dir.iterdir()} == {
        "draws.txt", "manifest.txt", "sigma2_trace.csv", "timing.txt"
    }
    assert read_draws(fit_dir / "draws.txt").n_draws == 20
    manifest = read_manifest(fit_dir / "manifest.txt")
    assert manifest["m"] == "5" and manifest["seed"] == "7"
    assert "result.accept.grow" in manifest
    trace = _read_csv(fit_dir / "sigma2_trace.csv")
    assert len(trace) == 30 and trace[10]["kept_phase"] == "sample"


def test_fit_deterministic(sim, fit_dir, tmp_path):
    assert main(["fit", "--data", str(sim), *FAST, "--out", str(tmp_path)]) == 0
    for name in ("draws.txt", "manifest.txt", "sigma2_trace.csv"):
        assert (tmp_path / name).read_bytes() == (fit_dir / name).read_bytes()


def test_manifest_rerun(fit_dir, tmp_path):
    assert main(["fit", "--config", str(fit_dir / "manifest.txt"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "draws.txt").read_bytes() == (fit_dir / "draws.txt").read_bytes()


def test_flag_overrides_config(fit_dir, tmp_path):
    assert main(["fit", "--config", str(fit_dir / "manifest.txt"), "--seed", "8",
                 "--out", str(tmp_path)]) == 0
    assert read_manifest(tmp_path / "manifest.txt")["seed"] == "8"
    assert (tmp_path / "draws.txt").read_bytes() != (fit_dir / "draws.txt").read_bytes()


@pytest.mark.parametrize("interval", ["credible", "prediction"])
def test_predict(sim, fit_dir, tmp_path, interval):
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(fit_dir), "--data", str(sim), "--interval", interval,
                 "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert len(rows) == 120 and list(rows[0]) == ["mean", "lower95", "upper95"]
    for r in rows:
        assert float(r["lower95"]) <= float(r["mean"]) <= float(r["upper95"])


def test_predict_binary(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(80, 2))
    y = (x[:, 0] + rng.normal(size=80) > 0).astype(int)
    data = tmp_path / "bin.csv"
    data.write_text("y,a,b\n" + "".join(f"{y[i]},{x[i, 0]},{x[i, 1]}\n" for i in range(80)))
    assert main(["fit", "--data", str(data), "--binary", *FAST, "--out", str(tmp_path / "fit")]) == 0
    out = tmp_path / "p.csv"
    assert main(["predict", "--model", str(tmp_path / "fit"), "--data", str(data), "--out", str(out)]) == 0
    probs = np.array([float(r["prob"]) for r in _read_csv(out)])
    assert np.all((probs > 0) & (probs < 1))


def test_predict_schema_mismatch(fit_dir, tmp_path, capsys):
    data = tmp_path / "other.csv"
    data.write_text("x1,x2\n1,2\n")
    assert main(["predict", "--model", str(fit_dir), "--data", str(data)]) == 3
    assert "x3" in capsys.readouterr().err


def test_cv(sim, tmp_path):
    out = tmp_path / "cv.csv"
    assert main(["cv", "--data", str(sim), *FAST, "--folds", "3", "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert [r["fold"] for r in rows] == ["1", "2", "3", "mean", "pooled"]
    assert sum(int(r["n_test"]) for r in rows[:3]) == 120
    again = tmp_path / "cv2.csv"
    main(["cv", "--data", str(sim), *FAST, "--folds", "3", "--out", str(again)])
    assert again.read_bytes() == out.read_bytes()


def test_cv_too_many_folds(sim):
    assert main(["cv", "--data", str(sim), *FAST, "--folds", "500"]) == 2


def test_fold_assignment():
    a = fold_assignment(23, 5, seed=4)
    assert np.array_equal(a, fold_assignment(23, 5, seed=4))
    assert np.bincount(a).tolist() in ([5, 5, 5, 4, 4],)
    loo = fold_assignment(6, 6, seed=0)
    assert sorted(loo.tolist()) == list(range(6))


def test_diagnose(fit_dir, capsys):
    assert main(["diagnose", "--model", str(fit_dir)]) == 0
    report = capsys.readouterr().out
    for needle in ("sigma2", "acceptance", "tree depth", "leaves per tree", "grow"):
        assert needle in report


def test_diagnose_truncated(fit_dir, tmp_path, capsys):
    lines = (fit_dir / "draws.txt").read_text().splitlines()
    bad = tmp_path / "draws.txt"
    bad.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    assert main(["diagnose", "--model", str(bad)]) == 3
    assert "record count mismatch" in capsys.readouterr().err


def test_missing_outcome_column(sim, tmp_path, capsys):
    code = main(["fit", "--data", str(sim), "--outcome", "price", *FAST, "--out", str(tmp_path)])
    assert code == 3
    assert "price" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "--out", "x"],
        ["fit", "--data", "d.csv", "--iters", "5", "--burn-in", "9", "--out", "x"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == 2


def test_car_component(tmp_path):
    rng = np.random.default_rng(2)
    areas = np.array(["a", "b", "c", "d"])[rng.integers(0, 4, 90)]
    x = rng.normal(size=90)
    y = x + (areas == "a") + rng.normal(size=90)
    data = tmp_path / "car.csv"
    data.write_text("y,x,area\n" + "".join(f"{y[i]},{x[i]},{areas[i]}\n" for i in range(90)))
    edges = tmp_path / "edges.csv"
    edges.write_text("from,to\na,b\nb,c\nc,d\n")
    args = ["fit", "--data", str(data), "--bart-cols", "x", "--group-col", "area",
            "--h-component", "car", "--adjacency", str(edges), *FAST, "--out", str(tmp_path / "fit")]
    assert main(args) == 0
    assert read_draws(tmp_path / "fit" / "draws.txt").theta.shape == (20, 4)
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(tmp_path / "fit"), "--data", str(data), "--out", str(out)]) == 0
    assert len(_read_csv(out)) == 90


def test_car_needs_adjacency(sim, tmp_path):
    code = main(["fit", "--data", str(sim), "--group-col", "x1", "--h-component", "car", *FAST,
                 "--out", str(tmp_path)])
    assert code == 2
