import json

import pytest

from salience.cli import main
from salience.config import load_config
from salience.errors import ConfigError
from salience.training import compare_models, read_cells

from conftest import DESK, PIPELINE, SMOKE


def _manifest(workdir):
    return [json.loads(l) for l in (workdir / "manifest.jsonl").read_text().splitlines()]


def test_pipeline_outputs(smoke_run):
    for name in ("dataset.csv", "tuning.csv", "validation.csv", "scaling.csv", "tuned.json", "cells.csv",
                 "report.json", "latents_rnn.csv", "latents_mlp.csv", "encoders/rnn/params.bin",
                 "embed/rnn/embedding.csv", "embed/rnn/pca.csv", "embed/rnn/recovery.json",
                 "embed/rnn/embedding.svg", "embed/rnn/transducer_stats.csv",
                 "partition/rnn/inertia.csv", "partition/rnn/assignments.csv",
                 "partition/rnn/profiles.csv", "partition/rnn/partition.json"):
        assert (smoke_run / name).exists(), name
    runs = _manifest(smoke_run)
    assert [r["subcommand"] for r in runs] == list(PIPELINE)
    assert all(r["status"] == "ok" and r["seed"] == 0 for r in runs)


def test_report_matches_cells(smoke_run):
    report = json.loads((smoke_run / "report.json").read_text())
    direct = compare_models(read_cells(smoke_run / "cells.csv"))
    assert report["ranking"] == direct["ranking"]
    for m, v in direct["mean_global_smape"].items():
        assert report["mean_global_smape"][m] == pytest.approx(v, rel=1e-12)


def test_simulate_is_deterministic(tmp_path, smoke_run):
    assert main(["simulate", "--config", str(SMOKE), "--workdir", str(tmp_path)]) == 0
    assert (tmp_path / "dataset.csv").read_bytes() == (smoke_run / "dataset.csv").read_bytes()


def test_seed_override_changes_data(tmp_path, smoke_run):
    assert main(["simulate", "--config", str(SMOKE), "--workdir", str(tmp_path), "--seed", "5"]) == 0
    assert (tmp_path / "dataset.csv").read_bytes() != (smoke_run / "dataset.csv").read_bytes()
    assert _manifest(tmp_path)[0]["seed"] == 5


def test_train_single_model(tmp_path, smoke_run):
    for name in ("tuning.csv", "validation.csv", "scaling.csv", "tuned.json"):
        (tmp_path / name).write_bytes((smoke_run / name).read_bytes())
    assert main(["train", "--model", "mlp", "--config", str(SMOKE), "--workdir", str(tmp_path)]) == 0
    assert (tmp_path / "models" / "mlp" / "params.bin").exists()


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fly", "--config", "x", "--workdir", "y"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    code = main(["simulate", "--config", str(tmp_path / "none.ini"), "--workdir", str(tmp_path)])
    err = capsys.readouterr().err.strip()
    assert code == 2 and err.startswith("error code=2 kind=config message=")
    assert _manifest(tmp_path)[0]["status"] == "error:config"


def test_missing_input(tmp_path, capsys):
    code = main(["report", "--config", str(SMOKE), "--workdir", str(tmp_path)])
    assert code == 3
    assert "crossval" in capsys.readouterr().err


def test_bad_override(tmp_path, capsys):
    code = main(["simulate", "--config", str(SMOKE), "--workdir", str(tmp_path), "--set", "simulation.max_T=1"])
    assert code == 2
    code = main(["simulate", "--config", str(SMOKE), "--workdir", str(tmp_path), "--set", "tune.colour=red"])
    assert code == 2


def test_config_loading():
    cfg = load_config(DESK)
    assert len(cfg.profiles) == 6 and cfg.n_per_object >= 2000
    assert cfg.crossval.k == 10 and cfg.tune.budget_epochs == 40
    cfg2 = load_config(DESK, ["run.seed=9", "embed.n_neighbors=20"])
    assert cfg2.seed == 9 and cfg2.embed.n_neighbors == 20
    with pytest.raises(ConfigError):
        load_config(DESK, ["nosection.key=1"])
