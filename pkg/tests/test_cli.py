import json
import logging
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from globalload.cli import build_parser, main, resolve_config
from globalload.model import load_model

TINY = [
    "--set", "K=48", "--set", "H=8", "--set", "width=8", "--set", "n_blocks=2",
    "--set", "n_fc_layers=2", "--set", "train_weeks=2", "--set", "val_weeks=1",
    "--set", "test_weeks=1", "--set", "train_stride=6", "--set", "eval_stride=8",
    "--set", "batch_size=64",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    wd = tmp_path_factory.mktemp("cli")
    args = ["--workdir", str(wd), *TINY]
    assert main(["generate", "--seed", "3", "--per-type", "2", "--weeks", "5", *args]) == 0
    assert main(["train-global", "--max-epochs", "2", *args]) == 0
    assert main(["localize", "--clusters", "2", "--ft-max-epochs", "1", *args]) == 0
    assert main(["ensemble", *args]) == 0
    assert main(["evaluate", *args]) == 0
    return wd


class TestConfig:
    def test_precedence(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[pipeline]\nwidth = 16\nclusters = 4\n")
        args = build_parser().parse_args(
            ["localize", "--config", str(ini), "--clusters", "3", "--set", "eps=0.1"]
        )
        cfg = resolve_config(args)
        assert (cfg.width, cfg.clusters, cfg.eps, cfg.max_epochs) == (16, 3, 0.1, 100)

    def test_usage_errors(self):
        for argv in (
            ["generate", "--per-type", "0"],
            ["train-global", "--set", "nonsense=1"],
            ["train-global", "--set", "width"],
            ["bogus"],
        ):
            with pytest.raises(SystemExit) as err:
                main(argv)
            assert err.value.code == 2


class TestGenerate:
    def test_forty_series_and_rerun_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert main(["generate", "--seed", "1", "--per-type", "10", "--weeks", "3",
                         "--workdir", str(tmp_path), "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        df = pd.read_csv(a)
        assert df["id"].nunique() == 40
        assert list(df.columns) == ["timestamp", "id", "value", "agg"]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 1 and manifest["n_series"] == 40

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["generate", "--per-type", "1", "--weeks", "3", "--out", str(blocker / "x.csv")]) == 1


class TestPipeline:
    def test_artifacts(self, workdir):
        assert load_model(workdir / "models" / "global.gcm").config.width == 8
        assert sorted(p.name for p in (workdir / "models").glob("model_l*")) == [
            "model_l1_c0.gcm", "model_l1_c1.gcm"
        ]
        for name in ("hierarchy.json", "selections.json", "reports/summary.csv",
                     "reports/per_horizon.csv", "reports/train_global.csv"):
            assert (workdir / name).exists(), name

    def test_naive_column_is_one(self, workdir):
        summary = pd.read_csv(workdir / "reports" / "summary.csv")
        naive = summary[summary["strategy"] == "naive"]
        assert np.all(naive["mase"] == 1.0)

    def test_ens_never_worse_than_global_on_validation(self, workdir):
        wide = pd.read_csv(workdir / "reports" / "validation_mase_by_strategy.csv")
        assert np.all(wide["ens"] <= wide["global"])
        assert np.all(wide["ens"] <= wide["best"]) and np.all(wide["best"] <= wide["all"])

    def test_per_series_header(self, workdir):
        head = (workdir / "reports" / "test_ens_per_series.csv").read_text().splitlines()[0]
        assert head == "id,agg_type,mase,mape,nmae"

    def test_forecast(self, workdir):
        out = workdir / "fc.csv"
        assert main(["forecast", "--workdir", str(workdir), "--out", str(out), *TINY]) == 0
        df = pd.read_csv(out)
        assert len(df) == 8 * 8 and np.all(np.isfinite(df["forecast"]))

    def test_resume_keeps_models(self, workdir):
        path = workdir / "models" / "model_l1_c0.gcm"
        before = path.read_bytes()
        assert main(["localize", "--workdir", str(workdir), "--clusters", "2", "--resume", *TINY]) == 0
        assert path.read_bytes() == before

    def test_missing_data(self, tmp_path, capsys):
        code = main(["train-global", "--workdir", str(tmp_path), *TINY])
        assert code == 1
        assert "FileNotFoundError" in capsys.readouterr().err

    def test_subsample_logged(self, workdir, caplog):
        with caplog.at_level(logging.INFO, logger="globalload"):
            assert main(["train-global", "--workdir", str(workdir / "sub"),
                         "--data", str(workdir / "data" / "series.csv"),
                         "--subsample", "3", "--max-epochs", "0", *TINY]) == 0
        rows = [r.getMessage() for r in caplog.records if "training rows" in r.getMessage()]
        assert rows and "subsample 3" in rows[0]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "globalload", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "train-global" in out.stdout
