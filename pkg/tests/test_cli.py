import json

import numpy as np
import pytest

from onoff_nilm import cli
from onoff_nilm.synth import load_dataset


def write_cfg(tmp_path, **kw):
    cfg = {"source": {"kind": "synthetic", "n_devices": 6, "duration": 2 * 86400.0},
           "group": "RE", "dit_list": [4], "window_len": 128, "n_samples": 40,
           "n_max_ad": 3, "n_avg_max_ad": 3, "width_scale": 1 / 16,
           "models": ["ctrnn", "rf", "random"], "train": {"epochs": 1}, "forest_size": 5}
    cfg.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


class Oracle:
    """Stand-in estimator that returns the stored test labels."""

    n_outputs_ = 4

    def __init__(self, path):
        self.path = str(path)

    def predict(self, X):
        return load_dataset(self.path).y_test


def run(*argv):
    return cli.main([str(a) for a in argv])


def snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynth:
    def test_se_four_dirs(self, tmp_path):
        cfg = write_cfg(tmp_path, group="SE", dit_list=[5], n_max_ad=9)
        assert run("--config", cfg, "--out", tmp_path / "o", "synth") == 0
        assert sorted(p.name for p in (tmp_path / "o" / "datasets").iterdir()) == \
            [f"se_dit5_ad{a}" for a in range(1, 5)]

    def test_re_two_dirs_and_up_to_date(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, dit_list=[4, 5])
        out = tmp_path / "o"
        assert run("--config", cfg, "--out", out, "synth") == 0
        before = snapshot(out)
        assert len(list((out / "datasets").iterdir())) == 2
        capsys.readouterr()
        assert run("--config", cfg, "--out", out, "synth") == 0
        assert capsys.readouterr().out.count("up to date") == 2
        assert snapshot(out) == before

    def test_manifest_records_spec_and_seed(self, tmp_path):
        cfg = write_cfg(tmp_path)
        run("--config", cfg, "--out", tmp_path / "o", "--seed", 9, "synth")
        ds = load_dataset(tmp_path / "o" / "datasets" / "re_dit4")
        assert ds.spec.seed == 9 and ds.spec.noise_amplitude == 10.0

    def test_bad_config(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, group="XX")
        assert run("--config", cfg, "synth") == 2
        assert "group" in capsys.readouterr().err


class TestErrors:
    def test_unreadable_path(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("NILM_DATA_DIR", str(tmp_path))
        cfg = write_cfg(tmp_path, source={"kind": "refit", "paths": ["House_9.csv"]})
        assert run("--config", cfg, "analyze") == 2
        assert "House_9.csv" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert run("--config", tmp_path / "none.json", "analyze") == 2

    def test_unknown_key(self, tmp_path):
        assert run("--config", write_cfg(tmp_path, bogus=1), "analyze") == 2

    def test_unsupported_table_cell(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, group="SE", dit_list=[5], table="ukdale", models=["ctrnn"])
        out = tmp_path / "o"
        assert run("--config", cfg, "--out", out, "synth") == 0
        assert run("--config", cfg, "--out", out, "train") == 2
        assert "no published" in capsys.readouterr().err

    def test_divergence_exit_3(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, models=["ctrnn"],
                        train={"epochs": 2, "learning_rate": 1e30, "batch_size": 8},
                        noise_amplitude=1e6)
        out = tmp_path / "o"
        run("--config", cfg, "--out", out, "synth")
        assert run("--config", cfg, "--out", out, "train") == 3
        assert "epoch" in capsys.readouterr().err

    def test_eval_without_models(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "o"
        run("--config", cfg, "--out", out, "synth")
        assert run("--config", cfg, "--out", out, "eval") == 2

    def test_eval_before_synth(self, tmp_path):
        assert run("--config", write_cfg(tmp_path), "--out", tmp_path / "o", "eval") == 2


class TestPipeline:
    def test_sweep_layouts(self, tmp_path):
        cfg = write_cfg(tmp_path, group="SE", dit_list=[5, 10], n_max_ad=2, n_avg_max_ad=2,
                        source={"kind": "synthetic", "n_devices": 12, "duration": 2 * 86400.0})
        out = tmp_path / "o"
        assert run("--config", cfg, "--out", out, "sweep") == 0
        for model in ("ctrnn", "rf", "random"):
            grid = (out / "results" / model / "grid_se.csv").read_text().splitlines()
            assert grid[0] == "dit\\ad,1,2"
            assert [r.split(",")[0] for r in grid[1:]] == ["5", "10"]
            assert (out / "results" / model / "grid_se.png").exists()
        chance = (out / "results" / "chance" / "grid_se.csv").read_text().splitlines()
        assert [float(v) for v in chance[1].split(",")] == [5, 0.2, 0.1]
        assert (out / "results" / "chance" / "grid_se_curves.png").exists()
        table = (out / "results" / "rf" / "se_dit5_ad1" / "seed0" / "table.csv").read_text()
        assert table.splitlines()[-1].startswith("Weighted avg.")
        summary = json.loads((out / "reports" / "eval_se.json").read_text())
        assert "degradation_per_5_dit" in summary["ctrnn"]
        text = (out / "reports" / "summary_se.txt").read_text()
        assert "ctrnn vs rf" in text and "per 5 DiT" in text
        report = json.loads((out / "reports" / "report_se.json").read_text())
        assert report["config"]["group"] == "SE"
        hist = (out / "models" / "ctrnn" / "se_dit5_ad1" / "seed0" / "history.csv").read_text()
        assert len(hist.splitlines()) == 2

    def test_train_deterministic(self, tmp_path):
        cfg = write_cfg(tmp_path, models=["ctrnn"])
        sums = []
        for name in ("a", "b"):
            out = tmp_path / name
            run("--config", cfg, "--out", out, "synth")
            assert run("--config", cfg, "--out", out, "train") == 0
            sums.append((out / "models" / "ctrnn" / "re_dit4" / "seed0" / "weights.bin").read_bytes())
        assert sums[0] == sums[1]

    def test_train_does_not_touch_datasets(self, tmp_path):
        cfg = write_cfg(tmp_path, models=["rf"])
        out = tmp_path / "o"
        run("--config", cfg, "--out", out, "synth")
        before = snapshot(out / "datasets")
        run("--config", cfg, "--out", out, "train")
        run("--config", cfg, "--out", out, "eval")
        assert snapshot(out / "datasets") == before

    def test_perfect_oracle_stub(self, tmp_path):
        cfg = write_cfg(tmp_path, models=["rf"])
        out = tmp_path / "o"
        run("--config", cfg, "--out", out, "synth")
        run("--config", cfg, "--out", out, "train")

        import joblib
        joblib.dump(Oracle(out / "datasets" / "re_dit4"), out / "models" / "rf" / "re_dit4" / "seed0" / "estimator.joblib")
        assert run("--config", cfg, "--out", out, "eval") == 0
        summary = json.loads((out / "results" / "rf" / "re_dit4" / "summary.json").read_text())
        assert summary["weighted_f1_mean"] == 1.0

    def test_analyze(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert run("--config", cfg, "--out", tmp_path / "o", "analyze") == 0
        rows = (tmp_path / "o" / "reports" / "profile_histogram.csv").read_text().splitlines()[1:]
        assert sum(float(r.split(",")[1]) for r in rows) == pytest.approx(1.0)
        prof = json.loads((tmp_path / "o" / "reports" / "profile.json").read_text())
        assert prof["n_avg_max_ad"] <= prof["n_max_ad"]

    def test_cost(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert run("--out", out, "cost", "--scale", 1.0) == 0
        curve = (out / "reports" / "inference_curve.csv").read_text().splitlines()
        assert curve[-1].split(",")[:2] == ["10000000", "41.8200"]
        doc = json.loads((out / "reports" / "cost.json").read_text())
        assert doc["counted"]["params"] == 19_795_589
        text = (out / "reports" / "cost_comparison.txt").read_text()
        pct = float(text.split("uses ")[1].split("%")[0])
        assert abs(pct - 29.7) <= 1

    def test_global_flags_either_side(self, tmp_path):
        a = cli.build_parser().parse_args(["--seed", "3", "synth"])
        b = cli.build_parser().parse_args(["synth", "--seed", "3"])
        assert a.seed == b.seed == 3

    def test_preset(self, tmp_path):
        args = cli.build_parser().parse_args(["--preset", "desk", "--out", str(tmp_path), "synth"])
        cfg = cli.load_config(args)
        assert (cfg.window_len, cfg.n_samples, cfg.width_scale) == (510, 2000, 0.25)
