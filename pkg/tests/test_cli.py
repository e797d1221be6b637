import json

import numpy as np
import pytest

from tima.cli import main
from tima.data import load_dataset
from tima.harness import read_report

# small, fast recipe: linear encoder, tiny images, short training
FAST_CONFIG = """
num_superclasses = 2
subclasses_per_superclass = 2
image_side = 5
within_super_shift = 0.08
noise_sigma = 0.06
train_count = 120
test_count = 40
hidden_dims =
embed_dim = 6
pretrain_lr = 0.001
pretrain_epochs = 3
finetune_epochs = 2
batch_size = 32
eval_eps_list = 0,1/255,4/255,8/255
eval_steps = 2
sweep_m = 0.1
sweep_eta = 0.95
sweep_eps = 1/255
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(FAST_CONFIG)
    return path


def run_pipeline(cfg_path, out_dir, variant="tima"):
    for argv in (["gen-data"], ["pretrain"],
                 ["finetune", "--variant", variant], ["eval", "--variant", variant]):
        code = main(argv + ["--config", str(cfg_path), "--out", str(out_dir)])
        assert code == 0, f"{argv} failed"


class TestSubcommands:
    def test_gen_data_outputs(self, config_file, tmp_path):
        out = tmp_path / "out"
        assert main(["gen-data", "--config", str(config_file), "--out", str(out)]) == 0
        for name in ("train.timd", "test.timd", "shifted.timd"):
            d = load_dataset(out / name)
            assert d.num_samples > 0
        shifted = load_dataset(out / "shifted.timd")
        test = load_dataset(out / "test.timd")
        assert not np.array_equal(shifted.images, test.images)

    def test_full_pipeline(self, config_file, tmp_path):
        out = tmp_path / "out"
        run_pipeline(config_file, out)
        assert (out / "pretrained.timm").exists()
        assert (out / "finetuned_tima.timm").exists()
        report = read_report(out / "report.json")
        assert set(report["robust_accuracy"]) == {"0", "1/255", "4/255", "8/255"}
        assert report["robust_accuracy"]["0"] == report["clean_accuracy"]
        assert (out / "matrices").is_dir()
        for files in report["matrices"].values():
            assert (out / "matrices" / files["csv"]).exists()
            assert (out / "matrices" / files["pgm"]).exists()

    def test_tecoa_keeps_teacher_text_distance(self, config_file, tmp_path):
        out = tmp_path / "out"
        run_pipeline(config_file, out, variant="tecoa")
        report = read_report(out / "report.json")
        assert report["text_min_distance"]["student"] == report["text_min_distance"]["teacher"]
        assert report["text_mean_distance"]["student"] == report["text_mean_distance"]["teacher"]

    def test_unknown_subcommand_usage(self, capsys):
        code = main(["frobnicate", "--out", "x"])
        assert code != 0
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_out_flag(self):
        assert main(["gen-data"]) != 0

    def test_eval_without_pretrain_errors(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"
        main(["gen-data", "--config", str(config_file), "--out", str(out)])
        code = main(["eval", "--config", str(config_file), "--out", str(out)])
        assert code == 1
        assert "error" in capsys.readouterr().err.lower()

    def test_bad_config_reports_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("eta = 1.5\n")
        code = main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "line 1" in capsys.readouterr().err

    def test_seed_override(self, config_file, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", "--config", str(config_file), "--out", str(out1),
                     "--seed", "7"]) == 0
        assert main(["gen-data", "--config", str(config_file), "--out", str(out2),
                     "--seed", "8"]) == 0
        a = load_dataset(out1 / "train.timd")
        b = load_dataset(out2 / "train.timd")
        assert not np.array_equal(a.images, b.images)

    def test_export_matrices_subcommand(self, config_file, tmp_path):
        out = tmp_path / "out"
        run_pipeline(config_file, out)
        (out / "matrices" / "student_text_text.csv").unlink()
        assert main(["export-matrices", "--config", str(config_file),
                     "--out", str(out)]) == 0
        assert (out / "matrices" / "student_text_text.csv").exists()

    def test_sweep_reports(self, config_file, tmp_path):
        out = tmp_path / "out"
        for argv in (["gen-data"], ["pretrain"]):
            assert main(argv + ["--config", str(config_file), "--out", str(out)]) == 0
        assert main(["sweep", "--config", str(config_file), "--out", str(out)]) == 0
        reports = sorted((out / "sweep").rglob("report.json"))
        assert len(reports) == 1  # 1 m x 1 eta x 1 eps
        payload = read_report(reports[0])
        assert set(payload["robust_accuracy"]) == {"1/255"}


class TestDeterminism:
    def test_pipeline_byte_identical(self, config_file, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        run_pipeline(config_file, out1)
        run_pipeline(config_file, out2)
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        m1 = sorted((out1 / "matrices").iterdir())
        m2 = sorted((out2 / "matrices").iterdir())
        assert [p.name for p in m1] == [p.name for p in m2]
        for a, b in zip(m1, m2):
            assert a.read_bytes() == b.read_bytes()
        assert (out1 / "pretrained.timm").read_bytes() == (out2 / "pretrained.timm").read_bytes()
        assert (out1 / "finetuned_tima.timm").read_bytes() == (out2 / "finetuned_tima.timm").read_bytes()
