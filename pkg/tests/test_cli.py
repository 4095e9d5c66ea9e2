import numpy as np
import pytest

from caspianet import cli
from caspianet import config as cfgmod
from caspianet.data import load_dataset, read_cvol

TINY = """\
# tiny desk-scale run
phantom.extent = 16
phantom.count = 3
net.levels = 2
net.base_channels = 2
net.crop = 16
train.epochs = 1
train.eval_every = 1
curriculum.teacher_epochs = 1
curriculum.stage_epochs = 1
"""


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestConfig:
    def test_defaults_round_trip(self):
        rc = cfgmod.RunConfig.defaults()
        again = cfgmod.parse(rc.dumps())
        assert again.values == rc.values

    def test_overrides_and_comments(self):
        rc = cfgmod.parse("seed = 7  # trailing comment\n\ntrain.augment = no\n")
        assert rc["seed"] == 7 and rc["train.augment"] is False

    def test_unknown_key_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="line 1"):
            cfgmod.parse("bogus.key = 1\n")

    def test_bad_values_rejected(self):
        with pytest.raises(cfgmod.ConfigError):
            cfgmod.parse("train.epochs = ten\n")
        with pytest.raises(cfgmod.ConfigError):
            cfgmod.parse("net.variant = transformer\n")
        with pytest.raises(cfgmod.ConfigError):
            cfgmod.parse("just words\n")

    def test_typed_views(self):
        rc = cfgmod.parse(TINY)
        assert rc.net_config().crop == 16
        assert rc.train_config().augment.crop == 16
        assert rc.phantom_spec(3).extent == 16
        assert len(rc.stages()) == 3


class TestCommands:
    def test_phantom_train_eval_pseudo_label(self, tmp_path, tiny_config, capsys):
        data, val, unl = tmp_path / "data", tmp_path / "val", tmp_path / "unl"
        assert run("--config", tiny_config, "--out", data, "phantom") == 0
        assert run("--config", tiny_config, "--out", val, "phantom", "--first-id", 100, "--count", 2) == 0
        assert run("--config", tiny_config, "--out", unl, "phantom", "--first-id", 200) == 0
        assert len(load_dataset(data)) == 3
        assert (data / "run_config.txt").exists()

        model_dir = tmp_path / "model"
        assert run("--config", tiny_config, "--out", model_dir, "train", "--data", data, "--val", val) == 0
        ckpt = model_dir / "model.cnet"
        assert ckpt.exists() and (model_dir / "train_log.txt").exists()

        rep_dir = tmp_path / "eval"
        assert run("--out", rep_dir, "eval", "--model", ckpt, "--data", val) == 0
        lines = (rep_dir / "report.csv").read_text().splitlines()
        assert lines[0] == "case_id,region,dice,hd95,sensitivity,specificity"
        assert len(lines) == 1 + 3 * 3

        pl_dir = tmp_path / "pl"
        assert run("--out", pl_dir, "pseudo-label", "--model", ckpt, "--data", unl) == 0
        cases = load_dataset(pl_dir)
        assert len(cases) == 3 and all(c.label is not None for c in cases)
        assert "model_id=" in (pl_dir / cases[0].case_id / "pseudo.txt").read_text()

    def test_seed_flag_after_subcommand(self, tmp_path, tiny_config):
        a, b = tmp_path / "a", tmp_path / "b"
        run("--config", tiny_config, "--out", a, "phantom", "--seed", 5)
        run("--config", tiny_config, "--seed", 6, "--out", b, "phantom")
        assert "seed = 5" in (a / "run_config.txt").read_text()
        ia = read_cvol(a / "phantom_0000" / "image.cvol")
        ib = read_cvol(b / "phantom_0000" / "image.cvol")
        assert not np.array_equal(ia, ib)

    def test_ablate_table(self, tmp_path, tiny_config):
        data, val = tmp_path / "data", tmp_path / "val"
        run("--config", tiny_config, "--out", data, "phantom")
        run("--config", tiny_config, "--out", val, "phantom", "--first-id", 50, "--count", 2)
        out = tmp_path / "abl"
        assert run("--config", tiny_config, "--out", out, "ablate", "--data", data, "--val", val,
                   "--variants", "baseline,caspian") == 0
        rows = (out / "ablation.csv").read_text().splitlines()
        assert rows[0].startswith("variant,dice_ET,dice_WT,dice_TC,hd95_ET,hd95_WT,hd95_TC,p_wt_vs_baseline")
        assert [r.split(",")[0] for r in rows[1:]] == ["baseline", "caspian"]

    def test_heatmap_writes_pgms(self, tmp_path, tiny_config):
        data = tmp_path / "data"
        run("--config", tiny_config, "--out", data, "phantom", "--count", 2)
        mdir = tmp_path / "m"
        run("--config", tiny_config, "--out", mdir, "train", "--data", data)
        out = tmp_path / "hm"
        for block in ("input", "enc1", "enc2"):
            assert run("--out", out, "heatmap", "--model", mdir / "model.cnet", "--case", data / "phantom_0000",
                       "--block", block) == 0
        pgm = cli.read_pgm(out / "phantom_0000_enc2_z8_attention.pgm")
        assert pgm.shape == (16, 16) and pgm.max() == 255
        assert (out / "phantom_0000_input_z8_prediction.pgm").exists()
        with pytest.raises(SystemExit):
            run("--out", out, "heatmap", "--model", mdir / "model.cnet", "--case", data / "phantom_0000",
                "--block", "nope")

    def test_curriculum_command(self, tmp_path, tiny_config):
        lab, unl, val = tmp_path / "lab", tmp_path / "unl", tmp_path / "val"
        run("--config", tiny_config, "--out", lab, "phantom", "--count", 2)
        run("--config", tiny_config, "--out", unl, "phantom", "--count", 2, "--first-id", 10)
        run("--config", tiny_config, "--out", val, "phantom", "--count", 1, "--first-id", 20)
        out = tmp_path / "cur"
        assert run("--config", tiny_config, "--out", out, "curriculum", "--labeled", lab, "--unlabeled", unl,
                   "--val", val) == 0
        assert sorted(p.name for p in out.glob("student*.cnet")) == ["student1.cnet", "student2.cnet", "student3.cnet"]

    def test_gradcheck_exit_code(self, tmp_path, monkeypatch, capsys):
        from caspianet import gradcheck

        monkeypatch.setattr(gradcheck, "run_suite", lambda seed=0: [gradcheck.CheckResult("x", 1.0, 1e-5)])
        assert run("--out", tmp_path, "gradcheck") == 1
        monkeypatch.setattr(gradcheck, "run_suite", lambda seed=0: [gradcheck.CheckResult("x", 1e-9, 1e-5)])
        assert run("--out", tmp_path, "gradcheck") == 0
        assert "PASS x" in capsys.readouterr().out

    def test_errors_exit_nonzero(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nope = 1\n")
        assert run("--config", bad, "--out", tmp_path, "phantom") == 2
        assert run("--out", tmp_path, "eval", "--model", tmp_path / "missing.cnet", "--data", tmp_path) == 2
