import csv
import hashlib

import numpy as np
import pytest

from dannte.cli import build_parser, main, resolve
from dannte.config import build, dump, parse_config
from dannte.data import ShiftConfig
from dannte.errors import DataError
from dannte.training import TrainConfig

SMALL = ["--epochs", "1", "--window", "4", "--batch-size", "8"]


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    cfg = out / "small.cfg"
    cfg.write_text("data.n_points = 120  # short series\nhidden_size = 6\nhead_hidden = 4\n")
    assert main(["generate", "--seed", "3", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def run_train(data_dir, out, *extra):
    return main(["train", "--config", str(data_dir / "small.cfg"), "--source",
                 str(data_dir / "source.csv"), "--target", str(data_dir / "target.csv"),
                 "--out", str(out), *SMALL, *extra])


def test_generate_is_checksum_stable(data_dir, tmp_path):
    assert main(["generate", "--seed", "3", "--config", str(data_dir / "small.cfg"),
                 "--out", str(tmp_path)]) == 0
    for name in ("source.csv", "target.csv"):
        assert digest(tmp_path / name) == digest(data_dir / name)


def test_train_checkpoints_are_byte_identical(data_dir, tmp_path):
    assert run_train(data_dir, tmp_path / "a") == 0
    assert run_train(data_dir, tmp_path / "b") == 0
    assert digest(tmp_path / "a" / "model.ckpt") == digest(tmp_path / "b" / "model.ckpt")
    rows = list(csv.DictReader(open(tmp_path / "a" / "history.csv")))
    assert len(rows) == 1 and set(rows[0]) >= {"epoch", "L_y", "L_d", "L_tot", "domain_acc"}


def test_evaluate_reproduces_final_source_loss(data_dir, tmp_path):
    assert run_train(data_dir, tmp_path) == 0
    assert main(["evaluate", "--checkpoint", str(tmp_path / "model.ckpt"), "--source",
                 str(data_dir / "source.csv"), "--target", str(data_dir / "target.csv"),
                 "--out", str(tmp_path)]) == 0
    metrics = {r["metric"]: r["value"] for r in csv.DictReader(open(tmp_path / "metrics.csv"))}
    history = list(csv.DictReader(open(tmp_path / "history.csv")))
    assert float(metrics["mse_source"]) == pytest.approx(float(history[-1]["L_y"]), abs=1e-12)
    assert metrics["kl_direction"] == "source||target"


def test_embed_writes_one_row_per_window(data_dir, tmp_path):
    assert run_train(data_dir, tmp_path) == 0
    assert main(["embed", "--checkpoint", str(tmp_path / "model.ckpt"), "--source",
                 str(data_dir / "source.csv"), "--target", str(data_dir / "target.csv"),
                 "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "embeddings.csv")))
    assert len(rows) == 2 * (120 - 4 + 1)
    assert {r["domain"] for r in rows} == {"source", "target"}
    assert list(rows[0])[-2:] == ["p0", "p1"] and "e5" in rows[0]


def test_compare_emits_all_rows(data_dir, tmp_path):
    assert main(["compare", "--config", str(data_dir / "small.cfg"), "--source",
                 str(data_dir / "source.csv"), "--target", str(data_dir / "target.csv"),
                 "--folds", "2", "--out", str(tmp_path), *SMALL]) == 0
    rows = list(csv.DictReader(open(tmp_path / "comparison.csv")))
    assert [r["model"] for r in rows] == ["constant_mean", "baseline", "fully_supervised",
                                          "dann", "dannte"]
    assert "mse_target_std" in rows[0]
    assert "source||target" in (tmp_path / "comparison.txt").read_text()


@pytest.mark.parametrize("argv, code", [
    ([], 1),
    (["train", "--epochs", "many"], 1),
    (["train", "--mode", "nonsense"], 1),
    (["train", "--batch-size", "7", "--source", "x.csv"], 1),
    (["train", "--epochs", "1"], 1),
    (["evaluate", "--checkpoint", "missing.ckpt", "--source", "a", "--target", "b"], 2),
    (["train", "--source", "missing.csv", "--target", "missing.csv"], 2),
])
def test_exit_codes(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code


def test_bad_data_file_leaves_no_outputs(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,f0,y\n0,1,1\n0,1,1\n")
    out = tmp_path / "out"
    assert main(["train", "--source", str(bad), "--mode", "baseline", "--out", str(out)]) == 2
    assert list(out.iterdir()) == []


def test_config_parsing_and_aliases():
    train, data = parse_config("lambda = 0.5\nlr=0.01\n\n# note\nhistory_eval = off\n"
                               "data.delta = 3\n")
    cfg, shift = build(train, data)
    assert cfg.lam == 0.5 and cfg.learning_rate == 0.01 and cfg.history_eval is False
    assert shift.delta == 3.0


@pytest.mark.parametrize("text, line", [("epochs = 2\nbogus = 1\n", 2),
                                        ("epochs = two\n", 1),
                                        ("data.delta\n", 1)])
def test_config_errors_cite_the_line(text, line):
    with pytest.raises(DataError, match=f"cfg:{line}"):
        parse_config(text, "cfg")


def test_config_dump_round_trips():
    cfg, shift = TrainConfig(lam=0.25, epochs=3), ShiftConfig(delta=1.5)
    assert build(*parse_config(dump(cfg, shift))) == (cfg, shift)


def test_flags_override_config_file(data_dir, tmp_path):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("epochs = 7\nlambda = 0.1\n")
    args = build_parser().parse_args(["train", "--config", str(cfgfile), "--lambda", "2.0",
                                      "--seed", "9"])
    cfg, shift = resolve(args)
    assert cfg.epochs == 7 and cfg.lam == 2.0 and cfg.seed == 9 and shift.seed == 9
