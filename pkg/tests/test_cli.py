import csv
import json

import numpy as np
import pytest

from streamsel.cli import METRIC_COLUMNS, main
from streamsel.config import ConfigError, ExperimentConfig, dump_config, parse_config
from streamsel.stream import read_stream_csv

MINIMAL = """
# tiny run
dim = 4
n_classes = 2
class_spread = 1.0
hidden = 6
n_test = 50
stream_velocity = 20
batch_size = 4
buffer_capacity = 8
rounds = {rounds}
strategy = {strategy}
seeds = 0
final_window = 1
"""


def _config(tmp_path, rounds=1, strategy="cis"):
    path = tmp_path / "exp.cfg"
    path.write_text(MINIMAL.format(rounds=rounds, strategy=strategy))
    return path


def _rows(path):
    with path.open() as fh:
        return list(csv.reader(fh))


def test_run_one_round(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(_config(tmp_path, strategy="rs")), "--out", str(out)]) == 0
    rows = _rows(out / "metrics_rs_seed0.csv")
    assert rows[0] == METRIC_COLUMNS
    assert len(rows) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["runs"][0]["strategy"] == "rs"


def test_run_two_strategies(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = _config(tmp_path, rounds=3, strategy="cis, rs")
    assert main(["run", "--config", str(cfg), "--out", str(out), "--dump-plan"]) == 0
    a, b = _rows(out / "metrics_cis_seed0.csv"), _rows(out / "metrics_rs_seed0.csv")
    assert len(a) == len(b) == 4
    assert all(sum(int(v) for v in r[-1].split(":")) == 4 for r in a[1:])
    plans = json.loads((out / "plans_cis_seed0.json").read_text())
    assert [p["round"] for p in plans] == [0, 1, 2]


def test_run_is_byte_identical(tmp_path, capsys):
    cfg = _config(tmp_path, rounds=4, strategy="cis,rs")
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    for name in ("metrics_cis_seed0.csv", "metrics_rs_seed0.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_unknown_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("learning_rate = 0.1\n")
    assert main(["run", "--config", str(path)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_invalid_value_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("batch_size = 0\n")
    assert main(["run", "--config", str(path)]) == 2


def test_parse_config_roundtrip():
    cfg = parse_config("lr = 0.05\nstrategy = cis, hl\nclear_after_round = false\n")
    assert cfg.lr == 0.05 and cfg.strategy == ["cis", "hl"] and cfg.clear_after_round is False
    assert parse_config(dump_config(cfg)) == cfg
    with pytest.raises(ConfigError):
        parse_config("lr 0.1")


def test_gen_data_reproducible(tmp_path, capsys):
    args = ["gen-data", "--n", "10", "--classes", "2", "--dim", "2", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    X, y = read_stream_csv(tmp_path / "a.csv")
    assert X.shape == (10, 2) and set(y.tolist()) <= {0, 1}


def test_gen_data_zero_spread(tmp_path, capsys):
    out = tmp_path / "z.csv"
    assert main(["gen-data", "--n", "20", "--classes", "2", "--dim", "3", "--spread", "0,0",
                 "--out", str(out)]) == 0
    X, y = read_stream_csv(out)
    for c in (0, 1):
        rows = X[y == c]
        assert np.all(rows == rows[0])


def test_gen_data_label_flips(tmp_path, capsys):
    base = ["gen-data", "--n", "1000", "--classes", "3", "--seed", "4"]
    assert main(base + ["--out", str(tmp_path / "clean.csv")]) == 0
    assert main(base + ["--noise", "label", "--noise-fraction", "0.4", "--out", str(tmp_path / "noisy.csv")]) == 0
    _, y0 = read_stream_csv(tmp_path / "clean.csv")
    _, y1 = read_stream_csv(tmp_path / "noisy.csv")
    assert abs(int((y0 != y1).sum()) - 400) <= 3 * np.sqrt(1000 * 0.4 * 0.6)


def test_gen_data_bad_spread(tmp_path, capsys):
    assert main(["gen-data", "--classes", "3", "--spread", "1,2", "--out", str(tmp_path)]) == 2


def test_variance_check(tmp_path, capsys):
    assert main(["variance-check", "--draws", "20000", "--perturb-alloc", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "variance_check.json").read_text())
    assert report["ok"]
    assert report["allocation"]["perturbation_worse"]
    assert set(report["closed_form_vs_mc"]) == {"cis", "is", "uniform"}


def test_alloc_check_single_class_and_guard(tmp_path, capsys):
    assert main(["alloc-check", "--classes", "1", "--out", str(tmp_path)]) == 0
    assert "note" in json.loads((tmp_path / "alloc_check.json").read_text())
    assert main(["alloc-check", "--classes", "6", "--batch", "40", "--out", str(tmp_path)]) == 2


def test_defaults_validate():
    ExperimentConfig().validate()
