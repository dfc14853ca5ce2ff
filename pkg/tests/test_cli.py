import json

import numpy as np
import pytest

from pattree import cli, data

TINY = {
    "synth": {"n_train": 300, "n_test": 150},
    "train": {"iterations": 60, "widths": [16, 8, 8, 8]},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def synth(tmp_path, cfg_path):
    tr, te = tmp_path / "train.csv", tmp_path / "test.csv"
    assert run("synth", "--config", cfg_path, "--out-train", tr, "--out-test", te) == 0
    return tr, te


def test_synth_writes_files_reproducibly(tmp_path, cfg_path):
    tr, te = synth(tmp_path, cfg_path)
    assert len(tr.read_text().splitlines()) == 301
    assert len(te.read_text().splitlines()) == 151
    first = tr.read_bytes()
    synth(tmp_path, cfg_path)
    assert tr.read_bytes() == first


def test_synth_default_sizes(tmp_path):
    assert run("synth", "--out-train", tmp_path / "a.csv", "--out-test", tmp_path / "b.csv") == 0
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 6001
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 2001


def test_missing_or_bad_config_exits_2(tmp_path, capsys):
    assert run("synth", "--config", tmp_path / "nope.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"bogus": 1}}))
    assert run("synth", "--config", bad) == 2
    bad.write_text(json.dumps({"extra": {}}))
    assert run("synth", "--config", bad) == 2
    bad.write_text("{")
    assert run("synth", "--config", bad) == 2
    assert run("synth", "--set", "synth.n_train=0") == 2
    assert "error" in capsys.readouterr().err


def test_train_eval_cycle(tmp_path, cfg_path, capsys):
    tr, te = synth(tmp_path, cfg_path)
    capsys.readouterr()
    model, log = tmp_path / "m.json", tmp_path / "log.tsv"
    args = ("train", "--config", cfg_path, "--data", tr, "--out-model", model, "--log", log)
    assert run(*args, "--plot", tmp_path / "loss.png") == 0
    out = capsys.readouterr().out
    assert out.startswith("# lam=0.1 ")
    assert log.read_text().startswith("# lam=0.1 ")
    assert len(log.read_text().splitlines()) == 2 + 60
    assert (tmp_path / "loss.png").stat().st_size > 1000
    first = model.read_bytes()
    assert run(*args) == 0
    assert model.read_bytes() == first

    report = tmp_path / "r.json"
    assert run("eval", "--model", model, "--data", te, "--report", report) == 0
    rep = json.loads(report.read_text())
    assert rep["model_format"] == data.MODEL_FORMAT
    assert rep["seed"] == 0 and rep["config"]["seed"] == 0
    counts = [0] * 7
    for line in te.read_text().splitlines()[1:]:
        counts[int(line.split(",")[-2])] += 1
    assert [sum(r) for r in rep["confusion"]] == counts


def test_train_accuracy_at_least_test_accuracy(tmp_path, cfg_path):
    tr, te = synth(tmp_path, cfg_path)
    model = tmp_path / "m.json"
    assert run(
        "train", "--config", cfg_path, "--set", "train.iterations=600", "--data", tr,
        "--out-model", model, "--log", tmp_path / "log.tsv",
    ) == 0
    accs = []
    for d in (tr, te):
        assert run("eval", "--model", model, "--data", d, "--report", tmp_path / "r.json") == 0
        accs.append(json.loads((tmp_path / "r.json").read_text())["accuracy"])
    assert accs[0] >= accs[1]


def test_lambda_override_and_auxiliary_data(tmp_path, cfg_path, capsys):
    tr, te = synth(tmp_path, cfg_path)
    capsys.readouterr()
    assert run(
        "train", "--config", cfg_path, "--set", "train.lam=0.5", "--data", tr, "--aux-data", te,
        "--out-model", tmp_path / "m.json", "--log", tmp_path / "log.tsv",
    ) == 0
    assert capsys.readouterr().out.startswith("# lam=0.5 ")


def test_schema_mismatch_exits_2(tmp_path, cfg_path):
    tr, _ = synth(tmp_path, cfg_path)
    assert run(
        "train", "--config", cfg_path, "--set", 'train.schema=[["a", 2]]',
        "--set", "train.widths=[16, 8, 8]", "--data", tr,
        "--out-model", tmp_path / "m.json", "--log", tmp_path / "l.tsv",
    ) == 2


def test_non_finite_training_exits_3(tmp_path, cfg_path, capsys):
    tr, _ = synth(tmp_path, cfg_path)
    with np.errstate(all="ignore"):
        code = run(
            "train", "--config", cfg_path, "--set", "train.mu=1e300", "--data", tr,
            "--out-model", tmp_path / "m.json", "--log", tmp_path / "l.tsv",
        )
    assert code == 3
    assert "non-finite" in capsys.readouterr().err


def test_gradcheck_gate(capsys):
    assert run("gradcheck", "--seed", 12345, "--tolerance", 1e-4) == 0
    assert run("gradcheck", "--seed", 12345, "--tolerance", 1e-15) == 4
    assert "worst coordinate" in capsys.readouterr().err


def test_compare_writes_four_reports(tmp_path, cfg_path):
    out = tmp_path / "cmp"
    assert run("compare", "--config", cfg_path, "--seeds", 1, "--out-dir", out) == 0
    reports = sorted(p.name for p in out.glob("report_*.json"))
    assert reports == [
        "report_attribute_specific.json",
        "report_flat.json",
        "report_hard_at.json",
        "report_pat.json",
    ]
    assert (out / "summary.tsv").exists() and (out / "comparison.png").exists()
    rep = json.loads((out / "report_pat.json").read_text())
    assert rep["runs"][0]["config"]["lam"] == 0.1


def test_sweep_default_fractions_give_seven_rows(tmp_path, cfg_path, capsys):
    out = tmp_path / "sw"
    assert run("sweep", "--config", cfg_path, "--seeds", 1, "--out-dir", out) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].startswith("fraction") and len(table) == 8
    assert len((out / "sweep.tsv").read_text().splitlines()) == 8
    assert run("sweep", "--config", cfg_path, "--seeds", 1, "--fractions", "0,1", "--out-dir", out) == 0
    assert len((out / "sweep.tsv").read_text().splitlines()) == 3
