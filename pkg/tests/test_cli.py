import json

import pytest
import yaml

from moses_lab import model
from moses_lab.cli import main
from moses_lab.config import load_tasks
from moses_lab.data import read_records
from moses_lab.metrics import parse_csv


@pytest.fixture
def tiny_tasks(tmp_path):
    path = tmp_path / "tasks.yaml"
    path.write_text(yaml.safe_dump({"tasks": [t.to_dict() for t in load_tasks()[:2]]}))
    return str(path)


def echoed(capsys):
    return json.loads(capsys.readouterr().out.splitlines()[0])


def test_gen_dataset_and_pretrain(tmp_path, tiny_tasks, capsys):
    recs = tmp_path / "src.jsonl"
    assert main(["gen-dataset", "--tasks", tiny_tasks, "--samples", "40", "--seed", "3", "--out", str(recs)]) == 0
    assert len(read_records(recs)) == 80
    capsys.readouterr()
    out = tmp_path / "m.bin"
    assert main(["pretrain", "--dataset", str(recs), "--tasks", tiny_tasks, "--epochs", "1", "--out", str(out)]) == 0
    assert model.load(out).dims == (16, 512, 512, 1)


def test_pretrain_defaults_are_echoed(tmp_path, tiny_tasks, capsys):
    recs = tmp_path / "src.jsonl"
    main(["gen-dataset", "--tasks", tiny_tasks, "--samples", "2", "--out", str(recs)])
    capsys.readouterr()
    assert main(["pretrain", "--dataset", str(recs), "--tasks", tiny_tasks, "--epochs", "1",
                 "--out", str(tmp_path / "m.bin")]) == 0
    echo = echoed(capsys)
    assert echo["lr"] == 0.001 and echo["hyper"]["learning_rate"] == 0.001
    capsys.readouterr()
    main(["pretrain", "--dataset", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "x.bin")])
    assert echoed(capsys)["epochs"] == 30


def test_tune_rejects_ratio_and_threshold(tmp_path, capsys):
    code = main(["tune", "--strategy", "Moses", "--model", "m.bin", "--ratio", "0.5", "--threshold", "0.5",
                 "--report", str(tmp_path / "r.json")])
    assert code == 1
    err = capsys.readouterr().err
    assert "--ratio" in err and "--threshold" in err
    assert not (tmp_path / "r.json").exists()


def test_validation_and_runtime_exit_codes(tmp_path, tiny_tasks):
    assert main(["tune", "--strategy", "Nope", "--report", "r.json"]) == 1
    assert main(["tune", "--strategy", "Moses", "--report", "r.json"]) == 1  # no model
    assert main(["tune", "--strategy", "Moses", "--model", "m", "--ratio", "2", "--report", "r.json"]) == 1
    assert main(["gen-dataset", "--samples", "0", "--out", str(tmp_path / "x")]) == 1
    assert main(["compare", "--strategies", "Moses", "--out-dir", str(tmp_path / "c")]) == 1
    assert main(["frobnicate"]) == 1
    # a missing model file is only noticed when the run starts
    assert main(["tune", "--strategy", "PretrainOnly", "--model", str(tmp_path / "none.bin"), "--tasks", tiny_tasks,
                 "--report", str(tmp_path / "r.json")]) == 2


def test_tune_and_report(tmp_path, tiny_tasks, capsys):
    start = model.init_random(model.default_dims(), 1)
    model.save(start, tmp_path / "m.bin")
    reports = []
    for strategy in ("VanillaFinetune", "Moses", "Raw"):
        rep = tmp_path / f"{strategy}.json"
        args = ["tune", "--strategy", strategy, "--tasks", tiny_tasks, "--trials", "10", "--report", str(rep)]
        if strategy != "Raw":
            args += ["--model", str(tmp_path / "m.bin")]
        assert main(args) == 0
        reports.append(str(rep))
    body = json.loads((tmp_path / "Moses.json").read_text())
    assert body["config"]["budget"]["trials_per_task"] == 10
    assert len(body["tasks"]) == 2
    out = tmp_path / "metrics.csv"
    assert main(["report", "--in", *reports, "--format", "csv", "--out", str(out)]) == 0
    rows = parse_csv(out.read_bytes())
    assert {r.strategy for r in rows} == {"VanillaFinetune", "Moses", "Raw"}
    md = tmp_path / "metrics.md"
    assert main(["report", "--in", str(out), "--format", "markdown", "--out", str(md)]) == 0
    assert md.read_text().startswith("| strategy")
    assert main(["report", "--in", str(tmp_path / "nope.csv"), "--out", str(md)]) == 1


def test_compare_with_shipped_config(tmp_path, flagship_setup, capsys):
    mpath = tmp_path / "pre.bin"
    model.save(flagship_setup.pretrained, mpath)
    out = tmp_path / "cmp"
    code = main(["compare", "--model", str(mpath), "--strategies", "VanillaFinetune,Moses,Raw", "--seeds", "0,1",
                 "--out-dir", str(out)])
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["Moses_seed0.json", "Moses_seed1.json", "Raw_seed0.json", "Raw_seed1.json",
                     "VanillaFinetune_seed0.json", "VanillaFinetune_seed1.json", "config.json", "metrics.csv"]
    assert len(parse_csv((out / "metrics.csv").read_bytes())) == 6
    echo = json.loads((out / "config.json").read_text())
    assert echo["budget"]["trials_per_task"] == 64 and echo["seeds"] == [0, 1]
