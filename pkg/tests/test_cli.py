import csv
import json
from pathlib import Path

import numpy as np
import pytest

from modbalance.cli import load_manifest, main, select_alpha
from modbalance.data import load_csv
from modbalance.evaluation import RunRecord, read_trace_csv
from modbalance.trainer import TrainConfig, train

BASE = """
[experiment]
name = t
output_dir = {out}
seeds = {seeds}

[data]
{data}

[train]
epochs = 2
batch_size = 16
learning_rate = 0.01
hidden_a = 5
hidden_v = 5
feature_dim = 4
"""
SMALL_DATA = "n_classes = 3\nd_a = 6\nd_v = 6\nn_train = 120\nn_val = 40\nn_test = 60"


def manifest(tmp_path, configs, seeds="0, 1", data=SMALL_DATA, name="m.ini"):
    text = BASE.format(out=tmp_path / "out", seeds=seeds, data=data)
    for cname, body in configs.items():
        text += f"\n[config {cname}]\n{body}\n"
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_empty_seeds_exit_2(tmp_path, capsys):
    assert main(["run", str(manifest(tmp_path, {"j": "strategy = joint"}, seeds=""))]) == 2
    assert "seeds" in capsys.readouterr().err


@pytest.mark.parametrize("body", ["strategy = nope", "learning_rate = -1", "bogus = 3", "batch_size = x"])
def test_bad_config_exit_2(tmp_path, body):
    assert main(["run", str(manifest(tmp_path, {"j": body}))]) == 2


def test_missing_sections_exit_2(tmp_path):
    p = tmp_path / "x.ini"
    p.write_text("[data]\nn_classes = 3\n")
    assert main(["run", str(p)]) == 2
    assert main(["run", str(tmp_path / "absent.ini")]) == 2
    p.write_text("[experiment]\nseeds = 0\n[configs j]\nstrategy = joint\n")
    assert main(["run", str(p)]) == 2


def test_one_config_two_seeds_artifacts(tmp_path):
    assert main(["run", str(manifest(tmp_path, {"j": "strategy = joint"}))]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.glob("*.json")) == ["j_seed0.json", "j_seed1.json"]
    assert sorted(p.name for p in out.glob("*_trace.csv")) == ["j_seed0_trace.csv", "j_seed1_trace.csv"]
    rows = read_rows(out / "results.csv")
    assert [r["seed"] for r in rows] == ["0", "1"]
    # round trips through the package's own loaders
    rec = RunRecord.load(out / "j_seed0.json")
    assert RunRecord.from_json(rec.to_json()).to_json() == rec.to_json()
    trace = read_trace_csv(out / "j_seed0_trace.csv")
    assert trace["rho_a"] == rec.trace["rho_a"] and trace["step"] == rec.trace["step"]
    assert float(rows[0]["test_acc"]) == rec.final["test_acc"]


def test_rerun_is_byte_identical(tmp_path):
    path = manifest(tmp_path, {"g": "strategy = ogm_ge\nalpha = 0.5"})
    out = tmp_path / "out"
    assert main(["run", str(path)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix in (".csv", ".json")}
    assert main(["run", str(path)]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix in (".csv", ".json")}
    assert first == second


def test_record_config_reproduces_run(tmp_path):
    assert main(["run", str(manifest(tmp_path, {"g": "strategy = ogm_ge\nalpha = 0.3"}, seeds="4"))]) == 0
    rec = RunRecord.load(tmp_path / "out" / "g_seed4.json")
    m = load_manifest(tmp_path / "m.ini")
    again, _ = train(m.data.load(), TrainConfig.from_dict(rec.config))
    assert again.to_json() == rec.to_json()


def test_flags_override_manifest(tmp_path):
    path = manifest(tmp_path, {"j": "strategy = joint"})
    assert main(["run", str(path), "--seeds", "3", "--set", "epochs=1", "--output-dir", str(tmp_path / "o2")]) == 0
    rec = RunRecord.load(tmp_path / "o2" / "j_seed3.json")
    assert rec.config["epochs"] == 1 and rec.seed == 3


def test_training_abort_exit_1_with_marker(tmp_path, capsys):
    path = manifest(tmp_path, {"ok": "strategy = joint",
                               "bad": "strategy = joint\nlearning_rate = 1e300\nweight_decay = 1e300"}, seeds="0")
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["run", str(path)]) == 1
    out = tmp_path / "out"
    assert (out / "ok_seed0.json").exists()
    assert "non-finite" in (out / "bad_seed0.FAILED").read_text()
    assert "aborted" in capsys.readouterr().err
    assert len(read_rows(out / "results.csv")) == 1


def test_compare_single_seed_std_zero_and_lattice(tmp_path, capsys):
    path = manifest(tmp_path, {"joint": "strategy = joint", "ogm0": "strategy = ogm\nalpha = 0"}, seeds="0")
    assert main(["compare", str(path)]) == 0
    rows = read_rows(tmp_path / "out" / "comparison.csv")
    assert all(float(r[k]) == 0.0 for r in rows for k in r if k.endswith("_std"))
    assert {k: v for k, v in rows[0].items() if k.endswith("_mean")} == \
        {k: v for k, v in rows[1].items() if k.endswith("_mean")}
    assert "test_acc_mean" in capsys.readouterr().out


def test_compare_means_match_records(tmp_path):
    path = manifest(tmp_path, {"joint": "strategy = joint", "g": "strategy = ogm_ge\nalpha = 0.5"}, seeds="0,1,2")
    assert main(["compare", str(path)]) == 0
    out = tmp_path / "out"
    for row in read_rows(out / "comparison.csv"):
        recs = [RunRecord.load(out / f"{row['config']}_seed{s}.json") for s in range(3)]
        for key in ("test_acc", "probe_a", "probe_v"):
            vals = [r.final[key] for r in recs]
            assert float(row[f"{key}_mean"]) == pytest.approx(np.mean(vals), abs=1e-12)
            assert float(row[f"{key}_std"]) == pytest.approx(np.std(vals), abs=1e-12)


def test_compare_needs_two_configs(tmp_path):
    assert main(["compare", str(manifest(tmp_path, {"j": "strategy = joint"}))]) == 2


def test_select_alpha_ties_to_smaller():
    assert select_alpha([(0.5, 0.7), (0.1, 0.7), (0.3, 0.6)]) == 0.1
    assert select_alpha([(0.8, 0.9)]) == 0.8


def test_sweep_single_and_duplicates(tmp_path, capsys):
    path = manifest(tmp_path, {"g": "strategy = ogm"}, seeds="0")
    assert main(["sweep-alpha", str(path), "--alphas", "0.3"]) == 0
    assert "chosen alpha 0.3" in capsys.readouterr().out
    assert main(["sweep-alpha", str(path), "--alphas", "0.5,0.1,0.5"]) == 0
    rows = read_rows(tmp_path / "out" / "alpha_sweep.csv")
    assert [float(r["alpha"]) for r in rows] == [0.1, 0.5]


def test_sweep_choice_matches_table(tmp_path, capsys):
    path = manifest(tmp_path, {"j": "strategy = joint", "g": "strategy = ogm_ge"}, seeds="0,1")
    assert main(["sweep-alpha", str(path), "--alphas", "0.1,0.5,1.0"]) == 0
    rows = read_rows(tmp_path / "out" / "alpha_sweep.csv")
    vals = [float(r["val_acc_mean"]) for r in rows]
    manual = [float(r["alpha"]) for r, v in zip(rows, vals) if v == max(vals)][0]
    assert [r["alpha"] for r in rows if r["chosen"] == "1"] == [repr(manual)]
    assert f"chosen alpha {manual:g}" in capsys.readouterr().out
    assert main(["sweep-alpha", str(path), "--config", "nope"]) == 2


def test_gen_data_and_csv_source(tmp_path):
    data = tmp_path / "d.csv"
    assert main(["gen-data", str(data), "--set", "n_classes=3", "--set", "d_a=4", "--set", "d_v=5",
                 "--set", "n_train=80", "--set", "n_val=20", "--set", "n_test=40"]) == 0
    batch = load_csv(data)
    assert len(batch) == 140 and batch.d_a == 4 and batch.d_v == 5
    path = manifest(tmp_path, {"j": "strategy = joint"}, seeds="0",
                    data="source = csv\npath = d.csv\nn_classes = 3\nval_fraction = 0.2\ntest_fraction = 0.25")
    assert main(["run", str(path)]) == 0
    assert main(["gen-data", str(data), "--set", "n_classes=1"]) == 2


def test_probe_verb_matches_record(tmp_path, capsys):
    path = manifest(tmp_path, {"j": "strategy = joint"}, seeds="0")
    assert main(["run", str(path)]) == 0
    capsys.readouterr()
    rec = tmp_path / "out" / "j_seed0.json"
    assert main(["probe", str(path), str(rec)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    got = {u: float(v) for u, v in (ln.split(",") for ln in lines[1:])}
    final = RunRecord.load(rec).final
    assert got == {"a": final["probe_a"], "v": final["probe_v"]}
    assert main(["probe", str(path), str(rec), "--raw", "--modality", "v"]) == 0


def test_figures_flag(tmp_path):
    pytest.importorskip("matplotlib")
    path = manifest(tmp_path, {"j": "strategy = joint", "o": "strategy = ogm"}, seeds="0")
    assert main(["compare", str(path), "--figures"]) == 0
    out = tmp_path / "out"
    assert (out / "comparison.png").stat().st_size > 0 and (out / "j_seed0_rho.png").exists()


def test_shipped_manifest_parses():
    m = load_manifest(Path(__file__).parent.parent / "manifests" / "imbalance.ini")
    assert set(c.strategy for c in m.configs.values()) == {"joint", "ogm", "ogm_ge", "modality_dropout"}
    assert m.data.synthetic.separation_a == 2.0 and m.data.synthetic.separation_v == 0.8
