import json

import pytest

from tpp.cli import main
from tpp.config import RunConfig
from tpp.datasets import SbmSpec
from tpp.harness import RunResult
from tpp.nn import SgcBackbone


@pytest.fixture
def quick_config(tmp_path):
    cfg = RunConfig(task_epochs=30, pretrain_epochs=10, hidden_dim=16, sbm=SbmSpec(tasks=3, nodes_per_class=30))
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_json())
    return path


def test_profile_tasks_default_stream(capsys):
    assert main(["profile-tasks", "--mode", "ls"]) == 0
    assert "LS task-ID accuracy: 1.000" in capsys.readouterr().out


def test_profile_tasks_adversarial(capsys):
    assert main(["profile-tasks", "--adversarial"]) == 0
    out = capsys.readouterr().out
    assert "LS task-ID accuracy: 1.000" in out
    assert "NF task-ID accuracy: 1.000" not in out


def test_run_twice_is_byte_identical(tmp_path, quick_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(quick_config), "--seed", "1", "--out", str(a)]) == 0
    assert main(["run", "--config", str(quick_config), "--seed", "1", "--out", str(b)]) == 0
    for name in ("tpp_seed1.json", "tpp_seed1.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    result = RunResult.load(a / "tpp_seed1.json")
    assert result.seed == 1
    snapshot = RunConfig.from_dict(result.config)
    assert snapshot.task_epochs == 30 and snapshot.seed == 1 and snapshot.sbm.seed == 1
    assert json.loads((a / "tpp_seed1.timings.json").read_text())["pretrain"] > 0


def test_baseline_and_ablate(tmp_path, quick_config, capsys):
    assert main(["baseline", "--kind", "fine_tune", "--config", str(quick_config), "--out", str(tmp_path)]) == 0
    assert main(["ablate", "--flags", "prompt_off,task_id_off", "--config", str(quick_config), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fine_tune_seed0.json").exists()
    assert (tmp_path / "ablate_prompt_task_id_seed0.json").exists()


def test_synth_then_run_from_bundle(tmp_path, quick_config, capsys):
    bundle = tmp_path / "bundle"
    assert main(["synth", "--config", str(quick_config), "--out", str(bundle)]) == 0
    assert sorted(p.name for p in bundle.iterdir()) == ["edges.tsv", "features.bin", "labels.txt", "tasks.json"]
    assert main(["profile-tasks", "--bundle", str(bundle), "--ordering", "as_listed", "--mode", "ls"]) == 0
    assert "LS task-ID accuracy: 1.000" in capsys.readouterr().out


def test_pretrain_writes_backbone(tmp_path, quick_config):
    out = tmp_path / "bb.bin"
    assert main(["pretrain", "--config", str(quick_config), "--out", str(out)]) == 0
    bb = SgcBackbone.from_bytes(out.read_bytes())
    assert bb.w1.shape == (16, 16) and bb.frozen


def test_verify_passes(capsys):
    assert main(["verify", "--graphs", "5"]) == 0
    assert "15/15 checks passed" in capsys.readouterr().out


def test_bench_writes_csv(tmp_path, quick_config, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--config", str(quick_config), "--sizes", "10", "20", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "phase,nodes,edges,seconds"
    assert len(lines) == 1 + 2 * 4
    assert "prompt_train" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["bogus"], ["run", "--frob"], [], ["baseline", "--kind", "ewc"]])
def test_bad_usage_exits_nonzero(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_give_diagnostic(tmp_path, capsys):
    assert main(["ablate", "--flags", "nope"]) == 1
    assert "unknown ablation flag" in capsys.readouterr().err
    assert main(["run", "--bundle", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
