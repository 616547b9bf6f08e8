import json

import pytest

from fmip.cli import build_parser, main
from fmip.guidance import CandidatePool
from fmip.milp import evaluate, load_assignment, load_instance

CONFIG = """
[model]
layers = 2
hidden = 8

[train]
epochs = 2

[sampling]
steps = 4
candidates = 6

[backend]
name = brute
time_limit = 10
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "exp.ini"
    cfg.write_text(CONFIG)
    data = root / "data"
    assert main(["generate", "--family", "indep_set", "--count", "3", "--nodes", "7", "--out", str(data)]) == 0
    assert main(["label", str(data), "--config", str(cfg)]) == 0
    ckpt = root / "model.json"
    assert main(["train", str(data), "--config", str(cfg), "--out", str(ckpt)]) == 0
    return root, cfg, data, ckpt


class TestCli:
    def test_dataset_written(self, workspace):
        _, _, data, _ = workspace
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["pairs"]) == 3 and all(e["label"] for e in manifest["pairs"])

    def test_checkpoint(self, workspace):
        _, _, _, ckpt = workspace
        doc = json.loads(ckpt.read_text())
        assert doc["version"] == "fmip-ckpt-1" and doc["config"]["layers"] == 2 and doc["epoch"] == 2

    def test_resume(self, workspace, tmp_path):
        _, cfg, data, ckpt = workspace
        out = tmp_path / "more.json"
        assert main(["train", str(data), "--config", str(cfg), "--resume", str(ckpt), "--epochs", "3",
                     "--out", str(out)]) == 0
        assert len(json.loads(out.read_text())["loss_curve"]) == 3

    def test_sample_and_solve(self, workspace, tmp_path, capsys):
        _, cfg, data, ckpt = workspace
        inst_path = sorted((data / "instances").glob("*.json"))[0]
        pool = tmp_path / "pool.json"
        assert main(["sample", str(ckpt), str(inst_path), "--config", str(cfg), "--pool", str(pool),
                     "--tau", "0.5"]) == 0
        loaded = CandidatePool.load(pool)
        assert len(loaded.candidates) == 6
        out = tmp_path / "x.json"
        rc = main(["solve", str(inst_path), "--strategy", "ps", "--pool", str(pool), "--config", str(cfg),
                   "--ps", "[0.3, 0.06, 0.3]", "--out", str(out)])
        assert rc == 0
        values, obj = load_assignment(out)
        assert evaluate(load_instance(inst_path), values).feasible
        assert "status" in capsys.readouterr().out

    def test_solve_apollo_with_ckpt(self, workspace, tmp_path):
        _, cfg, data, ckpt = workspace
        inst_path = sorted((data / "instances").glob("*.json"))[1]
        assert main(["solve", str(inst_path), "--strategy", "apollo", "--ckpt", str(ckpt), "--config", str(cfg),
                     "--apollo", "[0.3, 0.06, 0.3, 2]"]) == 0

    def test_solve_needs_source(self, workspace):
        _, cfg, data, _ = workspace
        inst_path = sorted((data / "instances").glob("*.json"))[0]
        with pytest.raises(SystemExit):
            main(["solve", str(inst_path), "--strategy", "nd", "--config", str(cfg)])

    def test_eval(self, workspace, tmp_path):
        _, cfg, data, ckpt = workspace
        rep = tmp_path / "report"
        assert main(["eval", str(ckpt), str(data), "--strategies", "nd,ps", "--config", str(cfg),
                     "--report", str(rep)]) == 0
        assert "mean GAP" in (rep / "summary.txt").read_text()
        assert (rep / "records.csv").read_text().startswith("instance,method,obj")

    def test_selfcheck_subset(self, tmp_path, capsys):
        manifest = tmp_path / "m.json"
        assert main(["selfcheck", "--only", "1", "5", "--manifest", str(manifest)]) == 0
        doc = json.loads(manifest.read_text())
        assert [c["id"] for c in doc["criteria"]] == [1, 5] and doc["passed"]
        assert "[PASS]  1" in capsys.readouterr().out

    def test_parser_requires_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])
