import json

import pandas as pd
import pytest
from click.testing import CliRunner

from app import cli
from conftest import TINY_SUITE, tiny_protocol
from core.param_store import load_checkpoint

FAST = {"learning_rate": 0.01, "batch_size": 16, "steps": 20, "eval_every": 5}


def invoke(tmp_path, subcommand, config, *flags):
    path = tmp_path / f"{subcommand}-{len(list(tmp_path.iterdir()))}.json"
    path.write_text(json.dumps(config))
    return CliRunner().invoke(cli, [subcommand, "--config", str(path), *flags])


@pytest.fixture
def workdir(tmp_path):
    """A generated suite, a pre-trained net, its probe and one fine-tuning"""
    suite_cfg = {"suite": TINY_SUITE.model_dump(mode="json"), "seed": 3}
    assert invoke(tmp_path, "gen", suite_cfg, "--out", str(tmp_path / "suite")).exit_code == 0
    suite = str(tmp_path / "suite" / "suite.json")

    pt_cfg = {"mode": "pretrain", "suite": suite, "hidden_widths": [8], "hparams": FAST}
    assert invoke(tmp_path, "train", pt_cfg, "--out", str(tmp_path / "pt")).exit_code == 0

    probe_cfg = {"mode": "probe", "suite": suite, "init": str(tmp_path / "pt" / "pretrained.rata"),
                 "test_domain": "domain_0", "hparams": FAST}
    assert invoke(tmp_path, "train", probe_cfg, "--out", str(tmp_path / "probe")).exit_code == 0

    ft_cfg = {"mode": "finetune", "suite": suite, "init": str(tmp_path / "probe" / "probed.rata"),
              "test_domain": "domain_0", "hparams": FAST}
    assert invoke(tmp_path, "train", ft_cfg, "--out", str(tmp_path / "ft")).exit_code == 0
    return tmp_path


def test_gen_is_byte_identical_and_seed_flag_wins(tmp_path):
    cfg = {"suite": TINY_SUITE.model_dump(mode="json"), "seed": 1}
    first = invoke(tmp_path, "gen", cfg, "--out", str(tmp_path / "a"))
    invoke(tmp_path, "gen", cfg, "--out", str(tmp_path / "b"))
    result = invoke(tmp_path, "gen", cfg, "--out", str(tmp_path / "c"), "--seed", "9")
    assert first.exit_code == 0 and result.exit_code == 0
    a = (tmp_path / "a" / "suite.json").read_bytes()
    assert a == (tmp_path / "b" / "suite.json").read_bytes()
    assert json.loads((tmp_path / "c" / "suite.json").read_text())["seed"] == 9
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["files"] == ["suite.json"]
    assert f"config digest {manifest['config_digest']}" in first.output


def test_missing_key_exits_2_and_names_it(tmp_path):
    result = invoke(tmp_path, "gen", {"seed": 1}, "--out", str(tmp_path / "x"))
    assert result.exit_code == 2
    assert "suite" in result.output


def test_unknown_key_rejected(tmp_path):
    cfg = {"suite": TINY_SUITE.model_dump(mode="json"), "colour": "red"}
    result = invoke(tmp_path, "gen", cfg, "--out", str(tmp_path / "x"))
    assert result.exit_code == 2
    assert "colour" in result.output


def test_missing_config_file_exits_4(tmp_path):
    result = CliRunner().invoke(cli, ["gen", "--config", str(tmp_path / "nope.json")])
    assert result.exit_code == 4


def test_probe_keeps_featurizer(workdir):
    pt = load_checkpoint(workdir / "pt" / "pretrained.rata")
    probed = load_checkpoint(workdir / "probe" / "probed.rata")
    assert all(a.bit_equal(b) for a, b in zip(pt.featurizer, probed.featurizer))


def test_finetune_writes_run_and_manifest(workdir):
    run = json.loads((workdir / "ft" / "run.json").read_text())
    assert [p["step"] for p in run["trajectory"]] == [5, 10, 15, 20]
    manifest = json.loads((workdir / "ft" / "manifest.json").read_text())
    assert manifest["files"] == ["best.rata", "final.rata", "run.json"]


def test_intertrain_with_empty_chain_copies_input(workdir):
    cfg = {"mode": "intertrain", "suite": str(workdir / "suite" / "suite.json"),
           "init": str(workdir / "pt" / "pretrained.rata"), "chain": []}
    assert invoke(workdir, "train", cfg, "--out", str(workdir / "it")).exit_code == 0
    assert (workdir / "it" / "intertrained.rata").read_bytes() == (workdir / "pt" / "pretrained.rata").read_bytes()


def test_merge_identities(workdir):
    best = str(workdir / "ft" / "best.rata")
    probed = workdir / "probe" / "probed.rata"
    assert invoke(workdir, "merge", {"strategy": "uniform", "inputs": [best]}, "--out",
                  str(workdir / "m1")).exit_code == 0
    assert (workdir / "m1" / "merged.rata").read_bytes() == (workdir / "ft" / "best.rata").read_bytes()

    cfg = {"strategy": "wise", "inputs": [best], "pretrained": str(probed), "lambda": 1.0}
    assert invoke(workdir, "merge", cfg, "--out", str(workdir / "m2")).exit_code == 0
    assert (workdir / "m2" / "merged.rata").read_bytes() == probed.read_bytes()


def test_merge_greedy_writes_report(workdir):
    cfg = {"strategy": "greedy", "inputs": [str(workdir / "ft" / "best.rata"), str(workdir / "ft" / "final.rata")],
           "suite": str(workdir / "suite" / "suite.json"), "test_domain": "domain_0", "output": "soup.rata"}
    assert invoke(workdir, "merge", cfg, "--out", str(workdir / "g")).exit_code == 0
    report = json.loads((workdir / "g" / "soup.greedy.json").read_text())
    assert report["accepted"][0] == report["candidate_order"][0]


def test_merge_rejects_bad_lambda(workdir):
    best = str(workdir / "ft" / "best.rata")
    cfg = {"strategy": "interpolate", "inputs": [best, best], "lambda": 1.5}
    assert invoke(workdir, "merge", cfg, "--out", str(workdir / "bad")).exit_code == 2


def test_corrupted_checkpoint_exits_3(workdir):
    broken = workdir / "broken.rata"
    broken.write_bytes(b"NOPE" + (workdir / "ft" / "best.rata").read_bytes()[4:])
    cfg = {"strategy": "uniform", "inputs": [str(broken)]}
    result = invoke(workdir, "merge", cfg, "--out", str(workdir / "m"))
    assert result.exit_code == 3
    assert "bad magic" in result.output


def test_analyze_lmc_and_diversity(workdir):
    best = str(workdir / "ft" / "best.rata")
    base = {"suite": str(workdir / "suite" / "suite.json"), "test_domain": "domain_0", "models": [best, best]}
    assert invoke(workdir, "analyze", {**base, "mode": "lmc", "grid_size": 5}, "--out",
                  str(workdir / "lmc")).exit_code == 0
    lines = (workdir / "lmc" / "lmc.csv").read_text().splitlines()
    assert lines[0] == "lambda,accuracy"
    assert len({line.split(",")[1] for line in lines[1:]}) == 1

    assert invoke(workdir, "analyze", {**base, "mode": "diversity", "split": "id"}, "--out",
                  str(workdir / "div")).exit_code == 0
    summary = json.loads((workdir / "div" / "diversity_summary.json").read_text())
    assert summary["mean"] == 0.0
    assert (workdir / "div" / "diversity.csv").read_text().splitlines()[0] == "i,j,diversity"


def bench_config(suite, **extra):
    return {"suite": suite, "protocol": tiny_protocol().model_dump(mode="json"), "runs": 2, "seeds": [0],
            "test_domains": ["domain_0"], **extra}


def test_bench_single_strategy_is_deterministic(workdir):
    cfg = bench_config(str(workdir / "suite" / "suite.json"), strategies=["soups_uniform"])
    for out in ("b1", "b2"):
        assert invoke(workdir, "bench", cfg, "--out", str(workdir / out)).exit_code == 0
    first = (workdir / "b1" / "results.csv").read_bytes()
    assert first == (workdir / "b2" / "results.csv").read_bytes()
    rows = first.decode().strip().split("\n")[1:]
    assert len(rows) == 1 and rows[0].startswith("soups_uniform,uniform,domain_0,")


def test_bench_num_runs_ablation(workdir):
    cfg = bench_config(str(workdir / "suite" / "suite.json"), experiment="num_runs", run_grid=[1, 2])
    assert invoke(workdir, "bench", cfg, "--out", str(workdir / "nr")).exit_code == 0
    lines = (workdir / "nr" / "ablation_num_runs.csv").read_text().splitlines()
    assert lines[0] == "experiment,strategy,x,mean_ood_acc,std,count"
    assert len(lines) == 5


def test_bench_needs_exactly_one_suite_source(workdir):
    cfg = bench_config(str(workdir / "suite" / "suite.json"), suite_spec=TINY_SUITE.model_dump(mode="json"))
    assert invoke(workdir, "bench", cfg, "--out", str(workdir / "x")).exit_code == 2


def test_bench_diversity_steps(workdir):
    cfg = bench_config(str(workdir / "suite" / "suite.json"), experiment="diversity_steps", runs=6)
    assert invoke(workdir, "bench", cfg, "--out", str(workdir / "ds")).exit_code == 0
    frame = pd.read_csv(workdir / "ds" / "diversity_steps.csv")
    assert list(frame.columns) == ["seed", "group", "step", "pairs", "mean_diversity"]
    assert list(frame["step"]) == [5, 10, 15, 20] * 2
    assert list(frame["group"]) == ["same_init"] * 4 + ["cross_init"] * 4
    assert list(frame["pairs"]) == [3] * 4 + [12] * 4
    manifest = json.loads((workdir / "ds" / "manifest.json").read_text())
    assert "diversity_steps.csv" in manifest["files"]
