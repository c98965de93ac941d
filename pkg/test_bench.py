import json
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_protocol
from core import bench
from core.errors import ConfigError
from core.merge import ratatouille, uniform_soup
from core.schemas import BenchConfig, SuiteSpec
from core.seeding import derive_seed
from core.synthetic import gen_synthetic_suite


@pytest.fixture
def ctx(tiny_suite, protocol):
    return bench.BenchContext(tiny_suite, protocol)


def test_protocol_rows_for_requested_strategies(tiny_suite, ctx):
    rows = bench.run_protocol(tiny_suite, ["soups_uniform", "ratatouille_uniform"], 2, [0, 1],
                              test_domains=["domain_1"], ctx=ctx)
    assert [(r.strategy, r.seed) for r in rows] == [
        ("ratatouille_uniform", 0), ("soups_uniform", 0), ("ratatouille_uniform", 1), ("soups_uniform", 1)]
    assert all(r.test_domain == "domain_1" and r.runs_used == 2 for r in rows)
    assert rows[0].aux_tasks_used == ["aux_0", "aux_1"]
    assert rows[1].aux_tasks_used == []
    assert all(0.0 <= r.ood_acc <= 1.0 for r in rows)


def test_single_strategy_yields_only_its_rows(tiny_suite, ctx):
    rows = bench.run_protocol(tiny_suite, ["vanilla"], 1, [0], ctx=ctx)
    assert {r.strategy for r in rows} == {"vanilla"}
    assert [r.test_domain for r in rows] == ["domain_0", "domain_1", "domain_2"]


def test_every_strategy_runs(tiny_suite, ctx):
    rows = bench.run_protocol(tiny_suite, list(bench.STRATEGIES), 2, [0], test_domains=["domain_0"], ctx=ctx)
    by_name = {r.strategy: r for r in rows}
    assert set(by_name) == set(bench.STRATEGIES)
    assert by_name["soups_uniform_dagger"].runs_used == 2 * ctx.protocol.dagger_splits
    assert by_name["moving_average"].selection == "uniform_trajectory"


def test_unknown_strategy_rejected(tiny_suite, ctx):
    with pytest.raises(ConfigError, match="unknown strategies"):
        bench.run_protocol(tiny_suite, ["soups_uniform", "bogus"], 2, [0], ctx=ctx)


def test_zero_aux_ratatouille_is_bit_identical_to_soups(ctx):
    fold = ctx.fold("domain_2", seed=5)
    soups = uniform_soup(fold.pool(3, num_aux=0))
    probe_cfg = ctx.protocol.probe.model_copy(update={"seed": derive_seed(5, "probe", "domain_2", 0)})
    outcome = ratatouille(ctx.pretrained(), [], fold.split(), 3, fold.cfgs(3), probe_cfg=probe_cfg)
    assert outcome.model.bit_equal(soups)


def test_recycled_pool_matches_ratatouille_from_scratch(tiny_suite, ctx):
    fold = ctx.fold("domain_1", seed=3)
    recycled = uniform_soup(fold.pool(4, num_aux=None))

    aux = [tiny_suite.task(n).split(None, seed=derive_seed(tiny_suite.seed, "aux-split", n))[0]
           for n in ctx.aux_names]
    aux_cfgs = [ctx.protocol.aux.model_copy(update={"seed": derive_seed(tiny_suite.seed, "aux", n)})
                for n in ctx.aux_names]
    probe_cfg = ctx.protocol.probe.model_copy(update={"seed": derive_seed(3, "probe", "domain_1", 0)})
    outcome = ratatouille(ctx.pretrained(), aux, fold.split(), 4, fold.cfgs(4), aux_cfgs=aux_cfgs, probe_cfg=probe_cfg)
    assert outcome.model.bit_equal(recycled)
    assert len(outcome.initializations) == 3


def test_carriers_are_shared_across_folds(ctx):
    first = ctx.carriers()
    ctx.fold("domain_0", 0).pool(2, num_aux=None)
    ctx.fold("domain_1", 0).pool(2, num_aux=None)
    assert ctx.carriers() is first
    assert len(first) == 2


def test_rerun_gives_identical_csv(tiny_suite, tmp_path):
    for name in ("a.csv", "b.csv"):
        ctx = bench.BenchContext(tiny_suite, tiny_protocol())
        rows = bench.run_protocol(tiny_suite, ["soups_greedy", "ratatouille_greedy"], 2, [0],
                                  test_domains=["domain_0"], ctx=ctx)
        bench.emit_csv(rows, tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_parses_back(tiny_suite, ctx, tmp_path):
    rows = bench.run_protocol(tiny_suite, ["vanilla", "inter_training"], 1, [0], test_domains=["domain_0"],
                              ctx=ctx)
    path = tmp_path / "results.csv"
    bench.emit_csv(rows, path)
    lines = path.read_bytes().split(b"\n")
    assert lines[0] == b"strategy,selection,test_domain,ood_acc,id_val_acc,seed,runs_used,aux_tasks_used"
    parsed = bench.read_results_csv(path)
    assert [r.strategy for r in parsed] == [r.strategy for r in rows]
    for a, b in zip(parsed, rows):
        assert a.ood_acc == pytest.approx(b.ood_acc, abs=5e-7)
        assert a.aux_tasks_used == b.aux_tasks_used


def test_ablate_num_aux(tiny_suite, ctx):
    points = bench.ablate_num_aux(tiny_suite, 2, 2, [0], test_domains=["domain_0"], ctx=ctx)
    assert [p.x for p in points] == [0.0, 1.0, 2.0]
    assert all(p.count == 1 and p.std == 0.0 for p in points)
    with pytest.raises(ConfigError):
        bench.ablate_num_aux(tiny_suite, 2, 3, [0], ctx=ctx)


def test_ablate_num_runs_uses_nested_prefixes(tiny_suite, ctx):
    points = bench.ablate_num_runs(tiny_suite, [1, 2], [0], test_domains=["domain_0"], ctx=ctx)
    assert [(p.strategy, p.x) for p in points] == [
        ("soups_uniform", 1.0), ("soups_uniform", 2.0), ("ratatouille_uniform", 1.0), ("ratatouille_uniform", 2.0)]
    fold = ctx.fold("domain_0", 0)
    single = fold.ood_acc(uniform_soup(fold.pool(1, num_aux=0)))
    assert points[0].mean_ood_acc == single
    frame = bench.points_frame(points)
    assert list(frame.columns) == ["experiment", "strategy", "x", "mean_ood_acc", "std", "count"]


def test_ablate_steps(tiny_suite, ctx):
    points = bench.ablate_steps(tiny_suite, [10, 20], 2, [0], test_domains=["domain_0"], ctx=ctx)
    assert sorted({p.x for p in points}) == [10.0, 20.0]
    assert {p.strategy for p in points} == {"soups_uniform", "ratatouille_uniform"}


@pytest.mark.parametrize("kind", ["within_run", "between_aux", "between_targets"])
def test_lmc_experiment(tiny_suite, ctx, kind):
    records = bench.lmc_experiment(tiny_suite, kind, [0], grid_size=5, ctx=ctx)
    assert len(records) == 1
    assert len(records[0].curve.grid) == 5
    curves, summary = bench.lmc_frames(records)
    assert list(curves.columns) == ["kind", "seed", "lambda", "accuracy"]
    assert len(summary) == 1 and summary["kind"][0] == kind


def test_lmc_kinds_needing_more_aux_tasks(tiny_suite, ctx):
    with pytest.raises(ConfigError, match="needs 3 aux tasks"):
        bench.lmc_experiment(tiny_suite, "three_way", [0], ctx=ctx)
    with pytest.raises(ConfigError):
        bench.lmc_experiment(tiny_suite, "sideways", [0], ctx=ctx)


def test_diversity_ordering_frame(tiny_suite, ctx):
    frame = bench.diversity_ordering(tiny_suite, 6, [0], ctx=ctx)
    assert list(frame["group"]) == ["same_init", "cross_init"]
    assert frame["pairs"].sum() <= 15


def test_diversity_steps_groups_pairs_by_initialization(tiny_suite, ctx):
    frame = bench.diversity_steps(tiny_suite, 6, [0, 1], ctx=ctx)
    assert list(frame.columns) == ["seed", "group", "step", "pairs", "mean_diversity"]
    assert sorted(set(frame["step"])) == [5, 10, 15, 20]
    same = frame[frame["group"] == "same_init"]
    assert set(same["pairs"]) == {3}
    assert set(frame[frame["group"] == "cross_init"]["pairs"]) == {12}

    # three initializations and three runs: every pair crosses
    few = bench.diversity_steps(tiny_suite, 3, [0], ctx=ctx)
    assert set(few["group"]) == {"cross_init"}


def test_mixing_experiment_frame(tiny_suite, ctx):
    frame = bench.mixing_experiment(tiny_suite, 2, [0], [0.0, 0.5, 1.0], repeats=2, ctx=ctx)
    assert list(frame["mu"]) == [0.0, 0.5, 1.0]
    assert (frame["mean_acc"].between(0.0, 1.0)).all()


# --- directional reproductions at toy scale (pytest -m bench) --------------

def default_suite(seed=0, **overrides):
    return gen_synthetic_suite(SuiteSpec(**overrides), seed=seed)


def shipped_config(name):
    cfg = BenchConfig.model_validate(json.loads((Path(__file__).parent / "configs" / name).read_text()))
    return cfg, gen_synthetic_suite(cfg.suite_spec, cfg.seed)


@pytest.mark.bench
def test_mid_and_final_checkpoints_are_connected():
    suite = default_suite()
    records = bench.lmc_experiment(suite, "within_run", list(range(10)), epsilon=0.02)
    assert sum(r.holds for r in records) >= 8


@pytest.mark.bench
def test_fine_tunings_from_related_carriers_are_connected():
    suite = default_suite(aux_relatedness=[0.9, 0.8])
    records = bench.lmc_experiment(suite, "between_targets", list(range(10)), epsilon=0.02)
    assert sum(r.holds for r in records) >= 8


@pytest.mark.bench
def test_cross_init_pairs_are_more_diverse():
    suite = default_suite()
    frame = bench.diversity_ordering(suite, 8, list(range(10)))
    pivot = frame.pivot(index="seed", columns="group", values="mean_diversity")
    assert int((pivot["cross_init"] > pivot["same_init"]).sum()) >= 8


@pytest.mark.bench
def test_ratatouille_matches_or_beats_soups_with_related_aux():
    suite = default_suite()
    rows = bench.run_protocol(suite, ["soups_uniform", "ratatouille_uniform"], 8, list(range(20)),
                              test_domains=["domain_0"])
    acc = {(r.strategy, r.seed): r.ood_acc for r in rows}
    soups = np.array([acc["soups_uniform", s] for s in range(20)])
    rata = np.array([acc["ratatouille_uniform", s] for s in range(20)])
    assert rata.mean() >= soups.mean()
    assert int((rata > soups).sum()) >= 12


@pytest.mark.bench
def test_mixing_curve_peaks_inside():
    suite = default_suite()
    frame = bench.mixing_experiment(suite, 8, list(range(10)), [0.0, 0.25, 0.5, 0.75, 1.0], repeats=5)
    interior = 0
    for _, group in frame.groupby("seed"):
        best_mu = group.sort_values("mean_acc", ascending=False, kind="stable")["mu"].iloc[0]
        interior += best_mu in (0.25, 0.5, 0.75)
    assert interior >= 6


@pytest.mark.bench
def test_fine_tunings_from_unrelated_carriers_can_disconnect():
    cfg, suite = shipped_config("bench_lmc_unrelated.json")
    records = bench.lmc_experiment(suite, cfg.lmc_kind, cfg.seeds, protocol=cfg.protocol,
                                   test_domain=cfg.test_domains[0], epsilon=cfg.epsilon)
    assert sum(not r.holds for r in records) >= 2


@pytest.mark.bench
def test_ratatouille_tracks_soups_with_unrelated_aux():
    cfg, suite = shipped_config("bench_soups_unrelated.json")
    rows = bench.run_protocol(suite, cfg.strategies, cfg.runs, cfg.seeds, protocol=cfg.protocol,
                              test_domains=cfg.test_domains)
    acc = {(r.strategy, r.seed): r.ood_acc for r in rows}
    gaps = np.array([acc["ratatouille_uniform", s] - acc["soups_uniform", s] for s in cfg.seeds])
    assert int((np.abs(gaps) <= 0.015).sum()) >= 16
