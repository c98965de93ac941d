from dataclasses import replace

import numpy as np
import pytest
from pydantic import ValidationError

from core.errors import ConfigError, DataError
from core.network import accuracy, init_head, init_params
from core.param_store import Checkpoint, Lineage, ParamBlock
from core.schemas import HyperParamDistribution, HyperParams, NetSpec
from core.trainer import (RunResult, TaskSplit, TrajectoryPoint, average_trajectory, collect_moving_average, fine_tune,
                          inter_train, linear_probe, pretrain, sample_hparams, select_best_by_id_val)


def test_fine_tune_is_deterministic(small_net, toy_task, fast_hparams):
    a = fine_tune(small_net, toy_task, fast_hparams)
    b = fine_tune(small_net, toy_task, fast_hparams)
    assert a.final.bit_equal(b.final)
    assert [p.step for p in a.trajectory] == [5, 10, 15, 20]


def test_trajectory_records_final_step(small_net, toy_task):
    cfg = HyperParams(learning_rate=1e-2, batch_size=16, steps=12, eval_every=5)
    run = fine_tune(small_net, toy_task, cfg)
    assert [p.step for p in run.trajectory] == [5, 10, 12]
    assert run.final.step == 12


def test_best_point_prefers_earliest_tie(small_net):
    points = tuple(TrajectoryPoint(s, small_net, acc) for s, acc in [(5, 0.5), (10, 0.8), (15, 0.8)])
    run = RunResult(points, small_net, HyperParams(steps=15, eval_every=5))
    assert run.best_point.step == 10
    assert run.at_step(15).id_val_acc == 0.8
    assert run.at_step(7) is None


def test_trajectory_must_increase(small_net):
    points = (TrajectoryPoint(10, small_net, 0.1), TrajectoryPoint(5, small_net, 0.2))
    with pytest.raises(DataError):
        RunResult(points, small_net, HyperParams(steps=10, eval_every=5))


def test_fine_tune_learns_separable_task(small_net, toy_task):
    cfg = HyperParams(learning_rate=2e-2, batch_size=16, steps=80, eval_every=20)
    run = fine_tune(small_net, toy_task, cfg)
    assert run.best_acc > 0.8


def test_lineage_extended_by_task(small_net, toy_task, fast_hparams):
    run = fine_tune(small_net, toy_task, fast_hparams)
    assert run.final.lineage.extends(small_net.lineage)
    assert run.final.lineage.chain[-1].task_id == "toy"


def test_frozen_featurizer_is_untouched(small_net, toy_task):
    cfg = HyperParams(learning_rate=1e-2, batch_size=16, steps=20, eval_every=5, freeze_featurizer_steps=10)
    run = fine_tune(small_net, toy_task, cfg)
    at_freeze = run.at_step(10).checkpoint
    for a, b in zip(at_freeze.featurizer, small_net.featurizer):
        assert a.bit_equal(b)
    assert not at_freeze.classifier[0].bit_equal(small_net.classifier[0])
    assert not run.final.featurizer[0].bit_equal(small_net.featurizer[0])


def test_freeze_must_be_below_steps():
    with pytest.raises(ValidationError, match="freeze exceeds steps"):
        HyperParams(steps=10, eval_every=5, freeze_featurizer_steps=10)


def test_dimension_mismatch(toy_task, fast_hparams):
    wrong = NetSpec(input_dim=3, hidden_widths=[4], num_classes=3)
    with pytest.raises(DataError, match="dimension mismatch"):
        fine_tune(init_params(wrong, 0), toy_task, fast_hparams)


def test_linear_probe_only_trains_head(small_net, toy_task, fast_hparams):
    probe = linear_probe(small_net.featurizer, toy_task, fast_hparams)
    assert [b.name for b in probe] == ["head.weight", "head.bias"]
    fresh = init_head(5, 3, fast_hparams.seed)
    assert not probe[0].bit_equal(fresh[0])


def test_pretrain_roots_lineage(toy_task, fast_hparams):
    net = NetSpec(input_dim=4, hidden_widths=[5], num_classes=3)
    pt = pretrain(net, toy_task, fast_hparams)
    assert pt.lineage == Lineage("toy")
    assert pt.step == 0


def test_inter_train_empty_chain_is_identity(small_net):
    assert inter_train(small_net, [], []) is small_net


def test_inter_train_keeps_pretrained_classifier(small_net, toy_task, fast_hparams):
    carrier = inter_train(small_net, [toy_task], [fast_hparams])
    for a, b in zip(carrier.classifier, small_net.classifier):
        assert a.bit_equal(b)
    assert not carrier.featurizer[0].bit_equal(small_net.featurizer[0])
    robust = inter_train(small_net, [toy_task], [fast_hparams], robust=True)
    assert robust.lineage.chain[-1].task_id == "moving-average"


def test_moving_average_of_one_checkpoint(small_net):
    run = RunResult((TrajectoryPoint(5, small_net, 0.5),), small_net, HyperParams(steps=5, eval_every=5))
    assert collect_moving_average(run) is small_net


def test_moving_average_is_uniform_mean(small_net):
    shifted = small_net.map_values(lambda name, v: v + 2.0)
    avg = average_trajectory([small_net, shifted])
    assert np.allclose(avg.flat(), small_net.flat() + 1.0)


def test_sample_hparams_draws_from_candidates():
    dist = HyperParamDistribution()
    seen = {sample_hparams(dist, s).learning_rate for s in range(50)}
    assert seen <= set(dist.learning_rates)
    assert len(seen) > 1
    assert sample_hparams(dist, 3) == sample_hparams(dist, 3)


def test_sample_hparams_rejects_empty_sets():
    with pytest.raises(ConfigError, match="empty candidate set"):
        sample_hparams(HyperParamDistribution(dropouts=[]), 0)


def test_select_best_by_id_val(small_net):
    other = small_net.map_values(lambda name, v: v * 2.0)
    cfg = HyperParams(steps=5, eval_every=5)
    runs = [RunResult((TrajectoryPoint(5, small_net, 0.4),), small_net, cfg),
            RunResult((TrajectoryPoint(5, other, 0.6),), other, cfg)]
    assert select_best_by_id_val(runs) is other


def test_sgd_with_zero_lr_keeps_init(small_net, toy_task):
    cfg = HyperParams(learning_rate=0.0, batch_size=16, steps=15, eval_every=5, optimizer="sgd")
    run = fine_tune(small_net, toy_task, cfg)
    assert run.final.bit_equal(small_net, include_metadata=False)
    assert all(p.checkpoint.bit_equal(small_net, include_metadata=False) for p in run.trajectory)


def test_linear_probe_separates_separable_features():
    # identity featurizer; class k lives on axis k
    featurizer = (ParamBlock("feat.0.weight", np.eye(4)), ParamBlock("feat.0.bias", np.zeros(4)))
    rng = np.random.default_rng(0)
    y = np.arange(300) % 3
    x = 3.0 * np.eye(4)[y] + 0.1 * rng.normal(size=(300, 4))
    task = TaskSplit(name="axes", num_classes=3, x_train=x[:200], y_train=y[:200], x_val=x[200:], y_val=y[200:])
    cfg = HyperParams(learning_rate=5e-2, batch_size=32, steps=200, eval_every=50)
    head = linear_probe(featurizer, task, cfg)
    assert accuracy(Checkpoint(featurizer, head), task.x_val, task.y_val) >= 0.99


def test_sample_hparams_frequencies_are_uniform():
    dist = HyperParamDistribution(learning_rates=[1e-3, 3e-3, 5e-3], dropouts=[0.0, 0.1, 0.5],
                                  weight_decays=[1e-6, 1e-4])
    draws = [sample_hparams(dist, s) for s in range(10_000)]
    for field_name, values in [("learning_rate", dist.learning_rates), ("dropout", dist.dropouts),
                               ("weight_decay", dist.weight_decays)]:
        counts = {v: 0 for v in values}
        for h in draws:
            counts[getattr(h, field_name)] += 1
        for v, c in counts.items():
            assert abs(c / len(draws) - 1 / len(values)) < 0.03, (field_name, v, c)


def test_inter_train_chain_appends_one_lineage_entry(small_net, toy_task, fast_hparams):
    other = replace(toy_task, name="toy_b")
    one = inter_train(small_net, [toy_task], [fast_hparams])
    two = inter_train(small_net, [toy_task, other], [fast_hparams, fast_hparams])
    assert two.lineage.extends(one.lineage)
    assert len(two.lineage.chain) == len(one.lineage.chain) + 1
    assert [e.task_id for e in two.lineage.chain[-2:]] == ["toy", "toy_b"]
