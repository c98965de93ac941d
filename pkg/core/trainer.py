import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, DataError
from core.network import (OptState, accuracy, feature_dim, init_head, init_opt_state, init_params, input_dim,
                          loss_and_grad, num_classes, optimizer_step)
from core.param_store import Checkpoint, Lineage, ParamBlock, hparams_digest, stable_digest
from core.schemas import HyperParamDistribution, HyperParams, NetSpec
from core.seeding import SEED_MASK

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSplit:
    """Train and ID-validation arrays of one task (one leave-one-out fold for targets)"""

    name: str
    num_classes: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    train_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    val_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def val_accuracy(self, params: Checkpoint) -> float:
        return accuracy(params, self.x_val, self.y_val)


@dataclass(frozen=True)
class TrajectoryPoint:
    step: int
    checkpoint: Checkpoint
    id_val_acc: float


@dataclass(frozen=True)
class RunResult:
    trajectory: Tuple[TrajectoryPoint, ...]
    final: Checkpoint
    hparams: HyperParams

    def __post_init__(self):
        steps = [p.step for p in self.trajectory]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise DataError("trajectory steps must be strictly increasing")

    @property
    def best_point(self) -> TrajectoryPoint:
        # max() keeps the first maximum: earliest step wins ties
        return max(self.trajectory, key=lambda p: p.id_val_acc)

    @property
    def best(self) -> Checkpoint:
        return self.best_point.checkpoint

    @property
    def best_acc(self) -> float:
        return self.best_point.id_val_acc

    def at_step(self, step: int) -> Optional[TrajectoryPoint]:
        for p in self.trajectory:
            if p.step == step:
                return p
        return None

    def summary(self) -> dict:
        return {
            "hparams": self.hparams.model_dump(mode="json"),
            "trajectory": [{"step": p.step, "id_val_acc": p.id_val_acc} for p in self.trajectory],
            "best_step": self.best_point.step,
            "best_id_val_acc": self.best_acc,
            "final_step": self.final.step,
        }


def _check_task(init: Checkpoint, task: TaskSplit):
    if len(task.y_train) == 0:
        raise DataError(f"empty training split for task '{task.name}'")
    if task.x_train.shape[1] != input_dim(init):
        raise DataError(f"dimension mismatch: task '{task.name}' has {task.x_train.shape[1]} features, "
                        f"network expects {input_dim(init)}")
    if num_classes(init) != task.num_classes:
        raise DataError(f"dimension mismatch: head has {num_classes(init)} classes, "
                        f"task '{task.name}' has {task.num_classes}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless minibatch indices; reshuffled once per epoch"""
    batch_size = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def _mask_featurizer(params: Checkpoint, grads):
    masked = dict(grads)
    for b in params.featurizer:
        masked[b.name] = np.zeros_like(grads[b.name])
    return masked


def _train(init: Checkpoint, task: TaskSplit, cfg: HyperParams, freeze_steps: int, record: bool) -> RunResult:
    """Minibatch ERM for cfg.steps; featurizer gradients zeroed while step <= freeze_steps"""
    _check_task(init, task)
    seq = np.random.SeedSequence(cfg.seed)
    data_seq, dropout_seq = seq.spawn(2)
    data_rng = np.random.default_rng(data_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    lineage = init.lineage.extend(task.name, hparams_digest(cfg))
    params = init
    state: OptState = init_opt_state(cfg.optimizer, init, cfg.learning_rate)
    batches = _batches(len(task.y_train), cfg.batch_size, data_rng)
    trajectory: List[TrajectoryPoint] = []

    for step in range(1, cfg.steps + 1):
        idx = next(batches)
        drop_seed = int(dropout_rng.integers(0, SEED_MASK))
        loss, grads = loss_and_grad(params, task.x_train[idx], task.y_train[idx], cfg.weight_decay,
                                    train_mode=True, seed=drop_seed, dropout=cfg.dropout)
        if step <= freeze_steps:
            grads = _mask_featurizer(params, grads)
        state, params = optimizer_step(state, params, grads)

        if record and (step % cfg.eval_every == 0 or step == cfg.steps):
            snapshot = params.with_lineage(lineage, step=step)
            acc = task.val_accuracy(snapshot)
            trajectory.append(TrajectoryPoint(step, snapshot, acc))
            logger.debug("%s step %d loss %.4f id-val acc %.4f", task.name, step, loss, acc)

    final = params.with_lineage(lineage, step=cfg.steps)
    return RunResult(tuple(trajectory), final, cfg)


def fine_tune(init: Checkpoint, task: TaskSplit, cfg: HyperParams) -> RunResult:
    """theta = Train(init, T), recording the ID-val trajectory"""
    run = _train(init, task, cfg, cfg.freeze_featurizer_steps, record=True)
    logger.info("fine-tuned on %s: best id-val acc %.4f at step %d", task.name, run.best_acc, run.best_point.step)
    return run


def linear_probe(featurizer: Sequence[ParamBlock], task: TaskSplit, cfg: HyperParams) -> Tuple[ParamBlock, ...]:
    """Train only a fresh classifier on top of a frozen featurizer"""
    body = Checkpoint(tuple(featurizer), (), Lineage("probe"))
    head = init_head(feature_dim(body), task.num_classes, cfg.seed)
    run = _train(body.with_classifier(head), task, cfg, freeze_steps=cfg.steps, record=False)
    logger.info("linear probe on %s: id-val acc %.4f", task.name, task.val_accuracy(run.final))
    return run.final.classifier


def pretrain(net: NetSpec, task: TaskSplit, cfg: HyperParams) -> Checkpoint:
    """Train from scratch on the pre-training task; the result is rooted at that task"""
    if net.num_classes != task.num_classes:
        raise DataError(f"net has {net.num_classes} classes, task '{task.name}' has {task.num_classes}")
    init = init_params(net, cfg.seed)
    # architecture dropout governs pre-training; fine-tunes take theirs from HyperParams
    run = _train(init, task, cfg.model_copy(update={"dropout": net.dropout_rate}), freeze_steps=0, record=False)
    logger.info("pre-trained on %s: id-val acc %.4f", task.name, task.val_accuracy(run.final))
    return run.final.with_lineage(Lineage(task.name), step=0)


def average_trajectory(ckpts: Sequence[Checkpoint]) -> Checkpoint:
    """Uniform average of checkpoints collected along one trajectory, in step order"""
    if not ckpts:
        raise DataError("empty trajectory")
    if len(ckpts) == 1:
        return ckpts[0]
    k = len(ckpts)

    def mean(name, _):
        total = ckpts[0].block(name).values.copy()
        for c in ckpts[1:]:
            total = total + c.block(name).values
        return total / k

    last = ckpts[-1]
    lineage = last.lineage.extend("moving-average", stable_digest([c.step for c in ckpts]))
    return last.map_values(mean).with_lineage(lineage)


def collect_moving_average(run: RunResult) -> Checkpoint:
    """Uniform average of every checkpoint collected along the run's trajectory"""
    return average_trajectory([p.checkpoint for p in run.trajectory])


def inter_train(pretrained: Checkpoint, chain: Sequence[TaskSplit], cfgs: Sequence[HyperParams],
                robust: bool = False) -> Checkpoint:
    """Train(Train(theta_pt, T_1), ...) keeping only the featurizer.

    Each task gets a fresh head for its own class count; the head is dropped
    afterwards and the returned carrier keeps pretrained's classifier. An
    empty chain returns pretrained itself (auxiliary task "number zero").
    """
    if len(chain) != len(cfgs):
        raise ConfigError(f"{len(chain)} chain tasks but {len(cfgs)} configs")
    current = pretrained
    for task, cfg in zip(chain, cfgs):
        head = init_head(feature_dim(current), task.num_classes, cfg.seed)
        run = fine_tune(current.with_classifier(head), task, cfg)
        trained = collect_moving_average(run) if robust else run.final
        current = Checkpoint(trained.featurizer, pretrained.classifier, trained.lineage, step=0)
        logger.info("inter-trained on %s%s", task.name, " (moving average)" if robust else "")
    return current


def sample_hparams(dist: HyperParamDistribution, seed: int) -> HyperParams:
    """Uniform independent draw from each candidate set"""
    candidates = {
        "learning_rate": dist.learning_rates,
        "batch_size": dist.batch_sizes,
        "dropout": dist.dropouts,
        "weight_decay": dist.weight_decays,
    }
    for name, values in candidates.items():
        if not values:
            raise ConfigError(f"empty candidate set for {name}")
    rng = np.random.default_rng(seed)
    drawn = {name: values[int(rng.integers(len(values)))] for name, values in candidates.items()}
    return HyperParams(
        **drawn,
        steps=dist.steps,
        eval_every=min(dist.eval_every, dist.steps),
        freeze_featurizer_steps=min(dist.freeze_featurizer_steps, dist.steps - 1),
        seed=int(rng.integers(0, SEED_MASK)),
        optimizer=dist.optimizer,
    )


def select_best_by_id_val(runs: Sequence[RunResult]) -> Checkpoint:
    if not runs:
        raise DataError("no runs to select from")
    return max(runs, key=lambda r: r.best_acc).best
