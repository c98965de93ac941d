import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from core.errors import ConfigError, DataError
from core.schemas import SuiteSpec
from core.seeding import make_rng
from core.trainer import TaskSplit

logger = logging.getLogger(__name__)

TestArrays = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class Domain:
    name: str
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        if len(self.y) == 0:
            raise DataError(f"domain '{self.name}' is empty")


@dataclass(frozen=True)
class Task:
    name: str
    domains: Tuple[Domain, ...]
    num_classes: int
    split_fraction: float = 0.8

    def __post_init__(self):
        for d in self.domains:
            if d.y.min() < 0 or d.y.max() >= self.num_classes:
                raise DataError(f"label out of range in {self.name}/{d.name}")

    @property
    def domain_names(self) -> List[str]:
        return [d.name for d in self.domains]

    def domain(self, name: str) -> Domain:
        for d in self.domains:
            if d.name == name:
                return d
        raise DataError(f"task '{self.name}' has no domain '{name}'")

    def split(self, test_domain: Optional[str] = None, seed: int = 0) -> Tuple[TaskSplit, Optional[TestArrays]]:
        """Per-domain train/val split of every domain but the held-out one"""
        if test_domain is not None:
            self.domain(test_domain)
        xs_tr, ys_tr, ids_tr, xs_va, ys_va, ids_va = [], [], [], [], [], []
        for d in self.domains:
            if d.name == test_domain:
                continue
            perm = make_rng(seed, self.name, d.name).permutation(len(d.y))
            n_train = int(np.floor(self.split_fraction * len(d.y)))
            train, val = perm[:n_train], perm[n_train:]
            xs_tr.append(d.x[train])
            ys_tr.append(d.y[train])
            ids_tr.append(d.ids[train])
            xs_va.append(d.x[val])
            ys_va.append(d.y[val])
            ids_va.append(d.ids[val])
        if not xs_tr:
            raise DataError(f"task '{self.name}' has no training domain left")

        split = TaskSplit(
            name=self.name,
            num_classes=self.num_classes,
            x_train=np.concatenate(xs_tr), y_train=np.concatenate(ys_tr),
            x_val=np.concatenate(xs_va), y_val=np.concatenate(ys_va),
            train_ids=np.concatenate(ids_tr), val_ids=np.concatenate(ids_va),
        )
        test = None
        if test_domain is not None:
            d = self.domain(test_domain)
            test = (d.x, d.y, d.ids)
        return split, test


@dataclass(frozen=True)
class SyntheticSuite:
    spec: SuiteSpec
    seed: int
    pretrain_task: Task
    aux_tasks: Tuple[Task, ...]
    target_task: Task
    aux_relatedness: Tuple[float, ...]
    anchors: Dict[str, np.ndarray] = field(default_factory=dict)

    def task(self, name: str) -> Task:
        for t in (self.pretrain_task, self.target_task, *self.aux_tasks):
            if t.name == name:
                return t
        raise DataError(f"suite has no task '{name}'")


def _rotation(rng: np.random.Generator, dim: int, magnitude: float) -> np.ndarray:
    """Orthogonal matrix via the Cayley transform of a scaled random skew matrix"""
    g = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    skew = magnitude * (g - g.T) / 2.0
    eye = np.eye(dim)
    return np.linalg.solve(eye - skew, eye + skew)


def _blend(target: np.ndarray, fresh: np.ndarray, relatedness: float) -> np.ndarray:
    """relatedness 1 gives target exactly, 0 gives fresh; variance preserved in between"""
    if relatedness == 1.0:
        return target.copy()
    if relatedness == 0.0:
        return fresh.copy()
    return relatedness * target + np.sqrt(1.0 - relatedness ** 2) * fresh


def _related_anchors(rng: np.random.Generator, target: np.ndarray, num_classes: int, relatedness: float,
                     scale: float) -> np.ndarray:
    dim = target.shape[1]
    fresh = scale * rng.normal(size=(num_classes, dim))
    shared = min(num_classes, target.shape[0])
    anchors = fresh.copy()
    anchors[:shared] = _blend(target[:shared], fresh[:shared], relatedness)
    return anchors


class _IdCounter:
    def __init__(self):
        self.next = 0

    def take(self, n: int) -> np.ndarray:
        ids = np.arange(self.next, self.next + n, dtype=np.int64)
        self.next += n
        return ids


def _sample_domain(rng: np.random.Generator, name: str, anchors: np.ndarray, n: int, spec: SuiteSpec,
                   shift: float, ids: _IdCounter) -> Domain:
    num_classes, dim = anchors.shape
    rotation = _rotation(rng, dim, shift)
    translation = shift * 0.5 * rng.normal(size=dim)
    y = rng.permutation(np.arange(n) % num_classes)
    x = anchors[y] @ rotation.T + translation + spec.noise_std * rng.normal(size=(n, dim))
    return Domain(name, x, y.astype(np.int64), ids.take(n))


def gen_synthetic_suite(spec: SuiteSpec, seed: int) -> SyntheticSuite:
    """Gaussian class clusters; domains rotate and translate the shared anchors"""
    if spec.feature_dim < 2:
        raise ConfigError(f"degenerate suite: feature_dim={spec.feature_dim} < 2")
    if spec.num_classes < 2:
        raise ConfigError(f"degenerate suite: num_classes={spec.num_classes} < 2")
    if spec.num_domains < 3:
        raise ConfigError(f"degenerate suite: num_domains={spec.num_domains} < 3")

    ids = _IdCounter()
    dim = spec.feature_dim
    target_anchors = spec.anchor_scale * make_rng(seed, "target-anchors").normal(size=(spec.num_classes, dim))

    rng = make_rng(seed, "target")
    target = Task(
        "target",
        tuple(_sample_domain(rng, f"domain_{k}", target_anchors, spec.samples_per_domain, spec,
                             spec.domain_shift, ids)
              for k in range(spec.num_domains)),
        spec.num_classes, spec.split_fraction,
    )

    anchors = {"target": target_anchors}
    aux_tasks = []
    class_counts = spec.aux_num_classes or [spec.num_classes] * len(spec.aux_relatedness)
    for i, (relatedness, k) in enumerate(zip(spec.aux_relatedness, class_counts)):
        if k < 2:
            raise ConfigError(f"degenerate suite: aux task {i} has {k} classes")
        name = f"aux_{i}"
        aux_anchors = _related_anchors(make_rng(seed, name, "anchors"), target_anchors, k, relatedness,
                                       spec.anchor_scale)
        anchors[name] = aux_anchors
        rng = make_rng(seed, name)
        domains = tuple(_sample_domain(rng, f"{name}_domain_{j}", aux_anchors, spec.aux_samples_per_domain, spec,
                                       spec.domain_shift, ids)
                        for j in range(spec.aux_num_domains))
        aux_tasks.append(Task(name, domains, k, spec.split_fraction))

    pt_anchors = _related_anchors(make_rng(seed, "pretrain", "anchors"), target_anchors,
                                  spec.pretrain_num_classes, spec.pretrain_relatedness, spec.anchor_scale)
    anchors["pretrain"] = pt_anchors
    source = _sample_domain(make_rng(seed, "pretrain"), "source", pt_anchors, spec.pretrain_samples, spec,
                            0.0, ids)
    pretrain_task = Task("pretrain", (source,), spec.pretrain_num_classes, spec.split_fraction)

    logger.info("generated suite: %d target domains, %d aux tasks, seed %d",
                spec.num_domains, len(aux_tasks), seed)
    return SyntheticSuite(spec, seed, pretrain_task, tuple(aux_tasks), target,
                          tuple(spec.aux_relatedness), anchors)


# --- JSON form -------------------------------------------------------------

def _task_payload(task: Task) -> Dict:
    return {
        "name": task.name,
        "num_classes": task.num_classes,
        "split_fraction": task.split_fraction,
        "domains": [{"name": d.name, "x": d.x.tolist(), "y": d.y.tolist(), "ids": d.ids.tolist()}
                    for d in task.domains],
    }


def _task_from_payload(payload: Dict) -> Task:
    domains = tuple(Domain(d["name"], np.asarray(d["x"], dtype=np.float64), np.asarray(d["y"], dtype=np.int64),
                           np.asarray(d["ids"], dtype=np.int64))
                    for d in payload["domains"])
    return Task(payload["name"], domains, int(payload["num_classes"]), float(payload["split_fraction"]))


def suite_to_payload(suite: SyntheticSuite) -> Dict:
    return {
        "spec": suite.spec.model_dump(mode="json"),
        "seed": suite.seed,
        "pretrain_task": _task_payload(suite.pretrain_task),
        "aux_tasks": [_task_payload(t) for t in suite.aux_tasks],
        "target_task": _task_payload(suite.target_task),
        "aux_relatedness": list(suite.aux_relatedness),
        "anchors": {k: v.tolist() for k, v in sorted(suite.anchors.items())},
    }


def suite_from_payload(payload: Dict) -> SyntheticSuite:
    return SyntheticSuite(
        spec=SuiteSpec.model_validate(payload["spec"]),
        seed=int(payload["seed"]),
        pretrain_task=_task_from_payload(payload["pretrain_task"]),
        aux_tasks=tuple(_task_from_payload(t) for t in payload["aux_tasks"]),
        target_task=_task_from_payload(payload["target_task"]),
        aux_relatedness=tuple(float(r) for r in payload["aux_relatedness"]),
        anchors={k: np.asarray(v, dtype=np.float64) for k, v in payload.get("anchors", {}).items()},
    )


def save_suite(suite: SyntheticSuite, path: Union[str, Path]):
    text = json.dumps(suite_to_payload(suite), sort_keys=True, separators=(",", ":"))
    Path(path).write_bytes((text + "\n").encode("utf-8"))


def load_suite(path: Union[str, Path]) -> SyntheticSuite:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable suite file {path}: {e}")
    return suite_from_payload(payload)

