import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from core.errors import DataError
from core.param_store import Checkpoint, Lineage, ParamBlock
from core.schemas import NetSpec

logger = logging.getLogger(__name__)

Grads = Dict[str, np.ndarray]


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_head(feature_dim: int, num_classes: int, seed: int) -> Tuple[ParamBlock, ...]:
    """Fresh classifier head: He-uniform weight, zero bias"""
    rng = np.random.default_rng(seed)
    return (
        ParamBlock("head.weight", _he_uniform(rng, feature_dim, num_classes)),
        ParamBlock("head.bias", np.zeros(num_classes)),
    )


def init_params(spec: NetSpec, seed: int) -> Checkpoint:
    rng = np.random.default_rng(seed)
    featurizer: List[ParamBlock] = []
    fan_in = spec.input_dim
    for i, width in enumerate(spec.hidden_widths):
        featurizer.append(ParamBlock(f"feat.{i}.weight", _he_uniform(rng, fan_in, width)))
        featurizer.append(ParamBlock(f"feat.{i}.bias", np.zeros(width)))
        fan_in = width
    classifier = (
        ParamBlock("head.weight", _he_uniform(rng, fan_in, spec.num_classes)),
        ParamBlock("head.bias", np.zeros(spec.num_classes)),
    )
    return Checkpoint(tuple(featurizer), classifier, Lineage("scratch"), step=0)


# --- shape helpers ---------------------------------------------------------

def _layers(blocks) -> List[Tuple[ParamBlock, ParamBlock]]:
    by_name = {b.name: b for b in blocks}
    layers = []
    i = 0
    while f"feat.{i}.weight" in by_name:
        layers.append((by_name[f"feat.{i}.weight"], by_name[f"feat.{i}.bias"]))
        i += 1
    return layers


def input_dim(params: Checkpoint) -> int:
    return _layers(params.featurizer)[0][0].shape[0]


def feature_dim(params: Checkpoint) -> int:
    return _layers(params.featurizer)[-1][0].shape[1]


def num_classes(params: Checkpoint) -> int:
    return params.block("head.weight").shape[1]


def _check_inputs(params: Checkpoint, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != input_dim(params):
        raise DataError(f"dimension mismatch: batch has shape {x.shape}, network expects "
                        f"{input_dim(params)} features")
    head = params.block("head.weight")
    if head.shape[0] != feature_dim(params):
        raise DataError(f"dimension mismatch: head expects {head.shape[0]} features, "
                        f"featurizer yields {feature_dim(params)}")


# --- forward / backward ----------------------------------------------------

def _tensors(params: Checkpoint, requires_grad: bool) -> Dict[str, torch.Tensor]:
    return {b.name: torch.tensor(b.values, dtype=torch.float64, requires_grad=requires_grad)
            for b in params.blocks()}


def _logits(params: Checkpoint, tensors: Dict[str, torch.Tensor], x: torch.Tensor,
            train_mode: bool, dropout: float, seed: int) -> torch.Tensor:
    h = x
    for i in range(len(_layers(params.featurizer))):
        h = torch.relu(h @ tensors[f"feat.{i}.weight"] + tensors[f"feat.{i}.bias"])
    if train_mode and dropout > 0.0:
        # inverted dropout: eval mode needs no rescale
        gen = torch.Generator().manual_seed(int(seed))
        keep = torch.bernoulli(torch.full(h.shape, 1.0 - dropout, dtype=torch.float64), generator=gen)
        h = h * keep / (1.0 - dropout)
    return h @ tensors["head.weight"] + tensors["head.bias"]


def forward(params: Checkpoint, x: np.ndarray, train_mode: bool = False, seed: int = 0,
            dropout: float = 0.0) -> np.ndarray:
    """Logits (batch x classes). Dropout only in train mode, mask seeded."""
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(params, x)
    with torch.no_grad():
        out = _logits(params, _tensors(params, False), torch.from_numpy(x), train_mode, dropout, seed)
    return out.numpy()


def loss_and_grad(params: Checkpoint, x: np.ndarray, y: np.ndarray, weight_decay: float = 0.0,
                  train_mode: bool = False, seed: int = 0, dropout: float = 0.0) -> Tuple[float, Grads]:
    """Mean cross-entropy + (weight_decay / 2) * ||theta||^2 and its exact gradient"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    _check_inputs(params, x)
    k = num_classes(params)
    if y.shape != (x.shape[0],):
        raise DataError(f"dimension mismatch: {x.shape[0]} examples, {y.shape} labels")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise DataError(f"label out of range [0, {k})")

    tensors = _tensors(params, True)
    logits = _logits(params, tensors, torch.from_numpy(x), train_mode, dropout, seed)
    loss = F.cross_entropy(logits, torch.from_numpy(y.astype(np.int64)))
    if weight_decay:
        loss = loss + 0.5 * weight_decay * sum((t * t).sum() for t in tensors.values())
    names = list(tensors)
    grads = torch.autograd.grad(loss, [tensors[n] for n in names])
    return float(loss.item()), {n: g.numpy().copy() for n, g in zip(names, grads)}


def predict_proba(params: Checkpoint, x: np.ndarray) -> np.ndarray:
    logits = torch.from_numpy(forward(params, x))
    return torch.softmax(logits, dim=1).numpy()


def predict(params: Checkpoint, x: np.ndarray) -> np.ndarray:
    # np.argmax keeps the first maximum: ties go to the lowest class index
    return np.argmax(forward(params, x), axis=1)


def count_correct(params: Checkpoint, x: np.ndarray, y: np.ndarray) -> int:
    if len(y) == 0:
        raise DataError("empty dataset")
    return int(np.sum(predict(params, x) == np.asarray(y)))


def accuracy(params: Checkpoint, x: np.ndarray, y: np.ndarray) -> float:
    return count_correct(params, x, y) / len(y)


# --- optimizers ------------------------------------------------------------

@dataclass(frozen=True)
class OptState:
    kind: Literal["sgd", "adam"]
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)


def init_opt_state(kind: str, params: Checkpoint, learning_rate: float, **kwargs) -> OptState:
    if kind not in ("sgd", "adam"):
        raise DataError(f"unknown optimizer '{kind}'")
    moments = {} if kind == "sgd" else {b.name: np.zeros(b.shape) for b in params.blocks()}
    second = {} if kind == "sgd" else {b.name: np.zeros(b.shape) for b in params.blocks()}
    return OptState(kind=kind, learning_rate=learning_rate, exp_avg=moments, exp_avg_sq=second, **kwargs)


def optimizer_step(state: OptState, params: Checkpoint, grads: Grads) -> Tuple[OptState, Checkpoint]:
    """One SGD or Adam update; returns new state and params, inputs untouched"""
    for b in params.blocks():
        if b.name not in grads or grads[b.name].shape != b.shape:
            raise DataError(f"shape mismatch: gradient for block '{b.name}'")

    t = state.step + 1
    lr = state.learning_rate
    if state.kind == "sgd":
        new_params = params.map_values(lambda name, v: v - lr * grads[name])
        return replace(state, step=t), new_params

    m_new: Dict[str, np.ndarray] = {}
    v_new: Dict[str, np.ndarray] = {}
    for b in params.blocks():
        g = grads[b.name]
        m_new[b.name] = state.beta1 * state.exp_avg[b.name] + (1.0 - state.beta1) * g
        v_new[b.name] = state.beta2 * state.exp_avg_sq[b.name] + (1.0 - state.beta2) * g * g
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t

    def update(name, v):
        m_hat = m_new[name] / bias1
        v_hat = v_new[name] / bias2
        return v - lr * m_hat / (np.sqrt(v_hat) + state.eps)

    new_params = params.map_values(update)
    return replace(state, step=t, exp_avg=m_new, exp_avg_sq=v_new), new_params
