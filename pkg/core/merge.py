import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, DataError, IncompatibleError
from core.network import feature_dim
from core.param_store import Checkpoint, Lineage, LineageEntry, ParamBlock, require_compatible, stable_digest
from core.schemas import GreedyReport, HyperParams
from core.trainer import RunResult, TaskSplit, fine_tune, inter_train, linear_probe

logger = logging.getLogger(__name__)

Evaluator = Callable[[Checkpoint], float]
CONVEX_TOL = 1e-12


@dataclass(frozen=True)
class MergeWeights:
    lambdas: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))

    @classmethod
    def uniform(cls, m: int) -> "MergeWeights":
        return cls((1.0 / m,) * m)

    def check_convex(self):
        if any(lam < 0.0 for lam in self.lambdas):
            raise ConfigError(f"negative merge weight in {self.lambdas}")
        if abs(sum(self.lambdas) - 1.0) > CONVEX_TOL:
            raise ConfigError(f"merge weights sum to {sum(self.lambdas)!r}, not 1")


def _common_prefix(lineages: Sequence[Lineage]) -> Tuple[LineageEntry, ...]:
    prefix = lineages[0].chain
    for lin in lineages[1:]:
        n = 0
        while n < min(len(prefix), len(lin.chain)) and prefix[n] == lin.chain[n]:
            n += 1
        prefix = prefix[:n]
    return prefix


def _merged_lineage(models: Sequence[Checkpoint], lambdas: Sequence[float]) -> Lineage:
    parents = [m.lineage.digest() for m in models]
    roots = {m.lineage.root for m in models}
    root = roots.pop() if len(roots) == 1 else "mixed"
    chain = _common_prefix([m.lineage for m in models])
    entry = LineageEntry("merged", stable_digest({"parents": parents, "lambdas": list(lambdas)}))
    return Lineage(root, chain + (entry,), tuple(zip(parents, lambdas)))


def average_weights(models: Sequence[Checkpoint], weights: MergeWeights) -> Checkpoint:
    """sum_i lambda_i * theta_i, accumulated in input order"""
    if not models:
        raise DataError("nothing to average")
    if len(models) != len(weights.lambdas):
        raise ConfigError(f"{len(models)} models but {len(weights.lambdas)} weights")
    weights.check_convex()
    require_compatible(models)

    # all the mass on one parent: that parent, untouched
    ones = [i for i, lam in enumerate(weights.lambdas) if lam == 1.0]
    if len(ones) == 1 and all(lam == 0.0 for i, lam in enumerate(weights.lambdas) if i != ones[0]):
        return models[ones[0]]

    lambdas = weights.lambdas

    def combine(name, _):
        total = lambdas[0] * models[0].block(name).values
        for lam, m in zip(lambdas[1:], models[1:]):
            total = total + lam * m.block(name).values
        return total

    merged = models[0].map_values(combine)
    return merged.with_lineage(_merged_lineage(models, lambdas), step=0)


def _check_lambda(lam: float):
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")


def interpolate(a: Checkpoint, b: Checkpoint, lam: float) -> Checkpoint:
    """(1 - lam) * a + lam * b"""
    _check_lambda(lam)
    return average_weights([a, b], MergeWeights((1.0 - lam, lam)))


def interpolate3(a: Checkpoint, b: Checkpoint, c: Checkpoint, lam: float) -> Checkpoint:
    """(1 - lam)/2 * a + (1 - lam)/2 * b + lam * c"""
    _check_lambda(lam)
    half = (1.0 - lam) / 2.0
    return average_weights([a, b, c], MergeWeights((half, half, lam)))


def wise(fine_tuned: Checkpoint, pretrained: Checkpoint, lam: float) -> Checkpoint:
    """WiSE fine-tuning: (1 - lam) * fine_tuned + lam * pretrained"""
    return interpolate(fine_tuned, pretrained, lam)


def soup(models: Sequence[Checkpoint]) -> Checkpoint:
    return average_weights(models, MergeWeights.uniform(len(models)))


def uniform_soup(runs: Sequence[RunResult]) -> Checkpoint:
    if not runs:
        raise DataError("no runs to average")
    return soup([r.best for r in runs])


def greedy_soup_checkpoints(models: Sequence[Checkpoint], scores: Sequence[float], evaluator: Evaluator,
                            strict: bool = False) -> Tuple[Checkpoint, GreedyReport]:
    """Greedy soup: add each candidate (best ID-val first) unless it lowers the soup's ID-val accuracy.

    Ties are accepted by default; `strict` keeps a candidate only when the accuracy goes up.
    """
    if not models:
        raise DataError("no candidates for the greedy soup")
    if len(models) != len(scores):
        raise ConfigError(f"{len(models)} candidates but {len(scores)} scores")
    require_compatible(models)
    order = sorted(range(len(models)), key=lambda i: -scores[i])

    accepted = [order[0]]
    current = models[order[0]]
    current_score = evaluator(current)
    for idx in order[1:]:
        tentative = soup([models[i] for i in accepted + [idx]])
        score = evaluator(tentative)
        if score > current_score or (score == current_score and not strict):
            accepted.append(idx)
            current, current_score = tentative, score
        logger.debug("greedy candidate %d: score %.4f (%s)", idx, score,
                     "accepted" if accepted[-1] == idx else "rejected")

    report = GreedyReport(candidate_order=order, accepted=accepted, final_id_val_acc=current_score)
    logger.info("greedy soup kept %d/%d candidates, id-val acc %.4f", len(accepted), len(models), current_score)
    return current, report


def greedy_soup(runs: Sequence[RunResult], evaluator: Evaluator,
                strict: bool = False) -> Tuple[Checkpoint, GreedyReport]:
    if not runs:
        raise DataError("no runs for the greedy soup")
    return greedy_soup_checkpoints([r.best for r in runs], [r.best_acc for r in runs], evaluator, strict)


def softmax_coefficients(kappas: Sequence[float]) -> List[float]:
    k = np.asarray(kappas, dtype=np.float64)
    e = np.exp(k - k.max())
    return list(e / e.sum())


def sample_kappas(k: int, seed: int, high: float = 4.0) -> List[float]:
    """kappa_i ~ Unif(0, high)"""
    return list(np.random.default_rng(seed).uniform(0.0, high, size=k))


def fusing_init(carriers: Sequence[Checkpoint], kappas: Sequence[float]) -> Tuple[Checkpoint, List[float]]:
    """Featurizer sum_i softmax(kappa)_i * phi_i; classifier kept from the first carrier"""
    if len(carriers) != len(kappas) or not carriers:
        raise ConfigError(f"{len(carriers)} featurizers but {len(kappas)} kappas")
    lambdas = softmax_coefficients(kappas)
    bodies = [c.with_classifier(()) for c in carriers]
    fused = average_weights(bodies, MergeWeights(tuple(lambdas)))
    return fused.with_classifier(carriers[0].classifier), lambdas


def swap_classifier(model: Checkpoint, probe: Sequence[ParamBlock]) -> Checkpoint:
    """Replace w by the linear probe; the featurizer is untouched"""
    probe = tuple(probe)
    head = {b.name: b for b in probe}
    if "head.weight" not in head or head["head.weight"].shape[0] != feature_dim(model):
        raise IncompatibleError("shape mismatch: probe does not fit the featurizer output")
    if len(probe) == len(model.classifier) and all(p.bit_equal(c) for p, c in zip(probe, model.classifier)):
        return model
    entry_digest = stable_digest([b.values.tobytes().hex() for b in probe])
    return model.with_classifier(probe).with_lineage(model.lineage.extend("swap-classifier", entry_digest))


# --- model ratatouille -----------------------------------------------------

@dataclass(frozen=True)
class RatatouilleOutcome:
    model: Checkpoint
    report: Optional[GreedyReport]
    runs: Tuple[RunResult, ...]
    initializations: Tuple[Checkpoint, ...]
    probe: Tuple[ParamBlock, ...]


def build_initializations(pretrained: Checkpoint, aux_tasks: Sequence[TaskSplit], aux_cfgs: Sequence[HyperParams],
                          robust: bool = False) -> List[Checkpoint]:
    """One inter-trained carrier per auxiliary task, then pretrained itself (T_0)"""
    if len(aux_tasks) != len(aux_cfgs):
        raise ConfigError(f"{len(aux_tasks)} aux tasks but {len(aux_cfgs)} configs")
    carriers = [inter_train(pretrained, [t], [c], robust=robust) for t, c in zip(aux_tasks, aux_cfgs)]
    return carriers + [inter_train(pretrained, [], [])]


def assign_round_robin(num_runs: int, num_inits: int) -> List[int]:
    """Run i starts from initialization i mod K; earlier ones get the extra runs"""
    return [i % num_inits for i in range(num_runs)]


def fine_tune_pool(inits: Sequence[Checkpoint], target: TaskSplit, cfgs: Sequence[HyperParams],
                   threads: int = 1) -> List[RunResult]:
    assignment = assign_round_robin(len(cfgs), len(inits))
    jobs = [(inits[k], cfg) for k, cfg in zip(assignment, cfgs)]
    if threads <= 1:
        return [fine_tune(init, target, cfg) for init, cfg in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fine_tune(job[0], target, job[1]), jobs))


def select_soup(runs: Sequence[RunResult], selection: Literal["uniform", "greedy"],
                evaluator: Evaluator) -> Tuple[Checkpoint, Optional[GreedyReport]]:
    if selection == "uniform":
        return uniform_soup(runs), None
    if selection == "greedy":
        return greedy_soup(runs, evaluator)
    raise ConfigError(f"unknown selection '{selection}'")


def ratatouille(pretrained: Checkpoint, aux_tasks: Sequence[TaskSplit], target: TaskSplit, num_runs: int,
                cfgs: Sequence[HyperParams], selection: Literal["uniform", "greedy"] = "uniform",
                aux_cfgs: Optional[Sequence[HyperParams]] = None, probe_cfg: Optional[HyperParams] = None,
                robust: bool = False, threads: int = 1,
                initializations: Optional[Sequence[Checkpoint]] = None) -> RatatouilleOutcome:
    """Recycle auxiliary fine-tunings as initializations, fine-tune on target, then average.

    1. pretrained is given; 2. inter-train one featurizer per auxiliary task
    (plus pretrained itself for T_0); 3. linear-probe pretrained on the target
    and put that probe on every initialization; 4. fine-tune num_runs times,
    round-robin over the initializations; 5. uniform or greedy soup.
    Passing `initializations` skips step 2 (carriers computed once per suite).
    """
    if num_runs < 1:
        raise ConfigError("num_runs must be at least 1")
    if len(cfgs) != num_runs:
        raise ConfigError(f"{num_runs} runs but {len(cfgs)} configs")

    if initializations is None:
        aux_cfgs = list(aux_cfgs) if aux_cfgs is not None else [HyperParams() for _ in aux_tasks]
        initializations = build_initializations(pretrained, aux_tasks, aux_cfgs, robust=robust)
    probe = linear_probe(pretrained.featurizer, target, probe_cfg or HyperParams())
    inits = [swap_classifier(init, probe) for init in initializations]

    runs = fine_tune_pool(inits, target, cfgs, threads=threads)
    model, report = select_soup(runs, selection, target.val_accuracy)
    logger.info("ratatouille: %d runs over %d initializations, %s selection", num_runs, len(inits), selection)
    return RatatouilleOutcome(model, report, tuple(runs), tuple(inits), probe)
