import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from core.analysis import (LmcCurve, accuracy_gain, contingency, diversity_vs_steps, ensemble_accuracy, lmc_barrier,
                           lmc_holds, lmc_sweep, lmc_sweep3, mixing_curve, q_diversity, select_split)
from core.errors import AnalysisError, ConfigError
from core.merge import (assign_round_robin, fine_tune_pool, fusing_init, greedy_soup, ratatouille, sample_kappas,
                        swap_classifier, uniform_soup, wise)
from core.network import accuracy, predict
from core.param_store import Checkpoint
from core.schemas import AblationPoint, HyperParamDistribution, NetSpec, ProtocolConfig, ResultRow
from core.seeding import derive_seed
from core.synthetic import SyntheticSuite, TestArrays
from core.trainer import (RunResult, TaskSplit, collect_moving_average, fine_tune, inter_train, linear_probe, pretrain,
                          sample_hparams, select_best_by_id_val)

logger = logging.getLogger(__name__)

RESULT_COLUMNS = list(ResultRow.model_fields)

# strategy -> selection label
STRATEGIES: Dict[str, str] = {
    "vanilla": "id_val",
    "moving_average": "uniform_trajectory",
    "wise": "id_val",
    "soups_uniform": "uniform",
    "soups_greedy": "greedy",
    "ensemble": "uniform",
    "inter_training": "id_val",
    "fusing": "id_val",
    "ratatouille_uniform": "uniform",
    "ratatouille_greedy": "greedy",
    "ensemble_inter_training": "uniform",
    "robust_ratatouille_uniform": "uniform",
    "soups_uniform_dagger": "uniform_dagger",
    "ratatouille_uniform_dagger": "uniform_dagger",
}


class BenchContext:
    """Per-suite artifacts shared by every fold: pre-trained weights and auxiliary carriers.

    Carriers do not depend on the target test domain, so they are trained
    once per suite and reused across leave-one-out folds.
    """

    def __init__(self, suite: SyntheticSuite, protocol: Optional[ProtocolConfig] = None, threads: int = 1):
        self.suite = suite
        self.protocol = protocol or ProtocolConfig()
        self.threads = threads
        self._pretrained: Optional[Checkpoint] = None
        self._carriers: Dict[bool, List[Checkpoint]] = {}
        self._chains: Dict[Tuple[str, ...], Checkpoint] = {}

    @property
    def aux_names(self) -> List[str]:
        return [t.name for t in self.suite.aux_tasks]

    def pretrained(self) -> Checkpoint:
        if self._pretrained is None:
            task = self.suite.pretrain_task
            split, _ = task.split(None, seed=derive_seed(self.suite.seed, "pretrain-split"))
            net = NetSpec(input_dim=self.suite.spec.feature_dim, hidden_widths=self.protocol.hidden_widths,
                          num_classes=task.num_classes)
            cfg = self.protocol.pretrain.model_copy(update={"seed": derive_seed(self.suite.seed, "pretrain")})
            self._pretrained = pretrain(net, split, cfg)
        return self._pretrained

    def _aux_split(self, name: str) -> TaskSplit:
        split, _ = self.suite.task(name).split(None, seed=derive_seed(self.suite.seed, "aux-split", name))
        return split

    def _aux_cfg(self, name: str):
        return self.protocol.aux.model_copy(update={"seed": derive_seed(self.suite.seed, "aux", name)})

    def carriers(self, robust: bool = False) -> List[Checkpoint]:
        """Featurizers inter-trained on each auxiliary task (T_0 excluded)"""
        if robust not in self._carriers:
            pt = self.pretrained()
            self._carriers[robust] = [
                inter_train(pt, [self._aux_split(n)], [self._aux_cfg(n)], robust=robust) for n in self.aux_names
            ]
        return self._carriers[robust]

    def chain_carrier(self, names: Sequence[str]) -> Checkpoint:
        """Sequential inter-training through several auxiliary tasks"""
        key = tuple(names)
        if key not in self._chains:
            self._chains[key] = inter_train(self.pretrained(), [self._aux_split(n) for n in names],
                                            [self._aux_cfg(n) for n in names])
        return self._chains[key]

    def fold(self, test_domain: str, seed: int, search: Optional[HyperParamDistribution] = None) -> "Fold":
        return Fold(self, test_domain, seed, search or self.protocol.search)


@dataclass
class Fold:
    """One (test domain, seed) cell of the protocol, caching its run pools"""

    ctx: BenchContext
    test_domain: str
    seed: int
    search: HyperParamDistribution
    _splits: Dict[int, Tuple[TaskSplit, TestArrays]] = field(default_factory=dict)
    _probes: Dict[int, tuple] = field(default_factory=dict)
    _pools: Dict[tuple, List[RunResult]] = field(default_factory=dict)

    def split(self, k: int = 0) -> TaskSplit:
        return self._split(k)[0]

    def _split(self, k: int) -> Tuple[TaskSplit, TestArrays]:
        if k not in self._splits:
            target = self.ctx.suite.target_task
            self._splits[k] = target.split(self.test_domain, seed=derive_seed(self.seed, "split", k))
        return self._splits[k]

    @property
    def test(self) -> TestArrays:
        return self._split(0)[1]

    def _probe_cfg(self, k: int):
        return self.ctx.protocol.probe.model_copy(update={"seed": derive_seed(self.seed, "probe", self.test_domain, k)})

    def probe(self, k: int = 0) -> tuple:
        if k not in self._probes:
            self._probes[k] = linear_probe(self.ctx.pretrained().featurizer, self.split(k), self._probe_cfg(k))
        return self._probes[k]

    def cfgs(self, m: int, k: int = 0) -> list:
        return [sample_hparams(self.search, derive_seed(self.seed, "hparams", self.test_domain, i, k))
                for i in range(m)]

    def pool(self, m: int, num_aux: Optional[int] = 0, robust: bool = False, k: int = 0) -> List[RunResult]:
        """m target fine-tunings of the recycling recipe over the first num_aux carriers; num_aux=0 is vanilla"""
        n_aux = len(self.ctx.carriers(robust)) if num_aux is None else num_aux
        key = (m, n_aux if n_aux else 0, robust and n_aux > 0, k)
        if key not in self._pools:
            carriers = self.ctx.carriers(robust)[:n_aux] + [self.ctx.pretrained()]
            outcome = ratatouille(self.ctx.pretrained(), [], self.split(k), m, self.cfgs(m, k),
                                  probe_cfg=self._probe_cfg(k), threads=self.ctx.threads, initializations=carriers)
            self._probes.setdefault(k, outcome.probe)
            self._pools[key] = list(outcome.runs)
        return self._pools[key]

    def fusing_runs(self, m: int) -> List[RunResult]:
        key = ("fusing", m)
        if key not in self._pools:
            carriers = self.ctx.carriers() + [self.ctx.pretrained()]
            runs = []
            for i, cfg in enumerate(self.cfgs(m)):
                kappas = sample_kappas(len(carriers), derive_seed(self.seed, "kappa", self.test_domain, i))
                fused, _ = fusing_init(carriers, kappas)
                runs.append(fine_tune(swap_classifier(fused, self.probe()), self.split(), cfg))
            self._pools[key] = runs
        return self._pools[key]

    def ood_acc(self, model: Checkpoint) -> float:
        x, y, _ = self.test
        return accuracy(model, x, y)

    def id_acc(self, model: Checkpoint) -> float:
        return self.split().val_accuracy(model)


def _check_strategies(strategies: Sequence[str]):
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise ConfigError(f"unknown strategies {unknown}; known: {sorted(STRATEGIES)}")


def _evaluate_strategy(fold: Fold, strategy: str, m: int) -> ResultRow:
    aux_all = fold.ctx.aux_names
    aux_used: List[str] = []
    runs_used = m

    def ensemble_row(runs: List[RunResult]) -> Tuple[float, float]:
        models = [r.best for r in runs]
        x, y, _ = fold.test
        split = fold.split()
        return ensemble_accuracy(models, x, y), ensemble_accuracy(models, split.x_val, split.y_val)

    if strategy in ("vanilla", "moving_average", "wise", "soups_uniform", "soups_greedy", "ensemble"):
        runs = fold.pool(m, num_aux=0)
        if strategy == "vanilla":
            model = select_best_by_id_val(runs)
        elif strategy == "moving_average":
            model = max((collect_moving_average(r) for r in runs), key=fold.id_acc)
        elif strategy == "wise":
            pt = swap_classifier(fold.ctx.pretrained(), fold.probe())
            model = wise(select_best_by_id_val(runs), pt, fold.ctx.protocol.wise_lambda)
        elif strategy == "soups_uniform":
            model = uniform_soup(runs)
        elif strategy == "soups_greedy":
            model, _ = greedy_soup(runs, fold.split().val_accuracy)
        else:
            ood, idv = ensemble_row(runs)
            return _row(fold, strategy, ood, idv, runs_used, aux_used)
    elif strategy in ("inter_training", "ratatouille_uniform", "ratatouille_greedy", "ensemble_inter_training",
                      "robust_ratatouille_uniform"):
        aux_used = list(aux_all)
        robust = strategy.startswith("robust")
        runs = fold.pool(m, num_aux=None, robust=robust)
        if strategy == "inter_training":
            model = select_best_by_id_val(runs)
        elif strategy == "ratatouille_greedy":
            model, _ = greedy_soup(runs, fold.split().val_accuracy)
        elif strategy == "ensemble_inter_training":
            ood, idv = ensemble_row(runs)
            return _row(fold, strategy, ood, idv, runs_used, aux_used)
        else:
            model = uniform_soup(runs)
    elif strategy == "fusing":
        aux_used = list(aux_all)
        model = select_best_by_id_val(fold.fusing_runs(m))
    else:
        # dagger variants: uniform average over runs from several data splits
        num_aux = None if strategy.startswith("ratatouille") else 0
        aux_used = list(aux_all) if num_aux is None else []
        runs = []
        for k in range(fold.ctx.protocol.dagger_splits):
            runs.extend(fold.pool(m, num_aux=num_aux, k=k))
        runs_used = len(runs)
        model = uniform_soup(runs)

    return _row(fold, strategy, fold.ood_acc(model), fold.id_acc(model), runs_used, aux_used)


def _row(fold: Fold, strategy: str, ood: float, idv: float, runs_used: int, aux_used: List[str]) -> ResultRow:
    return ResultRow(strategy=strategy, selection=STRATEGIES[strategy], test_domain=fold.test_domain,
                     ood_acc=ood, id_val_acc=idv, seed=fold.seed, runs_used=runs_used, aux_tasks_used=aux_used)


def _sort_rows(rows: List[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=lambda r: (r.test_domain, r.seed, r.strategy, r.selection))


def _folds(ctx: BenchContext, seeds: Sequence[int], test_domains: Optional[Sequence[str]],
           search: Optional[HyperParamDistribution] = None) -> List[Fold]:
    domains = list(test_domains) if test_domains else ctx.suite.target_task.domain_names
    return [ctx.fold(d, s, search) for d in domains for s in seeds]


def run_protocol(suite: SyntheticSuite, strategies: Sequence[str], m: int, seeds: Sequence[int],
                 protocol: Optional[ProtocolConfig] = None, test_domains: Optional[Sequence[str]] = None,
                 threads: int = 1, ctx: Optional[BenchContext] = None) -> List[ResultRow]:
    """Leave-one-domain-out evaluation of each strategy, one row per (domain, seed, strategy)"""
    if m < 1:
        raise ConfigError("M must be at least 1")
    _check_strategies(strategies)
    ctx = ctx or BenchContext(suite, protocol, threads)
    rows = []
    for fold in tqdm(_folds(ctx, seeds, test_domains), desc="protocol", leave=False):
        for strategy in strategies:
            row = _evaluate_strategy(fold, strategy, m)
            logger.info("%s / seed %d / %s: ood %.4f, id-val %.4f", fold.test_domain, fold.seed, strategy,
                        row.ood_acc, row.id_val_acc)
            rows.append(row)
    return _sort_rows(rows)


# --- ablations -------------------------------------------------------------

def _point(experiment: str, strategy: str, x: float, accs: List[float]) -> AblationPoint:
    return AblationPoint(experiment=experiment, strategy=strategy, x=float(x), mean_ood_acc=float(np.mean(accs)),
                         std=float(np.std(accs)), count=len(accs))


def ablate_num_aux(suite: SyntheticSuite, m: int, max_aux: int, seeds: Sequence[int],
                   protocol: Optional[ProtocolConfig] = None, test_domains: Optional[Sequence[str]] = None,
                   threads: int = 1, ctx: Optional[BenchContext] = None) -> List[AblationPoint]:
    """Ratatouille-uniform restricted to the first k aux tasks, k = 0..max_aux"""
    if max_aux > len(suite.aux_tasks):
        raise ConfigError(f"max_aux={max_aux} but the suite has {len(suite.aux_tasks)} aux tasks")
    ctx = ctx or BenchContext(suite, protocol, threads)
    folds = _folds(ctx, seeds, test_domains)
    points = []
    for k in range(max_aux + 1):
        accs = [fold.ood_acc(uniform_soup(fold.pool(m, num_aux=k))) for fold in folds]
        points.append(_point("num_aux", "ratatouille_uniform", k, accs))
    return points


def ablate_steps(suite: SyntheticSuite, step_grid: Sequence[int], m: int, seeds: Sequence[int],
                 protocol: Optional[ProtocolConfig] = None, test_domains: Optional[Sequence[str]] = None,
                 threads: int = 1, ctx: Optional[BenchContext] = None) -> List[AblationPoint]:
    """Soups vs ratatouille OOD accuracy as a function of target fine-tuning steps"""
    ctx = ctx or BenchContext(suite, protocol, threads)
    points = []
    for steps in step_grid:
        search = ctx.protocol.search.model_copy(update={"steps": steps})
        folds = _folds(ctx, seeds, test_domains, search)
        for strategy, num_aux in (("soups_uniform", 0), ("ratatouille_uniform", None)):
            accs = [fold.ood_acc(uniform_soup(fold.pool(m, num_aux=num_aux))) for fold in folds]
            points.append(_point("steps", strategy, steps, accs))
    return points


def ablate_num_runs(suite: SyntheticSuite, run_grid: Sequence[int], seeds: Sequence[int],
                    protocol: Optional[ProtocolConfig] = None, test_domains: Optional[Sequence[str]] = None,
                    threads: int = 1, ctx: Optional[BenchContext] = None) -> List[AblationPoint]:
    """Uniform soups of the first M runs of one shared pool, for each M in the grid"""
    ctx = ctx or BenchContext(suite, protocol, threads)
    folds = _folds(ctx, seeds, test_domains)
    largest = max(run_grid)
    points = []
    for strategy, num_aux in (("soups_uniform", 0), ("ratatouille_uniform", None)):
        for m in run_grid:
            accs = [fold.ood_acc(uniform_soup(fold.pool(largest, num_aux=num_aux)[:m])) for fold in folds]
            points.append(_point("num_runs", strategy, m, accs))
    return points


# --- connectivity / diversity experiments ----------------------------------

@dataclass(frozen=True)
class LmcRecord:
    kind: str
    seed: int
    curve: LmcCurve
    holds: bool
    barrier: float


def _eval_arrays(fold: Fold, split: str) -> Tuple[np.ndarray, np.ndarray]:
    x, y, _ = fold.test
    s = fold.split()
    return select_split(split, (x, y), (s.x_val, s.y_val))


def lmc_experiment(suite: SyntheticSuite, kind: str, seeds: Sequence[int], protocol: Optional[ProtocolConfig] = None,
                   test_domain: Optional[str] = None, split: str = "ood", grid_size: int = 21,
                   epsilon: float = 0.02, threads: int = 1, ctx: Optional[BenchContext] = None) -> List[LmcRecord]:
    """Linear-path sweeps between weights of one kind, one curve per seed.

    within_run: mid-trajectory vs final checkpoint of one run.
    between_aux: two aux carriers sharing the target probe.
    between_targets: target fine-tunings from two different aux carriers.
    three_way: (a + b)/2 to c over three such fine-tunings.
    chain: fine-tuning from a two-task sequential carrier vs one from a single-task carrier.

    Target fine-tunings of one seed share a single hyperparameter draw, so only the
    initialization differs along the path.
    """
    ctx = ctx or BenchContext(suite, protocol, threads)
    domain = test_domain or suite.target_task.domain_names[0]
    need = {"within_run": 0, "between_aux": 2, "between_targets": 2, "three_way": 3, "chain": 3}
    if kind not in need:
        raise ConfigError(f"unknown lmc kind '{kind}'")
    if len(suite.aux_tasks) < need[kind]:
        raise ConfigError(f"lmc kind '{kind}' needs {need[kind]} aux tasks, suite has {len(suite.aux_tasks)}")

    records = []
    for seed in seeds:
        fold = ctx.fold(domain, seed)
        x, y = _eval_arrays(fold, split)
        cfg = fold.cfgs(1)[0]
        probe = fold.probe()
        carriers = [swap_classifier(c, probe) for c in ctx.carriers()]

        def target_run(init: Checkpoint) -> Checkpoint:
            return fine_tune(init, fold.split(), cfg).best

        if kind == "within_run":
            run = fold.pool(1, num_aux=0)[0]
            mid = run.trajectory[(len(run.trajectory) - 1) // 2]
            curve = lmc_sweep(mid.checkpoint, run.final, x, y, grid_size, (f"step {mid.step}", "final"))
        elif kind == "between_aux":
            curve = lmc_sweep(carriers[0], carriers[1], x, y, grid_size, (ctx.aux_names[0], ctx.aux_names[1]))
        elif kind == "between_targets":
            a, b = target_run(carriers[0]), target_run(carriers[1])
            curve = lmc_sweep(a, b, x, y, grid_size, (ctx.aux_names[0], ctx.aux_names[1]))
        elif kind == "three_way":
            a, b, c = (target_run(carriers[i]) for i in range(3))
            curve = lmc_sweep3(a, b, c, x, y, grid_size, (f"{ctx.aux_names[0]}+{ctx.aux_names[1]}", ctx.aux_names[2]))
        else:
            chained = swap_classifier(ctx.chain_carrier(ctx.aux_names[:2]), probe)
            a, b = target_run(chained), target_run(carriers[2])
            curve = lmc_sweep(a, b, x, y, grid_size, ("->".join(ctx.aux_names[:2]), ctx.aux_names[2]))
        holds = lmc_holds(curve, epsilon)
        records.append(LmcRecord(kind, seed, curve, holds, lmc_barrier(curve)))
        logger.info("lmc %s seed %d: holds=%s barrier %.4f", kind, seed, holds, records[-1].barrier)
    return records


def _pairs_by_init(m: int, num_inits: int) -> Dict[str, List[Tuple[int, int]]]:
    assignment = assign_round_robin(m, num_inits)
    groups: Dict[str, List[Tuple[int, int]]] = {"same_init": [], "cross_init": []}
    for i in range(m):
        for j in range(i + 1, m):
            groups["same_init" if assignment[i] == assignment[j] else "cross_init"].append((i, j))
    return groups


def diversity_ordering(suite: SyntheticSuite, m: int, seeds: Sequence[int],
                       protocol: Optional[ProtocolConfig] = None, test_domain: Optional[str] = None,
                       split: str = "ood", threads: int = 1,
                       ctx: Optional[BenchContext] = None) -> pd.DataFrame:
    """Mean q-diversity and accuracy gain of same-initialization vs cross-initialization run pairs"""
    ctx = ctx or BenchContext(suite, protocol, threads)
    domain = test_domain or suite.target_task.domain_names[0]
    records = []
    for seed in seeds:
        fold = ctx.fold(domain, seed)
        x, y = _eval_arrays(fold, split)
        runs = fold.pool(m, num_aux=None)
        preds = [predict(r.best, x) for r in runs]
        groups: Dict[str, Tuple[List[float], List[float]]] = {"same_init": ([], []), "cross_init": ([], [])}
        for group, pairs in _pairs_by_init(m, len(ctx.aux_names) + 1).items():
            for i, j in pairs:
                try:
                    groups[group][0].append(q_diversity(contingency(preds[i], preds[j], y)))
                except AnalysisError:
                    continue
                groups[group][1].append(accuracy_gain([runs[i].best, runs[j].best], x, y))
        for group, (divs, gains) in groups.items():
            records.append({"seed": seed, "group": group, "pairs": len(divs),
                            "mean_diversity": float(np.mean(divs)) if divs else np.nan,
                            "mean_accuracy_gain": float(np.mean(gains)) if gains else np.nan})
    return pd.DataFrame(records, columns=["seed", "group", "pairs", "mean_diversity", "mean_accuracy_gain"])


def diversity_steps(suite: SyntheticSuite, m: int, seeds: Sequence[int], protocol: Optional[ProtocolConfig] = None,
                    test_domain: Optional[str] = None, split: str = "ood", threads: int = 1,
                    ctx: Optional[BenchContext] = None) -> pd.DataFrame:
    """Mean q-diversity of same-init and cross-init run pairs at every evaluation step"""
    ctx = ctx or BenchContext(suite, protocol, threads)
    domain = test_domain or suite.target_task.domain_names[0]
    records = []
    for seed in seeds:
        fold = ctx.fold(domain, seed)
        x, y = _eval_arrays(fold, split)
        runs = fold.pool(m, num_aux=None)
        for group, pairs in _pairs_by_init(m, len(ctx.aux_names) + 1).items():
            if not pairs:
                logger.warning("seed %d: no %s pairs among %d runs", seed, group, m)
                continue
            series = diversity_vs_steps([(runs[i], runs[j]) for i, j in pairs], x, y)
            records += [{"seed": seed, "group": group, "step": step, "pairs": len(pairs), "mean_diversity": d}
                        for step, d in series]
    return pd.DataFrame(records, columns=["seed", "group", "step", "pairs", "mean_diversity"])


def mixing_experiment(suite: SyntheticSuite, m: int, seeds: Sequence[int], mu_grid: Sequence[float],
                      repeats: int, protocol: Optional[ProtocolConfig] = None, test_domain: Optional[str] = None,
                      aux_index: int = 0, threads: int = 1, ctx: Optional[BenchContext] = None) -> pd.DataFrame:
    """Soups mixing runs from pretrained (share 1 - mu) and from one aux carrier (share mu)"""
    ctx = ctx or BenchContext(suite, protocol, threads)
    if aux_index >= len(suite.aux_tasks):
        raise ConfigError(f"aux_index={aux_index} but the suite has {len(suite.aux_tasks)} aux tasks")
    domain = test_domain or suite.target_task.domain_names[0]
    records = []
    for seed in seeds:
        fold = ctx.fold(domain, seed)
        x, y, _ = fold.test
        pool_a = fold.pool(m, num_aux=0)
        carrier = swap_classifier(ctx.carriers()[aux_index], fold.probe())
        # same hyperparameter draws as pool_a so the two pools differ only by initialization
        pool_b = fine_tune_pool([carrier], fold.split(), fold.cfgs(m), threads=ctx.threads)
        for point in mixing_curve(pool_a, pool_b, m, mu_grid, x, y, repeats, derive_seed(seed, "mixing-draws")):
            records.append({"seed": seed, "mu": point.mu, "mean_acc": point.mean_acc, "std": point.std})
    return pd.DataFrame(records, columns=["seed", "mu", "mean_acc", "std"])


# --- CSV output ------------------------------------------------------------

def rows_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    records = []
    for r in rows:
        record = r.model_dump()
        record["aux_tasks_used"] = ";".join(r.aux_tasks_used)
        records.append(record)
    return pd.DataFrame(records, columns=RESULT_COLUMNS)


def emit_frame(frame: pd.DataFrame, path: Union[str, Path]):
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n", encoding="utf-8")


def emit_csv(rows: Sequence[ResultRow], path: Union[str, Path]):
    """Header plus one line per row, ResultRow field order, 6-decimal floats"""
    emit_frame(rows_frame(rows), path)


def read_results_csv(path: Union[str, Path]) -> List[ResultRow]:
    frame = pd.read_csv(path, dtype={"aux_tasks_used": str, "test_domain": str}, keep_default_na=False)
    return [
        ResultRow(strategy=str(r.strategy), selection=str(r.selection), test_domain=str(r.test_domain),
                  ood_acc=float(r.ood_acc), id_val_acc=float(r.id_val_acc), seed=int(r.seed),
                  runs_used=int(r.runs_used), aux_tasks_used=[a for a in str(r.aux_tasks_used).split(";") if a])
        for r in frame.itertuples(index=False)
    ]


def points_frame(points: Sequence[AblationPoint]) -> pd.DataFrame:
    return pd.DataFrame([p.model_dump() for p in points], columns=list(AblationPoint.model_fields))


def lmc_frames(records: Sequence[LmcRecord]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """(per-lambda curve rows, per-seed summary rows)"""
    curves = []
    for rec in records:
        frame = rec.curve.frame()
        frame.insert(0, "seed", rec.seed)
        frame.insert(0, "kind", rec.kind)
        curves.append(frame)
    curve_frame = (pd.concat(curves, ignore_index=True) if curves
                   else pd.DataFrame(columns=["kind", "seed", "lambda", "accuracy"]))
    summary = pd.DataFrame([{"kind": r.kind, "seed": r.seed, "start": r.curve.endpoint_labels[0],
                             "end": r.curve.endpoint_labels[1], "holds": r.holds, "barrier": r.barrier}
                            for r in records],
                           columns=["kind", "seed", "start", "end", "holds", "barrier"])
    return curve_frame, summary
