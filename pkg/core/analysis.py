import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import AnalysisError, DataError
from core.merge import interpolate, interpolate3, soup
from core.network import count_correct, predict, predict_proba
from core.param_store import Checkpoint, require_compatible
from core.trainer import RunResult

logger = logging.getLogger(__name__)

Measure = Literal["q", "ratio"]
DEFAULT_GRID = 21
DEFAULT_EPSILON = 0.02
# slack for the rounding of the chord itself
_CHORD_ROUNDING = 1e-12


@dataclass(frozen=True)
class ContingencyCounts:
    """Joint correctness of two classifiers: nij = first correct iff i, second correct iff j"""

    n11: int
    n10: int
    n01: int
    n00: int

    @property
    def total(self) -> int:
        return self.n11 + self.n10 + self.n01 + self.n00


def contingency(preds_a: Sequence[int], preds_b: Sequence[int], labels: Sequence[int]) -> ContingencyCounts:
    y = np.asarray(labels)
    a = np.asarray(preds_a)
    b = np.asarray(preds_b)
    if not (len(a) == len(b) == len(y)):
        raise AnalysisError(f"length mismatch: {len(a)}, {len(b)} predictions for {len(y)} labels")
    if len(y) == 0:
        raise AnalysisError("empty input")
    correct_a = a == y
    correct_b = b == y
    n11 = int(np.sum(correct_a & correct_b))
    n10 = int(np.sum(correct_a & ~correct_b))
    n01 = int(np.sum(~correct_a & correct_b))
    return ContingencyCounts(n11, n10, n01, len(y) - n11 - n10 - n01)


def q_diversity(c: ContingencyCounts) -> float:
    """1 - Q, with Q = (N11 N00 - N01 N10) / (N11 N00 + N01 N10); lies in [0, 2]"""
    coupled = c.n11 * c.n00
    crossed = c.n01 * c.n10
    if coupled + crossed == 0:
        raise AnalysisError("q-statistic undefined: N11*N00 + N01*N10 = 0")
    # 1 - Q in one division of exact integers
    return 2 * crossed / (coupled + crossed)


def ratio_error_diversity(c: ContingencyCounts) -> float:
    """Ratio-error (N01 + N10) / N00: different errors over shared errors.

    The orientation (disagreements over shared errors, 0 for identical models)
    follows the Aksela / DESlib convention; higher means more diverse, like 1 - Q.
    """
    if c.n00 == 0:
        raise AnalysisError("ratio-error undefined: no shared errors (N00 = 0)")
    return (c.n01 + c.n10) / c.n00


_MEASURES = {"q": q_diversity, "ratio": ratio_error_diversity}


def diversity(c: ContingencyCounts, measure: Measure = "q") -> float:
    try:
        return _MEASURES[measure](c)
    except KeyError:
        raise AnalysisError(f"unknown diversity measure '{measure}'")


def pairwise_diversity(models: Sequence[Checkpoint], x: np.ndarray, y: np.ndarray,
                       measure: Measure = "q") -> Tuple[np.ndarray, float]:
    """Symmetric matrix of pair diversities (NaN on the diagonal and for undefined pairs) and its mean"""
    if len(models) < 2:
        raise AnalysisError("need at least two models")
    preds = [predict(m, x) for m in models]
    n = len(models)
    matrix = np.full((n, n), np.nan)
    values: List[float] = []
    for i in range(n):
        for j in range(i + 1, n):
            try:
                d = diversity(contingency(preds[i], preds[j], y), measure)
            except AnalysisError as e:
                logger.debug("pair (%d, %d) skipped: %s", i, j, e)
                continue
            matrix[i, j] = matrix[j, i] = d
            values.append(d)
    if not values:
        logger.warning("no pair has a defined %s diversity", measure)
        return matrix, math.nan
    return matrix, float(np.mean(values))


def matrix_frame(matrix: np.ndarray) -> pd.DataFrame:
    """Upper-triangle entries as rows (i, j, diversity); undefined pairs left empty"""
    n = matrix.shape[0]
    rows = [(i, j, matrix[i, j]) for i in range(n) for j in range(i + 1, n)]
    return pd.DataFrame(rows, columns=["i", "j", "diversity"])


# --- linear mode connectivity ----------------------------------------------

@dataclass(frozen=True)
class LmcCurve:
    grid: Tuple[float, ...]
    accuracies: Tuple[float, ...]
    endpoint_labels: Tuple[str, str] = ("a", "b")

    def __post_init__(self):
        if len(self.grid) != len(self.accuracies):
            raise DataError("grid and accuracies differ in length")
        if len(self.grid) < 2 or self.grid[0] != 0.0 or self.grid[-1] != 1.0:
            raise DataError("grid must start at 0 and end at 1")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise DataError("grid must be strictly increasing")

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lambda": list(self.grid), "accuracy": list(self.accuracies)})


def curve_frame(curve: LmcCurve) -> pd.DataFrame:
    return curve.frame()


def lambda_grid(grid_size: int = DEFAULT_GRID) -> Tuple[float, ...]:
    if grid_size < 3:
        raise DataError(f"grid size must be at least 3, got {grid_size}")
    return tuple(float(v) for v in np.linspace(0.0, 1.0, grid_size))


def lmc_sweep(a: Checkpoint, b: Checkpoint, x: np.ndarray, y: np.ndarray, grid_size: int = DEFAULT_GRID,
              labels: Tuple[str, str] = ("a", "b")) -> LmcCurve:
    """lambda -> acc((1 - lambda) * a + lambda * b)"""
    require_compatible([a, b])
    grid = lambda_grid(grid_size)
    accs = tuple(count_correct(interpolate(a, b, lam), x, y) / len(y) for lam in grid)
    return LmcCurve(grid, accs, labels)


def lmc_sweep3(a: Checkpoint, b: Checkpoint, c: Checkpoint, x: np.ndarray, y: np.ndarray,
               grid_size: int = DEFAULT_GRID, labels: Tuple[str, str] = ("a+b", "c")) -> LmcCurve:
    """lambda -> acc((1 - lambda)/2 * a + (1 - lambda)/2 * b + lambda * c)"""
    require_compatible([a, b, c])
    grid = lambda_grid(grid_size)
    accs = tuple(count_correct(interpolate3(a, b, c, lam), x, y) / len(y) for lam in grid)
    return LmcCurve(grid, accs, labels)


def lmc_holds(curve: LmcCurve, epsilon: float = DEFAULT_EPSILON) -> bool:
    """acc(lambda) >= (1 - lambda) acc(0) + lambda acc(1) - epsilon at every grid point"""
    if epsilon < 0:
        raise DataError("epsilon must be non-negative")
    start, end = curve.accuracies[0], curve.accuracies[-1]
    return all(acc >= (1.0 - lam) * start + lam * end - epsilon - _CHORD_ROUNDING
               for lam, acc in zip(curve.grid, curve.accuracies))


def lmc_barrier(curve: LmcCurve) -> float:
    """Largest drop below the chord (0 when the curve never dips under it)"""
    start, end = curve.accuracies[0], curve.accuracies[-1]
    return max(0.0, max((1.0 - lam) * start + lam * end - acc for lam, acc in zip(curve.grid, curve.accuracies)))


# --- weight averaging gains ------------------------------------------------

def accuracy_gain(models: Sequence[Checkpoint], x: np.ndarray, y: np.ndarray) -> float:
    """acc(uniform weight average) - mean individual accuracy"""
    if len(models) < 2:
        raise AnalysisError("need at least two models")
    require_compatible(models)
    n, m = len(y), len(models)
    averaged = count_correct(soup(models), x, y) / n
    # counts keep identical models at exactly zero gain
    individual = sum(count_correct(model, x, y) for model in models) / (n * m)
    return averaged - individual


def diversity_accuracy_points(groups: Sequence[Sequence[Checkpoint]], x: np.ndarray, y: np.ndarray,
                              measure: Measure = "q") -> List[Tuple[float, float]]:
    """(mean pairwise diversity, accuracy gain) for each group of models"""
    points = []
    for group in groups:
        _, mean_div = pairwise_diversity(group, x, y, measure)
        points.append((mean_div, accuracy_gain(group, x, y)))
    return points


def ensemble_predict(models: Sequence[Checkpoint], x: np.ndarray) -> np.ndarray:
    """Deep-ensemble prediction: argmax of the averaged softmax outputs"""
    if not models:
        raise AnalysisError("empty ensemble")
    probs = predict_proba(models[0], x)
    for m in models[1:]:
        probs = probs + predict_proba(m, x)
    return np.argmax(probs / len(models), axis=1)


def ensemble_accuracy(models: Sequence[Checkpoint], x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise DataError("empty dataset")
    return float(np.sum(ensemble_predict(models, x) == np.asarray(y))) / len(y)


@dataclass(frozen=True)
class MixingPoint:
    mu: float
    mean_acc: float
    std: float


def mix_counts(mu: float, m: int) -> Tuple[int, int]:
    """(from pool a, from pool b); round(mu * M) half-up goes to pool b"""
    from_b = int(math.floor(mu * m + 0.5))
    return m - from_b, from_b


def mixing_curve(pool_a: Sequence[RunResult], pool_b: Sequence[RunResult], m: int, mu_grid: Sequence[float],
                 x: np.ndarray, y: np.ndarray, repeats: int, seed: int) -> List[MixingPoint]:
    """Accuracy of soups drawing a (1 - mu) share from pool a and mu from pool b"""
    rng = np.random.default_rng(seed)
    points = []
    for mu in mu_grid:
        n_a, n_b = mix_counts(mu, m)
        if n_a > len(pool_a) or n_b > len(pool_b):
            raise AnalysisError(f"insufficient pool size for mu={mu}: need {n_a}+{n_b}, "
                                f"have {len(pool_a)}+{len(pool_b)}")
        accs = []
        for _ in range(repeats):
            picks_a = rng.choice(len(pool_a), size=n_a, replace=False) if n_a else []
            picks_b = rng.choice(len(pool_b), size=n_b, replace=False) if n_b else []
            members = [pool_a[i].best for i in picks_a] + [pool_b[i].best for i in picks_b]
            accs.append(count_correct(soup(members), x, y) / len(y))
        points.append(MixingPoint(float(mu), float(np.mean(accs)), float(np.std(accs))))
        logger.debug("mixing mu=%.2f mean acc %.4f", mu, points[-1].mean_acc)
    return points


def diversity_vs_steps(run_pairs: Sequence[Tuple[RunResult, RunResult]], x: np.ndarray, y: np.ndarray,
                       measure: Measure = "q") -> List[Tuple[int, float]]:
    """Mean pair diversity at each evaluation step shared by every trajectory"""
    if not run_pairs:
        raise AnalysisError("no run pairs")
    common = None
    for a, b in run_pairs:
        steps = {p.step for p in a.trajectory} & {p.step for p in b.trajectory}
        common = steps if common is None else common & steps
    if not common:
        raise AnalysisError("no common steps")

    series = []
    for step in sorted(common):
        values = []
        for a, b in run_pairs:
            preds_a = predict(a.at_step(step).checkpoint, x)
            preds_b = predict(b.at_step(step).checkpoint, x)
            try:
                values.append(diversity(contingency(preds_a, preds_b, y), measure))
            except AnalysisError as e:
                logger.debug("step %d pair skipped: %s", step, e)
        series.append((step, float(np.mean(values)) if values else math.nan))
    return series


def select_split(split: Literal["ood", "id"], ood: Tuple[np.ndarray, np.ndarray],
                 id_val: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluation arrays for the chosen split; OOD test is the default"""
    return id_val if split == "id" else ood
