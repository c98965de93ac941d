import functools
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Type

import click
import torch
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

# Add the core module to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core import bench
from core.analysis import (accuracy_gain, curve_frame, ensemble_accuracy, lmc_barrier, lmc_holds, lmc_sweep,
                           lmc_sweep3, matrix_frame, pairwise_diversity, select_split)
from core.errors import ConfigError, RecycleError
from core.merge import (MergeWeights, average_weights, fusing_init, greedy_soup_checkpoints, interpolate,
                        interpolate3, sample_kappas, soup, swap_classifier, wise)
from core.param_store import Checkpoint, load_checkpoint, save_checkpoint, stable_digest
from core.schemas import AnalyzeConfig, BenchConfig, GenConfig, MergeConfig, NetSpec, TrainConfig
from core.seeding import derive_seed
from core.synthetic import SyntheticSuite, gen_synthetic_suite, load_suite, save_suite
from core.trainer import TaskSplit, average_trajectory, fine_tune, inter_train, linear_probe, pretrain
from ui.components import (render_config, render_error, render_frame, render_greedy_report, render_header,
                           render_manifest, render_strategy_summary)

logger = logging.getLogger("recyclelab")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging():
    level = os.getenv("RECYCLE_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stdout, force=True)


def exit_code_for(err: Exception) -> int:
    if isinstance(err, RecycleError):
        return err.exit_code
    if isinstance(err, ValidationError):
        return 2
    if isinstance(err, OSError):
        return 4
    return 1


def handle_errors(fn: Callable) -> Callable:
    """Map library errors to the documented exit codes"""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (RecycleError, ValidationError, OSError) as e:
            code = exit_code_for(e)
            logger.error("%s failed: %s", fn.__name__, e)
            render_error(e, code)
            sys.exit(code)

    return wrapper


def load_config(path: str, model: Type[BaseModel], seed: Optional[int], out: Optional[str],
                threads: Optional[int]) -> BaseModel:
    """JSON file, then flag overrides, then strict validation"""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw: Dict[str, Any] = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["output_dir"] = out
    if threads is not None:
        raw["threads"] = threads
    elif "threads" not in raw:
        raw["threads"] = int(os.getenv("RECYCLE_THREADS", "1"))
    return model.model_validate(raw)


def config_digest(cfg: BaseModel) -> str:
    return stable_digest(cfg.model_dump(mode="json", by_alias=True))


def start(subcommand: str, cfg: BaseModel) -> Path:
    digest = config_digest(cfg)
    logger.info("%s: config digest %s", subcommand, digest)
    render_header(subcommand, digest)
    if logger.isEnabledFor(logging.DEBUG):
        render_config(cfg.model_dump(mode="json", by_alias=True))
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def write_json(path: Path, payload: Any):
    path.write_bytes((json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_manifest(out_dir: Path, subcommand: str, cfg: BaseModel, files: List[str]):
    write_json(out_dir / "manifest.json", {
        "subcommand": subcommand,
        "config_digest": config_digest(cfg),
        "files": sorted(files),
    })
    render_manifest(sorted(files) + ["manifest.json"], str(out_dir))


def target_split(suite: SyntheticSuite, task_name: Optional[str], test_domain: Optional[str], seed: int):
    task = suite.task(task_name) if task_name else suite.target_task
    return task.split(test_domain, seed=derive_seed(seed, "split", 0))


def common_options(fn: Callable) -> Callable:
    fn = click.option("--threads", type=click.IntRange(min=1), default=None,
                      help="Worker threads for independent runs.")(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                      help="Output directory (overrides output_dir).")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=None, help="Root seed (overrides the file).")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
                      help="JSON config file.")(fn)
    return fn


@click.group()
def cli():
    """RecycleLab: recycle auxiliary fine-tunings into better weight averages."""
    load_dotenv()
    configure_logging()
    torch.set_num_threads(1)


@cli.command()
@common_options
@handle_errors
def gen(config_path, seed, out, threads):
    """Generate a synthetic multi-domain suite."""
    cfg: GenConfig = load_config(config_path, GenConfig, seed, out, threads)
    out_dir = start("gen", cfg)
    suite = gen_synthetic_suite(cfg.suite, cfg.seed)
    save_suite(suite, out_dir / "suite.json")
    write_manifest(out_dir, "gen", cfg, ["suite.json"])


@cli.command()
@common_options
@handle_errors
def train(config_path, seed, out, threads):
    """Pre-train, linear-probe, fine-tune or inter-train one network."""
    cfg: TrainConfig = load_config(config_path, TrainConfig, seed, out, threads)
    out_dir = start("train", cfg)
    suite = load_suite(cfg.suite)
    hparams = cfg.hparams.model_copy(update={"seed": derive_seed(cfg.seed, "train", cfg.mode, cfg.hparams.seed)})
    files: List[str] = []

    if cfg.mode == "pretrain":
        if cfg.task is None:
            split, _ = suite.pretrain_task.split(None, seed=derive_seed(cfg.seed, "split", 0))
        else:
            split, _ = target_split(suite, cfg.task, cfg.test_domain, cfg.seed)
        net = NetSpec(input_dim=suite.spec.feature_dim, hidden_widths=cfg.hidden_widths,
                      num_classes=split.num_classes, dropout_rate=hparams.dropout)
        save_checkpoint(pretrain(net, split, hparams), out_dir / "pretrained.rata")
        files.append("pretrained.rata")
    else:
        if cfg.init is None:
            raise ConfigError(f"mode '{cfg.mode}' needs an 'init' checkpoint")
        init = load_checkpoint(cfg.init)

        if cfg.mode == "intertrain":
            splits: List[TaskSplit] = [suite.task(name).split(None, seed=derive_seed(cfg.seed, "aux-split", name))[0]
                                       for name in cfg.chain]
            cfgs = [hparams.model_copy(update={"seed": derive_seed(hparams.seed, "chain", i)})
                    for i in range(len(splits))]
            save_checkpoint(inter_train(init, splits, cfgs, robust=cfg.robust), out_dir / "intertrained.rata")
            files.append("intertrained.rata")
        else:
            split, _ = target_split(suite, cfg.task, cfg.test_domain, cfg.seed)
            if cfg.mode == "probe":
                probe = linear_probe(init.featurizer, split, hparams)
                save_checkpoint(swap_classifier(init, probe), out_dir / "probed.rata")
                files.append("probed.rata")
            else:
                run = fine_tune(init, split, hparams)
                save_checkpoint(run.best, out_dir / "best.rata")
                save_checkpoint(run.final, out_dir / "final.rata")
                files += ["best.rata", "final.rata"]
                if cfg.save_trajectory:
                    for p in run.trajectory:
                        name = f"step_{p.step:06d}.rata"
                        save_checkpoint(p.checkpoint, out_dir / name)
                        files.append(name)
                write_json(out_dir / "run.json", run.summary())
                files.append("run.json")

    write_manifest(out_dir, "train", cfg, files)


def _need(value, what: str, strategy: str):
    if value is None:
        raise ConfigError(f"strategy '{strategy}' needs '{what}'")
    return value


def _need_inputs(models: List[Checkpoint], n: int, strategy: str):
    if len(models) != n:
        raise ConfigError(f"strategy '{strategy}' takes {n} inputs, got {len(models)}")


@cli.command()
@common_options
@handle_errors
def merge(config_path, seed, out, threads):
    """Average checkpoints: convex weights, soups, WiSE, fusing, moving average."""
    cfg: MergeConfig = load_config(config_path, MergeConfig, seed, out, threads)
    out_dir = start("merge", cfg)
    models = [load_checkpoint(p) for p in cfg.inputs]
    files = [cfg.output]
    s = cfg.strategy

    if s == "average":
        merged = average_weights(models, MergeWeights(tuple(_need(cfg.lambdas, "lambdas", s))))
    elif s == "uniform":
        merged = soup(models)
    elif s == "greedy":
        suite = load_suite(_need(cfg.suite, "suite", s))
        split, _ = target_split(suite, cfg.task, _need(cfg.test_domain, "test_domain", s), cfg.seed)
        scores = [split.val_accuracy(m) for m in models]
        merged, report = greedy_soup_checkpoints(models, scores, split.val_accuracy)
        report_name = f"{Path(cfg.output).stem}.greedy.json"
        write_json(out_dir / report_name, report.model_dump(mode="json"))
        files.append(report_name)
        render_greedy_report(report)
    elif s == "wise":
        _need_inputs(models, 1, s)
        pretrained = load_checkpoint(_need(cfg.pretrained, "pretrained", s))
        merged = wise(models[0], pretrained, _need(cfg.lam, "lambda", s))
    elif s == "interpolate":
        _need_inputs(models, 2, s)
        merged = interpolate(models[0], models[1], _need(cfg.lam, "lambda", s))
    elif s == "interpolate3":
        _need_inputs(models, 3, s)
        merged = interpolate3(models[0], models[1], models[2], _need(cfg.lam, "lambda", s))
    elif s == "fusing":
        kappas = cfg.kappas if cfg.kappas is not None else sample_kappas(len(models), derive_seed(cfg.seed, "kappa"))
        merged, lambdas = fusing_init(models, kappas)
        logger.info("fusing coefficients %s", ", ".join(f"{lam:.4f}" for lam in lambdas))
    else:
        merged = average_trajectory(sorted(models, key=lambda m: m.step))

    save_checkpoint(merged, out_dir / cfg.output)
    write_manifest(out_dir, "merge", cfg, files)


@cli.command()
@common_options
@handle_errors
def analyze(config_path, seed, out, threads):
    """Connectivity curves, prediction diversity, averaging gains and ensembles."""
    cfg: AnalyzeConfig = load_config(config_path, AnalyzeConfig, seed, out, threads)
    out_dir = start("analyze", cfg)
    suite = load_suite(cfg.suite)
    split, test = target_split(suite, cfg.task, cfg.test_domain, cfg.seed)
    x, y = select_split(cfg.split, (test[0], test[1]), (split.x_val, split.y_val))
    models = [load_checkpoint(p) for p in cfg.models]
    files: List[str] = []

    if cfg.mode in ("lmc", "lmc3"):
        if cfg.mode == "lmc":
            _need_inputs(models, 2, cfg.mode)
            curve = lmc_sweep(models[0], models[1], x, y, cfg.grid_size)
        else:
            _need_inputs(models, 3, cfg.mode)
            curve = lmc_sweep3(models[0], models[1], models[2], x, y, cfg.grid_size)
        frame = curve_frame(curve)
        bench.emit_frame(frame, out_dir / "lmc.csv")
        write_json(out_dir / "lmc_summary.json", {"holds": lmc_holds(curve, cfg.epsilon),
                                                  "barrier": lmc_barrier(curve), "epsilon": cfg.epsilon})
        files += ["lmc.csv", "lmc_summary.json"]
        render_frame(frame, "Linear path accuracy")
    elif cfg.mode == "diversity":
        matrix, mean = pairwise_diversity(models, x, y, cfg.measure)
        frame = matrix_frame(matrix)
        bench.emit_frame(frame, out_dir / "diversity.csv")
        write_json(out_dir / "diversity_summary.json", {"measure": cfg.measure, "mean": mean})
        files += ["diversity.csv", "diversity_summary.json"]
        render_frame(frame, f"Pairwise {cfg.measure}-diversity (mean {mean:.4f})")
    elif cfg.mode == "gain":
        gain = accuracy_gain(models, x, y)
        write_json(out_dir / "gain.json", {"accuracy_gain": gain, "models": len(models)})
        files.append("gain.json")
        logger.info("accuracy gain of the uniform average: %.4f", gain)
    else:
        acc = ensemble_accuracy(models, x, y)
        write_json(out_dir / "ensemble.json", {"accuracy": acc, "models": len(models)})
        files.append("ensemble.json")
        logger.info("ensemble accuracy: %.4f", acc)

    write_manifest(out_dir, "analyze", cfg, files)


@cli.command("bench")
@common_options
@handle_errors
def bench_cmd(config_path, seed, out, threads):
    """Leave-one-domain-out protocol, ablations and connectivity/diversity experiments."""
    cfg: BenchConfig = load_config(config_path, BenchConfig, seed, out, threads)
    out_dir = start("bench", cfg)
    suite = load_suite(cfg.suite) if cfg.suite else gen_synthetic_suite(cfg.suite_spec, cfg.seed)
    ctx = bench.BenchContext(suite, cfg.protocol, cfg.threads)
    common = dict(protocol=cfg.protocol, threads=cfg.threads, ctx=ctx)
    files: List[str] = []

    if cfg.experiment == "protocol":
        rows = bench.run_protocol(suite, cfg.strategies, cfg.runs, cfg.seeds, test_domains=cfg.test_domains,
                                  **common)
        bench.emit_csv(rows, out_dir / "results.csv")
        files.append("results.csv")
        render_strategy_summary(bench.rows_frame(rows))
    elif cfg.experiment in ("num_aux", "steps", "num_runs"):
        if cfg.experiment == "num_aux":
            max_aux = len(suite.aux_tasks) if cfg.max_aux is None else cfg.max_aux
            points = bench.ablate_num_aux(suite, cfg.runs, max_aux, cfg.seeds, test_domains=cfg.test_domains,
                                          **common)
        elif cfg.experiment == "steps":
            points = bench.ablate_steps(suite, cfg.step_grid, cfg.runs, cfg.seeds, test_domains=cfg.test_domains,
                                        **common)
        else:
            points = bench.ablate_num_runs(suite, cfg.run_grid, cfg.seeds, test_domains=cfg.test_domains, **common)
        name = f"ablation_{cfg.experiment}.csv"
        frame = bench.points_frame(points)
        bench.emit_frame(frame, out_dir / name)
        files.append(name)
        render_frame(frame, f"Ablation: {cfg.experiment}")
    elif cfg.experiment == "lmc":
        domain = cfg.test_domains[0] if cfg.test_domains else None
        records = bench.lmc_experiment(suite, cfg.lmc_kind, cfg.seeds, test_domain=domain, split=cfg.split,
                                       grid_size=cfg.grid_size, epsilon=cfg.epsilon, **common)
        curves, summary = bench.lmc_frames(records)
        bench.emit_frame(curves, out_dir / "lmc_curves.csv")
        bench.emit_frame(summary, out_dir / "lmc_summary.csv")
        files += ["lmc_curves.csv", "lmc_summary.csv"]
        render_frame(summary, f"Linear mode connectivity: {cfg.lmc_kind}")
    elif cfg.experiment == "diversity":
        domain = cfg.test_domains[0] if cfg.test_domains else None
        frame = bench.diversity_ordering(suite, cfg.runs, cfg.seeds, test_domain=domain, split=cfg.split, **common)
        bench.emit_frame(frame, out_dir / "diversity_ordering.csv")
        files.append("diversity_ordering.csv")
        render_frame(frame, "Same-init vs cross-init diversity")
    elif cfg.experiment == "diversity_steps":
        domain = cfg.test_domains[0] if cfg.test_domains else None
        frame = bench.diversity_steps(suite, cfg.runs, cfg.seeds, test_domain=domain, split=cfg.split, **common)
        bench.emit_frame(frame, out_dir / "diversity_steps.csv")
        files.append("diversity_steps.csv")
        render_frame(frame, "Diversity along training")
    else:
        domain = cfg.test_domains[0] if cfg.test_domains else None
        frame = bench.mixing_experiment(suite, cfg.runs, cfg.seeds, cfg.mu_grid, cfg.repeats, test_domain=domain,
                                        **common)
        bench.emit_frame(frame, out_dir / "mixing.csv")
        files.append("mixing.csv")
        render_frame(frame, "Mixing ratio curve")

    write_manifest(out_dir, "bench", cfg, files)


def main():
    cli()


if __name__ == "__main__":
    main()
