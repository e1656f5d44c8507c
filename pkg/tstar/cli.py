#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行入口
search / eval / simulate / bench / complexity / sweep 子命令；
所有参数都可由 TSTAR_<参数名> 环境变量提供默认值
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from . import __version__
from .core import (
    ConfigError, DataError, GroundedQuery, SearchConfig, TStarError, derive_seed, load_config_from_file,
    validate_config,
)
from .data_sources import (
    GroundingManager, HaystackInstance, embeddings_for, frames_for, load_dataset, save_dataset,
)
from .haystack import (
    SynthParams, complexity_experiment, grid_sweep, iteration_length_buckets, map_tasks,
    parse_strategy, run_benchmark, synth_haystack, threshold_sweep, write_complexity_csv,
    write_rows_csv,
)
from .metrics import MetricKind, SimilaritySpec, aggregate, evaluate_instance
from .scoring import ScorerSpec, create_scorer
from .search_engine import TemporalSearchEngine, run_search, write_trace_csv

logger = logging.getLogger(__name__)

ENV_PREFIX = "TSTAR_"
EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
DEFAULT_STRATEGIES = ("uniform8", "uniform32", "tstar")

METRIC_NAMES = {
    "temporal": MetricKind.TEMPORAL,
    "visual": MetricKind.VISUAL_SSIM,
    "embedding": MetricKind.EMBEDDING_COSINE,
}


# ---------------------------------------------------------------------------
# 参数解析
# ---------------------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _add_search_options(parser: argparse.ArgumentParser) -> None:
    """检索配置覆盖项；缺省值来自配置文件与视频"""
    parser.add_argument("--scorer", help="打分器: oracle[:sigma=60,noise=0,p=1,cost=1] | file:PATH | external:CMD | http:URL")
    parser.add_argument("--scorer-cost", type=float, help="每帧抽象算力单位，覆盖打分器描述中的 cost")
    parser.add_argument("--grid", dest="grid_side", type=int, help="网格边长 g")
    parser.add_argument("--budget", type=int, help="帧预算 B，默认 min(L, 1024)")
    parser.add_argument("--theta", type=float, help="复核阈值 θ")
    parser.add_argument("--k", type=int, help="返回关键帧数 K")
    parser.add_argument("--window", type=int, help="传播半宽 w（帧），默认 ceil(2.5·fps)")
    parser.add_argument("--prob-floor", type=float, help="未访问帧最小质量 ε，默认 0.1/L")
    parser.add_argument("--max-iterations", type=int, help="最大迭代数，默认 ceil(4L/g²)")
    parser.add_argument("--seed", type=int, default=0, help="全局随机种子")
    parser.add_argument("--grounding", help="instance_id → targets/cues 的 JSON 落地文件")
    parser.add_argument("--jobs", type=int, default=1, help="并行进程数")
    parser.add_argument("--timing", action="store_true",
                        help="记录真实耗时；缺省记为 0，同一种子的输出逐字节一致")


def _add_metric_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--metric", default="temporal",
                        help="逗号分隔: temporal, visual, embedding")
    parser.add_argument("--threshold", type=float, help="时间阈值（秒），默认 5.0")
    parser.add_argument("--embeddings", help="按 video_id 命名的帧嵌入文件目录")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tstar", description="预算约束下的长视频关键帧检索")
    parser.add_argument("--version", action="store_true", help="输出 JSON 格式的版本信息")
    parser.add_argument("--config", default="config.json", help="配置文件路径")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日志级别")
    commands = parser.add_subparsers(dest="command")

    search = commands.add_parser("search", help="在数据集上执行检索")
    search.add_argument("--dataset", required=True)
    search.add_argument("--out", required=True)
    search.add_argument("--trace", help="分布演化 CSV；多个实例时文件名附加实例 id")
    _add_search_options(search)

    evaluate = commands.add_parser("eval", help="评估预测关键帧")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--out", help="输出文件，缺省写标准输出")
    _add_metric_options(evaluate)

    simulate = commands.add_parser("simulate", help="生成合成数据集")
    simulate.add_argument("--n", type=int, default=100)
    simulate.add_argument("--frames", type=int, default=18000)
    simulate.add_argument("--fps", type=float, default=30.0)
    simulate.add_argument("--keyframes", type=int, default=2)
    simulate.add_argument("--cues", type=int, default=0, help="每个实例的线索物体数")
    simulate.add_argument("--image-size", type=int, default=0, help="帧图像边长，0 表示不生成图像")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", required=True, help="输出目录")

    bench = commands.add_parser("bench", help="对比多个检索策略")
    bench.add_argument("--dataset", required=True)
    bench.add_argument("--strategies", help="逗号分隔，默认取配置文件 benchmark 段")
    bench.add_argument("--out", required=True)
    bench.add_argument("--progress", action="store_true")
    bench.add_argument("--length-buckets", type=int, default=0,
                       help="按视频时长分桶统计 tstar 迭代数，写入 <out>.buckets.csv")
    _add_search_options(bench)
    _add_metric_options(bench)

    complexity = commands.add_parser("complexity", help="迭代次数随 L 与准确率 p 的变化")
    complexity.add_argument("--lengths", type=_int_list, default=[4096, 65536])
    complexity.add_argument("--accuracies", type=_float_list, default=[1.0])
    complexity.add_argument("--trials", type=int, default=20)
    complexity.add_argument("--seed", type=int, default=0)
    complexity.add_argument("--grid", dest="grid_side", type=int, default=8)
    complexity.add_argument("--theta", type=float, default=0.6)
    complexity.add_argument("--sigma-fraction", type=float, default=1 / 1024,
                            help="线索衰减尺度占 L 的比例")
    complexity.add_argument("--target-sigma", type=float, default=8.0,
                            help="目标衰减尺度（帧），与 L 无关")
    complexity.add_argument("--jobs", type=int, default=1)
    complexity.add_argument("--progress", action="store_true")
    complexity.add_argument("--out", required=True)

    sweep = commands.add_parser("sweep", help="θ 或网格边长的参数扫描")
    sweep.add_argument("--dataset", required=True)
    sweep.add_argument("--param", choices=["theta", "grid"], required=True)
    sweep.add_argument("--values", required=True, help="逗号分隔的取值")
    sweep.add_argument("--out", required=True)
    _add_search_options(sweep)

    for subparser in [parser] + list(commands.choices.values()):
        _apply_env_defaults(subparser)
    return parser


def _apply_env_defaults(parser: argparse.ArgumentParser) -> None:
    """TSTAR_<长选项名> 环境变量作为参数默认值，如 --grid → TSTAR_GRID"""
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        name = action.option_strings[-1].lstrip("-").replace("-", "_").upper()
        value = os.environ.get(ENV_PREFIX + name)
        if value is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = value.strip().lower() in ("1", "true", "yes", "on")
        else:
            action.default = action.type(value) if action.type else value
        action.required = False


# ---------------------------------------------------------------------------
# 公共辅助
# ---------------------------------------------------------------------------

def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    names = ("grid_side", "budget", "theta", "k", "window", "prob_floor", "max_iterations")
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _merged_overrides(engine: TemporalSearchEngine, args: argparse.Namespace) -> Dict[str, Any]:
    """配置文件 search 段与命令行覆盖项合并；种子总是按实例派生"""
    overrides = dict(engine.config.get("search", {}))
    overrides.pop("seed", None)
    overrides.update(_overrides(args))
    return overrides


def _scorer_spec(args: argparse.Namespace, engine: TemporalSearchEngine) -> ScorerSpec:
    if args.scorer:
        return ScorerSpec.parse(args.scorer, args.scorer_cost)
    spec = engine.scorer_spec()
    if args.scorer_cost is not None:
        spec = ScorerSpec(spec.kind, args.scorer_cost, spec.params)
    return spec


def _metric_specs(args: argparse.Namespace, config: Dict[str, Any]) -> List[SimilaritySpec]:
    threshold = args.threshold
    if threshold is None:
        threshold = float(config.get("metrics", {}).get("temporal_threshold_s", 5.0))
    specs = []
    for name in filter(None, (item.strip() for item in args.metric.split(","))):
        if name not in METRIC_NAMES:
            raise ConfigError("metric", f"未知指标: {name}")
        specs.append(SimilaritySpec(METRIC_NAMES[name], threshold))
    return specs


def _instance_configs(dataset: Sequence[HaystackInstance], engine: TemporalSearchEngine,
                      args: argparse.Namespace) -> List[SearchConfig]:
    """逐实例构造并校验配置，任一失败即抛出 ConfigError"""
    overrides = _overrides(args)
    configs = []
    for instance in dataset:
        cfg = engine.build_config(instance.video, seed=derive_seed(args.seed, instance.instance_id),
                                  **overrides)
        configs.append(validate_config(cfg, instance.video))
    return configs


def _resolve_queries(dataset: Sequence[HaystackInstance], grounding_file: Optional[str]):
    manager = GroundingManager()
    if grounding_file:
        manager.load_custom_grounding(grounding_file)
    return {instance.instance_id: manager.resolve(instance) for instance in dataset}


def _write_lines(lines: Sequence[str], path: Optional[str]) -> None:
    if path is None:
        for line in lines:
            sys.stdout.write(line + "\n")
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as output_file:
        for line in lines:
            output_file.write(line + "\n")


def _dump(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: value for key, value in sorted(vars(args).items())}


def _trace_path(template: str, instance_id: str, multiple: bool) -> str:
    if "{instance_id}" in template:
        return template.format(instance_id=instance_id)
    if not multiple:
        return template
    stem, suffix = os.path.splitext(template)
    return f"{stem}.{instance_id}{suffix or '.csv'}"


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _SearchTask:
    instance: HaystackInstance
    query: GroundedQuery
    cfg: SearchConfig
    spec: ScorerSpec
    trace_path: Optional[str]
    timing: bool


def _search_one(task: _SearchTask) -> Tuple[str, Optional[Dict[str, Any]], Optional[str]]:
    instance = task.instance
    try:
        scorer = create_scorer(task.spec, instance.oracle_references(), derive_seed(task.cfg.seed, "scorer"))
        with scorer:
            outcome = run_search(instance.video, task.query, scorer, task.cfg,
                                 record_probabilities=task.trace_path is not None, timing=task.timing)
        outcome.efficiency.grounding_calls = 1
        if task.trace_path:
            write_trace_csv(outcome.trace, task.trace_path)
    except (TStarError, OSError) as e:
        return instance.instance_id, None, str(e)
    return instance.instance_id, outcome.to_record(instance.instance_id), None


def cmd_search(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    engine = TemporalSearchEngine(config or None)
    dataset = load_dataset(args.dataset)
    spec = _scorer_spec(args, engine)
    configs = _instance_configs(dataset, engine, args)
    queries = _resolve_queries(dataset, args.grounding)
    multiple = len(dataset) > 1
    tasks = [
        _SearchTask(instance, queries[instance.instance_id], cfg, spec,
                    _trace_path(args.trace, instance.instance_id, multiple) if args.trace else None,
                    args.timing)
        for instance, cfg in zip(dataset, configs)
    ]
    results = map_tasks(_search_one, tasks, args.jobs)

    failures = 0
    lines = []
    for instance_id, record, error in results:
        if error is not None:
            failures += 1
            sys.stderr.write(f"实例 {instance_id} 检索失败: {error}\n")
            continue
        lines.append(_dump(record))
    _write_lines(lines, args.out)
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _check_prediction(record: Any, where: str) -> None:
    """预测记录须含 instance_id 与 keyframes，每个关键帧至少有 index 或 timestamp"""
    if not isinstance(record, dict) or "instance_id" not in record:
        raise DataError(f"{where}: 预测记录缺少 instance_id")
    keyframes = record.get("keyframes")
    if not isinstance(keyframes, list):
        raise DataError(f"{where}: 预测记录缺少 keyframes 列表")
    for entry in keyframes:
        if not isinstance(entry, dict) or ("index" not in entry and "timestamp" not in entry):
            raise DataError(f"{where}: 关键帧需要 index 或 timestamp")


def _load_predictions(path: str) -> List[Dict[str, Any]]:
    predictions = []
    with open(path, 'r', encoding='utf-8') as prediction_file:
        for line_no, line in enumerate(prediction_file, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: {e}") from e
            _check_prediction(record, f"{path}:{line_no}")
            predictions.append(record)
    return predictions


def cmd_eval(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    dataset = {instance.instance_id: instance for instance in load_dataset(args.dataset)}
    predictions = _load_predictions(args.pred)
    missing = [record.get("instance_id") for record in predictions if record.get("instance_id") not in dataset]
    if missing:
        raise DataError(f"数据集中不存在的预测 id: {missing}")
    specs = _metric_specs(args, config)

    lines = []
    per_kind: Dict[MetricKind, List] = {spec.kind: [] for spec in specs}
    for record in predictions:
        instance = dataset[record["instance_id"]]
        fps = instance.video.fps
        predicted = [(entry["timestamp"] if "timestamp" in entry else entry["index"] / fps, entry.get("index"))
                     for entry in record["keyframes"]]
        store = frames_for(instance)
        reports = evaluate_instance(predicted, instance.reference_points, specs,
                                    frame_loader=store.load if store else None,
                                    embeddings=embeddings_for(instance, args.embeddings))
        for report in reports:
            per_kind[report.kind].append(report)
            lines.append(_dump({"record_type": "instance", "instance_id": instance.instance_id,
                                **report.to_dict()}))
    for kind, reports in per_kind.items():
        summary = aggregate(reports)
        if summary is not None:
            lines.append(_dump({"record_type": "aggregate", "instances": len(reports),
                                **summary.to_dict(percent=True)}))
    _write_lines(lines, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / bench / complexity / sweep
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    params = SynthParams(frame_count=args.frames, fps=args.fps, keyframes_per_instance=args.keyframes,
                         cue_labels=args.cues, frame_image_size=args.image_size)
    frames_dir = os.path.join(args.out, "frames") if args.image_size else None
    instances = synth_haystack(params, args.n, np.random.default_rng(args.seed), frames_dir)
    save_dataset(instances, os.path.join(args.out, "dataset.jsonl"))
    with open(os.path.join(args.out, "manifest.json"), 'w', encoding='utf-8') as manifest_file:
        json.dump({"version": __version__, "flags": _flags(args), "params": params.to_dict()},
                  manifest_file, ensure_ascii=False, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    engine = TemporalSearchEngine(config or None)
    dataset = load_dataset(args.dataset)
    names = args.strategies or ",".join(config.get("benchmark", {}).get("strategies", DEFAULT_STRATEGIES))
    strategies = [parse_strategy(text) for text in names.split(",") if text.strip()]
    if not strategies:
        raise ConfigError("strategies", "至少需要一个策略")
    spec = _scorer_spec(args, engine)
    specs = _metric_specs(args, config)
    overrides = _merged_overrides(engine, args)
    if any(strategy.kind == "tstar" for strategy in strategies):
        _instance_configs(dataset, engine, args)

    report = run_benchmark(
        dataset, strategies, spec, specs, seed=args.seed, overrides=overrides,
        queries=_resolve_queries(dataset, args.grounding), jobs=args.jobs,
        progress=args.progress, timing=args.timing, embedding_dir=args.embeddings,
        header={"version": __version__, "flags": _flags(args)},
    )
    report.write(args.out)
    if args.length_buckets:
        tstar_records = [record for record in report.records if record["strategy"] == "tstar"]
        rows = iteration_length_buckets(tstar_records, args.length_buckets)
        write_rows_csv(rows, args.out + ".buckets.csv",
                       ["bucket", "min_duration_s", "max_duration_s", "count",
                        "min_iterations", "max_iterations", "mean_iterations"])
    return EXIT_PARTIAL if report.failures else EXIT_OK


def cmd_complexity(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    if any(not 0 < p <= 1 for p in args.accuracies):
        raise ConfigError("accuracy_range", "准确率必须在 (0, 1] 内")
    if any(length < args.grid_side ** 2 for length in args.lengths):
        raise ConfigError("grid_exceeds_frame_count", "视频长度必须不小于 g²")
    if args.sigma_fraction <= 0 or args.target_sigma < 0:
        raise ConfigError("sigma_range", "sigma_fraction 必须为正，target_sigma 不能为负")
    rows = complexity_experiment(args.lengths, args.accuracies, args.trials, seed=args.seed,
                                 grid_side=args.grid_side, sigma_fraction=args.sigma_fraction,
                                 target_sigma=args.target_sigma,
                                 theta=args.theta, jobs=args.jobs, progress=args.progress)
    write_complexity_csv(rows, args.out, meta={"version": __version__, "flags": _flags(args)})
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    engine = TemporalSearchEngine(config or None)
    dataset = load_dataset(args.dataset)
    spec = _scorer_spec(args, engine)
    overrides = _merged_overrides(engine, args)
    if args.param == "theta":
        values = _float_list(args.values)
        rows = threshold_sweep(dataset, values, spec, args.seed, overrides, args.jobs)
        column = "theta"
    else:
        values = _int_list(args.values)
        rows = grid_sweep(dataset, values, spec, args.seed, overrides, args.jobs)
        column = "grid_side"
    write_rows_csv(rows, args.out, [column, "mean_iterations", "mean_frames", "temporal_f1", "failures"],
                   meta={"version": __version__, "flags": _flags(args)})
    return EXIT_PARTIAL if any(row["failures"] for row in rows) else EXIT_OK


COMMANDS = {
    "search": cmd_search,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "complexity": cmd_complexity,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数"""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        sys.stdout.write(json.dumps({"name": "tstar", "version": __version__}) + "\n")
        return EXIT_OK
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_ERROR

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = load_config_from_file(args.config)
        return COMMANDS[args.command](args, config)
    except ConfigError as e:
        sys.stderr.write(f"配置错误 [{e.constraint}]: {e}\n")
    except (TStarError, OSError, ValueError) as e:
        sys.stderr.write(f"错误: {e}\n")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
