#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
干草堆实验模块
合成数据集生成、基线策略、基准评测、复杂度实验与参数扫描
"""

import csv
import json
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .core import (
    DataError, EfficiencyReport, GroundedQuery, KeyframeSet, SearchConfig, TStarError,
    TerminalReason, VideoSource, default_window, derive_seed,
)
from .data_sources import FrameStore, HaystackInstance, embeddings_for, frames_for
from .metrics import MetricKind, MetricReport, SimilaritySpec, aggregate_by_kind, evaluate_instance
from .sampling import build_grid
from .scoring import Scorer, ScorerSpec, cell_confidence, create_scorer, score_grid
from .search_engine import run_search

logger = logging.getLogger(__name__)

NEEDLE_LABEL = "needle"
COMPLEXITY_CUE_LABEL = "needle-cue"
ANSWER_SYMBOLS = "ABCD"


# ---------------------------------------------------------------------------
# 合成数据
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    """
    合成干草堆参数

    cue_labels 为每个实例的线索物体个数，线索出现在参考关键帧附近；
    frame_image_size 为 0 时不生成帧图像。
    """
    frame_count: int = 18000
    fps: float = 30.0
    keyframes_per_instance: int = 2
    locality_sigma: float = 60.0
    noise_sigma: float = 0.0
    heuristic_accuracy: float = 1.0
    cue_labels: int = 0
    frame_image_size: int = 0
    window: Optional[int] = None

    def __post_init__(self):
        if self.frame_count < 1 or not self.fps > 0:
            raise DataError("frame_count 与 fps 必须为正")
        if not 1 <= self.keyframes_per_instance <= self.frame_count:
            raise DataError("keyframes_per_instance 必须在 [1, frame_count] 内")
        if self.locality_sigma < 0 or self.noise_sigma < 0:
            raise DataError("sigma 不能为负")
        if not 0 < self.heuristic_accuracy <= 1:
            raise DataError("heuristic_accuracy 必须在 (0, 1] 内")
        if self.cue_labels < 0 or self.frame_image_size < 0:
            raise DataError("cue_labels 与 frame_image_size 不能为负")

    @property
    def effective_window(self) -> int:
        return self.window if self.window is not None else default_window(self.fps)

    @property
    def min_spacing(self) -> int:
        """参考帧之间的最小间距：2w，帧数不够时收缩到 L/(2k)，至少为 1"""
        return max(1, min(2 * self.effective_window, self.frame_count // (2 * self.keyframes_per_instance)))

    def scorer_spec(self, cost_units_per_frame: float = 1.0) -> ScorerSpec:
        return ScorerSpec("oracle", cost_units_per_frame, {
            "locality_sigma": self.locality_sigma,
            "noise_sigma": self.noise_sigma,
            "heuristic_accuracy": self.heuristic_accuracy,
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame_count": self.frame_count, "fps": self.fps,
            "keyframes_per_instance": self.keyframes_per_instance,
            "locality_sigma": self.locality_sigma, "noise_sigma": self.noise_sigma,
            "heuristic_accuracy": self.heuristic_accuracy, "cue_labels": self.cue_labels,
            "frame_image_size": self.frame_image_size, "window": self.effective_window,
        }


def _place_keyframes(params: SynthParams, rng: np.random.Generator) -> List[int]:
    """均匀随机放置参考帧，拒绝间距小于最小间距的位置"""
    spacing = params.min_spacing
    while True:
        chosen: List[int] = []
        for _ in range(100 * params.keyframes_per_instance):
            candidate = int(rng.integers(0, params.frame_count))
            if all(abs(candidate - other) >= spacing for other in chosen):
                chosen.append(candidate)
                if len(chosen) == params.keyframes_per_instance:
                    return sorted(chosen)


def _noise_frame(size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 96, size=(size, size), dtype=np.uint8)


def _needle_frame(size: int, rng: np.random.Generator) -> np.ndarray:
    """噪声背景上的亮圆盘"""
    pixels = _noise_frame(size, rng)
    rows, cols = np.ogrid[:size, :size]
    center = (size - 1) / 2
    disc = (rows - center) ** 2 + (cols - center) ** 2 <= (size / 4) ** 2
    pixels[disc] = 230
    return pixels


def synth_haystack(params: SynthParams, n_instances: int, rng: np.random.Generator,
                   frames_dir: Optional[str] = None) -> List[HaystackInstance]:
    """
    生成合成数据集

    Args:
        params: 合成参数
        n_instances: 实例个数
        rng: 随机数生成器，同一种子生成相同数据集
        frames_dir: 写入帧图像的目录（每个视频一个子目录），需要 frame_image_size > 0

    Returns:
        实例列表
    """
    if frames_dir and params.frame_image_size == 0:
        raise DataError("生成帧图像需要 frame_image_size > 0")
    window = params.effective_window
    instances = []
    for i in range(n_instances):
        video_id = f"synth-video-{i:06d}"
        keyframes = _place_keyframes(params, rng)
        cue_names = [f"cue-{j}" for j in range(params.cue_labels)]
        cue_frames = {
            name: tuple(int(np.clip(frame + rng.integers(-4 * window, 4 * window + 1),
                                    0, params.frame_count - 1)) for frame in keyframes)
            for name in cue_names
        }
        frame_store = None
        if frames_dir:
            frame_store = os.path.join(frames_dir, video_id)
            _write_frames(FrameStore(frame_store), params, set(keyframes), rng)
        instances.append(HaystackInstance(
            instance_id=f"synth-{i:06d}",
            video=VideoSource(video_id, params.frame_count, params.fps, frame_store),
            query=GroundedQuery.from_labels(f"What is next to the {NEEDLE_LABEL}?", [NEEDLE_LABEL], cue_names),
            reference_keyframes=tuple((frame / params.fps, frame) for frame in keyframes),
            answer=ANSWER_SYMBOLS[int(rng.integers(0, len(ANSWER_SYMBOLS)))],
            split="test",
            cue_frames=cue_frames,
        ))
    logger.info("生成了 %d 个合成实例 (L=%d)", n_instances, params.frame_count)
    return instances


def _write_frames(store: FrameStore, params: SynthParams, keyframes: set,
                  rng: np.random.Generator) -> None:
    size = params.frame_image_size
    for index in range(params.frame_count):
        pixels = _needle_frame(size, rng) if index in keyframes else _noise_frame(size, rng)
        store.save(index, pixels)


# ---------------------------------------------------------------------------
# 检索策略
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategySpec:
    """检索策略：uniform(n)、retrieval(n) 或 tstar"""
    kind: str
    frames: int = 0

    @property
    def name(self) -> str:
        return self.kind if self.kind == "tstar" else f"{self.kind}{self.frames}"


_STRATEGY_PATTERN = re.compile(r"^(uniform|retrieval)(\d+)$")


def parse_strategy(text: str) -> StrategySpec:
    """解析 uniform8 / retrieval32 / tstar"""
    text = text.strip()
    if text == "tstar":
        return StrategySpec("tstar")
    match = _STRATEGY_PATTERN.match(text)
    if not match or int(match.group(2)) < 1:
        raise DataError(f"无法解析策略: {text}")
    return StrategySpec(match.group(1), int(match.group(2)))


@dataclass
class StrategyRun:
    keyframes: KeyframeSet
    efficiency: EfficiencyReport
    iterations: int = 0
    terminal_reason: Optional[TerminalReason] = None


def uniform_indices(frame_count: int, n: int) -> List[int]:
    """含两端点的均匀帧号 round(i·(L−1)/(n−1))"""
    if n == 1:
        return [0]
    return sorted({int(round(i * (frame_count - 1) / (n - 1))) for i in range(n)})


def run_strategy(strategy: StrategySpec, instance: HaystackInstance, scorer: Optional[Scorer],
                 cfg: Optional[SearchConfig] = None, query: Optional[GroundedQuery] = None,
                 timing: bool = True) -> StrategyRun:
    """
    在单个实例上执行策略

    Args:
        strategy: 策略
        instance: 实例
        scorer: 打分器；uniform 不使用
        cfg: tstar 的检索配置
        query: 落地查询，缺省使用实例自带的查询
    """
    video = instance.video
    query = query or instance.query
    if strategy.kind == "uniform":
        indices = uniform_indices(video.frame_count, strategy.frames)
        return StrategyRun(KeyframeSet.build([(index, 0.0) for index in indices], video.fps),
                           EfficiencyReport())

    if scorer is None:
        raise DataError(f"策略 {strategy.name} 需要打分器")
    if strategy.kind == "retrieval":
        return _run_retrieval(strategy.frames, video, query, scorer)

    outcome = run_search(video, query, scorer, cfg or SearchConfig.for_video(video), timing=timing)
    outcome.efficiency.grounding_calls = 1
    return StrategyRun(outcome.keyframes, outcome.efficiency, outcome.iterations,
                       outcome.trace.terminal_reason)


def _run_retrieval(n: int, video: VideoSource, query: GroundedQuery, scorer: Scorer) -> StrategyRun:
    """逐帧以 1×1 网格打分后取前 n"""
    scored = []
    for frame in range(video.frame_count):
        detections = score_grid(scorer, build_grid([frame], 1), query)
        scored.append((frame, cell_confidence(detections[0], query)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    efficiency = EfficiencyReport(
        frames_processed=video.frame_count,
        scorer_calls=video.frame_count,
        grounding_calls=1,
        cost_units=scorer.cost_units_per_frame * video.frame_count,
    )
    return StrategyRun(KeyframeSet.build(scored[:n], video.fps), efficiency)


# ---------------------------------------------------------------------------
# 基准评测
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _BenchTask:
    strategy: StrategySpec
    instance: HaystackInstance
    query: GroundedQuery
    scorer_spec: ScorerSpec
    metric_specs: Tuple[SimilaritySpec, ...]
    overrides: Tuple[Tuple[str, Any], ...]
    seed: int
    timing: bool
    embedding_dir: Optional[str]


def instance_config(instance: HaystackInstance, seed: int, overrides: Dict[str, Any]) -> SearchConfig:
    """实例的检索配置；种子由全局种子与实例 id 派生"""
    values = dict(overrides)
    values["seed"] = derive_seed(seed, instance.instance_id)
    return SearchConfig.for_video(instance.video, **values)


def _run_task(task: _BenchTask) -> Dict[str, Any]:
    """评测一个 (策略, 实例)，失败时返回带 error 的记录"""
    instance = task.instance
    base = {"strategy": task.strategy.name, "instance_id": instance.instance_id}
    try:
        cfg = instance_config(instance, task.seed, dict(task.overrides))
        scorer = None
        if task.strategy.kind != "uniform":
            scorer = create_scorer(task.scorer_spec, instance.oracle_references(),
                                   derive_seed(cfg.seed, "scorer"))
        try:
            run = run_strategy(task.strategy, instance, scorer, cfg, task.query, task.timing)
        finally:
            if scorer is not None:
                scorer.close()
        store = frames_for(instance)
        reports = evaluate_instance(
            [(entry.timestamp, entry.frame_index) for entry in run.keyframes.entries],
            instance.reference_points,
            task.metric_specs,
            frame_loader=store.load if store else None,
            embeddings=embeddings_for(instance, task.embedding_dir),
        )
    except (TStarError, OSError) as e:
        return dict(base, error=str(e))
    return dict(
        base,
        keyframes=run.keyframes.to_records(),
        metrics={report.kind.value: report.to_dict() for report in reports},
        efficiency=run.efficiency.to_dict(),
        iterations=run.iterations,
        terminal_reason=run.terminal_reason.value if run.terminal_reason else None,
        duration_s=instance.video.duration_s,
    )


def map_tasks(function: Callable, tasks: Sequence[Any], jobs: int = 1,
              progress: bool = False, description: str = "") -> List[Any]:
    """按输入顺序返回结果；jobs > 1 时使用进程池"""
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = executor.map(function, tasks, chunksize=max(1, len(tasks) // (jobs * 4)))
            return list(tqdm(results, total=len(tasks), desc=description, disable=not progress))
    return [function(task) for task in tqdm(tasks, desc=description, disable=not progress)]


@dataclass
class BenchReport:
    """
    基准评测报告

    records 每个 (策略, 实例) 一条，按实例 id 与策略顺序排列；
    failures 为出错记录；summaries 为每个策略的宏平均指标与开销汇总。
    """
    header: Dict[str, Any] = field(default_factory=dict)
    records: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    summaries: List[Dict[str, Any]] = field(default_factory=list)

    def summary_for(self, strategy: str) -> Dict[str, Any]:
        for summary in self.summaries:
            if summary["strategy"] == strategy:
                return summary
        raise KeyError(strategy)

    def to_lines(self) -> List[str]:
        """报告头、逐条记录、失败与汇总，每行一个 JSON 对象"""
        lines = [{"record_type": "header", **self.header}]
        lines += [{"record_type": "instance", **record} for record in self.records]
        lines += [{"record_type": "failure", **failure} for failure in self.failures]
        lines.append({"record_type": "summary", "strategies": self.summaries})
        return [json.dumps(line, ensure_ascii=False, sort_keys=True) for line in lines]

    def write(self, path: str) -> None:
        _ensure_parent(path)
        with open(path, 'w', encoding='utf-8') as report_file:
            for line in self.to_lines():
                report_file.write(line + "\n")


def _summarize(strategy: StrategySpec, records: List[Dict[str, Any]]) -> Dict[str, Any]:
    per_instance = [
        [MetricReport(MetricKind(kind), values["precision"], values["recall"], values["f1"],
                      values["predicted_count"], values["reference_count"])
         for kind, values in record["metrics"].items()]
        for record in records
    ]
    efficiency = EfficiencyReport()
    for record in records:
        efficiency = efficiency.merge(EfficiencyReport(**record["efficiency"]))
    count = len(records)
    return {
        "strategy": strategy.name,
        "instances": count,
        "metrics": {kind: report.to_dict(percent=True) for kind, report in aggregate_by_kind(per_instance).items()},
        "efficiency": efficiency.to_dict(),
        "mean_iterations": sum(record["iterations"] for record in records) / count if count else 0.0,
        "mean_frames_processed": efficiency.frames_processed / count if count else 0.0,
    }


def run_benchmark(dataset: Sequence[HaystackInstance], strategies: Sequence[StrategySpec],
                  scorer_spec: ScorerSpec, metric_specs: Sequence[SimilaritySpec] = (SimilaritySpec(),),
                  seed: int = 0, overrides: Optional[Dict[str, Any]] = None,
                  queries: Optional[Dict[str, GroundedQuery]] = None, jobs: int = 1,
                  progress: bool = False, timing: bool = True,
                  embedding_dir: Optional[str] = None,
                  header: Optional[Dict[str, Any]] = None) -> BenchReport:
    """
    在数据集上评测多个策略

    所有策略使用相同的实例列表与实例种子；单个实例失败不中断评测。

    Args:
        dataset: 实例列表
        strategies: 策略列表
        scorer_spec: 打分器描述（每个任务各自构造实例）
        metric_specs: 评估指标
        seed: 全局种子
        overrides: tstar 检索配置覆盖项
        queries: instance_id → 落地查询，缺省使用实例自带查询
        jobs: 并行进程数
    """
    ordered = sorted(dataset, key=lambda instance: instance.instance_id)
    frozen_overrides = tuple(sorted((overrides or {}).items()))
    tasks = [
        _BenchTask(strategy, instance, (queries or {}).get(instance.instance_id, instance.query),
                   scorer_spec, tuple(metric_specs), frozen_overrides, seed, timing, embedding_dir)
        for instance in ordered
        for strategy in strategies
    ]
    results = map_tasks(_run_task, tasks, jobs, progress, "benchmark")

    report = BenchReport(header=dict(header or {}))
    for result in results:
        (report.failures if "error" in result else report.records).append(result)
    for failure in report.failures:
        logger.warning("实例 %s 的策略 %s 失败: %s", failure["instance_id"], failure["strategy"], failure["error"])
    for strategy in strategies:
        report.summaries.append(_summarize(
            strategy, [record for record in report.records if record["strategy"] == strategy.name]))
    return report


# ---------------------------------------------------------------------------
# 复杂度实验与参数扫描
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _ComplexityTrial:
    frame_count: int
    accuracy: float
    seed: int
    grid_side: int
    sigma_fraction: float
    target_sigma: float
    theta: float


def _run_complexity_trial(trial: _ComplexityTrial) -> Tuple[int, int]:
    rng = np.random.default_rng(trial.seed)
    needle = int(rng.integers(0, trial.frame_count))
    video = VideoSource(f"complexity-{trial.frame_count}", trial.frame_count, 1.0)
    query = GroundedQuery.from_labels("", [NEEDLE_LABEL], [COMPLEXITY_CUE_LABEL])
    cfg = SearchConfig.for_video(video, grid_side=trial.grid_side, budget=trial.frame_count,
                                 theta=trial.theta, seed=trial.seed)
    spec = ScorerSpec("oracle", 1.0, {
        "locality_sigma": trial.target_sigma,
        "label_sigmas": {COMPLEXITY_CUE_LABEL: trial.sigma_fraction * trial.frame_count},
        "heuristic_accuracy": trial.accuracy,
    })
    references = {NEEDLE_LABEL: [needle], COMPLEXITY_CUE_LABEL: [needle]}
    with create_scorer(spec, references, derive_seed(trial.seed, "scorer")) as scorer:
        outcome = run_search(video, query, scorer, cfg, timing=False)
    return outcome.iterations, outcome.efficiency.frames_processed


def complexity_experiment(lengths: Sequence[int], accuracies: Sequence[float], trials: int,
                          seed: int = 0, grid_side: int = 8, sigma_fraction: float = 1 / 1024,
                          target_sigma: float = 8.0, theta: float = 0.6, jobs: int = 1,
                          progress: bool = False) -> List[Dict[str, Any]]:
    """
    迭代次数随视频长度与打分器准确率的变化

    每个 (L, p) 运行 trials 次单目标检索：fps=1，预算为 L。
    目标只在针帧附近 target_sigma 帧的尺度内可见，检出区域不随 L 变化；
    与针帧同位的线索衰减尺度为 sigma_fraction·L，为各尺度的搜索提供方向。
    准确率 p 作用于每次网格打分：以 1-p 的概率返回对抗置换。
    p=1 时迭代数随 L 对数增长；p 很小时线索几乎总被置换，检索退化为线性扫描。

    Returns:
        每个 (L, p) 一行：L, p, mean_iterations, sd_iterations, mean_frames
    """
    if trials < 1:
        raise DataError("trials 必须 ≥ 1")
    cells = [(length, accuracy) for length in lengths for accuracy in accuracies]
    tasks = [
        _ComplexityTrial(length, accuracy, derive_seed(seed, f"{length}:{accuracy}:{trial}"),
                         grid_side, sigma_fraction, target_sigma, theta)
        for length, accuracy in cells
        for trial in range(trials)
    ]
    results = map_tasks(_run_complexity_trial, tasks, jobs, progress, "complexity")

    rows = []
    for position, (length, accuracy) in enumerate(cells):
        chunk = results[position * trials:(position + 1) * trials]
        iterations = np.array([item[0] for item in chunk], dtype=float)
        frames = np.array([item[1] for item in chunk], dtype=float)
        rows.append({
            "L": length,
            "p": accuracy,
            "mean_iterations": float(iterations.mean()),
            "sd_iterations": float(iterations.std(ddof=1)) if trials > 1 else 0.0,
            "mean_frames": float(frames.mean()),
        })
    return rows


def _sweep(parameter: str, values: Iterable[Any], dataset: Sequence[HaystackInstance],
           scorer_spec: ScorerSpec, seed: int, overrides: Optional[Dict[str, Any]],
           jobs: int) -> List[Dict[str, Any]]:
    rows = []
    for value in values:
        settings = dict(overrides or {})
        settings[parameter] = value
        report = run_benchmark(dataset, [StrategySpec("tstar")], scorer_spec, seed=seed,
                               overrides=settings, jobs=jobs, timing=False)
        summary = report.summaries[0]
        temporal = summary["metrics"].get(MetricKind.TEMPORAL.value, {})
        rows.append({
            parameter: value,
            "mean_iterations": summary["mean_iterations"],
            "mean_frames": summary["mean_frames_processed"],
            "temporal_f1": temporal.get("f1", 0.0),
            "failures": len(report.failures),
        })
    return rows


def threshold_sweep(dataset: Sequence[HaystackInstance], thetas: Sequence[float],
                    scorer_spec: ScorerSpec, seed: int = 0,
                    overrides: Optional[Dict[str, Any]] = None, jobs: int = 1) -> List[Dict[str, Any]]:
    """复核阈值 θ 与检索开销、时间 F1 的关系"""
    return _sweep("theta", thetas, dataset, scorer_spec, seed, overrides, jobs)


def grid_sweep(dataset: Sequence[HaystackInstance], grid_sides: Sequence[int],
               scorer_spec: ScorerSpec, seed: int = 0,
               overrides: Optional[Dict[str, Any]] = None, jobs: int = 1) -> List[Dict[str, Any]]:
    """网格边长 g 与检索开销、时间 F1 的关系"""
    return _sweep("grid_side", grid_sides, dataset, scorer_spec, seed, overrides, jobs)


def iteration_length_buckets(records: Sequence[Dict[str, Any]], n_buckets: int = 4) -> List[Dict[str, Any]]:
    """
    按视频时长等宽分桶统计迭代次数

    Args:
        records: 带 duration_s 与 iterations 的基准记录
        n_buckets: 桶数

    Returns:
        非空桶的时长范围与迭代次数 min/max/mean
    """
    if not records:
        return []
    durations = np.array([record["duration_s"] for record in records], dtype=float)
    iterations = np.array([record["iterations"] for record in records], dtype=float)
    edges = np.linspace(durations.min(), durations.max(), n_buckets + 1)
    # 最大值落入最后一个桶
    assignment = np.clip(np.searchsorted(edges, durations, side="right") - 1, 0, n_buckets - 1)
    rows = []
    for bucket in range(n_buckets):
        members = iterations[assignment == bucket]
        if members.size == 0:
            continue
        rows.append({
            "bucket": bucket,
            "min_duration_s": float(edges[bucket]),
            "max_duration_s": float(edges[bucket + 1]),
            "count": int(members.size),
            "min_iterations": int(members.min()),
            "max_iterations": int(members.max()),
            "mean_iterations": float(members.mean()),
        })
    return rows


# ---------------------------------------------------------------------------
# 输出
# ---------------------------------------------------------------------------

def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_rows_csv(rows: Sequence[Dict[str, Any]], path: str, columns: Sequence[str],
                   meta: Optional[Dict[str, Any]] = None) -> None:
    """写 CSV；给出 meta 时在旁边写 <path>.meta.json"""
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    if meta is not None:
        with open(path + ".meta.json", 'w', encoding='utf-8') as meta_file:
            json.dump(meta, meta_file, ensure_ascii=False, indent=2, sort_keys=True)


COMPLEXITY_COLUMNS = ("L", "p", "mean_iterations", "sd_iterations", "mean_frames")


def write_complexity_csv(rows: Sequence[Dict[str, Any]], path: str,
                         meta: Optional[Dict[str, Any]] = None) -> None:
    write_rows_csv(rows, path, COMPLEXITY_COLUMNS, meta)


def uniform_coverage_expectation(frame_count: int, fps: float, n: int, threshold_s: float) -> float:
    """单个参考帧落在某个均匀采样帧 τ 秒内的解析概率（参考帧在 [0, L) 上均匀）"""
    covered = np.zeros(frame_count, dtype=bool)
    radius = int(math.floor(threshold_s * fps))
    for index in uniform_indices(frame_count, n):
        covered[max(0, index - radius):min(frame_count, index + radius + 1)] = True
    return float(covered.mean())
