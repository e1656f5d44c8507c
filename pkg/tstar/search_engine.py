#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
时间检索引擎模块
预算约束下的迭代关键帧检索：采样 → 网格打分 → 复核 → 窗口传播 → 重建分布，
最后按得分取 TopK
"""

import csv
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    EfficiencyReport, GroundedQuery, IterationRecord, KeyframeSet, NumericalError,
    ScoreState, ScorerError, SearchConfig, SearchTrace, TerminalReason, VideoSource,
    derive_seed, validate_config,
)
from .distribution import apply_scores, propagate_window, rebuild_probability, rescore
from .sampling import build_grid, weighted_sample_without_replacement
from .scoring import Scorer, ScorerSpec, cell_confidence, create_scorer, score_grid, verify

logger = logging.getLogger(__name__)


class SearchAborted(ScorerError):
    """检索中途打分失败；携带已完成迭代的轨迹与开销"""

    def __init__(self, message: str, trace: SearchTrace, efficiency: EfficiencyReport):
        super().__init__(message)
        self.trace = trace
        self.efficiency = efficiency


@dataclass
class SearchOutcome:
    keyframes: KeyframeSet
    trace: SearchTrace
    efficiency: EfficiencyReport

    @property
    def iterations(self) -> int:
        return len(self.trace.iterations)

    def to_record(self, instance_id: str) -> Dict[str, Any]:
        """输出记录：与命令行 search 输出的每一行一致"""
        return {
            "instance_id": instance_id,
            "keyframes": self.keyframes.to_records(),
            "terminal_reason": self.trace.terminal_reason.value,
            "iterations": self.iterations,
            "frames_processed": self.efficiency.frames_processed,
            "wall_time_s": self.efficiency.wall_time_s,
        }


def run_search(video: VideoSource, query: GroundedQuery, scorer: Scorer, cfg: SearchConfig,
               record_probabilities: bool = False, timing: bool = True) -> SearchOutcome:
    """
    执行一次时间检索

    Args:
        video: 待检索视频
        query: 落地后的查询，目标集合即初始剩余目标 R
        scorer: 打分器（由本次检索独占）
        cfg: 检索配置
        record_probabilities: 是否在每轮记录采样所用的完整分布
        timing: 为 False 时 wall_time_s 固定为 0，便于逐字节比较输出

    Returns:
        SearchOutcome

    Raises:
        ConfigError: 配置不满足约束（在进入循环之前）
        SearchAborted: 打分器失败，附带部分轨迹
    """
    validate_config(cfg, video)
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    state = ScoreState.fresh(video.frame_count)
    trace = SearchTrace()
    efficiency = EfficiencyReport()
    remaining = list(query.target_labels)
    found: List[Tuple[int, float]] = []
    budget = cfg.budget
    cells_per_grid = cfg.grid_side ** 2

    while True:
        reason = _terminal_reason(remaining, state, budget, len(trace.iterations), cfg)
        if reason is not None:
            break
        iteration_no = len(trace.iterations) + 1
        snapshot = state.prob.copy() if record_probabilities else None

        n = min(cells_per_grid, budget, state.unvisited_count())
        sampled = weighted_sample_without_replacement(state.prob * state.unvisited, n, rng)
        if not sampled:
            raise NumericalError("未访问帧上的采样质量为 0")
        grid = build_grid(sampled, cfg.grid_side)
        budget -= len(sampled)

        try:
            detections = score_grid(scorer, grid, query)
        except ScorerError as e:
            raise SearchAborted(f"第 {iteration_no} 轮打分失败: {e}", trace, efficiency) from e
        efficiency.frames_processed += len(sampled)
        efficiency.scorer_calls += 1

        cells = grid.filled()
        frames = [frame for _, frame in cells]
        confidences = [cell_confidence(detections[cell], query) for cell, _ in cells]
        detected = [_detected_labels(detections[cell], query, cfg.theta) for cell, _ in cells]
        apply_scores(state, zip(frames, confidences))

        budget -= _verify_candidates(scorer, query, cfg, state, frames, confidences, detected,
                                     remaining, found, efficiency, trace, video.fps, budget)

        for frame in sorted(frames, key=lambda f: (-state.scores[f], f)):
            propagate_window(state, frame, cfg.window)
        rebuild_probability(state, cfg.prob_floor)

        trace.iterations.append(IterationRecord(
            iteration_no=iteration_no,
            sampled_indices=frames,
            cell_confidences=confidences,
            detected_labels_per_cell=detected,
            remaining_targets=list(remaining),
            budget_remaining=budget,
            prob_snapshot=snapshot,
        ))
        logger.debug("第 %d 轮: 采样 %d 帧, 最高置信度 %.3f, 剩余目标 %s, 剩余预算 %d",
                     iteration_no, len(frames), max(confidences), remaining, budget)

    trace.terminal_reason = reason
    trace.final_prob = state.prob.copy()
    efficiency.cost_units = scorer.cost_units_per_frame * efficiency.frames_processed
    efficiency.wall_time_s = time.perf_counter() - started if timing else 0.0
    logger.info("检索结束: %s, %d 轮, %d 帧", reason.value, len(trace.iterations),
                efficiency.frames_processed)
    return SearchOutcome(select_topk(state, cfg.k, video.fps, forced=found), trace, efficiency)


def _terminal_reason(remaining: List[str], state: ScoreState, budget: int, iterations: int,
                     cfg: SearchConfig) -> Optional[TerminalReason]:
    """按固定顺序检查终止条件"""
    if not remaining:
        return TerminalReason.ALL_TARGETS_FOUND
    if state.unvisited_count() == 0:
        return TerminalReason.ALL_FRAMES_VISITED
    if budget <= 0:
        return TerminalReason.BUDGET_EXHAUSTED
    if iterations >= cfg.max_iterations:
        return TerminalReason.MAX_ITERATIONS
    return None


def _detected_labels(detections: Sequence[Tuple[str, float]], query: GroundedQuery,
                     theta: float) -> List[str]:
    """单元格中置信度不低于 θ 的查询标签"""
    known = set(query.all_labels)
    return sorted({label for label, confidence in detections
                   if confidence >= theta and label in known})


def _verify_candidates(scorer: Scorer, query: GroundedQuery, cfg: SearchConfig,
                       state: ScoreState, frames: List[int], confidences: List[float],
                       detected: List[List[str]], remaining: List[str],
                       found: List[Tuple[int, float]], efficiency: EfficiencyReport,
                       trace: SearchTrace, fps: float, allowance: int) -> int:
    """
    对检出剩余目标的单元格逐一复核；同一目标由置信度最高者认领

    每次复核从预算中扣 1 帧，预算用尽后其余候选不再复核。

    Returns:
        本轮复核消耗的帧数
    """
    used = 0
    candidates = sorted(
        ((confidence, frame, labels) for frame, confidence, labels in zip(frames, confidences, detected)
         if set(labels) & set(remaining)),
        key=lambda item: (-item[0], item[1]),
    )
    for _, frame, labels in candidates:
        pending = [label for label in labels if label in remaining]
        if not pending:
            continue
        if used >= allowance:
            logger.debug("预算用尽，跳过帧 %d 的复核", frame)
            break
        try:
            confirmed = verify(scorer, frame, query)
        except ScorerError as e:
            raise SearchAborted(f"帧 {frame} 复核失败: {e}", trace, efficiency) from e
        efficiency.verify_calls += 1
        efficiency.scorer_calls += 1
        efficiency.frames_processed += 1
        used += 1
        rescore(state, frame, confirmed)
        if confirmed > cfg.theta:
            for label in pending:
                remaining.remove(label)
            found.append((frame, confirmed))
            logger.info("在帧 %d (%.2fs) 找到目标 %s, 置信度 %.3f", frame, frame / fps, pending, confirmed)
    return used


def select_topk(state: ScoreState, k: int, fps: float,
                forced: Sequence[Tuple[int, float]] = ()) -> KeyframeSet:
    """
    取得分最高的 K 帧

    复核通过的帧优先入选；正得分帧不足 K 个时，缺少的 m 个名额
    均匀铺满整段视频：在 floor(j·L/m) 附近取最近的未访问帧补齐。
    """
    frame_count = state.frame_count
    chosen: List[int] = []
    for frame, _ in forced:
        if frame not in chosen:
            chosen.append(int(frame))
    positive = np.flatnonzero(state.scores > 0)
    for frame in sorted(positive.tolist(), key=lambda f: (-state.scores[f], f)):
        if len(chosen) >= k:
            break
        if frame not in chosen:
            chosen.append(frame)
    chosen = chosen[:k]

    positions = np.arange(frame_count)
    missing = k - len(chosen)
    for j in range(missing):
        taken = np.zeros(frame_count, dtype=bool)
        taken[chosen] = True
        mask = state.unvisited.astype(bool) & ~taken
        if not mask.any():
            mask = ~taken
        if not mask.any():
            break
        target = (j * frame_count) // missing
        distance = np.where(mask, np.abs(positions - target), np.inf)
        chosen.append(int(np.argmin(distance)))

    return KeyframeSet.build([(frame, float(state.scores[frame])) for frame in chosen], fps)


def write_trace_csv(trace: SearchTrace, path: str) -> None:
    """
    导出分布演化：每个 (迭代, 帧号) 一行

    最终重建的分布记为最后一轮迭代号 + 1。
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as trace_file:
        writer = csv.writer(trace_file)
        writer.writerow(["iteration", "frame_index", "prob"])
        snapshots = [(record.iteration_no, record.prob_snapshot) for record in trace.iterations
                     if record.prob_snapshot is not None]
        if trace.final_prob is not None:
            snapshots.append((len(trace.iterations) + 1, trace.final_prob))
        for iteration_no, prob in snapshots:
            for frame_index, value in enumerate(prob):
                writer.writerow([iteration_no, frame_index, repr(float(value))])


class TemporalSearchEngine:
    """
    时间检索引擎 - 从配置字典装配检索参数与打分器

    特性：
    - 配置缺省值随视频推导（预算、窗口、ε、最大迭代数）
    - 打分器按实例构造，预言机使用实例的参考帧
    - 每个实例的随机流由全局种子与实例 id 派生
    """

    def __init__(self, config: Optional[Dict] = None):
        """
        初始化检索引擎

        Args:
            config: 配置参数，包含 search 与 scorer 两段
        """
        self.config = config or self._get_default_config()

    def _get_default_config(self) -> Dict:
        """获取默认配置"""
        return {
            "search": {
                "grid_side": 8,
                "theta": 0.6,
                "k": 8,
                "seed": 0,
            },
            "scorer": {
                "kind": "oracle",
                "cost_units_per_frame": 1.0,
                "params": {"locality_sigma": 60.0, "noise_sigma": 0.0, "heuristic_accuracy": 1.0},
            },
        }

    def build_config(self, video: VideoSource, **overrides: Any) -> SearchConfig:
        """合并配置文件与显式覆盖项"""
        section = dict(self.config.get("search", {}))
        section.update({key: value for key, value in overrides.items() if value is not None})
        return SearchConfig.from_dict(section, video)

    def scorer_spec(self) -> ScorerSpec:
        section = self.config.get("scorer", {})
        return ScorerSpec(
            kind=section.get("kind", "oracle"),
            cost_units_per_frame=float(section.get("cost_units_per_frame", 1.0)),
            params=dict(section.get("params", {})),
        )

    def search(self, video: VideoSource, query: GroundedQuery, cfg: SearchConfig,
               spec: Optional[ScorerSpec] = None,
               references: Optional[Dict[str, Sequence[int]]] = None,
               record_probabilities: bool = False, timing: bool = True) -> SearchOutcome:
        """
        构造打分器并执行检索，结束后关闭打分器

        Args:
            video: 待检索视频
            query: 查询
            cfg: 检索配置（种子即预言机种子）
            spec: 打分器描述，缺省取配置文件中的 scorer 段
            references: 预言机参考帧
        """
        scorer = create_scorer(spec or self.scorer_spec(), references, derive_seed(cfg.seed, "scorer"))
        with scorer:
            return run_search(video, query, scorer, cfg, record_probabilities, timing)
