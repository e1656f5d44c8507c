#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
分布更新模块
写入网格置信度、时间窗口传播，以及用单调三次插值重建采样分布
"""

from typing import Iterable, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import NumericalError, ScoreState, StateError

# 去掉边界锚点后，少于该数目的控制点直接返回均匀分布
_MIN_DATA_POINTS = 2
# 控制点总数不少于该值时使用 PCHIP，否则线性插值
_MIN_PCHIP_POINTS = 4


def apply_scores(state: ScoreState, pairs: Iterable[Tuple[int, float]]) -> ScoreState:
    """
    写入打分结果并标记为已访问

    Args:
        state: 检索状态（原地修改）
        pairs: (帧号, 置信度) 列表

    Returns:
        修改后的 state

    Raises:
        StateError: 帧号越界、重复或已访问
    """
    pairs = [(int(frame), float(confidence)) for frame, confidence in pairs]
    frames = [frame for frame, _ in pairs]
    if len(set(frames)) != len(frames):
        raise StateError("同一批次中帧号重复")
    for frame, confidence in pairs:
        _check_index(state, frame)
        if state.unvisited[frame] == 0:
            raise StateError(f"帧 {frame} 已访问过")
        if not 0.0 <= confidence <= 1.0:
            raise StateError(f"帧 {frame} 的置信度 {confidence} 超出 [0, 1]")
    for frame, confidence in pairs:
        state.scores[frame] = confidence
        state.unvisited[frame] = 0
    return state


def rescore(state: ScoreState, frame: int, confidence: float) -> ScoreState:
    """以单帧复核置信度覆盖已访问帧的得分"""
    _check_index(state, frame)
    if state.unvisited[frame] != 0:
        raise StateError(f"帧 {frame} 尚未访问，不能复核")
    state.scores[frame] = min(max(float(confidence), 0.0), 1.0)
    return state


def propagate_window(state: ScoreState, frame_index: int, w: int) -> ScoreState:
    """S[f±δ] = max(S[f±δ], S[f]/(|δ|+1))，越界部分跳过"""
    _check_index(state, frame_index)
    if w < 0:
        raise StateError("窗口半宽不能为负")
    lo = max(0, frame_index - w)
    hi = min(state.frame_count - 1, frame_index + w)
    offsets = np.abs(np.arange(lo, hi + 1) - frame_index)
    spread = state.scores[frame_index] / (offsets + 1)
    state.scores[lo:hi + 1] = np.maximum(state.scores[lo:hi + 1], spread)
    return state


def rebuild_probability(state: ScoreState, prob_floor: float) -> ScoreState:
    """
    由得分重建采样分布

    控制点为已访问帧与得分为正的帧，外加首尾两个边界锚点；
    按控制点数选择均匀、线性或 PCHIP，随后截断为非负、与 ε 取最大并归一化。

    Raises:
        NumericalError: 所有帧都已访问且总质量为 0
    """
    frame_count = state.frame_count
    control = np.flatnonzero((state.unvisited == 0) | (state.scores > 0))

    if control.size < _MIN_DATA_POINTS:
        state.prob = np.full(frame_count, 1.0 / frame_count)
        return state

    points = np.union1d(control, [0, frame_count - 1])
    values = state.scores[points]
    positions = np.arange(frame_count)
    if points.size < _MIN_PCHIP_POINTS:
        curve = np.interp(positions, points, values)
    else:
        # 控制值近乎平坦时斜率的调和平均可能上溢，非有限处退回线性插值
        with np.errstate(all="ignore"):
            curve = PchipInterpolator(points, values)(positions)
        broken = ~np.isfinite(curve)
        if broken.any():
            curve[broken] = np.interp(positions[broken], points, values)

    curve = np.maximum(np.clip(curve, 0.0, None), prob_floor)
    unvisited = state.unvisited.astype(bool)
    if unvisited.any() and not (curve * unvisited).sum() > 0:
        # 未访问帧上没有质量时退化为其上的均匀分布
        state.prob = unvisited / unvisited.sum()
        return state
    total = curve.sum()
    if not total > 0:
        raise NumericalError("所有帧已访问且分布质量为 0")
    state.prob = curve / total
    return state


def mass_near(prob: np.ndarray, centers: Iterable[int], w: int) -> float:
    """参考帧 ±w 范围内的概率质量（区间重叠只计一次）"""
    mask = np.zeros(prob.size, dtype=bool)
    for center in centers:
        mask[max(0, center - w):min(prob.size, center + w + 1)] = True
    return float(prob[mask].sum())


def _check_index(state: ScoreState, frame: int) -> None:
    if not 0 <= frame < state.frame_count:
        raise StateError(f"帧号 {frame} 超出范围 [0, {state.frame_count})")
