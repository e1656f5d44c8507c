#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
采样模块
帧号上的加权无放回采样，以及采样帧的确定性网格布局
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import GridError

# 相对最大权重低于该比例的权重视为 0，避免累积分布无法命中
_NEGLIGIBLE_WEIGHT = 1e-12


@dataclass(frozen=True)
class GridLayout:
    """
    g×g 网格布局

    cells 按行优先存放帧号，最后一轮预算不足时尾部为 None。
    """
    side: int
    cells: Tuple[Optional[int], ...]

    def filled(self) -> List[Tuple[int, int]]:
        """返回 (单元格序号, 帧号) 列表"""
        return [(cell, frame) for cell, frame in enumerate(self.cells) if frame is not None]

    def cell_at(self, row: int, col: int) -> Optional[int]:
        return self.cells[row * self.side + col]

    @property
    def frame_indices(self) -> List[int]:
        return [frame for _, frame in self.filled()]


def weighted_sample_without_replacement(weights: Sequence[float], n: int,
                                        rng: np.random.Generator) -> List[int]:
    """
    加权无放回采样

    语义等价于逐个抽取：按 weight_i / Σweights 抽一个下标，将其权重置零，重复。
    n 超过正权重个数时返回全部支撑集（随机顺序）。

    Args:
        weights: 非负权重向量
        n: 采样个数
        rng: 调用方持有的随机数生成器

    Returns:
        抽取顺序下的下标列表
    """
    weight_array = np.asarray(weights, dtype=float)
    if n <= 0 or weight_array.size == 0:
        return []
    top = weight_array.max()
    if not top > 0:
        return []
    weight_array = np.where(weight_array > top * _NEGLIGIBLE_WEIGHT, weight_array, 0.0)
    size = min(n, int(np.count_nonzero(weight_array)))
    probabilities = weight_array / weight_array.sum()
    picks = rng.choice(weight_array.size, size=size, replace=False, p=probabilities)
    return [int(index) for index in picks]


def build_grid(indices: Sequence[int], g: int) -> GridLayout:
    """
    构造网格：单元格 (i, j) 放第 i·g+j 小的帧号

    Raises:
        GridError: 帧数超过 g² 或帧号重复
    """
    capacity = g * g
    if len(indices) > capacity:
        raise GridError(f"{len(indices)} 帧超出 {g}x{g} 网格容量")
    ordered = sorted(int(index) for index in indices)
    if len(set(ordered)) != len(ordered):
        raise GridError("网格中的帧号必须两两不同")
    cells: List[Optional[int]] = list(ordered) + [None] * (capacity - len(ordered))
    return GridLayout(side=g, cells=tuple(cells))
