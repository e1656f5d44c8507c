#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
核心模块
各模块共用的领域类型、配置校验、异常体系与配置文件加载
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np


TARGET_WEIGHT = 1.0
CUE_WEIGHT = 0.5
MAX_SEED = 2 ** 64 - 1


# ---------------------------------------------------------------------------
# 异常体系
# ---------------------------------------------------------------------------

class TStarError(Exception):
    """所有检索相关异常的基类"""


class ConfigError(TStarError):
    """配置不满足约束"""

    def __init__(self, constraint: str, message: str):
        super().__init__(message)
        self.constraint = constraint


class DataError(TStarError, ValueError):
    """领域对象违反不变量"""


class GridError(TStarError):
    """网格布局错误"""


class ScorerError(TStarError):
    """打分器失败（外部进程退出、文件缺失等）"""


class StateError(TStarError):
    """ScoreState 状态更新非法"""


class NumericalError(TStarError):
    """概率分布无法归一化"""


class DimensionError(TStarError, ValueError):
    """输入维度不匹配"""


class ZeroVectorError(TStarError, ValueError):
    """余弦相似度遇到零向量"""


class EmptySetError(TStarError, ValueError):
    """集合指标的输入为空"""


class ParseError(TStarError):
    """数据集记录解析失败"""

    def __init__(self, record: int, reason: str):
        super().__init__(f"第 {record} 条记录: {reason}")
        self.record = record
        self.reason = reason


# ---------------------------------------------------------------------------
# 领域类型
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VideoSource:
    """
    视频（“干草堆”）

    frame_store 指向按零填充帧号命名的灰度帧图像目录，可为空。
    """
    video_id: str
    frame_count: int
    fps: float
    frame_store: Optional[str] = None

    def __post_init__(self):
        if self.frame_count < 1:
            raise DataError(f"视频 {self.video_id}: frame_count 必须 ≥ 1")
        if not self.fps > 0:
            raise DataError(f"视频 {self.video_id}: fps 必须 > 0")

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps


@dataclass(frozen=True)
class WeightedObject:
    """带权重的目标或线索物体"""
    label: str
    weight: float

    def __post_init__(self):
        if not self.label:
            raise DataError("物体标签不能为空")
        if not 0 < self.weight <= 1:
            raise DataError(f"物体 {self.label} 的权重必须在 (0, 1] 内")


@dataclass(frozen=True)
class GroundedQuery:
    """问题及其落地后的目标物体与线索物体"""
    question: str
    targets: Tuple[WeightedObject, ...]
    cues: Tuple[WeightedObject, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "cues", tuple(self.cues))
        if not self.targets:
            raise DataError("targets 不能为空")
        target_labels = [target.label for target in self.targets]
        if len(set(target_labels)) != len(target_labels):
            raise DataError("目标标签必须两两不同")
        overlap = set(target_labels) & {cue.label for cue in self.cues}
        if overlap:
            raise DataError(f"目标与线索标签重叠: {sorted(overlap)}")

    @classmethod
    def from_labels(cls, question: str, targets: Sequence[str],
                    cues: Sequence[str] = ()) -> "GroundedQuery":
        """按默认权重（目标 1.0、线索 0.5）构造查询"""
        return cls(
            question=question,
            targets=tuple(WeightedObject(label, TARGET_WEIGHT) for label in targets),
            cues=tuple(WeightedObject(label, CUE_WEIGHT) for label in cues),
        )

    @property
    def target_labels(self) -> List[str]:
        return [target.label for target in self.targets]

    @property
    def all_labels(self) -> List[str]:
        return self.target_labels + [cue.label for cue in self.cues]

    def weight_of(self, label: str) -> float:
        """标签权重；未知标签为 0"""
        for obj in self.targets + self.cues:
            if obj.label == label:
                return obj.weight
        return 0.0


@dataclass(frozen=True)
class SearchConfig:
    """
    检索配置

    grid_side: 网格边长 g（每轮 g² 帧）
    budget: 打分器可检查的总帧数 B
    theta: 验证阈值 θ
    window: 时间传播半宽 w（帧）
    k: 返回关键帧数 K
    prob_floor: 未访问帧在归一化前的最小质量 ε
    """
    grid_side: int = 8
    budget: int = 1024
    theta: float = 0.6
    window: int = 75
    k: int = 8
    seed: int = 0
    prob_floor: float = 0.0
    max_iterations: int = 1000

    @classmethod
    def for_video(cls, video: VideoSource, **overrides: Any) -> "SearchConfig":
        """
        按视频填充默认值后构造配置

        Args:
            video: 目标视频，决定 w、ε、B 与最大迭代数的默认值
            overrides: 显式覆盖项，值为 None 时视为未设置

        Returns:
            SearchConfig
        """
        values = {key: value for key, value in overrides.items() if value is not None}
        grid_side = int(values.get("grid_side", 8))
        frame_count = video.frame_count
        defaults = {
            "grid_side": grid_side,
            "budget": min(frame_count, 1024),
            "theta": 0.6,
            "window": default_window(video.fps),
            "k": 8,
            "seed": 0,
            "prob_floor": 0.1 / frame_count,
            "max_iterations": math.ceil(4 * frame_count / max(grid_side, 1) ** 2),
        }
        unknown = set(values) - set(defaults)
        if unknown:
            raise ConfigError("unknown_field", f"未知配置项: {sorted(unknown)}")
        defaults.update(values)
        return cls(
            grid_side=int(defaults["grid_side"]),
            budget=int(defaults["budget"]),
            theta=float(defaults["theta"]),
            window=int(defaults["window"]),
            k=int(defaults["k"]),
            seed=int(defaults["seed"]),
            prob_floor=float(defaults["prob_floor"]),
            max_iterations=int(defaults["max_iterations"]),
        )

    @classmethod
    def from_dict(cls, section: Dict[str, Any], video: VideoSource) -> "SearchConfig":
        """由 config.json 的 search 段构造；未出现的键使用按视频推导的默认值"""
        return cls.for_video(video, **dict(section or {}))

    def replace(self, **changes: Any) -> "SearchConfig":
        values = asdict(self)
        values.update(changes)
        return SearchConfig(**values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ScoreState:
    """
    检索过程中的信念状态

    unvisited 对应算法中的 N_v：1 表示未访问，0 表示已访问。
    """
    scores: np.ndarray
    unvisited: np.ndarray
    prob: np.ndarray

    @classmethod
    def fresh(cls, frame_count: int) -> "ScoreState":
        """全零得分、全部未访问、均匀分布"""
        return cls(
            scores=np.zeros(frame_count, dtype=float),
            unvisited=np.ones(frame_count, dtype=np.int8),
            prob=np.full(frame_count, 1.0 / frame_count),
        )

    @property
    def frame_count(self) -> int:
        return int(self.scores.size)

    def unvisited_count(self) -> int:
        return int(self.unvisited.sum())

    def copy(self) -> "ScoreState":
        return ScoreState(self.scores.copy(), self.unvisited.copy(), self.prob.copy())


@dataclass(frozen=True)
class KeyframeEntry:
    frame_index: int
    timestamp: float
    score: float


@dataclass(frozen=True)
class KeyframeSet:
    """检索输出：按得分降序、同分按帧号升序排列的关键帧"""
    entries: Tuple[KeyframeEntry, ...] = ()

    @classmethod
    def build(cls, items: Sequence[Tuple[int, float]], fps: float) -> "KeyframeSet":
        """由 (帧号, 得分) 构造并排序；时间戳总是由帧号推导"""
        seen = set()
        entries = []
        for frame_index, score in items:
            if frame_index in seen:
                continue
            seen.add(frame_index)
            entries.append(KeyframeEntry(int(frame_index), timestamp_of(int(frame_index), fps),
                                         float(score)))
        entries.sort(key=lambda entry: (-entry.score, entry.frame_index))
        return cls(tuple(entries))

    @property
    def indices(self) -> List[int]:
        return [entry.frame_index for entry in self.entries]

    @property
    def timestamps(self) -> List[float]:
        return [entry.timestamp for entry in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def to_records(self) -> List[Dict[str, Any]]:
        return [{"index": entry.frame_index, "timestamp": entry.timestamp, "score": entry.score}
                for entry in self.entries]


class TerminalReason(str, Enum):
    ALL_TARGETS_FOUND = "all_targets_found"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ALL_FRAMES_VISITED = "all_frames_visited"
    MAX_ITERATIONS = "max_iterations"


@dataclass
class IterationRecord:
    iteration_no: int
    sampled_indices: List[int]
    cell_confidences: List[float]
    detected_labels_per_cell: List[List[str]]
    remaining_targets: List[str]
    budget_remaining: int
    prob_snapshot: Optional[np.ndarray] = None


@dataclass
class SearchTrace:
    iterations: List[IterationRecord] = field(default_factory=list)
    terminal_reason: Optional[TerminalReason] = None
    final_prob: Optional[np.ndarray] = None


@dataclass
class EfficiencyReport:
    """检索开销：帧成本、调用次数、抽象算力单位与耗时"""
    frames_processed: int = 0
    scorer_calls: int = 0
    verify_calls: int = 0
    grounding_calls: int = 0
    cost_units: float = 0.0
    wall_time_s: float = 0.0

    def merge(self, other: "EfficiencyReport") -> "EfficiencyReport":
        return EfficiencyReport(
            frames_processed=self.frames_processed + other.frames_processed,
            scorer_calls=self.scorer_calls + other.scorer_calls,
            verify_calls=self.verify_calls + other.verify_calls,
            grounding_calls=self.grounding_calls + other.grounding_calls,
            cost_units=self.cost_units + other.cost_units,
            wall_time_s=self.wall_time_s + other.wall_time_s,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# 操作
# ---------------------------------------------------------------------------

def default_window(fps: float) -> int:
    """默认传播半宽：2.5 秒对应的帧数"""
    return int(math.ceil(2.5 * fps))


def timestamp_of(index: int, fps: float) -> float:
    """帧号对应的时间（秒）"""
    return index / fps


def validate_config(cfg: SearchConfig, video: VideoSource) -> SearchConfig:
    """
    校验检索配置

    Args:
        cfg: 检索配置
        video: 待检索视频

    Returns:
        原样返回 cfg

    Raises:
        ConfigError: constraint 属性给出被违反的约束
    """
    checks = [
        (cfg.grid_side >= 1, "grid_side_positive", "grid_side 必须为正整数"),
        (cfg.budget >= 1, "budget_positive", "budget 必须为正整数"),
        (cfg.k >= 1, "k_positive", "k 必须为正整数"),
        (0 < cfg.theta < 1, "theta_range", "theta 必须在 (0, 1) 内"),
        (cfg.window >= 0, "window_non_negative", "window 不能为负"),
        (cfg.prob_floor >= 0, "prob_floor_non_negative", "prob_floor 不能为负"),
        (cfg.max_iterations >= 1, "max_iterations_positive", "max_iterations 必须为正整数"),
        (0 <= cfg.seed <= MAX_SEED, "seed_range", "seed 必须是 64 位无符号整数"),
    ]
    for passed, constraint, message in checks:
        if not passed:
            raise ConfigError(constraint, message)

    cells = cfg.grid_side ** 2
    if cells > cfg.budget:
        raise ConfigError("grid_exceeds_budget",
                          f"网格帧数 g²={cells} 超出预算 budget={cfg.budget}")
    if cells > video.frame_count:
        raise ConfigError("grid_exceeds_frame_count",
                          f"网格帧数 g²={cells} 超出视频帧数 {video.frame_count}")
    if cfg.k > cfg.budget:
        raise ConfigError("k_exceeds_budget", f"k={cfg.k} 超出预算 budget={cfg.budget}")
    return cfg


def derive_seed(seed: int, instance_id: str) -> int:
    """由全局种子与实例 id 派生独立的 64 位种子"""
    digest = hashlib.sha256(instance_id.encode("utf-8")).digest()
    return (seed ^ int.from_bytes(digest[:8], "little")) & MAX_SEED


def load_config_from_file(config_file: str) -> Dict:
    """从文件加载配置；文件不存在时返回空配置"""
    try:
        with open(config_file, 'r', encoding='utf-8') as config_file_handle:
            return json.load(config_file_handle)
    except FileNotFoundError:
        return {}
    except json.JSONDecodeError as e:
        raise ConfigError("config_file_json", f"配置文件格式错误 {config_file}: {e}")
