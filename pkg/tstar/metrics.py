#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
评估指标模块
帧到帧相似度（时间、SSIM、嵌入余弦）、集合级 Precision/Recall/F1 与宏平均聚合
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from skimage.metrics import structural_similarity

from .core import DataError, DimensionError, EmptySetError, ZeroVectorError

T = TypeVar("T")

# (时间戳秒, 帧号)
FramePoint = Tuple[float, Optional[int]]


class MetricKind(str, Enum):
    TEMPORAL = "temporal"
    VISUAL_SSIM = "visual_ssim"
    EMBEDDING_COSINE = "embedding_cosine"


@dataclass(frozen=True)
class SSIMParams:
    window: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise DataError("SSIM 窗口必须是 ≥ 3 的奇数")


@dataclass(frozen=True)
class SimilaritySpec:
    kind: MetricKind = MetricKind.TEMPORAL
    temporal_threshold_s: float = 5.0
    ssim_params: SSIMParams = field(default_factory=SSIMParams)

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if not self.temporal_threshold_s > 0:
            raise DataError("temporal_threshold_s 必须 > 0")


@dataclass(frozen=True)
class MetricReport:
    """单个实例（或聚合后）的 P/R/F1，取值在 [0, 1]"""
    kind: MetricKind
    precision: float
    recall: float
    f1: float
    predicted_count: int
    reference_count: int

    def to_dict(self, percent: bool = False) -> Dict[str, Any]:
        """percent=True 时按百分比保留一位小数"""
        scale = (lambda value: round(value * 100, 1)) if percent else float
        return {
            "kind": self.kind.value,
            "precision": scale(self.precision),
            "recall": scale(self.recall),
            "f1": scale(self.f1),
            "predicted_count": self.predicted_count,
            "reference_count": self.reference_count,
        }


# ---------------------------------------------------------------------------
# 帧到帧相似度
# ---------------------------------------------------------------------------

def temporal_sim(t_pred: float, t_ref: float, threshold: float) -> int:
    """二值时间相似度，边界包含在内"""
    if not threshold > 0:
        raise DataError("时间阈值必须 > 0")
    return int(abs(t_pred - t_ref) <= threshold)


def ssim(img_a: np.ndarray, img_b: np.ndarray, params: SSIMParams = SSIMParams()) -> float:
    """
    高斯加权 SSIM 的均值

    Raises:
        DimensionError: 尺寸不一致或小于窗口
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise DimensionError(f"图像尺寸不一致: {a.shape} vs {b.shape}")
    if min(a.shape) < params.window:
        raise DimensionError(f"图像 {a.shape} 小于 SSIM 窗口 {params.window}")
    return float(structural_similarity(
        a, b,
        win_size=params.window,
        gaussian_weights=True,
        sigma=params.gaussian_sigma,
        use_sample_covariance=False,
        K1=params.k1,
        K2=params.k2,
        data_range=params.dynamic_range,
    ))


def embedding_sim(vec_a: Sequence[float], vec_b: Sequence[float]) -> float:
    """余弦相似度"""
    a = np.asarray(vec_a, dtype=np.float64).ravel()
    b = np.asarray(vec_b, dtype=np.float64).ravel()
    if a.size == 0 or a.size != b.size:
        raise DimensionError(f"向量长度不一致: {a.size} vs {b.size}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ZeroVectorError("余弦相似度不接受零向量")
    return float(np.clip(a.dot(b) / (norm_a * norm_b), -1.0, 1.0))


# ---------------------------------------------------------------------------
# 集合级指标
# ---------------------------------------------------------------------------

def _frame_to_set(items: Sequence[T], others: Sequence[T], sim: Callable[[T, T], float]) -> float:
    if not items or not others:
        raise EmptySetError("预测集合与参考集合都不能为空")
    return float(np.mean([max(sim(item, other) for other in others) for item in items]))


def set_precision(predicted: Sequence[T], reference: Sequence[T], sim: Callable[[T, T], float]) -> float:
    """每个预测帧到参考集合的最大相似度的均值"""
    return _frame_to_set(predicted, reference, sim)


def set_recall(predicted: Sequence[T], reference: Sequence[T], sim: Callable[[T, T], float]) -> float:
    """每个参考帧到预测集合的最大相似度的均值"""
    return _frame_to_set(reference, predicted, sim)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _report(kind: MetricKind, predicted: Sequence[T], reference: Sequence[T],
            sim: Callable[[T, T], float]) -> MetricReport:
    precision = set_precision(predicted, reference, sim)
    recall = set_recall(predicted, reference, sim)
    return MetricReport(kind, precision, recall, f1_score(precision, recall),
                        len(predicted), len(reference))


def evaluate_instance(predicted: Sequence[FramePoint], reference: Sequence[FramePoint],
                      specs: Iterable[SimilaritySpec],
                      frame_loader: Optional[Callable[[int], np.ndarray]] = None,
                      embeddings: Optional[np.ndarray] = None) -> List[MetricReport]:
    """
    评估单个实例

    Args:
        predicted: 预测关键帧 (时间戳, 帧号)
        reference: 参考关键帧 (时间戳, 帧号)；视觉与嵌入指标要求帧号已知
        specs: 需要计算的相似度
        frame_loader: 帧号 → 灰度图像，视觉指标必需
        embeddings: 每帧一行的嵌入矩阵，嵌入指标必需

    Returns:
        与 specs 顺序一致的 MetricReport 列表
    """
    reports = []
    for spec in specs:
        if spec.kind is MetricKind.TEMPORAL:
            threshold = spec.temporal_threshold_s
            reports.append(_report(spec.kind, [t for t, _ in predicted], [t for t, _ in reference],
                                   lambda a, b: temporal_sim(a, b, threshold)))
            continue

        pred_indices = _require_indices(predicted)
        ref_indices = _require_indices(reference)
        if spec.kind is MetricKind.VISUAL_SSIM:
            if frame_loader is None:
                raise DataError("视觉指标需要帧图像")
            params = spec.ssim_params
            reports.append(_report(spec.kind, pred_indices, ref_indices,
                                   lambda a, b: ssim(frame_loader(a), frame_loader(b), params)))
        else:
            if embeddings is None:
                raise DataError("嵌入指标需要嵌入文件")
            reports.append(_report(spec.kind, pred_indices, ref_indices,
                                   lambda a, b: embedding_sim(embeddings[a], embeddings[b])))
    return reports


def _require_indices(points: Sequence[FramePoint]) -> List[int]:
    indices = [index for _, index in points]
    if any(index is None for index in indices):
        raise DataError("该指标需要每个关键帧的帧号")
    return [int(index) for index in indices]


def aggregate(reports: Sequence[MetricReport]) -> Optional[MetricReport]:
    """
    宏平均：逐实例计算 P/R/F1 后按列取均值

    聚合后的列之间不满足调和平均关系；空输入返回 None。
    """
    if not reports:
        return None
    kinds = {report.kind for report in reports}
    if len(kinds) != 1:
        raise DataError(f"不能混合聚合不同指标: {sorted(kind.value for kind in kinds)}")
    return MetricReport(
        kind=reports[0].kind,
        precision=math.fsum(r.precision for r in reports) / len(reports),
        recall=math.fsum(r.recall for r in reports) / len(reports),
        f1=math.fsum(r.f1 for r in reports) / len(reports),
        predicted_count=sum(r.predicted_count for r in reports),
        reference_count=sum(r.reference_count for r in reports),
    )


def aggregate_by_kind(per_instance: Iterable[Sequence[MetricReport]]) -> Dict[str, MetricReport]:
    """按指标类型分组后聚合"""
    grouped: Dict[MetricKind, List[MetricReport]] = {}
    for reports in per_instance:
        for report in reports:
            grouped.setdefault(report.kind, []).append(report)
    return {kind.value: aggregate(reports) for kind, reports in grouped.items()}
