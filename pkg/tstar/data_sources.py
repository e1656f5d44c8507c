#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据源管理模块
检索实例数据集的读写与校验、问题落地来源、帧图像与帧嵌入存储
"""

import json
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import (
    CUE_WEIGHT, TARGET_WEIGHT, DataError, DimensionError, GroundedQuery, ParseError,
    TStarError, VideoSource, WeightedObject,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")
FRAME_NAME_FORMAT = "{index:08d}.pgm"


@dataclass(frozen=True)
class HaystackInstance:
    """
    检索实例：视频、落地后的查询、参考关键帧与答案

    reference_keyframes 为 (时间戳秒, 帧号) 列表，帧号可为空；
    cue_frames 记录线索物体出现的帧，仅合成数据使用。
    """
    instance_id: str
    video: VideoSource
    query: GroundedQuery
    reference_keyframes: Tuple[Tuple[float, Optional[int]], ...]
    answer: str = ""
    split: str = "test"
    cue_frames: Mapping[str, Tuple[int, ...]] = field(default_factory=dict)

    @property
    def reference_timestamps(self) -> List[float]:
        return [timestamp for timestamp, _ in self.reference_keyframes]

    @property
    def reference_indices(self) -> List[int]:
        """参考帧号；缺省时由时间戳换算"""
        last = self.video.frame_count - 1
        return [index if index is not None else min(int(round(timestamp * self.video.fps)), last)
                for timestamp, index in self.reference_keyframes]

    @property
    def reference_points(self) -> List[Tuple[float, int]]:
        return list(zip(self.reference_timestamps, self.reference_indices))

    def oracle_references(self) -> Dict[str, List[int]]:
        """预言机打分器使用的 标签 → 参考帧"""
        references = {label: self.reference_indices for label in self.query.target_labels}
        for cue in self.query.cues:
            references[cue.label] = list(self.cue_frames.get(cue.label, ()))
        return references

    def to_record(self) -> Dict[str, Any]:
        """序列化为一行数据集记录"""
        record: Dict[str, Any] = {
            "instance_id": self.instance_id,
            "video_id": self.video.video_id,
            "frame_count": self.video.frame_count,
            "fps": self.video.fps,
            "question": self.query.question,
            "targets": [{"label": obj.label, "weight": obj.weight} for obj in self.query.targets],
            "cues": [{"label": obj.label, "weight": obj.weight} for obj in self.query.cues],
            "keyframe_timestamps_s": self.reference_timestamps,
            "answer": self.answer,
            "split": self.split,
        }
        if all(index is not None for _, index in self.reference_keyframes):
            record["keyframe_frame_indices"] = [index for _, index in self.reference_keyframes]
        if self.cue_frames:
            record["cue_frame_indices"] = {label: list(frames) for label, frames in self.cue_frames.items()}
        if self.video.frame_store:
            record["frame_store"] = self.video.frame_store
        return record


# ---------------------------------------------------------------------------
# 数据集读写与校验
# ---------------------------------------------------------------------------

def validate_instance_record(record: Dict[str, Any]) -> List[str]:
    """验证实例记录格式，返回错误列表"""
    errors = []
    for name in ("video_id", "frame_count", "fps", "question", "keyframe_timestamps_s"):
        if name not in record:
            errors.append(f"缺少字段 '{name}'")
    if not record.get("targets"):
        errors.append("targets required")
    if errors:
        return errors

    frame_count, fps = record["frame_count"], record["fps"]
    if not isinstance(frame_count, int) or isinstance(frame_count, bool) or frame_count < 1:
        errors.append("frame_count 应为正整数")
    if not isinstance(fps, (int, float)) or not fps > 0:
        errors.append("fps 应为正数")
    if errors:
        return errors

    for group in ("targets", "cues"):
        for i, item in enumerate(record.get(group, [])):
            label = item if isinstance(item, str) else item.get("label") if isinstance(item, dict) else None
            if not label:
                errors.append(f"{group}[{i}]: 缺少 label")
            elif isinstance(item, dict) and "weight" in item:
                weight = item["weight"]
                if not isinstance(weight, (int, float)) or not 0 < weight <= 1:
                    errors.append(f"{group}[{i}]: weight 应在 (0, 1] 内")

    timestamps = record["keyframe_timestamps_s"]
    duration = frame_count / fps
    if not isinstance(timestamps, list) or not timestamps:
        errors.append("keyframe_timestamps_s 至少包含一个时间戳")
    else:
        for timestamp in timestamps:
            if not isinstance(timestamp, (int, float)) or not 0 <= timestamp <= duration:
                errors.append(f"时间戳 {timestamp} 超出视频时长 [0, {duration}]")

    indices = record.get("keyframe_frame_indices")
    if indices is not None:
        if not isinstance(indices, list) or len(indices) != len(timestamps or []):
            errors.append("keyframe_frame_indices 与 keyframe_timestamps_s 长度不一致")
        elif any(not isinstance(index, int) or not 0 <= index < frame_count for index in indices):
            errors.append("keyframe_frame_indices 超出帧号范围")

    if record.get("split", "test") not in SPLITS:
        errors.append(f"split 应为 {SPLITS} 之一")
    return errors


def _parse_objects(items: Sequence[Any], default_weight: float) -> Tuple[WeightedObject, ...]:
    objects = []
    for item in items:
        if isinstance(item, str):
            objects.append(WeightedObject(item, default_weight))
        else:
            objects.append(WeightedObject(item["label"], float(item.get("weight", default_weight))))
    return tuple(objects)


def parse_instance_record(record: Dict[str, Any], record_no: int) -> HaystackInstance:
    """
    解析一条实例记录

    Raises:
        ParseError: 记录违反格式或不变量
    """
    errors = validate_instance_record(record)
    if errors:
        raise ParseError(record_no, "; ".join(errors))
    try:
        video = VideoSource(
            video_id=str(record["video_id"]),
            frame_count=int(record["frame_count"]),
            fps=float(record["fps"]),
            frame_store=record.get("frame_store"),
        )
        query = GroundedQuery(
            question=str(record["question"]),
            targets=_parse_objects(record["targets"], TARGET_WEIGHT),
            cues=_parse_objects(record.get("cues", []), CUE_WEIGHT),
        )
    except DataError as e:
        raise ParseError(record_no, str(e)) from e

    timestamps = [float(t) for t in record["keyframe_timestamps_s"]]
    indices = record.get("keyframe_frame_indices") or [None] * len(timestamps)
    cue_frames = {label: tuple(int(frame) for frame in frames)
                  for label, frames in record.get("cue_frame_indices", {}).items()}
    return HaystackInstance(
        instance_id=str(record.get("instance_id") or f"{video.video_id}-{record_no:06d}"),
        video=video,
        query=query,
        reference_keyframes=tuple(zip(timestamps, indices)),
        answer=str(record.get("answer", "")),
        split=record.get("split", "test"),
        cue_frames=cue_frames,
    )


def load_dataset(path: str) -> List[HaystackInstance]:
    """
    读取按行分隔的 JSON 数据集，记录号即行号

    Raises:
        ParseError: 任一记录无法解析
        OSError: 文件无法读取
    """
    instances = []
    seen = set()
    with open(path, 'r', encoding='utf-8') as dataset_file:
        for record_no, line in enumerate(dataset_file, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(record_no, f"JSON 格式错误: {e}") from e
            if not isinstance(record, dict):
                raise ParseError(record_no, "记录应为 JSON 对象")
            instance = parse_instance_record(record, record_no)
            if instance.instance_id in seen:
                raise ParseError(record_no, f"重复的 instance_id: {instance.instance_id}")
            seen.add(instance.instance_id)
            instances.append(instance)
    logger.info("从 %s 加载了 %d 个实例", path, len(instances))
    return instances


def save_dataset(instances: Sequence[HaystackInstance], path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as dataset_file:
        for instance in instances:
            dataset_file.write(json.dumps(instance.to_record(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# 问题落地来源
# ---------------------------------------------------------------------------

class GroundingSource(ABC):
    """问题落地来源抽象基类：把问题解析为目标物体与线索物体"""

    @abstractmethod
    def get_query(self, instance: HaystackInstance) -> Optional[GroundedQuery]:
        """获取实例的落地查询；未知实例返回 None"""
        pass

    @abstractmethod
    def get_source_name(self) -> str:
        """获取来源名称"""
        pass


class DatasetGroundingSource(GroundingSource):
    """直接使用实例记录中的 targets/cues"""

    def get_query(self, instance: HaystackInstance) -> Optional[GroundedQuery]:
        return instance.query

    def get_source_name(self) -> str:
        return "dataset"


class JSONGroundingSource(GroundingSource):
    """JSON 文件：instance_id → {"targets": [...], "cues": [...]}"""

    def __init__(self, json_file: str):
        self.json_file = json_file
        self._mapping = self._load_mapping()

    def get_source_name(self) -> str:
        return f"json:{self.json_file}"

    def get_query(self, instance: HaystackInstance) -> Optional[GroundedQuery]:
        entry = self._mapping.get(instance.instance_id)
        if entry is None:
            return None
        return GroundedQuery(
            question=entry.get("question", instance.query.question),
            targets=_parse_objects(entry["targets"], TARGET_WEIGHT),
            cues=_parse_objects(entry.get("cues", []), CUE_WEIGHT),
        )

    def _load_mapping(self) -> Dict[str, Dict[str, Any]]:
        """加载落地文件"""
        try:
            with open(self.json_file, 'r', encoding='utf-8') as grounding_file:
                mapping = json.load(grounding_file)
        except (OSError, json.JSONDecodeError) as e:
            raise TStarError(f"无法加载落地文件 {self.json_file}: {e}") from e
        for instance_id, entry in mapping.items():
            if not entry.get("targets"):
                raise DataError(f"落地文件中的 {instance_id}: targets required")
        return mapping


class GroundingManager:
    """落地来源管理器：按注册顺序解析，后注册的来源优先"""

    def __init__(self):
        self.sources: List[GroundingSource] = []
        self._register_default_sources()

    def _register_default_sources(self):
        """注册默认来源"""
        self.register_source(DatasetGroundingSource())

    def register_source(self, source: GroundingSource):
        self.sources.insert(0, source)

    def load_custom_grounding(self, json_file: str):
        """加载自定义落地文件"""
        self.register_source(JSONGroundingSource(json_file))

    def get_available_sources(self) -> List[str]:
        return [source.get_source_name() for source in self.sources]

    def resolve(self, instance: HaystackInstance) -> GroundedQuery:
        for source in self.sources:
            query = source.get_query(instance)
            if query is not None:
                return query
        raise DataError(f"没有来源能落地实例 {instance.instance_id}")


# ---------------------------------------------------------------------------
# 帧图像与嵌入
# ---------------------------------------------------------------------------

class FrameStore:
    """8 位灰度 PGM(P5) 帧目录，文件名为零填充帧号"""

    def __init__(self, directory: str, cache_size: int = 256):
        self.directory = directory
        self.load = lru_cache(maxsize=cache_size)(self._load)

    def path_for(self, index: int) -> str:
        return os.path.join(self.directory, FRAME_NAME_FORMAT.format(index=index))

    def _load(self, index: int) -> np.ndarray:
        try:
            with Image.open(self.path_for(index)) as image:
                return np.asarray(image.convert("L"), dtype=np.uint8)
        except OSError as e:
            raise TStarError(f"无法读取帧 {index}: {e}") from e

    def save(self, index: int, pixels: np.ndarray) -> str:
        os.makedirs(self.directory, exist_ok=True)
        path = self.path_for(index)
        Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path, format="PPM")
        return path


def load_embeddings(path: str) -> np.ndarray:
    """
    读取帧嵌入矩阵，每帧一行

    .npy 为二进制矩阵；其他后缀为文本，首行 "rows dims"，之后每行一个空白分隔向量。

    Raises:
        DimensionError: 行列数与首行声明不符
    """
    if path.endswith(".npy"):
        matrix = np.load(path)
        if matrix.ndim != 2:
            raise DimensionError(f"{path}: 嵌入矩阵应为二维")
        return matrix.astype(np.float64)

    with open(path, 'r', encoding='utf-8') as embedding_file:
        header = embedding_file.readline().split()
        if len(header) != 2:
            raise DimensionError(f"{path}: 首行应为 'rows dims'")
        rows, dims = int(header[0]), int(header[1])
        matrix = np.loadtxt(embedding_file, dtype=np.float64, ndmin=2)
    if matrix.shape != (rows, dims):
        raise DimensionError(f"{path}: 声明 {rows}x{dims}，实际 {matrix.shape[0]}x{matrix.shape[1]}")
    return matrix


def save_embeddings(matrix: np.ndarray, path: str) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if path.endswith(".npy"):
        np.save(path, matrix)
        return
    with open(path, 'w', encoding='utf-8') as embedding_file:
        embedding_file.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        np.savetxt(embedding_file, matrix, fmt="%.8g")


def embeddings_for(instance: HaystackInstance, embedding_dir: Optional[str]) -> Optional[np.ndarray]:
    """按 video_id 在目录中查找嵌入文件（.npy 优先）"""
    if not embedding_dir:
        return None
    for suffix in (".npy", ".txt"):
        path = os.path.join(embedding_dir, instance.video.video_id + suffix)
        if os.path.exists(path):
            return load_embeddings(path)
    raise TStarError(f"找不到视频 {instance.video.video_id} 的嵌入文件")


def frames_for(instance: HaystackInstance) -> Optional[FrameStore]:
    if not instance.video.frame_store:
        return None
    return FrameStore(instance.video.frame_store)
