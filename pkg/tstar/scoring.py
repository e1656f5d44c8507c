#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
打分模块
可插拔打分器接口：为网格中每个单元格给出物体置信度，
包含预言机、分数文件、外部进程与 HTTP 四种实现，以及单元格置信度聚合
"""

import json
import logging
import shlex
import subprocess
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import requests

from .core import GroundedQuery, GridError, ScorerError, WeightedObject
from .sampling import GridLayout, build_grid

logger = logging.getLogger(__name__)

Detection = Tuple[str, float]
CellDetections = Dict[int, List[Detection]]
CellFrames = List[Tuple[int, int]]

SCORER_KINDS = ("oracle", "file", "external", "http")


@dataclass(frozen=True)
class ScorerSpec:
    """
    打分器描述

    params 按 kind 不同：
        oracle: locality_sigma（帧）、noise_sigma、heuristic_accuracy、label_sigmas（按标签覆盖 σ）
        file: path
        external: command
        http: url、timeout
    """
    kind: str
    cost_units_per_frame: float = 1.0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise ScorerError(f"未知打分器类型: {self.kind}")
        if self.cost_units_per_frame < 0:
            raise ScorerError("cost_units_per_frame 不能为负")
        if self.kind == "oracle":
            accuracy = float(self.params.get("heuristic_accuracy", 1.0))
            if not 0 < accuracy <= 1:
                raise ScorerError("预言机 heuristic_accuracy 必须在 (0, 1] 内")

    @classmethod
    def parse(cls, text: str, cost_units_per_frame: Optional[float] = None) -> "ScorerSpec":
        """
        解析命令行形式的打分器描述

        支持 oracle[:sigma=60,noise=0,p=1,cost=1]、file:PATH、external:COMMAND、http:URL
        """
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        params: Dict[str, Any] = {}
        cost = 1.0
        if kind == "oracle":
            aliases = {"sigma": "locality_sigma", "noise": "noise_sigma", "p": "heuristic_accuracy"}
            for item in filter(None, (part.strip() for part in rest.split(","))):
                key, _, value = item.partition("=")
                if key == "cost":
                    cost = float(value)
                elif key in aliases:
                    params[aliases[key]] = float(value)
                else:
                    raise ScorerError(f"未知的预言机参数: {key}")
        elif kind == "file":
            params["path"] = rest
        elif kind == "external":
            params["command"] = rest
        elif kind == "http":
            params["url"] = rest
        if kind in ("file", "external", "http") and not rest:
            raise ScorerError(f"{kind} 打分器缺少参数")
        if cost_units_per_frame is not None:
            cost = cost_units_per_frame
        return cls(kind=kind, cost_units_per_frame=cost, params=params)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "cost_units_per_frame": self.cost_units_per_frame,
                "params": dict(self.params)}


class Scorer(ABC):
    """打分器抽象基类；单个实例只服务一个检索"""

    cost_units_per_frame: float = 1.0

    @abstractmethod
    def detect(self, cells: CellFrames, query: GroundedQuery,
               request_type: str = "grid") -> CellDetections:
        """对 (单元格, 帧号) 列表给出每个单元格的检测结果"""
        pass

    @abstractmethod
    def get_scorer_name(self) -> str:
        """获取打分器名称"""
        pass

    def close(self) -> None:
        """释放资源"""

    def __enter__(self) -> "Scorer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


# ---------------------------------------------------------------------------
# 网格打分与置信度聚合
# ---------------------------------------------------------------------------

def cell_confidence(detections: Sequence[Detection], query: GroundedQuery) -> float:
    """C = max(c_o · w_o)；空列表为 0，未知标签权重为 0"""
    best = 0.0
    for label, confidence in detections:
        best = max(best, confidence * query.weight_of(label))
    return best


def score_grid(scorer: Scorer, grid: GridLayout, query: GroundedQuery) -> CellDetections:
    """
    对网格打分

    Returns:
        每个已填充单元格恰好一个检测列表

    Raises:
        ScorerError: 打分器失败或返回结果不完整
    """
    cells = grid.filled()
    if not cells:
        raise GridError("网格没有已填充的单元格")
    return _checked_detect(scorer, cells, query, "grid")


def verify(scorer: Scorer, frame_index: int, query: GroundedQuery) -> float:
    """单帧以 1×1 网格全分辨率重新打分，返回其单元格置信度"""
    grid = build_grid([frame_index], 1)
    detections = _checked_detect(scorer, grid.filled(), query, "verify")
    return cell_confidence(detections[0], query)


def _checked_detect(scorer: Scorer, cells: CellFrames, query: GroundedQuery,
                    request_type: str) -> CellDetections:
    try:
        detections = scorer.detect(cells, query, request_type)
    except ScorerError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ScorerError(f"打分器 {scorer.get_scorer_name()} 失败: {e}") from e

    expected = {cell for cell, _ in cells}
    if set(detections) != expected:
        raise ScorerError(f"打分器 {scorer.get_scorer_name()} 返回的单元格与请求不一致")
    for cell, items in detections.items():
        for label, confidence in items:
            if not 0.0 <= confidence <= 1.0:
                raise ScorerError(f"单元格 {cell} 的置信度 {confidence} 超出 [0, 1]")
    return detections


# ---------------------------------------------------------------------------
# 预言机打分器
# ---------------------------------------------------------------------------

def rank_reverse(values: np.ndarray) -> np.ndarray:
    """对抗置换：真实置信度最高的单元格得到最低值，总质量不变"""
    order = np.argsort(-values, kind="stable")
    reversed_values = np.empty_like(values)
    reversed_values[order] = values[order][::-1]
    return reversed_values


class OracleScorer(Scorer):
    """
    合成预言机

    目标 o 在帧 f 的基础置信度为 exp(-d(f)/σ_o)，d 为到该目标最近参考帧的距离，
    σ_o 取 label_sigmas 中的值，缺省为 locality_sigma；
    再叠加高斯噪声并截断到 [0, 1]。每次多单元格调用以 1-p 的概率返回对抗置换。
    """

    def __init__(self, references: Mapping[str, Sequence[int]], locality_sigma: float = 60.0,
                 noise_sigma: float = 0.0, heuristic_accuracy: float = 1.0, seed: int = 0,
                 cost_units_per_frame: float = 1.0,
                 label_sigmas: Optional[Mapping[str, float]] = None):
        if not 0 < heuristic_accuracy <= 1:
            raise ScorerError("heuristic_accuracy 必须在 (0, 1] 内")
        self.label_sigmas = {label: float(sigma) for label, sigma in (label_sigmas or {}).items()}
        if any(sigma < 0 for sigma in self.label_sigmas.values()):
            raise ScorerError("label_sigmas 不能为负")
        self.references = {label: np.array(sorted(set(int(frame) for frame in frames)), dtype=np.int64)
                           for label, frames in references.items()}
        self.locality_sigma = float(locality_sigma)
        self.noise_sigma = float(noise_sigma)
        self.heuristic_accuracy = float(heuristic_accuracy)
        self.cost_units_per_frame = float(cost_units_per_frame)
        self._rng = np.random.default_rng(seed)

    def get_scorer_name(self) -> str:
        return "oracle"

    def base_confidence(self, label: str, frames: np.ndarray) -> np.ndarray:
        """无噪声衰减律"""
        refs = self.references.get(label)
        frames = np.asarray(frames, dtype=np.int64)
        if refs is None or refs.size == 0:
            return np.zeros(frames.size, dtype=float)
        position = np.searchsorted(refs, frames)
        left = refs[np.clip(position - 1, 0, refs.size - 1)]
        right = refs[np.clip(position, 0, refs.size - 1)]
        distance = np.minimum(np.abs(frames - left), np.abs(right - frames)).astype(float)
        sigma = self.label_sigmas.get(label, self.locality_sigma)
        if sigma == 0:
            return (distance == 0).astype(float)
        return np.exp(-distance / sigma)

    def detect(self, cells: CellFrames, query: GroundedQuery,
               request_type: str = "grid") -> CellDetections:
        frames = np.array([frame for _, frame in cells], dtype=np.int64)
        labels = query.all_labels
        matrix = np.vstack([self.base_confidence(label, frames) for label in labels])
        if self.noise_sigma > 0:
            matrix = np.clip(matrix + self._rng.normal(0.0, self.noise_sigma, matrix.shape), 0.0, 1.0)
        if len(cells) > 1 and self._rng.random() >= self.heuristic_accuracy:
            matrix = np.vstack([rank_reverse(row) for row in matrix])
        return {
            cell: [(label, float(matrix[row, column])) for row, label in enumerate(labels)]
            for column, (cell, _) in enumerate(cells)
        }


# ---------------------------------------------------------------------------
# 分数文件打分器
# ---------------------------------------------------------------------------

def load_scores_file(path: str) -> Dict[int, List[Detection]]:
    """
    读取分数文件：每行 frame_index<TAB>label<TAB>confidence

    Raises:
        ScorerError: 文件不存在或格式错误
    """
    table: Dict[int, List[Detection]] = {}
    try:
        with open(path, 'r', encoding='utf-8') as scores_file:
            for line_no, line in enumerate(scores_file, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ScorerError(f"{path}:{line_no}: 需要 3 个制表符分隔字段")
                try:
                    frame_index, confidence = int(parts[0]), float(parts[2])
                except ValueError as e:
                    raise ScorerError(f"{path}:{line_no}: {e}") from e
                table.setdefault(frame_index, []).append((parts[1], confidence))
    except FileNotFoundError as e:
        raise ScorerError(f"找不到分数文件 {path}") from e
    return table


class FileScorer(Scorer):
    """从分数文件原样读取检测结果；文件中缺席的帧没有检测"""

    def __init__(self, path: str, cost_units_per_frame: float = 1.0):
        self.path = path
        self.cost_units_per_frame = float(cost_units_per_frame)
        self._table = load_scores_file(path)

    def get_scorer_name(self) -> str:
        return f"file:{self.path}"

    def detect(self, cells: CellFrames, query: GroundedQuery,
               request_type: str = "grid") -> CellDetections:
        return {cell: list(self._table.get(frame, [])) for cell, frame in cells}


# ---------------------------------------------------------------------------
# 外部进程 / HTTP 打分器（换行分隔 JSON 协议）
# ---------------------------------------------------------------------------

def _objects_payload(objects: Sequence[WeightedObject]) -> List[Dict[str, Any]]:
    return [{"label": obj.label, "weight": obj.weight} for obj in objects]


def encode_request(request_type: str, cells: CellFrames, query: GroundedQuery) -> str:
    """编码一条请求（单行 JSON）"""
    payload = {
        "type": request_type,
        "cells": [{"cell": cell, "frame": frame} for cell, frame in cells],
        "targets": _objects_payload(query.targets),
        "cues": _objects_payload(query.cues),
        "question": query.question,
    }
    return json.dumps(payload, ensure_ascii=False)


def decode_request(line: str) -> Tuple[str, CellFrames, GroundedQuery]:
    """解码请求，供插件端与协议测试使用"""
    payload = json.loads(line)
    cells = [(int(item["cell"]), int(item["frame"])) for item in payload["cells"]]
    query = GroundedQuery(
        question=payload.get("question", ""),
        targets=tuple(WeightedObject(item["label"], float(item["weight"])) for item in payload["targets"]),
        cues=tuple(WeightedObject(item["label"], float(item["weight"])) for item in payload.get("cues", [])),
    )
    return payload["type"], cells, query


def encode_reply(detections: CellDetections) -> str:
    cells = [
        {"cell": cell, "detections": [{"label": label, "confidence": confidence}
                                      for label, confidence in items]}
        for cell, items in sorted(detections.items())
    ]
    return json.dumps({"cells": cells}, ensure_ascii=False)


def decode_reply(line: str) -> CellDetections:
    try:
        payload = json.loads(line)
        return {
            int(item["cell"]): [(str(det["label"]), float(det["confidence"]))
                                for det in item.get("detections", [])]
            for item in payload["cells"]
        }
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ScorerError(f"无法解析打分器回复: {e}") from e


class ExternalScorer(Scorer):
    """
    外部进程打分器

    父进程每行写一个请求，子进程按请求顺序每行回复一个结果。
    """

    def __init__(self, command: str, cost_units_per_frame: float = 1.0):
        self.command = command
        self.cost_units_per_frame = float(cost_units_per_frame)
        try:
            self._process = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as e:
            raise ScorerError(f"无法启动外部打分器 {command}: {e}") from e
        logger.debug("外部打分器已启动: %s (pid=%s)", command, self._process.pid)

    def get_scorer_name(self) -> str:
        return f"external:{self.command}"

    def detect(self, cells: CellFrames, query: GroundedQuery,
               request_type: str = "grid") -> CellDetections:
        process = self._process
        try:
            process.stdin.write(encode_request(request_type, cells, query) + "\n")
            process.stdin.flush()
            reply = process.stdout.readline()
        except (BrokenPipeError, OSError, ValueError) as e:
            raise ScorerError(f"外部打分器通信失败: {e}") from e
        if reply == "":
            raise ScorerError(f"外部打分器进程已退出 (code={process.poll()})")
        return decode_reply(reply)

    def close(self) -> None:
        process = self._process
        if process.poll() is not None:
            return
        try:
            process.stdin.close()
            process.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            process.kill()
            process.wait()


class HttpScorer(Scorer):
    """远程检测服务：POST 与外部进程协议相同的请求体"""

    def __init__(self, url: str, cost_units_per_frame: float = 1.0, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout
        self.cost_units_per_frame = float(cost_units_per_frame)
        self._session = requests.Session()

    def get_scorer_name(self) -> str:
        return f"http:{self.url}"

    def detect(self, cells: CellFrames, query: GroundedQuery,
               request_type: str = "grid") -> CellDetections:
        try:
            response = self._session.post(
                self.url,
                data=encode_request(request_type, cells, query).encode("utf-8"),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
            response.raise_for_status()
        except requests.RequestException as e:
            raise ScorerError(f"HTTP 打分器请求失败: {e}") from e
        return decode_reply(response.text)

    def close(self) -> None:
        self._session.close()


# ---------------------------------------------------------------------------
# 打分器工厂
# ---------------------------------------------------------------------------

ScorerBuilder = Callable[[ScorerSpec, Mapping[str, Sequence[int]], int], Scorer]


class ScorerFactory:
    """打分器工厂：按 kind 注册构造函数"""

    def __init__(self):
        self._builders: Dict[str, ScorerBuilder] = {}
        self._register_default_kinds()

    def _register_default_kinds(self):
        """注册默认打分器类型"""
        self.register_kind("oracle", lambda spec, references, seed: OracleScorer(
            references,
            locality_sigma=float(spec.params.get("locality_sigma", 60.0)),
            noise_sigma=float(spec.params.get("noise_sigma", 0.0)),
            heuristic_accuracy=float(spec.params.get("heuristic_accuracy", 1.0)),
            seed=seed,
            cost_units_per_frame=spec.cost_units_per_frame,
            label_sigmas=spec.params.get("label_sigmas"),
        ))
        self.register_kind("file", lambda spec, references, seed: FileScorer(
            spec.params["path"], spec.cost_units_per_frame))
        self.register_kind("external", lambda spec, references, seed: ExternalScorer(
            spec.params["command"], spec.cost_units_per_frame))
        self.register_kind("http", lambda spec, references, seed: HttpScorer(
            spec.params["url"], spec.cost_units_per_frame, float(spec.params.get("timeout", 30.0))))

    def register_kind(self, kind: str, builder: ScorerBuilder):
        """注册打分器类型"""
        self._builders[kind] = builder

    def get_available_kinds(self) -> List[str]:
        return list(self._builders)

    def create(self, spec: ScorerSpec, references: Optional[Mapping[str, Sequence[int]]] = None,
               seed: int = 0) -> Scorer:
        """
        构造打分器

        Args:
            spec: 打分器描述
            references: 预言机使用的 标签 → 参考帧号
            seed: 预言机噪声与对抗置换的随机种子
        """
        if spec.kind not in self._builders:
            raise ScorerError(f"未注册的打分器类型: {spec.kind}")
        return self._builders[spec.kind](spec, references or {}, seed)


_default_factory = ScorerFactory()


def create_scorer(spec: ScorerSpec, references: Optional[Mapping[str, Sequence[int]]] = None,
                  seed: int = 0) -> Scorer:
    return _default_factory.create(spec, references, seed)
