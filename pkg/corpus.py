#!/usr/bin/env python3
"""
合成语料目录读取与参数范围解析

目录布局（由 synth 子命令写出）:
    <stem>_src<k>.png   第 k 幅多聚焦图像（k 从 0 开始）
    <stem>_ref.png      全清晰参考图像（可选）
    <stem>_truth.png    真值标签图，取值为 k·⌊255/(K−1)⌋（可选）
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from errors import DataError
from image_io import load_image, to_uint8

logger = logging.getLogger(__name__)

_SOURCE_PATTERN = re.compile(r"^(?P<stem>.+)_src(?P<index>\d+)\.(png|pgm)$")


@dataclass(frozen=True)
class CorpusItem:
    stem: str
    sources: tuple
    reference: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None


def label_step(k: int) -> int:
    """标签图中相邻源下标之间的灰度间隔"""
    return 255 // max(k - 1, 1)


def encode_labels(labels: np.ndarray, k: int) -> np.ndarray:
    return (np.asarray(labels, dtype=np.int64) * label_step(k)).astype(np.uint8)


def decode_labels(truth: np.ndarray, k: int) -> np.ndarray:
    levels = to_uint8(truth).astype(np.int64)
    labels = np.rint(levels / label_step(k)).astype(np.int64)
    return np.clip(labels, 0, k - 1)


def load_corpus(directory) -> list[CorpusItem]:
    """按 stem 分组读取语料目录，结果按 stem 排序"""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"语料目录不存在: {directory}")

    groups: dict[str, dict[int, Path]] = {}
    for path in directory.iterdir():
        match = _SOURCE_PATTERN.match(path.name)
        if match:
            groups.setdefault(match["stem"], {})[int(match["index"])] = path
    if not groups:
        raise DataError(f"目录 {directory} 中没有 <stem>_src<k>.png 形式的源图像")

    items = []
    for stem in sorted(groups):
        indexed = groups[stem]
        if sorted(indexed) != list(range(len(indexed))) or len(indexed) < 2:
            raise DataError(f"{stem} 的源图像编号必须是连续的 0..K-1 且 K >= 2")
        sources = tuple(load_image(indexed[k]) for k in range(len(indexed)))

        reference = labels = None
        ref_path = directory / f"{stem}_ref.png"
        if ref_path.exists():
            reference = load_image(ref_path)
        truth_path = directory / f"{stem}_truth.png"
        if truth_path.exists():
            labels = decode_labels(load_image(truth_path), len(sources))
        items.append(CorpusItem(stem, sources, reference, labels))

    logger.info(f"读取语料 {directory}: {len(items)} 组图像")
    return items


def parse_range(text: str) -> list[float]:
    """解析 `start:stop:step`（含 stop，允许半个步长的误差）；单个数值视为只含一个值"""
    parts = text.split(":")
    try:
        numbers = [float(p) for p in parts]
    except ValueError:
        raise DataError(f"无法解析参数范围: {text}")
    if len(numbers) == 1:
        return numbers
    if len(numbers) != 3:
        raise DataError(f"参数范围格式应为 start:stop:step: {text}")
    start, stop, step = numbers
    if not step > 0 or stop < start:
        raise DataError(f"参数范围不合法: {text}")
    count = int(np.floor((stop - start) / step + 0.5)) + 1
    values = [start + i * step for i in range(count)]
    return [round(v, 12) for v in values if v <= stop + step / 2]
