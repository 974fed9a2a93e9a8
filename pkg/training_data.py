#!/usr/bin/env python3
"""
训练数据读取 - 根据矩形标注从训练图像中截取聚焦 / 模糊块

标注文件每行一条：`path x y w h label`，label 为 focused 或 blurred，
path 相对于标注文件所在目录；空行和以 # 开头的行忽略。
"""

import logging
import shlex
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from config import Config
from dictionary_learning import TrainingSet
from errors import DataError
from image_io import load_image
from imaging import extract_patches, preprocess, to_grayscale

logger = logging.getLogger(__name__)

ANNOTATION_LABELS = ("focused", "blurred")


@dataclass(frozen=True)
class Annotation:
    path: Path
    x: int
    y: int
    width: int
    height: int
    label: str


def parse_annotations(path) -> list[Annotation]:
    """解析一个标注文件"""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"无法读取标注文件 {path}: {e}")

    annotations = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = shlex.split(line)
        if len(fields) != 6:
            raise DataError(f"{path}:{lineno} 应为 6 个字段 `path x y w h label`")
        name, *numbers, label = fields
        try:
            x, y, w, h = (int(v) for v in numbers)
        except ValueError:
            raise DataError(f"{path}:{lineno} 坐标必须是整数")
        if label not in ANNOTATION_LABELS:
            raise DataError(f"{path}:{lineno} 未知标签 {label}，应为 focused / blurred")
        if x < 0 or y < 0 or w < 1 or h < 1:
            raise DataError(f"{path}:{lineno} 矩形不合法")
        annotations.append(Annotation(path.parent / name, x, y, w, h, label))
    return annotations


def _region_patches(annotation: Annotation, d: int, overlap: int, cache: dict) -> np.ndarray:
    image = cache.get(annotation.path)
    if image is None:
        image = to_grayscale(load_image(annotation.path))
        cache[annotation.path] = image
    height, width = image.shape
    if annotation.y + annotation.height > height or annotation.x + annotation.width > width:
        raise DataError(f"标注矩形超出图像 {annotation.path} 的范围 {width}x{height}")
    if min(annotation.width, annotation.height) < d:
        raise DataError(f"标注矩形 {annotation.width}x{annotation.height} 小于块边长 {d}")
    crop = image[annotation.y:annotation.y + annotation.height,
                 annotation.x:annotation.x + annotation.width]
    # 常数块保留为零向量，配对之后再剔除，保持两类块的位置对应
    return preprocess(extract_patches(crop, d, overlap)).vectors


def load_training_set(annotation_files: Iterable, d: int = Config.PATCH_SIDE,
                      overlap: int = Config.OVERLAP, pairs: int = Config.TRAIN_PAIRS,
                      seed: int = Config.SEED) -> TrainingSet:
    """收集所有标注区域的预处理块，随机抽取最多 pairs 对

    两类块数量相同时使用同一个排列，保持标注给出的空间对应关系。
    """
    annotations = []
    for path in annotation_files:
        annotations.extend(parse_annotations(path))
    if not annotations:
        raise DataError("没有任何训练标注")

    cache: dict = {}
    pools = {label: [] for label in ANNOTATION_LABELS}
    for annotation in annotations:
        pools[annotation.label].append(_region_patches(annotation, d, overlap, cache))

    missing = [label for label, blocks in pools.items() if not blocks]
    if missing:
        raise DataError(f"标注不成对：缺少 {'/'.join(missing)} 区域")
    focused = np.concatenate(pools["focused"])
    blurred = np.concatenate(pools["blurred"])
    rng = np.random.default_rng(seed)
    count = min(len(focused), len(blurred), pairs)
    if len(focused) == len(blurred):
        order = rng.permutation(len(focused))[:count]
        focused, blurred = focused[order], blurred[order]
    else:
        focused = focused[rng.permutation(len(focused))[:count]]
        blurred = blurred[rng.permutation(len(blurred))[:count]]

    live = np.any(focused != 0.0, axis=1) & np.any(blurred != 0.0, axis=1)
    focused, blurred = focused[live], blurred[live]
    if not live.any():
        raise DataError("标注区域内没有非常数块")

    logger.info(f"训练集: {len(annotations)} 个标注区域, {int(live.sum())} 对块"
                f"（聚焦候选 {sum(map(len, pools['focused']))}, "
                f"模糊候选 {sum(map(len, pools['blurred']))}）")
    return TrainingSet(focused, blurred)
