#!/usr/bin/env python3
"""
图像读写 - 8 位 PGM(P5) 与 PNG（灰度 / RGB），写入采用临时文件 + 原子替换
"""

import logging
import os
import tempfile
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import DataError
from imaging import check_image

logger = logging.getLogger(__name__)

_FORMATS = {".png": "PNG", ".pgm": "PPM"}


def load_image(path) -> np.ndarray:
    """读取图像并把 [0,255] 映射到 [0,1]；灰度返回 (H, W)，彩色返回 (H, W, 3)"""
    path = Path(path)
    try:
        with Image.open(path) as image:
            converted = image.convert("L" if image.mode in ("1", "L", "LA") else "RGB")
            data = np.asarray(converted, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise DataError(f"图像文件不存在: {path}")
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"无法读取图像 {path}: {e}")
    logger.debug(f"读取图像 {path} 形状={data.shape}")
    return data


def to_uint8(img: np.ndarray) -> np.ndarray:
    """裁剪到 [0,1] 后按四舍五入（半数向上）量化到 8 位"""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def atomic_write_bytes(path, payload: bytes):
    """先写同目录临时文件再 os.replace，避免留下半截文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def save_image(path, img: np.ndarray):
    """按扩展名保存为 PNG 或 PGM"""
    path = Path(path)
    fmt = _FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"不支持的输出格式: {path.suffix}（只支持 .png / .pgm）")

    arr = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"待保存图像含有非有限值: {path}")
    data = to_uint8(arr)
    if data.ndim == 3 and fmt == "PPM":
        raise DataError("PGM 只支持灰度图像")
    check_image(data / 255.0, str(path))

    buffer = BytesIO()
    Image.fromarray(data).save(buffer, format=fmt)
    atomic_write_bytes(path, buffer.getvalue())
    logger.debug(f"写入图像 {path}")
