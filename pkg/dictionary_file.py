#!/usr/bin/env python3
"""
CDL1 字典文件格式

布局（小端）:
    "CDL1" | u32 dim | u32 M | u8 mode | 3 字节保留 0
    | dim·M 个 float64（D^F，按列存储）| dim·M 个 float64（D^B，mode=2 时省略）
    | u32 CRC32（覆盖前面全部字节）
mode: 0 = coupled, 1 = separate-pair, 2 = single
"""

import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from dictionary_learning import CoupledDictionary
from errors import DataError
from image_io import atomic_write_bytes
from sparse_coding import Dictionary

logger = logging.getLogger(__name__)

MAGIC = b"CDL1"
_HEADER = struct.Struct("<4sIIB3x")
_CRC = struct.Struct("<I")
MODE_CODES = {"coupled": 0, "separate": 1, "single": 2}
MODE_NAMES = {code: name for name, code in MODE_CODES.items()}

# 加载时列范数允许的偏差
NORM_TOLERANCE = 1e-6


def _column_major(atoms: np.ndarray) -> bytes:
    return np.ascontiguousarray(atoms.T, dtype="<f8").tobytes()


def encode_dictionary(dictionary: CoupledDictionary) -> bytes:
    """序列化为 CDL1 字节串"""
    mode = MODE_CODES[dictionary.mode]
    parts = [_HEADER.pack(MAGIC, dictionary.dim, dictionary.atoms_per_dictionary, mode),
             _column_major(dictionary.focused.atoms)]
    if dictionary.mode != "single":
        parts.append(_column_major(dictionary.blurred.atoms))
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _read_block(payload: bytes, offset: int, dim: int, n_atoms: int) -> np.ndarray:
    count = dim * n_atoms
    block = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    atoms = block.reshape(n_atoms, dim).T.astype(np.float64)
    if not np.all(np.isfinite(atoms)):
        raise DataError("字典文件含有非有限值")
    norms = np.linalg.norm(atoms, axis=0)
    if np.any((np.abs(norms - 1.0) > NORM_TOLERANCE) & (norms != 0.0)):
        raise DataError("字典文件中的原子不是单位范数")
    # 超出内存字典容差的列重新归一化，其余保持原值
    drift = (np.abs(norms - 1.0) > 1e-10) & (norms != 0.0)
    atoms[:, drift] /= norms[drift]
    return atoms


def decode_dictionary(payload: bytes) -> CoupledDictionary:
    """解析 CDL1 字节串，校验 CRC、数值与列范数"""
    if len(payload) < _HEADER.size + _CRC.size:
        raise DataError("字典文件过短")
    body, (crc,) = payload[:-_CRC.size], _CRC.unpack(payload[-_CRC.size:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DataError("字典文件 CRC 校验失败")

    magic, dim, n_atoms, mode = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise DataError(f"字典文件魔数错误: {magic!r}")
    if body[13:16] != b"\x00\x00\x00":
        raise DataError("字典文件保留字节不为 0")
    if mode not in MODE_NAMES:
        raise DataError(f"未知的字典模式字节: {mode}")
    if dim < 1 or n_atoms < 1:
        raise DataError("字典维度或原子数为 0")

    blocks = 1 if mode == 2 else 2
    expected = _HEADER.size + blocks * dim * n_atoms * 8
    if len(body) != expected:
        raise DataError(f"字典文件长度 {len(body)} 与头部描述 {expected} 不一致")

    focused = _read_block(body, _HEADER.size, dim, n_atoms)
    name = MODE_NAMES[mode]
    if name == "single":
        return CoupledDictionary(Dictionary(focused, label="focused"), None, mode=name)
    blurred = _read_block(body, _HEADER.size + dim * n_atoms * 8, dim, n_atoms)
    return CoupledDictionary(Dictionary(focused, label="focused"),
                             Dictionary(blurred, label="blurred"), mode=name)


def save_dictionary(path, dictionary: CoupledDictionary):
    """原子写入 CDL1 文件"""
    payload = encode_dictionary(dictionary)
    atomic_write_bytes(path, payload)
    logger.info(f"字典已保存: {path}（模式 {dictionary.mode}，维度 {dictionary.dim}，"
                f"每个子字典 {dictionary.atoms_per_dictionary} 个原子）")


def load_dictionary(path) -> CoupledDictionary:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise DataError(f"无法读取字典文件 {path}: {e}")
    dictionary = decode_dictionary(payload)
    logger.debug(f"读取字典 {path} 模式={dictionary.mode} 维度={dictionary.dim}")
    return dictionary
