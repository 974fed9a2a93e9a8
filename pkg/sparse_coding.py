#!/usr/bin/env python3
"""
稀疏编码模块 - 正交匹配追踪（OMP）

同一套批量内核同时服务单个块（omp_encode）和整幅图像的所有块（batch_encode）：
每轮为每个信号选出与残差相关性绝对值最大的原子（并列取最小下标），
再在当前支撑集上用法方程做最小二乘重投影。
"""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config import Config
from errors import DataError, NumericalError

logger = logging.getLogger(__name__)

LABELS = ("focused", "blurred", "coupled", "single")

# 每个批次处理的块数，串行与并行使用相同的切分
CHUNK_SIZE = 2048

# 残差与所有原子都（数值上）正交时提前停止
_MIN_CORRELATION = 1e-12


@dataclass(frozen=True)
class Dictionary:
    """列字典：atoms 形状为 (dim, M)，每列单位范数（退化的全零列除外）

    coupled 字典的前 M/2 列是 D^F，后 M/2 列是 D^B。
    """

    atoms: np.ndarray
    label: str = "single"
    history: tuple = ()

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64, order="F")
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise DataError(f"字典形状不合法: {atoms.shape}")
        if self.label not in LABELS:
            raise DataError(f"未知的字典类型: {self.label}")
        if not np.all(np.isfinite(atoms)):
            raise DataError("字典含有非有限值")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any((np.abs(norms - 1.0) > 1e-10) & (norms != 0.0)):
            raise DataError("字典原子必须为单位范数")
        if self.label == "coupled" and atoms.shape[1] % 2:
            raise DataError("耦合字典的原子数必须为偶数")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "history", tuple(float(v) for v in self.history))

    @property
    def dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def size(self) -> int:
        return self.atoms.shape[1]

    @property
    def split(self) -> int:
        """聚焦子空间系数的个数（α^F 的长度）"""
        return self.size // 2 if self.label == "coupled" else self.size

    @property
    def degenerate_atoms(self) -> int:
        return int(np.sum(np.linalg.norm(self.atoms, axis=0) == 0.0))


@dataclass(frozen=True)
class SparseCode:
    """单个块的稀疏表示"""

    length: int
    support: tuple
    values: tuple
    residual_norm_sq: float
    residual_history: tuple = field(default=(), compare=False)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.length)
        if self.support:
            dense[list(self.support)] = self.values
        return dense

    def l1(self, start: int = 0, stop: Optional[int] = None) -> float:
        """系数在下标区间 [start, stop) 上的 l1 范数"""
        stop = self.length if stop is None else stop
        return float(sum(abs(v) for i, v in zip(self.support, self.values) if start <= i < stop))


class CodeBatch(Sequence):
    """一批稀疏编码，内部保存稠密的支撑集 / 系数数组，按需生成 SparseCode"""

    def __init__(self, length: int, supports: np.ndarray, values: np.ndarray,
                 counts: np.ndarray, residual_sq: np.ndarray, history: np.ndarray):
        self.length = length
        self.supports = supports          # (N, T) 未用位置为 -1
        self.values = values              # (N, T)
        self.counts = counts              # (N,)
        self.residual_sq = residual_sq    # (N,)
        self.history = history            # (N, T+1) 未用位置为 nan

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        n = int(self.counts[index])
        hist = self.history[index, :n + 1]
        return SparseCode(
            length=self.length,
            support=tuple(int(s) for s in self.supports[index, :n]),
            values=tuple(float(v) for v in self.values[index, :n]),
            residual_norm_sq=float(self.residual_sq[index]),
            residual_history=tuple(float(h) for h in hist),
        )

    def l1_segments(self, split: int) -> tuple[np.ndarray, np.ndarray]:
        """每个编码在 [0, split) 与 [split, length) 上的 l1 范数"""
        used = self.supports >= 0
        magnitude = np.where(used, np.abs(self.values), 0.0)
        focused = np.where(self.supports < split, magnitude, 0.0).sum(axis=1)
        blurred = np.where(self.supports >= split, magnitude, 0.0).sum(axis=1)
        return focused, blurred

    def dense(self) -> np.ndarray:
        """(N, M) 稠密系数矩阵"""
        out = np.zeros((len(self), self.length))
        rows, cols = np.nonzero(self.supports >= 0)
        out[rows, self.supports[rows, cols]] = self.values[rows, cols]
        return out


def _omp_kernel(atoms: np.ndarray, gram: np.ndarray, signals: np.ndarray,
                eps: float, max_atoms: int):
    """批量 OMP 内核，signals 形状为 (n, dim)"""
    n = len(signals)
    supports = np.full((n, max_atoms), -1, dtype=np.int64)
    values = np.zeros((n, max_atoms))
    counts = np.zeros(n, dtype=np.int64)
    history = np.full((n, max_atoms + 1), np.nan)

    residual = signals.copy()
    residual_sq = np.einsum("ij,ij->i", residual, residual)
    history[:, 0] = residual_sq
    projections = signals @ atoms                       # (n, M)
    active = residual_sq > eps

    for step in range(max_atoms):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        correlation = np.abs(residual[idx] @ atoms)
        if step:
            np.put_along_axis(correlation, supports[idx, :step], -1.0, axis=1)
        best = np.argmax(correlation, axis=1)
        peak = correlation[np.arange(idx.size), best]

        weak = peak <= _MIN_CORRELATION
        if weak.any():
            active[idx[weak]] = False
            idx, best = idx[~weak], best[~weak]
            if idx.size == 0:
                break

        supports[idx, step] = best
        chosen = supports[idx, :step + 1]                # (a, k)
        sub_gram = gram[chosen[:, :, None], chosen[:, None, :]]
        rhs = np.take_along_axis(projections[idx], chosen, axis=1)
        try:
            coef = np.linalg.solve(sub_gram, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"支撑集上的法方程奇异: {e}") from e

        approx = np.einsum("dak,ak->ad", atoms[:, chosen], coef)
        residual[idx] = signals[idx] - approx
        residual_sq[idx] = np.einsum("ij,ij->i", residual[idx], residual[idx])
        values[idx, :step + 1] = coef
        counts[idx] = step + 1
        history[idx, step + 1] = residual_sq[idx]
        active[idx] = residual_sq[idx] > eps

    return supports, values, counts, residual_sq, history


def _check_params(dictionary: Dictionary, eps: float, max_atoms: int):
    if not eps > 0:
        raise DataError(f"容差 eps 必须为正数: {eps}")
    if not 1 <= max_atoms <= min(dictionary.dim, dictionary.size):
        raise DataError(f"max_atoms={max_atoms} 超出范围 [1, {min(dictionary.dim, dictionary.size)}]")


def _check_signals(signals: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    signals = np.asarray(signals, dtype=np.float64)
    if signals.ndim != 2 or signals.shape[1] != dictionary.dim:
        raise DataError(f"块维度 {signals.shape[-1]} 与字典维度 {dictionary.dim} 不一致")
    if not np.all(np.isfinite(signals)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(signals), axis=1))[0])
        raise DataError(f"第 {bad} 个块含有非有限值")
    norms = np.linalg.norm(signals, axis=1)
    if np.any(norms > 1.0 + 1e-9):
        bad = int(np.flatnonzero(norms > 1.0 + 1e-9)[0])
        raise DataError(f"第 {bad} 个块的范数 {norms[bad]:.6g} 大于 1，请先预处理")
    return signals


def omp_encode(patch: np.ndarray, dictionary: Dictionary, eps: float,
               max_atoms: int = Config.MAX_ATOMS) -> SparseCode:
    """对单个预处理后的块做 OMP，直到残差平方和 <= eps 或支撑集达到 max_atoms"""
    _check_params(dictionary, eps, max_atoms)
    signal = _check_signals(np.reshape(patch, (1, -1)), dictionary)
    atoms = dictionary.atoms
    result = _omp_kernel(atoms, atoms.T @ atoms, signal, eps, max_atoms)
    return CodeBatch(dictionary.size, *result)[0]


def encode_signals(signals: np.ndarray, dictionary: Dictionary, eps: float,
                   max_atoms: int = Config.MAX_ATOMS,
                   workers: Optional[int] = None) -> CodeBatch:
    """对 (N, dim) 的信号矩阵批量编码，全零行直接得到零编码"""
    _check_params(dictionary, eps, max_atoms)
    signals = _check_signals(signals, dictionary)
    workers = Config.THREADS if workers is None else max(1, int(workers))

    n = len(signals)
    supports = np.full((n, max_atoms), -1, dtype=np.int64)
    values = np.zeros((n, max_atoms))
    counts = np.zeros(n, dtype=np.int64)
    residual_sq = np.einsum("ij,ij->i", signals, signals)
    history = np.full((n, max_atoms + 1), np.nan)
    history[:, 0] = residual_sq

    live = np.flatnonzero(np.any(signals != 0.0, axis=1))
    atoms = dictionary.atoms
    gram = atoms.T @ atoms
    chunks = [live[i:i + CHUNK_SIZE] for i in range(0, live.size, CHUNK_SIZE)]

    def run(chunk):
        return _omp_kernel(atoms, gram, signals[chunk], eps, max_atoms)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]

    for chunk, (sup, val, cnt, res, hist) in zip(chunks, results):
        supports[chunk], values[chunk], counts[chunk] = sup, val, cnt
        residual_sq[chunk], history[chunk] = res, hist

    mean_support = counts.mean() if n else 0.0
    logger.debug(f"批量编码 {n} 个块（{live.size} 个非零），平均支撑 {mean_support:.2f}，线程数 {workers}")
    return CodeBatch(dictionary.size, supports, values, counts, residual_sq, history)


def batch_encode(grid, dictionary: Dictionary, eps: float,
                 max_atoms: int = Config.MAX_ATOMS,
                 workers: Optional[int] = None) -> CodeBatch:
    """对预处理后的 PatchGrid 编码，输出顺序与锚点顺序一致；常数块得到零编码"""
    if not grid.preprocessed:
        raise DataError("batch_encode 需要先调用 preprocess")
    signals = np.where(grid.degenerate[:, None], 0.0, grid.vectors)
    try:
        return encode_signals(signals, dictionary, eps, max_atoms, workers)
    except DataError as e:
        raise DataError(f"编码失败: {e}") from e


def mutual_coherence(dictionary: Dictionary) -> float:
    """不同原子之间内积绝对值的最大值"""
    gram = np.abs(dictionary.atoms.T @ dictionary.atoms)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max()) if dictionary.size > 1 else 0.0
