#!/usr/bin/env python3
"""
字典学习模块 - K-SVD 以及耦合字典（聚焦 D^F / 模糊 D^B）的联合学习与分别学习
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config import Config
from errors import DataError
from sparse_coding import Dictionary, encode_signals

logger = logging.getLogger(__name__)

# 与已有原子内积绝对值超过该阈值视为重复原子
DUPLICATE_THRESHOLD = 0.99

# 幂迭代参数
POWER_TOL = 1e-10
POWER_MAX_ITERS = 1000

MODES = ("coupled", "separate", "single")


@dataclass(frozen=True)
class TrainingSet:
    """成对的训练块：focused[i] 与 blurred[i] 对应，每行单位范数或全零"""

    focused: np.ndarray
    blurred: np.ndarray

    def __post_init__(self):
        focused = np.asarray(self.focused, dtype=np.float64)
        blurred = np.asarray(self.blurred, dtype=np.float64)
        if focused.ndim != 2 or blurred.ndim != 2:
            raise DataError("训练集必须是二维矩阵 (N, d²)")
        if focused.shape != blurred.shape:
            raise DataError(f"聚焦块 {focused.shape} 与模糊块 {blurred.shape} 不成对")
        for name, rows in (("focused", focused), ("blurred", blurred)):
            norms = np.linalg.norm(rows, axis=1)
            if np.any((np.abs(norms - 1.0) > 1e-9) & (norms != 0.0)):
                raise DataError(f"{name} 训练块必须为单位范数或全零")
        object.__setattr__(self, "focused", focused)
        object.__setattr__(self, "blurred", blurred)

    def __len__(self) -> int:
        return len(self.focused)

    @property
    def dim(self) -> int:
        return self.focused.shape[1]


@dataclass(frozen=True)
class CoupledDictionary:
    """D^F 与 D^B 两个子字典；coupled 模式下第 i 个原子成对相关

    mode 为 single 时只有聚焦字典（单字典基线）。
    """

    focused: Dictionary
    blurred: Optional[Dictionary] = None
    mode: str = "coupled"
    history: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"未知的字典模式: {self.mode}")
        if self.mode == "single":
            if self.blurred is not None:
                raise DataError("single 模式不应包含模糊字典")
        elif self.blurred is None:
            raise DataError(f"{self.mode} 模式需要模糊字典")
        elif (self.focused.dim, self.focused.size) != (self.blurred.dim, self.blurred.size):
            raise DataError("两个子字典的维度或原子数不一致")

    @property
    def dim(self) -> int:
        return self.focused.dim

    @property
    def atoms_per_dictionary(self) -> int:
        return self.focused.size

    def stacked(self) -> Dictionary:
        """水平拼接 [D^F, D^B]；single 模式直接返回聚焦字典"""
        if self.mode == "single":
            return Dictionary(self.focused.atoms, label="single")
        return Dictionary(np.hstack([self.focused.atoms, self.blurred.atoms]), label="coupled")


def _dominant_pair(residual: np.ndarray, start: np.ndarray):
    """幂迭代求残差矩阵的主奇异向量（原子）及对应系数，从当前原子出发"""
    cov = residual.T @ residual
    u = start / np.linalg.norm(start)
    for _ in range(POWER_MAX_ITERS):
        w = cov @ u
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return None, None
        w /= norm
        converged = np.linalg.norm(w - u) < POWER_TOL
        u = w
        if converged:
            break
    return u, residual @ u


def _worst_rows(residual: np.ndarray, live: np.ndarray) -> list:
    """按残差能量从大到小排列的训练向量下标"""
    energy = np.einsum("ij,ij->i", residual[live], residual[live])
    return [int(i) for i in live[np.argsort(-energy, kind="stable")]]


def _replace_atom(atoms, codes, residual, data, j, candidates, taken):
    """用当前逼近最差的训练向量替换第 j 个原子，并清零其系数"""
    users = np.flatnonzero(codes[:, j])
    if users.size:
        residual[users] += np.outer(codes[users, j], atoms[:, j])
        codes[users, j] = 0.0
    for w in candidates:
        if w not in taken:
            taken.add(w)
            atoms[:, j] = data[w] / np.linalg.norm(data[w])
            return
    logger.warning(f"没有可用于替换原子 {j} 的训练向量")


def _update_dictionary(atoms, codes, data, live):
    """逐个原子的 K-SVD 更新，原地修改 atoms / codes，返回残差矩阵"""
    residual = data - codes @ atoms.T
    unused = []
    for j in range(atoms.shape[1]):
        users = np.flatnonzero(codes[:, j])
        if users.size == 0:
            unused.append(j)
            continue
        restricted = residual[users] + np.outer(codes[users, j], atoms[:, j])
        atom, coeffs = _dominant_pair(restricted, atoms[:, j])
        if atom is None:
            codes[users, j] = 0.0
            residual[users] = restricted
            continue
        atoms[:, j] = atom
        codes[users, j] = coeffs
        residual[users] = restricted - np.outer(coeffs, atom)

    candidates = _worst_rows(residual, live)
    taken: set = set()
    for j in unused:
        _replace_atom(atoms, codes, residual, data, j, candidates, taken)

    duplicates = 0
    for j in range(1, atoms.shape[1]):
        overlap = np.abs(atoms[:, :j].T @ atoms[:, j])
        if overlap.max() > DUPLICATE_THRESHOLD:
            _replace_atom(atoms, codes, residual, data, j, candidates, taken)
            duplicates += 1
    if unused or duplicates:
        logger.debug(f"替换了 {len(unused)} 个未使用原子、{duplicates} 个重复原子")
    return residual


def ksvd_learn(data: np.ndarray, n_atoms: int = Config.ATOMS, cycles: int = Config.CYCLES,
               eps: float = Config.EPS, max_atoms: int = Config.MAX_ATOMS,
               seed: int = Config.SEED, workers: Optional[int] = None,
               label: str = "single") -> Dictionary:
    """K-SVD：稀疏编码与逐原子秩一更新交替进行，返回单位范数字典

    每个周期后的目标函数 Σ‖x − Dα‖² 记录在 Dictionary.history 中。
    编码阶段若某个样本上一周期的编码残差更小，则保留上一周期的编码。
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DataError(f"训练数据必须是 (N, dim) 矩阵: {data.shape}")
    n_samples = len(data)
    if n_samples < n_atoms:
        raise DataError(f"训练样本数 {n_samples} 少于原子数 {n_atoms}")
    if cycles < 1:
        raise DataError(f"更新周期数必须至少为 1: {cycles}")
    if not np.all(np.isfinite(data)):
        raise DataError("训练数据含有非有限值")

    norms = np.linalg.norm(data, axis=1)
    live = np.flatnonzero(norms > 0.0)
    if live.size < n_atoms:
        raise DataError(f"非零训练向量 {live.size} 个，少于原子数 {n_atoms}")

    # 初始化：用种子随机选取 n_atoms 个互不相同的训练向量
    _, first = np.unique(data[live], axis=0, return_index=True)
    distinct = np.sort(live[first])
    pool = distinct if distinct.size >= n_atoms else live
    rng = np.random.default_rng(seed)
    init = np.sort(rng.choice(pool, size=n_atoms, replace=False))
    atoms = np.array(data[init].T / norms[init], order="F")
    codes = np.zeros((n_samples, n_atoms))
    history = []

    logger.info(f"K-SVD 开始: {n_samples} 个样本, 维度 {data.shape[1]}, "
                f"{n_atoms} 个原子, {cycles} 个周期")
    for cycle in range(cycles):
        batch = encode_signals(data, Dictionary(atoms, label="single"), eps, max_atoms, workers)
        fresh = batch.dense()
        if cycle:
            previous = data - codes @ atoms.T
            previous_sq = np.einsum("ij,ij->i", previous, previous)
            keep = previous_sq < batch.residual_sq
            fresh[keep] = codes[keep]
        codes = fresh

        residual = _update_dictionary(atoms, codes, data, live)
        objective = float(np.einsum("ij,ij->", residual, residual))
        history.append(objective)
        logger.debug(f"K-SVD 周期 {cycle + 1}/{cycles} 目标函数 {objective:.6e} "
                     f"平均支撑 {np.count_nonzero(codes) / n_samples:.2f}")

    atoms /= np.linalg.norm(atoms, axis=0)
    logger.info(f"K-SVD 完成，最终目标函数 {history[-1]:.6e}")
    return Dictionary(atoms, label=label, history=tuple(history))


def _split_halves(atoms: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray, list]:
    halves = []
    degenerate = []
    for name, block in (("focused", atoms[:dim]), ("blurred", atoms[dim:])):
        block = np.array(block)
        norms = np.linalg.norm(block, axis=0)
        zero = norms < 1e-12
        block[:, ~zero] /= norms[~zero]
        block[:, zero] = 0.0
        if zero.all():
            degenerate.append(name)
        elif zero.any():
            logger.warning(f"{name} 子字典中有 {int(zero.sum())} 个全零原子")
        halves.append(block)
    return halves[0], halves[1], degenerate


def coupled_learn(ts: TrainingSet, n_atoms: int = Config.ATOMS, cycles: int = Config.CYCLES,
                  eps: float = Config.EPS, max_atoms: int = Config.MAX_ATOMS,
                  seed: int = Config.SEED, workers: Optional[int] = None) -> CoupledDictionary:
    """耦合字典学习：把每对块上下堆叠后做一次 K-SVD，两半共享同一个稀疏编码

    学到的 2d² 维原子拆成上半（聚焦）和下半（模糊），两半分别归一化。
    """
    if not isinstance(ts, TrainingSet):
        raise DataError("coupled_learn 需要 TrainingSet")
    stacked = np.hstack([ts.focused, ts.blurred])
    norms = np.linalg.norm(stacked, axis=1)
    nonzero = norms > 0.0
    stacked[nonzero] /= norms[nonzero, None]

    joint = ksvd_learn(stacked, n_atoms, cycles, eps, max_atoms, seed, workers)
    focused, blurred, degenerate = _split_halves(joint.atoms, ts.dim)
    for name in degenerate:
        logger.warning(f"{name} 子空间退化：该半部分所有原子均为零")
    return CoupledDictionary(
        focused=Dictionary(focused, label="focused"),
        blurred=Dictionary(blurred, label="blurred"),
        mode="coupled",
        history=joint.history,
    )


def learn_separate(ts: TrainingSet, n_atoms: int = Config.ATOMS, cycles: int = Config.CYCLES,
                   eps: float = Config.EPS, max_atoms: int = Config.MAX_ATOMS,
                   seed: int = Config.SEED, workers: Optional[int] = None) -> CoupledDictionary:
    """分别对聚焦块和模糊块做 K-SVD，两个子字典之间没有原子对应关系"""
    if not isinstance(ts, TrainingSet):
        raise DataError("learn_separate 需要 TrainingSet")
    focused = ksvd_learn(ts.focused, n_atoms, cycles, eps, max_atoms, seed, workers, label="focused")
    blurred = ksvd_learn(ts.blurred, n_atoms, cycles, eps, max_atoms, seed, workers, label="blurred")
    return CoupledDictionary(focused=focused, blurred=blurred, mode="separate")


def learn_single(ts: TrainingSet, n_atoms: int = Config.ATOMS, cycles: int = Config.CYCLES,
                 eps: float = Config.EPS, max_atoms: int = Config.MAX_ATOMS,
                 seed: int = Config.SEED, workers: Optional[int] = None) -> CoupledDictionary:
    """单字典基线：只在聚焦块上学习一个字典，融合时退化为最大 l1 范数规则"""
    focused = ksvd_learn(ts.focused, n_atoms, cycles, eps, max_atoms, seed, workers, label="focused")
    return CoupledDictionary(focused=focused, blurred=None, mode="single", history=focused.history)


def first_atom_accuracy(dictionary: CoupledDictionary, focused: np.ndarray,
                        blurred: np.ndarray) -> tuple[float, float]:
    """首个匹配原子的判别准确率

    聚焦块的首选原子落在 D^F 中、模糊块的首选原子落在 D^B 中的比例。
    """
    if dictionary.mode == "single":
        raise DataError("单字典没有模糊子空间，无法统计判别准确率")
    atoms = dictionary.stacked().atoms
    split = dictionary.atoms_per_dictionary
    scores = []
    for rows, want_focused in ((focused, True), (blurred, False)):
        rows = np.asarray(rows, dtype=np.float64)
        rows = rows[np.linalg.norm(rows, axis=1) > 0.0]
        if len(rows) == 0:
            raise DataError("判别测试需要非零块")
        first = np.argmax(np.abs(rows @ atoms), axis=1)
        in_focused = first < split
        scores.append(float(np.mean(in_focused if want_focused else ~in_focused)))
    return scores[0], scores[1]
