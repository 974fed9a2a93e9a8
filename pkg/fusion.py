#!/usr/bin/env python3
"""
融合模块 - 逐位置选择（加权 l1 规则）、掩码应用、重叠平均重建与可选的 TV 全局重建

源图像下标在 Python 接口中从 0 开始。
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from config import Config
from dictionary_learning import CoupledDictionary
from errors import DataError
from imaging import (check_image, extract_patches, planes_of, preprocess,
                     reconstruct_overlap_average, to_grayscale)
from sparse_coding import Dictionary, SparseCode, batch_encode
from tv_reconstruction import TvParams, TvResult, tv_admm

logger = logging.getLogger(__name__)


def _check_omega(omega: float):
    if not 0.5 <= omega < 1.0:
        raise DataError(f"权重 omega 必须满足 0.5 <= omega < 1: {omega}")


@dataclass(frozen=True)
class FusionConfig:
    omega: float = Config.OMEGA
    eps: float = Config.EPS
    patch_side: int = Config.PATCH_SIDE
    overlap: int = Config.OVERLAP
    max_atoms: int = Config.MAX_ATOMS
    tv_enabled: bool = False
    tv_params: TvParams = field(default_factory=TvParams)
    workers: Optional[int] = None

    def __post_init__(self):
        _check_omega(self.omega)
        if not self.eps > 0:
            raise DataError(f"eps 必须为正数: {self.eps}")
        if self.patch_side < 1:
            raise DataError(f"块边长必须为正: {self.patch_side}")
        if not 0 <= self.overlap < self.patch_side:
            raise DataError(f"重叠 {self.overlap} 必须满足 0 <= overlap < {self.patch_side}")


@dataclass(frozen=True)
class DecisionMask:
    """锚点分辨率的决策掩码

    winner[i] 是第 i 个锚点选中的源图像下标，scores[i, k] 是源 k 的加权 l1 得分；
    fallback[i] 为真表示所有编码为零、按原始块方差选择。
    """

    grid_shape: tuple
    anchors: np.ndarray
    patch_side: int
    winner: np.ndarray
    scores: np.ndarray
    fallback: np.ndarray

    def __post_init__(self):
        n, k = self.scores.shape
        if len(self.winner) != n or len(self.anchors) != n:
            raise DataError("掩码的锚点数与得分数不一致")
        if n and (self.winner.min() < 0 or self.winner.max() >= k):
            raise DataError("掩码中存在越界的源下标")

    @property
    def sources(self) -> int:
        return self.scores.shape[1]

    def winner_grid(self) -> np.ndarray:
        return self.winner.reshape(self.grid_shape)


@dataclass(frozen=True)
class FusionResult:
    image: np.ndarray
    mask: DecisionMask
    initial: np.ndarray
    tv_results: tuple = ()
    elapsed: float = 0.0


def select(codes: Sequence[SparseCode], omega: float = Config.OMEGA,
           split: Optional[int] = None) -> tuple[int, np.ndarray]:
    """加权 l1 选择：score_k = ω‖α_k^F‖₁ + (1−ω)‖α_k^B‖₁，取最大者（并列取最小下标）

    split 为 α^F 的长度，默认取编码长度的一半（耦合字典）。
    """
    _check_omega(omega)
    if len(codes) < 2:
        raise DataError("至少需要两个源的编码")
    lengths = {code.length for code in codes}
    if len(lengths) != 1:
        raise DataError(f"编码长度不一致: {sorted(lengths)}")
    length = lengths.pop()
    split = length // 2 if split is None else split
    scores = weighted_scores(np.array([code.l1(0, split) for code in codes]),
                             np.array([code.l1(split, length) for code in codes]), omega)
    return int(np.argmax(scores)), scores


def weighted_scores(focused_l1: np.ndarray, blurred_l1: np.ndarray, omega: float) -> np.ndarray:
    """ω‖α^F‖₁ + (1−ω)‖α^B‖₁，对任意形状的 l1 数组逐元素计算"""
    focused = np.asarray(focused_l1, dtype=np.float64)
    blurred = np.asarray(blurred_l1, dtype=np.float64)
    return omega * focused + (1.0 - omega) * blurred


def _check_winner(winner: np.ndarray, sources: int):
    winner = np.asarray(winner)
    if winner.size and (winner.min() < 0 or winner.max() >= sources):
        bad = winner[(winner < 0) | (winner >= sources)][0]
        raise DataError(f"源下标 {int(bad)} 超出范围 [0, {sources})")


def apply_mask(k: int, patches: Sequence[np.ndarray]) -> np.ndarray:
    """原样返回被选中源的原始块"""
    _check_winner(np.array([k]), len(patches))
    return patches[k]


def apply_masks(winner: np.ndarray, patches: np.ndarray) -> np.ndarray:
    """apply_mask 的批量形式：patches 形状为 (K, N, d²)，第 i 行取 patches[winner[i], i]"""
    patches = np.asarray(patches)
    if patches.ndim != 3 or patches.shape[1] != len(winner):
        raise DataError(f"块数组形状 {patches.shape} 与 {len(winner)} 个锚点不一致")
    _check_winner(winner, patches.shape[0])
    return patches[winner, np.arange(len(winner))]


def _as_dictionary(dictionary: Union[CoupledDictionary, Dictionary]) -> Dictionary:
    if isinstance(dictionary, CoupledDictionary):
        return dictionary.stacked()
    if isinstance(dictionary, Dictionary):
        return dictionary
    raise DataError(f"不支持的字典类型: {type(dictionary).__name__}")


def _check_sources(sources: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(sources) < 2:
        raise DataError("至少需要两幅源图像")
    checked = [check_image(img, f"源图像 {k}") for k, img in enumerate(sources)]
    shapes = {img.shape for img in checked}
    if len(shapes) != 1:
        raise DataError(f"源图像尺寸或通道数不一致: {sorted(shapes)}")
    return checked


def decide(sources: Sequence[np.ndarray], dictionary: Union[CoupledDictionary, Dictionary],
           cfg: FusionConfig = FusionConfig()) -> DecisionMask:
    """对灰度化后的源图像逐位置编码并选择，得到决策掩码"""
    sources = _check_sources(sources)
    atoms = _as_dictionary(dictionary)
    d = cfg.patch_side
    if atoms.dim != d * d:
        raise DataError(f"字典维度 {atoms.dim} 与块大小 {d}x{d} 不一致")

    gray = [to_grayscale(img) for img in sources]
    grids = [preprocess(extract_patches(img, d, cfg.overlap)) for img in gray]

    columns = []
    for k, grid in enumerate(grids):
        batch = batch_encode(grid, atoms, cfg.eps, cfg.max_atoms, cfg.workers)
        focused, blurred = batch.l1_segments(atoms.split)
        columns.append(weighted_scores(focused, blurred, cfg.omega))
        logger.debug(f"源 {k} 编码完成，平均支撑 {batch.counts.mean():.2f}")
    scores = np.stack(columns, axis=1)
    winner = np.argmax(scores, axis=1)

    # 所有编码为零的位置：选原始块方差最大的源
    fallback = np.all(scores == 0.0, axis=1)
    if fallback.any():
        variance = np.stack([grid.norms[fallback] for grid in grids], axis=1)
        winner[fallback] = np.argmax(variance, axis=1)
        logger.debug(f"{int(fallback.sum())} 个位置的编码全为零，按块方差选择")

    first = grids[0]
    return DecisionMask(
        grid_shape=first.shape,
        anchors=first.anchors,
        patch_side=d,
        winner=winner,
        scores=scores,
        fallback=fallback,
    )


def compose(sources: Sequence[np.ndarray], mask: DecisionMask, overlap: int) -> np.ndarray:
    """按掩码逐平面拷贝原始块并做重叠平均"""
    sources = _check_sources(sources)
    d = mask.patch_side
    height, width = sources[0].shape[:2]
    planes = []
    for plane in range(len(planes_of(sources[0]))):
        raw = np.stack([extract_patches(planes_of(img)[plane], d, overlap).vectors
                        for img in sources])
        chosen = apply_masks(mask.winner, raw)
        planes.append(reconstruct_overlap_average(mask.anchors, chosen, height, width))
    return planes[0] if sources[0].ndim == 2 else np.stack(planes, axis=2)


def fuse_images(sources: Sequence[np.ndarray], dictionary: Union[CoupledDictionary, Dictionary],
                cfg: FusionConfig = FusionConfig()) -> FusionResult:
    """完整融合流程：灰度决策 → 逐平面拷贝块 → 重叠平均 → 可选 TV 全局重建

    彩色输入只用灰度图计算一个掩码，再把它应用到每个颜色平面。
    """
    started = time.perf_counter()
    mask = decide(sources, dictionary, cfg)
    initial = compose(sources, mask, cfg.overlap)

    tv_results = ()
    image = initial
    if cfg.tv_enabled:
        tv_results = tuple(tv_admm(plane, cfg.tv_params) for plane in planes_of(initial))
        refined = [result.image for result in tv_results]
        image = refined[0] if initial.ndim == 2 else np.stack(refined, axis=2)

    elapsed = time.perf_counter() - started
    counts = np.bincount(mask.winner, minlength=mask.sources)
    logger.info(f"融合完成: {mask.sources} 个源, {len(mask.winner)} 个位置, "
                f"各源选中次数 {counts.tolist()}, 用时 {elapsed:.2f}s")
    return FusionResult(image=image, mask=mask, initial=initial,
                        tv_results=tv_results, elapsed=elapsed)


def render_mask(mask: DecisionMask, height: int, width: int) -> np.ndarray:
    """把锚点掩码渲染为 8 位图：每个像素取最近锚点中心的源下标 × ⌊255/(K−1)⌋"""
    grid = mask.winner_grid()
    rows = np.unique(mask.anchors[:, 0]) + (mask.patch_side - 1) / 2
    cols = np.unique(mask.anchors[:, 1]) + (mask.patch_side - 1) / 2
    nearest_r = np.argmin(np.abs(np.arange(height)[:, None] - rows[None, :]), axis=1)
    nearest_c = np.argmin(np.abs(np.arange(width)[:, None] - cols[None, :]), axis=1)
    step = 255 // max(mask.sources - 1, 1)
    return (grid[np.ix_(nearest_r, nearest_c)] * step).astype(np.uint8)
