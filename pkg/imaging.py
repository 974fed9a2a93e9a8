#!/usr/bin/env python3
"""
图像核心模块 - 灰度转换、滑动窗口取块、块预处理、重叠平均重建、合成多聚焦数据

图像统一用 float64 的 numpy 数组表示，取值范围 [0, 1]：
灰度图形状为 (H, W)，彩色图形状为 (H, W, 3)。
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from errors import DataError

logger = logging.getLogger(__name__)

# ITU-R BT.601 亮度权重
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

# 去均值后范数低于该值的块视为常数块
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class PatchGrid:
    """按行优先顺序排列的图像块集合

    vectors 每行是一个 d×d 块按行展开后的 d² 维向量；
    means / norms / degenerate 只有经过 preprocess 之后才有值。
    """

    patch_side: int
    stride: int
    height: int
    width: int
    anchors: np.ndarray                  # (N, 2) 左上角 (row, col)
    vectors: np.ndarray                  # (N, d²)
    means: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def shape(self) -> tuple[int, int]:
        """锚点网格的 (行数, 列数)"""
        rows = len(np.unique(self.anchors[:, 0]))
        return rows, len(self) // max(rows, 1)

    @property
    def preprocessed(self) -> bool:
        return self.means is not None


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """校验图像数组的形状与取值，返回 float64 视图"""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise DataError(f"{name} 形状不合法: {arr.shape}，应为 (H, W) 或 (H, W, 3)")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"{name} 尺寸为空: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} 含有非有限值")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(f"{name} 取值超出 [0, 1]")
    return arr


def planes_of(img: np.ndarray) -> list[np.ndarray]:
    """把图像拆成若干个二维平面"""
    if img.ndim == 2:
        return [img]
    return [img[:, :, c] for c in range(img.shape[2])]


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """彩色图按 BT.601 权重转灰度，灰度图原样返回"""
    img = check_image(img)
    if img.ndim == 2:
        return img
    gray = img @ GRAY_WEIGHTS
    return np.clip(gray, 0.0, 1.0)


def _axis_anchors(length: int, d: int, stride: int) -> np.ndarray:
    starts = list(range(0, length - d + 1, stride))
    # 最后一块贴齐图像边缘
    if starts[-1] != length - d:
        starts.append(length - d)
    return np.asarray(starts, dtype=np.int64)


def anchor_lattice(height: int, width: int, d: int, overlap: int) -> np.ndarray:
    """计算所有块的左上角坐标，行优先"""
    if not 0 <= overlap < d:
        raise DataError(f"重叠像素数 {overlap} 必须满足 0 <= overlap < d={d}")
    if d > min(height, width):
        raise DataError(f"块边长 d={d} 大于图像尺寸 {height}x{width}")
    stride = d - overlap
    rows = _axis_anchors(height, d, stride)
    cols = _axis_anchors(width, d, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def extract_patches(img: np.ndarray, d: int, overlap: int) -> PatchGrid:
    """滑动窗口提取 d×d 块（从左上到右下），返回未预处理的 PatchGrid"""
    img = check_image(img)
    if img.ndim != 2:
        raise DataError("extract_patches 只接受单通道图像")
    height, width = img.shape
    anchors = anchor_lattice(height, width, d, overlap)
    windows = sliding_window_view(img, (d, d))
    vectors = windows[anchors[:, 0], anchors[:, 1]].reshape(len(anchors), d * d)
    return PatchGrid(
        patch_side=d,
        stride=d - overlap,
        height=height,
        width=width,
        anchors=anchors,
        vectors=np.ascontiguousarray(vectors),
    )


def preprocess(grid: PatchGrid) -> PatchGrid:
    """去均值并归一化为单位 Frobenius 范数；常数块置零并标记"""
    vectors = grid.vectors
    means = vectors.mean(axis=1)
    centered = vectors - means[:, None]
    norms = np.linalg.norm(centered, axis=1)
    degenerate = norms < DEGENERATE_NORM

    normalized = np.zeros_like(centered)
    keep = ~degenerate
    normalized[keep] = centered[keep] / norms[keep, None]

    if degenerate.any():
        logger.debug(f"预处理: {int(degenerate.sum())}/{len(grid)} 个常数块")
    return replace(grid, vectors=normalized, means=means, norms=norms, degenerate=degenerate)


def reconstruct_overlap_average(anchors: np.ndarray, patches: np.ndarray,
                                height: int, width: int) -> np.ndarray:
    """把原始强度块放回原位，重叠像素取算术平均"""
    anchors = np.asarray(anchors, dtype=np.int64)
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or len(patches) != len(anchors):
        raise DataError("块数量与锚点数量不一致")
    d = int(round(np.sqrt(patches.shape[1])))
    if d * d != patches.shape[1]:
        raise DataError(f"块向量长度 {patches.shape[1]} 不是平方数")
    if len(anchors) and (anchors.min() < 0 or anchors[:, 0].max() + d > height
                         or anchors[:, 1].max() + d > width):
        raise DataError("存在越出画布的块")

    offset_r, offset_c = np.divmod(np.arange(d * d), d)
    flat = (anchors[:, 0, None] + offset_r) * width + (anchors[:, 1, None] + offset_c)
    sums = np.bincount(flat.ravel(), weights=patches.ravel(), minlength=height * width)
    counts = np.bincount(flat.ravel(), minlength=height * width)

    if np.any(counts == 0):
        raise DataError(f"有 {int(np.sum(counts == 0))} 个像素未被任何块覆盖")
    canvas = (sums / counts).reshape(height, width)
    return np.clip(canvas, 0.0, 1.0)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """高斯模糊（3σ 截断，反射边界），彩色图逐通道处理"""
    if not sigma > 0:
        raise DataError(f"模糊参数 sigma 必须为正数: {sigma}")
    img = check_image(img)
    sigmas = (sigma, sigma) if img.ndim == 2 else (sigma, sigma, 0)
    blurred = ndimage.gaussian_filter(img, sigma=sigmas, mode="reflect", truncate=3.0)
    return np.clip(blurred, 0.0, 1.0)


def generate_focal_series(sharp: np.ndarray, blur_sigma: float,
                          labels: np.ndarray, k: Optional[int] = None) -> list[np.ndarray]:
    """生成 K 幅多聚焦图像：第 k 幅在 labels == k 处清晰，其余位置模糊"""
    sharp = check_image(sharp, "sharp")
    labels = np.asarray(labels)
    if labels.shape != sharp.shape[:2]:
        raise DataError(f"区域标签尺寸 {labels.shape} 与图像 {sharp.shape[:2]} 不一致")
    k = int(labels.max()) + 1 if k is None else k
    blurred = gaussian_blur(sharp, blur_sigma)
    series = []
    for index in range(k):
        inside = labels == index
        if sharp.ndim == 3:
            inside = inside[:, :, None]
        series.append(np.where(inside, sharp, blurred))
    return series


def generate_multifocus(sharp: np.ndarray, blur_sigma: float,
                        region: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """两幅多聚焦图像：A 在 region 内清晰，B 在 region 外清晰"""
    region = np.asarray(region, dtype=bool)
    labels = np.where(region, 0, 1)
    image_a, image_b = generate_focal_series(sharp, blur_sigma, labels, k=2)
    return image_a, image_b, region.copy()


# --------------------------- 合成区域 ---------------------------

def region_half_plane(height: int, width: int, axis: int = 1, flip: bool = False) -> np.ndarray:
    """半平面区域；axis=1 时为左半边，axis=0 时为上半边"""
    rr, cc = np.mgrid[:height, :width]
    region = cc < width // 2 if axis == 1 else rr < height // 2
    return ~region if flip else region


def region_circle(height: int, width: int, cy: Optional[float] = None,
                  cx: Optional[float] = None, radius: Optional[float] = None) -> np.ndarray:
    """圆形区域，默认以图像中心为圆心、短边的四分之一为半径"""
    cy = (height - 1) / 2 if cy is None else cy
    cx = (width - 1) / 2 if cx is None else cx
    radius = min(height, width) / 4 if radius is None else radius
    rr, cc = np.mgrid[:height, :width]
    return (rr - cy) ** 2 + (cc - cx) ** 2 <= radius ** 2


def region_wedges(height: int, width: int, k: int) -> np.ndarray:
    """以图像中心为顶点把平面均分为 k 个扇形，返回标签图"""
    if k < 2:
        raise DataError("扇形数量至少为 2")
    rr, cc = np.mgrid[:height, :width]
    angle = np.arctan2(rr - (height - 1) / 2, cc - (width - 1) / 2)
    labels = np.floor((angle + np.pi) / (2 * np.pi) * k).astype(np.int64)
    return np.minimum(labels, k - 1)

