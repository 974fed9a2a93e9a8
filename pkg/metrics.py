#!/usr/bin/env python3
"""
融合质量评价指标

无参考指标：NMI（Hossny 归一化的融合互信息）、Q_AB/F（Xydeas–Petrović 边缘保持度）；
有参考指标：SSIM、MSE（均在 0–255 尺度上计算）。
"""

import itertools
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from errors import DataError
from image_io import to_uint8
from imaging import check_image, to_grayscale

logger = logging.getLogger(__name__)

LEVELS = 255.0

# Q_AB/F 的 sigmoid 常数
GAMMA_G, KAPPA_G, SIGMA_G = 0.9994, -15.0, 0.5
GAMMA_A, KAPPA_A, SIGMA_A = 0.9879, -22.0, 0.8


@dataclass(frozen=True)
class MetricReport:
    """无参考图像时 ssim / mse 为 None"""

    nmi: float
    qabf: float
    ssim: Optional[float] = None
    mse: Optional[float] = None

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value is not None and not np.isfinite(value):
                raise DataError(f"指标 {name} 不是有限值: {value}")

    def as_row(self) -> dict:
        return asdict(self)


def _same_shape(*images: np.ndarray):
    shapes = {np.shape(img) for img in images}
    if len(shapes) != 1:
        raise DataError(f"图像尺寸不一致: {sorted(shapes)}")


def _gray(img: np.ndarray) -> np.ndarray:
    return to_grayscale(check_image(img))


def mse(ref: np.ndarray, fused: np.ndarray) -> float:
    """逐像素（含所有通道）平方误差的均值，0–255 尺度"""
    _same_shape(ref, fused)
    diff = (np.asarray(ref, dtype=np.float64) - np.asarray(fused, dtype=np.float64)) * LEVELS
    return float(np.mean(diff * diff))


def ssim(ref: np.ndarray, fused: np.ndarray, window: int = 8,
         k1: float = 0.01, k2: float = 0.03, L: float = LEVELS) -> float:
    """8×8 滑动窗口（均匀权重、总体方差）上局部 SSIM 的均值"""
    _same_shape(ref, fused)
    x = _gray(ref) * LEVELS
    y = _gray(fused) * LEVELS
    if min(x.shape) < window:
        raise DataError(f"图像尺寸 {x.shape} 小于 SSIM 窗口 {window}")
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2

    def local_mean(arr):
        return sliding_window_view(arr, (window, window)).mean(axis=(-2, -1))

    mu_x, mu_y = local_mean(x), local_mean(y)
    var_x = local_mean(x * x) - mu_x * mu_x
    var_y = local_mean(y * y) - mu_y * mu_y
    cov = local_mean(x * y) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(numerator / denominator))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def _mutual_information(a: np.ndarray, b: np.ndarray, bins: int) -> tuple[float, float, float]:
    """返回 (MI(a;b), H(a), H(b))，a / b 为 [0, bins) 的整数图"""
    joint = np.bincount(a.ravel() * bins + b.ravel(), minlength=bins * bins)
    h_a = _entropy(np.bincount(a.ravel(), minlength=bins))
    h_b = _entropy(np.bincount(b.ravel(), minlength=bins))
    return h_a + h_b - _entropy(joint), h_a, h_b


def nmi(src_a: np.ndarray, src_b: np.ndarray, fused: np.ndarray, bins: int = 256) -> float:
    """NMI = 2·[MI(A;F)/(H(A)+H(F)) + MI(B;F)/(H(B)+H(F))]，256 级直方图"""
    _same_shape(src_a, src_b, fused)
    if bins != 256:
        raise DataError("NMI 只支持 256 级直方图")
    a, b, f = (to_uint8(_gray(img)).astype(np.int64) for img in (src_a, src_b, fused))

    total = 0.0
    for source in (a, b):
        mi, h_s, h_f = _mutual_information(source, f, bins)
        if h_s + h_f > 0:
            total += mi / (h_s + h_f)
    return 2.0 * total


def _sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel 梯度幅值与方向 arctan(gy/gx)，gx = 0 时方向取 π/2"""
    gx = ndimage.sobel(img, axis=1, mode="reflect")
    gy = ndimage.sobel(img, axis=0, mode="reflect")
    magnitude = np.hypot(gx, gy)
    ratio = np.divide(gy, gx, out=np.zeros_like(gx), where=gx != 0)
    angle = np.where(gx != 0, np.arctan(ratio), np.pi / 2)
    return magnitude, angle


def _preservation(g_s, a_s, g_f, a_f) -> np.ndarray:
    strength = np.ones_like(g_s)
    np.divide(np.minimum(g_s, g_f), np.maximum(g_s, g_f), out=strength,
              where=np.maximum(g_s, g_f) > 0)
    orientation = 1.0 - np.abs(a_s - a_f) / (np.pi / 2)
    q_g = GAMMA_G / (1.0 + np.exp(KAPPA_G * (strength - SIGMA_G)))
    q_a = GAMMA_A / (1.0 + np.exp(KAPPA_A * (orientation - SIGMA_A)))
    return q_g * q_a


# 完全保持（强度比与方向一致度都为 1）时的 sigmoid 乘积
PERFECT_PRESERVATION = float(_preservation(np.ones(1), np.zeros(1), np.ones(1), np.zeros(1))[0])


def qabf(src_a: np.ndarray, src_b: np.ndarray, fused: np.ndarray,
         normalized: bool = True) -> float:
    """Q_AB/F 边缘保持度，源图像梯度幅值加权

    normalized 时除以完全保持时的 sigmoid 乘积，使 F = A = B 得到 1。
    """
    _same_shape(src_a, src_b, fused)
    g_a, a_a = _sobel(_gray(src_a))
    g_b, a_b = _sobel(_gray(src_b))
    g_f, a_f = _sobel(_gray(fused))

    weight = np.sum(g_a + g_b)
    if weight == 0:
        logger.warning("源图像梯度全为零，Q_AB/F 记为 0")
        return 0.0
    q = np.sum(_preservation(g_a, a_a, g_f, a_f) * g_a + _preservation(g_b, a_b, g_f, a_f) * g_b)
    value = float(q / weight)
    if normalized:
        value /= PERFECT_PRESERVATION
    return float(np.clip(value, 0.0, 1.0))


def evaluate(sources: Sequence[np.ndarray], fused: np.ndarray,
             reference: Optional[np.ndarray] = None) -> MetricReport:
    """计算全部指标；多于两个源时 NMI 和 Q_AB/F 取所有源对的平均"""
    if len(sources) < 2:
        raise DataError("至少需要两幅源图像")
    _same_shape(*sources, fused)
    pairs = list(itertools.combinations(range(len(sources)), 2))
    nmi_value = float(np.mean([nmi(sources[i], sources[j], fused) for i, j in pairs]))
    qabf_value = float(np.mean([qabf(sources[i], sources[j], fused) for i, j in pairs]))

    ssim_value = mse_value = None
    if reference is not None:
        _same_shape(reference, fused)
        ssim_value = ssim(reference, fused)
        mse_value = mse(reference, fused)
    return MetricReport(nmi=nmi_value, qabf=qabf_value, ssim=ssim_value, mse=mse_value)


def mask_accuracy(mask, labels: np.ndarray, band: Optional[int] = None) -> float:
    """决策掩码与真值标签图的一致率

    只统计整块落在同一区域、且离所有区域边界超过 band 像素的锚点；
    band 默认等于块边长。
    """
    labels = np.asarray(labels)
    d = mask.patch_side
    band = d if band is None else band
    if labels.ndim != 2:
        raise DataError("真值标签图必须是二维的")

    boundary = np.zeros(labels.shape, dtype=bool)
    horizontal = labels[:, 1:] != labels[:, :-1]
    vertical = labels[1:, :] != labels[:-1, :]
    boundary[:, 1:] |= horizontal
    boundary[:, :-1] |= horizontal
    boundary[1:, :] |= vertical
    boundary[:-1, :] |= vertical

    if boundary.any():
        near = ndimage.distance_transform_edt(~boundary) <= band
    else:
        near = boundary
    rows, cols = mask.anchors[:, 0], mask.anchors[:, 1]
    if rows.max() + d > labels.shape[0] or cols.max() + d > labels.shape[1]:
        raise DataError(f"标签图尺寸 {labels.shape} 与掩码不一致")
    blocked = sliding_window_view(near, (d, d))[rows, cols].any(axis=(-2, -1))
    valid = ~blocked
    if not valid.any():
        raise DataError("没有远离区域边界的锚点可供统计")
    truth = labels[rows[valid], cols[valid]]
    return float(np.mean(mask.winner[valid] == truth))
