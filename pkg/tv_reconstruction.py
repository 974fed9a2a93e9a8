#!/usr/bin/env python3
"""
全局重建模块 - 各向同性 TV 先验下的 ADMM 求解

    min_I  ½‖I − I0‖² + η·Σ √(Dh(I)² + Dv(I)²)

拆分 z = ∇I：I 子问题 (Id + ρ∇ᵀ∇) I = I0 + ρ∇ᵀ(z − u) 在 Neumann 边界下
被 DCT-II 对角化，可以精确求解；z 子问题是逐像素的各向同性收缩；
对偶变量按 u += γ(∇I − z) 更新。
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from config import Config
from errors import DataError, NonConvergenceWarning

logger = logging.getLogger(__name__)

# 相对残差分母的下限
_TINY = 1e-12


@dataclass(frozen=True)
class TvParams:
    eta: float = Config.TV_ETA
    rho: float = Config.TV_RHO
    gamma: float = Config.TV_GAMMA
    max_iters: int = Config.TV_MAX_ITERS
    tol: float = Config.TV_TOL

    def __post_init__(self):
        if not self.eta >= 0:
            raise DataError(f"eta 必须非负: {self.eta}")
        if not self.rho > 0:
            raise DataError(f"rho 必须为正数: {self.rho}")
        if not 0 < self.gamma <= 2:
            raise DataError(f"gamma 必须在 (0, 2] 内: {self.gamma}")
        if not self.tol > 0:
            raise DataError(f"tol 必须为正数: {self.tol}")
        if self.max_iters < 1:
            raise DataError(f"max_iters 至少为 1: {self.max_iters}")


@dataclass(frozen=True)
class TvResult:
    """image 为返回的最优迭代（已裁剪到 [0,1]）

    history[i] 是前 i 次迭代中最优迭代的目标函数值（history[0] 对应 I0），
    iterate_history 是每次迭代自身的目标函数值。
    """

    image: np.ndarray
    converged: bool
    iterations: int
    history: tuple = field(default=(), repr=False)
    iterate_history: tuple = field(default=(), repr=False)


def gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """前向差分，最后一列 / 最后一行的差分为 0"""
    img = np.asarray(img, dtype=np.float64)
    gh = np.zeros_like(img)
    gv = np.zeros_like(img)
    gh[:, :-1] = img[:, 1:] - img[:, :-1]
    gv[:-1, :] = img[1:, :] - img[:-1, :]
    return gh, gv


def divergence(ph: np.ndarray, pv: np.ndarray) -> np.ndarray:
    """gradient 的负伴随：⟨∇I, P⟩ = ⟨I, −div P⟩"""
    div = np.zeros_like(ph, dtype=np.float64)
    div[:, :-1] += ph[:, :-1]
    div[:, 1:] -= ph[:, :-1]
    div[:-1, :] += pv[:-1, :]
    div[1:, :] -= pv[:-1, :]
    return div


def shrink_iso(ph: np.ndarray, pv: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """各向同性软阈值：幅值减去 threshold（不小于 0），方向不变"""
    if threshold < 0:
        raise DataError(f"收缩阈值必须非负: {threshold}")
    magnitude = np.hypot(ph, pv)
    scale = np.zeros_like(magnitude)
    np.divide(np.maximum(magnitude - threshold, 0.0), magnitude, out=scale, where=magnitude > 0)
    return ph * scale, pv * scale


def total_variation(img: np.ndarray) -> float:
    gh, gv = gradient(img)
    return float(np.hypot(gh, gv).sum())


def tv_objective(img: np.ndarray, reference: np.ndarray, eta: float) -> float:
    diff = np.asarray(img, dtype=np.float64) - reference
    return 0.5 * float(np.sum(diff * diff)) + eta * total_variation(img)


def _laplacian_eigenvalues(height: int, width: int) -> np.ndarray:
    """Neumann 边界下 ∇ᵀ∇ 在 DCT-II 基上的特征值"""
    ev_r = 2.0 - 2.0 * np.cos(np.pi * np.arange(height) / height)
    ev_c = 2.0 - 2.0 * np.cos(np.pi * np.arange(width) / width)
    return ev_r[:, None] + ev_c[None, :]


def tv_admm(I0: np.ndarray, params: TvParams = TvParams()) -> TvResult:
    """ADMM 求解 TV 正则化重建，返回目标函数最小的迭代（包含 I0 本身）"""
    I0 = np.asarray(I0, dtype=np.float64)
    if I0.ndim != 2:
        raise DataError("tv_admm 只处理单通道图像")
    if not np.all(np.isfinite(I0)):
        raise DataError("输入图像含有非有限值")

    eta, rho, gamma = params.eta, params.rho, params.gamma
    start = tv_objective(I0, I0, eta)
    if eta == 0:
        return TvResult(I0.copy(), True, 0, (start,), (start,))

    denominator = 1.0 + rho * _laplacian_eigenvalues(*I0.shape)
    zh, zv = gradient(I0)
    uh = np.zeros_like(I0)
    uv = np.zeros_like(I0)

    best, best_value = I0, start
    history = [start]
    iterate_history = [start]
    converged = False
    iterations = 0

    for iterations in range(1, params.max_iters + 1):
        rhs = I0 - rho * divergence(zh - uh, zv - uv)
        image = fft.idctn(fft.dctn(rhs, norm="ortho") / denominator, norm="ortho")

        gh, gv = gradient(image)
        zh_old, zv_old = zh, zv
        zh, zv = shrink_iso(gh + uh, gv + uv, eta / rho)
        uh = uh + gamma * (gh - zh)
        uv = uv + gamma * (gv - zv)

        value = tv_objective(image, I0, eta)
        iterate_history.append(value)
        if value < best_value:
            best, best_value = image, value
        history.append(best_value)

        primal = np.sqrt(np.sum((gh - zh) ** 2 + (gv - zv) ** 2))
        primal /= max(np.sqrt(np.sum(gh ** 2 + gv ** 2)), np.sqrt(np.sum(zh ** 2 + zv ** 2)), _TINY)
        dual = rho * np.linalg.norm(divergence(zh - zh_old, zv - zv_old))
        dual /= max(rho * np.linalg.norm(divergence(uh, uv)), _TINY)
        logger.debug(f"TV 迭代 {iterations} 目标函数 {value:.8e} "
                     f"原始残差 {primal:.3e} 对偶残差 {dual:.3e}")
        if max(primal, dual) < params.tol:
            converged = True
            break

    if not converged:
        message = f"TV-ADMM 在 {params.max_iters} 次迭代内未收敛，返回最优迭代"
        logger.warning(message)
        warnings.warn(message, NonConvergenceWarning, stacklevel=2)
    else:
        logger.debug(f"TV-ADMM 收敛: {iterations} 次迭代, 目标函数 {best_value:.8e}")

    return TvResult(
        image=np.clip(best, 0.0, 1.0),
        converged=converged,
        iterations=iterations,
        history=tuple(history),
        iterate_history=tuple(iterate_history),
    )
