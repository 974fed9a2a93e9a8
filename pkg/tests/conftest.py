import logging

import numpy as np
import pytest
from scipy import ndimage

from dictionary_learning import TrainingSet, coupled_learn
from imaging import extract_patches, gaussian_blur, preprocess


def make_texture(rng, height, width, smoothing=0.8):
    """平滑噪声纹理，线性拉伸到 [0, 1]"""
    noise = ndimage.gaussian_filter(rng.random((height, width)), smoothing)
    return (noise - noise.min()) / (noise.max() - noise.min())


def paired_patches(images, sigma=2.0, d=8, overlap=5):
    """清晰图像与其模糊版本在相同位置上的预处理块对"""
    focused, blurred = [], []
    for sharp in images:
        f = preprocess(extract_patches(sharp, d, overlap))
        b = preprocess(extract_patches(gaussian_blur(sharp, sigma), d, overlap))
        live = ~(f.degenerate | b.degenerate)
        focused.append(f.vectors[live])
        blurred.append(b.vectors[live])
    return np.concatenate(focused), np.concatenate(blurred)


def blur_tile(tile, sigma=2.0):
    """单个块内的高斯模糊（反射边界），与相邻块无关"""
    return ndimage.gaussian_filter(tile, sigma, mode="reflect", truncate=3.0)


def unit_rows(tiles):
    rows = np.asarray(tiles, dtype=np.float64).reshape(len(tiles), -1)
    rows = rows - rows.mean(axis=1, keepdims=True)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def planted_atoms(rng, count=12, d=8, sigma=2.0, min_blur=0.12):
    """零均值、单位范数的白噪声原子；模糊后几乎消失的原子被丢弃"""
    atoms = []
    while len(atoms) < count:
        atom = rng.standard_normal((d, d))
        atom -= atom.mean()
        atom /= np.linalg.norm(atom)
        if np.linalg.norm(blur_tile(atom, sigma)) >= min_blur:
            atoms.append(atom)
    return np.stack(atoms)


def high_detail(rng, d, energy):
    """只含高频成分的细节，范数为 energy"""
    noise = rng.standard_normal((d, d))
    detail = noise - ndimage.gaussian_filter(noise, 1.0, mode="reflect")
    detail -= detail.mean()
    return energy * detail / np.linalg.norm(detail)


def planted_tiles(rng, atoms, count, mix=0.0, detail=0.1):
    """每个块 = 一个原子 + 另一个原子的 c 倍（|c| <= mix）+ 高频细节"""
    d = atoms.shape[1]
    tiles = []
    for _ in range(count):
        i, j = rng.choice(len(atoms), size=2, replace=False)
        c = rng.uniform(0.0, mix) * rng.choice([-1.0, 1.0])
        tiles.append(atoms[i] + c * atoms[j] + high_detail(rng, d, detail))
    return np.stack(tiles)


def planted_pairs(rng, atoms, count, mix=0.5, detail=0.1, sigma=2.0):
    """(清晰块, 逐块高斯模糊块) 的预处理向量对"""
    tiles = planted_tiles(rng, atoms, count, mix, detail)
    return unit_rows(tiles), unit_rows([blur_tile(t, sigma) for t in tiles])


def planted_mosaic(rng, atoms, rows, cols, contrast=0.9, detail=0.3, sigma=2.0):
    """按块拼成的清晰图像与逐块模糊图像，块与 d×d 网格对齐"""
    d = atoms.shape[1]
    tiles = planted_tiles(rng, atoms, rows * cols, detail=detail)
    sharp = np.zeros((rows * d, cols * d))
    blurred = np.zeros_like(sharp)
    for index, tile in enumerate(tiles):
        r, c = divmod(index, cols)
        window = np.s_[r * d:(r + 1) * d, c * d:(c + 1) * d]
        sharp[window] = 0.5 + contrast * tile
        blurred[window] = 0.5 + contrast * blur_tile(tile, sigma)
    return np.clip(sharp, 0.0, 1.0), np.clip(blurred, 0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def training_set():
    train_rng = np.random.default_rng(2024)
    images = [make_texture(train_rng, 96, 96) for _ in range(3)]
    focused, blurred = paired_patches(images)
    order = train_rng.permutation(len(focused))[:2000]
    return TrainingSet(focused[order], blurred[order])


@pytest.fixture(scope="session")
def coupled_dictionary(training_set):
    return coupled_learn(training_set, n_atoms=32, cycles=4, eps=0.1, max_atoms=8, seed=0)


@pytest.fixture
def restore_logging():
    """setup_logging 会替换根日志器的处理器，测试结束后还原"""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        if handler not in handlers:
            handler.close()
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)
