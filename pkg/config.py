#!/usr/bin/env python3
"""
配置 - 命令行默认值的唯一来源

读取顺序：进程环境变量 > 工作目录 .env > 用户数据目录 .env > 代码中的默认值。
无法解析的取值回退到默认值，并记录在 Config.INVALID 中，由 main.py 在日志就绪后报告。
"""

import os
import sys
from pathlib import Path

from dotenv import load_dotenv

APP_NAME = "CDLFusion"

# (变量名, 原始取值, 回退的默认值)
_invalid: list = []


def get_user_data_dir(create: bool = False) -> Path:
    """用户数据目录，可用 CDL_DATA_DIR 覆盖"""
    override = os.getenv("CDL_DATA_DIR")
    if override:
        data_dir = Path(override).expanduser()
    elif sys.platform == "darwin":
        data_dir = Path.home() / "Library" / "Application Support" / APP_NAME
    elif sys.platform == "win32":
        data_dir = Path(os.getenv("APPDATA", Path.home() / "AppData" / "Roaming")) / APP_NAME
    else:
        data_dir = Path(os.getenv("XDG_DATA_HOME", Path.home() / ".local" / "share")) / APP_NAME

    if create:
        data_dir.mkdir(parents=True, exist_ok=True)
    return data_dir


def resolve_user_path(value, default_name):
    """相对路径放到用户数据目录下，未设置时使用默认文件名"""
    if value and os.path.isabs(value):
        return value
    return str(USER_DATA_DIR / (value or default_name))


def env_value(name: str, default, cast=str, minimum=None, below=None):
    """读取并转换一个环境变量；解析失败、小于 minimum 或不小于 below 时回退到 default"""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = cast(raw.strip())
    except ValueError:
        _invalid.append((name, raw, default))
        return default
    if (minimum is not None and value < minimum) or (below is not None and value >= below):
        _invalid.append((name, raw, default))
        return default
    return value


USER_DATA_DIR = get_user_data_dir()

load_dotenv(Path.cwd() / ".env")
load_dotenv(USER_DATA_DIR / ".env")


class Config:
    """应用配置类"""

    # --------------------------- 运行环境 ---------------------------
    LOG_LEVEL = env_value("LOG_LEVEL", "INFO")
    # 未设置时只输出到控制台
    LOG_FILE = resolve_user_path(os.getenv("LOG_FILE"), "cdl_fusion.log") if os.getenv("LOG_FILE") else None

    # 结果数据库（eval / sweep / compare 的指标记录）
    DB_PATH = resolve_user_path(os.getenv("DB_PATH"), "results.db")

    # 编码线程数，1 表示串行
    THREADS = env_value("CDL_THREADS", 1, int, minimum=1)

    # --------------------------- 图像块 / 稀疏编码 ---------------------------
    PATCH_SIDE = env_value("CDL_PATCH_SIDE", 8, int, minimum=1)
    OVERLAP = env_value("CDL_OVERLAP", 7, int, minimum=0)
    EPS = env_value("CDL_EPS", 0.1, float)
    MAX_ATOMS = env_value("CDL_MAX_ATOMS", 16, int, minimum=1)
    OMEGA = env_value("CDL_OMEGA", 0.54, float, minimum=0.5, below=1.0)

    # --------------------------- 字典学习 ---------------------------
    ATOMS = env_value("CDL_ATOMS", 256, int, minimum=1)
    CYCLES = env_value("CDL_CYCLES", 10, int, minimum=1)
    TRAIN_PAIRS = env_value("CDL_TRAIN_PAIRS", 30000, int, minimum=1)
    SEED = env_value("CDL_SEED", 0, int)

    # --------------------------- 全局重建（TV） ---------------------------
    TV_ETA = env_value("CDL_TV_ETA", 1e-5, float, minimum=0.0)
    TV_RHO = env_value("CDL_TV_RHO", 1.0, float)
    TV_GAMMA = env_value("CDL_TV_GAMMA", 1.0, float)
    TV_MAX_ITERS = env_value("CDL_TV_MAX_ITERS", 200, int, minimum=1)
    TV_TOL = env_value("CDL_TV_TOL", 1e-6, float)

    # --------------------------- 合成数据 ---------------------------
    BLUR_SIGMA = env_value("CDL_BLUR_SIGMA", 2.0, float)

    INVALID = tuple(_invalid)

    @classmethod
    def get_all_config(cls) -> dict:
        """所有大写配置项（用于调试）"""
        return {name: getattr(cls, name) for name in sorted(vars(cls))
                if name.isupper() and name != "INVALID"}

    @classmethod
    def print_config(cls):
        width = max(map(len, cls.get_all_config()))
        print(f"配置来源: 环境变量 / .env / 默认值（用户数据目录 {USER_DATA_DIR}）")
        for key, value in cls.get_all_config().items():
            print(f"  {key:<{width}} = {value}")


config = Config()

if __name__ == '__main__':
    config.print_config()
