#!/usr/bin/env python3
"""
异常定义 - 库函数抛出，main.py 负责映射为退出码
"""


class FusionError(Exception):
    """所有融合相关错误的基类"""


class DataError(FusionError, ValueError):
    """输入数据或参数不合法（尺寸不匹配、参数越界、文件损坏等）"""


class NumericalError(FusionError, ArithmeticError):
    """数值计算失败"""


class NonConvergenceWarning(RuntimeWarning):
    """迭代求解器在最大迭代次数内未收敛"""
