#!/usr/bin/env python3
"""
CDLFusion 多聚焦图像融合工具 - 主入口文件

功能：
- synth   由清晰图像合成多聚焦语料（含真值掩码与训练标注）
- learn   从标注区域学习耦合字典 / 分别学习的字典 / 单字典
- fuse    基于稀疏表示融合多聚焦图像，可选 TV 全局重建
- eval    计算 NMI、Q_AB/F，以及有参考图像时的 SSIM、MSE
- sweep   在语料上扫描 omega / eps / patch
- compare 比较多个字典在同一语料上的融合效果
- runs    查看或删除结果库中的指标记录

使用方法：
    python main.py <子命令> [参数]

退出码：0 成功，1 参数错误，2 数据错误，3 数值错误（TV 未收敛时结果照常写出，
      除非指定 --allow-nonconvergence，否则同样以 3 结束）
"""

import logging
import sys
import warnings

from cli import build_parser
from config import Config
from errors import DataError, NonConvergenceWarning, NumericalError
from logger_config import print_startup_banner, print_status_message, setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def main(argv=None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(args.log_level, args.log_file, use_colors=True)
    logger = logging.getLogger(__name__)
    # 未收敛已经由求解器写入日志
    warnings.simplefilter("ignore", NonConvergenceWarning)

    if not args.quiet:
        print_startup_banner()
    for name, raw, default in Config.INVALID:
        logger.warning(f"环境变量 {name}={raw!r} 无法使用，已回退到默认值 {default}")

    try:
        logger.debug(f"执行子命令: {args.command}")
        return args.handler(args)
    except NumericalError as e:
        print_status_message(f"数值计算失败: {e}", "error")
        logger.debug("数值错误详情", exc_info=True)
        return EXIT_NUMERICAL
    except (DataError, OSError) as e:
        print_status_message(f"数据错误: {e}", "error")
        logger.debug("数据错误详情", exc_info=True)
        return EXIT_DATA
    except KeyboardInterrupt:
        print_status_message("收到退出信号，程序已停止", "warning")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
