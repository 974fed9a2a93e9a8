#!/usr/bin/env python3
"""
日志配置模块 - 控制台彩色日志、按天轮转的日志文件、命令行状态输出

日志和状态消息都写到标准错误，标准输出只留给 CSV 结果表。
"""

import logging
import sys
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import Optional

RESET = '\033[0m'
BOLD = '\033[1m'
DIM = '\033[90m'

# 级别 -> (颜色, 消息前缀)
LEVEL_STYLES = {
    'DEBUG': ('\033[36m', ''),
    'INFO': ('\033[32m', ''),
    'WARNING': ('\033[33m', '⚠️  '),
    'ERROR': ('\033[31m', '❌ '),
    'CRITICAL': ('\033[35m', '❌ '),
}

# 流水线各阶段的模块颜色
STAGE_COLORS = {
    'main': '\033[94m',
    'cli': '\033[94m',
    'imaging': '\033[37m',
    'sparse_coding': '\033[95m',
    'dictionary_learning': '\033[96m',
    'training_data': '\033[96m',
    'fusion': '\033[93m',
    'tv_reconstruction': '\033[92m',
    'metrics': '\033[91m',
    'db_manager': DIM,
}

# 消息关键词 -> (图标, 颜色)，按顺序匹配第一个
KEYWORD_MARKS = (
    (('迭代', '周期'), '🔁 ', '\033[96m'),
    (('写入', '保存'), '💾 ', '\033[95m'),
    (('完成',), '✅ ', '\033[92m'),
)

# 状态 -> (图标, 颜色)
STATUS_STYLES = {
    "info": ("ℹ️", "\033[94m"),
    "success": ("✅", "\033[92m"),
    "warning": ("⚠️", "\033[93m"),
    "error": ("❌", "\033[91m"),
    "loading": ("⏳", "\033[96m"),
}


def _stream_is_tty(stream) -> bool:
    return hasattr(stream, "isatty") and stream.isatty()


class ColoredFormatter(logging.Formatter):
    """控制台彩色格式；非终端或 use_colors=False 时输出带日期的纯文本"""

    def __init__(self, use_colors=True, stream=None):
        super().__init__()
        self.use_colors = use_colors and _stream_is_tty(stream or sys.stderr)

    def format(self, record):
        if not self.use_colors:
            return self._format_plain(record)

        level_color, prefix = LEVEL_STYLES.get(record.levelname, ('', ''))
        stage_color = STAGE_COLORS.get(record.name.split('.')[-1], '\033[37m')
        message = record.getMessage()
        head = (f"{DIM}{self.formatTime(record, '%H:%M:%S')}{RESET} "
                f"{level_color}[{record.levelname}]{RESET} "
                f"{stage_color}{record.name}{RESET}: ")

        if record.levelno >= logging.ERROR:
            head = head.replace(f"{level_color}[", f"{BOLD}{level_color}[", 1)
            body = f"\033[91m{prefix}{message}{RESET}"
        elif record.levelno == logging.WARNING:
            body = f"\033[93m{prefix}{message}{RESET}"
        else:
            body = message
            for words, icon, color in KEYWORD_MARKS:
                if any(word in message for word in words):
                    body = f"{color}{icon}{message}{RESET}"
                    break
        return head + body + self._exception_text(record)

    def _format_plain(self, record):
        timestamp = self.formatTime(record, '%Y-%m-%d %H:%M:%S')
        line = f"{timestamp} [{record.levelname}] {record.name}: {record.getMessage()}"
        return line + self._exception_text(record)

    def _exception_text(self, record) -> str:
        if record.exc_info:
            return "\n" + self.formatException(record.exc_info)
        return ""


def setup_logging(log_level="INFO", log_file: Optional[str] = None, use_colors=True):
    """配置根日志器：控制台（标准错误）+ 可选的按天轮转日志文件"""
    level = logging.getLevelName(str(log_level).upper())
    unknown = not isinstance(level, int)
    if unknown:
        level = logging.INFO

    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    root_logger.setLevel(level)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(ColoredFormatter(use_colors=use_colors, stream=sys.stderr))
    root_logger.addHandler(console_handler)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        # 每天午夜轮转，保留 7 天
        file_handler = TimedRotatingFileHandler(
            filename=log_file,
            when='midnight',
            backupCount=7,
            encoding='utf-8',
        )
        file_handler.suffix = "%Y-%m-%d"
        file_handler.setFormatter(ColoredFormatter(use_colors=False))
        root_logger.addHandler(file_handler)

    if unknown:
        root_logger.warning(f"未知的日志级别 {log_level}，使用 INFO")
    return root_logger


def print_startup_banner():
    """打印启动横幅"""
    banner = """
\033[96m┌──────────────────────────────────────────────────────────────┐
│  🔬 CDLFusion  多聚焦图像融合                                 │
│  图像块 → 耦合字典稀疏编码 → 加权选择 → 重叠平均 → TV 重建   │
└──────────────────────────────────────────────────────────────┘\033[0m
"""
    if not _stream_is_tty(sys.stderr):
        banner = banner.replace('\033[96m', '').replace(RESET, '')
    print(banner, file=sys.stderr)


def print_status_message(message: str, status: str = "info"):
    """打印一行状态消息到标准错误"""
    icon, color = STATUS_STYLES.get(status, STATUS_STYLES["info"])
    if _stream_is_tty(sys.stderr):
        print(f"{color}{icon} {message}{RESET}", file=sys.stderr)
    else:
        print(f"{icon} {message}", file=sys.stderr)
