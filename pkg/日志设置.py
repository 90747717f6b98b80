'''
日志设置模块

为各模块创建统一格式的日志记录器：文件处理器记录 DEBUG 及以上，控制台按 配置.LOG_LEVEL 输出。
'''

import logging
from pathlib import Path

import 配置

_LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def 获取日志记录器(name: str) -> logging.Logger:
    """
    返回已挂载文件与控制台处理器的日志记录器，重复调用不会重复添加处理器。

    Args:
        name (str): 记录器名称，通常传入模块的 __name__。

    Returns:
        logging.Logger: 配置好的日志记录器。
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    log_level = getattr(logging, str(配置.LOG_LEVEL).upper(), logging.INFO)
    log_formatter = logging.Formatter(_LOG_FORMAT)

    # 控制台处理器
    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(log_formatter)
    stream_handler.setLevel(log_level)
    logger.addHandler(stream_handler)

    # 文件处理器，目录不可写时只保留控制台输出
    if 配置.LOG_FILE:
        log_file = Path(配置.LOG_FILE)
        try:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file, encoding='utf-8')
            file_handler.setFormatter(log_formatter)
            file_handler.setLevel(logging.DEBUG)
            logger.addHandler(file_handler)
        except OSError as e:
            logger.warning(f"无法创建日志文件 {log_file}: {e}，仅输出到控制台。")

    logger.setLevel(logging.DEBUG if 配置.LOG_FILE else log_level)
    return logger
