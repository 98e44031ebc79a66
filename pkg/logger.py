import logging
import sys
import colorlog
from config import Config

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
_DATEFMT = '%Y-%m-%d %H:%M:%S'

# Loggers handed out so far, so a reloaded Config can be re-applied
_loggers = {}


def _file_handler(path: str) -> logging.Handler:
    file_handler = logging.FileHandler(path, encoding='utf-8')
    file_handler.setFormatter(logging.Formatter(_FORMAT, datefmt=_DATEFMT))
    file_handler.set_name('blockgraph-file')
    return file_handler


def setup_logger(name: str = __name__) -> logging.Logger:
    """Set up a colored logger writing to stderr and, if configured, a file."""

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO))
    _loggers[name] = logger

    # Prevent duplicate handlers
    if logger.handlers:
        return logger

    # Console handler with colors; stdout is reserved for command output
    console_handler = colorlog.StreamHandler(sys.stderr)
    console_formatter = colorlog.ColoredFormatter(
        '%(log_color)s' + _FORMAT,
        datefmt=_DATEFMT,
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        }
    )
    console_handler.setFormatter(console_formatter)
    logger.addHandler(console_handler)

    if Config.LOG_FILE:
        logger.addHandler(_file_handler(Config.LOG_FILE))

    logger.propagate = False
    return logger


def reconfigure_loggers() -> None:
    """Re-apply LOG_LEVEL and LOG_FILE after Config.load() changed them."""
    level = getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO)
    for logger in _loggers.values():
        logger.setLevel(level)
        for handler in list(logger.handlers):
            if handler.get_name() == 'blockgraph-file':
                logger.removeHandler(handler)
                handler.close()
        if Config.LOG_FILE:
            logger.addHandler(_file_handler(Config.LOG_FILE))
