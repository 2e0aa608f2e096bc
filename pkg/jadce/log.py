import os
import sys
import logging


LOG_LEVEL_ENV = 'JADCE_LOG_LEVEL'
LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s: %(message)s'


def create_logger(name, level=logging.ERROR):
    """
    Logger writing to stdout. The level given here can be overridden
    for every jadce logger with the JADCE_LOG_LEVEL environment variable.
    """
    env_level = os.environ.get(LOG_LEVEL_ENV)
    if env_level:
        level = logging.getLevelName(env_level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    logger = logging.getLogger(name)
    logger.setLevel(level)
    if not logger.handlers:
        formatter = logging.Formatter(LOG_FORMAT)
        handler = logging.StreamHandler(sys.stdout)
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    logger.propagate = False
    return logger
