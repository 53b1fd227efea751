#!/usr/bin/env python3
"""
Главный скрипт для запуска симуляций и расчета метрик хвостового риска
"""

import os
import sys
import logging

# Добавляем корневую директорию в путь Python
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.cli import main
from config.sim_config import sim_config


def configure_logging():
    sim_config.ensure_directories()
    logging.basicConfig(
        level=sim_config.LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(sim_config.log_path, encoding='utf-8'),
            logging.StreamHandler()
        ]
    )


if __name__ == "__main__":
    configure_logging()
    sys.exit(main())
