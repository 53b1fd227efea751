import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


@dataclass
class SimConfig:
    # Пути
    LOG_DIR: str = "logs"
    LOG_FILE: str = "extremesim.log"
    LOG_LEVEL: str = "INFO"

    # Воспроизводимость
    DEFAULT_SEED: int = 42

    # Маргинальные распределения
    THRESHOLD_LEVEL: float = 0.95
    CDF_EPS: float = 1e-12
    FIT_MIN_SAMPLE: int = 30
    FIT_MAX_ITER: int = 4000

    # Симуляция
    JOINT_M: int = 10_000
    MAX_REJECTS: int = 10_000
    CASE1_MIN_SUBSET: int = 20
    GAMMA_ZERO_TOL: float = 1e-10
    MIN_POSITIVE_EXCESSES: int = 50

    # Метрики риска
    GPD_THRESHOLD_LEVEL: float = 0.9
    GPD_MIN_EXCEEDANCES: int = 30

    # Квадратуры
    DENSITY_RTOL: float = 1e-8
    DENSITY_BOUND: float = 40.0
    REFERENCE_RTOL: float = 1e-6
    REFERENCE_TAIL_MASS: float = 1e-10

    # Эксперименты
    EXPERIMENT_THRESHOLD_LEVEL: float = 0.86
    THREADS: Optional[int] = None

    def __post_init__(self):
        if self.THREADS is None:
            env_threads = os.getenv("EXTREMESIM_THREADS")
            self.THREADS = int(env_threads) if env_threads and env_threads.isdigit() else 1
        self.THREADS = max(1, self.THREADS)
        self.LOG_LEVEL = os.getenv("EXTREMESIM_LOG_LEVEL", self.LOG_LEVEL).upper()
        self.LOG_DIR = os.getenv("EXTREMESIM_LOG_DIR", self.LOG_DIR)

    @property
    def log_path(self) -> str:
        return os.path.join(self.LOG_DIR, self.LOG_FILE)

    def ensure_directories(self):
        """Создает необходимые директории"""
        os.makedirs(self.LOG_DIR, exist_ok=True)


# Глобальная конфигурация
sim_config = SimConfig()
