import json
import logging
import os
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from app.exceptions import IngestError
from app.schemas import ExperimentConfig, MarginsDocument
from app.sim.margins import MarginTransformer
from app.sim.mgp_core import StdMgpSample
from app.sim.validators import RiskDataValidator

logger = logging.getLogger(__name__)


class RiskDataExtractor:
    """Класс для извлечения данных из файлов"""

    def __init__(self):
        self.supported_formats = ['.csv']
        self.validator = RiskDataValidator()

    def _check_path(self, file_path: str, formats: List[str]):
        if not os.path.exists(file_path):
            raise IngestError(f"Файл не найден: {file_path}")
        if not any(file_path.lower().endswith(fmt) for fmt in formats):
            raise IngestError(f"Неподдерживаемый формат файла: {file_path}")

    def extract_from_csv(self, file_path: str, **kwargs) -> pd.DataFrame:
        """Извлечение данных из CSV файла"""
        self._check_path(file_path, self.supported_formats)
        try:
            df = pd.read_csv(file_path, encoding='utf-8', **kwargs)
            logger.info(f"Успешно извлечено {len(df)} записей из CSV: {file_path}")
            return df
        except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
            logger.error(f"Ошибка при чтении CSV файла {file_path}: {str(e)}")
            raise IngestError(f"Не удалось прочитать {file_path}: {e}") from e

    def extract_risk_matrix(self, file_path: str) -> pd.DataFrame:
        """Матрица рисков: один столбец на фактор, одна строка на наблюдение"""
        df = self.extract_from_csv(file_path)
        df.columns = [str(col).strip() for col in df.columns]
        df = df.dropna(how='all')

        is_valid, errors = self.validator.validate_risk_frame(df)
        if not is_valid:
            logger.error(f"Файл {file_path} не прошел валидацию: {errors}")
            raise IngestError(f"{file_path}: " + "; ".join(errors))
        return df.astype(float)

    def extract_excesses(self, file_path: str) -> StdMgpSample:
        df = self.extract_risk_matrix(file_path)
        return StdMgpSample(df.to_numpy(), columns=list(df.columns))

    def extract_correlation(self, file_path: str) -> np.ndarray:
        """d строк по d вещественных чисел через запятую, без заголовка"""
        df = self.extract_from_csv(file_path, header=None)
        corr = df.to_numpy(dtype=float)
        self.validator.require_correlation(corr)
        return corr

    def _read_json(self, file_path: str) -> Dict[str, Any]:
        self._check_path(file_path, ['.json'])
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Ошибка при чтении JSON файла {file_path}: {str(e)}")
            raise IngestError(f"Некорректный JSON в {file_path}: {e}") from e

    def extract_margins(self, file_path: str) -> MarginTransformer:
        document = MarginsDocument.model_validate(self._read_json(file_path))
        logger.info(f"Загружены маргинальные модели для столбцов: {document.columns}")
        return MarginTransformer.from_document(document)

    def extract_experiment_config(self, file_path: str) -> ExperimentConfig:
        return ExperimentConfig.model_validate(self._read_json(file_path))

    def get_file_info(self, file_path: str) -> Dict[str, Any]:
        """Получить информацию о файле"""
        df = self.extract_from_csv(file_path, nrows=5)
        return {
            'file_name': os.path.basename(file_path),
            'columns': list(df.columns),
            'size_bytes': os.path.getsize(file_path),
        }


def parse_float_list(text: str) -> List[float]:
    """'0.54,0.31' -> [0.54, 0.31]"""
    try:
        values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ValueError(f"ожидался список чисел через запятую: {text!r}") from e
    if not values:
        raise ValueError(f"пустой список: {text!r}")
    return values


def parse_grid(text: str) -> np.ndarray:
    """'0.8:0.999:40' -> 40 равноотстоящих уровней"""
    parts = text.split(':')
    if len(parts) != 3:
        raise ValueError(f"сетка задается как start:stop:count, получено {text!r}")
    start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1 or not RiskDataValidator.validate_probability([start, stop]):
        raise ValueError(f"некорректная сетка уровней: {text!r}")
    return np.linspace(start, stop, count)
