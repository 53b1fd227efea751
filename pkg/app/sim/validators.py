import logging
from typing import List, Tuple

import numpy as np
import pandas as pd

from app.exceptions import DomainError, NotPositiveDefinite

logger = logging.getLogger(__name__)


class RiskDataValidator:
    """Класс для валидации входных данных"""

    @staticmethod
    def validate_probability(p: float, open_interval: bool = True) -> bool:
        """Проверка вероятности"""
        p_arr = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p_arr)):
            return False
        if open_interval:
            return bool(np.all((p_arr > 0) & (p_arr < 1)))
        return bool(np.all((p_arr >= 0) & (p_arr <= 1)))

    @staticmethod
    def validate_index(index: int, d: int) -> bool:
        """Индекс компоненты в диапазоне 0..d-1"""
        return isinstance(index, (int, np.integer)) and 0 <= int(index) < d

    @staticmethod
    def validate_risk_frame(df: pd.DataFrame) -> Tuple[bool, List[str]]:
        """Валидация матрицы рисков: непустая, числовая, без пропусков"""
        errors = []
        if df.empty:
            errors.append("Пустой набор данных")
            return False, errors

        for column in df.columns:
            if not pd.api.types.is_numeric_dtype(df[column]):
                errors.append(f"Столбец {column}: нечисловые значения")
            elif df[column].isna().any():
                errors.append(f"Столбец {column}: пропущенные значения ({int(df[column].isna().sum())})")
            elif not np.all(np.isfinite(df[column].to_numpy(dtype=float))):
                errors.append(f"Столбец {column}: бесконечные значения")

        return len(errors) == 0, errors

    @staticmethod
    def require_probability(p: float, name: str = "p"):
        if not RiskDataValidator.validate_probability(p):
            raise DomainError(f"{name} должно лежать в (0, 1), получено {p}")

    @staticmethod
    def require_correlation(corr: np.ndarray) -> np.ndarray:
        """Проверка корреляционной матрицы, возвращает множитель Холецкого"""
        corr = np.asarray(corr, dtype=float)
        if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
            raise NotPositiveDefinite(f"Матрица должна быть квадратной, форма {corr.shape}")
        if not np.all(np.isfinite(corr)):
            raise NotPositiveDefinite("Матрица содержит нечисловые значения")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise NotPositiveDefinite("Матрица не симметрична")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise NotPositiveDefinite("Диагональ матрицы должна состоять из единиц")
        try:
            return np.linalg.cholesky(corr)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefinite(f"Матрица не положительно определена: {e}") from e
