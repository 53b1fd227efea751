import logging
import math
from typing import Callable, Optional, Sequence, Tuple

from scipy import integrate

from app.exceptions import IntegrationFailure

logger = logging.getLogger(__name__)


def checked_quad(func: Callable[[float], float], a: float, b: float, rtol: float,
                 points: Optional[Sequence[float]] = None, limit: int = 500) -> Tuple[float, float]:
    """
    Адаптивная квадратура с контролем сходимости.

    Возвращает (значение, оценка абсолютной ошибки). IntegrationFailure, если
    quad сообщил о проблеме и оценка ошибки хуже запрошенной точности.
    """
    if a == b:
        return 0.0, 0.0

    kwargs = {"epsabs": 0.0, "epsrel": rtol, "limit": limit, "full_output": 1}
    if points is not None and math.isfinite(a) and math.isfinite(b):
        inner = sorted({float(p) for p in points if a < p < b})
        if inner:
            kwargs["points"] = inner

    result = integrate.quad(func, a, b, **kwargs)
    value, abserr = result[0], result[1]

    if not math.isfinite(value) or not math.isfinite(abserr):
        raise IntegrationFailure(f"Нечисловой результат квадратуры на [{a}, {b}]")

    if len(result) > 3 and abserr > max(10 * rtol * abs(value), 1e-15):
        logger.error(f"Квадратура на [{a}, {b}] не сошлась: {result[3]}")
        raise IntegrationFailure(f"Квадратура не сошлась на [{a}, {b}]: ошибка {abserr:.3e}")

    return value, abserr
