"""
Иерархия ошибок предметной области.

Все ошибки наследуются от SimulationError, CLI превращает их в код выхода 2.
"""


class SimulationError(Exception):
    """Базовая ошибка симуляции"""

    @property
    def name(self) -> str:
        return type(self).__name__


class DomainError(SimulationError, ValueError):
    """Аргумент вне области определения"""


class ConstantSample(SimulationError):
    """Выборка с нулевой дисперсией"""


class NonConvergence(SimulationError):
    """Оптимизатор не сошелся"""


class NoExceedances(SimulationError):
    """Нет ни одного превышения порога"""


class InsufficientData(SimulationError):
    """Недостаточно наблюдений"""


class TieError(SimulationError):
    """Неоднозначный максимум в строгом режиме"""


class NotPositiveDefinite(SimulationError):
    """Корреляционная матрица не положительно определена"""


class EmptySubset(SimulationError):
    """Пустое подмножество для бутстрепа"""


class RejectBudgetExceeded(SimulationError):
    """Исчерпан лимит отклонений"""


class IntegrationFailure(SimulationError):
    """Квадратура не сошлась"""


class DominationViolated(SimulationError):
    """Вес принятия больше единицы"""


class InsufficientTail(SimulationError):
    """Слишком мало превышений для подгонки GPD"""


class SingularDesign(SimulationError):
    """Вырожденная матрица плана"""


class DimensionError(SimulationError):
    """Неподдерживаемая размерность"""


class IngestError(SimulationError):
    """Ошибка чтения входных данных"""


class PipelineStageError(SimulationError):
    """Ошибка на одном из этапов конвейера"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        cause_name = getattr(cause, "name", type(cause).__name__)
        super().__init__(f"[{stage}] {cause_name}: {cause}")

    @property
    def name(self) -> str:
        return getattr(self.cause, "name", type(self.cause).__name__)
