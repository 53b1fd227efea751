from .extractors import RiskDataExtractor
from .validators import RiskDataValidator
from .loaders import ResultWriter
from .margins import MarginModel, MarginTransformer
from .mgp_core import StdMgpSample, DiffMatrix
from .joint_sim import joint_simulate, simulate_original_scale
from .cond_sim import ConditioningEvent, conditional_simulate
from .orchestrator import SimulationOrchestrator

__all__ = [
    'RiskDataExtractor',
    'RiskDataValidator',
    'ResultWriter',
    'MarginModel',
    'MarginTransformer',
    'StdMgpSample',
    'DiffMatrix',
    'joint_simulate',
    'simulate_original_scale',
    'ConditioningEvent',
    'conditional_simulate',
    'SimulationOrchestrator'
]
