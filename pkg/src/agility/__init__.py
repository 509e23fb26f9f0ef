"""Run-time agility for collaborative processes.

Tracks an expected and a field situation model from typed event streams,
measures their weighted divergence, and interrupts and re-plans the running
process when the divergence crosses a threshold.
"""

from .cep import CepEngine, CepPattern, CepRule
from .divergence import (
    CRISIS_PROFILE,
    DEFAULT_PROFILE,
    CostConfig,
    CostMode,
    DivergenceReport,
    RedesignLevel,
    WeightTable,
    classify_nature,
    compute_divergence,
    exceeds_threshold,
    instance_cost,
)
from .events import Event, EventBus, Source
from .model import (
    Difference,
    Instance,
    InstanceKey,
    Operation,
    SituationModel,
    apply_effect,
    clone_model,
    diff,
    parse,
    serialize,
    validate,
)
from .scenario import Scenario, bundled_scenarios, load_scenario
from .service import AdaptationRecord, AgilityConfig, AgilityService, RegistryService, ServiceRegistry
from .sim import RunResult, replay_check, run
from .workflow import ActivityDef, ActivityState, Edge, ProcessDefinition, WorkflowEngine

__version__ = "0.1.0"
