"""Per-data-type coordination for fog platforms, with a deterministic simulator.

Each coordination namespace declares a strategy (eventual CRDT dissemination
or strict consensus), a level (system, replica set or node) and a
participation option; the middleware routes every operation accordingly.
"""

from .errors import FogCoordError, InvalidScenario
from .scenario import Scenario
from .simnet import RunResult, Simulation, run
from .trace import TraceLog
from .types import (
    CoordinationKey,
    CrdtKind,
    DataTypeDescriptor,
    DescriptorRegistry,
    Level,
    MachineId,
    Participation,
    ReadMode,
    Strategy,
)

__all__ = [
    "CoordinationKey", "CrdtKind", "DataTypeDescriptor", "DescriptorRegistry", "FogCoordError",
    "InvalidScenario", "Level", "MachineId", "Participation", "ReadMode", "RunResult", "Scenario",
    "Simulation", "Strategy", "TraceLog", "run",
]
