from .machine import (
    CostCounters,
    InvariantViolation,
    Machine,
    MachineConfig,
    MemoryFault,
    OutOfMemory,
    PreconditionError,
    Ultraword,
    UsageError,
    UWRAMError,
    lanes_for,
)
from .hashing import MultiplyShiftFn, ms_hash, parallel_ms_hash
from .pdict import ParallelDict
from .xtrie import PredecessorSet, XtraFastTrie
from .xtrie_eps import ConstantBTree, EpsPredecessorSet, EpsTrie
from .harness import RunReport, TraceOp, gen_trace, parse_trace, run_trace

__version__ = "0.1.0"
