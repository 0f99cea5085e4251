"""Exhaustive 2-way and 3-way proportional-similarity metrics over vector sets."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ConfigError,
    DataError,
    DecompGrid,
    EngineError,
    MetricRecord,
    Problem,
    RankCoords,
    TupleId,
    VectorBlock,
)
from .engine import RankResult, TrafficStats, run  # noqa: F401
from .io import (  # noqa: F401
    MetricOutputSpec,
    VectorFileSpec,
    read_run_output,
    read_slice,
    reconstruct_index,
    write_run_output,
    write_vectors,
)
from .metrics2 import RunResult, run_2way  # noqa: F401
from .metrics3 import run_3way  # noqa: F401
from .schedule import load_stats, owns_pair, owns_triple, schedule_2way, schedule_3way  # noqa: F401
from .verify import (  # noqa: F401
    Checksum128,
    checksum,
    gen_analytic,
    gen_random_exact,
    oracle_2way,
    oracle_3way,
)
