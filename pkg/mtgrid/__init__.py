import sys
import warnings


# check python version
if sys.version_info[0] == 3 and sys.version_info[1] < 8:
    warnings.warn("mtgrid requires at least python3.8")

from .config import (
    ChipConfig,
    Latencies,
    load_config,
    load_config_file,
    decode_place,
    encode_place,
    round_trip_delay,
)
from .assembler import assemble, disassemble
from .chip import Chip, RunResult, simulate
from .consistency import check_trace, check_weak_consistency
from .options import options
from .stats import RunStats, emit_stats, stats_from_trace
from .trace import emit_trace, load_trace

__all__ = [
    "ChipConfig",
    "Latencies",
    "load_config",
    "load_config_file",
    "decode_place",
    "encode_place",
    "round_trip_delay",
    "assemble",
    "disassemble",
    "Chip",
    "RunResult",
    "simulate",
    "check_trace",
    "check_weak_consistency",
    "options",
    "RunStats",
    "emit_stats",
    "stats_from_trace",
    "emit_trace",
    "load_trace",
]
