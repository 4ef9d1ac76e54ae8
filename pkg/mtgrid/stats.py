"""
Run statistics, computed from the event trace alone so a trace file
reproduces the stats of its run
"""

import collections
from typing import NamedTuple, List, Iterable, TextIO, Dict

from .memory import LatencyClass
from .trace import TraceRecord
from .fileio import namedtuple_dumps, Format


class CoreStats(NamedTuple):
    core: int
    issued: int = 0
    idle: int = 0
    ipc: float = 0.0
    switches: int = 0
    threads_created: int = 0
    threads_retired: int = 0
    families_created: int = 0


class Counter(NamedTuple):
    name: str
    count: int


class RunStats(NamedTuple):
    cycles: int = 0
    issued: int = 0
    cores: List[CoreStats] = []
    messages: List[Counter] = []
    memory: List[Counter] = []
    sep_requests: int = 0
    sep_failures: int = 0


def stats_from_trace(records: Iterable[TraceRecord]) -> RunStats:
    """
    >>> stats_from_trace([]).cycles
    0
    """
    cycles = 0
    num_cores = 0
    per_kind: Dict[str, "collections.Counter[int]"] = {
        k: collections.Counter() for k in ("ISSUE", "SWITCH", "TCREATE", "TRETIRE", "FSTART")
    }
    messages: "collections.Counter[str]" = collections.Counter()
    memory: "collections.Counter[str]" = collections.Counter({cls.value: 0 for cls in LatencyClass})
    sep_requests = sep_failures = 0
    for rec in records:
        if rec.kind in per_kind:
            per_kind[rec.kind][rec.core] += 1
        elif rec.kind == "SEND":
            messages[rec.get("kind") or "?"] += 1
        elif rec.kind == "MEMISSUE":
            memory[rec.get("lat") or "?"] += 1
        elif rec.kind == "FPUISSUE":
            memory[LatencyClass.FPU.value] += 1
        elif rec.kind == "SEPREQ":
            sep_requests += 1
        elif rec.kind == "SEPFAIL":
            sep_failures += 1
        elif rec.kind == "HALT":
            cycles = rec.number("cycles")
            num_cores = rec.number("cores")

    cores: List[CoreStats] = []
    for c in range(num_cores):
        issued = per_kind["ISSUE"][c]
        cores.append(
            CoreStats(
                core=c,
                issued=issued,
                idle=cycles - issued,
                ipc=issued / cycles if cycles else 0.0,
                switches=per_kind["SWITCH"][c],
                threads_created=per_kind["TCREATE"][c],
                threads_retired=per_kind["TRETIRE"][c],
                families_created=per_kind["FSTART"][c],
            )
        )
    return RunStats(
        cycles=cycles,
        issued=sum(cs.issued for cs in cores),
        cores=cores,
        messages=[Counter(k, messages[k]) for k in sorted(messages)],
        memory=[Counter(k, v) for k, v in memory.items()],
        sep_requests=sep_requests,
        sep_failures=sep_failures,
    )


def stats_lines(stats: RunStats) -> List[str]:
    """
    The 'metric = value' lines of a stats document, in a stable order
    """
    lines = [f"cycles = {stats.cycles}", f"issued = {stats.issued}"]
    for cs in stats.cores:
        prefix = f"core{cs.core}"
        lines.extend(
            [
                f"{prefix}.issued = {cs.issued}",
                f"{prefix}.idle = {cs.idle}",
                f"{prefix}.ipc = {cs.ipc:.4f}",
                f"{prefix}.switches = {cs.switches}",
                f"{prefix}.threads_created = {cs.threads_created}",
                f"{prefix}.threads_retired = {cs.threads_retired}",
                f"{prefix}.families_created = {cs.families_created}",
            ]
        )
    lines.extend(f"messages.{m.name} = {m.count}" for m in stats.messages)
    lines.extend(f"memory.{m.name} = {m.count}" for m in stats.memory)
    lines.append(f"sep.requests = {stats.sep_requests}")
    lines.append(f"sep.failures = {stats.sep_failures}")
    return lines


def emit_stats(stats: RunStats, sink: TextIO, format: str = "text") -> None:
    if format == "text":
        for line in stats_lines(stats):
            sink.write(line)
            sink.write("\n")
        return
    if format not in ("json", "yaml"):
        raise ValueError(f"Unknown stats format {format}")
    fmt: Format = "json" if format == "json" else "yaml"
    sink.write(namedtuple_dumps(stats, format=fmt))
    if fmt == "json":
        sink.write("\n")
