"""
Flat shared memory with split-phase loads and stores

There is no coherence protocol, a single memory image is updated when a
store completes. Caches only decide latency: a core's recently used
addresses hit in L1, addresses recently used by its group of four cores hit
in L2, everything else goes off chip
"""

from collections import OrderedDict
from enum import Enum
from typing import NamedTuple, Dict, List, Callable, Tuple

from .config import ChipConfig
from .kernel import Kernel, Target
from .trace import Tracer

L2_GROUP = 4
FPU_GROUP = 2


class LatencyClass(Enum):
    L1 = "l1"
    L2 = "l2"
    OFFCHIP = "offchip"
    FPU = "fpu"


class MemOpKind(Enum):
    LOAD = "load"
    STORE = "store"


class MemOpRecord(NamedTuple):
    op: int
    issue: int
    complete: int
    core: int
    tid: int
    fid: int
    kind: MemOpKind
    address: int
    value: int


def _touch(recent: "OrderedDict[int, None]", addr: int, capacity: int) -> None:
    if addr in recent:
        return
    recent[addr] = None
    if len(recent) > capacity:
        recent.popitem(last=False)


class MemoryState:
    def __init__(self, cfg: ChipConfig) -> None:
        self.cfg = cfg
        self.words: Dict[int, int] = {}
        self.l1: List["OrderedDict[int, None]"] = [
            OrderedDict() for _ in range(cfg.num_cores)
        ]
        groups = (cfg.num_cores + L2_GROUP - 1) // L2_GROUP
        self.l2: List["OrderedDict[int, None]"] = [OrderedDict() for _ in range(groups)]

    def read(self, addr: int) -> int:
        return self.words.get(addr, 0)

    def write(self, addr: int, value: int) -> None:
        self.words[addr] = value

    def classify(self, core: int, addr: int) -> LatencyClass:
        """
        The latency class of an access, recording the access in the
        core's L1 and its group's L2 sets (FIFO eviction)
        """
        l1 = self.l1[core]
        l2 = self.l2[core // L2_GROUP]
        if addr in l1:
            cls = LatencyClass.L1
        elif addr in l2:
            cls = LatencyClass.L2
        else:
            cls = LatencyClass.OFFCHIP
        _touch(l1, addr, self.cfg.l1_lines)
        _touch(l2, addr, self.cfg.l2_lines)
        return cls

    def cycles(self, cls: LatencyClass) -> int:
        lat = self.cfg.latencies
        return {
            LatencyClass.L1: lat.l1_hit,
            LatencyClass.L2: lat.l2_hit,
            LatencyClass.OFFCHIP: lat.offchip,
            LatencyClass.FPU: lat.fpu_op,
        }[cls]

    def latency_class(self, core: int, addr: int) -> int:
        """
        >>> mem = MemoryState(ChipConfig())
        >>> mem.latency_class(0, 64), mem.latency_class(0, 64), mem.latency_class(1, 64)
        (100, 2, 10)
        """
        return self.cycles(self.classify(core, addr))


class MemorySystem:
    """
    Issues split-phase operations, a thread's operations complete in the
    order it issued them
    """

    def __init__(self, cfg: ChipConfig, kernel: Kernel, tracer: Tracer) -> None:
        self.cfg = cfg
        self.kernel = kernel
        self.tracer = tracer
        self.state = MemoryState(cfg)
        self._next_op = 0
        # (core, tid) -> cycle of the thread's last completion
        self._last_done: Dict[Tuple[int, int], int] = {}
        # per pair of cores, first cycle the shared FPU accepts an operation
        self._fpu_free = [0] * ((cfg.num_cores + FPU_GROUP - 1) // FPU_GROUP)
        self.in_flight = 0

    def _completion(self, core: int, tid: int, latency: int) -> int:
        due = self.kernel.now + latency
        due = max(due, self._last_done.get((core, tid), 0))
        self._last_done[(core, tid)] = due
        return due

    def _issue(
        self,
        kind: MemOpKind,
        core: int,
        tid: int,
        fid: int,
        addr: int,
        value: int,
        on_complete: Callable[[int], None],
    ) -> int:
        cls = self.state.classify(core, addr)
        due = self._completion(core, tid, self.state.cycles(cls))
        op = self._next_op
        self._next_op += 1
        self.in_flight += 1
        self.tracer.emit(
            self.kernel.now,
            core,
            "MEMISSUE",
            op=op,
            kind=kind.value,
            tid=tid,
            fid=fid,
            addr=addr,
            lat=cls.value,
        )

        def complete() -> None:
            self.in_flight -= 1
            if kind is MemOpKind.STORE:
                self.state.write(addr, value)
                result = value
            else:
                result = self.state.read(addr)
            self.tracer.emit(self.kernel.now, core, "MEMDONE", op=op, value=result)
            on_complete(result)

        self.kernel.schedule(complete, due - self.kernel.now, Target.MEMORY, label=kind.value)
        return op

    def issue_load(
        self, core: int, tid: int, fid: int, addr: int, on_complete: Callable[[int], None]
    ) -> int:
        return self._issue(MemOpKind.LOAD, core, tid, fid, addr, 0, on_complete)

    def issue_store(
        self,
        core: int,
        tid: int,
        fid: int,
        addr: int,
        value: int,
        on_complete: Callable[[int], None],
    ) -> int:
        return self._issue(MemOpKind.STORE, core, tid, fid, addr, value, on_complete)

    def issue_fpu(
        self, core: int, tid: int, fid: int, result: int, on_complete: Callable[[int], None]
    ) -> None:
        """
        Queue an operation on the FPU shared by the core pair, which
        accepts one operation per cycle
        """
        pair = core // FPU_GROUP
        start = max(self.kernel.now, self._fpu_free[pair])
        self._fpu_free[pair] = start + 1
        due = self._completion(core, tid, start - self.kernel.now + self.cfg.latencies.fpu_op)
        self.in_flight += 1
        self.tracer.emit(
            self.kernel.now, core, "FPUISSUE", tid=tid, fid=fid, wait=start - self.kernel.now
        )

        def complete() -> None:
            self.in_flight -= 1
            on_complete(result)

        self.kernel.schedule(complete, due - self.kernel.now, Target.MEMORY, label="fpu")
