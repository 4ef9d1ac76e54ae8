"""
A whole chip: the cores, the two networks, memory and the resource
service, driven by one kernel
"""

from typing import NamedTuple, List, Dict, Tuple, Callable, Optional

from .config import ChipConfig, validate_config
from .consistency import Violation, check_trace
from .core import Core, ThreadContext, ThreadState
from .exceptions import SimulationError
from .family import FamilyProtocol
from .isa import Program, SepPolicy
from .kernel import Kernel, Termination
from .memory import MemorySystem
from .network import Message, MessageKind, Networks, make_message
from .options import Option, is_enabled
from .sep import SEP_CORE, SepRequest, SepService
from .stats import RunStats, stats_from_trace
from .trace import TraceRecord, Tracer

_POLICIES: List[SepPolicy] = list(SepPolicy)


class BlockedThread(NamedTuple):
    core: int
    tid: int
    thread: str
    cell: str


class RunResult(NamedTuple):
    cycles: int
    reason: Termination
    stats: RunStats
    trace: List[TraceRecord]
    output: List[str]
    # threads still suspended when the run stopped without synchronizing
    blocked: List[BlockedThread]
    violations: List[Violation]


class Chip:
    def __init__(
        self, cfg: ChipConfig, program: Program, seq_fallback: Optional[bool] = None
    ) -> None:
        self.cfg = validate_config(cfg)
        self.program = program
        if seq_fallback is None:
            seq_fallback = is_enabled(Option.SEQ_FALLBACK)
        self.kernel = Kernel()
        self.tracer = Tracer()
        self.networks = Networks(cfg, self.kernel, self.tracer, self.deliver)
        self.memory = MemorySystem(cfg, self.kernel, self.tracer)
        self.sep = SepService(cfg, self.kernel, self.tracer, self._sep_reply)
        self.cores = [Core(i, cfg, self) for i in range(cfg.num_cores)]
        self.protocol = FamilyProtocol(self, seq_fallback=seq_fallback)
        self.output: List[str] = []
        self.root_done = False
        self._sep_waiting: Dict[Tuple[int, int], Callable[[int], None]] = {}
        self._started = False

    def __repr__(self) -> str:
        return f"Chip(cores={self.cfg.num_cores}, cycle={self.kernel.now})"

    # kernel model

    def step(self, cycle: int) -> None:
        for core in self.cores:
            core.step()

    def busy(self) -> bool:
        return any(core.has_work() for core in self.cores)

    def done(self) -> bool:
        return self.root_done

    # messages

    def deliver(self, msg: Message) -> None:
        if msg.kind is MessageKind.SEP_CALL:
            policy = msg.field("policy")
            self.sep.submit(
                SepRequest(
                    core=msg.src,
                    tid=msg.tid,
                    arg=msg.field("arg"),
                    policy=_POLICIES[policy] if policy >= 0 else None,
                )
            )
        elif msg.kind is MessageKind.SEP_REPLY:
            on_reply = self._sep_waiting.pop((msg.dst, msg.tid), None)
            if on_reply is None:
                raise SimulationError(f"resource reply to core {msg.dst} thread {msg.tid}, which asked nothing")
            on_reply(msg.field("placeid"))
        else:
            self.protocol.deliver(msg)

    def sep_call(
        self,
        core: Core,
        t: ThreadContext,
        arg: int,
        policy: Optional[SepPolicy],
        on_reply: Callable[[int], None],
    ) -> None:
        """
        Send a request to the resource service, on_reply receives the
        placeid (or status) once the service answers
        """
        self._sep_waiting[(core.index, t.tid)] = on_reply
        self.networks.send_delegation(
            make_message(
                MessageKind.SEP_CALL,
                core.index,
                SEP_CORE,
                tid=t.tid,
                op=0 if policy is not None else 1,
                arg=arg,
                policy=_POLICIES.index(policy) if policy is not None else -1,
            )
        )

    def _sep_reply(self, req: SepRequest, result: int) -> None:
        self.networks.send_delegation(
            make_message(MessageKind.SEP_REPLY, SEP_CORE, req.core, tid=req.tid, placeid=result)
        )

    # running

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for addr, word in self.program.data:
            self.memory.state.write(addr, word)
            self.tracer.emit(0, 0, "DATA", addr=addr, value=word)
        entry = self.program.thread(self.program.entry)
        if entry is None:
            raise SimulationError(f"entry thread '{self.program.entry}' is not defined")
        self.protocol.start_root(entry)

    def blocked_threads(self) -> List[BlockedThread]:
        blocked: List[BlockedThread] = []
        for core in self.cores:
            for tid in sorted(core.threads):
                t = core.threads[tid]
                if t.state is ThreadState.SUSPENDED:
                    blocked.append(BlockedThread(core.index, tid, t.code.name, t.cause or "?"))
        return blocked

    def run(self, max_cycles: Optional[int] = None) -> RunResult:
        self.start()
        cycles, reason = self.kernel.run(self, until=max_cycles)
        blocked: List[BlockedThread] = []
        if reason is not Termination.SYNC:
            blocked = self.blocked_threads()
            for b in blocked:
                self.tracer.emit(cycles, b.core, "BLOCKED", tid=b.tid, thread=b.thread, cell=b.cell)
        self.tracer.emit(cycles, 0, "HALT", cycles=cycles, cores=self.cfg.num_cores, reason=reason.value)
        trace = self.tracer.records
        violations: List[Violation] = []
        if is_enabled(Option.CHECK_CONSISTENCY):
            violations = check_trace(trace)
        return RunResult(
            cycles=cycles,
            reason=reason,
            stats=stats_from_trace(trace),
            trace=trace,
            output=list(self.output),
            blocked=blocked,
            violations=violations,
        )


def simulate(
    cfg: ChipConfig,
    program: Program,
    max_cycles: Optional[int] = None,
    seq_fallback: Optional[bool] = None,
) -> RunResult:
    return Chip(cfg, program, seq_fallback=seq_fallback).run(max_cycles)
