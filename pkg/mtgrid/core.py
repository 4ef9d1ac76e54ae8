"""
The microthreaded core: a single-issue in-order pipeline interleaving the
threads of its thread table

The pipeline is modeled by its timing only. Each cycle the running thread
issues one instruction. A thread whose operand is not available yet is
suspended on that register when the operand is read, and the next ready
thread takes over in the same cycle. A pipeline that ran dry pays a fixed
fill penalty before issuing again
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import (
    TYPE_CHECKING,
    Callable,
    Deque,
    Dict,
    List,
    Optional,
    Tuple,
    Set,
)

from .config import ChipConfig
from .exceptions import ContractViolation, SimulationError, AllocationError
from .isa import (
    Opcode,
    Instruction,
    ThreadDef,
    Operand,
    Reg,
    Imm,
    Target,
    Name,
    AllocMode,
    AllocStrategy,
    AllocFlag,
    SepPolicy,
)
from .registers import RegisterFile, RegisterWindow, RegisterClass, SyncCell, ThreadRef
from .trace import FieldValue
from .typehelpers import wrap_word
from .warn import warn

if TYPE_CHECKING:
    from .chip import Chip
    from .family import FamilySlot, FamilyContext


class ThreadState(Enum):
    # instruction fetch pending
    WAITING = "waiting"
    READY = "ready"
    ACTIVE = "active"
    RUNNING = "running"
    SUSPENDED = "suspended"
    TERMINATED = "terminated"


class Outcome(Enum):
    ISSUED = "issued"
    SUSPENDED = "suspended"
    # END of the thread's own body, issued and retiring
    RETIRED = "retired"


@dataclass
class InlineFrame:
    """
    A sequential family running as a loop in its parent thread. Holds
    the parent's context to resume after the last iteration
    """

    fid: int
    code: ThreadDef
    pc: int
    window: RegisterWindow
    index: int
    indices: range
    # window whose shareds feed the next iteration's dependents
    pred: RegisterWindow
    pos: int = 0
    pred_owned: bool = False
    broken: bool = False


@dataclass
class ThreadContext:
    tid: int
    core: int
    fid: int
    ordinal: int
    index: int
    code: ThreadDef
    window: RegisterWindow
    pc: int = 0
    state: ThreadState = ThreadState.WAITING
    cause: Optional[str] = None
    quantum: int = 0
    frames: List[InlineFrame] = field(default_factory=list)
    pending_stores: int = 0
    # detached sequential families, run when the thread reaches END
    pending_seq: List[int] = field(default_factory=list)
    # ordinal of the thread whose shareds this thread's dependents alias
    pred_ordinal: Optional[int] = None
    # a cell the thread must not run past until it is written (resource service replies)
    blocker: Optional[SyncCell] = None
    fence: SyncCell = field(default_factory=lambda: SyncCell(-1))
    reply: SyncCell = field(default_factory=lambda: SyncCell(-1))

    def __post_init__(self) -> None:
        self.fence.label = f"t{self.tid}.fence"
        self.fence.write(0)
        self.reply.label = f"t{self.tid}.reply"

    @property
    def ref(self) -> ThreadRef:
        return ThreadRef(self.core, self.tid)


def _div(a: int, b: int) -> int:
    # truncating division
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _shift_amount(b: int) -> int:
    return b & 63


_ALU: Dict[Opcode, Callable[[int, int], int]] = {
    Opcode.ADD: lambda a, b: a + b,
    Opcode.SUB: lambda a, b: a - b,
    Opcode.MUL: lambda a, b: a * b,
    Opcode.AND: lambda a, b: a & b,
    Opcode.OR: lambda a, b: a | b,
    Opcode.XOR: lambda a, b: a ^ b,
    Opcode.SHL: lambda a, b: a << _shift_amount(b),
    Opcode.SHR: lambda a, b: a >> _shift_amount(b),
    Opcode.CMP: lambda a, b: (a > b) - (a < b),
    Opcode.FADD: lambda a, b: a + b,
    Opcode.FMUL: lambda a, b: a * b,
}

_BRANCHES: Dict[Opcode, Callable[[int, int], bool]] = {
    Opcode.BEQ: lambda a, b: a == b,
    Opcode.BNE: lambda a, b: a != b,
    Opcode.BLT: lambda a, b: a < b,
}

_SET_PARAM = {
    Opcode.SETSTART: "start",
    Opcode.SETLIMIT: "limit",
    Opcode.SETSTEP: "step",
    Opcode.SETBLOCK: "block",
}


class Core:
    def __init__(self, index: int, cfg: ChipConfig, chip: "Chip") -> None:
        self.index = index
        self.cfg = cfg
        self.chip = chip
        self.regs = RegisterFile(cfg.int_registers_per_core)
        self.threads: Dict[int, ThreadContext] = {}
        self.slots: Dict[int, "FamilySlot"] = {}
        self.exclusive_fid: Optional[int] = None
        self.ready: Deque[int] = deque()
        # one-deep staging slot between the ready queue and the pipeline
        self.active: Optional[int] = None
        self.running: Optional[int] = None
        self.last_running: Optional[int] = None
        self.fill_remaining = 0
        self.pipeline_empty = True
        # families waiting for the creation unit, in arrival order
        self.creation_queue: Deque["FamilySlot"] = deque()
        self.creating: Optional["FamilySlot"] = None
        # allocation requests parked until resources free up
        self.parked: Deque[int] = deque()
        self.parked_exclusive: Deque[int] = deque()

    def __repr__(self) -> str:
        return f"Core({self.index}, threads={len(self.threads)}, running={self.running})"

    # resources

    @property
    def live_threads(self) -> int:
        return len(self.threads)

    @property
    def family_entries_used(self) -> int:
        return sum(1 for s in self.slots.values() if not s.exclusive)

    def has_work(self) -> bool:
        return (
            self.running is not None
            or self.active is not None
            or len(self.ready) > 0
            or self.fill_remaining > 0
        )

    def _emit(self, record_kind: str, **fields: FieldValue) -> None:
        self.chip.tracer.emit(self.chip.kernel.now, self.index, record_kind, **fields)

    # thread lifecycle

    def add_thread(self, t: ThreadContext) -> None:
        self.threads[t.tid] = t
        self.chip.kernel.schedule(
            lambda: self.make_ready(t), self.cfg.latencies.l1_hit, label="fetch"
        )

    def make_ready(self, t: ThreadContext) -> None:
        if t.state is not ThreadState.WAITING:
            raise ContractViolation(f"thread {t.tid} made ready from {t.state.value}")
        t.state = ThreadState.READY
        self.ready.append(t.tid)
        self._emit("TREADY", tid=t.tid, fid=t.fid)

    def suspend_thread(self, t: ThreadContext, cell: SyncCell) -> None:
        if t.state not in (ThreadState.RUNNING, ThreadState.ACTIVE):
            raise ContractViolation(f"thread {t.tid} suspended while {t.state.value}")
        if t.ref not in cell.waiters:
            cell.waiters.append(t.ref)
        t.state = ThreadState.SUSPENDED
        t.cause = cell.name
        if self.running == t.tid:
            self.running = None
        self._emit("SUSPEND", tid=t.tid, cell=cell.name)

    def wake_thread(self, tid: int, cell_name: str) -> None:
        t = self.threads.get(tid)
        if t is None or t.state is not ThreadState.SUSPENDED:
            state = "gone" if t is None else t.state.value
            raise ContractViolation(f"waking thread {tid} on core {self.index}, which is {state}")
        t.state = ThreadState.READY
        t.cause = None
        self.ready.append(tid)
        self._emit("WAKE", tid=tid, cell=cell_name)

    def retire_thread(self, t: ThreadContext) -> None:
        t.state = ThreadState.TERMINATED
        if self.running == t.tid:
            self.running = None
        del self.threads[t.tid]
        self._emit("TRETIRE", tid=t.tid, fid=t.fid)
        self.chip.protocol.on_retire(self, t)

    def write_cell(self, index: int, value: int, generation: Optional[int] = None) -> None:
        cell = self.regs.cell(index)
        for ref in self.regs.write_cell(index, value, generation):
            self.wake_thread(ref.tid, cell.name)

    def fill(self, cell: SyncCell, value: int) -> None:
        """
        Write a cell living outside the register file, waking its readers
        wherever they run
        """
        for ref in cell.write(value):
            self.chip.cores[ref.core].wake_thread(ref.tid, cell.name)

    # scheduling

    def switch_context(self) -> Optional[ThreadContext]:
        """
        Move the head of the ready queue into the pipeline, zero cycles
        """
        if self.running is not None:
            return self.threads[self.running]
        if self.active is None and self.ready:
            self.active = self.ready.popleft()
            self.threads[self.active].state = ThreadState.ACTIVE
        if self.active is None:
            return None
        t = self.threads[self.active]
        self.active = None
        t.state = ThreadState.RUNNING
        t.quantum = 0
        self.running = t.tid
        if self.ready:
            self.active = self.ready.popleft()
            self.threads[self.active].state = ThreadState.ACTIVE
        if self.last_running != t.tid:
            self._emit("SWITCH", tid=t.tid)
        self.last_running = t.tid
        return t

    def _rotate(self, t: ThreadContext) -> None:
        quantum = self.cfg.fairness_quantum
        if quantum == 0 or t.quantum < quantum or self.running != t.tid:
            return
        if self.active is None and not self.ready:
            # nobody else to run, the thread keeps the pipeline
            t.quantum = 0
            return
        t.state = ThreadState.READY
        self.running = None
        self.ready.append(t.tid)

    def step(self) -> None:
        """
        One cycle of the pipeline, at most one issued instruction
        """
        if self.fill_remaining > 0:
            self.fill_remaining -= 1
            return
        while True:
            t = self.switch_context()
            if t is None:
                self.pipeline_empty = True
                return
            if self.pipeline_empty:
                self.pipeline_empty = False
                if self.cfg.pipeline_fill_cycles > 0:
                    self._emit("FILL", cycles=self.cfg.pipeline_fill_cycles)
                    self.fill_remaining = self.cfg.pipeline_fill_cycles - 1
                    return
            if self.execute(t) is not Outcome.SUSPENDED:
                if t.state is ThreadState.RUNNING:
                    t.quantum += 1
                    self._rotate(t)
                return

    # operands

    def _value(self, t: ThreadContext, op: Operand) -> Optional[int]:
        if isinstance(op, Imm):
            return op.value
        if not isinstance(op, Reg):
            raise ContractViolation(f"{op} is not a value operand")
        cell = self.regs.cell(t.window.resolve(op.cls, op.slot))
        if cell.full:
            return cell.value
        self.suspend_thread(t, cell)
        return None

    def _values(self, t: ThreadContext, ops: Tuple[Operand, ...]) -> Optional[List[int]]:
        vals: List[int] = []
        for op in ops:
            v = self._value(t, op)
            if v is None:
                return None
            vals.append(v)
        return vals

    def _dest(self, t: ThreadContext, op: Operand) -> int:
        if not isinstance(op, Reg):
            raise ContractViolation(f"{op} is not a register")
        if op.cls in (RegisterClass.GLOBAL, RegisterClass.DEPENDENT):
            raise ContractViolation(f"{op} is read-only")
        return t.window.resolve(op.cls, op.slot)

    def _set(self, t: ThreadContext, op: Operand, value: int) -> None:
        self.write_cell(self._dest(t, op), value)

    def _wait(self, t: ThreadContext, cell: Optional[SyncCell]) -> Outcome:
        if cell is None or cell.full:
            return Outcome.ISSUED
        self.suspend_thread(t, cell)
        return Outcome.SUSPENDED

    # execution

    def execute(self, t: ThreadContext) -> Outcome:
        if t.blocker is not None:
            if not t.blocker.full:
                self.suspend_thread(t, t.blocker)
                return Outcome.SUSPENDED
            t.blocker = None
        if t.pc >= len(t.code.body):
            raise SimulationError(f"thread {t.tid} ({t.code.name}) ran past its last instruction")
        pc = t.pc
        ins = t.code.body[pc]
        outcome = self._execute(t, ins)
        if outcome is not Outcome.SUSPENDED:
            self._emit("ISSUE", tid=t.tid, pc=pc, op=ins.opcode.name)
        if outcome is Outcome.RETIRED:
            self.retire_thread(t)
        return outcome

    def _execute(self, t: ThreadContext, ins: Instruction) -> Outcome:
        op = ins.opcode
        ops = ins.operands
        protocol = self.chip.protocol

        if op in _ALU or op in (Opcode.DIV, Opcode.MOD):
            vals = self._values(t, ops[1:])
            if vals is None:
                return Outcome.SUSPENDED
            a, b = vals
            if op in (Opcode.DIV, Opcode.MOD):
                if b == 0:
                    warn(f"thread {t.tid} ({t.code.name}) divides by zero at pc {t.pc}, result is 0")
                    result = 0
                elif op is Opcode.DIV:
                    result = _div(a, b)
                else:
                    result = a - b * _div(a, b)
            else:
                result = _ALU[op](a, b)
            if op in (Opcode.FADD, Opcode.FMUL):
                self._issue_fpu(t, ops[0], wrap_word(result))
            else:
                self._set(t, ops[0], result)
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.MOV:
            v = self._value(t, ops[1])
            if v is None:
                return Outcome.SUSPENDED
            self._set(t, ops[0], v)
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.NOP:
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.BR:
            t.pc = _target(ops[0])
            return Outcome.ISSUED

        if op in _BRANCHES:
            vals = self._values(t, ops[:2])
            if vals is None:
                return Outcome.SUSPENDED
            t.pc = _target(ops[2]) if _BRANCHES[op](*vals) else t.pc + 1
            return Outcome.ISSUED

        if op is Opcode.GETIDX:
            self._set(t, ops[0], t.index)
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.LD:
            addr = self._value(t, ops[1])
            if addr is None:
                return Outcome.SUSPENDED
            idx = self._dest(t, ops[0])
            gen = self.regs.cell(idx).generation
            self.regs.clear_cell(idx)
            self.chip.memory.issue_load(
                self.index, t.tid, t.fid, addr, lambda v: self.write_cell(idx, v, gen)
            )
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.ST:
            vals = self._values(t, ops)
            if vals is None:
                return Outcome.SUSPENDED
            value, addr = vals
            self._issue_store(t, addr, value)
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.PRINT:
            v = self._value(t, ops[0])
            if v is None:
                return Outcome.SUSPENDED
            self.chip.output.append(str(v))
            self._emit("PRINT", tid=t.tid, value=v)
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.END:
            return self._end(t)

        if op is Opcode.ALLOCATE:
            place = self._value(t, ops[1])
            if place is None:
                return Outcome.SUSPENDED
            flags: Set[AllocFlag] = {AllocFlag(_name(o)) for o in ops[4:]}
            protocol.allocate_family(
                self,
                t,
                self._dest(t, ops[0]),
                place,
                AllocMode(_name(ops[2])),
                AllocStrategy(_name(ops[3])),
                flags,
            )
            t.pc += 1
            return Outcome.ISSUED

        if op in _SET_PARAM:
            vals = self._values(t, ops)
            if vals is None:
                return Outcome.SUSPENDED
            protocol.configure_family(t, vals[0], _SET_PARAM[op], vals[1])
            t.pc += 1
            return Outcome.ISSUED

        if op in (Opcode.CREI, Opcode.DETACH):
            fid = self._value(t, ops[0])
            if fid is None:
                return Outcome.SUSPENDED
            # the family must observe every store issued before its creation
            if self._wait(t, t.fence) is Outcome.SUSPENDED:
                return Outcome.SUSPENDED
            protocol.create_family(self, t, fid, _name(ops[1]), op is Opcode.DETACH)
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.SYNC:
            fid = self._value(t, ops[0])
            if fid is None:
                return Outcome.SUSPENDED
            fam = protocol.family(fid)
            if fam.forceseq and not fam.detached and protocol.needs_inline(fam):
                self._enter_inline(t, fam)
                return Outcome.ISSUED
            if self._wait(t, protocol.sync_family(self, t, fid)) is Outcome.SUSPENDED:
                return Outcome.SUSPENDED
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.RELEASE:
            fid = self._value(t, ops[0])
            if fid is None:
                return Outcome.SUSPENDED
            protocol.release_family(self, t, fid)
            t.pc += 1
            return Outcome.ISSUED

        if op in (Opcode.PUTG, Opcode.PUTS):
            # PUTS fid, v is PUTS fid, #0, v
            srcs = (ops[0], ops[-1])
            vals = self._values(t, srcs)
            if vals is None:
                return Outcome.SUSPENDED
            slot = _imm(ops[1]) if len(ops) == 3 else 0
            cls = RegisterClass.GLOBAL if op is Opcode.PUTG else RegisterClass.SHARED
            wait = protocol.put_register(self, t, vals[0], cls, slot, vals[1])
            if self._wait(t, wait) is Outcome.SUSPENDED:
                return Outcome.SUSPENDED
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.GETS:
            fid = self._value(t, ops[0])
            if fid is None:
                return Outcome.SUSPENDED
            slot = _imm(ops[1]) if len(ops) == 3 else 0
            dst = self._dest(t, ops[-1])
            wait = protocol.get_shared(self, t, fid, slot, dst)
            if self._wait(t, wait) is Outcome.SUSPENDED:
                return Outcome.SUSPENDED
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.BREAK:
            if t.frames:
                t.frames[-1].broken = True
            else:
                protocol.break_family(self, t)
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.SEPALLOC:
            n = self._value(t, ops[1])
            if n is None:
                return Outcome.SUSPENDED
            idx = self._dest(t, ops[0])
            cell = self.regs.cell(idx)
            gen = cell.generation
            cell.clear()
            t.blocker = cell
            self.chip.sep_call(self, t, n, SepPolicy(_name(ops[2])), lambda v: self.write_cell(idx, v, gen))
            t.pc += 1
            return Outcome.ISSUED

        if op is Opcode.SEPFREE:
            placeid = self._value(t, ops[0])
            if placeid is None:
                return Outcome.SUSPENDED
            t.reply.clear()
            t.blocker = t.reply
            self.chip.sep_call(self, t, placeid, None, lambda v: self.fill(t.reply, v))
            t.pc += 1
            return Outcome.ISSUED

        raise SimulationError(f"no semantics for {op.name}")

    def _issue_store(self, t: ThreadContext, addr: int, value: int) -> None:
        slot = self.slots.get(t.fid)
        t.pending_stores += 1
        if slot is not None:
            slot.pending_stores += 1
        t.fence.clear()

        def done(_: int) -> None:
            t.pending_stores -= 1
            if t.pending_stores == 0:
                self.fill(t.fence, 0)
            if slot is not None:
                slot.pending_stores -= 1
                self.chip.protocol.check_done(self, slot)

        self.chip.memory.issue_store(self.index, t.tid, t.fid, addr, value, done)

    def _issue_fpu(self, t: ThreadContext, dst: Operand, result: int) -> None:
        idx = self._dest(t, dst)
        gen = self.regs.cell(idx).generation
        self.regs.clear_cell(idx)
        self.chip.memory.issue_fpu(
            self.index, t.tid, t.fid, result, lambda v: self.write_cell(idx, v, gen)
        )

    # sequential families, run inline by the thread that synchronizes on them

    def _enter_inline(self, t: ThreadContext, fam: "FamilyContext") -> None:
        base = self.chip.protocol.inline_base(fam)
        frame = InlineFrame(
            fid=fam.fid,
            code=t.code,
            pc=t.pc,
            window=t.window,
            index=t.index,
            indices=fam.indices,
            pred=base,
        )
        t.frames.append(frame)
        self._emit("FSEQ", fid=fam.fid, tid=t.tid, total=len(fam.indices))
        self._next_iteration(t)

    def _next_iteration(self, t: ThreadContext) -> None:
        frame = t.frames[-1]
        fam = self.chip.protocol.family(frame.fid)
        if frame.broken or frame.pos >= len(frame.indices):
            t.frames.pop()
            t.code, t.pc, t.window, t.index = frame.code, frame.pc, frame.window, frame.index
            owned = frame.pred.shareds if frame.pred_owned else ()
            self.chip.protocol.inline_done(self, t, fam, frame.pred.shareds, owned, frame.pos)
            return
        assert fam.thread is not None
        try:
            window = self.regs.alloc_window(fam.thread.counts, predecessor=frame.pred)
        except AllocationError as e:
            raise SimulationError(f"sequential family {fam.fid} on core {self.index}: {e}")
        t.code = fam.thread
        t.pc = 0
        t.window = window
        t.index = frame.indices[frame.pos]

    def _end(self, t: ThreadContext) -> Outcome:
        if t.frames:
            frame = t.frames[-1]
            self.regs.free_cells(t.window.locals)
            if frame.pred_owned:
                self.regs.free_cells(frame.pred.shareds)
            frame.pred = t.window
            frame.pred_owned = True
            frame.pos += 1
            self._next_iteration(t)
            return Outcome.ISSUED
        if t.pending_seq:
            fam = self.chip.protocol.family(t.pending_seq.pop(0))
            self._enter_inline(t, fam)
            return Outcome.ISSUED
        return Outcome.RETIRED


def _target(op: Operand) -> int:
    if not isinstance(op, Target):
        raise ContractViolation(f"{op} is not a branch target")
    return op.pc


def _name(op: Operand) -> str:
    if not isinstance(op, Name):
        raise ContractViolation(f"{op} is not a name")
    return op.text


def _imm(op: Operand) -> int:
    if not isinstance(op, Imm):
        raise ContractViolation(f"{op} is not an immediate")
    return op.value
