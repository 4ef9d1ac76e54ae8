"""
The family lifecycle: allocation, configuration, creation, synchronization
and release, carried out by messages between the parent's core and the
cores of the family's place
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Set, Tuple

from .config import PlaceKind, decode_place
from .core import Core, ThreadContext
from .exceptions import (
    AllocationError,
    ContractViolation,
    PlaceError,
    SimulationError,
)
from .isa import AllocFlag, AllocMode, AllocStrategy, ThreadDef
from .network import Direction, Message, MessageKind, make_message
from .registers import RegisterClass, RegisterCounts, RegisterWindow, SyncCell, ThreadRef
from .sequential import family_indices
from .trace import FieldValue
from .warn import warn

if TYPE_CHECKING:
    from .chip import Chip

ROOT_FID = 1
FAILED_FID = 0


class FamilyState(Enum):
    ALLOCATING = "allocating"
    ALLOCATED = "allocated"
    CREATED = "created"
    SYNCED = "synced"
    RELEASED = "released"
    FAILED = "failed"


class SweepPhase(Enum):
    FORWARD = 0
    RETURN = 1
    ABORT = 2


@dataclass
class ChainEntry:
    """
    The shareds of one thread of a dependent family, freed once both the
    thread and the successor reading them through its dependents retired
    """

    shareds: Tuple[int, ...]
    owner_done: bool = False
    has_reader: bool = False
    reader_done: bool = False

    @property
    def releasable(self) -> bool:
        return self.owner_done and self.has_reader and self.reader_done


@dataclass
class FamilySlot:
    """
    A family's context on one core of its place
    """

    fid: int
    core: int
    exclusive: bool = False
    # registers held from allocation until the create arrives
    reservation: Tuple[int, ...] = ()
    # globals and the first thread's dependents
    base: Optional[RegisterWindow] = None
    # cells set aside for the first thread's window
    spare: Tuple[int, ...] = ()
    ordinals: range = range(0)
    cursor: int = 0
    live: int = 0
    started: bool = False
    initial_done: bool = False
    broken: bool = False
    pending_stores: int = 0
    token: bool = False
    done_sent: bool = False
    chain: Dict[int, ChainEntry] = field(default_factory=dict)
    last_ordinal: Optional[int] = None
    last_window: Optional[RegisterWindow] = None

    @property
    def remaining(self) -> int:
        return len(self.ordinals) - self.cursor

    def final_shareds(self) -> Tuple[int, ...]:
        if self.last_window is not None:
            return self.last_window.shareds
        return self.base.shareds if self.base is not None else ()


@dataclass
class FamilyContext:
    fid: int
    parent: Optional[ThreadRef]
    parent_fid: int
    place_start: int
    place_size: int
    mode: AllocMode = AllocMode.NORMAL
    strategy: AllocStrategy = AllocStrategy.NORMAL
    forceseq: bool = False
    exclusive: bool = False
    detached: bool = False
    start: int = 0
    limit: int = 1
    step: int = 1
    # 0 means as many as the thread table holds
    block: int = 0
    thread: Optional[ThreadDef] = None
    indices: range = range(0)
    state: FamilyState = FamilyState.ALLOCATING
    cores: range = range(0)
    ranges: Dict[int, range] = field(default_factory=dict)
    final_core: int = 0
    created: int = 0
    terminated: int = 0
    # parent register receiving the fid, with the generation it had when ALLOCATE issued
    dst: Tuple[int, int] = (-1, 0)
    completion: SyncCell = field(default_factory=lambda: SyncCell(-1))
    ack: SyncCell = field(default_factory=lambda: SyncCell(-1))
    sync_recorded: bool = False
    # allocation sweep
    sweep_size: int = 0
    sweep_failed: bool = False
    # family table loads seen by a balanced sweep, in core order
    loads: List[int] = field(default_factory=list)
    # sequential form, on the parent's core
    seq_base: Optional[RegisterWindow] = None
    seq_final: Tuple[int, ...] = ()
    seq_owned: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.completion.label = f"f{self.fid}.sync"
        self.ack.label = f"f{self.fid}.ack"

    @property
    def parent_core(self) -> int:
        return self.parent.core if self.parent is not None else 0

    @property
    def dependent(self) -> bool:
        return self.thread is not None and self.thread.dependent

    @property
    def sweep_cores(self) -> Tuple[int, int]:
        return self.place_start, self.place_start + self.sweep_size - 1

    @property
    def bounds(self) -> Tuple[int, int]:
        return self.cores[0], self.cores[-1]

    @property
    def best_core(self) -> int:
        return self.place_start + least_loaded(self.loads) if self.loads else -1


def distribute_threads(total: int, cores: int, dependent: bool) -> List[range]:
    """
    Split the ordinals 0..total-1 into contiguous per-core ranges. The first
    total % cores cores get one thread more than the others, a dependent
    family runs on its first core only

    >>> [len(r) for r in distribute_threads(5, 4, False)]
    [2, 1, 1, 1]
    >>> distribute_threads(100, 4, True)[0]
    range(0, 100)
    """
    if cores < 1:
        raise ContractViolation(f"distributing {total} threads over {cores} cores")
    if dependent:
        return [range(0, total)] + [range(total, total)] * (cores - 1)
    per, extra = divmod(total, cores)
    ranges: List[range] = []
    lo = 0
    for i in range(cores):
        hi = lo + per + (1 if i < extra else 0)
        ranges.append(range(lo, hi))
        lo = hi
    return ranges


def least_loaded(loads: List[int]) -> int:
    """
    Index of the smallest load, lowest index on ties

    >>> least_loaded([3, 1, 2, 1])
    1
    """
    best = 0
    for i, load in enumerate(loads):
        if load < loads[best]:
            best = i
    return best


class FamilyProtocol:
    def __init__(self, chip: "Chip", seq_fallback: bool = False) -> None:
        self.chip = chip
        self.cfg = chip.cfg
        self.seq_fallback = seq_fallback
        self.families: Dict[int, FamilyContext] = {}
        self._next_fid = ROOT_FID + 1
        self._next_tid = 0

    def _emit(self, core: int, record_kind: str, **fields: FieldValue) -> None:
        self.chip.tracer.emit(self.chip.kernel.now, core, record_kind, **fields)

    def _core(self, index: int) -> Core:
        return self.chip.cores[index]

    def _delegate(self, kind: MessageKind, src: int, dst: int, fid: int, **payload: int) -> None:
        self.chip.networks.send_delegation(make_message(kind, src, dst, fid, **payload))

    def _distribute(
        self,
        kind: MessageKind,
        src: int,
        fid: int,
        direction: Direction,
        within: Tuple[int, int],
        **payload: int,
    ) -> None:
        self.chip.networks.send_distribution(
            make_message(kind, src, src, fid, **payload), direction, within
        )

    def family(self, fid: int) -> FamilyContext:
        fam = self.families.get(fid)
        if fam is None:
            raise SimulationError(f"no family with fid {fid}")
        return fam

    # root

    def start_root(self, thread: ThreadDef) -> FamilyContext:
        """
        The family of the program's entry thread: one thread on core 0,
        set up without any messages
        """
        fam = FamilyContext(
            fid=ROOT_FID,
            parent=None,
            parent_fid=0,
            place_start=0,
            place_size=1,
            thread=thread,
            indices=range(1),
            cores=range(0, 1),
            ranges={0: range(1)},
            state=FamilyState.CREATED,
        )
        self.families[ROOT_FID] = fam
        core = self._core(0)
        slot = FamilySlot(ROOT_FID, 0, reservation=core.regs.alloc_cells(self.cfg.min_alloc_registers))
        core.slots[ROOT_FID] = slot
        self._start_slot(core, fam, slot)
        return fam

    # allocation

    def allocate_family(
        self,
        core: Core,
        t: ThreadContext,
        dst: int,
        placeid: int,
        mode: AllocMode,
        strategy: AllocStrategy,
        flags: Set[AllocFlag],
    ) -> FamilyContext:
        try:
            place = decode_place(placeid, self.cfg)
        except PlaceError as e:
            raise SimulationError(f"ALLOCATE by thread {t.tid} on core {core.index}: {e}")
        if place.kind is PlaceKind.LOCAL:
            start, size = core.index, 1
        elif place.kind is PlaceKind.DEFAULT:
            parent = self.family(t.fid)
            start, size = parent.cores[0], len(parent.cores)
        else:
            start, size = place.start_core, place.size
        if AllocFlag.EXCLUSIVE in flags:
            mode = AllocMode.EXCLUSIVE
        if strategy is AllocStrategy.SINGLE:
            size = 1
        fid = self._next_fid
        self._next_fid += 1
        cell = core.regs.cell(dst)
        fam = FamilyContext(
            fid=fid,
            parent=t.ref,
            parent_fid=t.fid,
            place_start=start,
            place_size=size,
            mode=mode,
            strategy=strategy,
            forceseq=AllocFlag.FORCESEQ in flags,
            exclusive=mode is AllocMode.EXCLUSIVE,
            dst=(dst, cell.generation),
            sweep_size=size,
        )
        self.families[fid] = fam
        if fam.forceseq:
            # runs in the parent thread, nothing to reserve
            fam.state = FamilyState.ALLOCATED
            fam.cores = range(core.index, core.index + 1)
            self._emit(core.index, "FALLOC", fid=fid, start=core.index, size=0)
            core.write_cell(dst, fid)
            return fam
        core.regs.clear_cell(dst)
        self._delegate(MessageKind.ALLOC_REQ, core.index, start, fid, start=start, size=size)
        return fam

    def _inject(self, fam: FamilyContext) -> None:
        fam.sweep_failed = False
        fam.loads = []
        self._distribute(
            MessageKind.ALLOC_FORWARD,
            fam.place_start,
            fam.fid,
            Direction.LOOP,
            fam.sweep_cores,
            phase=SweepPhase.FORWARD.value,
        )

    def _try_reserve(self, core: Core, fam: FamilyContext) -> bool:
        if fam.fid in core.slots:
            return True
        if fam.exclusive:
            if core.exclusive_fid is not None:
                return False
        elif core.family_entries_used >= self.cfg.family_entries_per_core:
            return False
        if core.live_threads >= self.cfg.thread_entries_per_core:
            return False
        if not core.regs.can_alloc(self.cfg.min_alloc_registers):
            return False
        cells = core.regs.alloc_cells(self.cfg.min_alloc_registers)
        core.slots[fam.fid] = FamilySlot(fam.fid, core.index, exclusive=fam.exclusive, reservation=cells)
        if fam.exclusive:
            core.exclusive_fid = fam.fid
        return True

    def _advance(self, core: Core, fam: FamilyContext) -> None:
        first, last = fam.sweep_cores
        if core.index == last:
            self._distribute(
                MessageKind.ALLOC_FORWARD,
                core.index,
                fam.fid,
                Direction.LOOP,
                (first, last),
                phase=SweepPhase.RETURN.value,
            )
        else:
            self._distribute(
                MessageKind.ALLOC_FORWARD,
                core.index,
                fam.fid,
                Direction.NEXT,
                (first, last),
                phase=SweepPhase.FORWARD.value,
            )

    def _on_alloc_forward(self, core: Core, fam: FamilyContext, phase: SweepPhase) -> None:
        first, last = fam.sweep_cores
        if phase is SweepPhase.FORWARD:
            if fam.strategy is AllocStrategy.BALANCED:
                fam.loads.append(core.family_entries_used)
                self._advance(core, fam)
                return
            if self._try_reserve(core, fam):
                self._advance(core, fam)
                return
            if fam.mode is AllocMode.SUSPEND:
                core.parked.append(fam.fid)
                self._emit(core.index, "FPARK", fid=fam.fid)
                return
            if fam.mode is AllocMode.EXCLUSIVE:
                core.parked_exclusive.append(fam.fid)
                self._emit(core.index, "FPARK", fid=fam.fid)
                return
            if core.index == first:
                self._sweep_failed(core, fam)
            else:
                self._distribute(
                    MessageKind.ALLOC_FORWARD,
                    core.index,
                    fam.fid,
                    Direction.PREV,
                    (first, last),
                    phase=SweepPhase.ABORT.value,
                )
            return

        if phase is SweepPhase.ABORT:
            self._drop_slot(core, fam.fid)
            fam.sweep_failed = True
        elif fam.strategy is AllocStrategy.BALANCED and core.index == fam.best_core:
            if not self._try_reserve(core, fam):
                fam.sweep_failed = True
        if core.index == first:
            if fam.sweep_failed:
                self._sweep_failed(core, fam)
            else:
                self._grant(core, fam)
            return
        self._distribute(
            MessageKind.ALLOC_FORWARD,
            core.index,
            fam.fid,
            Direction.PREV,
            (first, last),
            phase=phase.value,
        )

    def _sweep_failed(self, core: Core, fam: FamilyContext) -> None:
        if fam.strategy is AllocStrategy.NORMAL and fam.sweep_size > 1:
            fam.sweep_size //= 2
            self._emit(core.index, "FRETRY", fid=fam.fid, size=fam.sweep_size)
            self._inject(fam)
            return
        self._delegate(MessageKind.ALLOC_FAIL, core.index, fam.parent_core, fam.fid)

    def _grant(self, core: Core, fam: FamilyContext) -> None:
        if fam.strategy is AllocStrategy.BALANCED:
            fam.cores = range(fam.best_core, fam.best_core + 1)
        else:
            first, last = fam.sweep_cores
            fam.cores = range(first, last + 1)
        self._delegate(
            MessageKind.ALLOC_ACK,
            core.index,
            fam.parent_core,
            fam.fid,
            start=fam.cores[0],
            size=len(fam.cores),
        )

    def _on_alloc_ack(self, core: Core, fam: FamilyContext) -> None:
        fam.state = FamilyState.ALLOCATED
        self._emit(core.index, "FALLOC", fid=fam.fid, start=fam.cores[0], size=len(fam.cores))
        dst, gen = fam.dst
        core.write_cell(dst, fam.fid, gen)

    def _on_alloc_fail(self, core: Core, fam: FamilyContext) -> None:
        self._emit(core.index, "FALLOCFAIL", fid=fam.fid)
        dst, gen = fam.dst
        if self.seq_fallback:
            fam.forceseq = True
            fam.state = FamilyState.ALLOCATED
            fam.cores = range(core.index, core.index + 1)
            core.write_cell(dst, fam.fid, gen)
            return
        fam.state = FamilyState.FAILED
        warn(f"allocation of family {fam.fid} on cores {fam.place_start}..{fam.place_start + fam.place_size - 1} failed")
        core.write_cell(dst, FAILED_FID, gen)

    def _retry_parked(self, core: Core) -> None:
        for queue in (core.parked, core.parked_exclusive):
            while queue:
                fam = self.families[queue[0]]
                if not self._try_reserve(core, fam):
                    break
                queue.popleft()
                self._emit(core.index, "FUNPARK", fid=fam.fid)
                self._advance(core, fam)

    def _drop_slot(self, core: Core, fid: int) -> None:
        slot = core.slots.pop(fid, None)
        if slot is None:
            return
        cells: List[int] = list(slot.reservation) + list(slot.spare)
        if slot.base is not None:
            cells.extend(slot.base.owned)
        for entry in slot.chain.values():
            cells.extend(entry.shareds)
        core.regs.free_cells(cells)
        if core.exclusive_fid == fid:
            core.exclusive_fid = None
        if core.creating is slot:
            core.creating = None

    # configuration and creation

    def configure_family(self, t: ThreadContext, fid: int, key: str, value: int) -> None:
        fam = self.family(fid)
        if fam.state is not FamilyState.ALLOCATED:
            raise ContractViolation(f"configuring family {fid}, which is {fam.state.value}")
        if key == "block" and value < 0:
            raise ContractViolation(f"family {fid} block size {value} is negative")
        setattr(fam, key, value)

    def create_family(
        self, core: Core, t: ThreadContext, fid: int, name: str, detached: bool
    ) -> None:
        fam = self.family(fid)
        if fam.state is not FamilyState.ALLOCATED:
            raise ContractViolation(f"creating family {fid}, which is {fam.state.value}")
        thread = self.chip.program.thread(name)
        if thread is None:
            raise SimulationError(f"family {fid} creates undefined thread '{name}'")
        fam.thread = thread
        fam.detached = detached
        fam.indices = family_indices(fam.start, fam.limit, fam.step)
        fam.state = FamilyState.CREATED
        if fam.forceseq:
            counts = thread.counts
            try:
                cells = core.regs.alloc_cells(counts.g + counts.d)
            except AllocationError as e:
                raise SimulationError(f"sequential family {fid} on core {core.index}: {e}")
            fam.seq_base = RegisterWindow(
                globals=cells[: counts.g], shareds=cells[counts.g :], owned=cells
            )
            fam.ack.write(1)
            if detached:
                t.pending_seq.append(fid)
            return
        ranges = distribute_threads(len(fam.indices), len(fam.cores), fam.dependent)
        fam.ranges = {c: r for c, r in zip(fam.cores, ranges)}
        fam.final_core = fam.cores[0]
        for c, r in fam.ranges.items():
            if len(r) > 0:
                fam.final_core = c
        self._emit(core.index, "FCREATE", fid=fid, tid=t.tid, thread=name, total=len(fam.indices))
        first = fam.cores[0]
        self._delegate(
            MessageKind.CONFIGURE,
            core.index,
            first,
            fid,
            start=fam.start,
            limit=fam.limit,
            step=fam.step,
            block=fam.block,
        )
        self._delegate(MessageKind.CREATE, core.index, first, fid)

    def _forward(self, core: Core, fam: FamilyContext, msg: Message, **payload: int) -> None:
        if core.index < fam.cores[-1]:
            self._distribute(msg.kind, core.index, fam.fid, Direction.NEXT, fam.bounds, **payload)

    def _on_create(self, core: Core, fam: FamilyContext, msg: Message) -> None:
        self._forward(core, fam, msg)
        slot = core.slots.get(fam.fid)
        if slot is None:
            raise SimulationError(f"family {fam.fid} has no context on core {core.index}")
        self._start_slot(core, fam, slot)

    def _start_slot(self, core: Core, fam: FamilyContext, slot: FamilySlot) -> None:
        assert fam.thread is not None
        counts = fam.thread.counts
        slot.ordinals = fam.ranges.get(core.index, range(0))
        slot.started = True
        cells = list(slot.reservation)
        slot.reservation = ()
        base_n = counts.g + counts.d
        if len(cells) < base_n:
            try:
                cells.extend(core.regs.alloc_cells(base_n - len(cells)))
            except AllocationError as e:
                raise SimulationError(f"family {fam.fid} on core {core.index}: {e}")
        # the reservation as one window: globals, the first thread's
        # dependents, then the cells set aside for the first thread
        held = RegisterWindow(
            globals=tuple(cells[: counts.g]),
            dependents=tuple(cells[counts.g : base_n]),
            locals=tuple(cells[base_n:]),
            owned=tuple(cells),
        )
        keep = counts.s + counts.l if len(slot.ordinals) > 0 else 0
        core.regs.trim_window(
            held, RegisterCounts(g=counts.g, l=min(keep, len(held.locals)), d=counts.d)
        )
        base = held.globals + held.dependents
        slot.base = RegisterWindow(globals=held.globals, shareds=held.dependents, owned=base)
        slot.spare = held.locals
        self._emit(core.index, "FSTART", fid=fam.fid, threads=len(slot.ordinals))
        core.creation_queue.append(slot)
        if core.creating is None:
            self._next_creation(core)

    def _next_creation(self, core: Core) -> None:
        if not core.creation_queue:
            core.creating = None
            return
        slot = core.creation_queue.popleft()
        core.creating = slot
        self.chip.kernel.schedule(
            lambda: self._creation_tick(core, slot), self.cfg.creation_setup_cycles, label="create"
        )

    def _block(self, fam: FamilyContext) -> int:
        return fam.block if fam.block > 0 else self.cfg.thread_entries_per_core

    def _can_create(self, core: Core, fam: FamilyContext, slot: FamilySlot) -> bool:
        if slot.broken or slot.remaining <= 0 or slot.live >= self._block(fam):
            return False
        if core.live_threads >= self.cfg.thread_entries_per_core:
            return False
        assert fam.thread is not None
        counts = fam.thread.counts
        return core.regs.can_alloc(max(0, counts.s + counts.l - len(slot.spare)))

    def _creation_tick(self, core: Core, slot: FamilySlot) -> None:
        if core.slots.get(slot.fid) is not slot:
            # released while queued
            self._next_creation(core)
            return
        fam = self.families[slot.fid]
        if self._can_create(core, fam, slot):
            self._create_thread(core, fam, slot)
            self.chip.kernel.schedule(lambda: self._creation_tick(core, slot), 1, label="create")
            return
        slot.initial_done = True
        if slot.spare and slot.live == 0 and slot.remaining <= 0:
            core.regs.free_cells(slot.spare)
            slot.spare = ()
        if core.index == fam.cores[0] and fam.parent is not None:
            self._delegate(MessageKind.CREATE_ACK, core.index, fam.parent_core, fam.fid)
        self._next_creation(core)
        self.check_done(core, slot)

    def _create_thread(self, core: Core, fam: FamilyContext, slot: FamilySlot) -> ThreadContext:
        assert fam.thread is not None and slot.base is not None
        ordinal = slot.ordinals[slot.cursor]
        slot.cursor += 1
        pred = slot.last_window if fam.dependent and slot.last_window is not None else slot.base
        window = core.regs.alloc_window(fam.thread.counts, predecessor=pred, reserved=slot.spare)
        slot.spare = ()
        tid = self._next_tid
        self._next_tid += 1
        t = ThreadContext(
            tid=tid,
            core=core.index,
            fid=fam.fid,
            ordinal=ordinal,
            index=fam.indices[ordinal],
            code=fam.thread,
            window=window,
        )
        if fam.dependent:
            if slot.last_ordinal is not None:
                slot.chain[slot.last_ordinal].has_reader = True
                t.pred_ordinal = slot.last_ordinal
            slot.chain[ordinal] = ChainEntry(window.shareds)
        slot.last_ordinal = ordinal
        slot.last_window = window
        slot.live += 1
        fam.created += 1
        self._emit(core.index, "TCREATE", fid=fam.fid, tid=tid, idx=t.index, ord=ordinal)
        core.add_thread(t)
        return t

    def _refill(self, core: Core) -> None:
        # recycle freed contexts for families past their initial creation
        for fid in sorted(core.slots):
            slot = core.slots[fid]
            if not slot.initial_done:
                continue
            fam = self.families[fid]
            while self._can_create(core, fam, slot):
                self._create_thread(core, fam, slot)

    def on_retire(self, core: Core, t: ThreadContext) -> None:
        fam = self.families[t.fid]
        slot = core.slots[t.fid]
        core.regs.free_cells(t.window.locals)
        if fam.dependent:
            entry = slot.chain[t.ordinal]
            entry.owner_done = True
            touched = [t.ordinal]
            if t.pred_ordinal is not None:
                slot.chain[t.pred_ordinal].reader_done = True
                touched.append(t.pred_ordinal)
            for o in touched:
                if slot.chain[o].releasable:
                    core.regs.free_cells(slot.chain.pop(o).shareds)
        else:
            core.regs.free_cells(t.window.shareds)
            if slot.last_window is t.window:
                slot.last_window = None
        slot.live -= 1
        fam.terminated += 1
        self._refill(core)
        self._retry_parked(core)
        self.check_done(core, slot)

    # synchronization

    def check_done(self, core: Core, slot: FamilySlot) -> None:
        if slot.done_sent or not slot.started or not slot.initial_done:
            return
        if not slot.broken and slot.remaining > 0:
            return
        if slot.live > 0 or slot.pending_stores > 0:
            return
        fam = self.families[slot.fid]
        first, last = fam.bounds
        if core.index != first and not slot.token:
            return
        slot.done_sent = True
        if core.index < last:
            self._distribute(MessageKind.SYNC_TOKEN, core.index, fam.fid, Direction.NEXT, fam.bounds)
        elif fam.parent is None:
            self._family_synced(core, fam)
        else:
            self._delegate(MessageKind.SYNC_DONE, core.index, fam.parent_core, fam.fid)

    def _family_synced(self, core: Core, fam: FamilyContext) -> None:
        fam.state = FamilyState.SYNCED
        tid = fam.parent.tid if fam.parent is not None else -1
        self._emit(core.index, "FSYNC", fid=fam.fid, tid=tid)
        core.fill(fam.completion, 1)
        if fam.parent is None:
            self.chip.root_done = True
        elif fam.detached:
            self._release(core, fam)

    def needs_inline(self, fam: FamilyContext) -> bool:
        return fam.forceseq and fam.state is FamilyState.CREATED

    def sync_family(self, core: Core, t: ThreadContext, fid: int) -> Optional[SyncCell]:
        fam = self.family(fid)
        if fam.detached:
            raise ContractViolation(f"SYNC on detached family {fid}")
        if fam.state in (FamilyState.ALLOCATING, FamilyState.ALLOCATED, FamilyState.FAILED):
            raise ContractViolation(f"SYNC on family {fid}, which is {fam.state.value}")
        if not fam.sync_recorded:
            fam.sync_recorded = True
            self._emit(core.index, "SYNC", fid=fid, tid=t.tid)
        if fam.state in (FamilyState.SYNCED, FamilyState.RELEASED):
            return None
        return fam.completion

    def break_family(self, core: Core, t: ThreadContext) -> None:
        fam = self.family(t.fid)
        slot = core.slots[t.fid]
        if slot.broken:
            return
        slot.broken = True
        self._emit(core.index, "FBREAK", fid=fam.fid, tid=t.tid)
        first, last = fam.bounds
        if core.index < last:
            self._distribute(MessageKind.BREAK, core.index, fam.fid, Direction.NEXT, fam.bounds, dir=1)
        if core.index > first:
            self._distribute(MessageKind.BREAK, core.index, fam.fid, Direction.PREV, fam.bounds, dir=-1)

    def _on_break(self, core: Core, fam: FamilyContext, msg: Message) -> None:
        slot = core.slots.get(fam.fid)
        if slot is not None and not slot.broken:
            slot.broken = True
            self._emit(core.index, "FBREAK", fid=fam.fid, tid=-1)
        step = msg.field("dir")
        first, last = fam.bounds
        if step > 0 and core.index < last:
            self._distribute(MessageKind.BREAK, core.index, fam.fid, Direction.NEXT, fam.bounds, dir=1)
        elif step < 0 and core.index > first:
            self._distribute(MessageKind.BREAK, core.index, fam.fid, Direction.PREV, fam.bounds, dir=-1)
        if slot is not None:
            self.check_done(core, slot)

    # release

    def release_family(self, core: Core, t: ThreadContext, fid: int) -> None:
        fam = self.family(fid)
        if fam.state is FamilyState.FAILED:
            warn(f"RELEASE of family {fid}, whose allocation failed")
            return
        if fam.state is FamilyState.RELEASED:
            raise ContractViolation(f"family {fid} released twice")
        if fam.state in (FamilyState.ALLOCATING, FamilyState.CREATED) and not fam.detached:
            raise ContractViolation(f"RELEASE of family {fid} before it synchronized")
        if fam.detached:
            # released on its own when it completes
            return
        self._release(core, fam)

    def _release(self, core: Core, fam: FamilyContext) -> None:
        fam.state = FamilyState.RELEASED
        self._emit(core.index, "FRELEASE", fid=fam.fid)
        if fam.forceseq:
            core.regs.free_cells(fam.seq_owned + (fam.seq_base.owned if fam.seq_base else ()))
            fam.seq_owned = ()
            fam.seq_base = None
            return
        self._delegate(MessageKind.RELEASE, core.index, fam.cores[0], fam.fid)

    def _on_release(self, core: Core, fam: FamilyContext, msg: Message) -> None:
        self._forward(core, fam, msg)
        self._drop_slot(core, fam.fid)
        self._refill(core)
        self._retry_parked(core)

    # register access from the parent

    def put_register(
        self, core: Core, t: ThreadContext, fid: int, cls: RegisterClass, slot: int, value: int
    ) -> Optional[SyncCell]:
        fam = self.family(fid)
        if fam.state is not FamilyState.CREATED and not fam.forceseq:
            raise ContractViolation(f"writing a {cls.value} register of family {fid}, which is {fam.state.value}")
        assert fam.thread is not None
        if not 0 <= slot < fam.thread.counts.count(cls if cls is RegisterClass.GLOBAL else RegisterClass.DEPENDENT):
            raise ContractViolation(f"family {fid} has no {cls.value}{slot} argument")
        if fam.forceseq:
            if fam.seq_base is None:
                raise ContractViolation(f"writing arguments of family {fid} before it was created")
            core.write_cell(fam.seq_base.cells(cls)[slot], value)
            return None
        if not fam.ack.full:
            return fam.ack
        self._delegate(
            MessageKind.REG_WRITE,
            core.index,
            fam.cores[0],
            fid,
            cls=0 if cls is RegisterClass.GLOBAL else 1,
            slot=slot,
            value=value,
        )
        return None

    def _on_reg_write(self, core: Core, fam: FamilyContext, msg: Message) -> None:
        slot = core.slots.get(fam.fid)
        index = msg.field("slot")
        value = msg.field("value")
        if msg.field("cls") == 0:
            self._forward(core, fam, msg, cls=0, slot=index, value=value)
            if slot is not None and slot.base is not None:
                core.write_cell(slot.base.globals[index], value)
        elif slot is not None and slot.base is not None:
            core.write_cell(slot.base.shareds[index], value)

    def get_shared(
        self, core: Core, t: ThreadContext, fid: int, slot: int, dst: int
    ) -> Optional[SyncCell]:
        fam = self.family(fid)
        if fam.state not in (FamilyState.SYNCED, FamilyState.RELEASED):
            if fam.state is not FamilyState.CREATED:
                raise ContractViolation(f"reading a shared of family {fid}, which is {fam.state.value}")
            return fam.completion
        if fam.forceseq:
            core.write_cell(dst, self._read_final(core, fam.seq_final, slot, fid))
            return None
        gen = core.regs.cell(dst).generation
        core.regs.clear_cell(dst)
        self._delegate(
            MessageKind.REG_READ, core.index, fam.final_core, fid, slot=slot, reg=dst, gen=gen, reply=core.index
        )
        return None

    def _read_final(self, core: Core, cells: Tuple[int, ...], slot: int, fid: int) -> int:
        if not 0 <= slot < len(cells):
            warn(f"family {fid} has no shared {slot} to read, reading 0")
            return 0
        cell = core.regs.cell(cells[slot])
        if not cell.full:
            warn(f"shared {slot} of family {fid} was never written, reading 0")
            return 0
        return cell.value

    def _on_reg_read(self, core: Core, fam: FamilyContext, msg: Message) -> None:
        slot = core.slots.get(fam.fid)
        if slot is None:
            warn(f"shared of family {fam.fid} read after its release, reading 0")
            value = 0
        else:
            value = self._read_final(core, slot.final_shareds(), msg.field("slot"), fam.fid)
        self._delegate(
            MessageKind.REG_READ_REPLY,
            core.index,
            msg.field("reply"),
            fam.fid,
            slot=msg.field("slot"),
            value=value,
            reg=msg.field("reg"),
            gen=msg.field("gen"),
        )

    # sequential families

    def inline_base(self, fam: FamilyContext) -> RegisterWindow:
        if fam.seq_base is None:
            raise SimulationError(f"sequential family {fam.fid} has no argument registers")
        return fam.seq_base

    def inline_done(
        self,
        core: Core,
        t: ThreadContext,
        fam: FamilyContext,
        final: Tuple[int, ...],
        owned: Tuple[int, ...],
        iterations: int,
    ) -> None:
        fam.seq_final = final
        fam.seq_owned = owned
        fam.created = fam.terminated = iterations
        fam.state = FamilyState.SYNCED
        self._emit(core.index, "FSEQDONE", fid=fam.fid, tid=t.tid, iterations=iterations)
        if fam.detached:
            self._release(core, fam)

    # message dispatch

    def deliver(self, msg: Message) -> None:
        core = self._core(msg.dst)
        fam = self.family(msg.fid)
        kind = msg.kind
        if kind is MessageKind.ALLOC_REQ:
            self._inject(fam)
        elif kind is MessageKind.ALLOC_FORWARD:
            self._on_alloc_forward(core, fam, SweepPhase(msg.field("phase")))
        elif kind is MessageKind.ALLOC_ACK:
            self._on_alloc_ack(core, fam)
        elif kind is MessageKind.ALLOC_FAIL:
            self._on_alloc_fail(core, fam)
        elif kind is MessageKind.CONFIGURE:
            self._forward(
                core, fam, msg, start=fam.start, limit=fam.limit, step=fam.step, block=fam.block
            )
        elif kind is MessageKind.CREATE:
            self._on_create(core, fam, msg)
        elif kind is MessageKind.CREATE_ACK:
            core.fill(fam.ack, 1)
        elif kind is MessageKind.REG_WRITE:
            self._on_reg_write(core, fam, msg)
        elif kind is MessageKind.REG_READ:
            self._on_reg_read(core, fam, msg)
        elif kind is MessageKind.REG_READ_REPLY:
            core.write_cell(msg.field("reg"), msg.field("value"), msg.field("gen"))
        elif kind is MessageKind.SYNC_TOKEN:
            slot = core.slots.get(fam.fid)
            if slot is not None:
                slot.token = True
                self.check_done(core, slot)
        elif kind is MessageKind.SYNC_DONE:
            self._family_synced(core, fam)
        elif kind is MessageKind.RELEASE:
            self._on_release(core, fam, msg)
        elif kind is MessageKind.BREAK:
            self._on_break(core, fam, msg)
        else:
            raise ContractViolation(f"{kind.value} is not a family message")
