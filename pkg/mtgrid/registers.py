"""
Synchronizing register files

Every register is an I-structure cell: reading an empty cell suspends the
reader on the cell, writing it fills the cell and releases every suspended
reader in arrival order
"""

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, List, Tuple, Optional, Union, Deque, Iterable, Sequence, Set

from .exceptions import AllocationError, ContractViolation
from .typehelpers import wrap_word


class CellState(Enum):
    EMPTY = "empty"
    FULL = "full"


class ThreadRef(NamedTuple):
    core: int
    tid: int


class SuspendedSignal(NamedTuple):
    cell: int


class SyncCell:
    __slots__ = ("index", "label", "state", "value", "waiters", "generation")

    def __init__(self, index: int, label: Optional[str] = None) -> None:
        # cells outside a register file (family completion, store fences) carry a label
        self.index = index
        self.label = label
        self.state = CellState.EMPTY
        self.value = 0
        self.waiters: Deque[ThreadRef] = deque()
        # bumped on every allocation, so completions for a previous
        # owner of the cell can be recognized and dropped
        self.generation = 0

    @property
    def name(self) -> str:
        return self.label if self.label is not None else f"r{self.index}"

    @property
    def full(self) -> bool:
        return self.state is CellState.FULL

    def read(self, reader: ThreadRef) -> Union[int, SuspendedSignal]:
        if self.state is CellState.FULL:
            return self.value
        self.waiters.append(reader)
        return SuspendedSignal(self.index)

    def write(self, value: int) -> List[ThreadRef]:
        self.state = CellState.FULL
        self.value = wrap_word(value)
        woken = list(self.waiters)
        self.waiters.clear()
        return woken

    def clear(self) -> None:
        self.state = CellState.EMPTY

    def __repr__(self) -> str:
        if self.full:
            return f"SyncCell({self.name}=Full({self.value}))"
        return f"SyncCell({self.name}=Empty, waiters={list(self.waiters)})"


class RegisterClass(Enum):
    GLOBAL = "g"
    SHARED = "s"
    LOCAL = "l"
    DEPENDENT = "d"


class RegisterCounts(NamedTuple):
    g: int = 0
    s: int = 0
    l: int = 0  # noqa: E741
    d: int = 0

    @property
    def total(self) -> int:
        return self.g + self.s + self.l + self.d

    def count(self, cls: RegisterClass) -> int:
        val: int = getattr(self, cls.value)
        return val


@dataclass
class RegisterWindow:
    """
    The cells a thread addresses, per register class. Cells listed in owned
    were allocated for this window, the rest alias another window
    """

    globals: Tuple[int, ...] = ()
    shareds: Tuple[int, ...] = ()
    locals: Tuple[int, ...] = ()
    dependents: Tuple[int, ...] = ()
    owned: Tuple[int, ...] = field(default=())

    def cells(self, cls: RegisterClass) -> Tuple[int, ...]:
        return {
            RegisterClass.GLOBAL: self.globals,
            RegisterClass.SHARED: self.shareds,
            RegisterClass.LOCAL: self.locals,
            RegisterClass.DEPENDENT: self.dependents,
        }[cls]

    def base(self, cls: RegisterClass) -> int:
        cells = self.cells(cls)
        return cells[0] if cells else -1

    def count(self, cls: RegisterClass) -> int:
        return len(self.cells(cls))

    def resolve(self, cls: RegisterClass, slot: int) -> int:
        cells = self.cells(cls)
        if not 0 <= slot < len(cells):
            raise ContractViolation(
                f"{cls.value}{slot} is outside the window ({len(cells)} {cls.value} registers)"
            )
        return cells[slot]

    @property
    def counts(self) -> RegisterCounts:
        return RegisterCounts(
            g=len(self.globals),
            s=len(self.shareds),
            l=len(self.locals),
            d=len(self.dependents),
        )


class RegisterFile:
    """
    One core's synchronizing register file. Free cells are handed out
    lowest index first
    """

    def __init__(self, size: int) -> None:
        self.size = size
        self.cells: List[SyncCell] = [SyncCell(i) for i in range(size)]
        self._free: List[int] = list(range(size))
        heapq.heapify(self._free)
        self._allocated: Set[int] = set()

    @property
    def free_count(self) -> int:
        return len(self._free)

    @property
    def allocated_count(self) -> int:
        return len(self._allocated)

    def cell(self, index: int) -> SyncCell:
        if not 0 <= index < self.size:
            raise ContractViolation(
                f"register r{index} is outside the {self.size}-entry register file"
            )
        return self.cells[index]

    def read_cell(self, index: int, reader: ThreadRef) -> Union[int, SuspendedSignal]:
        return self.cell(index).read(reader)

    def write_cell(
        self, index: int, value: int, generation: Optional[int] = None
    ) -> List[ThreadRef]:
        """
        Fill a cell and return the readers it releases. A write tagged with
        a stale generation (the cell was freed and reallocated since the
        operation was issued) is dropped
        """
        cell = self.cell(index)
        if generation is not None and generation != cell.generation:
            return []
        return cell.write(value)

    def clear_cell(self, index: int) -> None:
        self.cell(index).clear()

    def _reset(self, idx: int) -> None:
        cell = self.cells[idx]
        cell.state = CellState.EMPTY
        cell.value = 0
        cell.waiters.clear()
        cell.generation += 1

    def alloc_cells(self, n: int) -> Tuple[int, ...]:
        if n > len(self._free):
            raise AllocationError(
                f"requested {n} registers, {len(self._free)} of {self.size} free"
            )
        taken = tuple(heapq.heappop(self._free) for _ in range(n))
        for idx in taken:
            self._reset(idx)
            self._allocated.add(idx)
        return taken

    def free_cells(self, cells: Iterable[int]) -> int:
        freed = 0
        for idx in cells:
            if idx not in self._allocated:
                raise ContractViolation(f"register r{idx} freed while not allocated")
            self._allocated.discard(idx)
            cell = self.cells[idx]
            cell.generation += 1
            heapq.heappush(self._free, idx)
            freed += 1
        return freed

    def can_alloc(self, n: int) -> bool:
        return n <= len(self._free)

    def alloc_window(
        self,
        counts: RegisterCounts,
        predecessor: Optional[RegisterWindow] = None,
        reserved: Sequence[int] = (),
    ) -> RegisterWindow:
        """
        Allocate a thread's window. Without a predecessor every class is
        fresh. With one, the globals are the predecessor's and the
        dependents alias the predecessor's shareds, only the shareds and
        locals are fresh. Cells in reserved (already allocated to the
        caller) are used before the free pool
        """
        if predecessor is None:
            need = counts.total
        else:
            need = counts.s + counts.l
            if counts.d > len(predecessor.shareds):
                raise ContractViolation(
                    f"{counts.d} dependents cannot alias {len(predecessor.shareds)} shareds"
                )
        pre = tuple(reserved[:need])
        surplus = tuple(reserved[need:])
        fresh = pre + self.alloc_cells(need - len(pre))
        for idx in pre:
            self._reset(idx)
        if surplus:
            self.free_cells(surplus)
        if predecessor is None:
            g, rest = fresh[: counts.g], fresh[counts.g :]
            d, rest = rest[: counts.d], rest[counts.d :]
            return RegisterWindow(
                globals=g,
                shareds=rest[: counts.s],
                locals=rest[counts.s :],
                dependents=d,
                owned=fresh,
            )
        return RegisterWindow(
            globals=predecessor.globals[: counts.g],
            shareds=fresh[: counts.s],
            locals=fresh[counts.s :],
            dependents=predecessor.shareds[: counts.d],
            owned=fresh,
        )

    def trim_window(self, window: RegisterWindow, used: RegisterCounts) -> int:
        """
        Return each class's unused cells to the free pool, shrinking the window

        >>> rf = RegisterFile(64)
        >>> w = rf.alloc_window(RegisterCounts(l=31))
        >>> rf.trim_window(w, RegisterCounts(l=15)), rf.free_count
        (16, 49)
        """
        surplus: List[int] = []
        kept = {}
        for cls in RegisterClass:
            cells = window.cells(cls)
            want = used.count(cls)
            if want > len(cells):
                raise ContractViolation(
                    f"trimming to {want} {cls.value} registers, only {len(cells)} allocated"
                )
            kept[cls] = cells[:want]
            surplus.extend(idx for idx in cells[want:] if idx in window.owned)
        window.globals = kept[RegisterClass.GLOBAL]
        window.shareds = kept[RegisterClass.SHARED]
        window.locals = kept[RegisterClass.LOCAL]
        window.dependents = kept[RegisterClass.DEPENDENT]
        gone = set(surplus)
        window.owned = tuple(idx for idx in window.owned if idx not in gone)
        return self.free_cells(surplus)
