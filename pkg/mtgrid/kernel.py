"""
The discrete-event engine driving a chip: a global cycle clock and one
event queue per target. Each cycle every core steps, then due events fire
target by target in a fixed phase order
"""

import heapq
from enum import Enum
from typing import NamedTuple, Callable, Dict, List, Tuple, Optional, Protocol

from .exceptions import ContractViolation


class Target(Enum):
    # declaration order is the per-cycle phase order
    NETWORK = "network"
    MEMORY = "memory"
    CORE = "core"
    SEP = "sep"


class Termination(Enum):
    SYNC = "sync"
    DEADLOCK = "deadlock"
    LIMIT = "limit"


class Event(NamedTuple):
    due_cycle: int
    seq: int
    target: Target
    action: Callable[[], None]
    label: str = ""


class Model(Protocol):
    def step(self, cycle: int) -> None:
        ...

    def busy(self) -> bool:
        ...

    def done(self) -> bool:
        ...


class Kernel:
    def __init__(self) -> None:
        self.now = 0
        self._seq = 0
        self._queues: Dict[Target, List[Tuple[int, int, Event]]] = {
            t: [] for t in Target
        }

    def schedule(
        self,
        action: Callable[[], None],
        delay: int = 0,
        target: Target = Target.CORE,
        label: str = "",
    ) -> Event:
        """
        Queue action to fire delay cycles from now, after every event
        already queued for the same cycle and target
        """
        if delay < 0:
            raise ContractViolation(f"cannot schedule {label or action} {delay} cycles in the past")
        ev = Event(self.now + delay, self._seq, target, action, label)
        self._seq += 1
        heapq.heappush(self._queues[target], (ev.due_cycle, ev.seq, ev))
        return ev

    @property
    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def next_due(self) -> Optional[int]:
        heads = [q[0][0] for q in self._queues.values() if q]
        return min(heads) if heads else None

    def dispatch(self) -> int:
        """
        Fire every event due by now. Events scheduled while dispatching
        with no delay fire in this same call
        """
        fired = 0
        while True:
            progressed = False
            for target in Target:
                queue = self._queues[target]
                while queue and queue[0][0] <= self.now:
                    _, _, ev = heapq.heappop(queue)
                    ev.action()
                    fired += 1
                    progressed = True
            if not progressed:
                return fired

    def run(self, model: Model, until: Optional[int] = None) -> Tuple[int, Termination]:
        """
        Advance the clock until the model is done, nothing can make progress
        any more, or the clock reaches until. Cycles in which no core has work
        are skipped by jumping to the next due event
        """
        while True:
            if model.done():
                return self.now, Termination.SYNC
            if until is not None and self.now >= until:
                return self.now, Termination.LIMIT
            if not model.busy():
                nxt = self.next_due()
                if nxt is None:
                    return self.now, Termination.DEADLOCK
                if nxt > self.now:
                    self.now = nxt if until is None else min(nxt, until)
                    continue
            model.step(self.now)
            self.dispatch()
            self.now += 1
