"""
Trace checkers for the memory model

Within a thread memory operations complete in issue order. Across families
the ordering is weak, only three things are guaranteed:

  1. a created family sees every write its parent issued before creating it
  2. a family synchronizes only after all of its writes have completed
  3. the parent resumes after the synchronization point only once the
     family has synchronized
"""

from typing import NamedTuple, List, Dict, Tuple, Iterable, Optional

from .exceptions import TraceError
from .memory import MemOpRecord, MemOpKind
from .trace import TraceRecord


class FamilyEvent(NamedTuple):
    # "create" when the parent issues the create, "sync" when the parent
    # issues the synchronization, "synced" when the family completes at the parent
    kind: str
    cycle: int
    fid: int
    core: int
    tid: int


class Violation(NamedTuple):
    clause: str
    fid: int
    tid: int
    detail: str


_FAMILY_KINDS = {"FCREATE": "create", "SYNC": "sync", "FSYNC": "synced"}


def records_from_trace(trace: Iterable[TraceRecord]) -> List[MemOpRecord]:
    """
    Pair MEMISSUE/MEMDONE records into memory operations, operations still
    in flight at the end of the trace are left out
    """
    issued: Dict[int, TraceRecord] = {}
    done: Dict[int, TraceRecord] = {}
    for rec in trace:
        if rec.kind == "MEMISSUE":
            op = rec.number("op")
            if op in issued:
                raise TraceError(f"memory operation {op} issued twice")
            issued[op] = rec
        elif rec.kind == "MEMDONE":
            op = rec.number("op")
            if op not in issued:
                raise TraceError(f"memory operation {op} completes without being issued")
            if op in done:
                raise TraceError(f"memory operation {op} completes twice")
            done[op] = rec
    records: List[MemOpRecord] = []
    for op, iss in sorted(issued.items()):
        fin = done.get(op)
        if fin is None:
            continue
        try:
            kind = MemOpKind(iss.get("kind"))
        except ValueError:
            raise TraceError(f"memory operation {op} has unknown kind {iss.get('kind')}")
        if fin.cycle < iss.cycle:
            raise TraceError(f"memory operation {op} completes before it was issued")
        records.append(
            MemOpRecord(
                op=op,
                issue=iss.cycle,
                complete=fin.cycle,
                core=iss.core,
                tid=iss.number("tid"),
                fid=iss.number("fid"),
                kind=kind,
                address=iss.number("addr"),
                value=fin.number("value"),
            )
        )
    return records


def family_events_from_trace(trace: Iterable[TraceRecord]) -> List[FamilyEvent]:
    events: List[FamilyEvent] = []
    for rec in trace:
        kind = _FAMILY_KINDS.get(rec.kind)
        if kind is None:
            continue
        tid = rec.get("tid")
        events.append(
            FamilyEvent(
                kind, rec.cycle, rec.number("fid"), rec.core, int(tid) if tid is not None else -1
            )
        )
    return events


def _thread_order(records: List[MemOpRecord]) -> List[Violation]:
    violations: List[Violation] = []
    last: Dict[Tuple[int, int], MemOpRecord] = {}
    for rec in sorted(records, key=lambda r: (r.issue, r.op)):
        key = (rec.core, rec.tid)
        prev = last.get(key)
        if prev is not None and rec.complete < prev.complete:
            violations.append(
                Violation(
                    "thread-order",
                    rec.fid,
                    rec.tid,
                    f"op {rec.op} completed at {rec.complete}, before op {prev.op} issued earlier completed at {prev.complete}",
                )
            )
        last[key] = rec
    return violations


def check_weak_consistency(
    records: List[MemOpRecord], events: List[FamilyEvent]
) -> List[Violation]:
    """
    Check sequential order within every thread and the three family
    ordering clauses, at most one violation per family and clause
    """
    violations = _thread_order(records)

    creates: Dict[int, FamilyEvent] = {}
    syncs: Dict[int, FamilyEvent] = {}
    synced: Dict[int, FamilyEvent] = {}
    for ev in events:
        table = {"create": creates, "sync": syncs, "synced": synced}.get(ev.kind)
        if table is None:
            raise TraceError(f"unknown family event '{ev.kind}'")
        table.setdefault(ev.fid, ev)

    by_fid: Dict[int, List[MemOpRecord]] = {}
    by_thread: Dict[Tuple[int, int], List[MemOpRecord]] = {}
    for rec in records:
        by_fid.setdefault(rec.fid, []).append(rec)
        by_thread.setdefault((rec.core, rec.tid), []).append(rec)

    for fid, create in sorted(creates.items()):
        parent_ops = by_thread.get((create.core, create.tid), [])
        child_ops = sorted(by_fid.get(fid, []), key=lambda r: r.op)

        # 1: parent stores issued before the create complete before any child op issues
        before = [
            r.complete
            for r in parent_ops
            if r.kind is MemOpKind.STORE and r.issue <= create.cycle and r.fid != fid
        ]
        if before and child_ops:
            ready = max(before)
            early = next((r for r in child_ops if r.issue < ready), None)
            if early is not None:
                violations.append(
                    Violation(
                        "create",
                        fid,
                        early.tid,
                        f"op {early.op} issued at {early.issue}, parent writes complete at {ready}",
                    )
                )

        done = synced.get(fid)
        if done is None:
            continue

        # 2: every child store completes before the family synchronizes
        late = next(
            (r for r in child_ops if r.kind is MemOpKind.STORE and r.complete > done.cycle),
            None,
        )
        if late is not None:
            violations.append(
                Violation(
                    "sync",
                    fid,
                    late.tid,
                    f"store op {late.op} completed at {late.complete}, family synchronized at {done.cycle}",
                )
            )

        # 3: parent operations after its sync instruction wait for the synchronization
        sync = syncs.get(fid)
        if sync is None:
            continue
        early_parent: Optional[MemOpRecord] = next(
            (
                r
                for r in sorted(parent_ops, key=lambda r: r.op)
                if sync.cycle < r.issue < done.cycle and r.fid != fid
            ),
            None,
        )
        if early_parent is not None:
            violations.append(
                Violation(
                    "resume",
                    fid,
                    early_parent.tid,
                    f"parent op {early_parent.op} issued at {early_parent.issue}, family synchronized at {done.cycle}",
                )
            )
    return violations


def replay_memory(
    records: List[MemOpRecord], initial: Optional[Dict[int, int]] = None
) -> List[Violation]:
    """
    Replay the operations in completion order against a sequential memory,
    every load must return the latest completed store (or initial value)
    """
    memory: Dict[int, int] = dict(initial or {})
    violations: List[Violation] = []
    for rec in sorted(records, key=lambda r: (r.complete, r.op)):
        if rec.kind is MemOpKind.STORE:
            memory[rec.address] = rec.value
        else:
            expect = memory.get(rec.address, 0)
            if rec.value != expect:
                violations.append(
                    Violation(
                        "memory",
                        rec.fid,
                        rec.tid,
                        f"load op {rec.op} of address {rec.address} returned {rec.value}, memory holds {expect}",
                    )
                )
    return violations


def check_trace(
    trace: List[TraceRecord], initial: Optional[Dict[int, int]] = None
) -> List[Violation]:
    if initial is None:
        initial = {r.number("addr"): r.number("value") for r in trace if r.kind == "DATA"}
    records = records_from_trace(trace)
    return check_weak_consistency(
        records, family_events_from_trace(trace)
    ) + replay_memory(records, initial)
