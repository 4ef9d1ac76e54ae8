import io
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import pytest

from mtgrid.assembler import assemble
from mtgrid.chip import Chip, RunResult
from mtgrid.config import ChipConfig
from mtgrid.exceptions import ConfigError, ContractViolation
from mtgrid.kernel import Termination
from mtgrid.options import options
from mtgrid.registers import RegisterFile
from mtgrid.stats import emit_stats, stats_from_trace
from mtgrid.trace import TraceRecord, emit_trace, load_trace

PROGRAMS = Path(__file__).parent / "programs"


def _run(
    source: str,
    cfg: Optional[ChipConfig] = None,
    max_cycles: Optional[int] = None,
    seq_fallback: bool = False,
) -> Tuple[Chip, RunResult]:
    chip = Chip(cfg or ChipConfig(), assemble(source), seq_fallback=seq_fallback)
    return chip, chip.run(max_cycles)


def _program(name: str) -> str:
    return (PROGRAMS / f"{name}.mtasm").read_text()


def _of(result: RunResult, record_kind: str, **match: object) -> List[TraceRecord]:
    return [
        r
        for r in result.trace
        if r.kind == record_kind and all(r.get(k) == str(v) for k, v in match.items())
    ]


def _matmul_oracle(data: Dict[int, int]) -> List[List[int]]:
    return [
        [sum(data[i * 16 + k] * data[256 + k * 16 + j] for k in range(16)) for j in range(16)]
        for i in range(16)
    ]


@pytest.mark.parametrize("name", ["matmul", "matmul_seq"])
def test_matmul(name: str) -> None:
    chip, result = _run(_program(name))
    assert result.reason is Termination.SYNC
    expect = _matmul_oracle(dict(chip.program.data))
    got = [[chip.memory.state.read(512 + i * 16 + j) for j in range(16)] for i in range(16)]
    assert got == expect
    # the resource service handed out a place and took it back
    assert result.stats.sep_requests == 2
    assert result.stats.sep_failures == 0


def test_matmul_sequential_runs_on_one_core() -> None:
    _, result = _run(_program("matmul_seq"))
    assert len(_of(result, "FSEQDONE")) == 1 + 16 + 16 * 16
    assert {r.core for r in _of(result, "ISSUE")} == {0}
    # only the root thread was ever created
    assert len(_of(result, "TCREATE")) == 1


def test_prefix_sum_dependent_chain() -> None:
    _, result = _run(_program("prefix_sum"))
    assert result.output == ["5050"]
    creates = _of(result, "TCREATE", fid=2)
    assert len(creates) == 100
    # dependent families run on the first core of their place
    assert {r.core for r in creates} == {0}
    assert [r.number("idx") for r in creates] == list(range(1, 101))
    # GETS reads the final shared with a request/reply pair
    (read,) = _of(result, "SEND", kind="RegRead")
    (reply,) = _of(result, "SEND", kind="RegReadReply")
    assert read.cycle < reply.cycle


def test_reservation_trimmed_through_register_file(monkeypatch: pytest.MonkeyPatch) -> None:
    freed: List[int] = []
    trim = RegisterFile.trim_window

    def counting(self: RegisterFile, *args: object) -> int:
        n = trim(self, *args)  # type: ignore[arg-type]
        freed.append(n)
        return n

    monkeypatch.setattr(RegisterFile, "trim_window", counting)
    _, result = _run(_program("prefix_sum"))
    assert result.output == ["5050"]
    # of 31 reserved: main keeps 2 locals, step keeps its dependent, its
    # shared and its local on core 0 and only the dependent elsewhere
    assert freed == [29, 28, 30, 30, 30]


def test_memory_records_name_the_operation() -> None:
    source = """
    .thread main g=0 s=0 l=1 d=0
        ST #7, #900
        LD l0, #900
        PRINT l0
        END
    """
    _, result = _run(source)
    assert result.output == ["7"]
    (store,) = _of(result, "MEMISSUE", kind="store")
    (load,) = _of(result, "MEMISSUE", kind="load")
    assert store.get("addr") == load.get("addr") == "900"
    assert store.cycle < load.cycle


def test_latency_hidden_by_threads() -> None:
    _, result = _run(_program("latency"))
    stats = result.stats
    assert stats.issued == 256 * 13 + 6
    assert stats.cores[0].ipc >= 0.8
    assert stats.cycles <= 1.25 * (stats.issued + 100 + 50)
    assert dict((m.name, m.count) for m in stats.memory)["offchip"] == 256


def test_latency_exposed_by_single_thread() -> None:
    source = _program("latency").replace(
        "SETLIMIT l0, #256", "SETLIMIT l0, #256\n    SETBLOCK l0, #1"
    )
    _, result = _run(source, ChipConfig(fairness_quantum=0))
    assert result.reason is Termination.SYNC
    assert result.cycles > 256 * 100


WORKERS = """
.thread main g=0 s=0 l=1 d=0
    ALLOCATE l0, #4, normal, normal
    SETLIMIT l0, #40
    SETBLOCK l0, #5
    CREI l0, work
    SYNC l0
    RELEASE l0
    END

.thread work g=0 s=0 l=2 d=0
    GETIDX l0
    ADD l0, l0, #2000
    LD l1, l0
    ADD l1, l1, #1
    END
"""


def test_distribution_and_block() -> None:
    _, result = _run(WORKERS)
    creates = _of(result, "TCREATE", fid=2)
    per_core = {c: 0 for c in range(4)}
    for r in creates:
        per_core[r.core] += 1
    assert per_core == {0: 10, 1: 10, 2: 10, 3: 10}
    # contiguous index ranges, core 1 starts at 10
    assert sorted(r.number("idx") for r in creates if r.core == 1) == list(range(10, 20))

    live = {c: 0 for c in range(4)}
    for r in result.trace:
        if r.get("fid") != "2":
            continue
        if r.kind == "TCREATE":
            live[r.core] += 1
            assert live[r.core] <= 5
        elif r.kind == "TRETIRE":
            live[r.core] -= 1
    assert live == {0: 0, 1: 0, 2: 0, 3: 0}


@pytest.mark.parametrize("n", [1, 10, 64])
def test_creation_timing(n: int) -> None:
    source = f"""
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #0, normal, normal
        SETLIMIT l0, #{n}
        CREI l0, leaf
        SYNC l0
        RELEASE l0
        END
    .thread leaf
        END
    """
    _, result = _run(source, ChipConfig(num_cores=1))
    (start,) = _of(result, "FSTART", fid=2)
    creates = _of(result, "TCREATE", fid=2)
    assert [r.cycle - start.cycle for r in creates] == [4 + i for i in range(n)]
    # a thread can issue once its first instruction is fetched
    (first_ready,) = _of(result, "TREADY", tid=creates[0].number("tid"))
    assert first_ready.cycle == creates[0].cycle + 2


def test_alu_issue_timing() -> None:
    adds = "\n".join("    ADD l0, l0, #1" for _ in range(9))
    _, result = _run(f".thread main g=0 s=0 l=1 d=0\n    MOV l0, #0\n{adds}\n    PRINT l0\n    END")
    assert result.output == ["9"]
    (fill,) = _of(result, "FILL")
    issues = _of(result, "ISSUE")
    assert len(issues) == 12
    # one fill, then one instruction every cycle
    assert issues[0].cycle - fill.cycle == 5
    assert [r.cycle for r in issues] == list(range(issues[0].cycle, issues[0].cycle + 12))
    assert result.stats.cores[0].issued == 12


def _spinners(threads: int) -> str:
    return f"""
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #0, normal, normal
        SETLIMIT l0, #{threads}
        CREI l0, spin
        SYNC l0
        RELEASE l0
        END
    .thread spin g=0 s=0 l=1 d=0
        MOV l0, #30
    loop:
        SUB l0, l0, #1
        BNE l0, #0, loop
        END
    """


def _bursts(result: RunResult, tids: Set[int]) -> List[Tuple[int, int]]:
    bursts: List[Tuple[int, int]] = []
    for r in _of(result, "ISSUE"):
        tid = r.number("tid")
        if bursts and bursts[-1][0] == tid:
            bursts[-1] = (tid, bursts[-1][1] + 1)
        else:
            bursts.append((tid, 1))
    return [b for b in bursts if b[0] in tids]


def test_fairness_quantum_alternates_threads() -> None:
    _, result = _run(_spinners(2))
    assert result.reason is Termination.SYNC
    tids = {r.number("tid") for r in _of(result, "TCREATE", fid=2)}
    assert len(tids) == 2
    lengths = [n for _, n in _bursts(result, tids)]
    assert sum(lengths) == 2 * 62
    assert max(lengths) == 16
    assert len(lengths) >= 4


def test_lone_thread_keeps_running_past_quantum() -> None:
    _, result = _run(_spinners(1))
    assert result.reason is Termination.SYNC
    (create,) = _of(result, "TCREATE", fid=2)
    tid = create.number("tid")
    issued = [r.cycle for r in _of(result, "ISSUE", tid=tid)]
    assert len(issued) == 62
    assert issued == list(range(issued[0], issued[0] + 62))
    assert len(_of(result, "SWITCH", tid=tid)) == 1


def test_waiters_wake_in_suspension_order() -> None:
    source = """
    .thread main g=0 s=0 l=2 d=0
        ALLOCATE l0, #0, normal, normal
        SETLIMIT l0, #2
        CREI l0, bump
        MOV l1, #40
    spin:
        SUB l1, l1, #1
        BNE l1, #0, spin
        PUTG l0, #0, #5
        SYNC l0
        RELEASE l0
        END
    .thread bump g=1 s=0 l=1 d=0
        ADD l0, g0, #1
        END
    """
    _, result = _run(source)
    assert result.reason is Termination.SYNC
    tids = [r.number("tid") for r in _of(result, "TCREATE", fid=2)]
    suspends = [r for r in _of(result, "SUSPEND") if r.number("tid") in tids]
    wakes = [r for r in _of(result, "WAKE") if r.number("tid") in tids]
    assert [r.number("tid") for r in suspends] == tids
    assert [r.number("tid") for r in wakes] == tids
    # one global cell, written once
    assert len({r.get("cell") for r in suspends + wakes}) == 1
    assert wakes[0].cycle == wakes[1].cycle
    assert max(r.cycle for r in suspends) < wakes[0].cycle


def test_root_family_setup() -> None:
    _, result = _run("main:\n    END")
    assert result.reason is Termination.SYNC
    (start,) = _of(result, "FSTART", fid=1)
    (create,) = _of(result, "TCREATE", fid=1)
    assert (start.cycle, create.cycle) == (0, 4)
    assert result.cycles < 20


@pytest.mark.parametrize("placeid,cores", [(1, 1), (2, 2), (4, 4)])
def test_allocation_round_trip(placeid: int, cores: int) -> None:
    source = f"""
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #{placeid}, normal, normal
        RELEASE l0
        END
    """
    _, result = _run(source)
    (sent,) = _of(result, "SEND", kind="AllocReq")
    (alloc,) = _of(result, "FALLOC", fid=2)
    assert alloc.number("size") == cores
    assert alloc.cycle - sent.cycle == 4 * cores + 2


def _crowded(strategy: str, tail: str) -> str:
    return f"""
    .thread main g=0 s=0 l=4 d=0
        ALLOCATE l0, #5, normal, normal
        ALLOCATE l1, #5, normal, normal
        ALLOCATE l2, #4, normal, {strategy}
        {tail}
        RELEASE l0
        RELEASE l1
        END
    .thread step g=0 s=1 l=1 d=1
        GETIDX l0
        ADD s0, d0, l0
        END
    """


CROWDED = ChipConfig(family_entries_per_core=2)


def test_exact_allocation_fails() -> None:
    with pytest.warns(UserWarning, match="allocation of family 4 on cores 0..3 failed"):
        _, result = _run(_crowded("exact", "PRINT l2"), CROWDED)
    assert result.output == ["0"]
    assert len(_of(result, "FALLOCFAIL", fid=4)) == 1


def test_normal_allocation_halves_the_place() -> None:
    _, result = _run(_crowded("normal", "PRINT l2\n        RELEASE l2"), CROWDED)
    (retry,) = _of(result, "FRETRY", fid=4)
    assert retry.number("size") == 2
    (alloc,) = _of(result, "FALLOC", fid=4)
    assert (alloc.number("start"), alloc.number("size")) == (0, 2)
    assert result.output == ["4"]


def test_balanced_allocation_picks_least_loaded_core() -> None:
    # entries when the balanced sweep runs: three on core 0 (the root among them), one on core 1,
    # two on core 2, one on core 3
    source = """
    .thread main g=0 s=0 l=8 d=0
        ALLOCATE l0, #1, normal, normal
        ALLOCATE l1, #1, normal, normal
        ALLOCATE l2, #3, normal, normal
        ALLOCATE l3, #5, normal, normal
        ALLOCATE l4, #5, normal, normal
        ALLOCATE l5, #7, normal, normal
        ADD l7, l0, l1
        ADD l7, l2, l3
        ADD l7, l4, l5
        ALLOCATE l6, #4, normal, balanced
        RELEASE l6
        RELEASE l0
        RELEASE l1
        RELEASE l2
        RELEASE l3
        RELEASE l4
        RELEASE l5
        END
    """
    _, result = _run(source)
    assert result.reason is Termination.SYNC
    starts = {r.number("fid"): r.number("start") for r in _of(result, "FALLOC")}
    assert starts == {2: 0, 3: 0, 4: 1, 5: 2, 6: 2, 7: 3, 8: 1}
    (alloc,) = _of(result, "FALLOC", fid=8)
    assert alloc.number("size") == 1


def test_single_allocation_takes_first_core() -> None:
    source = """
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #4, normal, single
        RELEASE l0
        END
    """
    _, result = _run(source)
    (alloc,) = _of(result, "FALLOC", fid=2)
    assert (alloc.number("start"), alloc.number("size")) == (0, 1)


def test_suspend_allocation_parks_until_release() -> None:
    source = """
    .thread main g=0 s=0 l=3 d=0
        ALLOCATE l0, #1, normal, normal
        MOV l2, l0
        ALLOCATE l1, #1, suspend, normal
        MOV l2, #20
    spin:
        SUB l2, l2, #1
        BNE l2, #0, spin
        RELEASE l0
        MOV l2, l1
        RELEASE l1
        END
    """
    _, result = _run(source, CROWDED)
    assert result.reason is Termination.SYNC
    (park,) = _of(result, "FPARK", fid=3)
    (release,) = _of(result, "FRELEASE", fid=2)
    (unpark,) = _of(result, "FUNPARK", fid=3)
    (alloc,) = _of(result, "FALLOC", fid=3)
    assert park.cycle < release.cycle < unpark.cycle < alloc.cycle
    assert (alloc.number("start"), alloc.number("size")) == (0, 1)
    assert _of(result, "FALLOCFAIL") == []


def test_release_returns_family_entries() -> None:
    source = """
    .thread main g=0 s=0 l=2 d=0
        ALLOCATE l0, #4, normal, normal
        SETLIMIT l0, #8
        CREI l0, leaf
        SYNC l0
        RELEASE l0
        MOV l1, #20
    spin:
        SUB l1, l1, #1
        BNE l1, #0, spin
        END
    .thread leaf
        END
    """
    chip, result = _run(source)
    assert result.reason is Termination.SYNC
    assert {r.core for r in _of(result, "FSTART", fid=2)} == {0, 1, 2, 3}
    # only the root family is left
    assert [c.family_entries_used for c in chip.cores] == [1, 0, 0, 0]
    assert [c.regs.allocated_count for c in chip.cores[1:]] == [0, 0, 0]


def test_sequential_fallback() -> None:
    body = """SETSTART l2, #1
        SETLIMIT l2, #11
        CREI l2, step
        PUTS l2, #0
        SYNC l2
        GETS l2, l3
        PRINT l3
        RELEASE l2"""
    _, result = _run(_crowded("exact", body), CROWDED, seq_fallback=True)
    assert result.output == ["55"]
    assert len(_of(result, "FALLOCFAIL", fid=4)) == 1
    (done,) = _of(result, "FSEQDONE", fid=4)
    assert done.number("iterations") == 10


def test_sequential_fallback_from_options() -> None:
    with options("SEQ_FALLBACK"):
        chip = Chip(CROWDED, assemble(_crowded("exact", "PRINT l2")))
    assert chip.protocol.seq_fallback


def test_forceseq_empty_range() -> None:
    source = """
    .thread main g=0 s=0 l=2 d=0
        ALLOCATE l0, #1, normal, normal, forceseq
        SETLIMIT l0, #0
        CREI l0, step
        PUTS l0, #42
        SYNC l0
        GETS l0, l1
        PRINT l1
        RELEASE l0
        END
    .thread step g=0 s=1 l=1 d=1
        GETIDX l0
        ADD s0, d0, l0
        END
    """
    _, result = _run(source)
    assert result.output == ["42"]
    (done,) = _of(result, "FSEQDONE", fid=2)
    assert done.number("iterations") == 0


EXCLUSIVE = """
.thread main g=0 s=0 l=1 d=0
    ALLOCATE l0, #4, normal, normal
    SETLIMIT l0, #2
    CREI l0, racer
    SYNC l0
    RELEASE l0
    END

.thread racer g=0 s=0 l=1 d=0
    ALLOCATE l0, #3, exclusive, normal
    CREI l0, crit
    SYNC l0
    RELEASE l0
    END

.thread crit g=0 s=0 l=1 d=0
    MOV l0, #20
loop:
    SUB l0, l0, #1
    BNE l0, #0, loop
    END
"""


def test_exclusive_families_never_overlap() -> None:
    _, result = _run(EXCLUSIVE)
    assert result.reason is Termination.SYNC
    crit = [r.number("fid") for r in _of(result, "FCREATE", thread="crit")]
    assert len(crit) == 2
    spans = []
    for fid in crit:
        creates = _of(result, "TCREATE", fid=fid)
        retires = _of(result, "TRETIRE", fid=fid)
        assert {r.core for r in creates} == {1}
        spans.append((creates[0].cycle, retires[-1].cycle))
    spans.sort()
    assert spans[0][1] < spans[1][0]
    # the loser waited for the exclusive context
    assert len(_of(result, "FPARK")) == 1
    assert len(_of(result, "FUNPARK")) == 1


BREAKER = """
.thread main g=0 s=0 l=1 d=0
    ALLOCATE l0, #4, normal, normal
    SETLIMIT l0, #1000
    CREI l0, brk
    SYNC l0
    RELEASE l0
    END

.thread brk g=0 s=0 l=1 d=0
    GETIDX l0
    BNE l0, #3, done
    BREAK
done:
    END
"""


def test_break_stops_creation() -> None:
    _, result = _run(BREAKER)
    assert result.reason is Termination.SYNC
    broken: Set[int] = set()
    created = 0
    for r in result.trace:
        if r.get("fid") != "2":
            continue
        if r.kind == "FBREAK":
            broken.add(r.core)
        elif r.kind == "TCREATE":
            assert r.core not in broken
            created += 1
    assert broken == {0, 1, 2, 3}
    assert created < 1000
    (origin,) = [r for r in _of(result, "FBREAK", fid=2) if r.get("tid") != "-1"]
    assert origin.core == 0
    assert len(_of(result, "FSYNC", fid=2)) == 1


def test_detached_family() -> None:
    chip, result = _run(_program("detached"))
    assert result.output == ["7"]
    assert [chip.memory.state.read(800 + i) for i in range(4)] == [1, 2, 3, 4]
    # released on its own, never synchronized by main
    assert len(_of(result, "FRELEASE", fid=2)) == 1
    assert _of(result, "SYNC", fid=2) == []


def test_detached_sequential_family_runs_at_end() -> None:
    source = """
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #1, normal, normal, forceseq
        SETLIMIT l0, #3
        DETACH l0, fill
        END
    .thread fill g=0 s=0 l=2 d=0
        GETIDX l0
        ADD l1, l0, #1
        ADD l0, l0, #800
        ST l1, l0
        END
    """
    chip, result = _run(source)
    assert [chip.memory.state.read(800 + i) for i in range(3)] == [1, 2, 3]
    (done,) = _of(result, "FSEQDONE", fid=2)
    assert done.number("iterations") == 3
    assert len(_of(result, "FRELEASE", fid=2)) == 1


def test_sync_on_detached_family() -> None:
    source = """
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #1, normal, normal
        DETACH l0, leaf
        SYNC l0
        END
    .thread leaf
        END
    """
    with pytest.raises(ContractViolation, match="SYNC on detached family 2"):
        _run(source)


def test_zero_step() -> None:
    source = """
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #1, normal, normal
        SETSTEP l0, #0
        CREI l0, leaf
        END
    .thread leaf
        END
    """
    with pytest.raises(ConfigError, match="never reaches its limit"):
        _run(source)


def test_division() -> None:
    source = """
    .thread main g=0 s=0 l=2 d=0
        MOV l0, #-7
        DIV l1, l0, #2
        PRINT l1
        MOD l1, l0, #2
        PRINT l1
        DIV l1, l0, #0
        PRINT l1
        END
    """
    with pytest.warns(UserWarning, match="divides by zero"):
        _, result = _run(source)
    assert result.output == ["-3", "-1", "0"]


def test_deadlock() -> None:
    _, result = _run(".thread main g=0 s=0 l=2 d=0\n    ADD l0, l1, #1\n    END")
    assert result.reason is Termination.DEADLOCK
    (blocked,) = result.blocked
    assert (blocked.core, blocked.thread) == (0, "main")
    assert len(_of(result, "BLOCKED")) == 1
    (halt,) = _of(result, "HALT")
    assert halt.get("reason") == "deadlock"


def test_circular_wait_lists_every_waiter() -> None:
    # main waits for the family to finish, the family waits for the
    # global main would write after it
    source = """
    .thread main g=0 s=0 l=1 d=0
        ALLOCATE l0, #0, normal, normal
        CREI l0, worker
        SYNC l0
        PUTG l0, #0, #1
        RELEASE l0
        END
    .thread worker g=1 s=0 l=1 d=0
        ADD l0, g0, #1
        END
    """
    _, result = _run(source)
    assert result.reason is Termination.DEADLOCK
    assert sorted(b.thread for b in result.blocked) == ["main", "worker"]
    assert {b.core for b in result.blocked} == {0}
    assert len({b.cell for b in result.blocked}) == 2
    assert len(_of(result, "BLOCKED")) == 2


def test_cycle_limit() -> None:
    _, result = _run("main:\n    BR main\n    END", max_cycles=100)
    assert result.reason is Termination.LIMIT
    assert result.cycles == 100


def _emitted(result: RunResult) -> Tuple[str, str]:
    trace, stats = io.StringIO(), io.StringIO()
    emit_trace(result.trace, trace)
    emit_stats(result.stats, stats)
    return trace.getvalue(), stats.getvalue()


@pytest.mark.parametrize("path", sorted(PROGRAMS.glob("*.mtasm")), ids=lambda p: p.stem)
def test_deterministic(path: Path) -> None:
    source = path.read_text()
    _, first = _run(source)
    _, second = _run(source)
    assert _emitted(first) == _emitted(second)


def test_stats_from_trace_text() -> None:
    _, result = _run(_program("prefix_sum"))
    text = "\n".join(r.format() for r in result.trace)
    assert stats_from_trace(load_trace(text)) == result.stats
    assert result.stats.cycles == result.cycles
    assert sum(c.threads_created for c in result.stats.cores) == 101


@pytest.mark.parametrize("path", sorted(PROGRAMS.glob("*.mtasm")), ids=lambda p: p.stem)
def test_corpus_is_weakly_consistent(path: Path) -> None:
    with options("CHECK_CONSISTENCY"):
        _, result = _run(path.read_text())
    assert result.reason is Termination.SYNC
    assert result.violations == []
