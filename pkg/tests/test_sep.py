import random
from typing import List, Tuple

import pytest

from mtgrid.config import ChipConfig
from mtgrid.exceptions import SepError
from mtgrid.isa import SepPolicy
from mtgrid.kernel import Kernel
from mtgrid.sep import SEP_FAILED, BuddyBlock, BuddyState, SepRequest, SepService
from mtgrid.trace import Tracer
from mtgrid.typehelpers import next_power_of_two


def test_eight_core_narrative() -> None:
    b = BuddyState(8)
    # 8 splits into 4 + 4, the low 4 into 2 + 2, the low 2 into 1 + 1
    assert b.alloc(1, SepPolicy.EXACT) == BuddyBlock(0, 1)
    assert b.free_blocks() == [BuddyBlock(1, 1), BuddyBlock(2, 2), BuddyBlock(4, 4)]
    assert b.alloc(2, SepPolicy.EXACT) == BuddyBlock(2, 2)
    assert b.alloc(4, SepPolicy.EXACT) == BuddyBlock(4, 4)
    assert b.alloc(1, SepPolicy.MAXIMUM) == BuddyBlock(1, 1)
    # everything is busy
    assert b.alloc(1, SepPolicy.MAXIMUM) is None
    assert b.alloc(1, SepPolicy.ANYSIZE) is None
    b.check_invariants()

    for block in (BuddyBlock(0, 1), BuddyBlock(1, 1), BuddyBlock(2, 2)):
        b.free(block.key)
        b.check_invariants()
    assert b.free_blocks() == [BuddyBlock(0, 4)]
    # freeing the last 4-core block merges back into one group of 8
    b.free(BuddyBlock(4, 4).key)
    assert b.free_blocks() == [BuddyBlock(0, 8)]


def test_policies() -> None:
    b = BuddyState(8)
    assert b.alloc(3, SepPolicy.MINIMUM) == BuddyBlock(0, 4)
    assert b.alloc(8, SepPolicy.EXACT) is None
    # the largest block that fits, at most the rounded request
    assert b.alloc(8, SepPolicy.MAXIMUM) == BuddyBlock(4, 4)
    b.free(BuddyBlock(4, 4).key)
    b.alloc(1, SepPolicy.EXACT)
    # smallest size class with a free block
    assert b.alloc(2, SepPolicy.ANYSIZE) == BuddyBlock(5, 1)
    with pytest.raises(SepError, match="cannot allocate 0 cores"):
        b.alloc(0, SepPolicy.EXACT)


def test_realloc_same_start() -> None:
    b = BuddyState(16)
    first = b.alloc(4, SepPolicy.EXACT)
    b.alloc(2, SepPolicy.EXACT)
    assert first is not None
    b.free(first.key)
    assert b.alloc(4, SepPolicy.EXACT) == first


def test_double_free() -> None:
    b = BuddyState(4)
    block = b.alloc(2, SepPolicy.EXACT)
    assert block is not None
    b.free(block.key)
    with pytest.raises(SepError, match="is not allocated"):
        b.free(block.key)


def test_randomized_invariants() -> None:
    rng = random.Random(42)
    b = BuddyState(16)
    live: List[BuddyBlock] = []
    policies = list(SepPolicy)
    for _ in range(10_000):
        if live and rng.random() < 0.45:
            block = live.pop(rng.randrange(len(live)))
            b.free(block.key)
        else:
            requested = rng.randint(1, 16)
            policy = rng.choice(policies)
            want = next_power_of_two(requested)
            fits = any(f.size >= want for f in b.free_blocks())
            got = b.alloc(requested, policy)
            if policy is SepPolicy.EXACT:
                assert (got is not None) == fits
                if got is not None:
                    assert got.size == want
            if got is not None:
                assert all(not (got.contains(o) or o.contains(got)) for o in live)
                live.append(got)
        b.check_invariants()
    for block in live:
        b.free(block.key)
    assert b.free_blocks() == [BuddyBlock(0, 16)]


def _drain(kernel: Kernel) -> None:
    while True:
        due = kernel.next_due()
        if due is None:
            return
        kernel.now = due
        kernel.dispatch()


def test_service_is_fifo() -> None:
    kernel = Kernel()
    tracer = Tracer()
    replies: List[Tuple[int, int, int]] = []
    sep = SepService(
        ChipConfig(), kernel, tracer, lambda req, result: replies.append((req.tid, result, kernel.now))
    )
    sep.submit(SepRequest(core=1, tid=10, arg=2, policy=SepPolicy.EXACT))
    sep.submit(SepRequest(core=2, tid=11, arg=1, policy=SepPolicy.ANYSIZE))
    sep.submit(SepRequest(core=1, tid=10, arg=2, policy=None))
    _drain(kernel)
    # cores 0..1 are placeid 2, cores 2..3 placeid 6
    assert replies == [(10, 2, 20), (11, 6, 40), (10, 0, 60)]
    assert sep.requests == 3
    assert [r.get("op") for r in tracer.kinds("SEPREQ")] == ["alloc", "alloc", "free"]


def test_service_never_hands_out_placeid_one() -> None:
    kernel = Kernel()
    replies: List[int] = []
    sep = SepService(ChipConfig(), kernel, Tracer(), lambda req, result: replies.append(result))
    sep.submit(SepRequest(core=0, tid=0, arg=1, policy=SepPolicy.EXACT))
    _drain(kernel)
    # core 0 alone would encode to the default place
    assert replies == [3]


def test_service_failures() -> None:
    kernel = Kernel()
    tracer = Tracer()
    replies: List[int] = []
    sep = SepService(ChipConfig(), kernel, tracer, lambda req, result: replies.append(result))
    sep.submit(SepRequest(core=0, tid=0, arg=8, policy=SepPolicy.EXACT))
    sep.submit(SepRequest(core=0, tid=0, arg=20, policy=None))
    with pytest.warns(UserWarning, match="SEPFREE from core 0"):
        _drain(kernel)
    assert replies == [SEP_FAILED, SEP_FAILED]
    assert sep.failures == 2
    assert len(tracer.kinds("SEPFAIL")) == 2


def test_reserved_service_core() -> None:
    kernel = Kernel()
    replies: List[int] = []
    cfg = ChipConfig(sep_reserved=True)
    sep = SepService(cfg, kernel, Tracer(), lambda req, result: replies.append(result))
    sep.submit(SepRequest(core=0, tid=0, arg=4, policy=SepPolicy.ANYSIZE))
    sep.submit(SepRequest(core=0, tid=0, arg=4, policy=SepPolicy.EXACT))
    _drain(kernel)
    # anysize avoids core 0, the largest such block is 2..3
    assert replies == [6, SEP_FAILED]
