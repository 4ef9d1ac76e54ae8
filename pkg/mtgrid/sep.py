"""
The resource service: binary buddy allocation of groups of cores (places),
run as a single FIFO service queue on core 0
"""

import bisect
from collections import deque
from typing import NamedTuple, List, Dict, Optional, Callable, Tuple, Deque

from .config import ChipConfig, encode_place
from .exceptions import SepError, PlaceError
from .isa import SepPolicy
from .kernel import Kernel, Target
from .trace import Tracer, FieldValue
from .typehelpers import next_power_of_two
from .warn import warn

SEP_CORE = 0
SEP_FAILED = -1


class BuddyBlock(NamedTuple):
    start: int
    size: int

    @property
    def key(self) -> int:
        # the place encoding, without reserving the default placeid
        return (self.start << 1) | self.size

    @property
    def cores(self) -> range:
        return range(self.start, self.start + self.size)

    def contains(self, other: "BuddyBlock") -> bool:
        return self.start <= other.start and other.start + other.size <= self.start + self.size


SkipBlock = Callable[[BuddyBlock], bool]


def _never(block: BuddyBlock) -> bool:
    return False


class BuddyState:
    """
    Free lists per size class (index = log2 of the block size) over the
    cores [0, num_cores), each kept in ascending start order
    """

    def __init__(self, num_cores: int) -> None:
        self.num_cores = num_cores
        self.levels = num_cores.bit_length()
        self.free_lists: List[List[int]] = [[] for _ in range(self.levels)]
        self.free_lists[-1].append(0)
        self.allocated: Dict[int, BuddyBlock] = {}

    def free_blocks(self) -> List[BuddyBlock]:
        return sorted(
            BuddyBlock(start, 1 << level)
            for level, starts in enumerate(self.free_lists)
            for start in starts
        )

    def _carve(self, block: BuddyBlock, size: int, skip: SkipBlock) -> Optional[BuddyBlock]:
        for start in range(block.start, block.start + block.size, size):
            sub = BuddyBlock(start, size)
            if not skip(sub):
                return sub
        return None

    def _find(self, size: int, skip: SkipBlock) -> Optional[Tuple[BuddyBlock, BuddyBlock]]:
        # smallest size class first, lowest address within a class
        for level in range(size.bit_length() - 1, self.levels):
            for start in self.free_lists[level]:
                container = BuddyBlock(start, 1 << level)
                sub = self._carve(container, size, skip)
                if sub is not None:
                    return container, sub
        return None

    def _take(self, container: BuddyBlock, target: BuddyBlock) -> BuddyBlock:
        self.free_lists[container.size.bit_length() - 1].remove(container.start)
        while container.size > target.size:
            half = container.size // 2
            low = BuddyBlock(container.start, half)
            high = BuddyBlock(container.start + half, half)
            if low.contains(target):
                keep, spare = low, high
            else:
                keep, spare = high, low
            bisect.insort(self.free_lists[half.bit_length() - 1], spare.start)
            container = keep
        self.allocated[target.key] = target
        return target

    def alloc(
        self, requested: int, policy: SepPolicy, skip: Optional[SkipBlock] = None
    ) -> Optional[BuddyBlock]:
        """
        Allocate a block of cores under policy, None if the policy can't be met

        >>> b = BuddyState(8)
        >>> b.alloc(1, SepPolicy.EXACT)
        BuddyBlock(start=0, size=1)
        >>> b.alloc(3, SepPolicy.MINIMUM)
        BuddyBlock(start=4, size=4)
        """
        if requested < 1:
            raise SepError(f"cannot allocate {requested} cores")
        if skip is None:
            skip = _never
        want = next_power_of_two(requested)
        found: Optional[Tuple[BuddyBlock, BuddyBlock]] = None
        if policy in (SepPolicy.EXACT, SepPolicy.MINIMUM):
            if want <= self.num_cores:
                found = self._find(want, skip)
        elif policy is SepPolicy.MAXIMUM:
            size = min(want, self.num_cores)
            while size >= 1 and found is None:
                found = self._find(size, skip)
                size //= 2
        else:
            for block in sorted(self.free_blocks(), key=lambda b: (b.size, b.start)):
                size = block.size
                while size >= 1 and found is None:
                    sub = self._carve(block, size, skip)
                    if sub is not None:
                        found = (block, sub)
                    size //= 2
                if found is not None:
                    break
        if found is None:
            return None
        return self._take(*found)

    def free(self, placeid: int) -> BuddyBlock:
        """
        Free an allocated block, merging it with its free buddies
        """
        block = self.allocated.pop(placeid, None)
        if block is None:
            raise SepError(f"placeid {placeid} is not allocated")
        start, size = block.start, block.size
        while size < self.num_cores:
            level = size.bit_length() - 1
            buddy = start ^ size
            if buddy not in self.free_lists[level]:
                break
            self.free_lists[level].remove(buddy)
            start = min(start, buddy)
            size *= 2
        bisect.insort(self.free_lists[size.bit_length() - 1], start)
        return block

    def check_invariants(self) -> None:
        blocks = sorted(self.free_blocks() + list(self.allocated.values()))
        expect = 0
        for block in blocks:
            if block.size < 1 or block.size & (block.size - 1):
                raise SepError(f"{block} size is not a power of two")
            if block.start % block.size:
                raise SepError(f"{block} start is not a multiple of its size")
            if block.start != expect:
                raise SepError(f"{block} leaves a gap or overlap at core {expect}")
            expect = block.start + block.size
        if expect != self.num_cores:
            raise SepError(f"blocks cover {expect} of {self.num_cores} cores")


class SepRequest(NamedTuple):
    core: int
    tid: int
    # requested core count for an allocation, placeid for a free
    arg: int
    policy: Optional[SepPolicy]

    @property
    def is_alloc(self) -> bool:
        return self.policy is not None


class SepService:
    """
    Services allocation and free requests one at a time in arrival order,
    each taking cfg.sep_cycles
    """

    def __init__(
        self,
        cfg: ChipConfig,
        kernel: Kernel,
        tracer: Tracer,
        reply: Callable[[SepRequest, int], None],
    ) -> None:
        self.cfg = cfg
        self.kernel = kernel
        self.tracer = tracer
        self.reply = reply
        self.buddy = BuddyState(cfg.num_cores)
        self.queue: Deque[SepRequest] = deque()
        self.busy = False
        self.requests = 0
        self.failures = 0

    def _skip(self, policy: SepPolicy) -> SkipBlock:
        def skip(block: BuddyBlock) -> bool:
            # placeid 1 means the default place, a single-core place at core 0
            # can't be named
            if block == BuddyBlock(0, 1):
                return True
            return (
                self.cfg.sep_reserved
                and policy is SepPolicy.ANYSIZE
                and SEP_CORE in block.cores
            )

        return skip

    def submit(self, req: SepRequest) -> None:
        self.queue.append(req)
        if not self.busy:
            self._start()

    def _start(self) -> None:
        self.busy = True
        req = self.queue.popleft()
        self.kernel.schedule(
            lambda: self._finish(req), self.cfg.sep_cycles, Target.SEP, label="sep"
        )

    def _process(self, req: SepRequest) -> int:
        if req.policy is not None:
            block = self.buddy.alloc(req.arg, req.policy, self._skip(req.policy))
            if block is None:
                return SEP_FAILED
            return encode_place(block.start, block.size)
        try:
            self.buddy.free(req.arg)
        except SepError as e:
            warn(f"SEPFREE from core {req.core} thread {req.tid}: {e}")
            return SEP_FAILED
        return 0

    def _finish(self, req: SepRequest) -> None:
        self.requests += 1
        try:
            result = self._process(req)
        except (SepError, PlaceError) as e:
            warn(f"resource request from core {req.core} thread {req.tid} failed: {e}")
            result = SEP_FAILED
        fields: Dict[str, FieldValue] = {
            "src": req.core,
            "tid": req.tid,
            "op": "alloc" if req.is_alloc else "free",
            "arg": req.arg,
            "result": result,
        }
        if req.policy is not None:
            fields["policy"] = req.policy.value
        self.tracer.emit(self.kernel.now, SEP_CORE, "SEPREQ", **fields)
        if result == SEP_FAILED:
            self.failures += 1
            self.tracer.emit(self.kernel.now, SEP_CORE, "SEPFAIL", src=req.core, tid=req.tid)
        self.reply(req, result)
        if self.queue:
            self._start()
        else:
            self.busy = False
