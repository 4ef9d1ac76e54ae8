"""
The two on-chip networks. The delegation network connects every pair of
cores in one hop, the distribution network is a daisy chain over the
cores in ascending index order. Neither models contention, delivery time
is send time plus one hop
"""

from enum import Enum
from typing import NamedTuple, Tuple, Dict, Callable

from .config import ChipConfig
from .exceptions import ContractViolation
from .kernel import Kernel, Target
from .trace import Tracer


class MessageKind(Enum):
    ALLOC_REQ = "AllocReq"
    ALLOC_FORWARD = "AllocForward"
    ALLOC_ACK = "AllocAck"
    ALLOC_FAIL = "AllocFail"
    CONFIGURE = "Configure"
    CREATE = "Create"
    CREATE_ACK = "CreateAck"
    REG_WRITE = "RegWrite"
    REG_READ = "RegRead"
    REG_READ_REPLY = "RegReadReply"
    SYNC_DONE = "SyncDone"
    RELEASE = "Release"
    BREAK = "Break"
    SEP_CALL = "SepCall"
    SEP_REPLY = "SepReply"
    # a core telling its successor in the place that its threads finished
    SYNC_TOKEN = "SyncToken"


REQUIRED: Dict[MessageKind, Tuple[str, ...]] = {
    MessageKind.ALLOC_REQ: ("start", "size"),
    MessageKind.ALLOC_FORWARD: ("phase",),
    MessageKind.ALLOC_ACK: ("start", "size"),
    MessageKind.ALLOC_FAIL: (),
    MessageKind.CONFIGURE: ("start", "limit", "step", "block"),
    MessageKind.CREATE: (),
    MessageKind.CREATE_ACK: (),
    MessageKind.REG_WRITE: ("cls", "slot", "value"),
    MessageKind.REG_READ: ("slot", "reg", "gen", "reply"),
    MessageKind.REG_READ_REPLY: ("slot", "value", "reg", "gen"),
    MessageKind.SYNC_DONE: (),
    MessageKind.RELEASE: (),
    MessageKind.BREAK: ("dir",),
    MessageKind.SEP_CALL: ("op", "arg", "policy"),
    MessageKind.SEP_REPLY: ("placeid",),
    MessageKind.SYNC_TOKEN: (),
}


class Network(Enum):
    DELEGATION = "delegation"
    DISTRIBUTION = "distribution"


class Direction(Enum):
    NEXT = "next"
    PREV = "prev"
    # injection into, or reflection at the end of, a chain: one hop, same core
    LOOP = "loop"


class Message(NamedTuple):
    kind: MessageKind
    src: int
    dst: int
    fid: int = 0
    tid: int = -1
    payload: Tuple[Tuple[str, int], ...] = ()

    def field(self, key: str) -> int:
        for k, v in self.payload:
            if k == key:
                return v
        raise ContractViolation(f"{self.kind.value} message has no '{key}' field")


def make_message(
    kind: MessageKind, src: int, dst: int, fid: int = 0, tid: int = -1, **payload: int
) -> Message:
    """
    Build a message, checking the payload its kind requires

    >>> make_message(MessageKind.SEP_REPLY, 0, 3, placeid=20).field("placeid")
    20
    """
    missing = [k for k in REQUIRED[kind] if k not in payload]
    if missing:
        raise ContractViolation(f"{kind.value} message is missing {missing}")
    return Message(kind, src, dst, fid, tid, tuple(payload.items()))


class Networks:
    def __init__(
        self,
        cfg: ChipConfig,
        kernel: Kernel,
        tracer: Tracer,
        deliver: Callable[[Message], None],
    ) -> None:
        self.cfg = cfg
        self.kernel = kernel
        self.tracer = tracer
        self.deliver = deliver

    def _send(self, msg: Message, net: Network, delay: int) -> int:
        self.tracer.emit(
            self.kernel.now,
            msg.src,
            "SEND",
            kind=msg.kind.value,
            src=msg.src,
            dst=msg.dst,
            fid=msg.fid,
            net=net.value,
            hops=1,
        )

        def arrive() -> None:
            self.tracer.emit(
                self.kernel.now,
                msg.dst,
                "DELIVER",
                kind=msg.kind.value,
                src=msg.src,
                fid=msg.fid,
                net=net.value,
            )
            self.deliver(msg)

        self.kernel.schedule(arrive, delay, Target.NETWORK, label=msg.kind.value)
        return self.kernel.now + delay

    def send_delegation(self, msg: Message) -> int:
        """
        Send to any core, a message to its own sender still takes a hop.
        Returns the delivery cycle
        """
        if not 0 <= msg.dst < self.cfg.num_cores:
            raise ContractViolation(
                f"{msg.kind.value} sent to core {msg.dst} of a {self.cfg.num_cores}-core chip"
            )
        return self._send(msg, Network.DELEGATION, self.cfg.delegation_hop_cycles)

    def send_distribution(
        self, msg: Message, direction: Direction, within: Tuple[int, int]
    ) -> int:
        """
        Send to the neighbour of msg.src in direction, inside the place
        spanning cores within[0]..within[1]. Returns the delivery cycle
        """
        first, last = within
        if direction is Direction.NEXT:
            dst = msg.src + 1
        elif direction is Direction.PREV:
            dst = msg.src - 1
        else:
            dst = msg.src
        if not first <= msg.src <= last or not first <= dst <= last:
            raise ContractViolation(
                f"{msg.kind.value} from core {msg.src} steps {direction.value} past the place {first}..{last}"
            )
        return self._send(
            msg._replace(dst=dst), Network.DISTRIBUTION, self.cfg.distribution_hop_cycles
        )
