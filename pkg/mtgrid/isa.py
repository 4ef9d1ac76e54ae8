"""
The instruction set, with the thread definitions and programs built from it
"""

from enum import Enum
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple, Union, Dict, Optional

from .registers import RegisterClass, RegisterCounts


class Opcode(Enum):
    # arithmetic / logic
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    MOD = "mod"
    AND = "and"
    OR = "or"
    XOR = "xor"
    SHL = "shl"
    SHR = "shr"
    MOV = "mov"
    CMP = "cmp"
    NOP = "nop"
    # control
    BR = "br"
    BEQ = "beq"
    BNE = "bne"
    BLT = "blt"
    END = "end"
    # memory
    LD = "ld"
    ST = "st"
    GETIDX = "getidx"
    # families
    ALLOCATE = "allocate"
    SETSTART = "setstart"
    SETLIMIT = "setlimit"
    SETSTEP = "setstep"
    SETBLOCK = "setblock"
    CREI = "crei"
    DETACH = "detach"
    SYNC = "sync"
    RELEASE = "release"
    PUTG = "putg"
    PUTS = "puts"
    GETS = "gets"
    BREAK = "break"
    # floating point unit, shared by a pair of cores
    FADD = "fadd"
    FMUL = "fmul"
    PRINT = "print"
    # resource service
    SEPALLOC = "sepalloc"
    SEPFREE = "sepfree"


OPCODE_ALIASES: Dict[str, Opcode] = {"setstop": Opcode.SETLIMIT}


class AllocMode(Enum):
    NORMAL = "normal"
    SUSPEND = "suspend"
    EXCLUSIVE = "exclusive"


class AllocStrategy(Enum):
    NORMAL = "normal"
    EXACT = "exact"
    SINGLE = "single"
    BALANCED = "balanced"


class AllocFlag(Enum):
    FORCESEQ = "forceseq"
    EXCLUSIVE = "exclusive"


class SepPolicy(Enum):
    MINIMUM = "minimum"
    MAXIMUM = "maximum"
    EXACT = "exact"
    ANYSIZE = "anysize"


class Reg(NamedTuple):
    cls: RegisterClass
    slot: int

    def __str__(self) -> str:
        return f"{self.cls.value}{self.slot}"


class Imm(NamedTuple):
    value: int

    def __str__(self) -> str:
        return f"#{self.value}"


class Target(NamedTuple):
    """
    A resolved branch target, the index of an instruction in the thread body
    """

    pc: int

    def __str__(self) -> str:
        return f"L{self.pc}"


class Name(NamedTuple):
    """
    A thread name, or an allocation / policy keyword
    """

    text: str

    def __str__(self) -> str:
        return self.text


Operand = Union[Reg, Imm, Target, Name]


# operand signature characters:
#   w  register written by the instruction (not g/d)
#   r  register read
#   v  register read or immediate
#   k  immediate slot number
#   L  label
#   T  thread name
#   m  allocation mode
#   s  allocation strategy
#   p  resource service policy
#   *  any number of trailing allocation flags
_ALU = ("wvv",)

SIGNATURES: Dict[Opcode, Tuple[str, ...]] = {
    Opcode.ADD: _ALU,
    Opcode.SUB: _ALU,
    Opcode.MUL: _ALU,
    Opcode.DIV: _ALU,
    Opcode.MOD: _ALU,
    Opcode.AND: _ALU,
    Opcode.OR: _ALU,
    Opcode.XOR: _ALU,
    Opcode.SHL: _ALU,
    Opcode.SHR: _ALU,
    Opcode.CMP: _ALU,
    Opcode.MOV: ("wv",),
    Opcode.NOP: ("",),
    Opcode.BR: ("L",),
    Opcode.BEQ: ("vvL",),
    Opcode.BNE: ("vvL",),
    Opcode.BLT: ("vvL",),
    Opcode.END: ("",),
    Opcode.LD: ("wv",),
    Opcode.ST: ("vv",),
    Opcode.GETIDX: ("w",),
    Opcode.ALLOCATE: ("wvms*",),
    Opcode.SETSTART: ("rv",),
    Opcode.SETLIMIT: ("rv",),
    Opcode.SETSTEP: ("rv",),
    Opcode.SETBLOCK: ("rv",),
    Opcode.CREI: ("rT",),
    Opcode.DETACH: ("rT",),
    Opcode.SYNC: ("r",),
    Opcode.RELEASE: ("r",),
    Opcode.PUTG: ("rkv",),
    Opcode.PUTS: ("rv", "rkv"),
    Opcode.GETS: ("rw", "rkw"),
    Opcode.BREAK: ("",),
    Opcode.FADD: _ALU,
    Opcode.FMUL: _ALU,
    Opcode.PRINT: ("v",),
    Opcode.SEPALLOC: ("wvp",),
    Opcode.SEPFREE: ("v",),
}

KEYWORDS = {
    "m": AllocMode,
    "s": AllocStrategy,
    "p": SepPolicy,
    "*": AllocFlag,
}


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    operands: Tuple[Operand, ...] = ()
    # source line, not part of the instruction's identity
    line: int = field(default=0, compare=False)

    def __str__(self) -> str:
        ops = ", ".join(str(o) for o in self.operands)
        return f"{self.opcode.name} {ops}" if ops else self.opcode.name


class ThreadDef(NamedTuple):
    name: str
    counts: RegisterCounts
    body: Tuple[Instruction, ...]

    @property
    def dependent(self) -> bool:
        return self.counts.d > 0


class Program(NamedTuple):
    threads: Tuple[ThreadDef, ...]
    entry: str
    # (address, word) pairs of the static data segment
    data: Tuple[Tuple[int, int], ...] = ()

    def thread(self, name: str) -> Optional[ThreadDef]:
        for t in self.threads:
            if t.name == name:
                return t
        return None


class Construct(NamedTuple):
    opcodes: Tuple[Opcode, ...] = ()
    registers: Tuple[RegisterClass, ...] = ()


# every concurrency construct of the programming model and the
# instructions (or register classes) that express it
CONSTRUCTS: Dict[str, Construct] = {
    "create": Construct(
        (
            Opcode.ALLOCATE,
            Opcode.SETSTART,
            Opcode.SETLIMIT,
            Opcode.SETSTEP,
            Opcode.SETBLOCK,
            Opcode.CREI,
        )
    ),
    "sync": Construct((Opcode.SYNC,)),
    "release": Construct((Opcode.RELEASE,)),
    "detach": Construct((Opcode.DETACH,)),
    "set_shared_arg": Construct((Opcode.PUTS,)),
    "get_shared_arg": Construct((Opcode.GETS,)),
    "global_arg": Construct((Opcode.PUTG,)),
    "get_param": Construct(registers=(RegisterClass.DEPENDENT, RegisterClass.GLOBAL)),
    "set_param": Construct(registers=(RegisterClass.SHARED,)),
    "index": Construct((Opcode.GETIDX,)),
    "break": Construct((Opcode.BREAK,)),
    "resource_alloc": Construct((Opcode.SEPALLOC,)),
    "resource_free": Construct((Opcode.SEPFREE,)),
}
