"""
Two-pass assembler for the textual program format:

    .data 0 1 2 3            # words at addresses 0..3
    .entry main
    .thread main g=0 s=0 l=2 d=0
        MOV l0, #10
    loop:
        SUB l0, l0, #1
        BNE l0, #0, loop
        END

A '#' followed by a digit or '-' is an immediate, any other '#' starts a comment
"""

import re
from typing import List, Dict, Tuple, Optional, NamedTuple

from .exceptions import AssemblerError
from .isa import (
    Opcode,
    OPCODE_ALIASES,
    SIGNATURES,
    KEYWORDS,
    Instruction,
    ThreadDef,
    Program,
    Operand,
    Reg,
    Imm,
    Target,
    Name,
)
from .registers import RegisterClass, RegisterCounts

_REG_RE = re.compile(r"^([gsld])(\d+)$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_READ_ONLY = (RegisterClass.GLOBAL, RegisterClass.DEPENDENT)


class _Token(NamedTuple):
    text: str
    column: int


class _Line(NamedTuple):
    lineno: int
    mnemonic: _Token
    operands: List[_Token]


class _ThreadBuilder:
    def __init__(self, name: str, counts: RegisterCounts, lineno: int) -> None:
        self.name = name
        self.counts = counts
        self.lineno = lineno
        self.lines: List[_Line] = []
        self.labels: Dict[str, int] = {}


def _strip_comment(text: str) -> str:
    """
    >>> _strip_comment("ADD l0, l0, #1  # count")
    'ADD l0, l0, #1  '
    >>> _strip_comment("MOV l0, #-4")
    'MOV l0, #-4'
    """
    for i, ch in enumerate(text):
        if ch != "#":
            continue
        nxt = text[i + 1 : i + 2]
        if nxt.isdigit() or nxt == "-":
            continue
        return text[:i]
    return text


def _split_ops(rest: str, offset: int) -> List[_Token]:
    """
    Split an operand string by comma, keeping the (1-based) column of each operand
    """
    tokens: List[_Token] = []
    pos = 0
    for part in rest.split(","):
        stripped = part.strip()
        if stripped:
            lead = len(part) - len(part.lstrip())
            tokens.append(_Token(stripped, offset + pos + lead + 1))
        pos += len(part) + 1
    return tokens


def _parse_int(tok: _Token, lineno: int) -> int:
    text = tok.text[1:] if tok.text.startswith("#") else tok.text
    try:
        return int(text, 0)
    except ValueError:
        raise AssemblerError(f"invalid number '{tok.text}'", lineno, tok.column)


def _parse_counts(tokens: List[_Token], lineno: int) -> RegisterCounts:
    vals: Dict[str, int] = {}
    for tok in tokens:
        key, sep, raw = tok.text.partition("=")
        if not sep or key not in ("g", "s", "l", "d"):
            raise AssemblerError(
                f"expected g=<n> s=<n> l=<n> d=<n>, got '{tok.text}'", lineno, tok.column
            )
        val = _parse_int(_Token(raw, tok.column), lineno)
        if val < 0:
            raise AssemblerError(f"negative register count '{tok.text}'", lineno, tok.column)
        vals[key] = val
    return RegisterCounts(**vals)


def _opcode(tok: _Token, lineno: int) -> Opcode:
    name = tok.text.lower()
    if name in OPCODE_ALIASES:
        return OPCODE_ALIASES[name]
    try:
        return Opcode(name)
    except ValueError:
        raise AssemblerError(f"unknown opcode '{tok.text}'", lineno, tok.column)


def _parse_reg(tok: _Token, lineno: int, counts: RegisterCounts, write: bool) -> Reg:
    m = _REG_RE.match(tok.text.lower())
    if m is None:
        raise AssemblerError(f"expected a register, got '{tok.text}'", lineno, tok.column)
    cls = RegisterClass(m.group(1))
    slot = int(m.group(2))
    if write and cls in _READ_ONLY:
        raise AssemblerError(
            f"register class violation: {tok.text} is read-only in this thread",
            lineno,
            tok.column,
        )
    declared = counts.count(cls)
    if slot >= declared:
        raise AssemblerError(
            f"{tok.text} is outside the thread's {declared} '{cls.value}' registers",
            lineno,
            tok.column,
        )
    return Reg(cls, slot)


def _parse_value(tok: _Token, lineno: int, counts: RegisterCounts) -> Operand:
    if tok.text.startswith("#"):
        return Imm(_parse_int(tok, lineno))
    return _parse_reg(tok, lineno, counts, write=False)


def _parse_keyword(tok: _Token, lineno: int, kind: str) -> Name:
    enum = KEYWORDS[kind]
    word = tok.text.lower()
    if word not in {m.value for m in enum}:  # type: ignore[attr-defined]
        raise AssemblerError(
            f"expected one of {[m.value for m in enum]}, got '{tok.text}'",  # type: ignore[attr-defined]
            lineno,
            tok.column,
        )
    return Name(word)


def _match_signature(op: Opcode, line: _Line) -> str:
    count = len(line.operands)
    for sig in SIGNATURES[op]:
        if sig.endswith("*"):
            if count >= len(sig) - 1:
                return sig[:-1] + "*" * (count - len(sig) + 1)
        elif count == len(sig):
            return sig
    expected = " or ".join(str(len(s.rstrip("*"))) for s in SIGNATURES[op])
    col = line.operands[-1].column if line.operands else line.mnemonic.column
    raise AssemblerError(
        f"{op.name} takes {expected} operands, got {count}", line.lineno, col
    )


def _resolve(
    builder: _ThreadBuilder, line: _Line, thread_names: Dict[str, int]
) -> Instruction:
    op = _opcode(line.mnemonic, line.lineno)
    sig = _match_signature(op, line)
    operands: List[Operand] = []
    for kind, tok in zip(sig, line.operands):
        if kind == "w":
            operands.append(_parse_reg(tok, line.lineno, builder.counts, write=True))
        elif kind == "r":
            operands.append(_parse_reg(tok, line.lineno, builder.counts, write=False))
        elif kind == "v":
            operands.append(_parse_value(tok, line.lineno, builder.counts))
        elif kind == "k":
            if not tok.text.startswith("#"):
                raise AssemblerError(
                    f"expected an immediate slot number, got '{tok.text}'",
                    line.lineno,
                    tok.column,
                )
            operands.append(Imm(_parse_int(tok, line.lineno)))
        elif kind == "L":
            if tok.text not in builder.labels:
                raise AssemblerError(
                    f"undefined label '{tok.text}'", line.lineno, tok.column
                )
            operands.append(Target(builder.labels[tok.text]))
        elif kind == "T":
            if tok.text not in thread_names:
                raise AssemblerError(
                    f"undefined thread '{tok.text}'", line.lineno, tok.column
                )
            operands.append(Name(tok.text))
        else:
            operands.append(_parse_keyword(tok, line.lineno, kind))
    return Instruction(op, tuple(operands), line=line.lineno)


def _build_thread(builder: _ThreadBuilder, thread_names: Dict[str, int]) -> ThreadDef:
    counts = builder.counts
    if counts.d > counts.s:
        raise AssemblerError(
            f"thread {builder.name} declares {counts.d} dependents but only {counts.s} shareds",
            builder.lineno,
            1,
        )
    body = tuple(_resolve(builder, line, thread_names) for line in builder.lines)
    if len(body) == 0 or body[-1].opcode is not Opcode.END:
        raise AssemblerError(
            f"thread {builder.name} must end with END", builder.lineno, 1
        )
    return ThreadDef(builder.name, counts, body)


def assemble(text: str) -> Program:
    """
    Assemble a program, every diagnostic carries its line and column

    >>> prog = assemble("main: END")
    >>> [t.name for t in prog.threads], prog.entry
    (['main'], 'main')
    """
    builders: List[_ThreadBuilder] = []
    current: Optional[_ThreadBuilder] = None
    data: List[Tuple[int, int]] = []
    entry: Optional[_Token] = None
    entry_line = 0

    # pass 1: split into threads, bind labels to instruction indices
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).rstrip()
        stripped = line.lstrip()
        if not stripped:
            continue
        col = len(line) - len(stripped) + 1

        if stripped.startswith("."):
            parts = stripped.split()
            directive = parts[0].lower()
            args: List[_Token] = []
            pos = col - 1 + len(parts[0])
            for part in parts[1:]:
                pos = line.index(part, pos)
                args.append(_Token(part, pos + 1))
                pos += len(part)
            if directive == ".thread":
                if not args:
                    raise AssemblerError(".thread needs a name", lineno, col)
                name = args[0]
                if not _NAME_RE.match(name.text):
                    raise AssemblerError(f"invalid thread name '{name.text}'", lineno, name.column)
                if any(b.name == name.text for b in builders):
                    raise AssemblerError(f"duplicate thread '{name.text}'", lineno, name.column)
                current = _ThreadBuilder(name.text, _parse_counts(args[1:], lineno), lineno)
                builders.append(current)
            elif directive == ".data":
                if not args:
                    raise AssemblerError(".data needs an address", lineno, col)
                addr = _parse_int(args[0], lineno)
                if addr < 0:
                    raise AssemblerError(f"negative address {addr}", lineno, args[0].column)
                for i, tok in enumerate(args[1:]):
                    data.append((addr + i, _parse_int(tok, lineno)))
            elif directive == ".entry":
                if len(args) != 1:
                    raise AssemblerError(".entry takes one thread name", lineno, col)
                entry, entry_line = args[0], lineno
            else:
                raise AssemblerError(f"unknown directive '{parts[0]}'", lineno, col)
            continue

        # label, possibly followed by an instruction on the same line
        label, sep, rest = stripped.partition(":")
        if sep and _NAME_RE.match(label.strip()):
            label = label.strip()
            if current is None:
                # a label before any .thread opens a thread of that name
                current = _ThreadBuilder(label, RegisterCounts(), lineno)
                builders.append(current)
            if label in current.labels:
                raise AssemblerError(f"duplicate label '{label}'", lineno, col)
            current.labels[label] = len(current.lines)
            col += len(stripped) - len(rest.lstrip())
            stripped = rest.strip()
            if not stripped:
                continue

        if current is None:
            raise AssemblerError("instruction outside of a thread", lineno, col)
        parts = stripped.split(None, 1)
        mnemonic = parts[0]
        operand_text = parts[1] if len(parts) > 1 else ""
        offset = col - 1 + len(stripped) - len(operand_text)
        current.lines.append(
            _Line(lineno, _Token(mnemonic, col), _split_ops(operand_text, offset))
        )

    if len(builders) == 0:
        raise AssemblerError("program defines no threads", 1, 1)
    thread_names = {b.name: b.lineno for b in builders}

    # pass 2: operands
    threads = tuple(_build_thread(b, thread_names) for b in builders)

    if entry is not None:
        if entry.text not in thread_names:
            raise AssemblerError(
                f"entry thread '{entry.text}' is not defined", entry_line, entry.column
            )
        entry_name = entry.text
    elif "main" in thread_names:
        entry_name = "main"
    else:
        entry_name = builders[0].name
    return Program(threads=threads, entry=entry_name, data=tuple(data))


def _data_runs(data: Tuple[Tuple[int, int], ...]) -> List[Tuple[int, List[int]]]:
    runs: List[Tuple[int, List[int]]] = []
    for addr, value in data:
        if runs and runs[-1][0] + len(runs[-1][1]) == addr:
            runs[-1][1].append(value)
        else:
            runs.append((addr, [value]))
    return runs


def disassemble(program: Program) -> str:
    """
    Render a program back to source, branch targets become L<pc> labels

    >>> print(disassemble(assemble("main: END")), end="")
    .entry main
    .thread main g=0 s=0 l=0 d=0
        END
    """
    out: List[str] = []
    for addr, words in _data_runs(program.data):
        out.append(".data " + " ".join(str(w) for w in [addr, *words]))
    out.append(f".entry {program.entry}")
    for thread in program.threads:
        c = thread.counts
        out.append(f".thread {thread.name} g={c.g} s={c.s} l={c.l} d={c.d}")
        targets = {
            o.pc for ins in thread.body for o in ins.operands if isinstance(o, Target)
        }
        for pc, ins in enumerate(thread.body):
            if pc in targets:
                out.append(f"L{pc}:")
            out.append(f"    {ins}")
    return "\n".join(out) + "\n"
