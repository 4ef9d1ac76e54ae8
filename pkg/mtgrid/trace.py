"""
The event trace of a run, one record per line:

    cycle<TAB>core<TAB>KIND<TAB>key=value key=value ...
"""

from typing import NamedTuple, Tuple, List, Dict, Iterable, TextIO, Union, Optional

from .exceptions import TraceError

FieldValue = Union[int, str]


class TraceRecord(NamedTuple):
    cycle: int
    core: int
    kind: str
    fields: Tuple[Tuple[str, str], ...] = ()

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def number(self, key: str) -> int:
        val = self.get(key)
        if val is None:
            raise TraceError(f"{self.kind} record at cycle {self.cycle} has no '{key}'")
        try:
            return int(val)
        except ValueError:
            raise TraceError(
                f"{self.kind} record at cycle {self.cycle}: '{key}={val}' is not an integer"
            )

    def as_dict(self) -> Dict[str, str]:
        return dict(self.fields)

    def format(self) -> str:
        """
        >>> TraceRecord(117, 2, "WAKE", (("tid", "9"), ("cell", "r14"))).format()
        '117\\t2\\tWAKE\\ttid=9 cell=r14'
        """
        head = f"{self.cycle}\t{self.core}\t{self.kind}"
        if not self.fields:
            return head
        return head + "\t" + " ".join(f"{k}={v}" for k, v in self.fields)


class Tracer:
    """
    Collects the records of one run in emission order
    """

    def __init__(self) -> None:
        self.records: List[TraceRecord] = []

    def emit(self, cycle: int, core: int, record_kind: str, **fields: FieldValue) -> TraceRecord:
        rec = TraceRecord(cycle, core, record_kind, tuple((k, str(v)) for k, v in fields.items()))
        self.records.append(rec)
        return rec

    def kinds(self, *kinds: str) -> List[TraceRecord]:
        return [r for r in self.records if r.kind in kinds]


def emit_trace(records: Iterable[TraceRecord], sink: TextIO) -> None:
    for rec in records:
        sink.write(rec.format())
        sink.write("\n")


def parse_record(line: str, lineno: int = 0) -> TraceRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) not in (3, 4):
        raise TraceError(f"line {lineno}: expected 3 or 4 tab separated columns, got {len(parts)}")
    try:
        cycle, core = int(parts[0]), int(parts[1])
    except ValueError:
        raise TraceError(f"line {lineno}: cycle and core must be integers")
    fields: List[Tuple[str, str]] = []
    if len(parts) == 4 and parts[3]:
        for item in parts[3].split(" "):
            key, sep, val = item.partition("=")
            if not sep or not key:
                raise TraceError(f"line {lineno}: malformed field '{item}'")
            fields.append((key, val))
    return TraceRecord(cycle, core, parts[2], tuple(fields))


def load_trace(text: str) -> List[TraceRecord]:
    return [
        parse_record(line, lineno)
        for lineno, line in enumerate(text.splitlines(), 1)
        if line.strip()
    ]
