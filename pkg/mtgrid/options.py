import os
from typing import Set, Generator, Dict, Optional, List, Union
from collections import defaultdict
from enum import auto, Enum
from contextlib import contextmanager


class Option(Enum):
    SEQ_FALLBACK = auto()
    CHECK_CONSISTENCY = auto()

    @classmethod
    def names(cls) -> List[str]:
        return [name.casefold() for name in cls.__members__]


# option -> set of tokens that currently enable it; an option
# stays enabled while any token (contextmanager call or the
# environment) holds it
_ENABLED: Dict[Option, Set[object]] = defaultdict(set)


def str_to_option(op: str) -> Optional[Option]:
    """
    >>> str_to_option("seq_fallback")
    <Option.SEQ_FALLBACK: 1>
    >>> str_to_option("nope") is None
    True
    """
    val: Optional[Option] = Option.__members__.get(op.upper())
    return val


@contextmanager
def options(*opts: Union[str, Option]) -> Generator[None, None, None]:
    """
    Temporarily enable simulator options, so the flags don't have to be
    threaded through every constructor, e.g.:

    with options("SEQ_FALLBACK"):
        Chip(cfg, program).run()
    """
    this_call = object()
    try:
        for op in opts:
            opt: Optional[Option] = None
            if isinstance(op, Option):
                opt = op
            elif isinstance(op, str):
                opt = str_to_option(op)
                if opt is None:
                    raise ValueError(
                        f"Unknown option {op}. Valid Options: {Option.names()}"
                    )
            if opt is None:
                raise TypeError(f"{op} not of type option or string")
            _ENABLED[opt].add(this_call)
        yield
    finally:
        for opt, holders in list(_ENABLED.items()):
            holders.discard(this_call)
            if len(holders) == 0:
                del _ENABLED[opt]


def is_enabled(opt: Option) -> bool:
    return opt in _ENABLED


def _load_global_options() -> None:
    """
    Enable options named by MTGRID_<OPTION> environment variables for the
    lifetime of the process
    """
    global_id = object()
    for key, value in os.environ.items():
        if not key.casefold().startswith("mtgrid_"):
            continue
        _, _, part = key.partition("_")
        enum_val = str_to_option(part)
        if enum_val is not None and value not in ("", "0"):
            _ENABLED[enum_val].add(global_id)


_load_global_options()
