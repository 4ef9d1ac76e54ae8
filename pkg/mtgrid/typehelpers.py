import sys
import typing
import inspect
import types
from functools import lru_cache
from typing import (
    Tuple,
    Optional,
    TypeVar,
    Type,
    Union,
    List,
    Any,
    Dict,
    Callable,
)
from enum import Enum

from .exceptions import MtGridException

# namedtuple type, NamedTuple isn't usable as a bound
NT = TypeVar("NT")

T = TypeVar("T")

# all register and memory values are 64-bit signed words
WORD_BITS = 64
_WORD_MASK = (1 << WORD_BITS) - 1
_SIGN_BIT = 1 << (WORD_BITS - 1)

PRIMITIVES = (str, int, float, bool)

above_310 = sys.version_info >= (3, 10)


def cache(user_function: Callable[..., T]) -> Callable[..., T]:
    return lru_cache(maxsize=None)(user_function)


def wrap_word(value: int) -> int:
    """
    Truncate an integer to a 64-bit two's complement word

    >>> wrap_word(5)
    5
    >>> wrap_word(2**63)
    -9223372036854775808
    >>> wrap_word(-1)
    -1
    """
    value &= _WORD_MASK
    if value & _SIGN_BIT:
        value -= 1 << WORD_BITS
    return value


def is_power_of_two(n: int) -> bool:
    """
    >>> [is_power_of_two(n) for n in (0, 1, 2, 3, 4, 12, 128)]
    [False, True, True, False, True, False, True]
    """
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    """
    >>> [next_power_of_two(n) for n in (1, 2, 3, 5, 8)]
    [1, 2, 4, 8, 8]
    """
    if n < 1:
        raise ValueError(f"{n} is not a positive count")
    return 1 << (n - 1).bit_length()


@cache
def get_union_args(cls: Type) -> Optional[Tuple[List[Type[Any]], bool]]:
    """
    >>> get_union_args(Optional[str])
    ([<class 'str'>], True)
    >>> get_union_args(str)
    """
    is_union_type = False
    if above_310 and typing.get_origin(cls) == types.UnionType:  # type: ignore[attr-defined]
        is_union_type = True
    if not is_union_type and getattr(cls, "__origin__", None) == Union:
        is_union_type = True
    if not is_union_type:
        return None
    args: Tuple[Type, ...] = cls.__args__
    arg_list: List[Type] = [e for e in args if e is not type(None)]
    return arg_list, type(None) in args


def resolve_annotation_single(cls: Type) -> Tuple[Type, bool]:
    """
    Strip Optional[] off a field annotation
    """
    is_optional = False
    res = get_union_args(cls)
    if res is not None:
        attr_types, is_optional = res
        if len(attr_types) == 1:
            cls = attr_types[0]
    return cls, is_optional


def is_primitive(cls: Type) -> bool:
    """
    >>> is_primitive(int), is_primitive(list)
    (True, False)
    """
    return cls in PRIMITIVES


def is_namedtuple_type(thing: Type) -> bool:
    return (
        isinstance(thing, type)
        and hasattr(thing, "_fields")
        and issubclass(thing, tuple)
    )


@cache
def get_sequence_item_type(cls: Type) -> Optional[Type]:
    """
    Item type of List[X] / Tuple[X, ...] annotations, None for anything else

    >>> get_sequence_item_type(List[int])
    <class 'int'>
    >>> get_sequence_item_type(Tuple[str, ...])
    <class 'str'>
    >>> get_sequence_item_type(int) is None
    True
    """
    origin = typing.get_origin(cls)
    if origin not in (list, tuple):
        return None
    args = typing.get_args(cls)
    if len(args) == 0:
        return None
    if origin is tuple and not (len(args) == 2 and args[1] is Ellipsis):
        return None
    item: Type = args[0]
    return item


@cache
def inspect_signature_dict(nt: Callable[..., Any]) -> Dict[str, Type]:
    hints = typing.get_type_hints(nt)
    return {
        name: hints.get(name, param.annotation)
        for name, param in inspect.signature(nt).parameters.items()
    }


def enum_getval(enum: Type[Enum], value: Any) -> Enum:
    """
    Find the member of an enumeration by name (case-insensitive) or by value

    >>> class Color(Enum):
    ...     RED = "red"
    >>> enum_getval(Color, "RED")
    <Color.RED: 'red'>
    >>> enum_getval(Color, "red")
    <Color.RED: 'red'>
    """
    if isinstance(value, str) and value.upper() in enum.__members__:
        return enum[value.upper()]
    try:
        return enum(value)
    except ValueError:
        pass
    raise MtGridException(
        f"Could not find {value} on Enumeration {enum.__name__}, expected one of {list(enum.__members__)}"
    )
