from typing import Dict, Type, Any
from enum import Enum

from .typehelpers import (
    get_sequence_item_type,
    is_primitive,
    resolve_annotation_single,
    inspect_signature_dict,
    is_namedtuple_type,
    enum_getval,
    NT,
)
from .warn import warn


def _serialize_type(value: Any, cls: Type, is_optional: bool) -> Any:
    """
    Convert one NamedTuple field value to its JSON-compatible form
    """
    if value is None:
        if not is_optional:
            warn(
                f"No value for non-optional type {value}, attempting to be serialized to {getattr(cls, '__name__', cls)}"
            )
        return None
    item_type = get_sequence_item_type(cls)
    if item_type is not None:
        inner, inner_opt = resolve_annotation_single(item_type)
        return [_serialize_type(x, inner, inner_opt) for x in value]
    if isinstance(cls, type) and issubclass(cls, Enum):
        # dumps the member name, which survives value changes
        return value.name if isinstance(value, Enum) else value
    if is_namedtuple_type(cls):
        return serialize_namedtuple(value)
    if is_primitive(cls):
        return value
    warn(f"No known way to serialize {getattr(cls, '__name__', cls)}")
    return value


def serialize_namedtuple(nt: NT) -> Dict[str, Any]:
    """
    Serialize a NamedTuple (recursively) to a JSON-compatible dictionary,
    using the type hints of its fields
    """
    json_dict: Dict[str, Any] = {}
    for attr_name, nt_annotation in inspect_signature_dict(nt.__class__).items():
        attr_type, is_optional = resolve_annotation_single(nt_annotation)
        json_dict[attr_name] = _serialize_type(
            getattr(nt, attr_name), attr_type, is_optional
        )
    return json_dict


def _deserialize_type(value: Any, cls: Type, is_optional: bool) -> Any:
    if value is None:
        return None
    item_type = get_sequence_item_type(cls)
    if item_type is not None:
        inner, inner_opt = resolve_annotation_single(item_type)
        items = [_deserialize_type(x, inner, inner_opt) for x in value]
        return tuple(items) if getattr(cls, "__origin__", None) is tuple else items
    if isinstance(cls, type) and issubclass(cls, Enum):
        return enum_getval(cls, value)
    if is_namedtuple_type(cls):
        return deserialize_namedtuple(value, to=cls)
    if cls is bool:
        if isinstance(value, str):
            lval = value.lower()
            if lval in ("true", "yes", "1"):
                return True
            if lval in ("false", "no", "0"):
                return False
        return bool(value)
    if cls is int:
        return int(value)
    if cls is float:
        return float(value)
    if cls is str:
        return str(value)
    warn(f"No known way to deserialize {cls}")
    return value


def deserialize_namedtuple(obj: Dict[str, Any], to: Type[NT]) -> NT:
    """
    Build the NamedTuple 'to' from a dictionary loaded from JSON/YAML

    Missing keys fall back to the NamedTuple field defaults, unknown keys
    are reported and ignored
    """
    if not isinstance(obj, dict):
        raise TypeError(
            f"{obj} is a {type(obj).__name__}, expected a mapping to load {to.__name__}"  # type: ignore[attr-defined]
        )
    fields = inspect_signature_dict(to)  # type: ignore[arg-type]
    for key in obj:
        if key not in fields:
            warn(f"Ignoring unknown key {key} while loading {to.__name__}")  # type: ignore[attr-defined]
    kwargs: Dict[str, Any] = {}
    for attr_name, nt_annotation in fields.items():
        if attr_name not in obj:
            continue
        attr_type, is_optional = resolve_annotation_single(nt_annotation)
        kwargs[attr_name] = _deserialize_type(obj[attr_name], attr_type, is_optional)
    return to(**kwargs)  # type: ignore[call-arg]

