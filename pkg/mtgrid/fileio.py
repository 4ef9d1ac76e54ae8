import json
from io import StringIO
from pathlib import Path

from typing import Dict, Any, Optional, Literal, Union

from .serialize import serialize_namedtuple
from .typehelpers import NT


Format = Literal["json", "yaml"]


def _pretty_print(kwargs: Dict[str, Any]) -> Dict[str, Any]:
    if "indent" not in kwargs:
        kwargs["indent"] = "    "
    return kwargs


def _normalize(_path: Union[Path, str]) -> Path:
    p: Path
    if isinstance(_path, str):
        p = Path(_path)
    else:
        p = _path
    return p.expanduser().absolute()


def _detect_format(path: Path, format: Optional[Format] = None) -> Optional[Format]:
    """
    >>> _detect_format(Path("chip.yml"))
    'yaml'
    >>> _detect_format(Path("chip.cfg")) is None
    True
    """
    ext = path.suffix
    if ext == ".json":
        format = "json"
    elif ext in [".yml", ".yaml"]:
        format = "yaml"
    return format


def dict_dumps(obj: Dict[str, Any], *, format: Format = "json", **kwargs: Any) -> str:
    if format == "json":
        return json.dumps(obj, **_pretty_print(kwargs))
    elif format == "yaml":
        from yaml import safe_dump

        buf = StringIO()
        # keep insertion order, stats documents have a stable key order
        safe_dump(obj, buf, sort_keys=False, **kwargs)
        return buf.getvalue()
    else:
        raise ValueError(f"Unknown format {format} while trying to dump {obj}")


def _load_json(text: str) -> Any:
    try:
        # speedup load if orjson is installed
        import orjson

        return orjson.loads(text)
    except ImportError:
        pass
    return json.loads(text)


def dict_loads(text: str, *, format: Format = "json") -> Dict[str, Any]:
    if format == "json":
        loaded_obj = _load_json(text)
    elif format == "yaml":
        from yaml import safe_load

        loaded_obj = safe_load(text)
    else:
        raise ValueError(f"Unknown format {format} while trying to load")
    if loaded_obj is None:
        return {}
    if not isinstance(loaded_obj, dict):
        raise TypeError(
            f"{loaded_obj} is a {type(loaded_obj).__name__}, expected a top-level mapping from {format} source"
        )
    return loaded_obj


def namedtuple_dumps(nt: NT, *, format: Format = "json", **kwargs: Any) -> str:
    """
    Dump a namedtuple to a JSON/YAML string
    """
    return dict_dumps(serialize_namedtuple(nt), format=format, **kwargs)
