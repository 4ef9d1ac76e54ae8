"""
The chip blueprint, the key = value configuration document and
the place identifier arithmetic
"""

from pathlib import Path
from enum import Enum
from typing import NamedTuple, Dict, Tuple, Optional, Union, List, Any

from .exceptions import ConfigError, PlaceError
from .fileio import _detect_format, _normalize, dict_loads
from .serialize import deserialize_namedtuple
from .typehelpers import is_power_of_two


class Latencies(NamedTuple):
    l1_hit: int = 2
    l2_hit: int = 10
    offchip: int = 100
    fpu_op: int = 4


class ChipConfig(NamedTuple):
    num_cores: int = 4
    thread_entries_per_core: int = 256
    family_entries_per_core: int = 32
    int_registers_per_core: int = 1024
    min_alloc_registers: int = 31
    exclusive_contexts_per_core: int = 1
    delegation_hop_cycles: int = 1
    distribution_hop_cycles: int = 2
    creation_setup_cycles: int = 4
    latencies: Latencies = Latencies()
    # issued instructions before a thread yields to other ready threads, 0 disables
    fairness_quantum: int = 16
    pipeline_fill_cycles: int = 5
    sep_cycles: int = 20
    sep_reserved: bool = False
    l1_lines: int = 64
    l2_lines: int = 512


# document key -> (ChipConfig field, Latencies field)
KEYS: Dict[str, Tuple[str, Optional[str]]] = {
    "cores": ("num_cores", None),
    "threads_per_core": ("thread_entries_per_core", None),
    "families_per_core": ("family_entries_per_core", None),
    "registers_per_core": ("int_registers_per_core", None),
    "min_alloc_registers": ("min_alloc_registers", None),
    "delegation_hop": ("delegation_hop_cycles", None),
    "distribution_hop": ("distribution_hop_cycles", None),
    "creation_setup": ("creation_setup_cycles", None),
    "lat_l1": ("latencies", "l1_hit"),
    "lat_l2": ("latencies", "l2_hit"),
    "mem_offchip": ("latencies", "offchip"),
    "lat_fpu": ("latencies", "fpu_op"),
    "fairness_quantum": ("fairness_quantum", None),
    "pipeline_fill": ("pipeline_fill_cycles", None),
    "sep_cycles": ("sep_cycles", None),
    "sep_reserved": ("sep_reserved", None),
    "l1_lines": ("l1_lines", None),
    "l2_lines": ("l2_lines", None),
}

_BOOL_KEYS = {"sep_reserved"}


def _key_value(cfg: ChipConfig, key: str) -> Any:
    field, sub = KEYS[key]
    val = getattr(cfg, field)
    return getattr(val, sub) if sub is not None else val


def _parse_value(key: str, raw: str, line: int) -> Union[int, bool]:
    if key in _BOOL_KEYS:
        lval = raw.lower()
        if lval in ("true", "yes", "1"):
            return True
        if lval in ("false", "no", "0"):
            return False
        raise ConfigError(f"expected true or false, got '{raw}'", key=key, line=line)
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"expected an integer, got '{raw}'", key=key, line=line)


def _with_values(values: Dict[str, Union[int, bool]]) -> ChipConfig:
    top: Dict[str, Any] = {}
    lat: Dict[str, Any] = {}
    for key, val in values.items():
        field, sub = KEYS[key]
        if sub is None:
            top[field] = val
        else:
            lat[sub] = val
    return ChipConfig(**top, latencies=Latencies(**lat))


def validate_config(cfg: ChipConfig) -> ChipConfig:
    """
    Check the blueprint invariants, naming the offending document key

    >>> validate_config(ChipConfig(num_cores=12))
    Traceback (most recent call last):
    ...
    mtgrid.exceptions.ConfigError: cores: 12 is not a power of two
    """
    if not is_power_of_two(cfg.num_cores):
        raise ConfigError(f"{cfg.num_cores} is not a power of two", key="cores")
    at_least_one = [
        "threads_per_core",
        "families_per_core",
        "registers_per_core",
        "min_alloc_registers",
        "delegation_hop",
        "distribution_hop",
        "lat_l1",
        "lat_l2",
        "mem_offchip",
        "lat_fpu",
        "sep_cycles",
        "l1_lines",
        "l2_lines",
    ]
    for key in at_least_one:
        val = _key_value(cfg, key)
        if val < 1:
            raise ConfigError(f"{val} must be at least 1", key=key)
    for key in ("creation_setup", "fairness_quantum", "pipeline_fill"):
        val = _key_value(cfg, key)
        if val < 0:
            raise ConfigError(f"{val} must not be negative", key=key)
    if cfg.min_alloc_registers > cfg.int_registers_per_core:
        raise ConfigError(
            f"{cfg.min_alloc_registers} exceeds registers_per_core ({cfg.int_registers_per_core})",
            key="min_alloc_registers",
        )
    if cfg.exclusive_contexts_per_core != 1:
        raise ConfigError(
            "each core has exactly one exclusive context",
            key="exclusive_contexts_per_core",
        )
    return cfg


def load_config(text: str) -> ChipConfig:
    """
    Parse a line-oriented 'key = value' configuration document,
    unspecified keys take their defaults

    >>> load_config("cores = 8  # bigger chip").num_cores
    8
    >>> load_config("cores = 128\\nmem_offchip = 100").latencies.offchip
    100
    """
    values: Dict[str, Union[int, bool]] = {}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip().lower(), raw.strip()
        if not sep or not key or not raw:
            raise ConfigError(f"expected 'key = value', got '{line}'", line=lineno)
        if key not in KEYS:
            raise ConfigError(f"unknown key '{key}'", key=key, line=lineno)
        values[key] = _parse_value(key, raw, lineno)
    return validate_config(_with_values(values))


def load_config_file(path: Union[Path, str]) -> ChipConfig:
    """
    Load a configuration file, YAML/JSON documents (by file extension) map
    ChipConfig field names to values, anything else is a key = value document
    """
    p = _normalize(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"could not read {p}: {e}")
    fmt = _detect_format(p)
    if fmt is None:
        return load_config(text)
    try:
        cfg = deserialize_namedtuple(dict_loads(text, format=fmt), ChipConfig)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"could not load {p}: {e}")
    return validate_config(cfg)


def dump_config(cfg: ChipConfig) -> str:
    """
    >>> dump_config(ChipConfig()).splitlines()[0]
    'cores = 4'
    """
    lines: List[str] = []
    for key in KEYS:
        val = _key_value(cfg, key)
        if isinstance(val, bool):
            lines.append(f"{key} = {str(val).lower()}")
        else:
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


class PlaceKind(Enum):
    LOCAL = "local"
    DEFAULT = "default"
    EXPLICIT = "explicit"


LOCAL_PLACEID = 0
DEFAULT_PLACEID = 1


class PlaceSpec(NamedTuple):
    kind: PlaceKind
    # start_core and size are 0 for the symbolic (local/default) places,
    # which are resolved against the creating thread
    start_core: int = 0
    size: int = 0

    @property
    def cores(self) -> range:
        return range(self.start_core, self.start_core + self.size)


def decode_place(placeid: int, cfg: ChipConfig) -> PlaceSpec:
    """
    >>> decode_place(20, ChipConfig(num_cores=16))
    PlaceSpec(kind=<PlaceKind.EXPLICIT: 'explicit'>, start_core=8, size=4)
    >>> decode_place(0, ChipConfig()).kind, decode_place(1, ChipConfig()).kind
    (<PlaceKind.LOCAL: 'local'>, <PlaceKind.DEFAULT: 'default'>)
    """
    if placeid < 0:
        raise PlaceError(f"placeid {placeid} is negative")
    if placeid == LOCAL_PLACEID:
        return PlaceSpec(PlaceKind.LOCAL)
    if placeid == DEFAULT_PLACEID:
        return PlaceSpec(PlaceKind.DEFAULT)
    start = (placeid & (placeid - 1)) >> 1
    size = placeid & -placeid
    if start + size > cfg.num_cores:
        raise PlaceError(
            f"placeid {placeid} (cores {start}..{start + size - 1}) is outside the {cfg.num_cores}-core chip"
        )
    return PlaceSpec(PlaceKind.EXPLICIT, start, size)


def encode_place(start: int, size: int) -> int:
    """
    >>> encode_place(8, 4)
    20
    >>> encode_place(2, 4)
    Traceback (most recent call last):
    ...
    mtgrid.exceptions.PlaceError: start core 2 is not a multiple of the place size 4
    """
    if not is_power_of_two(size):
        raise PlaceError(f"place size {size} is not a power of two")
    if start < 0:
        raise PlaceError(f"start core {start} is negative")
    if start % size != 0:
        raise PlaceError(
            f"start core {start} is not a multiple of the place size {size}"
        )
    placeid = (start << 1) | size
    if placeid == DEFAULT_PLACEID:
        raise PlaceError(
            "the single-core place at core 0 encodes to placeid 1, which is reserved for the default place"
        )
    return placeid


def round_trip_delay(core_count: int, cfg: Optional[ChipConfig] = None) -> int:
    """
    Cycles for a message to sweep a chain of core_count cores and come back

    >>> [round_trip_delay(c) for c in (1, 4, 128)]
    [4, 16, 512]
    """
    if core_count < 1:
        raise ConfigError(f"a chain needs at least one core, got {core_count}")
    if cfg is None:
        cfg = ChipConfig()
    return 2 * cfg.distribution_hop_cycles * core_count
