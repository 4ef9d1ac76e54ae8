import json
from pathlib import Path

import pytest
import yaml

from mtgrid.config import (
    ChipConfig,
    Latencies,
    PlaceKind,
    load_config,
    load_config_file,
    dump_config,
    decode_place,
    encode_place,
    round_trip_delay,
    validate_config,
)
from mtgrid.exceptions import ConfigError, PlaceError


def test_defaults() -> None:
    cfg = load_config("")
    assert cfg == ChipConfig()
    assert cfg.num_cores == 4
    assert cfg.min_alloc_registers == 31
    assert cfg.latencies == Latencies(l1_hit=2, l2_hit=10, offchip=100, fpu_op=4)


def test_load_config_keys() -> None:
    cfg = load_config(
        """
        # a bigger chip
        cores = 128
        mem_offchip = 250
        lat_fpu = 0x8
        sep_reserved = yes
        """
    )
    assert cfg.num_cores == 128
    assert cfg.latencies.offchip == 250
    assert cfg.latencies.fpu_op == 8
    # untouched latencies keep their defaults
    assert cfg.latencies.l1_hit == 2
    assert cfg.sep_reserved is True


def test_load_config_errors() -> None:
    with pytest.raises(ConfigError, match="not a power of two") as e:
        load_config("cores = 12")
    assert e.value.key == "cores"

    with pytest.raises(ConfigError, match="unknown key 'colors'") as e:
        load_config("cores = 4\ncolors = 3")
    assert e.value.line == 2

    with pytest.raises(ConfigError, match="expected an integer"):
        load_config("lat_l1 = fast")

    with pytest.raises(ConfigError, match="expected 'key = value'"):
        load_config("cores")

    with pytest.raises(ConfigError, match="must be at least 1"):
        load_config("lat_l1 = 0")

    with pytest.raises(ConfigError, match="exceeds registers_per_core"):
        load_config("registers_per_core = 16")


def test_dump_config_loads_back() -> None:
    cfg = ChipConfig(num_cores=16, fairness_quantum=0, latencies=Latencies(offchip=40))
    assert load_config(dump_config(cfg)) == cfg


def test_load_config_file_formats(tmp_path: Path) -> None:
    kv = tmp_path / "chip.cfg"
    kv.write_text("cores = 8\n")
    assert load_config_file(kv).num_cores == 8

    yml = tmp_path / "chip.yaml"
    yml.write_text(yaml.safe_dump({"num_cores": 16, "latencies": {"offchip": 50}}))
    cfg = load_config_file(yml)
    assert cfg.num_cores == 16
    assert cfg.latencies == Latencies(offchip=50)

    js = tmp_path / "chip.json"
    js.write_text(json.dumps({"num_cores": 3}))
    with pytest.raises(ConfigError, match="not a power of two"):
        load_config_file(js)

    with pytest.raises(ConfigError, match="could not read"):
        load_config_file(tmp_path / "missing.cfg")


def test_validate_exclusive_contexts() -> None:
    with pytest.raises(ConfigError, match="exactly one exclusive context"):
        validate_config(ChipConfig(exclusive_contexts_per_core=2))


def test_place_roundtrip_exhaustive() -> None:
    cfg = ChipConfig(num_cores=128)
    seen = set()
    size = 1
    while size <= cfg.num_cores:
        for start in range(0, cfg.num_cores, size):
            if (start, size) == (0, 1):
                with pytest.raises(PlaceError, match="reserved for the default place"):
                    encode_place(start, size)
                continue
            placeid = encode_place(start, size)
            assert placeid not in seen
            seen.add(placeid)
            place = decode_place(placeid, cfg)
            assert place.kind is PlaceKind.EXPLICIT
            assert (place.start_core, place.size) == (start, size)
            assert place.cores == range(start, start + size)
        size *= 2
    # every size-aligned block but the single core at 0
    assert len(seen) == 2 * 128 - 1 - 1


def test_decode_place() -> None:
    cfg = ChipConfig(num_cores=16)
    place = decode_place(20, cfg)
    assert (place.start_core, place.size) == (8, 4)
    assert decode_place(0, cfg).kind is PlaceKind.LOCAL
    assert decode_place(1, cfg).kind is PlaceKind.DEFAULT
    # cores 16..31 are off the chip
    with pytest.raises(PlaceError, match="outside the 16-core chip"):
        decode_place(encode_place(16, 16), cfg)
    with pytest.raises(PlaceError, match="negative"):
        decode_place(-3, cfg)


def test_encode_place_errors() -> None:
    with pytest.raises(PlaceError, match="not a power of two"):
        encode_place(0, 3)
    with pytest.raises(PlaceError, match="not a multiple"):
        encode_place(2, 4)
    with pytest.raises(PlaceError, match="negative"):
        encode_place(-4, 4)


def test_round_trip_delay() -> None:
    c = 1
    while c <= 128:
        assert round_trip_delay(c) == 4 * c
        c *= 2
    slow = ChipConfig(distribution_hop_cycles=3)
    assert round_trip_delay(4, slow) == 24
    with pytest.raises(ConfigError):
        round_trip_delay(0)
