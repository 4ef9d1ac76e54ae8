import json
from pathlib import Path

import pytest
import yaml

from mtgrid.__main__ import (
    EXIT_DEADLOCK,
    EXIT_ERROR,
    EXIT_LIMIT,
    EXIT_OK,
    run_cli,
)

PROGRAMS = Path(__file__).parent / "programs"


def _write(tmp_path: Path, name: str, text: str) -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


def test_run_writes_stats_and_trace(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    cfg = _write(tmp_path, "chip.cfg", "cores = 4\nmem_offchip = 100\n")
    stats = tmp_path / "stats.txt"
    trace = tmp_path / "trace.tsv"
    code = run_cli(
        [
            "run",
            "--config",
            str(cfg),
            "--program",
            str(PROGRAMS / "prefix_sum.mtasm"),
            "--stats",
            str(stats),
            "--trace",
            str(trace),
        ]
    )
    assert code == EXIT_OK
    assert capsys.readouterr().out == "5050\n"
    text = stats.read_text()
    assert text.startswith("cycles = ")
    assert "core0.threads_created = 101" in text
    assert trace.read_text().splitlines()[-1].split("\t")[2] == "HALT"

    # the trace alone reproduces the stats
    assert run_cli(["stats", str(trace)]) == EXIT_OK
    assert capsys.readouterr().out == text

    assert run_cli(["check", str(trace)]) == EXIT_OK
    assert capsys.readouterr().out == "no violations\n"


@pytest.mark.parametrize("fmt", ["json", "yaml"])
def test_stats_formats(tmp_path: Path, fmt: str) -> None:
    stats = tmp_path / f"stats.{fmt}"
    code = run_cli(
        [
            "run",
            "--program",
            str(PROGRAMS / "prefix_sum.mtasm"),
            "--stats",
            str(stats),
            "--stats-format",
            fmt,
        ]
    )
    assert code == EXIT_OK
    text = stats.read_text()
    doc = json.loads(text) if fmt == "json" else yaml.safe_load(text)
    assert doc["cycles"] > 0
    assert len(doc["cores"]) == 4
    assert doc["cores"][0]["threads_created"] == 101


def test_deadlock_exit(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    prog = _write(tmp_path, "stuck.mtasm", ".thread main l=2\n    ADD l0, l1, #1\n    END\n")
    assert run_cli(["run", "--program", str(prog)]) == EXIT_DEADLOCK
    err = capsys.readouterr().err
    assert "deadlock at cycle" in err
    assert "thread 0 (main)" in err


def test_cycle_limit_exit(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    prog = _write(tmp_path, "spin.mtasm", "main:\n    BR main\n    END\n")
    assert run_cli(["run", "--program", str(prog), "--max-cycles", "100"]) == EXIT_LIMIT
    assert "cycle limit 100" in capsys.readouterr().err


def test_errors(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    prog = _write(tmp_path, "bad.mtasm", "main:\n  FOO\n  END\n")
    assert run_cli(["run", "--program", str(prog)]) == EXIT_ERROR
    assert "error: 2:3: unknown opcode 'FOO'" in capsys.readouterr().err

    assert run_cli(["run", "--program", str(tmp_path / "missing.mtasm")]) == EXIT_ERROR

    cfg = _write(tmp_path, "chip.cfg", "cores = 6\n")
    ok = _write(tmp_path, "ok.mtasm", "main: END\n")
    assert run_cli(["run", "--config", str(cfg), "--program", str(ok)]) == EXIT_ERROR
    assert "cores: 6 is not a power of two" in capsys.readouterr().err


def test_asm_roundtrip(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert run_cli(["asm", str(PROGRAMS / "prefix_sum.mtasm")]) == EXIT_OK
    listing = capsys.readouterr().out
    assert ".thread step g=0 s=1 l=1 d=1" in listing
    again = _write(tmp_path, "again.mtasm", listing)
    assert run_cli(["run", "--program", str(again)]) == EXIT_OK
    assert capsys.readouterr().out == "5050\n"
