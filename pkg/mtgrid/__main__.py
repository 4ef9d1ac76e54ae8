import sys
from functools import partial
from pathlib import Path
from typing import Optional, List, Sequence

import click

from .assembler import assemble, disassemble
from .chip import Chip, RunResult
from .config import ChipConfig, load_config_file
from .consistency import Violation, check_trace
from .exceptions import MtGridException
from .kernel import Termination
from .options import Option, options
from .stats import emit_stats, stats_from_trace
from .trace import emit_trace, load_trace

eprint = partial(click.echo, err=True)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEADLOCK = 2
EXIT_LIMIT = 3
EXIT_VIOLATIONS = 4

_STATS_FORMATS = click.Choice(["text", "json", "yaml"])


def _report_violations(violations: Sequence[Violation]) -> None:
    for v in violations:
        eprint(f"violation [{v.clause}] family {v.fid} thread {v.tid}: {v.detail}")


def _exit_code(result: RunResult) -> int:
    if result.reason is Termination.DEADLOCK:
        eprint(f"deadlock at cycle {result.cycles}, waiting threads:")
        for b in result.blocked:
            eprint(f"  core {b.core} thread {b.tid} ({b.thread}) on {b.cell}")
        return EXIT_DEADLOCK
    if result.reason is Termination.LIMIT:
        eprint(f"stopped at the cycle limit {result.cycles}")
        return EXIT_LIMIT
    if result.violations:
        _report_violations(result.violations)
        return EXIT_VIOLATIONS
    return EXIT_OK


@click.group()
def main() -> None:
    """
    Simulate programs on a microthreaded many-core chip
    """


@main.command(short_help="run a program")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="chip configuration: key = value, YAML or JSON",
)
@click.option(
    "--program",
    "program_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="assembly program",
)
@click.option("--stats", "stats_path", type=click.Path(dir_okay=False, path_type=Path), help="write statistics here")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False, path_type=Path), help="write the event trace here")
@click.option("--max-cycles", type=click.IntRange(min=0), default=None, help="stop after this many cycles")
@click.option("--seq-fallback", is_flag=True, default=False, help="run families sequentially when allocation fails")
@click.option("--check-consistency", is_flag=True, default=False, help="check the memory ordering of the run")
@click.option("--stats-format", type=_STATS_FORMATS, default="text", show_default=True)
def run(
    config_path: Optional[Path],
    program_path: Path,
    stats_path: Optional[Path],
    trace_path: Optional[Path],
    max_cycles: Optional[int],
    seq_fallback: bool,
    check_consistency: bool,
    stats_format: str,
) -> None:
    cfg = load_config_file(config_path) if config_path is not None else ChipConfig()
    program = assemble(program_path.read_text())
    enabled: List[Option] = []
    if seq_fallback:
        enabled.append(Option.SEQ_FALLBACK)
    if check_consistency:
        enabled.append(Option.CHECK_CONSISTENCY)
    with options(*enabled):
        result = Chip(cfg, program).run(max_cycles)
    for line in result.output:
        click.echo(line)
    if trace_path is not None:
        with trace_path.open("w") as f:
            emit_trace(result.trace, f)
    if stats_path is not None:
        with stats_path.open("w") as f:
            emit_stats(result.stats, f, stats_format)
    sys.exit(_exit_code(result))


@main.command(short_help="assemble and print the disassembly")
@click.argument("program_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def asm(program_path: Path) -> None:
    click.echo(disassemble(assemble(program_path.read_text())), nl=False)


@main.command(short_help="recompute statistics from a trace")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--stats-format", type=_STATS_FORMATS, default="text", show_default=True)
def stats(trace_path: Path, stats_format: str) -> None:
    emit_stats(stats_from_trace(load_trace(trace_path.read_text())), sys.stdout, stats_format)


@main.command(short_help="check the memory ordering of a trace")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def check(trace_path: Path) -> None:
    violations = check_trace(load_trace(trace_path.read_text()))
    if violations:
        _report_violations(violations)
        sys.exit(EXIT_VIOLATIONS)
    click.echo("no violations")


def run_cli(args: Sequence[str]) -> int:
    """
    Run the command line, returning its exit code instead of exiting
    """
    try:
        main.main(args=list(args), prog_name="mtgrid", standalone_mode=False)
    except SystemExit as e:
        return int(e.code or 0)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_ERROR
    except click.Abort:
        eprint("Aborted!")
        return EXIT_ERROR
    except (MtGridException, OSError, ValueError, TypeError) as e:
        eprint(f"error: {e}")
        return EXIT_ERROR
    return EXIT_OK


def entry() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    entry()
