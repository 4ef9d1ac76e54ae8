#!/usr/bin/env python3

"""
So that I can test how changes to the simulator affect how fast it runs
"""

from functools import wraps, partial
from cProfile import run
from pathlib import Path
from pstats import SortKey
from time import perf_counter

from mtgrid import ChipConfig, assemble, simulate

ITERATIONS = 5
PROGRAMS = Path(__file__).parent.parent / "tests" / "programs"

latency_program = assemble((PROGRAMS / "latency.mtasm").read_text())
matmul_program = assemble((PROGRAMS / "matmul.mtasm").read_text())
matmul_seq_program = assemble((PROGRAMS / "matmul_seq.mtasm").read_text())

default_chip = ChipConfig()
big_chip = ChipConfig(num_cores=64)


def benchmark(f):
    @wraps(f)
    def wrapper(*args, **kwargs):
        print("Running {}...".format(f.__name__))
        start = perf_counter()
        for _ in range(ITERATIONS):
            result = f(*args, **kwargs)
        end = perf_counter()
        elapsed = end - start
        print("Elapsed time: {}".format(elapsed))
        print("Time per run: {}".format(elapsed / ITERATIONS))
        print("Simulated cycles per second: {}".format(result.cycles * ITERATIONS / elapsed))

    return wrapper


def latency():
    return simulate(default_chip, latency_program)


def matmul():
    return simulate(default_chip, matmul_program)


def matmul_big_chip():
    return simulate(big_chip, matmul_program)


def matmul_seq():
    return simulate(default_chip, matmul_seq_program)


cProfileCumulative = partial(run, sort=SortKey.TIME)


def run_benchmarks() -> None:
    benchmark(latency)()
    cProfileCumulative("latency()")
    benchmark(matmul)()
    cProfileCumulative("matmul()")
    benchmark(matmul_big_chip)()
    benchmark(matmul_seq)()
    cProfileCumulative("matmul_seq()")


if __name__ == "__main__":
    run_benchmarks()
