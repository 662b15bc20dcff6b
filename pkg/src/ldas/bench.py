"""Timing sweep: cost of one design iteration's solves per mode, mesh size and backend."""

from __future__ import annotations

import csv
import logging
import math
import statistics
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import SymmetricSystem, preprocess
from .core import DEFAULT_TOL, OrthoBasis, SolveLedger
from .responses import MODES, ProblemDefinition, build_responses, solve_states

log = logging.getLogger(__name__)

HEADER = ("n", "mode", "backend", "solves", "prep_s", "solve_s", "t_hat")
DEFAULT_SIZES = (20, 40, 80, 160)


@dataclass
class BenchConfig:
    """Sweep settings; ``sizes`` are elements per side of a square mesh."""

    sizes: tuple = DEFAULT_SIZES
    backends: tuple = ("direct", "cg")
    modes: tuple = MODES
    repeats: int = 3
    out: str | None = None
    tol: float = DEFAULT_TOL
    workers: int = 1

    def __post_init__(self):
        self.sizes = tuple(sorted(int(s) for s in self.sizes))
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        unknown = set(self.modes) - set(MODES)
        if unknown:
            raise ValueError(f"unknown modes {sorted(unknown)}")
        if "naive" not in self.modes:
            # normalization reference
            self.modes = ("naive",) + tuple(self.modes)


@dataclass
class BenchRow:
    n: int
    mode: str
    backend: str
    solves: int
    prep_s: float
    solve_s: float
    t_hat: float
    total_s: float = float("nan")
    flagged: bool = False

    def csv_row(self) -> list:
        return [self.n, self.mode, self.backend, self.solves, f"{self.prep_s:.6g}", f"{self.solve_s:.6g}",
                f"{self.t_hat:.6g}"]


def time_iteration(problem: ProblemDefinition, system: SymmetricSystem, mode: str, backend: str,
                   tol: float = DEFAULT_TOL, workers: int = 1) -> tuple[float, SolveLedger]:
    """Wall time of preprocessing plus every state and adjoint solve of one iteration."""
    responses = build_responses(problem)
    ledger = SolveLedger()
    t0 = time.perf_counter()
    prepared = preprocess(system, backend)
    ledger.record_preprocess(prepared.preprocess_seconds)
    solve_states(problem, system, prepared, responses, mode, ledger, OrthoBasis(system.version), tol,
                 workers)
    return time.perf_counter() - t0, ledger


class _Baton:
    """Round-robin turn passing: a mode thread only runs while it holds the turn."""

    def __init__(self, names):
        self._cond = threading.Condition()
        self._order = list(names)
        self._turn = 0
        self._since = 0.0
        self.held = dict.fromkeys(names, 0.0)

    def _mine(self, name) -> bool:
        return self._order[self._turn] == name

    def acquire(self, name) -> None:
        with self._cond:
            self._cond.wait_for(lambda: self._mine(name))
            self._since = time.perf_counter()

    def _release(self, name, done: bool) -> float:
        now = time.perf_counter()
        self.held[name] += now - self._since
        i = self._order.index(name)
        if done:
            self._order.pop(i)
            self._turn = i % len(self._order) if self._order else 0
        else:
            self._turn = (i + 1) % len(self._order)
        self._cond.notify_all()
        return now

    def pass_turn(self, name) -> float:
        """Hand the turn on, wait for it to come back and return the time spent waiting."""
        with self._cond:
            released = self._release(name, False)
            self._cond.wait_for(lambda: self._mine(name))
            self._since = time.perf_counter()
            return self._since - released

    def finish(self, name) -> None:
        with self._cond:
            self._release(name, True)


class _TurnTakingSolver:
    def __init__(self, inner, baton: _Baton, name: str):
        self._inner, self._baton, self._name = inner, baton, name
        self.waited = 0.0

    def __getattr__(self, attr):
        return getattr(self._inner, attr)

    def solve(self, rhs):
        x = self._inner.solve(rhs)
        self.waited += self._baton.pass_turn(self._name)
        return x


def time_interleaved(problem: ProblemDefinition, system: SymmetricSystem, modes, backend: str,
                     tol: float = DEFAULT_TOL) -> dict[str, tuple[float, SolveLedger]]:
    """Like :func:`time_iteration` for several modes at once, run in lock-step.

    Each mode runs in its own thread and the turn passes round-robin after
    every backend solve, so slow changes in machine speed hit all modes
    alike. A mode's time is the sum of the intervals it held the turn.
    """
    baton = _Baton(modes)
    responses = {m: build_responses(problem) for m in modes}
    ledgers, errors = {}, []

    def work(mode):
        baton.acquire(mode)
        try:
            ledger = SolveLedger()
            prepared = preprocess(system, backend)
            ledger.record_preprocess(prepared.preprocess_seconds)
            wrapped = _TurnTakingSolver(prepared, baton, mode)
            solve_states(problem, system, wrapped, responses[mode], mode, ledger,
                         OrthoBasis(system.version), tol)
            # the solve timers also ran while other modes held the turn
            ledger.solve_seconds -= wrapped.waited
            ledgers[mode] = ledger
        except BaseException as exc:  # re-raised in the calling thread
            errors.append(exc)
        finally:
            baton.finish(mode)

    threads = [threading.Thread(target=work, args=(m,)) for m in modes]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return {m: (baton.held[m], ledgers[m]) for m in modes}


def _warm_up(backends) -> None:
    problem = ProblemDefinition.default(4)
    system = problem.assemble(problem.filter(problem.initial_design()))
    for b in backends:
        preprocess(system, b).solve(np.ones(system.n))


def bench_size(nel: int, config: BenchConfig) -> list[BenchRow]:
    problem = ProblemDefinition.default(nel)
    system = problem.assemble(problem.filter(problem.initial_design()))
    system.matrix  # noqa: B018 - build the cached full matrix outside the timed region
    rows = []
    for backend in config.backends:
        samples = {mode: ([], [], [], set()) for mode in config.modes}
        modes = list(config.modes)
        # modes run in lock-step within a repeat, starting mode rotated between repeats,
        # so machine drift hits all of them alike
        for rep in range(config.repeats):
            k = rep % len(modes)
            order = modes[k:] + modes[:k]
            if config.workers == 1:
                timed = time_interleaved(problem, system, order, backend, config.tol)
            else:
                timed = {m: time_iteration(problem, system, m, backend, config.tol, config.workers) for m in order}
            for mode in order:
                total, ledger = timed[mode]
                totals, preps, solves, counts = samples[mode]
                totals.append(total)
                preps.append(ledger.preprocess_seconds)
                solves.append(ledger.solve_seconds)
                counts.add(ledger.backend_solves)
        stats = {mode: (statistics.median(t), statistics.median(p), statistics.median(s), c.pop())
                 for mode, (t, p, s, c) in samples.items()}
        ref = stats["naive"][0]
        naive_totals = samples["naive"][0]
        for mode in config.modes:
            total, prep, solve, count = stats[mode]
            # ratio within each repeat, then the median: cancels drift slower than one repeat
            ratios = [t / r for t, r in zip(samples[mode][0], naive_totals) if r > 0]
            t_hat = statistics.median(ratios) if ratios else float("nan")
            flagged = not all(math.isfinite(v) and v > 0 for v in (total, prep, solve, ref))
            if flagged:
                log.warning("timing anomaly at n=%d mode=%s backend=%s", system.n, mode, backend)
            rows.append(BenchRow(system.n, mode, backend, count, prep, solve, t_hat, total, flagged))
            log.info("n=%d %s %s solves=%d t_hat=%.3f", system.n, backend, mode, count, t_hat)
    return rows


def preprocess_share(rows: list[BenchRow], n: int, backend: str) -> float:
    """Preprocessing time over the total naive time at one ``(n, backend)``."""
    naive = next(r for r in rows if r.n == n and r.backend == backend and r.mode == "naive")
    return naive.prep_s / naive.total_s


def write_csv(rows: list[BenchRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for r in rows:
            w.writerow(r.csv_row())


def run_bench(config: BenchConfig) -> list[BenchRow]:
    """Run the sweep and write the CSV when ``config.out`` is set."""
    _warm_up(config.backends)
    rows = []
    for nel in config.sizes:
        rows.extend(bench_size(nel, config))
    if config.out:
        write_csv(rows, config.out)
    return rows

