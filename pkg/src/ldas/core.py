"""Linear dependency aware solves against a growing orthogonal load basis.

Loads are checked for linear dependence on the loads seen so far with a
modified Gram-Schmidt sweep. Only the residual of an independent load is
handed to the backend; every state is then assembled from the basis of
solved states.

All vector arithmetic goes through ``numpy`` dot products and in-place
updates, so object arrays of :class:`fractions.Fraction` work as well as
floats (used for exact checks of small examples).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

#: Guard on squared norms; anything below is treated as an exact zero load.
NORM_FLOOR_SQ = 1e-300

DEFAULT_TOL = 1e-6


class ContractViolation(ValueError):
    """An input broke the documented preconditions (shape, finiteness, kind)."""


class StaleBasisError(RuntimeError):
    """The basis belongs to a different system version than the one solved."""


@dataclass
class GsoResult:
    coefficients: list
    residual: np.ndarray


@dataclass
class SolveLedger:
    """Counters and timers for one or more LDAS calls.

    ``backend_solves + reconstructions == loads_requested`` holds after
    every call.
    """

    loads_requested: int = 0
    backend_solves: int = 0
    reconstructions: int = 0
    preprocesses: int = 0
    preprocess_seconds: float = 0.0
    solve_seconds: float = 0.0

    def record_preprocess(self, seconds: float) -> None:
        self.preprocesses += 1
        self.preprocess_seconds += seconds

    def snapshot(self) -> "SolveLedger":
        return replace(self)

    def merge(self, other: "SolveLedger") -> None:
        self.loads_requested += other.loads_requested
        self.backend_solves += other.backend_solves
        self.reconstructions += other.reconstructions
        self.preprocesses += other.preprocesses
        self.preprocess_seconds += other.preprocess_seconds
        self.solve_seconds += other.solve_seconds

    @property
    def balanced(self) -> bool:
        return self.backend_solves + self.reconstructions == self.loads_requested


@dataclass
class OrthoBasis:
    """Paired orthogonal residual loads and their states for one system version."""

    system_version: object
    loads: list = field(default_factory=list)
    states: list = field(default_factory=list)
    generation: int = 0

    def __len__(self) -> int:
        return len(self.loads)

    @property
    def dimension(self) -> int | None:
        return len(self.loads[0]) if self.loads else None

    def append(self, load: np.ndarray, state: np.ndarray) -> None:
        self.loads.append(load)
        self.states.append(state)

    def check(self, system) -> None:
        if self.system_version != system.version:
            raise StaleBasisError(
                f"basis bound to version {self.system_version!r}, "
                f"system is version {system.version!r}; reset the basis first"
            )


def reset_basis(basis: OrthoBasis, new_version) -> OrthoBasis:
    """Empty ``basis`` in place and bind it to ``new_version``."""
    basis.loads.clear()
    basis.states.clear()
    basis.system_version = new_version
    basis.generation += 1
    return basis


def as_load(f, n: int | None = None) -> np.ndarray:
    """Validate a load (or state) vector and return it as a 1-D array."""
    arr = np.asarray(f)
    if arr.ndim != 1:
        raise ContractViolation(f"load must be 1-D, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ContractViolation(f"load has length {arr.shape[0]}, system has {n}")
    if arr.dtype != object and not np.all(np.isfinite(arr)):
        raise ContractViolation("load contains non-finite entries")
    return arr


def _sweep(r: np.ndarray, loads: Sequence[np.ndarray], alphas: list) -> None:
    for i, b in enumerate(loads):
        a = np.dot(r, b) / np.dot(b, b)
        r -= a * b
        alphas[i] += a


def gso(f, basis: OrthoBasis | Sequence[np.ndarray], reorthogonalize: bool = True) -> GsoResult:
    """Orthogonalise ``f`` against the basis loads.

    Modified Gram-Schmidt: each coefficient is taken against the running
    residual. When the residual has lost more than three digits relative to
    ``f`` a second sweep is made and its coefficients are added to the
    first ones. ``f`` itself is not modified.
    """
    loads = basis.loads if isinstance(basis, OrthoBasis) else list(basis)
    f = as_load(f)
    if loads and len(loads[0]) != len(f):
        raise ContractViolation(f"load has length {len(f)}, basis vectors have {len(loads[0])}")
    r = f.copy()
    alphas = [0 if r.dtype == object else 0.0] * len(loads)
    _sweep(r, loads, alphas)
    if reorthogonalize and loads:
        rr, ff = np.dot(r, r), np.dot(f, f)
        if rr < 1e-6 * ff:
            _sweep(r, loads, alphas)
    return GsoResult(alphas, r)


def is_dependent(result: GsoResult, f, tol: float = DEFAULT_TOL, absolute: bool = False) -> bool:
    """True when the residual is small enough to reconstruct instead of solve.

    The default test is relative, ``||r|| <= tol * max(||f||, floor)``.
    ``absolute=True`` uses the bare ``||r|| <= tol`` test. Squared norms are
    compared so exact rational inputs never need a square root.
    """
    rr = np.dot(result.residual, result.residual)
    if absolute:
        return bool(rr <= tol * tol)
    ff = np.dot(f, f)
    return bool(rr <= tol * tol * max(ff, NORM_FLOOR_SQ))


def reconstruct(coefficients: Sequence, states: Sequence[np.ndarray], n: int | None = None, dtype=float) -> np.ndarray:
    """Return ``sum_i coefficients[i] * states[i]``."""
    if not len(coefficients):
        if n is None:
            raise ContractViolation("empty reconstruction needs an explicit dimension")
        return np.zeros(n, dtype=dtype)
    u = coefficients[0] * states[0]
    for c, v in zip(coefficients[1:], states[1:]):
        u += c * v
    return u


def _is_zero(f: np.ndarray) -> bool:
    return bool(np.dot(f, f) <= NORM_FLOOR_SQ)


def _timed_solve(backend, r, ledger: SolveLedger):
    t0 = time.perf_counter()
    v = backend.solve(r)
    ledger.solve_seconds += time.perf_counter() - t0
    ledger.backend_solves += 1
    return v


def ldas_step(f, basis: OrthoBasis, ledger: SolveLedger, backend, tol: float = DEFAULT_TOL,
              absolute: bool = False) -> tuple[np.ndarray, list, bool]:
    """Process a single load; return ``(state, coefficients, solved)``.

    ``coefficients`` are taken over the basis states after the call, so the
    state equals ``reconstruct(coefficients, basis.states)``.
    """
    f = as_load(f, basis.dimension)
    ledger.loads_requested += 1
    if _is_zero(f):
        ledger.reconstructions += 1
        return np.zeros_like(f), [], False
    res = gso(f, basis)
    coeffs = list(res.coefficients)
    solved = not is_dependent(res, f, tol, absolute)
    if solved:
        v = _timed_solve(backend, res.residual, ledger)
        basis.append(res.residual, v)
        coeffs.append(1.0 if f.dtype != object else 1)
    else:
        ledger.reconstructions += 1
    return reconstruct(coeffs, basis.states), coeffs, solved


def ldas_solve(system, loads: Sequence, basis: OrthoBasis, ledger: SolveLedger, backend,
               tol: float = DEFAULT_TOL, absolute: bool = False) -> list[np.ndarray]:
    """Return states for ``loads``, solving only linearly independent residuals.

    The basis is enriched in place with every solved residual and its state.

    Raises
    ------
    StaleBasisError
        If ``basis`` is bound to another version of the system.
    ContractViolation
        On a wrong-length or non-finite load.
    """
    basis.check(system)
    n = system.n
    out = []
    for f in loads:
        f = as_load(f, n)
        u, _, _ = ldas_step(f, basis, ledger, backend, tol, absolute)
        out.append(u)
    return out


def partition_independent(loads: Sequence, basis: OrthoBasis, tol: float = DEFAULT_TOL,
                          absolute: bool = False) -> tuple[list[np.ndarray], list[list]]:
    """Split a batch of state-independent loads into residuals to solve and plans.

    The basis is not modified. ``plans[k]`` holds the coefficients of load
    ``k`` over ``basis.states + solved residual states`` (in that order).
    """
    working = list(basis.loads)
    residuals: list[np.ndarray] = []
    plans: list[list] = []
    for f in loads:
        f = as_load(f, basis.dimension or (len(working[0]) if working else None))
        if _is_zero(f):
            plans.append([])
            continue
        res = gso(f, working)
        coeffs = list(res.coefficients)
        if not is_dependent(res, f, tol, absolute):
            working.append(res.residual)
            residuals.append(res.residual)
            coeffs.append(1.0 if f.dtype != object else 1)
        plans.append(coeffs)
    return residuals, plans


def ldas_batch(system, loads: Sequence, basis: OrthoBasis, ledger: SolveLedger, backend,
               tol: float = DEFAULT_TOL, absolute: bool = False, workers: int = 1) -> list[np.ndarray]:
    """Batch variant of :func:`ldas_solve` for loads that do not depend on states.

    Independent residuals are found first and solved afterwards, optionally
    on a thread pool. Results match :func:`ldas_solve` exactly.
    """
    basis.check(system)
    loads = [as_load(f, system.n) for f in loads]
    residuals, plans = partition_independent(loads, basis, tol, absolute)
    t0 = time.perf_counter()
    if workers > 1 and len(residuals) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            states = list(pool.map(backend.solve, residuals))
    else:
        states = [backend.solve(r) for r in residuals]
    ledger.solve_seconds += time.perf_counter() - t0
    for r, v in zip(residuals, states):
        basis.append(r, v)
    ledger.loads_requested += len(loads)
    ledger.backend_solves += len(residuals)
    ledger.reconstructions += len(loads) - len(residuals)
    return [reconstruct(p, basis.states, system.n, dtype=f.dtype) for p, f in zip(plans, loads)]
