"""Symmetric positive definite solve backends with a preprocess/solve split.

Two backends sit at the ends of the preprocessing-to-solve cost ratio:

``direct``
    Sparse Cholesky factorization (CHOLMOD through scikit-sparse when it is
    importable, SuperLU in symmetric mode otherwise) and back-substitution.
``iterative``
    Zero-fill incomplete Cholesky preconditioner and conjugate gradients.
"""

from __future__ import annotations

import itertools
import logging
import statistics
import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _kernels
from .core import ContractViolation, as_load

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky as _cholmod_cholesky
    HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover - depends on the environment
    HAVE_CHOLMOD = False

log = logging.getLogger(__name__)

_versions = itertools.count(1)


def next_version() -> int:
    """Fresh version token for a newly assembled system."""
    return next(_versions)


class SingularSystemError(RuntimeError):
    """Factorization broke down: the system is not positive definite."""


class ConvergenceError(RuntimeError):
    """The iterative solver hit its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class SymmetricSystem:
    """Sparse symmetric operator stored as its lower triangle (CSR).

    ``version`` identifies the design iteration the operator belongs to.
    """

    lower: sp.csr_matrix
    version: int

    @classmethod
    def from_matrix(cls, a, version: int | None = None, check: bool = True) -> "SymmetricSystem":
        a = sp.csr_matrix(a, dtype=float)
        if a.shape[0] != a.shape[1]:
            raise ContractViolation(f"matrix must be square, got {a.shape}")
        if check:
            asym = abs(a - a.T).max() if a.nnz else 0.0
            if asym > 1e-12 * max(abs(a).max(), 1e-300):
                raise ContractViolation(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
        lower = sp.tril(a, format="csr")
        lower.sum_duplicates()
        lower.sort_indices()
        if np.any(lower.diagonal() <= 0):
            raise ContractViolation("diagonal has non-positive entries; zero rows are not allowed")
        return cls(lower, next_version() if version is None else version)

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Full symmetric matrix (CSR, sorted indices)."""
        full = (self.lower + sp.triu(self.lower.T, k=1)).tocsr()
        full.sort_indices()
        return full

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def relative_residual(self, u: np.ndarray, f: np.ndarray) -> float:
        fn = np.linalg.norm(f)
        return float(np.linalg.norm(self.matvec(u) - f) / max(fn, 1e-300))


@dataclass(frozen=True)
class SolveInfo:
    seconds: float
    iterations: int
    relative_residual: float | None


class PreparedSolver:
    """Preprocessed solver bound to one system version.

    Subclasses are immutable after construction; :meth:`solve` may be
    called concurrently.
    """

    kind: str = ""

    def __init__(self, system: SymmetricSystem):
        self.version = system.version
        self.n = system.n
        self.preprocess_seconds = 0.0

    def solve(self, rhs) -> np.ndarray:
        return self.solve_with_info(rhs)[0]

    def solve_with_info(self, rhs) -> tuple[np.ndarray, SolveInfo]:
        rhs = as_load(rhs, self.n)
        t0 = time.perf_counter()
        x, iters, relres = self._solve(np.ascontiguousarray(rhs, dtype=float))
        return x, SolveInfo(time.perf_counter() - t0, iters, relres)

    def _solve(self, rhs):
        raise NotImplementedError


class DirectSolver(PreparedSolver):
    """Sparse Cholesky factorization.

    Parameters
    ----------
    system
        Operator to factor.
    ordering
        ``"amd"`` (default, fill reducing), ``"natural"`` or ``"rcm"``
        (reverse Cuthill-McKee bandwidth reduction applied before a natural
        ordering factorization).
    use_cholmod
        Force or forbid CHOLMOD; ``None`` picks it when available.
    """

    kind = "direct"

    def __init__(self, system: SymmetricSystem, ordering: str = "amd", use_cholmod: bool | None = None):
        super().__init__(system)
        if ordering not in ("amd", "natural", "rcm"):
            raise ValueError(f"unknown ordering {ordering!r}")
        self.ordering = ordering
        self.use_cholmod = HAVE_CHOLMOD if use_cholmod is None else use_cholmod
        if self.use_cholmod and not HAVE_CHOLMOD:
            raise RuntimeError("scikit-sparse is not installed")
        a = system.matrix
        t0 = time.perf_counter()
        self._perm = None
        if ordering == "rcm":
            self._perm = reverse_cuthill_mckee(a, symmetric_mode=True)
            a = a[self._perm][:, self._perm]
        a = a.tocsc()
        if self.use_cholmod:
            method = "amd" if ordering == "amd" else "natural"
            try:
                self._factor = _cholmod_cholesky(a, mode="simplicial", ordering_method=method)
            except CholmodNotPositiveDefiniteError as exc:
                raise SingularSystemError(str(exc)) from exc
            self._apply = self._factor.solve_A
        else:
            spec = "MMD_AT_PLUS_A" if ordering == "amd" else "NATURAL"
            try:
                lu = spla.splu(a, permc_spec=spec, diag_pivot_thresh=0.0,
                               options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise SingularSystemError(str(exc)) from exc
            if np.any(lu.U.diagonal() <= 0):
                raise SingularSystemError("non-positive pivot in symmetric factorization")
            self._factor = lu
            self._apply = lu.solve
        self.preprocess_seconds = time.perf_counter() - t0

    def _solve(self, rhs):
        if self._perm is None:
            return np.asarray(self._apply(rhs)).ravel(), 0, None
        x = np.empty_like(rhs)
        x[self._perm] = np.asarray(self._apply(rhs[self._perm])).ravel()
        return x, 0, None


class IterativeSolver(PreparedSolver):
    """Incomplete Cholesky IC(0) preconditioned conjugate gradients.

    On a non-positive pivot the factorization is retried on
    ``A + shift * diag(A)`` with shift 1e-3, 1e-2, ... (``max_retries``
    attempts after the unshifted one).
    """

    kind = "iterative"
    first_shift = 1e-3

    def __init__(self, system: SymmetricSystem, tol: float = 1e-8, maxiter: int | None = None,
                 max_retries: int = 4):
        super().__init__(system)
        self.tol = tol
        self.maxiter = 5 * system.n if maxiter is None else maxiter
        a = system.matrix
        t0 = time.perf_counter()
        self._a = (a.indptr.astype(np.int64), a.indices.astype(np.int64), a.data)
        low = system.lower
        lptr, lidx = low.indptr.astype(np.int64), low.indices.astype(np.int64)
        shift = 0.0
        for attempt in range(max_retries + 1):
            lval, ok = _kernels.ic0_factor(lptr, lidx, low.data, shift)
            if ok:
                break
            shift = self.first_shift if attempt == 0 else 10.0 * shift
        else:
            raise SingularSystemError(f"incomplete factorization broke down after {max_retries} shifts")
        self.shift = shift
        self._l = (lptr, lidx, lval)
        self.preprocess_seconds = time.perf_counter() - t0

    def _solve(self, rhs):
        x0 = np.zeros_like(rhs)
        total = 0
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            return x0, 0, 0.0
        # restart from the current iterate if the recurrence residual drifted
        for _ in range(3):
            x0, iters, _ = _kernels.pcg(*self._a, *self._l, rhs, x0, self.tol, self.maxiter - total)
            total += iters
            q = np.empty_like(rhs)
            _kernels.csr_matvec(*self._a, x0, q)
            relres = float(np.linalg.norm(rhs - q) / bnorm)
            if relres <= self.tol:
                return x0, total, relres
            if total >= self.maxiter:
                break
        raise ConvergenceError(
            f"CG did not reach {self.tol:g} in {total} iterations (residual {relres:.3e})",
            relres, total)


_KINDS = {"direct": DirectSolver, "iterative": IterativeSolver, "cg": IterativeSolver}


def preprocess(system: SymmetricSystem, kind: str = "direct", **options) -> PreparedSolver:
    """Factor (``direct``) or precondition (``iterative``/``cg``) ``system``."""
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown backend kind {kind!r}") from None
    return cls(system, **options)


def solve(prepared: PreparedSolver, rhs) -> np.ndarray:
    return prepared.solve(rhs)


@dataclass(frozen=True)
class ChiEstimate:
    preprocess_seconds: float
    mean_solve_seconds: float
    chi: float
    probes: int
    low_confidence: bool


def estimate_chi(system: SymmetricSystem, kind: str, probe_count: int = 5, repeats: int = 1,
                 rng: np.random.Generator | None = None, **options) -> ChiEstimate:
    """Time preprocessing against single solves with random unit right-hand sides.

    With ``repeats > 1`` the preprocessing time is the median over repeats.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    prep_times = []
    for _ in range(max(repeats, 1)):
        prepared = preprocess(system, kind, **options)
        prep_times.append(prepared.preprocess_seconds)
    solve_times = []
    for _ in range(probe_count):
        b = rng.standard_normal(system.n)
        b /= np.linalg.norm(b)
        solve_times.append(prepared.solve_with_info(b)[1].seconds)
    prep = statistics.median(prep_times)
    mean_solve = statistics.fmean(solve_times)
    chi = prep / mean_solve if mean_solve > 0 else float("inf")
    if probe_count == 1:
        log.info("chi estimate from a single probe solve is low confidence")
    return ChiEstimate(prep, mean_solve, chi, probe_count, probe_count == 1)
