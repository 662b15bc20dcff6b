"""Method of moving asymptotes and the design loop built on it.

:func:`mma_subproblem` builds the convex separable approximation,
:func:`solve_subproblem` solves it with a primal-dual interior point method
(Svanberg's ``subsolv``) and :func:`mma_update` combines the two with the
asymptote bookkeeping held in :class:`OptimizerState`. The subproblem is

    min  f0~(x) + a0 z + sum(c y + d y^2 / 2)
    s.t. fi~(x) - a_i z - y_i <= 0,   alfa <= x <= beta,   y, z >= 0

with ``a = 0``, ``c = 1000`` and ``d = 1`` by default, so ``y`` acts as an
elastic relaxation of infeasible linearized constraints.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_TOL, ContractViolation, OrthoBasis, SolveLedger
from .responses import ProblemDefinition, evaluate_iteration

log = logging.getLogger(__name__)

ASYINIT = 0.5
ASYINCR = 1.2
ASYDECR = 0.7
MOVE = 0.2
ALBEFA = 0.1
RAA0 = 1e-5
EPSIMIN = 1e-10


@dataclass
class Subproblem:
    """Data of the MMA approximation around ``xval``."""

    xval: np.ndarray
    low: np.ndarray
    upp: np.ndarray
    alfa: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    b: np.ndarray
    a0: float = 1.0
    a: np.ndarray | None = None
    c: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        m = self.b.size
        self.a = np.zeros(m) if self.a is None else np.asarray(self.a, dtype=float)
        self.c = np.full(m, 1000.0) if self.c is None else np.asarray(self.c, dtype=float)
        self.d = np.ones(m) if self.d is None else np.asarray(self.d, dtype=float)

    @property
    def m(self) -> int:
        return self.b.size

    def objective(self, x: np.ndarray) -> np.ndarray:
        """Approximate objective up to a constant; ``x`` may carry leading batch axes."""
        return (self.p0 / (self.upp - x) + self.q0 / (x - self.low)).sum(axis=-1)

    def constraints(self, x: np.ndarray) -> np.ndarray:
        """Approximate constraint values, last axis = constraint index."""
        ux = 1.0 / (self.upp - x)
        xl = 1.0 / (x - self.low)
        return ux @ self.P.T + xl @ self.Q.T - self.b


@dataclass
class SubproblemSolution:
    x: np.ndarray
    y: np.ndarray
    z: float
    lam: np.ndarray
    xsi: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    zet: float
    s: np.ndarray
    iterations: int


def mma_subproblem(xval, xmin, xmax, xold1, xold2, low, upp, iteration, f0val, df0dx, fval, dfdx,
                   move=MOVE, asyinit=ASYINIT, asyincr=ASYINCR, asydecr=ASYDECR, albefa=ALBEFA,
                   raa0=RAA0) -> Subproblem:
    """Update the asymptotes and build the approximation (``iteration`` counts from 1)."""
    span = xmax - xmin
    if iteration <= 2 or low is None:
        low = xval - asyinit * span
        upp = xval + asyinit * span
    else:
        trend = (xval - xold1) * (xold1 - xold2)
        factor = np.ones_like(xval)
        factor[trend > 0] = asyincr
        factor[trend < 0] = asydecr
        low = xval - factor * (xold1 - low)
        upp = xval + factor * (upp - xold1)
        low = np.clip(low, xval - 10 * span, xval - 0.01 * span)
        upp = np.clip(upp, xval + 0.01 * span, xval + 10 * span)
    alfa = np.maximum.reduce([low + albefa * (xval - low), xval - move * span, xmin])
    beta = np.minimum.reduce([upp - albefa * (upp - xval), xval + move * span, xmax])
    inv_span = 1.0 / np.maximum(span, 1e-5)
    ux2 = (upp - xval) ** 2
    xl2 = (xval - low) ** 2
    p0 = np.maximum(df0dx, 0.0)
    q0 = np.maximum(-df0dx, 0.0)
    pq0 = 1e-3 * (p0 + q0) + raa0 * inv_span
    p0 = (p0 + pq0) * ux2
    q0 = (q0 + pq0) * xl2
    P = np.maximum(dfdx, 0.0)
    Q = np.maximum(-dfdx, 0.0)
    PQ = 1e-3 * (P + Q) + raa0 * inv_span[None, :]
    P = (P + PQ) * ux2[None, :]
    Q = (Q + PQ) * xl2[None, :]
    b = P @ (1.0 / (upp - xval)) + Q @ (1.0 / (xval - low)) - fval
    return Subproblem(xval.copy(), low, upp, alfa, beta, p0, q0, P, Q, b)


def _residual(sp: Subproblem, v: SubproblemSolution, epsi: float) -> np.ndarray:
    x, y, z, lam = v.x, v.y, v.z, v.lam
    ux1, xl1 = sp.upp - x, x - sp.low
    plam = sp.p0 + sp.P.T @ lam
    qlam = sp.q0 + sp.Q.T @ lam
    gvec = sp.P @ (1.0 / ux1) + sp.Q @ (1.0 / xl1)
    rex = plam / ux1**2 - qlam / xl1**2 - v.xsi + v.eta
    rey = sp.c + sp.d * y - v.mu - lam
    rez = sp.a0 - v.zet - sp.a @ lam
    relam = gvec - sp.a * z - y + v.s - sp.b
    rexsi = v.xsi * (x - sp.alfa) - epsi
    reeta = v.eta * (sp.beta - x) - epsi
    remu = v.mu * y - epsi
    rezet = v.zet * z - epsi
    res = lam * v.s - epsi
    return np.concatenate([rex, rey, [rez], relam, rexsi, reeta, remu, [rezet], res])


def kkt_residual(sp: Subproblem, sol: SubproblemSolution) -> float:
    """Max-norm of the unperturbed KKT conditions of the subproblem."""
    return float(np.max(np.abs(_residual(sp, sol, 0.0))))


def solve_subproblem(sp: Subproblem, epsimin: float = EPSIMIN, max_newton: int = 200) -> SubproblemSolution:
    """Primal-dual Newton iterations on the perturbed KKT system with ``epsi -> epsimin``."""
    n, m = sp.xval.size, sp.m
    a, c, d = sp.a, sp.c, sp.d
    x = 0.5 * (sp.alfa + sp.beta)
    v = SubproblemSolution(
        x=x, y=np.ones(m), z=1.0, lam=np.ones(m),
        xsi=np.maximum(1.0 / (x - sp.alfa), 1.0), eta=np.maximum(1.0 / (sp.beta - x), 1.0),
        mu=np.maximum(1.0, 0.5 * c), zet=1.0, s=np.ones(m), iterations=0)
    epsi = 1.0
    while epsi > epsimin:
        resid = _residual(sp, v, epsi)
        resnorm = np.linalg.norm(resid)
        resmax = np.max(np.abs(resid))
        inner = 0
        while resmax > 0.9 * epsi and inner < max_newton:
            inner += 1
            v.iterations += 1
            x, y, z, lam = v.x, v.y, v.z, v.lam
            ux1, xl1 = sp.upp - x, x - sp.low
            ux2, xl2 = ux1**2, xl1**2
            plam = sp.p0 + sp.P.T @ lam
            qlam = sp.q0 + sp.Q.T @ lam
            gvec = sp.P @ (1.0 / ux1) + sp.Q @ (1.0 / xl1)
            GG = sp.P / ux2[None, :] - sp.Q / xl2[None, :]
            delx = plam / ux2 - qlam / xl2 - epsi / (x - sp.alfa) + epsi / (sp.beta - x)
            dely = c + d * y - lam - epsi / y
            delz = sp.a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - sp.b + epsi / lam
            diagx = 2 * (plam / (ux1 * ux2) + qlam / (xl1 * xl2)) + v.xsi / (x - sp.alfa) + v.eta / (sp.beta - x)
            diagy = d + v.mu / y
            diaglamyi = v.s / lam + 1.0 / diagy
            if m < n:
                blam = dellam + dely / diagy - GG @ (delx / diagx)
                aa = np.zeros((m + 1, m + 1))
                aa[:m, :m] = np.diag(diaglamyi) + (GG / diagx[None, :]) @ GG.T
                aa[:m, m] = a
                aa[m, :m] = a
                aa[m, m] = -v.zet / z
                sol = np.linalg.solve(aa, np.concatenate([blam, [delz]]))
                dlam, dz = sol[:m], sol[m]
                dx = -delx / diagx - (GG.T @ dlam) / diagx
            else:
                dellamyi = dellam + dely / diagy
                axx = np.diag(diagx) + (GG.T / diaglamyi[None, :]) @ GG
                azz = v.zet / z + a @ (a / diaglamyi)
                axz = -GG.T @ (a / diaglamyi)
                aa = np.zeros((n + 1, n + 1))
                aa[:n, :n] = axx
                aa[:n, n] = axz
                aa[n, :n] = axz
                aa[n, n] = azz
                bx = delx + GG.T @ (dellamyi / diaglamyi)
                bz = delz - a @ (dellamyi / diaglamyi)
                sol = np.linalg.solve(aa, -np.concatenate([bx, [bz]]))
                dx, dz = sol[:n], sol[n]
                dlam = (GG @ dx) / diaglamyi - dz * (a / diaglamyi) + dellamyi / diaglamyi
            dy = -dely / diagy + dlam / diagy
            dxsi = -v.xsi + epsi / (x - sp.alfa) - v.xsi * dx / (x - sp.alfa)
            deta = -v.eta + epsi / (sp.beta - x) + v.eta * dx / (sp.beta - x)
            dmu = -v.mu + epsi / y - v.mu * dy / y
            dzet = -v.zet + epsi / z - v.zet * dz / z
            ds = -v.s + epsi / lam - v.s * dlam / lam
            xx = np.concatenate([y, [z], lam, v.xsi, v.eta, v.mu, [v.zet], v.s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stm = max(np.max(-1.01 * dxx / xx), np.max(-1.01 * dx / (x - sp.alfa)),
                      np.max(1.01 * dx / (sp.beta - x)), 1.0)
            step = 1.0 / stm
            old = SubproblemSolution(x, y, z, lam, v.xsi, v.eta, v.mu, v.zet, v.s, v.iterations)
            for _ in range(50):
                v = SubproblemSolution(
                    old.x + step * dx, old.y + step * dy, old.z + step * dz, old.lam + step * dlam,
                    old.xsi + step * dxsi, old.eta + step * deta, old.mu + step * dmu,
                    old.zet + step * dzet, old.s + step * ds, old.iterations)
                resid = _residual(sp, v, epsi)
                new_norm = np.linalg.norm(resid)
                if new_norm <= resnorm:
                    break
                step /= 2
            resnorm = new_norm
            resmax = np.max(np.abs(resid))
        epsi *= 0.1
    return v


@dataclass
class OptimizerState:
    """Design history and asymptotes; ``iteration`` counts completed updates."""

    x: np.ndarray
    xmin: np.ndarray
    xmax: np.ndarray
    iteration: int = 0
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    move: float = MOVE
    change: float = float("inf")

    @classmethod
    def start(cls, x0, lower=0.0, upper=1.0, move: float = MOVE) -> "OptimizerState":
        x0 = np.asarray(x0, dtype=float).copy()
        return cls(x0, np.broadcast_to(float(lower), x0.shape).copy(),
                   np.broadcast_to(float(upper), x0.shape).copy(), xold1=x0.copy(), xold2=x0.copy(),
                   move=move)


@dataclass
class UpdateResult:
    x: np.ndarray
    kkt_residual: float
    flags: tuple = ()
    subproblem: Subproblem | None = None
    solution: SubproblemSolution | None = None


def mma_update(state: OptimizerState, f0val: float, df0dx, fval, dfdx, bounds=None,
               kkt_warn: float = 1e-9, epsimin: float = EPSIMIN) -> UpdateResult:
    """One MMA step; advances ``state`` in place and returns the new design.

    Flags are ``"fallback"`` (subproblem solver broke down, pure move-limit
    step taken), ``"elastic"`` (some linearized constraint needed its
    relaxation variable) and ``"kkt"`` (subproblem residual above
    ``kkt_warn``). The interior point bias on the new design shrinks in
    proportion to ``epsimin``.
    """
    df0dx = np.asarray(df0dx, dtype=float)
    fval = np.atleast_1d(np.asarray(fval, dtype=float))
    dfdx = np.asarray(dfdx, dtype=float).reshape(fval.size, df0dx.size)
    if not (np.all(np.isfinite(df0dx)) and np.all(np.isfinite(dfdx)) and np.all(np.isfinite(fval))):
        raise ContractViolation("non-finite response values or gradients")
    if bounds is not None:
        state.xmin = np.broadcast_to(np.asarray(bounds[0], dtype=float), state.x.shape).copy()
        state.xmax = np.broadcast_to(np.asarray(bounds[1], dtype=float), state.x.shape).copy()
    it = state.iteration + 1
    sp = mma_subproblem(state.x, state.xmin, state.xmax, state.xold1, state.xold2, state.low,
                        state.upp, it, f0val, df0dx, fval, dfdx, move=state.move)
    flags = []
    sol = None
    kkt = float("nan")
    try:
        with np.errstate(all="raise"):
            sol = solve_subproblem(sp, epsimin)
        xnew = sol.x
        kkt = kkt_residual(sp, sol)
        if not np.all(np.isfinite(xnew)):
            raise FloatingPointError("non-finite subproblem solution")
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("MMA subproblem failed (%s); taking a move-limit step", exc)
        flags.append("fallback")
        xnew = np.clip(state.x - state.move * np.sign(df0dx), sp.alfa, sp.beta)
        sol = None
    if sol is not None:
        if np.any(sol.y > 1e-8):
            flags.append("elastic")
        if kkt > kkt_warn:
            flags.append("kkt")
    xnew = np.clip(xnew, sp.alfa, sp.beta)
    state.xold2, state.xold1 = state.xold1, state.x.copy()
    state.low, state.upp = sp.low, sp.upp
    state.change = float(np.max(np.abs(xnew - state.x))) if xnew.size else 0.0
    state.x = xnew
    state.iteration = it
    return UpdateResult(xnew.copy(), kkt, tuple(flags), sp, sol)


@dataclass
class IterationRecord:
    """One design iteration; ``design`` is the field produced by its update."""

    iteration: int
    objective: float
    max_violation: float
    ledger: SolveLedger
    wall_time: float
    change: float
    kkt_residual: float = float("nan")
    flags: tuple = ()
    design: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)
    labels: list | None = field(default=None, repr=False)


def run(problem: ProblemDefinition, mode: str = "ldas", max_iters: int = 60, tol_change: float = 1e-2,
        backend: str = "direct", x0=None, tol: float = DEFAULT_TOL, workers: int = 1,
        callback=None, **backend_options) -> list[IterationRecord]:
    """Optimize ``problem``.

    The objective is divided by its value at the start design and every
    constraint by ``max(1, |g_i|)`` at the start design. Positive constant
    factors leave the feasible set unchanged and keep the subproblem well
    conditioned when the bounds make raw constraint values large.

    Stops once the largest design change drops below ``tol_change`` or after
    ``max_iters`` updates. ``callback(record)`` is called after every
    iteration.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    x = problem.initial_design() if x0 is None else np.asarray(x0, dtype=float).copy()
    state = OptimizerState.start(x)
    basis = OrthoBasis(None)
    records: list[IterationRecord] = []
    scale = cscale = None
    for _ in range(max_iters):
        t0 = time.perf_counter()
        res = evaluate_iteration(problem, state.x, mode, backend, basis=basis, tol=tol, workers=workers,
                                 **backend_options)
        f0 = res.values[0]
        if scale is None:
            scale = abs(f0) if f0 != 0 else 1.0
            cscale = np.maximum(1.0, np.abs(res.values[1:]))
        upd = mma_update(state, f0 / scale, res.gradients[0] / scale, res.values[1:] / cscale,
                         res.gradients[1:] / cscale[:, None])
        rec = IterationRecord(state.iteration, float(f0), float(max(0.0, res.values[1:].max())),
                              res.ledger.snapshot(), time.perf_counter() - t0, state.change,
                              upd.kkt_residual, upd.flags, state.x.copy(), res.values, res.labels)
        records.append(rec)
        if callback is not None:
            callback(rec)
        if state.change < tol_change:
            break
    if len(records) >= 10 and not records[9].objective < records[0].objective:
        warnings.warn("objective did not decrease over the first 10 iterations", RuntimeWarning,
                      stacklevel=2)
    return records
