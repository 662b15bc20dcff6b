"""Responses of the two-input compliant mechanism problem and their sensitivities.

The problem has six physical loads (unit loads at DOF labels 1, 3, 5, 7,
6, 8) and 32 responses: the summed strain energy, a volume constraint, two
input-displacement constraints, 24 crosstalk bounds and four transmission
bounds. Every displacement constraint is linear in one state, so each has a
single adjoint load built from unit selection vectors.

Constraints are normalized to ``g <= 0`` by their bound, which puts the
``1/u_in``, ``1/u_ct`` and ``1/u_t`` prefactors on the adjoint loads.

States are obtained in one of four modes:

``naive``
    one backend solve per physical load and per nonzero adjoint load;
``ldap``
    adjoint loads that are a multiple of their own physical load reuse
    that state;
``signaware``
    additionally, a lower-bound adjoint load reuses the negated state of its
    upper-bound twin;
``ldas``
    every load goes through :func:`ldas.core.ldas_solve` on one basis per
    design iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .backends import PreparedSolver, SymmetricSystem, preprocess
from .core import (DEFAULT_TOL, ContractViolation, OrthoBasis, SolveLedger, ldas_batch, ldas_solve,
                   reset_basis)
from .fem import DensityFilter, Mesh, assemble, element_derivative_terms

MODES = ("naive", "ldap", "signaware", "ldas")

#: Backend solves per design iteration of the default problem, by mode.
EXPECTED_SOLVES = {"naive": 40, "ldap": 34, "signaware": 20, "ldas": 8}


@dataclass(frozen=True)
class UnitLoad:
    """Unit selection vector at a labelled DOF (the same object as the physical load)."""

    label: int
    sign: float = 1.0

    def vector(self, mesh: Mesh) -> np.ndarray:
        v = np.zeros(mesh.nfree)
        v[mesh.reduced_index(self.label)] = self.sign
        return v


@dataclass
class ProblemDefinition:
    mesh: Mesh
    objective_dofs: tuple = (1, 3, 5, 7)
    input_dofs: tuple = (6, 8)
    crosstalk: dict = field(default_factory=lambda: {6: (1, 2, 3, 5, 7, 8), 8: (1, 3, 4, 5, 6, 7)})
    # input DOF -> (output DOF, transmission ratio J)
    transmission: dict = field(default_factory=lambda: {6: (4, 2.0), 8: (2, 2.0)})
    u_in: float = 1.0
    u_ct: float = 1e-3
    u_t: float = 1e-3
    volfrac: float = 0.3
    penal: float = 3.0
    emin: float = 1e-9
    e0: float = 1.0
    rmin: float = 2.0

    @classmethod
    def default(cls, nelx: int, nely: int | None = None, **kwargs) -> "ProblemDefinition":
        return cls(Mesh.mechanism(nelx, nelx if nely is None else nely), **kwargs)

    @property
    def state_labels(self) -> tuple:
        return tuple(self.objective_dofs) + tuple(self.input_dofs)

    @cached_property
    def filter(self) -> DensityFilter:
        return DensityFilter(self.mesh.nelx, self.mesh.nely, self.rmin)

    def initial_design(self) -> np.ndarray:
        return np.full(self.mesh.nel, self.volfrac)

    def assemble(self, s_filtered: np.ndarray) -> SymmetricSystem:
        return assemble(self.mesh, s_filtered, self.penal, self.emin, self.e0)


def forward_loads(problem: ProblemDefinition) -> list[np.ndarray]:
    """Unit loads at the objective DOFs, then at the input DOFs."""
    return [UnitLoad(j).vector(problem.mesh) for j in problem.state_labels]


def strain_energy(u: np.ndarray, system: SymmetricSystem) -> float:
    return 0.5 * float(u @ system.matvec(u))


@dataclass
class Evaluation:
    """Design point with its system and physical states (keyed by DOF label)."""

    problem: ProblemDefinition
    s: np.ndarray
    s_filtered: np.ndarray
    system: SymmetricSystem
    states: dict

    def full(self, u: np.ndarray) -> np.ndarray:
        return self.problem.mesh.expand(u)

    def derivative_terms(self, lam: np.ndarray, u: np.ndarray) -> np.ndarray:
        p = self.problem
        return element_derivative_terms(p.mesh, self.s_filtered, self.full(u), self.full(lam),
                                        p.penal, p.emin, p.e0)


@dataclass(frozen=True, eq=False)
class AdjointLoad:
    """Adjoint load of ``response`` with respect to the state of DOF ``state``.

    ``ldap_scale`` is set when the load equals that multiple of the state's
    own physical load; ``mirror_of`` names the response whose adjoint load
    at the same state is exactly the negative of this one.
    """

    response: str
    state: int
    vector: np.ndarray
    ldap_scale: float | None = None
    mirror_of: str | None = None

    @property
    def key(self) -> tuple:
        return self.response, self.state


class Response:
    label: str = ""
    kind: str = "constraint"
    family: str = ""

    def value(self, ev: Evaluation) -> float:
        raise NotImplementedError

    def explicit_gradient(self, ev: Evaluation) -> np.ndarray | None:
        """Partial derivative w.r.t. the filtered densities at fixed states."""
        return None

    def adjoint_loads(self, ev: Evaluation) -> list[AdjointLoad]:
        return []


class StrainEnergySum(Response):
    kind = "objective"
    family = "objective"

    def __init__(self, dofs):
        self.dofs = tuple(dofs)
        self.label = "f"

    def value(self, ev):
        return sum(strain_energy(ev.states[j], ev.system) for j in self.dofs)

    def explicit_gradient(self, ev):
        return sum(0.5 * ev.derivative_terms(ev.states[j], ev.states[j]) for j in self.dofs)

    def adjoint_loads(self, ev):
        # dE_j/du_j = K u_j = f_j
        mesh = ev.problem.mesh
        return [AdjointLoad(self.label, j, UnitLoad(j).vector(mesh), ldap_scale=1.0) for j in self.dofs]


class VolumeConstraint(Response):
    family = "volume"

    def __init__(self, volfrac: float, nel: int):
        self.volfrac, self.nel = volfrac, nel
        self.label = "vol"

    def value(self, ev):
        return float(ev.s_filtered.sum() / (self.nel * self.volfrac) - 1.0)

    def explicit_gradient(self, ev):
        return np.full(self.nel, 1.0 / (self.nel * self.volfrac))


class DisplacementConstraint(Response):
    """``g = (w . u_state) / scale + offset`` with ``w`` a combination of unit loads."""

    def __init__(self, label: str, family: str, state: int, weights: dict, scale: float,
                 offset: float, ldap_scale: float | None = None, mirror_of: str | None = None):
        self.label, self.family, self.state = label, family, state
        self.weights = dict(weights)
        self.scale, self.offset = scale, offset
        self.ldap_scale, self.mirror_of = ldap_scale, mirror_of

    def selector(self, mesh: Mesh) -> np.ndarray:
        w = np.zeros(mesh.nfree)
        for label, c in self.weights.items():
            w[mesh.reduced_index(label)] += c
        return w

    def value(self, ev):
        w = self.selector(ev.problem.mesh)
        return float(w @ ev.states[self.state] / self.scale + self.offset)

    def adjoint_loads(self, ev):
        vec = self.selector(ev.problem.mesh) / self.scale
        return [AdjointLoad(self.label, self.state, vec, self.ldap_scale, self.mirror_of)]


def build_responses(problem: ProblemDefinition) -> list[Response]:
    """All responses in declaration order: objective, volume, input, crosstalk, transmission."""
    out: list[Response] = [StrainEnergySum(problem.objective_dofs),
                           VolumeConstraint(problem.volfrac, problem.mesh.nel)]
    for j in problem.input_dofs:
        # u_jj >= u_in  ->  1 - u_jj / u_in <= 0
        out.append(DisplacementConstraint(f"in_{j}", "input", j, {j: -1.0}, problem.u_in, 1.0,
                                          ldap_scale=-1.0 / problem.u_in))
    for j, dofs in problem.crosstalk.items():
        for i in dofs:
            up = f"ct_{i}_{j}+"
            out.append(DisplacementConstraint(up, "crosstalk", j, {i: 1.0}, problem.u_ct, -1.0))
            out.append(DisplacementConstraint(f"ct_{i}_{j}-", "crosstalk", j, {i: -1.0}, problem.u_ct,
                                              -1.0, mirror_of=up))
    for j, (i, ratio) in problem.transmission.items():
        up = f"t_{i}_{j}+"
        out.append(DisplacementConstraint(up, "transmission", j, {i: ratio, j: -1.0}, problem.u_t, -1.0))
        out.append(DisplacementConstraint(f"t_{i}_{j}-", "transmission", j, {i: -ratio, j: 1.0},
                                          problem.u_t, -1.0, mirror_of=up))
    return out


def adjoint_loads(response: Response, ev: Evaluation) -> list[tuple[int, np.ndarray]]:
    """``(state label, load)`` pairs of a response; structural zeros are absent."""
    if not isinstance(response, Response):
        raise ContractViolation(f"unknown response kind {type(response).__name__}")
    return [(a.state, a.vector) for a in response.adjoint_loads(ev)]


def _solve_counted(prepared: PreparedSolver, f: np.ndarray, ledger: SolveLedger) -> np.ndarray:
    t0 = time.perf_counter()
    u = prepared.solve(f)
    ledger.solve_seconds += time.perf_counter() - t0
    ledger.loads_requested += 1
    ledger.backend_solves += 1
    return u


def solve_states(problem: ProblemDefinition, system: SymmetricSystem, prepared: PreparedSolver,
                 responses: list[Response], mode: str, ledger: SolveLedger,
                 basis: OrthoBasis | None = None, tol: float = DEFAULT_TOL, workers: int = 1,
                 s: np.ndarray | None = None, s_filtered: np.ndarray | None = None):
    """Physical and adjoint states for one design iteration.

    Returns ``(evaluation, adjoints)`` where ``adjoints`` is a list of
    ``(AdjointLoad, adjoint state)`` in declaration order.
    """
    if mode not in MODES:
        raise ContractViolation(f"unknown mode {mode!r}; expected one of {MODES}")
    labels = problem.state_labels
    loads = forward_loads(problem)
    if mode == "ldas":
        if basis is None:
            basis = OrthoBasis(system.version)
        solver = ldas_batch if workers > 1 else ldas_solve
        kwargs = {"workers": workers} if workers > 1 else {}
        u = solver(system, loads, basis, ledger, prepared, tol, **kwargs)
    else:
        u = [_solve_counted(prepared, f, ledger) for f in loads]
    ev = Evaluation(problem, s, s_filtered, system, dict(zip(labels, u)))

    adj = [a for r in responses for a in r.adjoint_loads(ev)]
    if mode == "ldas":
        lams = ldas_solve(system, [a.vector for a in adj], basis, ledger, prepared, tol)
        return ev, list(zip(adj, lams))

    done: dict = {}
    out = []
    for a in adj:
        if mode != "naive" and a.ldap_scale is not None:
            lam = a.ldap_scale * ev.states[a.state]
            ledger.loads_requested += 1
            ledger.reconstructions += 1
        elif mode == "signaware" and (a.mirror_of, a.state) in done:
            lam = -done[(a.mirror_of, a.state)]
            ledger.loads_requested += 1
            ledger.reconstructions += 1
        else:
            lam = _solve_counted(prepared, a.vector, ledger)
        done[a.key] = lam
        out.append((a, lam))
    return ev, out


def sensitivities(problem: ProblemDefinition, ev: Evaluation, responses: list[Response],
                  adjoints) -> np.ndarray:
    """Gradient of every response w.r.t. the unfiltered design, shape ``(len(responses), N)``.

    ``dg/ds = F^T (dg/ds~ - sum lam . dK/ds~ . u)`` with ``F`` the filter.
    """
    by_key = {a.key: lam for a, lam in adjoints}
    grads = np.empty((len(responses), problem.mesh.nel))
    for k, r in enumerate(responses):
        g = r.explicit_gradient(ev)
        g = np.zeros(problem.mesh.nel) if g is None else np.array(g, dtype=float)
        for a in r.adjoint_loads(ev):
            try:
                lam = by_key[a.key]
            except KeyError:
                raise ContractViolation(f"missing adjoint state for {a.key}") from None
            g -= ev.derivative_terms(lam, ev.states[a.state])
        grads[k] = problem.filter.transpose(g)
    return grads


@dataclass
class IterationResult:
    labels: list
    values: np.ndarray
    gradients: np.ndarray
    ledger: SolveLedger
    evaluation: Evaluation
    adjoints: list

    def value(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])


def evaluate_iteration(problem: ProblemDefinition, s: np.ndarray, mode: str = "ldas",
                       backend: str = "direct", basis: OrthoBasis | None = None,
                       tol: float = DEFAULT_TOL, workers: int = 1, gradients: bool = True,
                       **backend_options) -> IterationResult:
    """Filter, assemble, solve in ``mode`` and evaluate all responses.

    A supplied ``basis`` is reset to the new system version before use.
    """
    s = np.asarray(s, dtype=float)
    s_filtered = problem.filter(s)
    system = problem.assemble(s_filtered)
    ledger = SolveLedger()
    prepared = preprocess(system, backend, **backend_options)
    ledger.record_preprocess(prepared.preprocess_seconds)
    if basis is None:
        basis = OrthoBasis(system.version)
    else:
        reset_basis(basis, system.version)
    responses = build_responses(problem)
    ev, adjoints = solve_states(problem, system, prepared, responses, mode, ledger, basis, tol,
                                workers, s, s_filtered)
    values = np.array([r.value(ev) for r in responses])
    grads = sensitivities(problem, ev, responses, adjoints) if gradients else None
    return IterationResult([r.label for r in responses], values, grads, ledger, ev, adjoints)


def response_values(problem: ProblemDefinition, s: np.ndarray) -> np.ndarray:
    """Response values from the six forward solves only; a finite-difference oracle."""
    s = np.asarray(s, dtype=float)
    s_filtered = problem.filter(s)
    system = problem.assemble(s_filtered)
    prepared = preprocess(system, "direct")
    states = {j: prepared.solve(f) for j, f in zip(problem.state_labels, forward_loads(problem))}
    ev = Evaluation(problem, s, s_filtered, system, states)
    return np.array([r.value(ev) for r in build_responses(problem)])


# Loads versus DOF-of-interest coefficients, in units of 1/u_in, 1/u_ct and
# 1/u_t, with J standing for the transmission ratio. Rows follow the
# declaration order of the adjoint loads.
_J = "J"
LOAD_TABLE = (
    [(f"f_{j}", {j: 1}) for j in (1, 3, 5, 7)]
    + [(f"f_{j}", {j: 1}) for j in (6, 8)]
    + [(f"df/du_{j}", {j: 1}) for j in (1, 3, 5, 7)]
    + [(f"in_{j}", {j: ("in", 1)}) for j in (6, 8)]
    + [(f"ct_{i}_{j}{s}", {i: ("ct", sign)})
       for j, dofs in ((6, (1, 2, 3, 5, 7, 8)), (8, (1, 3, 4, 5, 6, 7)))
       for i in dofs for s, sign in (("+", 1), ("-", -1))]
    + [("t_4_6+", {4: ("t", _J), 6: ("t", -1)}), ("t_4_6-", {4: ("t", "-J"), 6: ("t", 1)}),
       ("t_2_8+", {2: ("t", _J), 8: ("t", -1)}), ("t_2_8-", {2: ("t", "-J"), 8: ("t", 1)})]
)


def table_vector(entry: dict, problem: ProblemDefinition, ratio: float) -> dict:
    """Resolve a :data:`LOAD_TABLE` row to ``{dof label: coefficient}``."""
    bounds = {"in": problem.u_in, "ct": problem.u_ct, "t": problem.u_t}
    out = {}
    for dof, c in entry.items():
        if isinstance(c, tuple):
            kind, coef = c
            coef = {"J": ratio, "-J": -ratio}.get(coef, coef)
            out[dof] = coef / bounds[kind]
        else:
            out[dof] = float(c)
    return out
