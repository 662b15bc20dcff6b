"""Bilinear quadrilateral plane-stress discretization on a regular grid.

Conventions
-----------
The domain is the unit square split into ``nelx`` by ``nely`` elements.
Node ``(i, j)`` (``i`` along x, ``j`` along y, y pointing up) has index
``i * (nely + 1) + j`` and degrees of freedom ``2 * node`` (x) and
``2 * node + 1`` (y). Element ``(ex, ey)`` has index ``ex * nely + ey``;
its eight DOFs run counterclockwise from the bottom-left node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .backends import SymmetricSystem, next_version
from .core import ContractViolation


def element_stiffness(nu: float = 0.3, hx: float = 1.0, hy: float = 1.0) -> np.ndarray:
    """8x8 plane-stress stiffness of a ``hx`` by ``hy`` element with unit modulus.

    Integrated with 2x2 Gauss quadrature (exact for the bilinear element).
    """
    d = np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2]]) / (1.0 - nu**2)
    xi_nodes = np.array([-1.0, 1.0, 1.0, -1.0])
    eta_nodes = np.array([-1.0, -1.0, 1.0, 1.0])
    g = 1.0 / np.sqrt(3.0)
    ke = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            dn_dxi = 0.25 * xi_nodes * (1 + eta * eta_nodes)
            dn_deta = 0.25 * eta_nodes * (1 + xi * xi_nodes)
            dn_dx = dn_dxi * 2.0 / hx
            dn_dy = dn_deta * 2.0 / hy
            b = np.zeros((3, 8))
            b[0, 0::2] = dn_dx
            b[1, 1::2] = dn_dy
            b[2, 0::2] = dn_dy
            b[2, 1::2] = dn_dx
            ke += b.T @ d @ b * (hx * hy / 4.0)
    return 0.5 * (ke + ke.T)


def _corner_fixed_dofs(nelx: int, nely: int, leg: int) -> np.ndarray:
    nodes = set()
    for ci in (0, nelx):
        for cj in (0, nely):
            step_i = 1 if ci == 0 else -1
            step_j = 1 if cj == 0 else -1
            for k in range(leg + 1):
                nodes.add((ci + step_i * k) * (nely + 1) + cj)
                nodes.add(ci * (nely + 1) + cj + step_j * k)
    nodes = np.array(sorted(nodes))
    return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


@dataclass
class Mesh:
    """Regular grid with its supports and labelled points of interest.

    ``points`` maps DOF labels (1-8 for the mechanism) to global DOF indices.
    """

    nelx: int
    nely: int
    fixed: np.ndarray
    points: dict[int, int] = field(default_factory=dict)
    nu: float = 0.3

    def __post_init__(self):
        self.fixed = np.unique(np.asarray(self.fixed, dtype=np.int64))
        if self.fixed.size and (self.fixed.min() < 0 or self.fixed.max() >= self.ndof):
            raise ContractViolation("fixed DOF out of range")
        clash = set(self.points.values()) & set(self.fixed.tolist())
        if clash:
            raise ContractViolation(f"points of interest {sorted(clash)} are fixed")
        free = np.ones(self.ndof, dtype=bool)
        free[self.fixed] = False
        self.free = np.flatnonzero(free)
        self._reduced = np.full(self.ndof, -1, dtype=np.int64)
        self._reduced[self.free] = np.arange(self.free.size)
        ex, ey = np.divmod(np.arange(self.nelx * self.nely), self.nely)
        bl = ex * (self.nely + 1) + ey
        br = bl + self.nely + 1
        nodes = np.stack([bl, br, br + 1, bl + 1], axis=1)
        self.edof = np.empty((nodes.shape[0], 8), dtype=np.int64)
        self.edof[:, 0::2] = 2 * nodes
        self.edof[:, 1::2] = 2 * nodes + 1
        self.ke = element_stiffness(self.nu, 1.0 / self.nelx, 1.0 / self.nely)

    @classmethod
    def mechanism(cls, nelx: int, nely: int, nu: float = 0.3) -> "Mesh":
        """Four edge-midpoint points of interest and clamped corner legs.

        Labels run counterclockwise from the left-edge midpoint: 1/2 left,
        3/4 bottom, 5/6 right, 7/8 top (odd = x, even = y). Each corner is
        clamped along both edges for two elements, shortened on coarse
        grids so the midpoints stay free.
        """
        if nelx < 4 or nely < 4:
            raise ContractViolation("mechanism mesh needs at least 4x4 elements")
        leg = max(1, min(2, min(nelx, nely) // 2 - 1))
        mx, my = nelx // 2, nely // 2
        node = lambda i, j: i * (nely + 1) + j  # noqa: E731
        mids = [node(0, my), node(mx, 0), node(nelx, my), node(mx, nely)]
        points = {}
        for k, nd in enumerate(mids):
            points[2 * k + 1] = 2 * nd
            points[2 * k + 2] = 2 * nd + 1
        return cls(nelx, nely, _corner_fixed_dofs(nelx, nely, leg), points, nu)

    @property
    def ndof(self) -> int:
        return 2 * (self.nelx + 1) * (self.nely + 1)

    @property
    def nel(self) -> int:
        return self.nelx * self.nely

    @property
    def nfree(self) -> int:
        return self.free.size

    def reduced_index(self, label: int) -> int:
        """Free-system index of a labelled point-of-interest DOF."""
        idx = self._reduced[self.points[label]]
        if idx < 0:
            raise ContractViolation(f"DOF label {label} is fixed")
        return int(idx)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.ndof)
        u[self.free] = u_free
        return u


class DensityFilter:
    """Linear cone-weighted convolution with boundary renormalization.

    ``weights`` is row-stochastic: ``filtered = weights @ s``.
    """

    def __init__(self, nelx: int, nely: int, radius: float = 2.0):
        if radius < 1:
            raise ContractViolation("filter radius must be >= 1 element")
        self.nelx, self.nely, self.radius = nelx, nely, radius
        reach = int(np.ceil(radius)) - 1
        rows, cols, vals = [], [], []
        ex, ey = np.divmod(np.arange(nelx * nely), nely)
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                w = radius - np.hypot(dx, dy)
                if w <= 0:
                    continue
                jx, jy = ex + dx, ey + dy
                ok = (jx >= 0) & (jx < nelx) & (jy >= 0) & (jy < nely)
                rows.append(np.flatnonzero(ok))
                cols.append(jx[ok] * nely + jy[ok])
                vals.append(np.full(ok.sum(), w))
        h = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nelx * nely,) * 2)
        self.weights = sp.diags(1.0 / np.asarray(h.sum(axis=1)).ravel()) @ h
        self.weights = self.weights.tocsr()
        self._weights_t = self.weights.T.tocsr()

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return self.weights @ s

    def transpose(self, g: np.ndarray) -> np.ndarray:
        """Chain rule: map a gradient w.r.t. the filtered field back to ``s``."""
        return self._weights_t @ g


def density_filter(s: np.ndarray, nelx: int, nely: int, radius: float = 2.0) -> np.ndarray:
    return DensityFilter(nelx, nely, radius)(s)


def simp_modulus(s_filtered, penal: float = 3.0, emin: float = 1e-9, e0: float = 1.0):
    return emin + (e0 - emin) * np.asarray(s_filtered) ** penal


def assemble_full(mesh: Mesh, s_filtered: np.ndarray, penal: float = 3.0, emin: float = 1e-9,
                  e0: float = 1.0) -> sp.csr_matrix:
    """Global stiffness over all DOFs, supports not yet applied."""
    s_filtered = np.asarray(s_filtered, dtype=float)
    if s_filtered.shape != (mesh.nel,):
        raise ContractViolation(f"design field must have {mesh.nel} entries")
    if np.any(s_filtered < 0) or np.any(s_filtered > 1):
        raise ContractViolation("design field outside [0, 1]")
    e = simp_modulus(s_filtered, penal, emin, e0)
    rows = np.repeat(mesh.edof, 8, axis=1).ravel()
    cols = np.tile(mesh.edof, (1, 8)).ravel()
    vals = (mesh.ke.ravel()[None, :] * e[:, None]).ravel()
    k = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.ndof, mesh.ndof))
    k.sum_duplicates()
    return k


def assemble(mesh: Mesh, s_filtered: np.ndarray, penal: float = 3.0, emin: float = 1e-9,
             e0: float = 1.0) -> SymmetricSystem:
    """Assemble and reduce to the free DOFs; returns a freshly versioned system."""
    s_filtered = np.asarray(s_filtered, dtype=float)
    if s_filtered.shape != (mesh.nel,):
        raise ContractViolation(f"design field must have {mesh.nel} entries")
    if np.any(s_filtered < 0) or np.any(s_filtered > 1):
        raise ContractViolation("design field outside [0, 1]")
    e = simp_modulus(s_filtered, penal, emin, e0)
    red = mesh._reduced[mesh.edof]
    ii = np.repeat(red, 8, axis=1)
    jj = np.tile(red, (1, 8))
    vals = mesh.ke.ravel()[None, :] * e[:, None]
    keep = (ii >= 0) & (jj >= 0) & (ii >= jj)
    n = mesh.nfree
    lower = sp.csr_matrix((vals[keep], (ii[keep], jj[keep])), shape=(n, n))
    lower.sum_duplicates()
    lower.sort_indices()
    if np.any(lower.diagonal() <= 0):
        raise ContractViolation("assembled system has a free DOF with zero stiffness")
    return SymmetricSystem(lower, next_version())


def stiffness_derivative_apply(ke: np.ndarray, s_e: float, u_e: np.ndarray, lam_e: np.ndarray,
                               penal: float = 3.0, emin: float = 1e-9, e0: float = 1.0) -> float:
    """``lam_e . dK_e/ds_e . u_e`` for one element (no filter chain rule)."""
    return float(penal * (e0 - emin) * s_e ** (penal - 1) * (lam_e @ ke @ u_e))


def element_derivative_terms(mesh: Mesh, s_filtered: np.ndarray, u: np.ndarray, lam: np.ndarray,
                             penal: float = 3.0, emin: float = 1e-9, e0: float = 1.0) -> np.ndarray:
    """Vectorized :func:`stiffness_derivative_apply` over all elements.

    ``u`` and ``lam`` are full-length (``mesh.ndof``) vectors.
    """
    ue = u[mesh.edof]
    le = lam[mesh.edof]
    quad = np.einsum("ei,ij,ej->e", le, mesh.ke, ue)
    return penal * (e0 - emin) * np.asarray(s_filtered) ** (penal - 1) * quad


def export_density(path, s: np.ndarray, nelx: int, nely: int) -> None:
    """Plain-text grid: ``nelx nely`` header, then ``nely`` rows top to bottom."""
    grid = np.asarray(s).reshape(nelx, nely).T[::-1]
    with open(Path(path), "w") as fh:
        fh.write(f"{nelx} {nely}\n")
        np.savetxt(fh, grid, fmt="%.8g")


def load_density(path) -> tuple[np.ndarray, int, int]:
    with open(Path(path)) as fh:
        nelx, nely = map(int, fh.readline().split())
        grid = np.loadtxt(fh, ndmin=2)
    return grid[::-1].T.ravel(), nelx, nely
