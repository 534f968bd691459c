"""Implicit Euler TPFA discretisation of the nutrient / biomass system.

For every cell K the scheme balances

    m(K)/dt (S_K - S_K^old) + sum_sigma F_S,K,sigma = m(K) g(S_K, M_K)
    m(K)/dt (M_K - M_K^old) + sum_sigma F_M,K,sigma = m(K) h(S_K, M_K)

with two-point fluxes F_S = -tau d1 D_{K,sigma} S and F_M = -tau d2 D_{K,sigma} F(M).
Dirichlet data S = 1 and M = MD enter only through boundary-edge fluxes.

Unknowns are interleaved per cell: ``u[2K] = S_K``, ``u[2K + 1] = M_K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import model
from .errors import DataError, InvalidArgumentError
from .mesh import Mesh
from .model import ModelParams


@dataclass
class State:
    S: np.ndarray
    M: np.ndarray
    t: float = 0.0
    k: int = 0

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float)
        self.M = np.asarray(self.M, dtype=float)
        if self.S.shape != self.M.shape or self.S.ndim != 1:
            raise InvalidArgumentError("S and M must be 1D arrays of equal length")

    def copy(self) -> "State":
        return State(self.S.copy(), self.M.copy(), self.t, self.k)

    def as_vector(self) -> np.ndarray:
        u = np.empty(2 * len(self.S))
        u[0::2] = self.S
        u[1::2] = self.M
        return u

    @classmethod
    def from_vector(cls, u, t=0.0, k=0) -> "State":
        return cls(u[0::2].copy(), u[1::2].copy(), t, k)

    def bounds_violation(self, s_tol: float = 1e-12):
        """First (cell, message) violating 0 <= S <= 1 + s_tol, 0 <= M < 1, or None."""
        checks = (
            (self.S < 0, "S < 0"),
            (self.S > 1 + s_tol, "S > 1"),
            (self.M < 0, "M < 0"),
            (self.M >= 1, "M >= 1"),
            (~np.isfinite(self.S) | ~np.isfinite(self.M), "non-finite value"),
        )
        for mask, what in checks:
            if mask.any():
                K = int(np.flatnonzero(mask)[0])
                return K, f"{what} in cell {K}: S={self.S[K]!r}, M={self.M[K]!r}"
        return None


@dataclass
class Residual:
    r_S: np.ndarray
    r_M: np.ndarray

    def as_vector(self) -> np.ndarray:
        r = np.empty(2 * len(self.r_S))
        r[0::2] = self.r_S
        r[1::2] = self.r_M
        return r

    def max_norm(self) -> float:
        return float(max(np.max(np.abs(self.r_S)), np.max(np.abs(self.r_M))))

    def scaled_max_norm(self, mesh: Mesh, dt: float) -> float:
        """Max-norm of the residual divided by m(K)/dt, i.e. in units of S and M."""
        w = dt / mesh.cell_measure
        return float(max(np.max(w * np.abs(self.r_S)), np.max(w * np.abs(self.r_M))))


# --- initial data -----------------------------------------------------------

def _subtriangle_rule(levels: int = 4):
    """Barycentric points and weights: edge-midpoint rule on levels**2 sub-triangles."""
    pts = []
    n = levels
    for i in range(n):
        for j in range(n - i):
            # upward sub-triangle
            tris = [((i, j), (i + 1, j), (i, j + 1))]
            if j < n - i - 1:
                tris.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
            for tri in tris:
                v = np.array(tri, dtype=float) / n
                for a, b in ((0, 1), (1, 2), (2, 0)):
                    mid = 0.5 * (v[a] + v[b])
                    pts.append((1.0 - mid[0] - mid[1], mid[0], mid[1]))
    pts = np.array(pts)
    w = np.full(len(pts), 1.0 / len(pts))
    return pts, w


def cell_averages(mesh: Mesh, func) -> np.ndarray:
    """Cell averages of a vectorised function of position by quadrature.

    1D: composite midpoint rule on 64 subintervals per cell.
    2D: degree-2 edge-midpoint rule on 16 congruent sub-triangles.
    """
    if mesh.dim == 1:
        nsub = 64
        frac = (np.arange(nsub) + 0.5) / nsub
        left = mesh.centers[:, 0] - 0.5 * mesh.cell_measure
        x = left[:, None] + mesh.cell_measure[:, None] * frac[None, :]
        return np.asarray(func(x), dtype=float).mean(axis=1)
    bary, w = _subtriangle_rule(4)
    corners = mesh.nodes[mesh.triangles]  # (n, 3, 2)
    pts = np.einsum("qi,nid->nqd", bary, corners)
    vals = np.asarray(func(pts[..., 0], pts[..., 1]), dtype=float)
    return vals @ w


def project_initial_data(mesh: Mesh, S0, M0, t0: float = 0.0) -> State:
    """Cell averages of the initial data; S0 and M0 take x (1D) or (x, y) (2D)."""
    S = cell_averages(mesh, S0)
    M = cell_averages(mesh, M0)
    tol = 1e-12
    if S.min() < -tol or S.max() > 1 + tol:
        raise DataError(f"initial S averages leave [0, 1]: [{S.min()!r}, {S.max()!r}]")
    if M.min() < -tol or M.max() >= 1:
        raise DataError(f"initial M averages leave [0, 1): [{M.min()!r}, {M.max()!r}]")
    return State(np.clip(S, 0.0, 1.0), np.clip(M, 0.0, None), t0, 0)


def _scatter(idx, weights, n):
    # bincount returns an integer array for empty input
    return np.bincount(idx, weights=weights, minlength=n).astype(float, copy=False)


# --- fluxes -----------------------------------------------------------------

def _boundary(mesh, value):
    return np.full(mesh.n_boundary_edges, float(value))


def flux_S(mesh: Mesh, S, params: ModelParams, edge: int | None = None, boundary=None):
    """F_S,K,sigma = -tau d1 (S_{K,sigma} - S_K), K the first cell of the edge.

    ``S`` holds cell values; boundary-edge values default to the Dirichlet
    datum 1. Returns one flux per edge, or the flux of a single ``edge``.
    """
    S = np.asarray(S, dtype=float)
    bnd = _boundary(mesh, params.SD) if boundary is None else np.asarray(boundary, dtype=float)
    flux = -mesh.tau * params.d1 * mesh.edge_differences(S, bnd)
    return flux if edge is None else float(flux[edge])


def flux_M(mesh: Mesh, M, params: ModelParams, edge: int | None = None, boundary=None):
    """F_M,K,sigma = -tau d2 (F(M_{K,sigma}) - F(M_K)); boundary values default to MD."""
    nl = params.nonlinearity
    FM = nl.F(np.asarray(M, dtype=float))
    bnd = _boundary(mesh, params.MD) if boundary is None else np.asarray(boundary, dtype=float)
    flux = -mesh.tau * params.d2 * mesh.edge_differences(FM, nl.F(bnd))
    return flux if edge is None else float(flux[edge])


def flux_divergence(mesh: Mesh, edge_flux) -> np.ndarray:
    """sum_{sigma in E_K} F_{K,sigma} per cell, fluxes oriented out of the first cell."""
    out = _scatter(mesh.int_K, edge_flux[mesh.int_edges], mesh.n_cells)
    out -= _scatter(mesh.int_L, edge_flux[mesh.int_edges], mesh.n_cells)
    out += _scatter(mesh.ext_K, edge_flux[mesh.ext_edges], mesh.n_cells)
    return out


# --- residual and Jacobian ---------------------------------------------------

def assemble_residual(mesh: Mesh, params: ModelParams, prev: State, candidate: State, dt: float) -> Residual:
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    S, M = candidate.S, candidate.M
    mK = mesh.cell_measure
    nl = params.nonlinearity
    FM = nl.F(M)
    FD = nl.F(params.MD)
    p = params

    # interior edges: K -> L difference, accumulated with opposite signs
    dS = S[mesh.int_L] - S[mesh.int_K]
    dF = FM[mesh.int_L] - FM[mesh.int_K]
    n = mesh.n_cells
    divS = _scatter(mesh.int_L, mesh.int_tau * dS, n)
    divS -= _scatter(mesh.int_K, mesh.int_tau * dS, n)
    divS -= _scatter(mesh.ext_K, mesh.ext_tau * (p.SD - S[mesh.ext_K]), n)
    divF = _scatter(mesh.int_L, mesh.int_tau * dF, n)
    divF -= _scatter(mesh.int_K, mesh.int_tau * dF, n)
    divF -= _scatter(mesh.ext_K, mesh.ext_tau * (FD - FM[mesh.ext_K]), n)

    monod = S / (p.kappa4 + S)
    r_S = mK / dt * (S - prev.S) + p.d1 * divS + mK * p.kappa1 * monod * M
    r_M = mK / dt * (M - prev.M) + p.d2 * divF - mK * (p.kappa3 * monod - p.kappa2) * M
    return Residual(r_S, r_M)


class _Pattern:
    """Sparsity pattern of the interleaved Jacobian, cached per mesh."""

    def __init__(self, mesh: Mesh):
        n = mesh.n_cells
        K, L = mesh.int_K, mesh.int_L
        cells = np.arange(n)
        sK, mK_, sL, mL = 2 * K, 2 * K + 1, 2 * L, 2 * L + 1
        rows = [2 * cells, 2 * cells, 2 * cells + 1, 2 * cells + 1, sK, sL, mK_, mL]
        cols = [2 * cells, 2 * cells + 1, 2 * cells, 2 * cells + 1, sL, sK, mL, mK_]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        self.n = n
        self.n_int = len(K)
        coo = sp.coo_matrix((np.arange(len(rows)) + 1.0, (rows, cols)), shape=(2 * n, 2 * n))
        csr = coo.tocsr()
        csr.sort_indices()
        # perm[i] = coo entry stored at csr.data[i] (no duplicates by construction)
        self.perm = csr.data.astype(np.int64) - 1
        self.indptr = csr.indptr
        self.indices = csr.indices
        self.bandwidth = int(np.max(np.abs(rows - cols)))
        # diffusion sums per cell: sum over adjacent edges of tau
        self.tau_sum = (_scatter(K, mesh.int_tau, n)
                        + _scatter(L, mesh.int_tau, n)
                        + _scatter(mesh.ext_K, mesh.ext_tau, n))


def _pattern(mesh: Mesh) -> _Pattern:
    pat = mesh.__dict__.get("_jac_pattern")
    if pat is None:
        pat = _Pattern(mesh)
        mesh.__dict__["_jac_pattern"] = pat
    return pat


def assemble_jacobian(mesh: Mesh, params: ModelParams, prev: State, candidate: State, dt: float) -> sp.csr_matrix:
    """Exact derivative of :func:`assemble_residual` w.r.t. the interleaved unknowns."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    pat = _pattern(mesh)
    p = params
    S, M = candidate.S, candidate.M
    mK = mesh.cell_measure
    nl = params.nonlinearity
    fM = nl.f(M)
    n = mesh.n_cells

    # tau-weighted f over all edges adjacent to K, evaluated at M_K
    tau_f = pat.tau_sum * fM

    dSS = mK / dt + p.d1 * pat.tau_sum - mK * model.dg_dS(S, M, p)
    dSM = -mK * model.dg_dM(S, M, p)
    dMS = -mK * model.dh_dS(S, M, p)
    dMM = mK / dt + p.d2 * tau_f - mK * model.dh_dM(S, M, p)

    K, L, tau = mesh.int_K, mesh.int_L, mesh.int_tau
    vals = np.concatenate([
        dSS, dSM, dMS, dMM,
        -p.d1 * tau, -p.d1 * tau,
        -p.d2 * tau * fM[L], -p.d2 * tau * fM[K],
    ])
    data = vals[pat.perm]
    return sp.csr_matrix((data, pat.indices, pat.indptr), shape=(2 * n, 2 * n))


# --- discrete integration by parts -------------------------------------------

def discrete_ibp_check(mesh: Mesh, edge_flux, v):
    """Both sides of the discrete integration-by-parts identity.

    ``edge_flux[j]`` is F_{K,sigma} for K the first cell of edge j (so the
    flux seen from the second cell is its negative); ``v`` holds cell values
    followed by boundary-edge values.

    lhs = sum_K sum_{sigma in E_K} F_{K,sigma} v_K
    rhs = -sum_sigma F_{K,sigma} D_{K,sigma} v + sum_{sigma ext} F_{K,sigma} v_sigma
    """
    edge_flux = np.asarray(edge_flux, dtype=float)
    if edge_flux.shape != (mesh.n_edges,):
        raise InvalidArgumentError("expected one flux per edge")
    vc, vb = mesh.split_values(v)
    lhs = 0.0
    for K, edges in enumerate(mesh.cell_edges):
        for j in edges:
            sign = 1.0 if mesh.edge_cells[j, 0] == K else -1.0
            lhs += sign * edge_flux[j] * vc[K]
    D = mesh.edge_differences(vc, vb)
    rhs = -np.sum(edge_flux * D) + np.sum(edge_flux[mesh.ext_edges] * vb)
    return float(lhs), float(rhs)
