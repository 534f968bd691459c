"""Per-step monitors recorded along a run."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import model
from .mesh import Mesh, discrete_norm_H1, discrete_norm_Lp
from .model import ModelParams

SUPPORT_THRESHOLD = 1e-3


@dataclass
class DiagnosticsRecord:
    t: float
    dt: float
    S_min: float
    S_max: float
    M_min: float
    M_max: float
    Z_norm: float | None  # ||Z(M)||_{0,1}; only defined when MD > 0
    F_H1: float  # ||F(M)||_{1,2} with boundary values F(MD)
    S_H1: float  # ||S||_{1,2} with boundary values 1
    newton_iterations: int
    n_above: int  # cells with M > SUPPORT_THRESHOLD
    biomass: float  # sum_K m(K) M_K

    def is_finite(self) -> bool:
        return all(v is None or math.isfinite(v) for v in asdict(self).values())

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]


def compute_diagnostics(mesh: Mesh, params: ModelParams, state, dt: float, newton_iterations: int,
                        threshold: float = SUPPORT_THRESHOLD) -> DiagnosticsRecord:
    nl = params.nonlinearity
    nb = mesh.n_boundary_edges
    FM = np.concatenate([nl.F(state.M), np.full(nb, nl.F(params.MD))])
    Sv = np.concatenate([state.S, np.full(nb, params.SD)])
    Zn = None
    if params.MD > 0:
        Zn = discrete_norm_Lp(mesh, model.Z(state.M, params), 1)
    return DiagnosticsRecord(
        t=float(state.t),
        dt=float(dt),
        S_min=float(state.S.min()),
        S_max=float(state.S.max()),
        M_min=float(state.M.min()),
        M_max=float(state.M.max()),
        Z_norm=Zn,
        F_H1=discrete_norm_H1(mesh, FM),
        S_H1=discrete_norm_H1(mesh, Sv),
        newton_iterations=int(newton_iterations),
        n_above=int(np.count_nonzero(state.M > threshold)),
        biomass=float(np.dot(mesh.cell_measure, state.M)),
    )
