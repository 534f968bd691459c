"""Experiment drivers and invariant monitors.

* spatial convergence study in 1D against a fine reference.
* two colonies of a microbial floc spreading and merging in 2D.
* :func:`monitor_invariants` checks the discrete bounds and positivity decay
  along a run and accumulates the uniform-estimate sums.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from . import model
from .errors import InvalidArgumentError, StepFailure
from .mesh import Mesh, build_interval_mesh, discrete_norm_H1, generate_square_mesh
from .model import ModelParams
from .scheme import State, project_initial_data
from .solver import TimeControls, advance_adaptive, advance_fixed


# --- initial data -------------------------------------------------------------

def bump_1d(x, width=9.0):
    return np.maximum(1.0 - width**2 * np.asarray(x) ** 2, 0.0)


def bump_2d(x, y, width=8.0):
    return np.maximum(1.0 - width**2 * np.asarray(x) ** 2 - width**2 * np.asarray(y) ** 2, 0.0)


@dataclass(frozen=True)
class InitialData:
    """Named initial-data presets with overridable bump parameters.

    ``test1``: S0 = 1 - s_amplitude sin(pi x), M0 = sum_i amp_i bump(x - c_i).
    ``test2``: S0 = 1, M0 = sum_i amp_i bump(x - cx_i, y - cy_i).
    ``constant``: S0 = s_const, M0 = m_const.
    """

    kind: str = "test1"
    amplitudes: tuple = (0.2, 0.9)
    centers: tuple = (0.38, 0.62)  # 1D: x positions; 2D: (x, y) pairs
    width: float = 9.0
    s_amplitude: float = 0.2
    s_const: float = 1.0
    m_const: float = 0.0

    @classmethod
    def test1(cls, **kw):
        return cls(**kw)

    @classmethod
    def test2(cls, **kw):
        base = dict(kind="test2", amplitudes=(0.3, 0.9), centers=((0.4, 0.5), (0.6, 0.5)), width=8.0)
        base.update(kw)
        return cls(**base)

    def S0(self, *xy):
        if self.kind == "test1":
            return 1.0 - self.s_amplitude * np.sin(np.pi * xy[0])
        if self.kind == "test2":
            return np.ones_like(xy[0])
        return np.full_like(xy[0], self.s_const, dtype=float)

    def M0(self, *xy):
        if self.kind == "test1":
            x = xy[0]
            return sum(a * bump_1d(x - c, self.width) for a, c in zip(self.amplitudes, self.centers))
        if self.kind == "test2":
            x, y = xy
            return sum(a * bump_2d(x - cx, y - cy, self.width)
                       for a, (cx, cy) in zip(self.amplitudes, self.centers))
        return np.full_like(xy[0], self.m_const, dtype=float)

    def project(self, mesh: Mesh) -> State:
        return project_initial_data(mesh, self.S0, self.M0)


# --- small utilities ------------------------------------------------------------

def kappa_star(params: ModelParams):
    """Nutrient threshold kappa2 kappa4 / (kappa3 - kappa2) above which h > 0.

    Returns None when kappa3 <= kappa2 (production never outweighs wastage).
    """
    return model.kappa_star(params)


def connected_components(mesh: Mesh, indicator) -> int:
    """Number of edge-connected components formed by the flagged cells."""
    flag = np.asarray(indicator, dtype=bool)
    if flag.shape != (mesh.n_cells,):
        raise InvalidArgumentError("expected one flag per cell")
    idx = np.flatnonzero(flag)
    if len(idx) == 0:
        return 0
    keep = flag[mesh.int_K] & flag[mesh.int_L]
    local = -np.ones(mesh.n_cells, dtype=np.int64)
    local[idx] = np.arange(len(idx))
    rows = local[mesh.int_K[keep]]
    cols = local[mesh.int_L[keep]]
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(idx), len(idx)))
    n, _ = _cc(graph, directed=False)
    return int(n)


def l1_error_vs_reference(coarse_mesh: Mesh, coarse, fine_mesh: Mesh, fine) -> float:
    """sum_K m(K) |v_K - average of the fine cells inside K| on nested uniform 1D meshes."""
    coarse = np.asarray(coarse, dtype=float)
    fine = np.asarray(fine, dtype=float)
    nc, nf = coarse_mesh.n_cells, fine_mesh.n_cells
    if coarse_mesh.dim != 1 or fine_mesh.dim != 1:
        raise InvalidArgumentError("reference comparison is defined for 1D meshes")
    if nf % nc:
        raise InvalidArgumentError(f"fine mesh ({nf} cells) does not refine coarse mesh ({nc} cells)")
    if coarse.shape != (nc,) or fine.shape != (nf,):
        raise InvalidArgumentError("field sizes do not match their meshes")
    r = nf // nc
    avg = (fine * fine_mesh.cell_measure).reshape(nc, r).sum(axis=1) / coarse_mesh.cell_measure
    return float(np.sum(coarse_mesh.cell_measure * np.abs(coarse - avg)))


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(h) < 2:
        raise InvalidArgumentError("need >= 2 grids to fit a slope")
    slope, _ = np.polyfit(np.log(h), np.log(err), 1)
    return float(slope)


# --- monitors ---------------------------------------------------------------------

@dataclass
class InvariantReport:
    steps: int = 0
    bounds_ok: bool = True
    lower_bound_ok: bool | None = None
    failures: list = field(default_factory=list)  # (step, cell, message)
    min_lower_margin: float = math.inf  # min_k min_K M_K^k - m0 prod (1 + kappa2 dt)^-1
    Z_norms: list = field(default_factory=list)
    entropy_slope: float | None = None  # fitted C in ||Z(M^k)|| <= ||Z(M^0)|| + C t_k
    sum_dt_F_H1_sq: float = 0.0
    sum_dt_S_H1_sq: float = 0.0
    increments: list = field(default_factory=list)  # per-step (dt |F|^2, dt |S|^2)
    final_state: State | None = None

    @property
    def passed(self) -> bool:
        return self.bounds_ok and self.lower_bound_ok is not False and all(
            math.isfinite(z) for z in self.Z_norms)


def monitor_invariants(mesh: Mesh, params: ModelParams, initial: State, stream,
                       m0: float | None = None, s_tol: float = 1e-12,
                       lower_tol: float = 1e-10) -> InvariantReport:
    """Check a stream of accepted steps against the discrete invariants.

    ``stream`` yields (state, report, ...) tuples as produced by the
    advance_* generators (only the state and ``report.dt_used`` are used).
    ``m0`` enables the positivity check M_K^k >= m0 prod_j (1 + kappa2 dt_j)^-1,
    valid when M0 >= m0 and MD >= m0.
    """
    rep = InvariantReport(final_state=initial)
    nl = params.nonlinearity
    nb = mesh.n_boundary_edges
    FD = nl.F(params.MD)
    with_Z = params.MD > 0
    if with_Z:
        rep.Z_norms.append(float(np.dot(mesh.cell_measure, np.abs(model.Z(initial.M, params)))))
    if m0 is not None:
        rep.lower_bound_ok = True
    decay = 1.0
    times = [initial.t]
    for item in stream:
        state, newton = item[0], item[1]
        dt = newton.dt_used
        rep.steps += 1
        k = rep.steps
        bad = state.bounds_violation(s_tol)
        if bad is not None:
            rep.bounds_ok = False
            rep.failures.append((k, bad[0], bad[1]))
        if m0 is not None:
            decay /= 1.0 + params.kappa2 * dt
            margin = float(state.M.min() - m0 * decay)
            rep.min_lower_margin = min(rep.min_lower_margin, margin)
            if margin < -lower_tol:
                rep.lower_bound_ok = False
                K = int(np.argmin(state.M))
                rep.failures.append((k, K, f"M={state.M[K]!r} below {m0 * decay!r}"))
        if with_Z and bad is None:
            rep.Z_norms.append(float(np.dot(mesh.cell_measure, np.abs(model.Z(state.M, params)))))
        times.append(state.t)
        rep.final_state = state
        if bad is None or state.M.max() < 1:
            FM = np.concatenate([nl.F(np.clip(state.M, 0, None)), np.full(nb, FD)])
            Sv = np.concatenate([state.S, np.full(nb, params.SD)])
            inc = (dt * discrete_norm_H1(mesh, FM) ** 2, dt * discrete_norm_H1(mesh, Sv) ** 2)
            rep.increments.append(inc)
            rep.sum_dt_F_H1_sq += inc[0]
            rep.sum_dt_S_H1_sq += inc[1]
    if with_Z and len(rep.Z_norms) > 1:
        z = np.array(rep.Z_norms)
        t = np.array(times[: len(z)]) - times[0]
        rep.entropy_slope = float(max(0.0, np.max((z[1:] - z[0]) / t[1:])))
    return rep


# --- 1D convergence in space ------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceConfig:
    grids: tuple = (40, 80, 160, 320)
    n_ref: int = 2560
    dt: float = 1e-7
    t_end: float = 1e-3
    params: ModelParams = field(default_factory=ModelParams.test1)
    initial: InitialData = field(default_factory=InitialData.test1)
    newton_tol: float = 1e-10
    workers: int = 1

    @classmethod
    def full_scale(cls, **kw):
        """Full protocol: 80..2560 cells against 20480 cells with dt = 1/20480**2."""
        return cls(grids=(80, 160, 320, 640, 1280, 2560), n_ref=20480, dt=(1 / 20480) ** 2, **kw)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class ConvergenceTable:
    rows: list  # (n_cells, h, err_S, err_M)
    slope_S: float
    slope_M: float
    uniform_estimates: dict = field(default_factory=dict)  # n_cells -> (sum dt|F|^2, sum dt|S|^2)

    def to_csv(self) -> str:
        lines = ["n_cells,h,err_S,err_M"]
        lines += [f"{n},{h!r},{es!r},{em!r}" for n, h, es, em in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return f"slope_S={self.slope_S!r} slope_M={self.slope_M!r}"


def _run_1d(n, cfg: ConvergenceConfig):
    mesh = build_interval_mesh(n)
    state = cfg.initial.project(mesh)
    controls = TimeControls(newton_tol=cfg.newton_tol, mode="fixed", dt=cfg.dt)
    stream = advance_fixed(mesh, cfg.params, state, cfg.dt, cfg.n_steps, controls, diagnostics=False)
    try:
        rep = monitor_invariants(mesh, cfg.params, state, stream)
    except StepFailure as exc:
        raise StepFailure(f"grid with {n} cells: {exc}", step=exc.step, t=exc.t, dt=exc.dt) from exc
    return n, rep.final_state, (rep.sum_dt_F_H1_sq, rep.sum_dt_S_H1_sq), rep.bounds_ok


def run_convergence_study(cfg: ConvergenceConfig) -> ConvergenceTable:
    if len(cfg.grids) < 2:
        raise InvalidArgumentError("need >= 2 grids")
    if any(cfg.n_ref % n for n in cfg.grids):
        raise InvalidArgumentError("every grid must divide the reference cell count")
    sizes = sorted(set(cfg.grids)) + [cfg.n_ref]
    workers = max(1, int(cfg.workers))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(sizes))) as pool:
            results = list(pool.map(_run_1d, sizes, [cfg] * len(sizes)))
    else:
        results = [_run_1d(n, cfg) for n in sizes]
    results.sort(key=lambda r: r[0])
    by_n = {n: (state, est) for n, state, est, _ in results}
    ref_state, _ = by_n[cfg.n_ref]
    ref_mesh = build_interval_mesh(cfg.n_ref)
    rows = []
    for n in sorted(set(cfg.grids)):
        mesh = build_interval_mesh(n)
        st, _ = by_n[n]
        rows.append((n, 1.0 / n,
                     l1_error_vs_reference(mesh, st.S, ref_mesh, ref_state.S),
                     l1_error_vs_reference(mesh, st.M, ref_mesh, ref_state.M)))
    hs = [r[1] for r in rows]
    return ConvergenceTable(
        rows=rows,
        slope_S=fit_slope(hs, [r[2] for r in rows]),
        slope_M=fit_slope(hs, [r[3] for r in rows]),
        uniform_estimates={n: est for n, (_, est) in by_n.items()},
    )


def synthetic_table(h0: float = 0.1, n: int = 3) -> ConvergenceTable:
    """Table built from exact h**2 errors, for checking the fitting path."""
    rows = [(int(round(1 / (h0 / 2**i))), h0 / 2**i, (1 / 4) ** i, (1 / 4) ** i) for i in range(n)]
    hs = [r[1] for r in rows]
    return ConvergenceTable(rows, fit_slope(hs, [r[2] for r in rows]), fit_slope(hs, [r[3] for r in rows]))


# --- 2D microbial floc -----------------------------------------------------------

@dataclass(frozen=True)
class FlocConfig:
    nx: int = 16
    ny: int = 28
    t_end: float = 0.1
    snapshot_times: tuple = (1e-4, 1e-2)
    params: ModelParams = field(default_factory=ModelParams.test2)
    initial: InitialData = field(default_factory=InitialData.test2)
    controls: TimeControls = field(default_factory=lambda: TimeControls.for_dim(2))
    thresholds: tuple = (1e-2, 1e-3, 1e-4)


@dataclass
class FlocResult:
    mesh: Mesh
    initial: State
    final: State
    snapshots: dict  # t -> State (includes 0 and t_end)
    diagnostics: list
    times: list
    components: dict  # threshold -> list of component counts (index aligned with times)
    support_measure: dict  # threshold -> list of m({M > threshold})
    invariants: InvariantReport

    def support_violations(self, threshold: float = 1e-3) -> float:
        """Largest drop of m({M > threshold}) between consecutive recorded times."""
        m = np.asarray(self.support_measure[threshold])
        drop = np.maximum.accumulate(m) - m
        return float(drop.max(initial=0.0))

    def merge_time(self, threshold: float = 1e-3):
        """First recorded time at which {M > threshold} is a single component."""
        for t, c in zip(self.times, self.components[threshold]):
            if c == 1:
                return t
        return None


def run_floc_experiment(cfg: FlocConfig = FlocConfig(), mesh: Mesh | None = None) -> FlocResult:
    mesh = mesh or generate_square_mesh(cfg.nx, cfg.ny)
    init = cfg.initial.project(mesh)
    comps = {th: [] for th in cfg.thresholds}
    support = {th: [] for th in cfg.thresholds}
    times = []

    def record(state):
        times.append(state.t)
        for th in cfg.thresholds:
            flag = state.M > th
            comps[th].append(connected_components(mesh, flag))
            support[th].append(float(mesh.cell_measure[flag].sum()))

    record(init)
    snaps = {0.0: init}
    diags = []
    wanted = sorted(t for t in cfg.snapshot_times if 0 < t < cfg.t_end)
    last = init

    def stream():
        nonlocal last
        for item in advance_adaptive(mesh, cfg.params, init, cfg.controls, cfg.t_end, stops=wanted):
            state, _, rec = item
            record(state)
            diags.append(rec)
            for t in wanted:
                if state.t == t:
                    snaps[t] = state
            last = state
            yield item

    inv = monitor_invariants(mesh, cfg.params, init, stream())
    snaps[cfg.t_end] = last
    return FlocResult(mesh, init, last, snaps, diags, times, comps, support, inv)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("BIOFILM_FV_THREADS", "1")))
    except ValueError:
        return 1
