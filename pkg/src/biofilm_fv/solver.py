"""Newton solves of the implicit Euler step and time stepping over [0, T]."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostics import compute_diagnostics
from .errors import DomainError, InvalidArgumentError, InvariantViolation, StepFailure
from .mesh import Mesh
from .model import ModelParams
from .scheme import State, assemble_jacobian, assemble_residual

log = logging.getLogger(__name__)

M_CEILING = 1.0 - 1e-14
MAX_DAMPING_HALVINGS = 30
MAX_LINE_SEARCH_HALVINGS = 8


class LinearSolveBreakdown(RuntimeError):
    pass


class DampingUnderflow(StepFailure):
    pass


@dataclass(frozen=True)
class TimeControls:
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    dt_min: float = 1e-8
    dt_max: float = 1e-2
    dt_init: float = 1e-5
    shrink: float = 0.2
    grow: float = 1.1
    mode: str = "adaptive"  # or "fixed"
    dt: float | None = None  # step size in fixed mode

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise InvalidArgumentError("need 0 < dt_min <= dt_init <= dt_max")
        if not 0 < self.shrink < 1 < self.grow:
            raise InvalidArgumentError("need 0 < shrink < 1 < grow")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise InvalidArgumentError("newton_tol must be positive and newton_max_iter >= 1")
        if self.mode not in ("adaptive", "fixed"):
            raise InvalidArgumentError(f"unknown time-stepping mode {self.mode!r}")
        if self.mode == "fixed" and not (self.dt and self.dt > 0):
            raise InvalidArgumentError("fixed mode needs a positive dt")

    @classmethod
    def for_dim(cls, dim: int, **overrides) -> "TimeControls":
        """Defaults per dimension: Newton tolerance 1e-10 in 1D, 1e-8 in 2D."""
        return cls(newton_tol=1e-10 if dim == 1 else 1e-8, **overrides)

    def with_(self, **overrides) -> "TimeControls":
        return replace(self, **overrides)

    # step-size policy
    def after_failure(self, dt: float) -> float:
        return max(self.shrink * dt, self.dt_min)

    def after_success(self, dt: float) -> float:
        return min(self.grow * dt, self.dt_max)


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    final_residual: float
    damping_events: int
    dt_used: float
    message: str = ""


# --- linear algebra ----------------------------------------------------------

def _to_banded(A: sp.csr_matrix, bw: int) -> np.ndarray:
    A = A.tocoo()
    n = A.shape[0]
    ab = np.zeros((2 * bw + 1, n))
    ab[bw + A.row - A.col, A.col] = A.data
    return ab


def linear_solve(A, b, bandwidth: int | None = None) -> np.ndarray:
    """Direct solve of A x = b.

    Narrow-band systems (1D meshes) use banded LU, everything else sparse LU.
    A pivot breakdown or a residual that stays large after one step of
    iterative refinement raises :class:`LinearSolveBreakdown`.
    """
    b = np.asarray(b, dtype=float)
    if sp.issparse(A):
        A = A.tocsr()
        if bandwidth is None:
            coo = A.tocoo()
            bandwidth = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
    else:
        A = sp.csr_matrix(np.asarray(A, dtype=float))
        coo = A.tocoo()
        bandwidth = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise InvalidArgumentError("need a square matrix and a matching right-hand side")

    try:
        with np.errstate(all="raise"):
            if bandwidth <= 8 and n > 4 * bandwidth + 1:
                ab = _to_banded(A, bandwidth)
                solve = lambda rhs: scipy.linalg.solve_banded(  # noqa: E731
                    (bandwidth, bandwidth), ab, rhs, check_finite=False)
            else:
                lu = spla.splu(A.tocsc())
                solve = lu.solve
            x = solve(b)
            if not np.all(np.isfinite(x)):
                raise LinearSolveBreakdown("non-finite solution")
            r = b - A @ x
            bnorm = np.max(np.abs(b)) if n else 0.0
            if np.max(np.abs(r), initial=0.0) > 1e-12 * (1.0 + bnorm):
                x = x + solve(r)
                r = b - A @ x
            # backward-error acceptance after refinement
            anorm = abs(A).sum(axis=1).max() if n else 0.0
            bound = 1e-10 * (bnorm + anorm * np.max(np.abs(x), initial=0.0))
            if np.max(np.abs(r), initial=0.0) > max(bound, 1e-12 * (1.0 + bnorm)):
                raise LinearSolveBreakdown(f"residual {np.max(np.abs(r)):.3g} after refinement")
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError, ValueError) as exc:
        if isinstance(exc, LinearSolveBreakdown):
            raise
        raise LinearSolveBreakdown(str(exc)) from exc
    return x


# --- Newton ---------------------------------------------------------------------

def damp_into_domain(M, dM, ceiling: float = M_CEILING) -> float:
    """Largest 2**-j (j <= 30) keeping M + lambda dM below ``ceiling``.

    Only the singular upper bound is enforced here; excursions below zero are
    projected back by the caller.
    """
    M = np.asarray(M, dtype=float)
    dM = np.asarray(dM, dtype=float)
    lam = 1.0
    for _ in range(MAX_DAMPING_HALVINGS + 1):
        if np.all(M + lam * dM <= ceiling):
            return lam
        lam *= 0.5
    raise DampingUnderflow("damping factor underflow: Newton step cannot be kept below M = 1")


def newton_solve(mesh: Mesh, params: ModelParams, prev: State, dt: float,
                 controls: TimeControls, initial: State | None = None):
    """One implicit Euler step by damped Newton, starting from ``initial`` (default: prev).

    Returns ``(state, report)``; failures are reported, never raised.
    """
    tol = controls.newton_tol
    guess = prev if initial is None else initial
    u = guess.as_vector()
    cand = State.from_vector(u, prev.t + dt, prev.k + 1)
    damping_events = 0

    # convergence is measured on the residual scaled by dt / m(K): the raw
    # residual carries a mesh-dependent roundoff floor from the flux sums
    weight = np.repeat(dt / mesh.cell_measure, 2)

    def residual(state):
        return assemble_residual(mesh, params, prev, state, dt).as_vector()

    try:
        r = residual(cand)
    except DomainError as exc:
        return cand, NewtonReport(False, 0, np.inf, 0, dt, f"initial guess outside domain: {exc}")
    norm = float(np.max(weight * np.abs(r)))
    bw = None
    it = 0
    while True:
        if norm <= tol:
            return cand, NewtonReport(True, it, norm, damping_events, dt)
        if it >= controls.newton_max_iter or not np.isfinite(norm):
            return cand, NewtonReport(False, it, norm, damping_events, dt, "no convergence")
        it += 1
        J = assemble_jacobian(mesh, params, prev, cand, dt)
        if bw is None:
            bw = mesh.__dict__["_jac_pattern"].bandwidth
        try:
            du = -linear_solve(J, r, bandwidth=bw)
        except LinearSolveBreakdown as exc:
            return cand, NewtonReport(False, it, norm, damping_events, dt, f"linear solve: {exc}")
        try:
            lam = damp_into_domain(u[1::2], du[1::2])
        except DampingUnderflow as exc:
            return cand, NewtonReport(False, it, norm, damping_events, dt, str(exc))

        for _ in range(MAX_LINE_SEARCH_HALVINGS + 1):
            u_try = u + lam * du
            u_try[1::2] = np.maximum(u_try[1::2], 0.0)
            trial = State.from_vector(u_try, cand.t, cand.k)
            r_try = residual(trial)
            norm_try = float(np.max(weight * np.abs(r_try)))
            if norm_try < norm:
                break
            lam *= 0.5
        if lam < 1.0:
            damping_events += 1
        u, r, norm, cand = u_try, r_try, norm_try, trial


# --- time stepping ---------------------------------------------------------------

def _check_bounds(state: State, step: int):
    bad = state.bounds_violation()
    if bad is not None:
        cell, msg = bad
        raise InvariantViolation(f"step {step}, t={state.t!r}: {msg}", step=step, cell=cell)


def advance_adaptive(mesh: Mesh, params: ModelParams, state: State, controls: TimeControls,
                     t_end: float, stops=(), check_bounds: bool = True, diagnostics: bool = True):
    """Adaptive implicit Euler steps from state.t to t_end.

    Yields ``(state, report, diagnostics_record)`` after every accepted step.
    On Newton failure dt shrinks by ``controls.shrink`` (not below dt_min);
    failing at dt_min raises :class:`StepFailure`. After a success the next
    trial step is ``min(grow * dt, dt_max)``. Steps are clipped to land on
    ``t_end`` and on every time in ``stops``.
    """
    if not state.t < t_end:
        raise InvalidArgumentError("state.t must be before t_end")
    targets = sorted(float(s) for s in stops if state.t < s < t_end) + [float(t_end)]
    dt = controls.dt_init
    current = state
    while targets:
        target = targets[0]
        remaining = target - current.t
        dt_try = min(dt, remaining)
        # do not leave a sliver shorter than roundoff before the target
        lands = dt_try >= remaining * (1 - 1e-12)
        new, report = newton_solve(mesh, params, current, dt_try, controls)
        if not report.converged:
            if dt_try <= controls.dt_min:
                raise StepFailure(
                    f"Newton failed at minimal dt={dt_try!r}, t={current.t!r}: {report.message}",
                    step=current.k + 1, t=current.t, dt=dt_try, report=report)
            dt = controls.after_failure(dt_try)
            log.debug("t=%g: Newton failed (%s), dt -> %g", current.t, report.message, dt)
            continue
        if lands:
            new.t = target
            targets.pop(0)
        if check_bounds:
            _check_bounds(new, new.k)
        rec = compute_diagnostics(mesh, params, new, dt_try, report.iterations) if diagnostics else None
        yield new, report, rec
        current = new
        # dt is the unclipped trial size, so landing on a stop does not shrink it
        dt = controls.after_success(dt)


def advance_fixed(mesh: Mesh, params: ModelParams, state: State, dt: float, n_steps: int,
                  controls: TimeControls | None = None, check_bounds: bool = True,
                  diagnostics: bool = True):
    """Exactly ``n_steps`` implicit Euler steps of size dt; Newton failure is fatal."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    controls = controls or TimeControls.for_dim(mesh.dim)
    current = state
    for i in range(int(n_steps)):
        new, report = newton_solve(mesh, params, current, dt, controls)
        new.t = state.t + (i + 1) * dt
        if not report.converged:
            raise StepFailure(
                f"Newton failed at step {current.k + 1} (t={current.t!r}, dt={dt!r}): "
                f"{report.message}, residual {report.final_residual:.3g}",
                step=current.k + 1, t=current.t, dt=dt, report=report)
        if check_bounds:
            _check_bounds(new, new.k)
        rec = compute_diagnostics(mesh, params, new, dt, report.iterations) if diagnostics else None
        yield new, report, rec
        current = new


def run_to_end(stream):
    """Exhaust a stepping stream and return its last (state, report, record)."""
    last = None
    for last in stream:
        pass
    return last
