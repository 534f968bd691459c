"""Pointwise nonlinearities of the nutrient / biomass system.

Biomass diffusion is ``div(f(M) grad M) = lap F(M)`` with

    f(M) = M**b / (1 - M)**a,        F(M) = int_0^M f(s) ds,

which degenerates at ``M = 0`` (for ``b > 0``) and blows up as ``M -> 1``.
Nutrient consumption ``g`` and biomass production ``h`` follow Monod kinetics.

All functions accept scalars or numpy arrays. Nothing is clamped: arguments
outside the domain raise :class:`~biofilm_fv.errors.DomainError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import DomainError, InvalidArgumentError

# below this M the primitives are summed as a power series; the closed forms
# lose all relative accuracy to cancellation near 0
_SERIES_CUTOFF = 0.25


@dataclass(frozen=True)
class ModelParams:
    d1: float = 4.1667
    d2: float = 4.2
    kappa1: float = 793.65
    kappa2: float = 0.067
    kappa3: float = 1.0
    kappa4: float = 0.4
    a: float = 2.0
    b: float = 1.0
    MD: float = 0.0
    SD: float = 1.0

    def __post_init__(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise InvalidArgumentError("diffusivities d1, d2 must be positive")
        if min(self.kappa1, self.kappa2, self.kappa3) < 0:
            raise InvalidArgumentError("kappa1, kappa2, kappa3 must be nonnegative")
        if not self.kappa4 > 0:
            raise InvalidArgumentError("kappa4 must be positive")
        if self.a < 1:
            raise InvalidArgumentError(f"exponent a must be >= 1, got {self.a}")
        if self.b < 0:
            raise InvalidArgumentError(f"exponent b must be >= 0, got {self.b}")
        if not 0 <= self.MD < 1:
            raise InvalidArgumentError(f"MD must lie in [0, 1), got {self.MD}")
        if self.SD != 1.0:
            raise InvalidArgumentError("the nutrient boundary value is fixed to 1")

    @classmethod
    def test1(cls, **overrides) -> "ModelParams":
        """Coefficients of the 1D convergence experiment, (a, b) = (2, 1)."""
        return replace(cls(), **overrides)

    @classmethod
    def test2(cls, **overrides) -> "ModelParams":
        """Coefficients of the 2D floc experiment, (a, b) = (4, 4)."""
        return replace(cls(a=4.0, b=4.0), **overrides)

    def with_(self, **overrides) -> "ModelParams":
        return replace(self, **overrides)

    @property
    def nonlinearity(self) -> "Nonlinearity":
        return _nonlinearity(self.a, self.b)


@lru_cache(maxsize=None)
def _nonlinearity(a, b):
    return Nonlinearity(a, b)


def _check_fraction(M, *, closed_upper=False):
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DomainError("biomass fraction must be finite")
    if np.any(M < 0):
        raise DomainError(f"biomass fraction below 0: min {M.min()!r}")
    if np.any(M > 1) or (not closed_upper and np.any(M >= 1)):
        raise DomainError(f"biomass fraction must be < 1: max {M.max()!r}")
    return M


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


class Nonlinearity:
    """f, its primitive F and the second primitive G for exponents (a, b).

    ``closed_form`` is one of ``"AB_2_1"``, ``"AB_4_4"`` or ``"Quadrature"``.
    G(M) = int_0^M F(s) ds is used for the entropy functionals.
    """

    def __init__(self, a: float, b: float):
        self.a = float(a)
        self.b = float(b)
        if (self.a, self.b) == (2.0, 1.0):
            self.closed_form = "AB_2_1"
        elif (self.a, self.b) == (4.0, 4.0):
            self.closed_form = "AB_4_4"
        else:
            self.closed_form = "Quadrature"
        # power series of (1 - s)**(-a): c_n = binom(n + a - 1, n), truncated
        # once c_n * cutoff**n drops below 1e-18
        c = [1.0]
        while c[-1] * _SERIES_CUTOFF ** (len(c) - 1) > 1e-18 or len(c) < 8:
            n = len(c)
            c.append(c[-1] * (n + self.a - 1) / n)
        c = np.array(c)
        n = np.arange(len(c))
        self._cF = c / (n + self.b + 1)
        self._cG = self._cF / (n + self.b + 2)

    def __repr__(self):
        return f"Nonlinearity(a={self.a:g}, b={self.b:g}, closed_form={self.closed_form!r})"

    def f(self, M):
        M = _check_fraction(M)
        return _out(M**self.b / (1.0 - M) ** self.a)

    def df(self, M):
        M = _check_fraction(M)
        a, b = self.a, self.b
        with np.errstate(divide="ignore"):
            lead = b * M ** (b - 1) if b != 0 else np.zeros_like(M)
        return _out(lead / (1.0 - M) ** a + a * M**b / (1.0 - M) ** (a + 1))

    def _series(self, coeffs, M, shift):
        # sum_n coeffs[n] * M**(n + b + shift)
        acc = np.zeros_like(M)
        for c in coeffs[::-1]:
            acc = acc * M + c
        return acc * M ** (self.b + shift)

    def F(self, M):
        M = _check_fraction(M)
        out = np.empty_like(M)
        small = M <= _SERIES_CUTOFF
        out[small] = self._series(self._cF, M[small], 1)
        x = M[~small]
        if self.closed_form == "AB_2_1":
            out[~small] = np.log1p(-x) + x / (1.0 - x)
        elif self.closed_form == "AB_4_4":
            out[~small] = (
                -(18 * x**2 - 30 * x + 13) / (3 * (x - 1) ** 3) + x + 4 * np.log1p(-x) - 13.0 / 3.0
            )
        else:
            out[~small] = [self.F_quadrature(xi) for xi in x]
        return _out(out)

    def G(self, M):
        """Second primitive: int_0^M F(s) ds."""
        M = _check_fraction(M)
        out = np.empty_like(M)
        small = M <= _SERIES_CUTOFF
        out[small] = self._series(self._cG, M[small], 2)
        x = M[~small]
        if self.closed_form == "AB_2_1":
            out[~small] = (x - 2.0) * np.log1p(-x) - 2.0 * x
        elif self.closed_form == "AB_4_4":
            lg = np.log1p(-x)
            num = (3 * x**4 - 56 * x**3 + 114 * x**2 - 60 * x
                   + (24 * x**3 - 108 * x**2 + 144 * x - 60) * lg)
            out[~small] = num / (6.0 * (1.0 - x) ** 2)
        else:
            out[~small] = [self._G_quadrature(xi) for xi in x]
        return _out(out)

    # Quadrature in v = log(1 - s) turns the 1/(1-s)**a singularity into a
    # smooth exponential: f(s) ds = -(1 - e^v)**b e^{(1-a) v} dv.
    def F_quadrature(self, M: float) -> float:
        M = float(_check_fraction(M))
        if M == 0.0:
            return 0.0
        a, b = self.a, self.b
        lo = math.log1p(-M)
        val, _ = integrate.quad(
            lambda v: (-math.expm1(v)) ** b * math.exp((1 - a) * v),
            lo, 0.0, epsabs=1e-12, epsrel=1e-13, limit=200,
        )
        return val

    def _G_quadrature(self, M: float) -> float:
        # int_0^M (M - s) f(s) ds
        a, b = self.a, self.b
        lo = math.log1p(-M)
        val, _ = integrate.quad(
            lambda v: (M - 1 + math.exp(v)) * (-math.expm1(v)) ** b * math.exp((1 - a) * v),
            lo, 0.0, epsabs=1e-12, epsrel=1e-13, limit=200,
        )
        return val


def g(S, M, params: ModelParams):
    """Monod nutrient consumption, always <= 0."""
    S = np.asarray(S, dtype=float)
    M = np.asarray(M, dtype=float)
    return _out(-params.kappa1 * S * M / (params.kappa4 + S))


def h(S, M, params: ModelParams):
    """Biomass production minus wastage; h >= -kappa2 * M."""
    S = np.asarray(S, dtype=float)
    M = np.asarray(M, dtype=float)
    return _out(params.kappa3 * S * M / (params.kappa4 + S) - params.kappa2 * M)


def dg_dS(S, M, params):
    S = np.asarray(S, dtype=float)
    return _out(-params.kappa1 * params.kappa4 * np.asarray(M, dtype=float) / (params.kappa4 + S) ** 2)


def dg_dM(S, M, params):
    S = np.asarray(S, dtype=float)
    return _out(-params.kappa1 * S / (params.kappa4 + S) + 0.0 * np.asarray(M, dtype=float))


def dh_dS(S, M, params):
    S = np.asarray(S, dtype=float)
    return _out(params.kappa3 * params.kappa4 * np.asarray(M, dtype=float) / (params.kappa4 + S) ** 2)


def dh_dM(S, M, params):
    S = np.asarray(S, dtype=float)
    return _out(params.kappa3 * S / (params.kappa4 + S) - params.kappa2 + 0.0 * np.asarray(M, dtype=float))


def f(M, params: ModelParams):
    return params.nonlinearity.f(M)


def F(M, params: ModelParams):
    return params.nonlinearity.F(M)


def df_dM(M, params: ModelParams):
    return params.nonlinearity.df(M)


def dF_dM(M, params: ModelParams):
    return params.nonlinearity.f(M)


def kappa_star(params: ModelParams):
    """Nutrient level above which h > 0; None when h is never positive."""
    if params.kappa3 <= params.kappa2:
        return None
    return params.kappa2 * params.kappa4 / (params.kappa3 - params.kappa2)


# --- entropy functionals -----------------------------------------------------

def _require_positive_MD(params):
    if not 0 < params.MD < 1:
        raise DomainError(f"entropy functionals need 0 < MD < 1, got MD={params.MD}")


def Z(M, params: ModelParams):
    """Z(M) = int_{MD}^M F(s) ds - F(MD) (M - MD); convex, zero at M = MD."""
    _require_positive_MD(params)
    nl = params.nonlinearity
    M = _check_fraction(M)
    MD = params.MD
    return _out(nl.G(M) - nl.G(MD) - nl.F(MD) * (M - MD))


def Z_eps(M, eps: float, params: ModelParams):
    """Regularised entropy density with a Boltzmann term.

    Its non-logarithmic part integrates F from 0 instead of from MD, so
    ``Z_eps(M, 0) - Z(M) == G(MD)`` is a constant offset.
    """
    _require_positive_MD(params)
    nl = params.nonlinearity
    M = _check_fraction(M)
    MD = params.MD
    with np.errstate(divide="ignore", invalid="ignore"):
        boltz = np.where(M > 0, M * np.log(np.where(M > 0, M, 1.0) / MD), 0.0) + MD - M
    return _out(nl.G(M) - nl.F(MD) * (M - MD) + eps * boltz)


def entropy_variable(M, eps: float, params: ModelParams):
    """W = F(M) - F(MD) + eps log(M / MD), i.e. the derivative of Z_eps."""
    _require_positive_MD(params)
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    M = np.asarray(M, dtype=float)
    if np.any(M <= 0) or np.any(M >= 1) or not np.all(np.isfinite(M)):
        raise DomainError("entropy variable needs 0 < M < 1")
    nl = params.nonlinearity
    return _out(nl.F(M) - nl.F(params.MD) + eps * np.log(M / params.MD))


def entropy_inverse(W: float, eps: float, params: ModelParams, tol: float = 1e-14) -> float:
    """The unique M in (0, 1) with entropy_variable(M, eps) == W.

    Newton's method safeguarded by a bisection bracket on the strictly
    increasing map.
    """
    _require_positive_MD(params)
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    W = float(W)
    if not math.isfinite(W):
        raise InvalidArgumentError("W must be finite")
    nl = params.nonlinearity
    MD = params.MD
    FD = float(nl.F(MD))

    def phi(m):
        return float(nl.F(m)) - FD + eps * math.log(m / MD) - W

    if W == 0.0:
        return MD
    if W > 0:
        lo, hi = MD, None
        gap = 1.0 - MD
        while hi is None:
            gap *= 0.5
            cand = 1.0 - gap
            if cand >= 1.0:
                return math.nextafter(1.0, 0.0)
            if phi(cand) >= 0:
                hi = cand
            else:
                lo = cand
    else:
        lo, hi = None, MD
        cand = MD
        while lo is None:
            cand *= 0.5
            if cand == 0.0:
                return 5e-324
            if phi(cand) <= 0:
                lo = cand
            else:
                hi = cand

    m = 0.5 * (lo + hi)
    for _ in range(200):
        r = phi(m)
        if r == 0.0:
            return m
        if r > 0:
            hi = m
        else:
            lo = m
        slope = float(nl.f(m)) + eps / m
        step = m - r / slope
        m_new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(m_new - m) <= tol * max(m, 1e-300) or hi - lo <= tol * hi:
            return m_new
        m = m_new
    return m
