"""Gaussian kernels and safeguarded 1-D root finding / maximization.

Scalar contracts (``find_root``, ``maximize_1d``) wrap scipy's Brent
routines behind the sign and pre-scan checks the optimizers rely on. The
``*_vec`` helpers run the same algorithms elementwise on numpy arrays so the
grid solvers can optimize thousands of nodes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from .errors import MaxIterations, NonPositiveNu, NoSignChange

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def norm_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return _out(special.ndtr(x))


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _out(INV_SQRT_2PI * np.exp(-0.5 * x * x))


def psi_std(x):
    """phi(x) + x Phi(x), the mean of (x + xi)_+ for standard normal xi."""
    x = np.asarray(x, dtype=float)
    return _out(INV_SQRT_2PI * np.exp(-0.5 * x * x) + x * special.ndtr(x))


def psi(mu, nu):
    """Call expectation E[(mu + nu xi)_+] = nu phi(mu/nu) + mu Phi(mu/nu)."""
    nu_arr = np.asarray(nu, dtype=float)
    if np.any(~(nu_arr > 0)):
        raise NonPositiveNu(f"nu must be positive, got {nu!r}")
    mu = np.asarray(mu, dtype=float)
    x = mu / nu_arr
    return _out(nu_arr * INV_SQRT_2PI * np.exp(-0.5 * x * x) + mu * special.ndtr(x))


def find_root(f: Callable[[float], float], bracket: Bracket, tol: float = 1e-12,
              maxiter: int = 200) -> float:
    """Brent root in ``bracket``; raises NoSignChange if f does not change sign."""
    lo, hi = bracket.lo, bracket.hi
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise NoSignChange(f"f({lo})={flo:.3g} and f({hi})={fhi:.3g} share a sign")
    try:
        return optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=maxiter)
    except RuntimeError as exc:
        raise MaxIterations(str(exc)) from None


def maximize_1d(f: Callable[[float], float], bracket: Bracket, tol: float = 1e-10,
                n_grid: int = 64, n_refine: int = 3, maxiter: int = 500) -> tuple[float, float]:
    """Grid pre-scan on ``n_grid`` nodes, then bounded Brent refinement of the best cells.

    Refining the top local maxima of the scan (not only the best node) keeps
    the search from locking onto a secondary bump.
    """
    n_grid = max(int(n_grid), 64)
    xs = np.linspace(bracket.lo, bracket.hi, n_grid)
    fs = np.array([f(x) for x in xs])
    interior = np.flatnonzero((fs[1:-1] >= fs[:-2]) & (fs[1:-1] >= fs[2:])) + 1
    candidates = list(interior)
    if fs[0] >= fs[1]:
        candidates.append(0)
    if fs[-1] >= fs[-2]:
        candidates.append(n_grid - 1)
    candidates = sorted(candidates, key=lambda i: -fs[i])[:n_refine]
    best_x, best_f = xs[int(np.argmax(fs))], float(np.max(fs))
    for i in candidates:
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, n_grid - 1)]
        res = optimize.minimize_scalar(lambda x: -f(x), bounds=(lo, hi), method="bounded",
                                       options={"xatol": tol, "maxiter": maxiter})
        if not res.success:
            raise MaxIterations(res.message)
        if -res.fun > best_f:
            best_x, best_f = float(res.x), float(-res.fun)
    return float(best_x), float(best_f)


# ---------------------------------------------------------------------------
# elementwise array versions


def bisect_vec(f: Callable[[np.ndarray], np.ndarray], lo, hi, iters: int = 100) -> np.ndarray:
    """Elementwise bisection; ``f(lo)`` and ``f(hi)`` must differ in sign per element."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.copy(), hi.copy()
    positive_at_lo = f(lo) > 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        same = (f(mid) > 0) == positive_at_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(lo))):
            break
    return 0.5 * (lo + hi)


def golden_max_vec(f: Callable[[np.ndarray], np.ndarray], lo, hi, iters: int = 80) -> np.ndarray:
    """Elementwise golden-section search for a maximum inside [lo, hi]."""
    a, b = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    a, b = a.copy(), b.copy()
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - GOLDEN * (b - a)
        new_d = a + GOLDEN * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        x_eval = np.where(left, new_c, new_d)
        f_eval = f(x_eval)
        fc, fd = np.where(left, f_eval, fd), np.where(left, fc, f_eval)
        c, d = c_next, d_next
    return 0.5 * (a + b)


def grid_max_vec(f: Callable[[np.ndarray], np.ndarray], lo, hi, n_grid: int = 64,
                 iters: int = 80) -> np.ndarray:
    """Pre-scan on a uniform grid per element, then golden refinement around the best node.

    ``f`` receives arrays shaped ``(n_grid, *shape)`` during the scan and
    ``shape`` during refinement.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    lo, hi = np.broadcast_arrays(lo, hi)
    s = np.linspace(0.0, 1.0, n_grid).reshape((n_grid,) + (1,) * lo.ndim)
    xs = lo + s * (hi - lo)
    i = np.argmax(f(xs), axis=0)
    step = (hi - lo) / (n_grid - 1)
    a = np.maximum(lo, lo + (i - 1) * step)
    b = np.minimum(hi, lo + (i + 1) * step)
    return golden_max_vec(f, a, b, iters)
