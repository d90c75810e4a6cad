"""Spectral speed quantities built from the kernel's moment generating function.

    G(lam)   = (M(lam) - 1 + R) / lam
    c_R      = inf_{0 < lam < lam_hat} G(lam)
    lam_c(c) = smallest positive root of G(lam) = c

G blows up at both ends of (0, lam_hat) and lam * G'(lam) changes sign
exactly once (lam M' - M is increasing), so G is unimodal and both the
minimum and the smallest root are well posed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NoRoot, SearchFailure
from .kernels import DispersalKernel, lambda_hat, mgf, mgf_derivative

DEFAULT_LAMBDA_CAP = 20.0
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
C_R_TIE = 1e-12


@dataclass(frozen=True)
class SpeedProblem:
    kernel: DispersalKernel
    R: float
    lambda_cap: float = DEFAULT_LAMBDA_CAP

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError(f"R must be positive, got {self.R}")
        lhat = lambda_hat(self.kernel)
        cap = min(0.999 * lhat, self.lambda_cap)
        if self.kernel.kind == "gaussian":
            # keep exp(s^2 lam^2 / 2) finite
            cap = min(cap, 37.0 / self.kernel.s)
        object.__setattr__(self, "lambda_cap", cap)


class SpeedResult(NamedTuple):
    value: float
    argmin: float


def G(problem: SpeedProblem, lam: float) -> float:
    if not 0.0 < lam <= problem.lambda_cap:
        raise DomainError(f"lambda={lam} outside (0, {problem.lambda_cap}]")
    return (mgf(problem.kernel, lam) - 1.0 + problem.R) / lam


def _dG_numerator(problem: SpeedProblem, lam: float) -> float:
    # lam^2 G'(lam); increasing in lam
    return lam * mgf_derivative(problem.kernel, lam) - (mgf(problem.kernel, lam) - 1.0 + problem.R)


def golden_section(f, a: float, b: float, rtol: float = 1e-12, max_iter: int = 500):
    """Minimize a unimodal ``f`` on [a, b]; return the final bracket."""
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= rtol * 0.5 * (abs(a) + abs(b)):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    return a, b


def bisect(f, a: float, b: float, xtol: float = 0.0, max_iter: int = 200) -> float:
    """Root of ``f`` on [a, b] with f(a), f(b) of opposite signs."""
    fa = f(a)
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        if m <= a or m >= b or b - a <= xtol:
            break
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _bracket(problem: SpeedProblem) -> tuple[float, float]:
    lam_prev, lam = 0.0, 1e-4
    g_prev = G(problem, lam)
    while True:
        nxt = lam * 2.0
        if nxt >= problem.lambda_cap:
            nxt = problem.lambda_cap
        g_next = G(problem, nxt)
        if g_next > g_prev:
            return (lam_prev if lam_prev > 0 else lam * 0.5), nxt
        if nxt == problem.lambda_cap:
            raise SearchFailure(
                f"G still decreasing at the search cap lambda={nxt:g}; "
                f"infimum is approached at the boundary", boundary_value=g_next)
        lam_prev, lam, g_prev = lam, nxt, g_next


def c_R(problem: SpeedProblem) -> SpeedResult:
    """Minimum of G and its minimizer.

    Bracketing by geometric expansion from 1e-4, golden-section refinement,
    then the minimizer is polished on the sign change of G' so it is accurate
    to rounding rather than to the square root of it.
    """
    a, b = _bracket(problem)
    a, b = golden_section(lambda x: G(problem, x), a, b)
    lo, hi = max(a * (1 - 1e-6), 1e-300), min(b * (1 + 1e-6), problem.lambda_cap)
    if _dG_numerator(problem, lo) < 0 < _dG_numerator(problem, hi):
        lam = bisect(lambda x: _dG_numerator(problem, x), lo, hi)
    else:
        lam = 0.5 * (a + b)
    return SpeedResult(G(problem, lam), lam)


def lambda_c(problem: SpeedProblem, c: float, c_r: SpeedResult | None = None) -> float:
    """Smallest positive root of G(lam) = c."""
    if c_r is None:
        c_r = c_R(problem)
    if c < c_r.value - C_R_TIE:
        raise NoRoot(f"speed c={c:.12g} is below c_R={c_r.value:.12g}; G(lambda)=c has no root",
                     c_R=c_r.value)
    if c <= c_r.value + C_R_TIE:
        return c_r.argmin
    hi = c_r.argmin
    lo = hi
    while G(problem, lo) <= c:
        lo *= 0.5
    root = bisect(lambda x: G(problem, x) - c, lo, hi)
    return root


def spreading_rate(model) -> float:
    rho = model.spreading_rate
    if not rho > 0:
        raise DomainError(f"model {model.name} has non-positive spreading rate {rho}")
    return rho


def c_star(model, kernel: DispersalKernel, lambda_cap: float = DEFAULT_LAMBDA_CAP) -> float:
    """Minimal speed: c_R evaluated with R equal to the model's linear spreading rate."""
    return c_R(SpeedProblem(kernel, spreading_rate(model), lambda_cap)).value


def weight_identity(problem: SpeedProblem, c: float, lam: float) -> float:
    """M(lam) - 1 - c lam + R; zero when e^{-lam z} solves N[w] + c w' + R w = 0."""
    return mgf(problem.kernel, lam) - 1.0 - c * lam + problem.R


def g_curve(problem: SpeedProblem, num: int = 50, lam_max: float | None = None):
    """Samples (lam, G(lam)) on a uniform grid over (0, lam_max]."""
    if lam_max is None:
        lam_max = min(problem.lambda_cap, 3.0 * c_R(problem).argmin)
    lam = np.linspace(lam_max / num, lam_max, num)
    return lam, np.array([G(problem, x) for x in lam])
