"""Dispersal kernels, truncated grids and the discrete convolution J*u.

A kernel is a symmetric probability density on the real line.  Four
families are supported: ``gaussian``, ``laplace``, ``compact_bump`` and
``tabulated`` (two-column text, renormalized to unit mass on load).

Two convolution paths are provided.  The direct path sums the kernel
stencil against the ghost-padded field and is the one used for time
stepping, because a sum of nonnegative products keeps full relative
accuracy even where the field is many orders of magnitude below one (the
leading edge of a front).  The transform path is faster on long stencils
but only has absolute accuracy relative to the field's maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import scipy.fft
from scipy import integrate

from .errors import DomainError, GridMismatch, QuadratureDivergence

TRUNCATION_LEVEL = 1e-16
MASS_TOLERANCE = 1e-10
KINDS = ("gaussian", "laplace", "compact_bump", "tabulated")

# Doubling the window must change a converged MGF by less than this.
DIVERGENCE_THRESHOLD = 0.01

FarField = Union[float, np.ndarray]


def _bump_profile(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


# Integral of exp(-1/(1-x^2)) over (-1, 1).
_BUMP_MASS = 2.0 * integrate.quad(lambda x: math.exp(-1.0 / (1.0 - x * x)), 0.0, 1.0,
                                  epsabs=1e-14, epsrel=1e-13, limit=200)[0]


@dataclass(frozen=True, eq=False)
class DispersalKernel:
    """Symmetric unit-mass dispersal kernel.

    Use the constructors :meth:`gaussian`, :meth:`laplace`,
    :meth:`compact_bump`, :meth:`tabulated` or :meth:`from_file` rather than
    instantiating directly.
    """

    kind: str
    s: float | None = None
    alpha: float | None = None
    radius: float | None = None
    table_y: np.ndarray | None = field(default=None, repr=False)
    table_J: np.ndarray | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- constructors -----------------------------------------------------

    @classmethod
    def gaussian(cls, s: float = 1.0) -> "DispersalKernel":
        if not s > 0:
            raise DomainError(f"gaussian kernel needs s > 0, got {s}")
        return cls("gaussian", s=float(s))

    @classmethod
    def laplace(cls, alpha: float = 1.0) -> "DispersalKernel":
        if not alpha > 0:
            raise DomainError(f"laplace kernel needs alpha > 0, got {alpha}")
        return cls("laplace", alpha=float(alpha))

    @classmethod
    def compact_bump(cls, radius: float = 1.0) -> "DispersalKernel":
        if not radius > 0:
            raise DomainError(f"compact_bump kernel needs radius > 0, got {radius}")
        return cls("compact_bump", radius=float(radius))

    @classmethod
    def tabulated(cls, y, J) -> "DispersalKernel":
        """Kernel from samples on a symmetric grid.

        The samples are symmetrized and rescaled so the trapezoidal mass is 1.
        """
        y = np.asarray(y, dtype=float)
        J = np.asarray(J, dtype=float)
        if y.ndim != 1 or y.shape != J.shape or y.size < 3:
            raise DomainError("tabulated kernel needs matching 1-D arrays with >= 3 samples")
        if np.any(np.diff(y) <= 0):
            raise DomainError("tabulated abscissae must be strictly increasing")
        scale = max(abs(y[0]), abs(y[-1]))
        if np.max(np.abs(y + y[::-1])) > 1e-9 * scale:
            raise DomainError("tabulated abscissae must be symmetric about 0")
        if np.any(J < 0) or not np.all(np.isfinite(J)):
            raise DomainError("tabulated kernel values must be finite and nonnegative")
        y = 0.5 * (y - y[::-1])
        J = 0.5 * (J + J[::-1])
        mass = np.trapezoid(J, y)
        if not mass > 0:
            raise DomainError("tabulated kernel has zero mass")
        y.setflags(write=False)
        Jn = J / mass
        Jn.setflags(write=False)
        return cls("tabulated", table_y=y, table_J=Jn)

    @classmethod
    def from_file(cls, path: str | Path) -> "DispersalKernel":
        data = np.loadtxt(path, comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise DomainError(f"{path}: expected two columns (y, J), got {data.shape[1]}")
        return cls.tabulated(data[:, 0], data[:, 1])

    # -- basic properties ---------------------------------------------------

    @property
    def truncation_radius(self) -> float:
        """Smallest radius beyond which J < 1e-16."""
        if self.kind == "gaussian":
            s = self.s
            peak = 1.0 / (s * math.sqrt(2.0 * math.pi))
            if peak <= TRUNCATION_LEVEL:
                return 0.0
            return s * math.sqrt(2.0 * math.log(peak / TRUNCATION_LEVEL))
        if self.kind == "laplace":
            peak = 0.5 * self.alpha
            if peak <= TRUNCATION_LEVEL:
                return 0.0
            return math.log(peak / TRUNCATION_LEVEL) / self.alpha
        if self.kind == "compact_bump":
            return self.radius
        big = np.nonzero(self.table_J >= TRUNCATION_LEVEL)[0]
        if big.size == 0:
            return 0.0
        # next abscissa outward, where interpolation has fallen below the level
        i = min(big[-1] + 1, self.table_y.size - 1)
        return float(self.table_y[i])

    @property
    def mgf_form(self) -> str:
        return "analytic" if self.kind in ("gaussian", "laplace") else "quadrature"

    @property
    def spec(self) -> dict:
        """Plain-data description, suitable for manifests."""
        if self.kind == "gaussian":
            return {"kind": "gaussian", "s": self.s}
        if self.kind == "laplace":
            return {"kind": "laplace", "alpha": self.alpha}
        if self.kind == "compact_bump":
            return {"kind": "compact_bump", "radius": self.radius}
        return {"kind": "tabulated", "samples": int(self.table_y.size),
                "extent": float(self.table_y[-1])}

    def __call__(self, y):
        return evaluate(self, y)

    # -- discrete stencil -----------------------------------------------------

    def weights(self, dx: float) -> np.ndarray:
        """Convolution weights J(k dx) dx, k = -g..g, rescaled to sum to 1.

        Exact unit mass makes constants fixed points of the discrete
        operator and keeps the weights a probability vector, which the
        discrete relative-entropy argument relies on.
        """
        key = ("weights", float(dx))
        w = self._cache.get(key)
        if w is None:
            g = ghost_nodes(self, dx)
            y = dx * np.arange(-g, g + 1)
            w = evaluate(self, y) * dx
            w = 0.5 * (w + w[::-1])
            w /= w.sum()
            w.setflags(write=False)
            self._cache[key] = w
        return w


def ghost_nodes(kernel: DispersalKernel, dx: float) -> int:
    """Number of grid nodes needed to cover the truncation radius."""
    return max(1, int(math.ceil(kernel.truncation_radius / dx - 1e-12)))


# -- evaluation -----------------------------------------------------------


def evaluate(kernel: DispersalKernel, y):
    """Kernel density J(y); zero outside the truncation window."""
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    if kernel.kind == "gaussian":
        s = kernel.s
        out = np.exp(-0.5 * (a / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    elif kernel.kind == "laplace":
        out = 0.5 * kernel.alpha * np.exp(-kernel.alpha * a)
    elif kernel.kind == "compact_bump":
        r = kernel.radius
        out = _bump_profile(a / r) / (_BUMP_MASS * r)
    else:
        out = np.interp(a, kernel.table_y, kernel.table_J, left=0.0, right=0.0)
    out = np.where(a > kernel.truncation_radius, 0.0, out)
    return out if out.ndim else float(out)


# -- moment generating function -------------------------------------------


def _romberg_half_line(f, width: float, rtol: float = 1e-14, k_min: int = 6,
                       k_max: int = 22) -> float:
    """Romberg-extrapolated trapezoid rule for the integral of f over [0, width]."""
    prev_row = None
    prev_best = None
    for k in range(k_min, k_max + 1):
        n = 2 ** k
        y = np.linspace(0.0, width, n + 1)
        fy = f(y)
        h = width / n
        trap = h * (fy.sum() - 0.5 * (fy[0] + fy[-1]))
        row = [trap]
        if prev_row is not None:
            for j, prev in enumerate(prev_row):
                factor = 4.0 ** (j + 1)
                row.append((factor * row[j] - prev) / (factor - 1.0))
        best = row[-1]
        if prev_best is not None and abs(best - prev_best) <= rtol * abs(best):
            return float(best)
        prev_row, prev_best = row, best
        if len(prev_row) > 6:
            prev_row = prev_row[:6]
    return float(prev_best)


def _quadrature_mgf(kernel: DispersalKernel, lam: float, max_doublings: int = 10) -> float:
    """M(lam) = 2 * int_0^inf J(y) cosh(lam y) dy by window doubling."""
    if kernel.kind == "tabulated":
        width = float(kernel.table_y[-1])
    else:
        width = max(kernel.truncation_radius, 1.0)

    def integrand(y):
        return _density_times_cosh(kernel, y, lam)

    value = _romberg_half_line(integrand, width)
    if kernel.kind == "tabulated":
        # a table has no mass past its extent; compare against half the window instead
        half = _romberg_half_line(integrand, 0.5 * width)
        if not math.isfinite(value) or abs(value - half) > DIVERGENCE_THRESHOLD * abs(value):
            raise QuadratureDivergence(
                f"MGF at lambda={lam} changes by more than {DIVERGENCE_THRESHOLD:g} between "
                f"half and full table extent")
    change = math.inf
    for _ in range(max_doublings):
        if kernel.kind in ("tabulated", "compact_bump"):
            break  # no mass beyond the support
        width *= 2.0
        new = _romberg_half_line(integrand, width)
        if not math.isfinite(new):
            raise QuadratureDivergence(f"MGF overflowed at lambda={lam}")
        change = abs(new - value) / abs(new)
        value = new
        if change < 1e-15:
            break
    else:
        if change > DIVERGENCE_THRESHOLD:
            raise QuadratureDivergence(
                f"MGF at lambda={lam} still changes by {change:.3g} after "
                f"{max_doublings} window doublings")
    if not math.isfinite(value):
        raise QuadratureDivergence(f"MGF overflowed at lambda={lam}")
    return value


def _density_times_cosh(kernel: DispersalKernel, y, lam: float):
    """2 J(y) cosh(lam y) for y >= 0, without the truncation cutoff."""
    if kernel.kind == "gaussian":
        s = kernel.s
        log_j = -0.5 * (y / s) ** 2 - math.log(s * math.sqrt(2.0 * math.pi))
    elif kernel.kind == "laplace":
        log_j = math.log(0.5 * kernel.alpha) - kernel.alpha * y
    else:
        return 2.0 * evaluate(kernel, y) * np.cosh(lam * y)
    # cosh in log space: the window may reach lam * y > 700
    return np.exp(log_j + lam * y) * (1.0 + np.exp(-2.0 * lam * y))


def mgf(kernel: DispersalKernel, lam: float, method: str = "auto") -> float:
    """Moment generating function M(lam) = int J(y) e^{lam y} dy.

    ``method`` is ``"auto"`` (closed form when available), ``"analytic"`` or
    ``"quadrature"``.
    """
    lam = float(lam)
    if lam < 0:
        raise DomainError(f"mgf needs lambda >= 0, got {lam}")
    lhat = lambda_hat(kernel)
    if lam >= lhat:
        raise DomainError(f"lambda={lam} is at or beyond lambda_hat={lhat}")
    if lam == 0.0:
        return 1.0
    if method == "auto":
        method = kernel.mgf_form
    if method == "analytic":
        if kernel.kind == "gaussian":
            return math.exp(0.5 * (kernel.s * lam) ** 2)
        if kernel.kind == "laplace":
            a2 = kernel.alpha ** 2
            return a2 / (a2 - lam * lam)
        raise DomainError(f"no closed-form MGF for {kernel.kind} kernels")
    if method != "quadrature":
        raise ValueError(f"unknown mgf method {method!r}")
    key = ("mgf", lam)
    value = kernel._cache.get(key)
    if value is None:
        value = _quadrature_mgf(kernel, lam)
        kernel._cache[key] = value
    return value


def mgf_derivative(kernel: DispersalKernel, lam: float) -> float:
    """M'(lam) = int y J(y) e^{lam y} dy."""
    if kernel.kind == "gaussian":
        s2 = kernel.s ** 2
        return s2 * lam * math.exp(0.5 * s2 * lam * lam)
    if kernel.kind == "laplace":
        a2 = kernel.alpha ** 2
        return 2.0 * a2 * lam / (a2 - lam * lam) ** 2
    width = float(kernel.truncation_radius)
    return _romberg_half_line(lambda y: 2.0 * evaluate(kernel, y) * y * np.sinh(lam * y),
                              width)


def lambda_hat(kernel: DispersalKernel, cap: float = 64.0) -> float:
    """Abscissa of convergence of the MGF (possibly +inf)."""
    if kernel.kind in ("gaussian", "compact_bump"):
        return math.inf
    if kernel.kind == "laplace":
        return kernel.alpha
    key = ("lambda_hat", cap)
    if key in kernel._cache:
        return kernel._cache[key]
    # keep cosh(lam * extent) finite
    cap = min(cap, 700.0 / float(kernel.table_y[-1]))
    result = math.inf
    lam = 0.5
    while lam <= cap:
        try:
            _quadrature_mgf(kernel, lam)
        except QuadratureDivergence:
            result = lam
            break
        lam *= 2.0
    kernel._cache[key] = result
    return result


def mass(kernel: DispersalKernel) -> float:
    """Trapezoid/Romberg quadrature of J over its truncation window."""
    width = kernel.truncation_radius
    return _romberg_half_line(lambda y: 2.0 * evaluate(kernel, y), width)


# -- grid -------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [-L, L] with an odd node count centred at 0."""

    L: float
    dx: float
    n: int
    g: int

    @classmethod
    def build(cls, L: float, dx: float, kernel: DispersalKernel | None = None,
              ghost: int | None = None) -> "Grid":
        if not (L > 0 and dx > 0):
            raise DomainError(f"grid needs L > 0 and dx > 0, got L={L}, dx={dx}")
        half = int(round(L / dx))
        if half < 1:
            raise DomainError("grid has fewer than three nodes")
        if ghost is None:
            ghost = ghost_nodes(kernel, dx) if kernel is not None else 1
        # derivative stencils reach three nodes out
        ghost = max(int(ghost), 3)
        return cls(L=half * dx, dx=float(dx), n=2 * half + 1, g=ghost)

    @property
    def z(self) -> np.ndarray:
        half = (self.n - 1) // 2
        return self.dx * np.arange(-half, half + 1)

    @property
    def center(self) -> int:
        return (self.n - 1) // 2

    def ghost_z(self, side: str) -> np.ndarray:
        """Abscissae of the ghost nodes, in increasing order."""
        k = np.arange(1, self.g + 1)
        if side == "left":
            return -self.L - self.dx * k[::-1]
        return self.L + self.dx * k

    def check_kernel(self, kernel: DispersalKernel) -> None:
        if self.g < ghost_nodes(kernel, self.dx):
            raise GridMismatch(
                f"ghost width {self.g} * dx = {self.g * self.dx:g} does not cover the "
                f"truncation radius {kernel.truncation_radius:g}")


# -- convolution -------------------------------------------------------------


def _ghost_block(value, g: int, lead: tuple[int, ...]) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.ndim == 0 or v.shape[-1] != g:
        v = np.broadcast_to(v[..., None] if v.ndim else v, lead + (g,))
    return np.broadcast_to(v, lead + (g,))


def pad(field: np.ndarray, grid: Grid, far_field) -> np.ndarray:
    """Extend ``field`` by ``grid.g`` ghost nodes on each side.

    ``far_field`` is a pair ``(left, right)``.  Each entry is either a
    constant (broadcast over leading axes) or an array whose last axis has
    length ``grid.g`` listing ghost values in increasing z.
    """
    left, right = far_field
    lead = field.shape[:-1]
    gl = _ghost_block(left, grid.g, lead)
    gr = _ghost_block(right, grid.g, lead)
    return np.concatenate([gl, field, gr], axis=-1)


def _direct(padded: np.ndarray, w: np.ndarray, n: int, g: int) -> np.ndarray:
    gw = (w.size - 1) // 2
    start = g - gw
    if padded.ndim == 1:
        return np.convolve(padded[start:start + n + 2 * gw], w, mode="valid")
    out = np.empty(padded.shape[:-1] + (n,))
    for idx in np.ndindex(padded.shape[:-1]):
        out[idx] = np.convolve(padded[idx][start:start + n + 2 * gw], w, mode="valid")
    return out


def _transform(padded: np.ndarray, w: np.ndarray, n: int, g: int) -> np.ndarray:
    gw = (w.size - 1) // 2
    size = scipy.fft.next_fast_len(padded.shape[-1] + w.size - 1, real=True)
    fa = scipy.fft.rfft(padded, size, axis=-1)
    fw = scipy.fft.rfft(w, size)
    full = scipy.fft.irfft(fa * fw, size, axis=-1)
    # full[k] = sum_j w[j] padded[k - j]; output node i sits at padded index g + i
    return full[..., g + gw:g + gw + n]


def convolve_padded(kernel: DispersalKernel, padded: np.ndarray, grid: Grid,
                    method: str = "direct") -> np.ndarray:
    """J*u for a field already extended by ``grid.g`` ghost nodes per side."""
    w = kernel.weights(grid.dx)
    if method == "direct":
        return _direct(padded, w, grid.n, grid.g)
    if method == "fft":
        return _transform(padded, w, grid.n, grid.g)
    raise ValueError(f"unknown convolution method {method!r}")


def convolve(kernel: DispersalKernel, field, grid: Grid, far_field=(0.0, 0.0),
             method: str = "direct") -> np.ndarray:
    """Discrete J*u on ``grid``, the field extended by ``far_field`` outside.

    ``field`` may carry leading axes (one row per component).  ``method`` is
    ``"direct"`` (stencil summation) or ``"fft"``.
    """
    grid.check_kernel(kernel)
    u = np.asarray(field, dtype=float)
    if u.shape[-1] != grid.n:
        raise GridMismatch(f"field has {u.shape[-1]} nodes, grid has {grid.n}")
    return convolve_padded(kernel, pad(u, grid, far_field), grid, method)


def kernel_from_spec(spec: dict) -> DispersalKernel:
    """Build a kernel from a plain dict such as ``{"kind": "gaussian", "s": 1}``."""
    kind = spec.get("kind")
    if kind == "gaussian":
        return DispersalKernel.gaussian(spec.get("s", 1.0))
    if kind == "laplace":
        return DispersalKernel.laplace(spec.get("alpha", 1.0))
    if kind == "compact_bump":
        return DispersalKernel.compact_bump(spec.get("radius", 1.0))
    if kind == "tabulated":
        if "path" in spec:
            return DispersalKernel.from_file(spec["path"])
        return DispersalKernel.tabulated(spec["y"], spec["J"])
    raise DomainError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")
