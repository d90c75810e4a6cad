import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nlwaves.errors import DomainError, GridMismatch
from nlwaves.kernels import (DispersalKernel, Grid, convolve, evaluate, ghost_nodes,
                             kernel_from_spec, lambda_hat, mass, mgf)

BUILTINS = [DispersalKernel.gaussian(1.0), DispersalKernel.gaussian(0.5),
            DispersalKernel.laplace(2.0), DispersalKernel.compact_bump(1.0),
            DispersalKernel.compact_bump(3.0)]


def density(kernel):
    """Untruncated closed-form density, independent of the library."""
    if kernel.kind == "gaussian":
        s = kernel.s
        return lambda y, lam=0.0: math.exp(-0.5 * (y / s) ** 2 + lam * y) / (s * math.sqrt(2 * math.pi))
    if kernel.kind == "laplace":
        a = kernel.alpha
        return lambda y, lam=0.0: 0.5 * a * math.exp(-a * abs(y) + lam * y)
    r = kernel.radius
    bump = lambda y: math.exp(-1 / (1 - (y / r) ** 2)) if abs(y) < r else 0.0
    norm = integrate.quad(bump, -r, r, epsabs=0, epsrel=1e-13)[0]
    return lambda y, lam=0.0: bump(y) * math.exp(lam * y) / norm


def quad_mgf(kernel, lam):
    f = density(kernel)
    g = lambda y: f(y, lam)
    if kernel.kind == "compact_bump":
        return integrate.quad(g, -kernel.radius, kernel.radius, epsabs=0, epsrel=1e-13)[0]
    return sum(integrate.quad(g, a, b, epsabs=0, epsrel=1e-13, limit=400)[0]
               for a, b in ((-np.inf, 0.0), (0.0, np.inf)))


def test_gaussian_peak():
    assert evaluate(DispersalKernel.gaussian(1.0), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi),
                                                                         rel=1e-14)


def test_laplace_peak():
    assert evaluate(DispersalKernel.laplace(2.0), 0.0) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("k", BUILTINS, ids=lambda k: str(k.spec))
def test_zero_beyond_truncation(k):
    assert evaluate(k, 2 * k.truncation_radius) == 0.0
    assert evaluate(k, -2 * k.truncation_radius) == 0.0


@pytest.mark.parametrize("k", BUILTINS, ids=lambda k: str(k.spec))
def test_truncation_level(k):
    if k.kind != "compact_bump":
        assert evaluate(k, k.truncation_radius * (1 - 1e-9)) == pytest.approx(1e-16, rel=1e-6)


@pytest.mark.parametrize("k", BUILTINS, ids=lambda k: str(k.spec))
def test_mass_and_symmetry(k):
    assert abs(mass(k) - 1.0) <= 1e-10
    y = np.linspace(-k.truncation_radius * 1.2, k.truncation_radius * 1.2, 2001)
    J = evaluate(k, y)
    assert np.all(J >= 0)
    assert np.max(np.abs(J - evaluate(k, -y))) <= 1e-14


@pytest.mark.parametrize("k", BUILTINS, ids=lambda k: str(k.spec))
def test_mgf_at_zero(k):
    assert mgf(k, 0.0) == 1.0


def test_mgf_closed_forms_against_quadrature():
    lap = DispersalKernel.laplace(2.0)
    assert mgf(lap, 1.0) == pytest.approx(4 / 3, rel=1e-15)
    assert quad_mgf(lap, 1.0) == pytest.approx(4 / 3, rel=1e-10)
    g = DispersalKernel.gaussian(1.0)
    assert mgf(g, 2.0) == pytest.approx(math.exp(2.0), rel=1e-15)
    assert quad_mgf(g, 2.0) == pytest.approx(math.exp(2.0), rel=1e-10)


@pytest.mark.parametrize("k", [DispersalKernel.gaussian(1.0), DispersalKernel.laplace(2.0)],
                         ids=["gaussian", "laplace"])
def test_mgf_analytic_matches_quadrature_path(k):
    top = min(0.9 * lambda_hat(k), 5.0)
    for lam in np.linspace(0.1, top, 12):
        a = mgf(k, lam, method="analytic")
        q = mgf(k, lam, method="quadrature")
        assert abs(a - q) <= 1e-8 * max(1.0, a)


@pytest.mark.parametrize("radius", [1.0, 2.5])
def test_bump_mgf_against_independent_quadrature(radius):
    k = DispersalKernel.compact_bump(radius)
    for lam in (0.5, 2.0, 4.0):
        assert mgf(k, lam) == pytest.approx(quad_mgf(k, lam), rel=1e-9)


def test_lambda_hat():
    assert lambda_hat(DispersalKernel.gaussian(1.0)) == math.inf
    assert lambda_hat(DispersalKernel.laplace(2.0)) == 2.0
    assert lambda_hat(DispersalKernel.compact_bump(1.0)) == math.inf


def test_mgf_beyond_lambda_hat():
    with pytest.raises(DomainError):
        mgf(DispersalKernel.laplace(2.0), 2.0)
    with pytest.raises(DomainError):
        mgf(DispersalKernel.gaussian(1.0), -0.1)


def test_tabulated_laplace_diverges_near_alpha():
    y = np.linspace(-60, 60, 24001)
    k = DispersalKernel.tabulated(y, 0.5 * np.exp(-np.abs(y)))
    # doubling search from 0.5 lands exactly on alpha = 1
    assert lambda_hat(k) == 1.0
    assert mgf(k, 0.5) == pytest.approx(1 / (1 - 0.25), rel=1e-4)


def test_tabulated_gaussian_matches_closed_form(tmp_path):
    y = np.linspace(-30, 30, 12001)
    J = 3.0 * np.exp(-0.5 * y * y)  # unnormalized on purpose
    path = tmp_path / "kernel.txt"
    np.savetxt(path, np.column_stack([y, J]), header="y J")
    k = DispersalKernel.from_file(path)
    assert abs(np.trapezoid(k.table_J, k.table_y) - 1) < 1e-14
    # a finite table resolves the MGF only while e^{lam y} J peaks well inside it
    assert lambda_hat(k) >= 8.0
    # linear interpolation between samples costs O(h^2)
    assert mgf(k, 1.0) == pytest.approx(math.exp(0.5), rel=1e-5)
    assert kernel_from_spec({"kind": "tabulated", "path": str(path)}).table_J.size == 12001


@pytest.mark.parametrize("bad", [
    lambda: DispersalKernel.gaussian(0.0),
    lambda: DispersalKernel.laplace(-1.0),
    lambda: DispersalKernel.compact_bump(0.0),
    lambda: DispersalKernel.tabulated([0, 1, 2], [1, 1, 1]),
    lambda: DispersalKernel.tabulated([-1, 0, 1], [1, -1, 1]),
    lambda: kernel_from_spec({"kind": "cauchy"}),
])
def test_invalid_kernels(bad):
    with pytest.raises(DomainError):
        bad()


def test_grid_layout():
    k = DispersalKernel.gaussian(1.0)
    g = Grid.build(10.0, 0.1, k)
    assert g.n == 201 and g.n % 2 == 1
    assert g.z[g.center] == 0.0
    assert abs((g.n - 1) * g.dx - 2 * g.L) < 1e-12
    assert g.g * g.dx >= k.truncation_radius
    assert np.allclose(np.diff(g.z), 0.1)
    assert g.g == ghost_nodes(k, 0.1)


def test_grid_mismatch():
    k = DispersalKernel.gaussian(1.0)
    g = Grid.build(10.0, 0.1, ghost=5)
    with pytest.raises(GridMismatch):
        convolve(k, np.ones(g.n), g, (1.0, 1.0))


def test_convolve_constant():
    for k in BUILTINS:
        g = Grid.build(10.0, 0.1, k)
        out = convolve(k, np.ones(g.n), g, (1.0, 1.0))
        assert np.max(np.abs(out - 1.0)) <= 1e-10


def test_convolve_spike_reproduces_kernel():
    errs = []
    for dx in (0.1, 0.05):
        k = DispersalKernel.gaussian(1.0)
        g = Grid.build(10.0, dx, k)
        f = np.zeros(g.n)
        f[g.center] = 1.0 / dx
        out = convolve(k, f, g)
        errs.append(np.max(np.abs(out - evaluate(k, g.z))))
    assert errs[0] <= 0.1 ** 2
    assert errs[1] <= 0.05 ** 2


def test_direct_and_fft_agree(rng):
    for k in BUILTINS:
        g = Grid.build(30.0, 0.1, k)
        f = np.sin(0.3 * g.z) + 0.5 * np.cos(1.7 * g.z + 0.2) + 2
        fields = np.vstack([f, f ** 2])
        a = convolve(k, fields, g, (1.5, 2.5), method="direct")
        b = convolve(k, fields, g, (1.5, 2.5), method="fft")
        assert np.max(np.abs(a - b)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10),
       fl=st.floats(-5, 5), fr=st.floats(-5, 5), gl=st.floats(-5, 5), gr=st.floats(-5, 5),
       seed=st.integers(0, 2 ** 32 - 1))
def test_convolution_linearity(a, b, fl, fr, gl, gr, seed):
    k = DispersalKernel.laplace(1.5)
    grid = Grid.build(8.0, 0.2, k)
    r = np.random.default_rng(seed)
    f, g = r.normal(size=grid.n), r.normal(size=grid.n)
    lhs = convolve(k, a * f + b * g, grid, (a * fl + b * gl, a * fr + b * gr))
    rhs = a * convolve(k, f, grid, (fl, fr)) + b * convolve(k, g, grid, (gl, gr))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, abs(a) + abs(b)) * 10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_convolution_preserves_order(seed):
    k = DispersalKernel.compact_bump(2.0)
    grid = Grid.build(8.0, 0.1, k)
    r = np.random.default_rng(seed)
    f = r.uniform(0, 1, grid.n)
    g = f + r.uniform(0, 1, grid.n)
    assert np.all(convolve(k, g, grid, (1, 1)) - convolve(k, f, grid, (0, 0)) >= -1e-14)
