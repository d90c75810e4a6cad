import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlwaves.errors import DomainError, NoRoot
from nlwaves.kernels import DispersalKernel, mgf
from nlwaves.models import make_model
from nlwaves.spectral import (G, SpeedProblem, c_R, c_star, g_curve, lambda_c,
                              weight_identity)

KERNELS = [DispersalKernel.gaussian(1.0), DispersalKernel.laplace(2.0),
           DispersalKernel.compact_bump(1.0)]


def grid_oracle(kernel, R, lam_max, n=1_000_000):
    """Dense grid minimum of G, refined once around the best grid point."""
    lam = np.linspace(lam_max / n, lam_max, n)
    if kernel.kind == "gaussian":
        M = np.exp(0.5 * (kernel.s * lam) ** 2)
    elif kernel.kind == "laplace":
        M = kernel.alpha ** 2 / (kernel.alpha ** 2 - lam ** 2)
    else:
        M = np.array([mgf(kernel, x) for x in np.linspace(lam_max / 2000, lam_max, 2000)])
        lam = np.linspace(lam_max / 2000, lam_max, 2000)
    g = (M - 1 + R) / lam
    i = int(np.argmin(g))
    return g[i], lam[i]


def test_gaussian_c_R_is_sqrt_e():
    p = SpeedProblem(DispersalKernel.gaussian(1.0), 1.0)
    res = c_R(p)
    val, arg = grid_oracle(p.kernel, 1.0, 5.0)
    assert abs(res.value - math.sqrt(math.e)) <= 1e-8
    assert abs(res.argmin - 1.0) <= 1e-8
    assert abs(res.value - val) <= 1e-8 * val
    assert abs(res.argmin - arg) <= 1e-5


def test_laplace_c_R_oracle():
    p = SpeedProblem(DispersalKernel.laplace(2.0), 1.0)
    res = c_R(p)
    val, _ = grid_oracle(p.kernel, 1.0, 1.999)
    assert 0 < res.value < 4 / 3
    assert abs(res.value - val) <= 1e-8 * val
    assert res.value <= val


@pytest.mark.parametrize("R", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
def test_golden_section_matches_grid_oracle(kernel, R):
    p = SpeedProblem(kernel, R)
    res = c_R(p)
    assert res.value > 0
    if kernel.kind == "compact_bump":
        # quadrature MGF: a coarse grid around the minimizer, then a fine local one
        lam = np.linspace(0.5 * res.argmin, 1.5 * res.argmin, 2001)
        g = np.array([G(p, x) for x in lam])
        assert res.value <= g.min() * (1 + 1e-12)
        assert g.min() - res.value <= 1e-8 * res.value
        return
    lam_max = min(0.999 * p.kernel.alpha, 20.0) if kernel.kind == "laplace" else 3 * res.argmin
    val, _ = grid_oracle(kernel, R, lam_max)
    assert abs(res.value - val) <= 1e-8 * val


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
def test_c_R_nondecreasing_in_R(kernel):
    vals = [c_R(SpeedProblem(kernel, R)).value for R in (0.1, 1.0, 10.0)]
    assert vals[0] < vals[1] < vals[2]


def test_G_examples():
    assert G(SpeedProblem(DispersalKernel.laplace(2.0), 1.0), 1.0) == pytest.approx(4 / 3, rel=1e-14)
    p = SpeedProblem(DispersalKernel.gaussian(1.0), 1.0)
    assert G(p, 1.0) == pytest.approx(math.sqrt(math.e), rel=1e-14)
    assert G(p, 1e-6) > 1e5 * p.R


def test_G_domain():
    p = SpeedProblem(DispersalKernel.laplace(2.0), 1.0)
    with pytest.raises(DomainError):
        G(p, 0.0)
    with pytest.raises(DomainError):
        G(p, 2.0)
    with pytest.raises(DomainError):
        SpeedProblem(DispersalKernel.gaussian(1.0), 0.0)


def test_lambda_c_examples():
    p = SpeedProblem(DispersalKernel.gaussian(1.0), 1.0)
    assert abs(lambda_c(p, math.sqrt(math.e)) - 1.0) <= 1e-8
    lam = lambda_c(p, 2.0)
    assert abs(G(p, lam) - 2.0) <= 1e-10
    # oracle: first sign change of G - 2 on a dense grid of (0, 1)
    grid = np.linspace(1e-6, 1.0, 1_000_000)
    g = np.exp(0.5 * grid ** 2) / grid
    i = int(np.nonzero(g <= 2.0)[0][0])
    assert grid[i - 1] <= lam <= grid[i]
    with pytest.raises(NoRoot) as info:
        lambda_c(p, 1.0)
    assert info.value.c_R == pytest.approx(math.sqrt(math.e))


@settings(max_examples=50, deadline=None)
@given(kind=st.sampled_from(["gaussian", "laplace"]), R=st.floats(0.05, 20),
       excess=st.floats(1e-6, 5.0))
def test_smallest_root_properties(kind, R, excess):
    kernel = DispersalKernel.gaussian(1.3) if kind == "gaussian" else DispersalKernel.laplace(1.7)
    p = SpeedProblem(kernel, R)
    cr = c_R(p)
    c = cr.value * (1 + excess)
    lam = lambda_c(p, c, cr)
    assert abs(G(p, lam) - c) <= 1e-10 * max(1.0, c)
    assert abs(weight_identity(p, c, lam)) <= 1e-10 * max(1.0, c * lam)
    below = np.linspace(lam * 1e-3, lam * (1 - 1e-9), 100)
    assert all(G(p, x) > c for x in below)


def test_c_star_models():
    g = DispersalKernel.gaussian(1.0)
    assert c_star(make_model("epidemic", {"beta": 2, "s_star": 1, "gamma": 1}), g) == \
        pytest.approx(math.sqrt(math.e), abs=1e-10)
    assert c_star(make_model("pp2"), g) == pytest.approx(math.sqrt(math.e), abs=1e-10)


def test_c_star_needs_positive_rate():
    model = make_model("pp2")
    from dataclasses import replace
    with pytest.raises(DomainError):
        c_star(replace(model, spreading_rate=0.0), DispersalKernel.gaussian(1.0))


def test_g_curve_above_minimum():
    p = SpeedProblem(DispersalKernel.gaussian(1.0), 1.0)
    lam, g = g_curve(p, 40)
    assert lam.shape == g.shape == (40,)
    assert np.all(g >= c_R(p).value - 1e-12)
