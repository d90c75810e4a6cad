"""Traveling-wave profiles by relaxation in the moving frame.

A profile is relaxed by integrating u_t = N[u] + c u_z + u f(u) until the
right-hand side is below tolerance.  Between output intervals the profile
is translated (linear interpolation) so that the pin component crosses the
midpoint of its far-field values at z = 0.

For c > c* the leading edge decays like exp(-lam_c z) v, lam_c the smallest
root of G(lam) = c with R the model's spreading rate and v the eigenvector of
the reaction Jacobian at E+ for the eigenvalue R.  The right far field
prescribes that exponential instead of clamping to E+: a hard clamp erodes
the slow tail from the boundary inward, after which the front falls back to
the minimal speed.  Its amplitude fixes the position of the front; each
pinning translation rescales it by exp(-lam_c shift).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.special import expit

from .errors import CollapseToEquilibrium, DomainError, NoConvergence, NoRoot
from .kernels import DispersalKernel, Grid
from .models import ReactionModel
from .simulate import CLAMP_BAND, STEP_DERIVATIVE, FarField, SimState, StepControl, rhs, step
from .spectral import SpeedProblem, c_R, lambda_c

log = logging.getLogger(__name__)

PIN_TOL = 1e-8


@dataclass(frozen=True)
class RelaxOptions:
    tol: float = 1e-11
    max_time: float = 3000.0
    output_interval: float = 2.0
    pin_tol: float = PIN_TOL
    # give up when the residual has not halved over this much model time
    stall_time: float = 400.0
    far_field_tol: float = 1e-4
    dt: float | None = None


@dataclass(frozen=True, eq=False)
class WaveProfile:
    c: float
    grid: Grid
    phi: np.ndarray
    E_plus: np.ndarray
    E_minus: np.ndarray
    far_field: FarField
    pin_component: int
    residual_sup: float = math.nan
    discrete_residual: float = math.nan
    lambda_tail: float | None = None
    relax_time: float = math.nan
    flags: tuple[str, ...] = ()

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def z(self) -> np.ndarray:
        return self.grid.z

    def pin_error(self) -> float:
        p = self.pin_component
        mid = 0.5 * (self.E_minus[p] + self.E_plus[p])
        return float(abs(self.phi[p, self.grid.center] - mid))

    def far_field_errors(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.abs(self.phi[:, 0] - self.E_minus), np.abs(self.phi[:, -1] - self.E_plus))

    def with_phi(self, phi: np.ndarray, **kw) -> "WaveProfile":
        return replace(self, phi=phi, **kw)

    def save(self, path: str | Path) -> None:
        """Multi-column text: z, phi_1, ..., phi_m, with a metadata header."""
        header = [
            f"c = {self.c!r}",
            f"L = {self.grid.L!r}",
            f"dx = {self.grid.dx!r}",
            f"ghost = {self.grid.g}",
            f"pin_component = {self.pin_component}",
            f"E_minus = {' '.join(repr(float(x)) for x in self.E_minus)}",
            f"E_plus = {' '.join(repr(float(x)) for x in self.E_plus)}",
            f"right_decay = {self.far_field.right_decay!r}",
            f"floating_left = {' '.join(str(i) for i in self.far_field.floating_left)}",
            "right_amplitude = " + (
                "None" if self.far_field.right_amplitude is None
                else " ".join(repr(float(x)) for x in self.far_field.right_amplitude)),
            f"residual_sup = {self.residual_sup!r}",
            f"discrete_residual = {self.discrete_residual!r}",
            "columns = z " + " ".join(f"phi_{i + 1}" for i in range(self.m)),
        ]
        data = np.column_stack([self.z, self.phi.T])
        np.savetxt(path, data, fmt="%.17g", header="\n".join(header), comments="# ")

    @classmethod
    def load(cls, path: str | Path) -> "WaveProfile":
        meta = {}
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
        data = np.loadtxt(path, comments="#", ndmin=2)
        grid = Grid(L=float(meta["L"]), dx=float(meta["dx"]), n=data.shape[0],
                    g=int(meta["ghost"]))
        em = np.array([float(x) for x in meta["E_minus"].split()])
        ep = np.array([float(x) for x in meta["E_plus"].split()])
        decay = None if meta.get("right_decay", "None") == "None" else float(meta["right_decay"])
        floating = tuple(int(x) for x in meta.get("floating_left", "").split())
        amp_text = meta.get("right_amplitude", "None")
        amp = None if amp_text == "None" else np.array([float(x) for x in amp_text.split()])
        far = FarField(em.copy(), ep.copy(), decay, floating, amp)
        return cls(c=float(meta["c"]), grid=grid, phi=data[:, 1:].T.copy(), E_plus=ep,
                   E_minus=em, far_field=far, pin_component=int(meta["pin_component"]),
                   residual_sup=float(meta.get("residual_sup", "nan")),
                   discrete_residual=float(meta.get("discrete_residual", "nan")),
                   lambda_tail=decay)


def pin_component_for(model: ReactionModel) -> int:
    if model.floating_left:
        return model.pin_component
    return int(np.argmax(np.abs(model.E_minus - model.E_plus)))


def wave_residual(profile: WaveProfile, kernel: DispersalKernel, model: ReactionModel,
                  derivative_order: int = 6):
    """Residual N[phi] + c phi' + phi f(phi) at every node and its sup norm.

    phi' uses a 6th-order central stencil by default.  The relaxation steps
    with the 5th-order upwind stencil, so a relaxed profile makes that
    residual vanish up to the stopping tolerance; the central evaluation
    instead exposes the O(dx^5) discretization error.  The clamped boundary bands
    are not part of the equation and are excluded.
    """
    profile.grid.check_kernel(kernel)
    r = rhs(profile.phi, model, kernel, profile.grid, profile.c, profile.far_field,
            derivative_order=derivative_order, band=True)
    return float(np.max(np.abs(r))), r


def _interpolate(u: np.ndarray, grid: Grid, far: FarField, target: np.ndarray) -> np.ndarray:
    # log-space quintic spline for positive rows: exact on exponential tails
    padded = far.padded(far.apply(u, grid.dx), grid)
    zp = np.concatenate([grid.ghost_z("left"), grid.z, grid.ghost_z("right")])
    out = np.empty((u.shape[0], target.size))
    for i in range(u.shape[0]):
        row = padded[i]
        if np.all(row > 0):
            out[i] = np.exp(make_interp_spline(zp, np.log(row), k=5)(target))
        else:
            out[i] = make_interp_spline(zp, row, k=5)(target)
    return out


def translate(u: np.ndarray, shift: float, grid: Grid, far: FarField) -> np.ndarray:
    """u(z + shift), extended by the far field.

    Strictly positive components are interpolated as log u with a quintic
    spline; others use a quintic spline of u itself.
    """
    return far.apply(_interpolate(u, grid, far, grid.z + shift), grid.dx)


def resample(profile: WaveProfile, grid: Grid) -> np.ndarray:
    """Profile values on another grid covering at most the same interval."""
    if grid.L > profile.grid.L + 1e-12:
        raise DomainError(f"target half-width {grid.L:g} exceeds the profile's {profile.grid.L:g}")
    return _interpolate(profile.phi, profile.grid, profile.far_field, grid.z)


def crossing(values: np.ndarray, z: np.ndarray, level: float) -> float | None:
    """Position where ``values`` crosses ``level`` closest to z = 0."""
    d = values - level
    idx = np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) <= 0)[0]
    idx = idx[(d[idx] != d[idx + 1])]
    if idx.size == 0:
        return None
    pos = z[idx] + (z[idx + 1] - z[idx]) * d[idx] / (d[idx] - d[idx + 1])
    return float(pos[np.argmin(np.abs(pos))])


def initial_guess(model: ReactionModel, grid: Grid, rate: float) -> np.ndarray:
    """Logistic ramp E- -> E+ decaying like exp(-rate z) ahead, plus pulses."""
    z = grid.z
    ramp = expit(rate * z)
    # written from E+ so the leading edge keeps its relative precision
    behind = expit(-rate * z)
    phi = model.E_plus[:, None] + (model.E_minus - model.E_plus)[:, None] * behind[None, :]
    if model.pulse_guess is not None:
        pulse = 4.0 * ramp * behind
        phi = phi + np.asarray(model.pulse_guess)[:, None] * pulse[None, :]
    return phi


def tail_direction(model: ReactionModel) -> np.ndarray:
    """Eigenvector of the reaction Jacobian at E+ for the spreading rate.

    Scaled to unit sup norm, with its largest entry among components that
    vanish at E+ made positive.
    """
    ep = model.E_plus.astype(float)
    jac = np.diag(model.rates(ep)) + ep[:, None] * model.A
    vals, vecs = np.linalg.eig(jac)
    j = int(np.argmin(np.abs(vals - model.spreading_rate)))
    if abs(vals[j] - model.spreading_rate) > 1e-8 * max(1.0, abs(model.spreading_rate)):
        raise DomainError(f"{model.name}: spreading rate {model.spreading_rate:g} is not an "
                          f"eigenvalue of the Jacobian at E+ (eigenvalues {vals})")
    v = np.real(vecs[:, j])
    v = v / np.max(np.abs(v))
    zero = np.abs(ep) <= 1e-14
    ref = v[zero] if zero.any() else v
    if ref[np.argmax(np.abs(ref))] < 0:
        v = -v
    return v


def tail_amplitude(u: np.ndarray, E_plus: np.ndarray, grid: Grid, direction: np.ndarray,
                   rate: float) -> np.ndarray:
    """Deviation at z = L along ``direction``, extrapolated from the last unclamped node.

    The scale is read from the components that vanish at E+: deviations of
    the others are far below rounding of their O(1) values.
    """
    dev = u[:, -1 - CLAMP_BAND] - E_plus
    zero = np.abs(E_plus) <= 1e-14
    idx = np.nonzero(zero)[0] if zero.any() else np.arange(u.shape[0])
    j = idx[np.argmax(np.abs(direction[idx]))]
    return direction * float(dev[j] / direction[j]) * math.exp(-rate * CLAMP_BAND * grid.dx)


def tail_rate(model: ReactionModel, kernel: DispersalKernel, c: float) -> float | None:
    """Decay rate of the leading edge, or None when c is below the minimal speed."""
    problem = SpeedProblem(kernel, model.spreading_rate)
    try:
        return lambda_c(problem, c)
    except NoRoot:
        return None


def compute_profile(model: ReactionModel, kernel: DispersalKernel, c: float, grid: Grid,
                    relax_opts: RelaxOptions | None = None,
                    initial: np.ndarray | None = None) -> WaveProfile:
    """Relax a front-like guess to a stationary solution of the moving-frame system."""
    opts = relax_opts or RelaxOptions()
    grid.check_kernel(kernel)
    if not c > 0:
        raise DomainError(f"wave speed must be positive, got {c}")
    lam = tail_rate(model, kernel, c)
    flags = []
    problem = SpeedProblem(kernel, model.spreading_rate)
    cr = c_R(problem)
    if lam is None:
        flags.append("below_minimal_speed")
        guess_rate = cr.argmin
    else:
        guess_rate = lam
        if abs(c - cr.value) <= 1e-9 * max(1.0, cr.value):
            flags.append("at_minimal_speed")
        if math.exp(-lam * grid.L) >= 1e-6:
            raise DomainError(
                f"grid half-width L={grid.L:g} too small: exp(-lambda_c L) = "
                f"{math.exp(-lam * grid.L):.3g} >= 1e-6")

    u = initial_guess(model, grid, guess_rate) if initial is None else np.array(initial, float)
    amp = None
    if lam is not None:
        amp = tail_amplitude(u, model.E_plus, grid, tail_direction(model), lam)
    far = FarField.for_model(model, right_decay=lam, right_amplitude=amp)
    pin = pin_component_for(model)
    control = StepControl.auto(grid, c, model) if opts.dt is None else StepControl(opts.dt)
    control.check(grid, c, model)
    state = SimState(0.0, far.apply(u, grid.dx), c, far)

    nsub = max(1, math.ceil(opts.output_interval / control.dt - 1e-9))
    dt = opts.output_interval / nsub
    gap = abs(model.E_minus[pin] - model.E_plus[pin])
    history = []
    best = math.inf
    best_t = 0.0
    t = 0.0
    while True:
        for _ in range(nsub):
            state = step(state, model, kernel, grid, control, dt=dt)
        t += opts.output_interval
        u = state.u
        left_pin = far.left_values(u)[pin]
        mid = 0.5 * (left_pin + model.E_plus[pin])
        span = float(np.ptp(u[pin, CLAMP_BAND:-CLAMP_BAND]))
        if span < 1e-3 * gap:
            raise CollapseToEquilibrium(
                f"pin component flattened (range {span:.3g}) at t={t:g}; no front at c={c:g}")
        res = float(np.max(np.abs(rhs(u, model, kernel, grid, c, far))))
        pin_err = abs(u[pin, grid.center] - mid)
        history.append((t, res, pin_err))
        if res < best / 2:
            best, best_t = res, t
        if res < opts.tol and pin_err <= opts.pin_tol:
            break
        if not np.isfinite(res) or t >= opts.max_time or t - best_t > opts.stall_time:
            raise NoConvergence(
                f"relaxation at c={c:g} stalled: residual {res:.3g} (tol {opts.tol:g}) "
                f"after t={t:g}",
                diagnostics={"t": t, "residual": res, "pin_error": pin_err,
                             "history": history[-20:], "clamps": state.clamp_count})
        if pin_err > opts.pin_tol:
            s = crossing(u[pin], grid.z, mid)
            if s is None:
                raise CollapseToEquilibrium(
                    f"pin component no longer crosses its midpoint at t={t:g}")
            shifted = translate(u, s, grid, far)
            far = far.shifted(s)
            state = SimState(state.t, far.apply(shifted, grid.dx), c, far, state.clamp_count)

    E_minus = model.E_minus.astype(float).copy()
    for i in far.floating_left:
        E_minus[i] = state.u[i, CLAMP_BAND]
    far = replace(far, left=E_minus.copy())
    phi = state.u
    if np.any(phi[:, CLAMP_BAND:-CLAMP_BAND] <= 0):
        flags.append("nonpositive_nodes")
    profile = WaveProfile(c=c, grid=grid, phi=phi, E_plus=model.E_plus.astype(float).copy(),
                          E_minus=E_minus, far_field=far, pin_component=pin,
                          lambda_tail=lam, relax_time=t, flags=tuple(flags))
    r6, _ = wave_residual(profile, kernel, model)
    r4, _ = wave_residual(profile, kernel, model, derivative_order=STEP_DERIVATIVE)
    left_err, right_err = profile.far_field_errors()
    if max(left_err.max(), right_err.max()) > opts.far_field_tol:
        flags.append("far_field_mismatch")
    log.info("relaxed c=%g in t=%g: residual %.3g (discrete %.3g)", c, t, r6, r4)
    return replace(profile, residual_sup=r6, discrete_residual=r4, flags=tuple(flags))


def perturbed(profile: WaveProfile, model: ReactionModel, amplitude_fraction: float = 0.2,
              center: float = 0.0, half_width: float = 5.0) -> np.ndarray:
    """Profile plus a smooth compact bump in every component, kept inside the box.

    Each component gets amplitude ``amplitude_fraction`` times its box size
    (the profile's maximum for unbounded sides), with the sign that leaves
    more room inside the box; the amplitude is reduced if even that side is
    too tight, so the perturbed data stay strictly positive and in the box.
    """
    from .simulate import bump

    b = bump(profile.z, center, half_width)
    phi = profile.phi
    out = phi.copy()
    support = b > 0
    for i in range(profile.m):
        hi = model.box_hi[i]
        size = hi if math.isfinite(hi) else float(phi[i].max())
        amp = amplitude_fraction * size
        room_up = (hi - phi[i][support]).min() if math.isfinite(hi) else math.inf
        room_down = phi[i][support].min()
        if room_up >= room_down:
            amp = min(amp, 0.9 * room_up)
        else:
            amp = -min(amp, 0.9 * room_down)
        out[i] = phi[i] + amp * b
    return out
