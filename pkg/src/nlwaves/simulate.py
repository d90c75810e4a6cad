"""Method-of-lines integration of the nonlocal system on a truncated line.

    u_t = J*u - u + c u_z + u f(u)

with c = 0 in the lab frame and c > 0 in the frame moving with the wave.
Space: direct kernel summation plus 5th-order upwind-biased differences.
Time: classical RK4.  Outside [-L, L] the field is continued by the far
field: constants on the left (or the current boundary value for components
whose left limit is not prescribed), and on the right the constant E+ plus
a deviation decaying like exp(-lam (z - L)).  The
outermost CLAMP_BAND nodes on each side are overwritten with that
continuation after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BlowUp, DegenerateInput, DomainError, DomainTooSmall, StepFailure
from .kernels import DispersalKernel, Grid, convolve_padded
from .models import ReactionModel

CLAMP_BAND = 5
BLOWUP_FACTOR = 1e3


@dataclass(frozen=True)
class FarField:
    """Continuation of a field beyond both ends of the grid.

    On the right, with ``right_decay`` set, the continuation is
    E+ + a exp(-decay (z - L)).  The amplitude vector ``a`` is prescribed
    when ``right_amplitude`` is given; otherwise it is read off the last
    unclamped node.  In a frame moving with c > 0 the right end is an inflow
    boundary, so only the prescribed form gives a well-posed problem.
    """

    left: np.ndarray
    right: np.ndarray
    right_decay: float | None = None
    floating_left: tuple[int, ...] = ()
    right_amplitude: np.ndarray | None = None

    @classmethod
    def constant(cls, left, right, m: int | None = None) -> "FarField":
        left = np.atleast_1d(np.asarray(left, dtype=float))
        right = np.atleast_1d(np.asarray(right, dtype=float))
        if m is not None:
            left = np.broadcast_to(left, (m,)).copy()
            right = np.broadcast_to(right, (m,)).copy()
        return cls(left, right)

    @classmethod
    def for_model(cls, model: ReactionModel, right_decay: float | None = None,
                  right_amplitude=None) -> "FarField":
        amp = None if right_amplitude is None else np.asarray(right_amplitude, dtype=float)
        return cls(model.E_minus.astype(float), model.E_plus.astype(float),
                   right_decay, tuple(model.floating_left), amp)

    def shifted(self, shift: float) -> "FarField":
        """Far field of u(z + shift)."""
        if self.right_decay is None or self.right_amplitude is None:
            return self
        return replace(self, right_amplitude=self.right_amplitude * math.exp(-self.right_decay * shift))

    def left_values(self, u: np.ndarray) -> np.ndarray:
        vals = self.left.astype(float).copy()
        for i in self.floating_left:
            vals[i] = u[i, CLAMP_BAND]
        return vals

    def right_tail(self, u: np.ndarray, dx: float, k: np.ndarray) -> np.ndarray:
        """Continuation at offsets k*dx from the last node; shape (m, len(k))."""
        if self.right_decay is None:
            return np.broadcast_to(self.right[:, None], (u.shape[0], k.size)).copy()
        if self.right_amplitude is None:
            amp = u[:, -1 - CLAMP_BAND] - self.right
            k = k + CLAMP_BAND
        else:
            amp = self.right_amplitude
        return self.right[:, None] + amp[:, None] * np.exp(-self.right_decay * dx * k)[None, :]

    def apply(self, u: np.ndarray, dx: float) -> np.ndarray:
        """Copy of ``u`` with the boundary bands reset to the continuation."""
        v = np.array(u, dtype=float, copy=True)
        v[:, :CLAMP_BAND] = self.left_values(v)[:, None]
        v[:, -CLAMP_BAND:] = self.right_tail(v, dx, np.arange(1 - CLAMP_BAND, 1))
        return v

    def ghosts(self, u: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        left = np.broadcast_to(self.left_values(u)[:, None], (u.shape[0], grid.g))
        right = self.right_tail(u, grid.dx, np.arange(1, 1 + grid.g))
        return left, right

    def padded(self, u: np.ndarray, grid: Grid) -> np.ndarray:
        gl, gr = self.ghosts(u, grid)
        return np.concatenate([gl, u, gr], axis=1)

    def describe(self) -> dict:
        amp = None if self.right_amplitude is None else self.right_amplitude.tolist()
        return {"left": self.left.tolist(), "right": self.right.tolist(),
                "right_decay": self.right_decay, "right_amplitude": amp,
                "floating_left": list(self.floating_left)}


@dataclass
class SimState:
    t: float
    u: np.ndarray
    c: float
    far_field: FarField
    clamp_count: int = 0

    @property
    def frame(self) -> str:
        return "lab" if self.c == 0 else f"moving{{c={self.c:g}}}"

    def copy(self) -> "SimState":
        return replace(self, u=self.u.copy())


@dataclass(frozen=True)
class StepControl:
    dt: float
    cfl_advection: float = 0.8
    cfl_reaction: float = 0.5
    scheme: str = "rk4"

    @staticmethod
    def reaction_rate_bound(model: ReactionModel | None, unbounded_cap: float | None = None) -> float:
        """max |f_i| over the invariant box (unbounded sides capped)."""
        if model is None:
            return 0.0
        finite = model.box_hi[np.isfinite(model.box_hi)]
        if unbounded_cap is None:
            unbounded_cap = 10.0 * (float(finite.max()) if finite.size else 1.0)
        hi = np.where(np.isfinite(model.box_hi), model.box_hi, unbounded_cap)
        m = model.m
        best = 0.0
        for corner in np.ndindex(*(2,) * m):
            u = np.where(np.array(corner) == 1, hi, 0.0)
            best = max(best, float(np.max(np.abs(model.A @ u + model.b0))))
        return best

    @classmethod
    def auto(cls, grid: Grid, c: float, model: ReactionModel | None,
             cfl_advection: float = 0.8, cfl_reaction: float = 0.5) -> "StepControl":
        dt = cfl_reaction / (1.0 + cls.reaction_rate_bound(model))
        if c != 0:
            dt = min(dt, cfl_advection * grid.dx / abs(c))
        return cls(dt, cfl_advection, cfl_reaction)

    def check(self, grid: Grid, c: float, model: ReactionModel | None) -> None:
        limit = self.cfl_reaction / (1.0 + self.reaction_rate_bound(model))
        if c != 0:
            limit = min(limit, self.cfl_advection * grid.dx / abs(c))
        if not 0 < self.dt <= limit * (1 + 1e-12):
            raise DomainError(f"dt={self.dt:g} violates the CFL limit {limit:g}")


STEP_DERIVATIVE = 5


def derivative(padded: np.ndarray, grid: Grid, order: int = 4, upwind: float = 1.0) -> np.ndarray:
    """First derivative on the interior of a padded field.

    ``order`` 4 and 6 are central differences.  ``order`` 5 is the upwind-biased
    stencil for u_t = c u_z with information arriving from the side of
    sign(``upwind``); it damps grid-scale modes that central differences leave
    neutral and transport against the flow.
    """
    g, n, h = grid.g, grid.n, grid.dx
    s = lambda k: padded[..., g + k:g + k + n]
    if order == 4:
        return (8.0 * (s(1) - s(-1)) - (s(2) - s(-2))) / (12.0 * h)
    if order == 6:
        return (45.0 * (s(1) - s(-1)) - 9.0 * (s(2) - s(-2)) + (s(3) - s(-3))) / (60.0 * h)
    if order == 5:
        d = 1 if upwind >= 0 else -1
        return d * (2.0 * s(3 * d) - 15.0 * s(2 * d) + 60.0 * s(d) - 20.0 * s(0)
                    - 30.0 * s(-d) + 3.0 * s(-2 * d)) / (60.0 * h)
    raise ValueError(f"unsupported derivative order {order}")


def rhs(u: np.ndarray, model: ReactionModel | None, kernel: DispersalKernel, grid: Grid,
        c: float, far: FarField, derivative_order: int = STEP_DERIVATIVE, band: bool = True) -> np.ndarray:
    """Right-hand side N[u] + c u_z + u f(u); zero on the clamped bands."""
    v = far.apply(u, grid.dx)
    padded = far.padded(v, grid)
    out = convolve_padded(kernel, padded, grid) - v
    if c != 0:
        out += c * derivative(padded, grid, derivative_order, upwind=c)
    if model is not None:
        out += model.reaction(v)
    if band:
        out[:, :CLAMP_BAND] = 0.0
        out[:, -CLAMP_BAND:] = 0.0
    return out


def _blowup_bound(model: ReactionModel | None, u0: np.ndarray) -> np.ndarray:
    if model is None:
        scale = max(1.0, float(np.max(np.abs(u0))))
        return np.full(u0.shape[0], BLOWUP_FACTOR * scale)
    finite = model.box_hi[np.isfinite(model.box_hi)]
    cap = 10.0 * (float(finite.max()) if finite.size else 1.0)
    hi = np.where(np.isfinite(model.box_hi), model.box_hi, cap)
    return BLOWUP_FACTOR * np.maximum(hi, 1e-300)


def step(state: SimState, model: ReactionModel | None, kernel: DispersalKernel, grid: Grid,
         control: StepControl, dt: float | None = None, clamp_negative: bool = True) -> SimState:
    """One RK4 step.  ``dt`` may be given to shorten the step below control.dt."""
    h = control.dt if dt is None else dt
    c, far = state.c, state.far_field
    f = lambda x: rhs(x, model, kernel, grid, c, far)
    u = state.u
    k1 = f(u)
    k2 = f(u + 0.5 * h * k1)
    k3 = f(u + 0.5 * h * k2)
    k4 = f(u + h * k3)
    new = far.apply(u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), grid.dx)
    t_new = state.t + h
    if not np.all(np.isfinite(new)) or np.any(np.abs(new) > _blowup_bound(model, u)[:, None]):
        raise BlowUp(f"solution exceeded {BLOWUP_FACTOR:g} x box bound at t={t_new:g}; reduce dt",
                     t=t_new)
    clamps = state.clamp_count
    if clamp_negative:
        neg = new < 0
        if neg.any():
            clamps += int(neg.sum())
            new[neg] = 0.0
    return SimState(t_new, new, c, far, clamps)


class Observer:
    """Callback invoked by :func:`run` every ``cadence`` units of model time."""

    name = "observer"

    def __init__(self, cadence: float = 1.0):
        self.cadence = cadence
        self.records: list = []
        self._next = None

    def on_step(self, state: SimState) -> None:
        if self._next is None:
            self._next = state.t
        if state.t >= self._next - 1e-9 * max(1.0, self.cadence):
            rec = self.observe(state)
            if rec is not None:
                self.records.append(rec)
            k = math.floor((state.t - self._next) / self.cadence + 1e-9) + 1
            self._next += k * self.cadence

    def observe(self, state: SimState):
        raise NotImplementedError

    def finish(self, state: SimState) -> None:
        """Called once after the last step."""


class NormObserver(Observer):
    name = "norms"

    def observe(self, state):
        return {"t": state.t, "sup": np.max(np.abs(state.u), axis=1).tolist()}


class SnapshotObserver(Observer):
    name = "snapshots"

    def observe(self, state):
        return (state.t, state.u.copy())


class DistanceObserver(Observer):
    """sup |u - reference| over a window |z| <= half_window."""

    name = "distance"

    def __init__(self, reference: np.ndarray, grid: Grid, half_window: float, cadence: float = 1.0):
        super().__init__(cadence)
        self.reference = reference
        self.mask = np.abs(grid.z) <= half_window + 1e-12

    def observe(self, state):
        d = np.max(np.abs(state.u[:, self.mask] - self.reference[:, self.mask]))
        return {"t": state.t, "sup_dist": float(d)}


class RunResult(NamedTuple):
    state: SimState
    records: dict


def run(initial: SimState, model: ReactionModel | None, kernel: DispersalKernel, grid: Grid,
        control: StepControl, t_end: float, observers: Sequence[Observer] = ()) -> RunResult:
    """Step from ``initial.t`` to ``t_end``; the step is shortened so t_end is hit exactly."""
    grid.check_kernel(kernel)
    span = t_end - initial.t
    if span < 0:
        raise DomainError(f"t_end={t_end} precedes the initial time {initial.t}")
    if span == 0:
        return RunResult(initial, {o.name: o.records for o in observers})
    control.check(grid, initial.c, model)
    nsteps = max(1, math.ceil(span / control.dt - 1e-9))
    dt = span / nsteps
    state = initial
    for o in observers:
        o.on_step(state)
    t0 = initial.t
    for k in range(1, nsteps + 1):
        try:
            state = step(state, model, kernel, grid, control, dt=dt)
        except BlowUp as exc:
            raise StepFailure(str(exc), t=exc.t) from exc
        state.t = t0 + k * dt
        for o in observers:
            o.on_step(state)
    for o in observers:
        o.finish(state)
    return RunResult(state, {o.name: o.records for o in observers})


# -- linear decay ----------------------------------------------------------------


class DecayResult(NamedTuple):
    slope: float
    intercept: float
    times: np.ndarray
    sup_norms: np.ndarray
    outside_mass_fraction: float


def bump(z, center: float = 0.0, half_width: float = 1.0):
    """Smooth compactly supported bump with peak 1 on |z - center| < half_width."""
    x = (np.asarray(z, dtype=float) - center) / half_width
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


def linear_decay_experiment(kernel: DispersalKernel, v0, grid: Grid, t_end: float,
                            dt: float | None = None, cadence: float = 1.0,
                            fit_from: float | None = None) -> DecayResult:
    """Evolve v_t = J*v - v from ``v0`` and fit log||v||_inf against log(1 + t).

    The fit uses the last decade of time, [t_end / 10, t_end], unless
    ``fit_from`` is given.
    """
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    if not np.any(v0 != 0):
        raise DegenerateInput("initial data vanish identically; decay exponent undefined")
    far = FarField.constant(0.0, 0.0, m=v0.shape[0])
    control = StepControl(dt if dt is not None else 0.5)
    obs = NormObserver(cadence)
    res = run(SimState(0.0, v0, 0.0, far), None, kernel, grid, control, t_end, [obs])
    times = np.array([r["t"] for r in obs.records])
    sups = np.array([max(r["sup"]) for r in obs.records])

    v = res.state.u
    total = float(np.sum(np.abs(v)))
    outside = np.abs(grid.z) > 0.5 * grid.L
    frac = float(np.sum(np.abs(v[:, outside])) / total) if total > 0 else 0.0
    if frac >= 1e-6:
        raise DomainTooSmall(
            f"{frac:.3g} of the mass lies outside [-L/2, L/2] at t={t_end:g}; widen the grid")

    start = t_end / 10.0 if fit_from is None else fit_from
    sel = times >= start - 1e-9
    if sel.sum() < 2:
        raise DegenerateInput("fewer than two samples in the fit window")
    x = np.log1p(times[sel])
    y = np.log(sups[sel])
    slope, intercept = np.polyfit(x, y, 1)
    return DecayResult(float(slope), float(intercept), times, sups, frac)
