"""Relative entropy of a perturbed wave and the diagnostics built on it.

For a positive reference wave phi and state u,

    W(z) = sum_i sigma_i [u_i - phi_i - phi_i ln(u_i / phi_i)] >= 0,
    V(z) = exp(lam_c z) W(z),

and along solutions of the moving-frame system W should satisfy the
sub-solution inequality W_t <= N[W] + c W_z + R W whenever sigma makes the
cross term nonpositive and sup f_i(phi) <= R.  The residual of that
inequality is evaluated discretely; only its positive part is a violation.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError, InsufficientHistory, Overflow
from .kernels import DispersalKernel, Grid, convolve
from .models import ReactionModel, sigma_validity
from .simulate import CLAMP_BAND, Observer, SimState, StepControl, derivative, run
from .spectral import G, SpeedProblem, c_R, lambda_c, weight_identity
from .waves import WaveProfile


FLOOR_EPSILON = 1e-12
CONVERGENCE_TOL = 1e-4
TRANSIENT_TIME = 5.0
MONOTONE_WOBBLE = 0.01
# V_sup wobble below this fraction of its post-transient value is rounding
MONOTONE_FLOOR = 1e-12
# absolute level of the same: W left by a 1e-7 drift of a discrete stationary wave
MONOTONE_ABS = 1e-14
FIT_FLOOR = 1e-10
# V in the rightmost eighth of the grid above this fraction of V_sup means
# the weighted perturbation is not effectively integrable
TAIL_STRIP = 0.125
TAIL_FRACTION = 1e-6

CONVERGED = "CONVERGED"
NOT_CONVERGED = "NOT_CONVERGED"
OUT_OF_HYPOTHESIS = "OUT_OF_HYPOTHESIS"


class FloorTriggered(UserWarning):
    """The logarithm guard replaced a ratio u/phi below floor_epsilon."""


def _h(r: np.ndarray) -> np.ndarray:
    """r - 1 - ln r, without cancellation near r = 1 or loss of digits for small r."""
    r = np.asarray(r, dtype=float)
    d = r - 1.0
    out = np.empty_like(r)
    small = np.abs(d) < 1e-2
    ds = d[small]
    # alternating series sum_{k>=2} (-1)^k d^k / k, truncated at d^11
    acc = np.zeros_like(ds)
    for k in range(11, 1, -1):
        acc = ds * acc + (1.0 if k % 2 == 0 else -1.0) / k
    out[small] = acc * ds * ds
    out[~small] = d[~small] - np.log(r[~small])
    return out


@dataclass
class EntropyConfig:
    reference: WaveProfile
    model: ReactionModel
    kernel: DispersalKernel
    sigma: np.ndarray | None = None
    R: float | None = None
    floor_epsilon: float = FLOOR_EPSILON
    window: float | None = None
    lambda_c: float = field(init=False)
    floor_count: int = field(default=0, init=False)
    _ref_residual: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.sigma = np.asarray(self.model.sigma if self.sigma is None else self.sigma, dtype=float)
        if self.sigma.shape != (self.model.m,) or np.any(self.sigma <= 0):
            raise DomainError(f"sigma must be {self.model.m} positive weights, got {self.sigma}")
        if self.R is None:
            self.R = float(self.model.R_bound)
        if self.window is None:
            self.window = self.reference.grid.L / 4.0
        if np.any(self.reference.phi[:, CLAMP_BAND:-CLAMP_BAND] <= 0):
            raise DomainError("reference profile must be positive")
        problem = SpeedProblem(self.kernel, self.R)
        c = self.reference.c
        self.lambda_c = lambda_c(problem, c, c_R(problem))
        gap = abs(G(problem, self.lambda_c) - c)
        ident = abs(weight_identity(problem, c, self.lambda_c))
        if gap > 1e-8 or ident > 1e-10:
            raise DomainError(f"lambda_c={self.lambda_c} fails G(lambda)=c ({gap:.3g}) "
                              f"or the weight identity ({ident:.3g})")
        self.weight_identity_residual = ident

    def reference_residual(self) -> np.ndarray:
        if self._ref_residual is None:
            from .waves import wave_residual
            self._ref_residual = wave_residual(self.reference, self.kernel, self.model)[1]
        return self._ref_residual

    @property
    def grid(self) -> Grid:
        return self.reference.grid

    def describe(self) -> dict:
        return {"sigma": self.sigma.tolist(), "R": self.R, "lambda_c": self.lambda_c,
                "weight_identity_residual": self.weight_identity_residual,
                "floor_epsilon": self.floor_epsilon, "window": self.window,
                "sigma_valid": bool(sigma_validity(self.model, self.sigma).valid)}


def relative_entropy(u: np.ndarray, config: EntropyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-node W and its per-component parts sigma_i phi_i h(u_i/phi_i)."""
    phi = config.reference.phi
    u = np.asarray(u, dtype=float)
    # phi vanishes only on a clamped band whose far-field value is 0; there the
    # summand tends to u_i
    zero = phi <= 0
    ratio = np.divide(u, phi, out=np.ones_like(u), where=~zero)
    low = (ratio < config.floor_epsilon) & ~zero
    if low.any():
        config.floor_count += int(low.sum())
        warnings.warn(FloorTriggered(f"relative entropy floored {int(low.sum())} ratios at "
                                     f"{config.floor_epsilon:g}"), stacklevel=2)
        ratio = np.where(low, config.floor_epsilon, ratio)
    parts = phi * _h(ratio)
    parts = np.where(zero, np.maximum(u, 0.0), parts) * config.sigma[:, None]
    return parts.sum(axis=0), parts


def weighted_entropy(W: np.ndarray, config: EntropyConfig) -> tuple[np.ndarray, float, float]:
    """V = exp(lam_c z) W with its sup and trapezoidal L1 norms."""
    z = config.grid.z
    with np.errstate(over="ignore", invalid="ignore"):
        V = np.exp(config.lambda_c * z) * W
    if not np.all(np.isfinite(V)):
        raise Overflow(f"exp(lambda_c L) max W overflows at lambda_c={config.lambda_c:g}, "
                       f"L={config.grid.L:g}; shrink the grid")
    return V, float(np.max(np.abs(V))), float(trapezoid(np.abs(V), dx=config.grid.dx))


def excluded_band(grid: Grid) -> int:
    return max(grid.g + 2, CLAMP_BAND + 3)


def subsolution_residual(history, config: EntropyConfig) -> tuple[np.ndarray, float]:
    """rho = W_t - N[W] - c W_z - R W at the middle of three equally spaced states.

    ``history`` holds (t, u) pairs.  Returns rho on the grid (zero on the
    excluded boundary bands) and the sup of its positive part.
    """
    if len(history) < 3:
        raise InsufficientHistory(f"need three snapshots, got {len(history)}")
    (t0, u0), (t1, u1), (t2, u2) = history[-3:]
    if not t0 < t1 < t2:
        raise InsufficientHistory("snapshots are not in increasing time")
    grid, c = config.grid, config.reference.c
    W0, _ = relative_entropy(u0, config)
    W1, _ = relative_entropy(u1, config)
    W2, _ = relative_entropy(u2, config)
    h0, h1 = t1 - t0, t2 - t1
    # second-order first derivative on a possibly uneven three-point stencil
    Wt = (h0 * h0 * (W2 - W1) + h1 * h1 * (W1 - W0)) / (h0 * h1 * (h0 + h1))
    W = W1[None, :]
    padded = np.pad(W, ((0, 0), (grid.g, grid.g)))
    NW = convolve(config.kernel, W, grid) - W
    Wz = derivative(padded, grid, order=6)
    rho = Wt - (NW + c * Wz + config.R * W)[0] - reference_correction(u1, config)
    b = excluded_band(grid)
    rho[:b] = 0.0
    rho[-b:] = 0.0
    return rho, float(max(np.max(rho), 0.0))


def reference_correction(u: np.ndarray, config: EntropyConfig) -> np.ndarray:
    """sum_i sigma_i ln(u_i / phi_i) r_i, r the reference's own wave residual.

    The sub-solution inequality assumes phi solves the wave equation
    exactly; a residual r adds exactly this term to W_t - N[W] - c W_z - R W.
    Subtracting it keeps the reference's relaxation and truncation error out
    of the check.
    """
    r = config.reference_residual()
    phi = config.reference.phi
    pos = (phi > 0) & (u > 0)
    logs = np.log(np.divide(u, phi, out=np.ones_like(phi), where=pos), where=pos,
                  out=np.zeros_like(phi))
    return np.sum(config.sigma[:, None] * logs * r, axis=0)


def log_inequality_check(u, phi, n_samples: int = 100_000, seed: int = 0,
                         pairs=None) -> float:
    """max of ln X - (X - 1) at X = u(y) phi(z) / (u(z) phi(y)) over sampled node pairs."""
    u = np.asarray(u, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    if np.any(u <= 0) or np.any(phi <= 0):
        raise DomainError("log inequality needs positive u and phi")
    if pairs is None:
        rng = np.random.default_rng(seed)
        y = rng.integers(0, u.size, n_samples)
        z = rng.integers(0, u.size, n_samples)
    else:
        y, z = (np.asarray(p, dtype=int) for p in zip(*pairs))
    X = (u[y] * phi[z]) / (u[z] * phi[y])
    return float(np.max(np.log(X) - (X - 1.0)))


@dataclass
class EntropyTrace:
    times: list = field(default_factory=list)
    W_sup: list = field(default_factory=list)
    W_L1: list = field(default_factory=list)
    V_sup: list = field(default_factory=list)
    V_L1: list = field(default_factory=list)
    residual_sup: list = field(default_factory=list)
    local_distance: list = field(default_factory=list)
    floor_count: list = field(default_factory=list)
    clamp_count: list = field(default_factory=list)

    def append(self, **rec) -> None:
        if self.times and not rec["times"] > self.times[-1]:
            raise ValueError("trace times must increase strictly")
        for k, v in rec.items():
            # NaN marks a residual that needs a neighbouring step not yet taken
            if isinstance(v, float) and math.isinf(v):
                raise Overflow(f"non-finite {k} at t={rec['times']}")
        for k, v in rec.items():
            getattr(self, k).append(v)

    def records(self):
        """One dict per time, NaN for a residual not yet available."""
        keys = ["times", "W_sup", "W_L1", "V_sup", "V_L1", "residual_sup",
                "local_distance", "floor_count", "clamp_count"]
        for i in range(len(self.times)):
            yield {k: getattr(self, k)[i] for k in keys}


class ConvergenceMonitor(Observer):
    """Entropy trace of a run against a reference wave.

    Every step is buffered so the residual at a recording time uses the
    neighbouring steps for W_t; recording happens once the step after a
    recording time is available.
    """

    name = "entropy"

    def __init__(self, config: EntropyConfig, cadence: float = 1.0,
                 tol: float = CONVERGENCE_TOL, transient: float = TRANSIENT_TIME):
        super().__init__(cadence)
        self.config = config
        self.tol = tol
        self.transient = transient
        self.trace = EntropyTrace()
        self._ring: deque = deque(maxlen=3)
        self._clamps: deque = deque(maxlen=3)
        self._due = False
        self._mask = np.abs(config.grid.z) <= config.window + 1e-12
        self.initial_V = None

    def on_step(self, state: SimState) -> None:
        self._ring.append((state.t, state.u.copy()))
        self._clamps.append(state.clamp_count)
        if self._due and len(self._ring) == 3:
            self._record(residual=True)
            self._due = False
        if self._next is None:
            self._next = state.t
            # the first state has no predecessor: record it without a residual
            self._record(residual=False, last=True)
            self._advance(state.t)
            return
        if state.t >= self._next - 1e-9 * max(1.0, self.cadence):
            self._due = True
            self._advance(state.t)

    def _advance(self, t: float) -> None:
        k = math.floor((t - self._next) / self.cadence + 1e-9) + 1
        self._next += k * self.cadence

    def _record(self, residual: bool, last: bool = False) -> None:
        idx = -1 if last else -2
        t, u = self._ring[idx]
        W, _ = relative_entropy(u, self.config)
        V, v_sup, v_l1 = weighted_entropy(W, self.config)
        if self.initial_V is None:
            self.initial_V = V
        rho_sup = subsolution_residual(list(self._ring), self.config)[1] if residual else math.nan
        dist = float(np.max(np.abs(u[:, self._mask] - self.config.reference.phi[:, self._mask])))
        self.trace.append(times=float(t), W_sup=float(np.max(W)),
                          W_L1=float(trapezoid(W, dx=self.config.grid.dx)),
                          V_sup=v_sup, V_L1=v_l1, residual_sup=rho_sup, local_distance=dist,
                          floor_count=self.config.floor_count,
                          clamp_count=int(self._clamps[idx]))

    def observe(self, state):  # recording is driven by on_step
        return None

    def finish(self, state: SimState) -> None:
        # the final state has no successor; record it without a residual
        if self.trace.times and state.t > self.trace.times[-1]:
            self._due = False
            self._record(residual=False, last=True)

    def verdict(self) -> dict:
        return assess(self.trace, self.config, self.initial_V, self.tol, self.transient)


def hypothesis_holds(V0: np.ndarray | None, grid: Grid) -> bool:
    """Effective integrability of the initial weighted entropy on the truncated line."""
    if V0 is None:
        return True
    v_sup = float(np.max(np.abs(V0)))
    if v_sup == 0.0:
        return True
    strip = grid.z >= grid.L * (1.0 - TAIL_STRIP)
    return float(np.max(np.abs(V0[strip]))) <= TAIL_FRACTION * v_sup


def assess(trace: EntropyTrace, config: EntropyConfig, V0=None,
           tol: float = CONVERGENCE_TOL, transient: float = TRANSIENT_TIME) -> dict:
    t = np.asarray(trace.times)
    V = np.asarray(trace.V_sup)
    dist = np.asarray(trace.local_distance)
    rho = np.asarray(trace.residual_sup, dtype=float)
    out = {
        "final_time": float(t[-1]) if t.size else 0.0,
        "final_local_distance": float(dist[-1]) if dist.size else 0.0,
        "max_positive_residual": float(np.nanmax(rho)) if np.any(np.isfinite(rho)) else 0.0,
        "floor_count": config.floor_count,
        "lambda_c": config.lambda_c,
        "sigma": config.sigma.tolist(),
        "sigma_valid": bool(sigma_validity(config.model, config.sigma).valid),
    }
    after = t >= transient - 1e-9
    Va = V[after]
    if Va.size >= 2:
        floor = max(MONOTONE_FLOOR * Va[0], MONOTONE_ABS)
        growth = Va[1:] - (1.0 + MONOTONE_WOBBLE) * Va[:-1] - floor
        worst = int(np.argmax(growth))
        monotone = bool(growth[worst] <= 0)
        out["max_relative_increase"] = float(np.max((Va[1:] - Va[:-1]) / np.maximum(Va[:-1], 1e-300)))
        out["worst_increase_time"] = float(t[after][1:][worst])
    else:
        monotone = True
        out["max_relative_increase"] = 0.0
    out["V_monotone"] = monotone
    out["decay_fit"] = decay_fit(t, V, config)
    if not hypothesis_holds(V0, config.grid):
        out["verdict"] = OUT_OF_HYPOTHESIS
    elif out["final_local_distance"] <= tol and monotone:
        out["verdict"] = CONVERGED
    else:
        out["verdict"] = NOT_CONVERGED
    return out


def decay_fit(t: np.ndarray, V: np.ndarray, config: EntropyConfig,
              transient: float = TRANSIENT_TIME) -> dict:
    """Least-squares slope of log V_sup against log(1 + tau), tau = M(lam_c) t.

    Reported only; the reference exponent is -1/2.
    """
    from .kernels import mgf

    tau_rate = mgf(config.kernel, config.lambda_c)
    sel = (t >= transient - 1e-9) & (V > 0)
    if sel.any():
        # drop the rounding plateau the decay ends on
        sel &= V >= FIT_FLOOR * V[sel][0]
    if sel.sum() < 2:
        return {"slope": None, "intercept": None, "tau_rate": tau_rate, "reference_slope": -0.5}
    x = np.log1p(tau_rate * t[sel])
    slope, intercept = np.polyfit(x, np.log(V[sel]), 1)
    return {"slope": float(slope), "intercept": float(intercept), "tau_rate": tau_rate,
            "reference_slope": -0.5}


def verify(profile: WaveProfile, model: ReactionModel, kernel: DispersalKernel, u0: np.ndarray,
           t_end: float, control: StepControl | None = None, cadence: float = 1.0,
           sigmas=(None,), extra_observers=()):
    """Run the moving-frame system from ``u0`` and monitor it against ``profile``.

    One monitor is attached per entry of ``sigmas`` (None means the model's
    weights), so valid and invalid weights are judged on the same run.
    Returns the final state and a list of (monitor, verdict) pairs.
    """
    grid = profile.grid
    if control is None:
        control = StepControl.auto(grid, profile.c, model)
    monitors = [ConvergenceMonitor(EntropyConfig(profile, model, kernel, sigma=s), cadence)
                for s in sigmas]
    state = SimState(0.0, profile.far_field.apply(np.asarray(u0, dtype=float), grid.dx),
                     profile.c, profile.far_field)
    result = run(state, model, kernel, grid, control, t_end, [*monitors, *extra_observers])
    return result.state, [(m, m.verdict()) for m in monitors]
