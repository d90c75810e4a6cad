"""Catalog of non-cooperative reaction systems with affine per-capita rates.

Every built-in nonlinearity has the form u_i * f_i(u) with f(u) = A u + b0,
so the cross term

    I = sum_i sigma_i (u_i - phi_i) (f_i(u) - f_i(phi)) = d^T diag(sigma) A d,  d = u - phi,

is a quadratic form, and I <= 0 on the whole box is equivalent to the
symmetric part of diag(sigma) A being negative semidefinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ParamError

SIGMA_TOL = 1e-12
R_CHECK_TOL = 1e-8
BOX_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ReactionModel:
    name: str
    A: np.ndarray
    b0: np.ndarray
    sigma: np.ndarray
    box_hi: np.ndarray
    R_bound: float
    E_plus: np.ndarray
    E_minus: np.ndarray
    spreading_rate: float
    params: dict = field(default_factory=dict)
    # components whose left limit is not prescribed and is read off the
    # solution at the left boundary instead (epidemic s0)
    floating_left: tuple[int, ...] = ()
    pin_component: int = 0
    # amplitude of a pulse added to the initial front guess, per component
    pulse_guess: tuple[float, ...] | None = None
    sigma_source: str = "paper"

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def box_lo(self) -> np.ndarray:
        return np.zeros(self.m)

    def rates(self, u) -> np.ndarray:
        """Per-capita rates f(u); ``u`` has the component axis first."""
        u = np.asarray(u, dtype=float)
        return np.tensordot(self.A, u, axes=(1, 0)) + self.b0.reshape((-1,) + (1,) * (u.ndim - 1))

    def reaction(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u * self.rates(u)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "params": dict(self.params),
            "sigma": self.sigma.tolist(),
            "sigma_source": self.sigma_source,
            "box_hi": [None if math.isinf(b) else float(b) for b in self.box_hi],
            "R_bound": self.R_bound,
            "spreading_rate": self.spreading_rate,
            "E_plus": self.E_plus.tolist(),
            "E_minus": self.E_minus.tolist(),
            "floating_left": list(self.floating_left),
        }


def reaction(model: ReactionModel, u) -> np.ndarray:
    return model.reaction(u)


def cross_term_I(model: ReactionModel, u, phi) -> np.ndarray:
    """sum_i sigma_i (u_i - phi_i)(f_i(u) - f_i(phi)); component axis first."""
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    d = u - phi
    df = np.tensordot(model.A, d, axes=(1, 0))
    s = model.sigma.reshape((-1,) + (1,) * (d.ndim - 1))
    return np.sum(s * d * df, axis=0)


def jacobi_eigenvalues(S: np.ndarray, tol: float = 1e-15, max_sweeps: int = 50) -> np.ndarray:
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(S, dtype=float, copy=True)
    n = a.shape[0]
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[p, q] ** 2 for p in range(n) for q in range(n) if p != q))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


class SigmaValidity(NamedTuple):
    valid: bool
    max_eigenvalue: float
    eigenvalues: np.ndarray


def sigma_validity(model: ReactionModel, sigma=None) -> SigmaValidity:
    """Exact test of I <= 0 for all u, phi: the symmetrized diag(sigma) A is NSD."""
    sig = model.sigma if sigma is None else np.asarray(sigma, dtype=float)
    DA = sig[:, None] * model.A
    S = 0.5 * (DA + DA.T)
    eig = jacobi_eigenvalues(S)
    top = float(eig[-1])
    return SigmaValidity(top <= SIGMA_TOL, top, eig)


class RCheck(NamedTuple):
    ok: bool
    sup_f: np.ndarray
    in_box: bool
    box_excess: float


def R_check(model: ReactionModel, phi) -> RCheck:
    """Check max_i sup_z f_i(phi(z)) <= R on a sampled profile.

    ``phi`` is an (m, n) array or a WaveProfile.  A profile leaving the
    invariant box violates the precondition; that is reported through
    ``in_box`` and makes ``ok`` false.
    """
    phi = np.asarray(getattr(phi, "phi", phi), dtype=float)
    sup_f = np.max(model.rates(phi), axis=1)
    lo_excess = float(np.max(model.box_lo[:, None] - phi))
    hi = np.where(np.isinf(model.box_hi), np.inf, model.box_hi)
    hi_excess = float(np.max(phi - hi[:, None]))
    excess = max(lo_excess, hi_excess, 0.0)
    in_box = excess <= BOX_TOL
    ok = bool(in_box and np.all(sup_f <= model.R_bound + R_CHECK_TOL))
    return RCheck(ok, sup_f, in_box, excess)


def rate_sup_over_box(model: ReactionModel) -> np.ndarray:
    """sup over the invariant box of each affine f_i (may be +inf)."""
    out = model.b0.astype(float).copy()
    for i in range(model.m):
        for j in range(model.m):
            if model.A[i, j] > 0:
                out[i] += model.A[i, j] * model.box_hi[j]
    return out


# -- catalog ------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    text: str
    check: Callable[[dict], bool]
    # (label, function) of the quantity worth quoting when the check fails
    quantity: tuple[str, Callable[[dict], float]] | None = None


@dataclass(frozen=True)
class ModelCatalogEntry:
    name: str
    description: str
    defaults: dict
    constraints: tuple[Constraint, ...]
    sigma_required: bool
    builder: Callable[[dict, np.ndarray | None], ReactionModel]

    def validate(self, params: dict) -> None:
        for c in self.constraints:
            try:
                ok = c.check(params)
            except (ZeroDivisionError, ValueError):
                ok = False
            if not ok:
                shown = ", ".join(f"{k}={params[k]:g}" for k in self.defaults if k in params)
                if c.quantity is not None:
                    label, fn = c.quantity
                    shown = f"{label}={fn(params):g} ({shown})"
                raise ParamError(f"{self.name} requires {c.text}, got {shown}")


def _positive(*names):
    return Constraint(", ".join(names) + " > 0", lambda p: all(p[n] > 0 for n in names))


def _sigma_or_default(sigma, default, m, name):
    if sigma is None:
        if default is None:
            raise ParamError(f"{name} requires an explicit sigma (m={m} positive weights)")
        return np.asarray(default, dtype=float), "paper"
    sig = np.asarray(sigma, dtype=float)
    if sig.shape != (m,) or np.any(~(sig > 0)):
        raise ParamError(f"{name} sigma must be {m} positive weights, got {sigma}")
    return sig, "override"


def _coexistence(A, b0, name):
    try:
        e = np.linalg.solve(A, -b0)
    except np.linalg.LinAlgError:
        raise ParamError(f"{name}: interaction matrix is singular, no coexistence state")
    if np.any(e <= 0):
        raise ParamError(f"{name}: parameters give no positive coexistence state ({e})")
    return e


def _build_pp2(p, sigma):
    r1, r2, a, b = p["r1"], p["r2"], p["a"], p["b"]
    A = np.array([[-r1, -r1 * a], [r2 * b, -r2]])
    b0 = np.array([r1, -r2])
    sig, src = _sigma_or_default(sigma, [1.0 / r1, a / (r2 * b)], 2, "pp2")
    return ReactionModel(
        name="pp2", A=A, b0=b0, sigma=sig, sigma_source=src,
        box_hi=np.array([1.0, b - 1.0]),
        R_bound=max(r1, r2 * (b - 1.0)),
        E_plus=np.array([1.0, 0.0]),
        E_minus=np.array([(1.0 + a) / (1.0 + a * b), (b - 1.0) / (1.0 + a * b)]),
        spreading_rate=r2 * (b - 1.0), params=dict(p),
    )


def _build_competitors3(p, sigma):
    r1, r2, r3, a, b, h, k = (p[n] for n in ("r1", "r2", "r3", "a", "b", "h", "k"))
    A = np.array([[-r1, -r1 * h, r1 * b],
                  [-r2 * k, -r2, r2 * b],
                  [-r3 * a, -r3 * a, -r3]])
    b0 = np.array([-r1, -r2, r3])
    sig, src = _sigma_or_default(sigma, None, 3, "competitors3")
    return ReactionModel(
        name="competitors3", A=A, b0=b0, sigma=sig, sigma_source=src,
        box_hi=np.array([b - 1.0, b - 1.0, 1.0]),
        R_bound=max(r1 * (b - 1.0), r2 * (b - 1.0), r3),
        E_plus=np.array([0.0, 0.0, 1.0]),
        E_minus=_coexistence(A, b0, "competitors3"),
        spreading_rate=max(r1, r2) * (b - 1.0), params=dict(p),
    )


def _tyj_predator_free(p):
    h, k = p["h"], p["k"]
    return (1.0 - h) / (1.0 - h * k), (1.0 - k) / (1.0 - h * k)


def _build_preys3_tyj(p, sigma):
    r1, r2, r3, a, b, h, k = (p[n] for n in ("r1", "r2", "r3", "a", "b", "h", "k"))
    up, vp = _tyj_predator_free(p)
    A = np.array([[-r1, -r1 * h, -r1 * a],
                  [-r2 * k, -r2, -r2 * a],
                  [r3 * b, r3 * b, -r3]])
    b0 = np.array([r1, r2, -r3])
    sig, src = _sigma_or_default(sigma, None, 3, "preys3_tyj")
    return ReactionModel(
        name="preys3_tyj", A=A, b0=b0, sigma=sig, sigma_source=src,
        box_hi=np.array([1.0, 1.0, 2.0 * b - 1.0]),
        R_bound=max(r1, r2, r3 * (2.0 * b - 1.0)),
        E_plus=np.array([up, vp, 0.0]),
        E_minus=_coexistence(A, b0, "preys3_tyj"),
        spreading_rate=r3 * (b * (up + vp) - 1.0), params=dict(p),
    )


def _build_preys3_zyl(p, sigma):
    r1, r2, r3 = p["r1"], p["r2"], p["r3"]
    a1, a2, b1, b2, gam = p["a1"], p["a2"], p["b1"], p["b2"], p["gamma"]
    A = np.array([[-r1, 0.0, -r1 * a1],
                  [0.0, -r2, -r2 * a2],
                  [r3 * b1, r3 * b2, -r3 * gam]])
    b0 = np.array([r1, r2, -r3])
    sig, src = _sigma_or_default(
        sigma, [1.0 / r1, a1 * b2 / (r2 * a2 * b1), a1 / (r3 * b1)], 3, "preys3_zyl")
    return ReactionModel(
        name="preys3_zyl", A=A, b0=b0, sigma=sig, sigma_source=src,
        box_hi=np.array([1.0, 1.0, b1 + b2 - 1.0]),
        R_bound=max(r1, r2, r3 * (b1 + b2 - 1.0)),
        E_plus=np.array([1.0, 1.0, 0.0]),
        E_minus=_coexistence(A, b0, "preys3_zyl"),
        spreading_rate=r3 * (b1 + b2 - 1.0), params=dict(p),
    )


def epidemic_final_size(beta: float, s_star: float, gamma: float) -> float:
    """Root s0 in (0, s*) of ln(s*/s0) = (beta/gamma)(s* - s0).

    Only used as the left state of the initial front guess; the actual left
    limit is measured from the relaxed profile.
    """
    from .spectral import bisect
    k = beta / gamma
    f = lambda s: math.log(s_star / s) - k * (s_star - s)
    lo = s_star * 1e-12
    hi = (1.0 / k) * (1.0 - 1e-12)  # f < 0 at 1/k when k s* > 1
    return bisect(f, lo, hi)


def _build_epidemic(p, sigma):
    beta, s_star, gam = p["beta"], p["s_star"], p["gamma"]
    A = np.array([[0.0, -beta], [beta, 0.0]])
    b0 = np.array([0.0, -gam])
    sig, src = _sigma_or_default(sigma, [1.0, 1.0], 2, "epidemic")
    s0 = epidemic_final_size(beta, s_star, gam)
    return ReactionModel(
        name="epidemic", A=A, b0=b0, sigma=sig, sigma_source=src,
        box_hi=np.array([s_star, math.inf]),
        R_bound=beta * s_star - gam,
        E_plus=np.array([s_star, 0.0]),
        E_minus=np.array([s0, 0.0]),
        spreading_rate=beta * s_star - gam, params=dict(p),
        floating_left=(0,), pin_component=0,
        pulse_guess=(0.0, 0.5 * s_star),
    )


CATALOG: dict[str, ModelCatalogEntry] = {
    e.name: e for e in (
        ModelCatalogEntry(
            "pp2", "predator u2 invading prey u1 (two species)",
            {"r1": 1.0, "r2": 1.0, "a": 0.4, "b": 2.0},
            (_positive("r1", "r2", "a", "b"),
             Constraint("b>1", lambda p: p["b"] > 1),
             Constraint("ab<1", lambda p: p["a"] * p["b"] < 1, ("ab", lambda p: p["a"] * p["b"]))),
            False, _build_pp2),
        ModelCatalogEntry(
            "competitors3", "two weakly competing predators u1, u2 and one prey u3",
            {"r1": 1.0, "r2": 1.0, "r3": 1.0, "a": 0.3, "b": 2.0, "h": 0.5, "k": 0.5},
            (_positive("r1", "r2", "r3", "a", "b"),
             Constraint("b>1", lambda p: p["b"] > 1),
             Constraint("0<a<1/[2(b-1)]", lambda p: 0 < p["a"] < 1.0 / (2.0 * (p["b"] - 1.0))),
             Constraint("0<h<1, 0<k<1", lambda p: 0 < p["h"] < 1 and 0 < p["k"] < 1)),
            True, _build_competitors3),
        ModelCatalogEntry(
            "preys3_tyj", "two weakly competing preys u1, u2 and one predator u3",
            {"r1": 1.0, "r2": 1.0, "r3": 1.0, "a": 0.5, "b": 1.0, "h": 0.5, "k": 0.5},
            (_positive("r1", "r2", "r3", "a", "b"),
             Constraint("0<h<1, 0<k<1", lambda p: 0 < p["h"] < 1 and 0 < p["k"] < 1),
             Constraint("b(u_p+v_p)>1", lambda p: p["b"] * sum(_tyj_predator_free(p)) > 1,
                        ("b(u_p+v_p)", lambda p: p["b"] * sum(_tyj_predator_free(p))))),
            True, _build_preys3_tyj),
        ModelCatalogEntry(
            "preys3_zyl", "two non-competing preys u1, u2 and one predator u3",
            {"r1": 1.0, "r2": 1.0, "r3": 1.0, "a1": 0.5, "a2": 0.5, "b1": 1.0, "b2": 1.0,
             "gamma": 0.5},
            (_positive("r1", "r2", "r3", "a1", "a2", "b1", "b2"),
             Constraint("b1+b2>1", lambda p: p["b1"] + p["b2"] > 1,
                        ("b1+b2", lambda p: p["b1"] + p["b2"])),
             Constraint("gamma>=0", lambda p: p["gamma"] >= 0)),
            False, _build_preys3_zyl),
        ModelCatalogEntry(
            "epidemic", "Kermack-McKendrick susceptible u1 / infective u2",
            {"beta": 2.0, "s_star": 1.0, "gamma": 1.0},
            (_positive("beta", "s_star", "gamma"),
             Constraint("beta*s_star>gamma", lambda p: p["beta"] * p["s_star"] > p["gamma"],
                        ("beta*s_star-gamma", lambda p: p["beta"] * p["s_star"] - p["gamma"]))),
            False, _build_epidemic),
    )
}


def make_model(name: str, params: dict | None = None, sigma=None) -> ReactionModel:
    """Build a catalog model; unspecified parameters take catalog defaults."""
    try:
        entry = CATALOG[name]
    except KeyError:
        raise ParamError(f"unknown model {name!r}; expected one of {sorted(CATALOG)}") from None
    params = dict(params or {})
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ParamError(f"{name} has no parameter(s) {sorted(unknown)}")
    full = {**entry.defaults, **{k: float(v) for k, v in params.items()}}
    entry.validate(full)
    model = entry.builder(full, sigma)
    if not np.all(model.E_minus <= model.box_hi + BOX_TOL) or np.any(model.E_minus < -BOX_TOL):
        raise ParamError(f"{name}: coexistence state {model.E_minus} lies outside the invariant box")
    return model
