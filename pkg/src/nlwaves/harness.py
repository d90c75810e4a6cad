"""Experiment configuration, orchestration and output files.

A config is plain text, one ``key = value`` per line, ``#`` starting a
comment.  Unknown keys and malformed lines are rejected with the line
number.  Every value is checked before any computation starts.

Example::

    model = pp2
    param.a = 0.4
    kernel = gaussian
    kernel.s = 1
    speed = 1.1 cR
    t_end = 200
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .entropy_verify import CONVERGED, OUT_OF_HYPOTHESIS, verify
from .errors import (DomainError, NLWaveError, NoRoot, ParamError, ParseError,
                     ValidationError)
from .kernels import Grid, kernel_from_spec
from .models import CATALOG, R_check, make_model, sigma_validity
from .simulate import (DistanceObserver, NormObserver, SimState, StepControl, bump, run)
from .spectral import SpeedProblem, c_R, lambda_c
from .waves import RelaxOptions, WaveProfile, compute_profile, perturbed, resample

log = logging.getLogger(__name__)

KERNEL_KINDS = ("gaussian", "laplace", "compact_bump", "tabulated")
KERNEL_KEYS = {"gaussian": ("s",), "laplace": ("alpha",), "compact_bump": ("radius",),
               "tabulated": ("path",)}
SPEED_REFS = ("abs", "cstar", "cR")
PERTURBATIONS = ("bump", "offset", "none")


@dataclass(frozen=True)
class SpeedSpec:
    value: float = 1.1
    ref: str = "cstar"

    def text(self) -> str:
        return repr(self.value) if self.ref == "abs" else f"{self.value!r} {self.ref}"


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "bump"
    amplitude: float = 0.2
    center: float = 0.0
    width: float = 5.0
    # the bump center is shifted by a uniform draw from [-jitter, jitter]
    jitter: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    params: tuple = ()
    sigma: tuple | None = None
    kernel: tuple = (("kind", "gaussian"), ("s", 1.0))
    L: float = 200.0
    dx: float = 0.1
    ghost: int | None = None
    speed: SpeedSpec = SpeedSpec()
    perturbation: PerturbationSpec = PerturbationSpec()
    dt: float | None = None
    cfl_advection: float = 0.8
    cfl_reaction: float = 0.5
    t_end: float = 200.0
    cadence: float = 1.0
    seed: int = 0
    relax_tol: float = 1e-11
    relax_max_time: float = 3000.0
    profile: str | None = None
    control_sigmas: tuple = ()
    refine: bool = False
    decay_L: float = 400.0
    decay_dx: float = 0.1
    decay_t_end: float = 500.0
    decay_fit_from: float = 50.0
    decay_dt: float = 0.5
    out: str | None = None

    @property
    def kernel_spec(self) -> dict:
        return dict(self.kernel)

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def build_kernel(self):
        return kernel_from_spec(self.kernel_spec)

    def build_model(self):
        return make_model(self.model, self.param_dict, self.sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.param_dict
        d["kernel"] = self.kernel_spec
        d["control_sigmas"] = [list(s) for s in self.control_sigmas]
        d["sigma"] = None if self.sigma is None else list(self.sigma)
        return d


# -- parsing ---------------------------------------------------------------------

_FLOAT_KEYS = {"L": "L", "dx": "dx", "dt": "dt", "cfl_advection": "cfl_advection",
               "cfl_reaction": "cfl_reaction", "t_end": "t_end", "cadence": "cadence",
               "relax_tol": "relax_tol", "relax_max_time": "relax_max_time",
               "decay.L": "decay_L", "decay.dx": "decay_dx", "decay.t_end": "decay_t_end",
               "decay.fit_from": "decay_fit_from", "decay.dt": "decay_dt"}
_PERT_KEYS = ("amplitude", "center", "width", "jitter")


def _float(text: str, line: int, key: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"expected a number, got {text!r}", line, key) from None
    if not math.isfinite(v):
        raise ParseError(f"expected a finite number, got {text!r}", line, key)
    return v


def _floats(text: str, line: int, key: str) -> tuple:
    parts = text.replace(",", " ").split()
    if not parts:
        raise ParseError("expected a list of numbers", line, key)
    return tuple(_float(p, line, key) for p in parts)


def _bool(text: str, line: int, key: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ParseError(f"expected a boolean, got {text!r}", line, key)


def parse_config(text: str) -> ExperimentConfig:
    """Strict parse of config text; defaults fill every missing key."""
    values: dict = {}
    params: dict = {}
    kernel: dict = {}
    pert: dict = {}
    controls: list = []
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if not val:
            raise ParseError("missing value", lineno, key)
        if key in lines and key != "control_sigma":
            raise ParseError(f"duplicate key (first on line {lines[key]})", lineno, key)
        lines[key] = lineno
        if key == "model":
            values["model"] = val
        elif key.startswith("param."):
            params[key[6:]] = _float(val, lineno, key)
        elif key == "sigma":
            values["sigma"] = _floats(val, lineno, key)
        elif key == "control_sigma":
            controls.append(_floats(val, lineno, key))
        elif key == "kernel":
            kernel["kind"] = val
        elif key.startswith("kernel."):
            sub = key[7:]
            kernel[sub] = val if sub == "path" else _float(val, lineno, key)
        elif key == "ghost":
            values["ghost"] = None if val == "auto" else int(_float(val, lineno, key))
        elif key == "speed":
            parts = val.split()
            if len(parts) == 1:
                values["speed"] = SpeedSpec(_float(parts[0], lineno, key), "abs")
            elif len(parts) == 2 and parts[1] in SPEED_REFS:
                values["speed"] = SpeedSpec(_float(parts[0], lineno, key), parts[1])
            else:
                raise ParseError(f"expected 'speed = C' or 'speed = K cstar|cR', got {val!r}",
                                 lineno, key)
        elif key == "perturbation":
            pert["kind"] = val
        elif key.startswith("perturbation.") and key[13:] in _PERT_KEYS:
            pert[key[13:]] = _float(val, lineno, key)
        elif key == "dt":
            values["dt"] = None if val == "auto" else _float(val, lineno, key)
        elif key in _FLOAT_KEYS:
            values[_FLOAT_KEYS[key]] = _float(val, lineno, key)
        elif key == "seed":
            values["seed"] = int(_float(val, lineno, key))
        elif key == "profile":
            values["profile"] = val
        elif key == "out":
            values["out"] = val
        elif key == "refine":
            values["refine"] = _bool(val, lineno, key)
        else:
            raise ParseError("unknown key", lineno, key)
    if "model" not in values:
        raise ParseError("missing required key", None, "model")
    if kernel:
        kernel.setdefault("kind", "gaussian")
    else:
        kernel = {"kind": "gaussian", "s": 1.0}
    kind = kernel["kind"]
    if kind not in KERNEL_KINDS:
        raise ValidationError(f"unknown kernel {kind!r}; expected one of {KERNEL_KINDS}",
                              lines.get("kernel"), "kernel")
    for k in kernel:
        if k != "kind" and k not in KERNEL_KEYS[kind]:
            raise ParseError(f"kernel {kind} takes {KERNEL_KEYS[kind]}", lines.get(f"kernel.{k}"),
                             f"kernel.{k}")
    defaults = {"gaussian": {"s": 1.0}, "laplace": {"alpha": 1.0},
                "compact_bump": {"radius": 1.0}, "tabulated": {}}[kind]
    kernel = {**defaults, **kernel}
    if kind == "tabulated" and "path" not in kernel:
        raise ValidationError("tabulated kernel needs kernel.path", lines.get("kernel"), "kernel")
    pkind = pert.pop("kind", "bump")
    if pkind not in PERTURBATIONS:
        raise ValidationError(f"unknown perturbation {pkind!r}; expected one of {PERTURBATIONS}",
                              lines.get("perturbation"), "perturbation")
    cfg = ExperimentConfig(
        params=tuple(sorted(params.items())),
        kernel=tuple(sorted(kernel.items())),
        perturbation=PerturbationSpec(kind=pkind, **pert),
        control_sigmas=tuple(controls),
        **values)
    validate(cfg, lines)
    return cfg


def validate(cfg: ExperimentConfig, lines: dict | None = None) -> None:
    """Check every precondition that can be checked without heavy computation."""
    lines = lines or {}

    def fail(msg, key):
        raise ValidationError(msg, lines.get(key), key)

    if cfg.model not in CATALOG:
        fail(f"unknown model {cfg.model!r}; expected one of {sorted(CATALOG)}", "model")
    try:
        model = cfg.build_model()
    except ParamError as exc:
        key = next((k for k in lines if k.startswith("param.")), "model")
        raise ValidationError(str(exc), lines.get(key), key) from None
    try:
        kernel = cfg.build_kernel()
    except (DomainError, OSError, ValueError) as exc:
        fail(f"invalid kernel: {exc}", "kernel")
    for s in cfg.control_sigmas:
        if len(s) != model.m or min(s) <= 0:
            fail(f"control_sigma needs {model.m} positive weights, got {list(s)}", "control_sigma")
    positive = {"L": cfg.L, "dx": cfg.dx, "t_end": cfg.t_end, "cadence": cfg.cadence,
                "relax_tol": cfg.relax_tol, "relax_max_time": cfg.relax_max_time,
                "cfl_advection": cfg.cfl_advection, "cfl_reaction": cfg.cfl_reaction,
                "decay.L": cfg.decay_L, "decay.dx": cfg.decay_dx, "decay.t_end": cfg.decay_t_end,
                "decay.dt": cfg.decay_dt}
    for key, v in positive.items():
        if not v > 0:
            fail(f"must be positive, got {v}", key)
    if cfg.dt is not None and not cfg.dt > 0:
        fail(f"must be positive, got {cfg.dt}", "dt")
    if cfg.dx >= cfg.L:
        fail(f"dx={cfg.dx} must be smaller than L={cfg.L}", "dx")
    if cfg.ghost is not None and cfg.ghost < 0:
        fail("must be nonnegative", "ghost")
    if not 0 <= cfg.decay_fit_from < cfg.decay_t_end:
        fail("must lie in [0, decay.t_end)", "decay.fit_from")
    if not cfg.speed.value > 0:
        fail(f"speed must be positive, got {cfg.speed.value}", "speed")
    p = cfg.perturbation
    if p.kind != "none":
        if not 0 < p.amplitude < 1:
            fail(f"amplitude is a fraction of the box and must lie in (0, 1), got {p.amplitude}",
                 "perturbation.amplitude")
        if not p.width > 0 or p.jitter < 0:
            fail("width must be positive and jitter nonnegative", "perturbation.width")
        if abs(p.center) + p.width + p.jitter >= cfg.L:
            fail("perturbation support leaves the grid", "perturbation.center")
    if cfg.ghost is not None:
        try:
            Grid.build(cfg.L, cfg.dx, ghost=cfg.ghost).check_kernel(kernel)
        except NLWaveError as exc:
            fail(str(exc), "ghost")


def config_text(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse_config(config_text(c)) == c."""
    out = [f"model = {cfg.model}"]
    out += [f"param.{k} = {v!r}" for k, v in cfg.params]
    if cfg.sigma is not None:
        out.append("sigma = " + " ".join(repr(float(x)) for x in cfg.sigma))
    out += ["control_sigma = " + " ".join(repr(float(x)) for x in s) for s in cfg.control_sigmas]
    ker = cfg.kernel_spec
    out.append(f"kernel = {ker['kind']}")
    out += [f"kernel.{k} = {v if k == 'path' else repr(v)}" for k, v in cfg.kernel if k != "kind"]
    out += [f"L = {cfg.L!r}", f"dx = {cfg.dx!r}",
            f"ghost = {'auto' if cfg.ghost is None else cfg.ghost}",
            f"speed = {cfg.speed.text()}",
            f"perturbation = {cfg.perturbation.kind}"]
    out += [f"perturbation.{k} = {getattr(cfg.perturbation, k)!r}" for k in _PERT_KEYS]
    out.append(f"dt = {'auto' if cfg.dt is None else repr(cfg.dt)}")
    for key, attr in _FLOAT_KEYS.items():
        if key not in ("L", "dx", "dt"):
            out.append(f"{key} = {getattr(cfg, attr)!r}")
    out += [f"seed = {cfg.seed}", f"refine = {'true' if cfg.refine else 'false'}"]
    if cfg.profile is not None:
        out.append(f"profile = {cfg.profile}")
    if cfg.out is not None:
        out.append(f"out = {cfg.out}")
    return "\n".join(out) + "\n"


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# -- derived quantities ------------------------------------------------------------


@dataclass
class Derived:
    c_star: float
    c_R: float
    R: float
    spreading_rate: float
    c: float
    lambda_c: float | None
    lambda_tail: float | None


def derive(cfg: ExperimentConfig, model=None, kernel=None) -> Derived:
    model = model or cfg.build_model()
    kernel = kernel or cfg.build_kernel()
    star = c_R(SpeedProblem(kernel, model.spreading_rate))
    crr = c_R(SpeedProblem(kernel, model.R_bound))
    base = {"abs": 1.0, "cstar": star.value, "cR": crr.value}[cfg.speed.ref]
    c = cfg.speed.value * base
    try:
        lam = lambda_c(SpeedProblem(kernel, model.R_bound), c, crr)
    except NoRoot:
        lam = None
    try:
        tail = lambda_c(SpeedProblem(kernel, model.spreading_rate), c, star)
    except NoRoot:
        tail = None
    return Derived(star.value, crr.value, model.R_bound, model.spreading_rate, c, lam, tail)


def initial_state(cfg: ExperimentConfig, profile: WaveProfile, model) -> np.ndarray:
    """Perturbed profile per the config; randomness drawn from the seeded generator."""
    p = cfg.perturbation
    rng = np.random.default_rng(cfg.seed)
    jitter = float(rng.uniform(-p.jitter, p.jitter)) if p.jitter > 0 else 0.0
    if p.kind == "none":
        return profile.phi.copy()
    if p.kind == "bump":
        return perturbed(profile, model, p.amplitude, p.center + jitter, p.width)
    # offset toward E- on z >= center, a perturbation without exponential decay ahead
    step = np.clip((profile.z - p.center - jitter) / p.width + 0.5, 0.0, 1.0)
    ramp = step * step * (3.0 - 2.0 * step)
    return profile.phi + p.amplitude * (profile.E_minus - profile.E_plus)[:, None] * ramp[None, :]


# -- output files ------------------------------------------------------------------


def _clean(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return _clean(x.item())
    return x


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def write_trace(path: Path, rows) -> str:
    """NDJSON with sorted keys; returns the SHA-256 of the file."""
    h = hashlib.sha256()
    with open(path, "w") as fh:
        for row in rows:
            line = json.dumps(_clean(row), sort_keys=True) + "\n"
            fh.write(line)
            h.update(line.encode())
    return h.hexdigest()


def versions() -> dict:
    return {"nlwaves": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class Manifest:
    """manifest.json kept on disk from the start of a run to its end."""

    def __init__(self, out: Path, cfg: ExperimentConfig, command: str):
        self.path = out / "manifest.json"
        self.data = {"status": "RUNNING", "command": command, "config": cfg.to_dict(),
                     "config_text": config_text(cfg), "seed": cfg.seed,
                     "versions": versions(), "derived": {}, "verdicts": {}, "outputs": {}}
        self._t0 = time.time()
        self.flush()

    def flush(self) -> None:
        _write_json(self.path, self.data)

    def finish(self, status: str, error: BaseException | None = None) -> dict:
        self.data["status"] = status
        self.data["wall_clock_seconds"] = time.time() - self._t0
        if error is not None:
            self.data["error"] = {"type": type(error).__name__, "message": str(error)}
        self.flush()
        return self.data


# -- pipelines ---------------------------------------------------------------------


def _grid(cfg: ExperimentConfig, kernel, dx: float | None = None) -> Grid:
    return Grid.build(cfg.L, cfg.dx if dx is None else dx, kernel, cfg.ghost)


def _control(cfg: ExperimentConfig, grid: Grid, c: float, model) -> StepControl:
    if cfg.dt is not None:
        return StepControl(cfg.dt, cfg.cfl_advection, cfg.cfl_reaction)
    return StepControl.auto(grid, c, model, cfg.cfl_advection, cfg.cfl_reaction)


def _profile(cfg: ExperimentConfig, model, kernel, grid: Grid, c: float,
             initial=None) -> WaveProfile:
    if cfg.profile is not None and initial is None:
        prof = WaveProfile.load(cfg.profile)
        if prof.grid.n != grid.n or abs(prof.grid.dx - grid.dx) > 1e-12:
            raise DomainError(f"profile {cfg.profile} is on a different grid")
        return prof
    opts = RelaxOptions(tol=cfg.relax_tol, max_time=cfg.relax_max_time)
    return compute_profile(model, kernel, c, grid, opts, initial=initial)


def _profile_summary(prof: WaveProfile, model) -> dict:
    rc = R_check(model, prof.phi)
    return {"c": prof.c, "residual_sup": prof.residual_sup,
            "discrete_residual": prof.discrete_residual, "relax_time": prof.relax_time,
            "flags": list(prof.flags), "E_minus": prof.E_minus, "E_plus": prof.E_plus,
            "pin_error": prof.pin_error(), "lambda_tail": prof.lambda_tail,
            "far_field": prof.far_field.describe(),
            "R_check": {"ok": rc.ok, "sup_f": rc.sup_f, "in_box": rc.in_box}}


def _trace_rows(monitors, label_prefix: str = "") -> list:
    rows = []
    for mon in monitors:
        label = label_prefix + "sigma=" + ",".join(repr(float(s)) for s in mon.config.sigma)
        for rec in mon.trace.records():
            rows.append({"monitor": label, **rec})
    return rows


def _verify_once(cfg, model, kernel, grid, c, control, initial_profile=None):
    prof = _profile(cfg, model, kernel, grid, c, initial=initial_profile)
    u0 = initial_state(cfg, prof, model)
    sigmas = (None, *cfg.control_sigmas)
    _, results = verify(prof, model, kernel, u0, cfg.t_end, control, cfg.cadence, sigmas=sigmas)
    return prof, results


def run_experiment(cfg: ExperimentConfig, out: str | Path, command: str = "verify") -> dict:
    """Full pipeline: speeds, wave, perturbed run, entropy verification, outputs.

    Writes manifest.json (before and after), profile.dat and trace.ndjson in
    ``out``.  Returns the final manifest.  Module errors are recorded in the
    manifest with status FAILED and re-raised.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out, cfg, command)
    try:
        model = cfg.build_model()
        kernel = cfg.build_kernel()
        sv = sigma_validity(model)
        d = derive(cfg, model, kernel)
        man.data["derived"] = {
            "c_star": d.c_star, "c_R": d.c_R, "R": d.R, "spreading_rate": d.spreading_rate,
            "c": d.c, "c_over_c_R": d.c / d.c_R, "lambda_c": d.lambda_c,
            "lambda_tail": d.lambda_tail, "sigma": model.sigma,
            "sigma_source": model.sigma_source,
            "sigma_validity": {"valid": sv.valid, "eigenvalues": sv.eigenvalues},
            "control_sigma_validity": [
                {"sigma": list(s), "valid": sigma_validity(model, s).valid,
                 "eigenvalues": sigma_validity(model, s).eigenvalues}
                for s in cfg.control_sigmas],
            "model": model.describe(), "kernel": kernel.spec,
        }
        man.flush()
        if d.lambda_c is None:
            raise NoRoot(f"speed c={d.c:.12g} is below c_R={d.c_R:.12g}; the weight rate "
                         f"lambda_c does not exist", c_R=d.c_R)
        grid = _grid(cfg, kernel)
        control = _control(cfg, grid, d.c, model)
        man.data["derived"].update({"grid": {"L": grid.L, "dx": grid.dx, "n": grid.n,
                                             "ghost": grid.g}, "dt": control.dt})
        man.flush()

        if command == "wave":
            prof = _profile(cfg, model, kernel, grid, d.c)
            prof.save(out / "profile.dat")
            man.data["profile"] = _profile_summary(prof, model)
            man.data["outputs"]["profile"] = "profile.dat"
            ok = prof.residual_sup <= 1e-6 and "far_field_mismatch" not in prof.flags
            man.data["verdicts"]["wave"] = "PASS" if ok else "FAIL"
            return man.finish("COMPLETED")

        if command == "simulate":
            prof = _profile(cfg, model, kernel, grid, d.c)
            prof.save(out / "profile.dat")
            man.data["profile"] = _profile_summary(prof, model)
            u0 = initial_state(cfg, prof, model)
            norms = NormObserver(cfg.cadence)
            dist = DistanceObserver(prof.phi, grid, grid.L / 4, cfg.cadence)
            state = SimState(0.0, prof.far_field.apply(u0, grid.dx), d.c, prof.far_field)
            res = run(state, model, kernel, grid, control, cfg.t_end, [norms, dist])
            rows = [{**a, **b} for a, b in zip(norms.records, dist.records)]
            man.data["outputs"]["trace_sha256"] = write_trace(out / "trace.ndjson", rows)
            man.data["outputs"].update({"profile": "profile.dat", "trace": "trace.ndjson"})
            man.data["simulation"] = {"final_local_distance": rows[-1]["sup_dist"],
                                      "clamp_count": res.state.clamp_count}
            return man.finish("COMPLETED")

        prof, results = _verify_once(cfg, model, kernel, grid, d.c, control)
        prof.save(out / "profile.dat")
        man.data["profile"] = _profile_summary(prof, model)
        monitors = [m for m, _ in results]
        rows = _trace_rows(monitors)
        verdicts = {"primary": results[0][1]}
        for (m, v) in results[1:]:
            verdicts["control sigma=" + ",".join(repr(float(s)) for s in m.config.sigma)] = v
        if cfg.refine:
            fine_grid = _grid(cfg, kernel, cfg.dx / 2)
            fine_control = replace(control, dt=control.dt / 2)
            fine_prof, fine_results = _verify_once(cfg, model, kernel, fine_grid, d.c,
                                                   fine_control, resample(prof, fine_grid))
            fine_prof.save(out / "profile_fine.dat")
            man.data["profile_fine"] = _profile_summary(fine_prof, model)
            rows += _trace_rows([m for m, _ in fine_results], "fine ")
            refinement = []
            for (m, v), (_, fv) in zip(results, fine_results):
                coarse, fine = v["max_positive_residual"], fv["max_positive_residual"]
                refinement.append({
                    "sigma": m.config.sigma, "sigma_valid": v["sigma_valid"],
                    "coarse": coarse, "fine": fine,
                    "ratio": coarse / fine if fine > 0 else math.inf,
                    "halves": fine <= 0.5 * coarse,
                    "wave_residual_ratio": prof.residual_sup / fine_prof.residual_sup,
                    "fine_verdict": fv["verdict"]})
            man.data["refinement"] = refinement
        man.data["verdicts"] = verdicts
        man.data["outputs"]["trace_sha256"] = write_trace(out / "trace.ndjson", rows)
        man.data["outputs"].update({"profile": "profile.dat", "trace": "trace.ndjson"})
        return man.finish("COMPLETED")
    except BaseException as exc:
        man.finish("FAILED", exc)
        raise


def verdict_passed(manifest: dict) -> bool:
    """Pass/fail of a completed manifest; out-of-hypothesis runs make no claim."""
    if manifest.get("status") != "COMPLETED":
        return False
    verdicts = manifest.get("verdicts", {})
    if "wave" in verdicts:
        return verdicts["wave"] == "PASS"
    primary = verdicts.get("primary")
    if primary is None:
        return True
    if primary["verdict"] == OUT_OF_HYPOTHESIS:
        return True
    ok = primary["verdict"] == CONVERGED
    for r in manifest.get("refinement", []):
        if r["sigma_valid"]:
            ok = ok and r["halves"] and r["fine_verdict"] == CONVERGED
    return ok


def run_decay(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    from .simulate import linear_decay_experiment

    kernel = cfg.build_kernel()
    grid = Grid.build(cfg.decay_L, cfg.decay_dx, kernel)
    v0 = bump(grid.z, 0.0, 5.0)[None, :]
    res = linear_decay_experiment(kernel, v0, grid, cfg.decay_t_end, dt=cfg.decay_dt,
                                  fit_from=cfg.decay_fit_from)
    summary = {"slope": res.slope, "intercept": res.intercept, "reference_slope": -0.5,
               "pass": -0.6 <= res.slope <= -0.4,
               "outside_mass_fraction": res.outside_mass_fraction,
               "grid": {"L": grid.L, "dx": grid.dx, "n": grid.n}, "t_end": cfg.decay_t_end}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [{"t": float(t), "sup": float(s)} for t, s in zip(res.times, res.sup_norms)]
        summary["trace_sha256"] = write_trace(out / "trace.ndjson", rows)
        _write_json(out / "manifest.json", {"status": "COMPLETED", "command": "decay",
                                            "config": cfg.to_dict(), "versions": versions(),
                                            "decay": summary})
    return summary


# -- sweep -------------------------------------------------------------------------

SUMMARY_COLUMNS = ("run", "model", "c", "c_over_c_R", "verdict", "final_local_distance",
                   "max_positive_residual", "status", "error")


def _sweep_one(args) -> dict:
    idx, text, out = args
    row = dict.fromkeys(SUMMARY_COLUMNS, "")
    row["run"] = idx
    run_dir = Path(out) / f"run_{idx:03d}"
    try:
        cfg = parse_config(text) if isinstance(text, str) else text
        row["model"] = cfg.model
        man = run_experiment(cfg, run_dir)
        prim = man["verdicts"]["primary"]
        row.update(c=man["derived"]["c"], c_over_c_R=man["derived"]["c_over_c_R"],
                   verdict=prim["verdict"], final_local_distance=prim["final_local_distance"],
                   max_positive_residual=prim["max_positive_residual"],
                   status="PASS" if verdict_passed(man) else "FAIL")
    except (NLWaveError, OSError) as exc:
        row.update(status="ERROR", error=f"{type(exc).__name__}: {exc}")
    return row


def sweep(configs, out: str | Path, parallel: int = 1) -> list[dict]:
    """Run configs (text or parsed) in isolated subdirectories; write summary.tsv."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, c, str(out)) for i, c in enumerate(configs)]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    with open(out / "summary.tsv", "w") as fh:
        fh.write("\t".join(SUMMARY_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(r[k]) for k in SUMMARY_COLUMNS) + "\n")
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v).replace("\t", " ").replace("\n", " ")
