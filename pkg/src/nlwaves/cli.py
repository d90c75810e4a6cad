"""Command line entry point.

Exit status: 0 when the verdict passes, 2 when it fails, 1 on error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, NLWaveError
from .harness import (derive, load_config, run_decay, run_experiment, sweep,
                      verdict_passed, _clean)
from .models import CATALOG, make_model, sigma_validity
from .spectral import SpeedProblem, c_R

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _print(obj) -> None:
    print(json.dumps(_clean(obj), indent=2, sort_keys=True))


def _config(args):
    if args.config is None:
        raise ConfigError("--config PATH is required for this command")
    cfg = load_config(args.config[0] if isinstance(args.config, list) else args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args, cfg, name: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    if cfg is not None and cfg.out is not None:
        return Path(cfg.out)
    return Path("runs") / name


def cmd_speed(args) -> int:
    cfg = _config(args)
    model, kernel = cfg.build_model(), cfg.build_kernel()
    d = derive(cfg, model, kernel)
    out = {"model": model.name, "kernel": kernel.spec, "c_star": d.c_star, "c_R": d.c_R,
           "R": d.R, "spreading_rate": d.spreading_rate, "c": d.c, "lambda_c": d.lambda_c,
           "lambda_tail": d.lambda_tail, "argmin_c_R": c_R(SpeedProblem(kernel, d.R)).argmin}
    _print(out)
    return EXIT_PASS


def cmd_models(args) -> int:
    if args.action != "list":
        raise ConfigError(f"unknown models action {args.action!r}; expected 'list'")
    rows = []
    for name, entry in CATALOG.items():
        row = {"name": name, "description": entry.description, "defaults": entry.defaults,
               "constraints": [c.text for c in entry.constraints],
               "sigma_required": entry.sigma_required}
        if not entry.sigma_required:
            m = make_model(name)
            sv = sigma_validity(m)
            row.update(sigma=m.sigma, sigma_valid=sv.valid, R=m.R_bound,
                       spreading_rate=m.spreading_rate, E_plus=m.E_plus, E_minus=m.E_minus)
        rows.append(row)
    _print(rows)
    return EXIT_PASS


def _experiment(command: str):
    def handler(args) -> int:
        cfg = _config(args)
        out = _out(args, cfg, command)
        man = run_experiment(cfg, out, command=command)
        summary = {"status": man["status"], "out": str(out), "verdicts": man.get("verdicts"),
                   "derived": {k: man["derived"].get(k) for k in ("c", "c_star", "c_R", "lambda_c")}}
        if "refinement" in man:
            summary["refinement"] = man["refinement"]
        if "simulation" in man:
            summary["simulation"] = man["simulation"]
        _print(summary)
        return EXIT_PASS if verdict_passed(man) else EXIT_FAIL
    return handler


def cmd_decay(args) -> int:
    cfg = _config(args)
    res = run_decay(cfg, _out(args, cfg, "decay"))
    _print(res)
    return EXIT_PASS if res["pass"] else EXIT_FAIL


def cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep needs at least one --config PATH")
    texts = []
    for path in args.config:
        text = Path(path).read_text()
        if args.seed is not None:
            text += f"\nseed = {args.seed}\n" if "seed" not in text else ""
        texts.append(text)
    out = Path(args.out) if args.out else Path("runs") / "sweep"
    rows = sweep(texts, out, args.parallel)
    _print({"out": str(out), "rows": rows})
    return EXIT_PASS if all(r["status"] == "PASS" for r in rows) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlwaves", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=False):
        if multi:
            sp.add_argument("--config", action="append", metavar="PATH",
                            help="config file (repeat for several runs)")
        else:
            sp.add_argument("--config", metavar="PATH", help="config file")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        sp.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="concurrent runs (sweep only)")

    sp = sub.add_parser("speed", help="c*, c_R and lambda_c for a config")
    common(sp)
    sp.set_defaults(func=cmd_speed)
    sp = sub.add_parser("models", help="model catalog")
    sp.add_argument("action", choices=["list"])
    sp.set_defaults(func=cmd_models)
    for name, text in (("wave", "relax a traveling-wave profile"),
                       ("simulate", "evolve a perturbed wave in the moving frame"),
                       ("verify", "entropy verification of wave stability")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.set_defaults(func=_experiment(name))
    sp = sub.add_parser("decay", help="decay exponent of the linear nonlocal equation")
    common(sp)
    sp.set_defaults(func=cmd_decay)
    sp = sub.add_parser("sweep", help="run several configs, write summary.tsv")
    common(sp, multi=True)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NLWaveError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
