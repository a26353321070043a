"""Command-line entry point: ``python -m lgcmed <subcommand> ...``.

Exit status is 0 on success, 1 for user errors (bad flags, files or model
settings) and 2 for numerical failures.
"""
from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import __version__
from .core import Contrast, LGCMError, NumericalFailure, pack, unpack
from .effects import EffectKind, effect
from .estimator import ConvergenceWarning, fit
from .inference import estimate_effects, gradient_check
from .io import (
    DIAGONAL_FLAG,
    InputError,
    dumps,
    emit_report,
    load_config,
    load_estimates,
    parse_long_csv,
    write_long_csv,
)
from .simulator import counterfactual_oracle, generate, recovery_study


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_times(text: str) -> list[float]:
    """``a:b:step`` (inclusive of b) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"times {text!r}: expected a:b:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise UsageError(f"times {text!r}: need step > 0 and b >= a")
        k = int(np.floor((b - a) / step + 1e-9))
        return [a + i * step for i in range(k + 1)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"times {text!r}: not a number list") from None


def _contrast(text: str, cov: str | None) -> Contrast:
    c = [float(v) for v in cov.split(",")] if cov else []
    try:
        return Contrast.parse(text, c=c)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _kinds(text: str) -> list[EffectKind]:
    try:
        return [EffectKind(k.strip()) for k in text.split(",") if k.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


# -- subcommands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    data = parse_long_csv(args.data, cfg.spec)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        res = fit(cfg.spec, data, cfg.fit_options())
    for w in caught:
        _warn(str(w.message))
    emit_report(res, args.out, seed=cfg.seed)
    print(f"loglik {res.loglik:.10g}  converged {res.converged}  iterations {res.iterations}  "
          f"subjects {res.n_subjects} (dropped {res.dropped_subjects})")
    return 0


def cmd_effects(args) -> int:
    est = load_estimates(args.estimates)
    contrast = _contrast(args.contrast, args.covariates)
    out = estimate_effects(est.params, est.vcov, parse_times(args.times), contrast,
                           _kinds(args.kinds), args.level)
    if est.diagonal_approximation:
        _warn(f"{DIAGONAL_FLAG}: standard errors use only the diagonal of Var(theta)")
    emit_report(out, args.out, seed=est.seed, flags=est.flags, level=args.level)
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if cfg.params is None:
        raise UsageError("config needs \"params\" to simulate")
    opts = cfg.sim_options(seed=args.seed)
    data = generate(cfg.spec, cfg.params, opts)
    write_long_csv(data, args.out)
    print(dumps({"seed": opts.seed, "n": opts.n, "out": args.out}, indent=0).replace("\n", ""))
    return 0


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    if cfg.params is None:
        raise UsageError("config needs \"params\" for the oracle")
    contrast = _contrast(args.contrast, args.covariates)
    r = counterfactual_oracle(cfg.spec, cfg.params, args.t, contrast, args.nmc, args.seed,
                              marginal_c=args.marginal_c)
    rep = {"seed": args.seed, "t": args.t, "n_mc": r.n_mc,
           "nde": r.nde, "nde_mc_se": r.nde_mc_se, "nie": r.nie, "nie_mc_se": r.nie_mc_se,
           "total": r.total, "total_mc_se": r.total_mc_se,
           "closed_form": {k.value: effect(k, cfg.params, args.t, contrast) for k in EffectKind}}
    print(dumps(rep))
    return 0


def cmd_gradcheck(args) -> int:
    est = load_estimates(args.estimates)
    params = est.params
    if args.seed is not None:
        rng = np.random.default_rng(args.seed)
        flat = pack(params.spec, params)
        k = params.layout.n_structural
        flat[:k] += rng.normal(0.0, 0.5, k)
        params = unpack(params.spec, flat)
    errs = gradient_check(params, args.t, _contrast(args.contrast, args.covariates))
    worst = max(errs.values())
    for kind, e in errs.items():
        print(f"{kind:6s} relative error {e:.3e}")
    print(f"max relative error {worst:.3e}")
    return 0 if worst < args.tolerance else 2


def cmd_recovery(args) -> int:
    cfg = load_config(args.config)
    if cfg.params is None:
        raise UsageError("config needs \"params\" for a recovery study")
    n = args.n if args.n is not None else cfg.simulation.get("n")
    if n is None:
        raise UsageError("sample size needed: --n or simulation.n in the config")
    contrast = _contrast(args.contrast, None) if args.contrast else None
    summ = recovery_study(cfg.spec, cfg.params, int(n), args.reps, args.seed,
                          p_x=cfg.simulation.get("p_x", 0.5), nie_t=args.t, contrast=contrast,
                          fit_options=cfg.fit_options())
    text = dumps(summ.as_dict())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if summ.nonconverged or summ.failed:
        _warn(f"{summ.nonconverged} nonconverged and {summ.failed} failed replications excluded")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lgcmed", description="Mediation effects from parallel-process growth models.")
    p.add_argument("--version", action="version", version=f"lgcmed {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit", help="maximum-likelihood fit of a long-format CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("effects", help="effects with delta-method intervals from an estimates file")
    s.add_argument("--estimates", required=True)
    s.add_argument("--times", required=True, help="a:b:step (inclusive) or comma list")
    s.add_argument("--contrast", required=True, help="x,x* or x1,x1*,x2,x2*")
    s.add_argument("--covariates", help="comma list c at which the direct effect is evaluated")
    s.add_argument("--kinds", default="NDE,NIE")
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_effects)

    s = sub.add_parser("simulate", help="generate a long-format CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("oracle", help="Monte Carlo counterfactual effects")
    s.add_argument("--config", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--contrast", required=True)
    s.add_argument("--covariates")
    s.add_argument("--nmc", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--marginal-c", action="store_true", dest="marginal_c")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("gradcheck", help="analytic vs finite-difference effect gradients")
    s.add_argument("--estimates", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--contrast", required=True)
    s.add_argument("--covariates")
    s.add_argument("--seed", type=int, help="perturb the coefficients randomly with this seed")
    s.add_argument("--tolerance", type=float, default=1e-6)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("recovery", help="repeated simulate-and-fit study")
    s.add_argument("--config", required=True)
    s.add_argument("--reps", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--t", type=float, default=1.0, help="time at which the NIE is summarized")
    s.add_argument("--contrast")
    s.add_argument("--out")
    s.set_defaults(func=cmd_recovery)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (LGCMError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
