"""Command-line entry point: ``prophet-kit <command> ...``.

Exit codes: 0 success or check passed, 1 usage or input error, 2 check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import hfunc, montecarlo, policies, ratio
from .instance import InstanceError, derived_stats, gen_hard_instance, load_instance, parse_instance
from .matching import algorithms, bounds, model

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2

TIERS = {
    "ci": {"epsilon": 1 / 200, "schedule": ratio.CONSTANT_2, "target": 0.66},
    "full": {"epsilon": 1 / 10000, "schedule": ratio.FULL_SCHEDULE, "target": 0.688},
}
FULL_CONSTANT_TARGET = 0.686
POLICIES = ("constant", "step", "main", "mam", "car", "hybrid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _header(cmd: str, **cfg) -> None:
    items = " ".join(f"{k}={v}" for k, v in cfg.items())
    print(f"# prophet-kit {cmd} {items}")


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def _write(path: str | None, text: str) -> None:
    if path is None:
        return
    Path(path).write_text(text, encoding="utf-8")


def _count(text: str) -> int:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if val < 1 or val != int(val):
        raise argparse.ArgumentTypeError("trials must be a positive integer")
    return int(val)


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return tuple(float(p) for p in parts)


def _rows(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if ":" in part:
            a, b = part.split(":")
            out.extend(range(int(a), int(b)))
        else:
            out.append(int(part))
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_h(args) -> int:
    _header("h", s=args.s, x=args.x, tol=args.tol)
    print(f"s={_fmt(args.s)} x={_fmt(args.x)} h={_fmt(hfunc.h_eval(args.s, args.x, args.tol))}")
    return EXIT_OK


def cmd_gamma(args) -> int:
    _header("gamma", x0=args.x0, h0=args.h0, s=args.s, betas=",".join(map(str, args.betas)))
    pt = ratio.GammaPoint(args.x0, args.h0, args.s, *args.betas)
    print(f"x0={_fmt(args.x0)} h0={_fmt(args.h0)} s={_fmt(args.s)} "
          f"betas={','.join(_fmt(b) for b in args.betas)} gamma={_fmt(ratio.gamma_eval(pt))}")
    return EXIT_OK


def cmd_certify(args) -> int:
    tier = TIERS[args.tier]
    eps = args.epsilon or tier["epsilon"]
    schedule = ((1.0, args.s),) if args.s is not None else tier["schedule"]
    if args.target is not None:
        target = args.target
    elif args.tier == "full" and args.s is not None:
        target = FULL_CONSTANT_TARGET
    else:
        target = tier["target"]
    warm = args.warm_start if args.warm_start is not None else args.tier == "full"
    _header("certify", tier=args.tier, epsilon=eps, target=target,
            schedule=json.dumps([list(p) for p in schedule]), threads=args.threads,
            warm_start=warm, rows=args.rows or "all")
    cert = ratio.certify_grid(eps, schedule, target, threads=args.threads, warm_start=warm,
                              rows=_rows(args.rows) if args.rows else None)
    text = json.dumps(cert.to_dict(), indent=2)
    _write(args.out, text)
    print(text)
    return EXIT_OK if cert.passed else EXIT_FAILED


def cmd_curves(args) -> int:
    _header("curves", step=args.step, out=args.out, monotonicity=args.monotonicity)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "gamma_mam", "gamma_car", "hybrid"])
        worst = (math.inf, None)
        for row in bounds.curve_rows(args.step):
            w.writerow([repr(float(v)) for v in row])
            worst = min(worst, (row[3], row[0]))
    if args.monotonicity:
        with open(args.monotonicity, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "f1", "f2"])
            for row in bounds.monotonicity_rows(args.step):
                w.writerow([repr(float(v)) for v in row])
    print(f"min hybrid={_fmt(worst[0])} at x={_fmt(worst[1])}")
    return EXIT_OK


def _bundled(name: str) -> str:
    return resources.files("prophet_kit").joinpath("data", name).read_text(encoding="utf-8")


def _prophet_setup(args):
    if args.hard:
        n, p = args.hard.split(",")
        inst = gen_hard_instance(int(n), float(p))
    elif args.instance:
        inst = load_instance(args.instance)
    else:
        inst = parse_instance(_bundled("sample_instance.json"))
    stats = derived_stats(inst)
    if args.policy == "constant":
        return inst, policies.policy_constant(stats), policy_gamma_constant()
    if args.policy == "step":
        pol = policies.policy_step(stats, args.beta)
        a, b = ratio.warmup_terms(step_excess(stats), args.beta)
        return inst, pol, 2 * min(a, b)
    zt = policies.z_select(stats, args.s)
    betas, gamma = ratio.optimize_betas(stats.x0, zt.h0, args.s, ratio.SearchSpec())
    return inst, policies.policy_main(stats, args.s, betas, zt), gamma


def step_excess(stats) -> float:
    """``h = sum_{i,v} (2 x_i^v - p_i^v)^+`` of the instance."""
    inst = stats.instance
    return float(sum(np.maximum(2 * np.asarray(stats.x[i]) - inst.probs(i), 0.0).sum()
                     for i in range(inst.n_items)))


def policy_gamma_constant() -> float:
    return 1 - math.exp(-1)


def cmd_simulate(args) -> int:
    if args.policy in ("constant", "step", "main"):
        inst, pol, gamma = _prophet_setup(args)
        runner = montecarlo.policy_runner(inst, pol)
        bnd = montecarlo.policy_bounds(inst, derived_stats(inst).x, gamma)
        label = f"gamma={_fmt(gamma)}"
    else:
        text = Path(args.matching).read_text(encoding="utf-8") if args.matching else _bundled("sample_matching.json")
        mi = model.parse_matching(text)
        if not mi.x.any():
            mi = model.MatchingInstance(mi.graph, model.brute_force_marginals(mi.graph))
        chk = model.check_lp(mi.graph, mi.x)
        if not chk:
            raise UsageError(f"x violates the LP: {chk}")
        mi = model.normalize_regular(mi.graph, mi.x)
        batch = {"mam": algorithms.mam_batch, "car": algorithms.car_batch, "hybrid": algorithms.hybrid_batch}
        curve = {"mam": bounds.gamma_mam, "car": bounds.gamma_car, "hybrid": bounds.gamma_hybrid}
        runner = montecarlo.matching_runner(mi, batch[args.policy])
        bnd = montecarlo.matching_bounds(mi, curve[args.policy])
        label = "gamma=curve(x^u)"
    _header("simulate", policy=args.policy, trials=args.trials, seed=args.seed, threads=args.threads,
            bound=label)
    rep = montecarlo.estimate(runner, args.trials, args.seed, args.threads)
    dom = montecarlo.dominance_report(rep, bnd)
    _write(args.out, montecarlo.report_json(rep, dom))
    _write(args.csv, dom.to_csv())
    print(f"trials={rep.trials} mean_value={_fmt(rep.mean_value)} passed={dom.passed} "
          f"worst_margin={_fmt(float(dom.margin.min()))}")
    return EXIT_OK if dom.passed else EXIT_FAILED


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    threads = ratio.default_threads()
    p = _Parser(prog="prophet-kit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("h", help="evaluate h_s(x)")
    q.add_argument("--s", type=float, default=2.0)
    q.add_argument("--x", type=float, required=True)
    q.add_argument("--tol", type=float, default=hfunc.DEFAULT_TOL)
    q.set_defaults(func=cmd_h)

    q = sub.add_parser("gamma", help="evaluate the ratio bound at one point")
    q.add_argument("--x0", type=float, required=True)
    q.add_argument("--h0", type=float, required=True)
    q.add_argument("--s", type=float, default=2.0)
    q.add_argument("--betas", type=_triple, required=True, help="beta0,beta1,beta2")
    q.set_defaults(func=cmd_gamma)

    q = sub.add_parser("certify", help="grid certificate for the ratio bound")
    q.add_argument("--tier", choices=sorted(TIERS), default="ci")
    q.add_argument("--s", type=float, default=None, help="constant s instead of the tier schedule")
    q.add_argument("--target", type=float, default=None)
    q.add_argument("--epsilon", type=float, default=None)
    q.add_argument("--rows", default=None, help="subset of grid rows, e.g. 0:100,5000")
    q.add_argument("--warm-start", dest="warm_start", action=argparse.BooleanOptionalAction, default=None)
    q.add_argument("--threads", type=int, default=threads)
    q.add_argument("--out", default=None)
    q.set_defaults(func=cmd_certify)

    q = sub.add_parser("curves", help="matching guarantee curves as CSV")
    q.add_argument("--step", type=float, default=1e-3)
    q.add_argument("--out", required=True)
    q.add_argument("--monotonicity", default=None, help="also write F1/F2 over h")
    q.set_defaults(func=cmd_curves)

    q = sub.add_parser("simulate", help="Monte Carlo check of per-pair or per-edge bounds")
    q.add_argument("--policy", choices=POLICIES, required=True)
    q.add_argument("--instance", default=None, help="prophet instance JSON")
    q.add_argument("--hard", default=None, help="n,p for the generated hard instance")
    q.add_argument("--matching", default=None, help="matching instance JSON")
    q.add_argument("--s", type=float, default=2.0)
    q.add_argument("--beta", type=float, default=0.367)
    q.add_argument("--trials", type=_count, default=10**5)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--threads", type=int, default=threads)
    q.add_argument("--out", default=None)
    q.add_argument("--csv", default=None)
    q.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InstanceError, model.MatchingInputError, ValueError, OSError) as exc:
        print(f"prophet-kit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
