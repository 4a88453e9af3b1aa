"""Command-line frontend: ``cqrelay {bounds,region,delta,simulate,check}``.

Reports go to ``--output`` (written atomically) or to standard output.
Exit codes: 0 success, 1 failed checks, 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import sys

import numpy as np

from . import checks, relay, sim
from .io import FORMAT_VERSION, FormatError, atomic_write, dumps, load_channel, load_dist, load_network
from .netgen import NetworkError
from .optimize import OptimizerConfig
from .qcore import StateError


class CliError(Exception):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write(path, text)


def _report(command: str, inputs: dict, body: dict) -> str:
    doc = {"format_version": FORMAT_VERSION, "command": command, "inputs": inputs}
    doc.update(body)
    return dumps(_jsonable(doc))


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _eps(s):
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"eps must lie in (0, 1), got {s}")
    return v


def _rate(s):
    v = float(s)
    if not v >= 0.0:
        raise argparse.ArgumentTypeError(f"rates must be non-negative, got {s}")
    return v


def _optimizer_args(p):
    p.add_argument("--resolution", type=int, default=17, help="lattice points per simplex axis")
    p.add_argument("--rounds", type=int, default=2, help="local refinement rounds")
    p.add_argument("--restarts", type=int, default=0, help="random restarts (needs --seed)")
    p.add_argument("--seed", type=int, default=None)


def _config(args) -> OptimizerConfig:
    if args.restarts and args.seed is None:
        raise CliError("--seed is required when --restarts is positive")
    try:
        return OptimizerConfig(resolution=args.resolution, rounds=args.rounds, restarts=args.restarts,
                               seed=0 if args.seed is None else args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_bounds(args) -> int:
    ch = load_channel(args.channel)
    cfg = _config(args)
    reports = relay.all_bounds(ch, cfg, u_size=args.u_size)
    inputs = {"channel": args.channel, "resolution": cfg.resolution, "rounds": cfg.rounds,
              "restarts": cfg.restarts, "seed": args.seed, "u_size": args.u_size}
    _emit(_report("bounds", inputs, {"bounds": {k: r.to_json() for k, r in reports.items()}}), args.output)
    return 0


def cmd_region(args) -> int:
    ch = load_channel(args.channel)
    dist = load_dist(args.dist)
    if dist.ndim != 3 or dist.shape[1:] != ch.sizes:
        raise CliError(f"region needs a p(u,x1,x2) table with trailing shape {ch.sizes}")
    reg = relay.pdf_region(args.b, relay.induced_state(ch, dist), max_pairs=args.max_pairs)
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Jp", "Jq", "jp", "jq", "threshold"])
    for q in reg.inequalities:
        w.writerow([";".join(map(str, q.Jp)), ";".join(map(str, q.Jq)), q.jp, q.jq, repr(q.threshold)])
    grid_text = None
    if args.grid_output is not None:
        rp, rq, s, sb = reg.grid(args.grid)
        g = _stdio.StringIO()
        gw = csv.writer(g, lineterminator="\n")
        gw.writerow(["rp", "rq", "in_S", "in_Sb"])
        for a, c, x, y in zip(rp.ravel(), rq.ravel(), s.ravel(), sb.ravel()):
            gw.writerow([repr(float(a)), repr(float(c)), int(x), int(y)])
        grid_text = g.getvalue()
    _emit(buf.getvalue(), args.output)
    if grid_text is not None:
        atomic_write(args.grid_output, grid_text)
    return 0


def cmd_delta(args) -> int:
    ch = load_channel(args.channel)
    dist = load_dist(args.dist)
    if args.scheme == "partial-decode-forward":
        if args.rates is None:
            raise CliError("partial-decode-forward needs --rates RP RQ")
        rate = tuple(args.rates)
    else:
        if args.rate is None:
            raise CliError(f"{args.scheme} needs --rate")
        rate = args.rate
    rep = relay.finite_delta(args.scheme, ch, dist, rate, args.eps, args.b)
    inputs = {"channel": args.channel, "dist": args.dist, "scheme": args.scheme,
              "rate": list(rate) if isinstance(rate, tuple) else rate, "eps": args.eps, "b": args.b}
    _emit(_report("delta", inputs, {"delta": rep.to_json()}), args.output)
    return 0


def cmd_simulate(args) -> int:
    ch = load_channel(args.channel)
    dist = load_dist(args.dist)
    rates = args.rates if args.rates else ([args.rate] if args.rate is not None else None)
    if rates is None:
        raise CliError("simulate needs --rate or --rates")
    ns = args.n or [1]
    reports = sim.sweep(args.scheme, ch, dist, rates, ns, args.blocks, args.trials, args.seed,
                        msg_size=args.msg_size)
    if args.format == "csv":
        text = sim.sweep_csv(reports)
    else:
        inputs = {"channel": args.channel, "dist": args.dist, "scheme": args.scheme, "rates": rates,
                  "n": ns, "blocks": args.blocks, "trials": args.trials, "seed": args.seed,
                  "msg_size": args.msg_size}
        text = _report("simulate", inputs, {"reports": [r.to_json() for r in reports]})
    _emit(text, args.output)
    return 0


def cmd_check(args) -> int:
    net = load_network(args.network) if args.network else None
    results = checks.run(args.suite, net=net, seed=args.seed)
    ok = all(r.passed for r in results)
    body = {"passed": ok, "results": [r.to_json() for r in results]}
    _emit(_report("check", {"suite": args.suite, "network": args.network, "seed": args.seed}, body),
          args.output)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqrelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="all five rate bounds of a channel")
    p.add_argument("channel")
    _optimizer_args(p)
    p.add_argument("--u-size", type=_positive_int, default=None, help="auxiliary alphabet for partial decode-forward")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("region", help="partial decode-forward inequalities and membership grid")
    p.add_argument("channel")
    p.add_argument("dist", help="p(u,x1,x2) file")
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--grid", type=_positive_int, default=50, help="grid points per axis")
    p.add_argument("--max-pairs", type=_positive_int, default=1 << 16)
    p.add_argument("-o", "--output", help="inequality CSV")
    p.add_argument("--grid-output", help="membership grid CSV")
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("delta", help="finite-block error bound of a scheme")
    p.add_argument("channel")
    p.add_argument("dist")
    p.add_argument("--scheme", choices=relay.SCHEMES, required=True)
    p.add_argument("--rate", type=_rate)
    p.add_argument("--rates", type=_rate, nargs=2, metavar=("RP", "RQ"))
    p.add_argument("--eps", type=_eps, required=True)
    p.add_argument("--b", type=_positive_int, required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("simulate", help="Monte Carlo error of a scheme's random code")
    p.add_argument("channel")
    p.add_argument("dist")
    p.add_argument("--scheme", choices=sim.SIM_SCHEMES, required=True)
    p.add_argument("--rate", type=_rate)
    p.add_argument("--rates", type=_rate, nargs="+", help="rate sweep")
    p.add_argument("--n", type=_positive_int, nargs="+", help="channel uses per block")
    p.add_argument("--blocks", type=int, required=True)
    p.add_argument("--trials", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--msg-size", type=_positive_int, default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="run invariant suites")
    p.add_argument("--suite", choices=checks.SUITES + ("all",), default="all")
    p.add_argument("--network", help="network file to validate with the netgen suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        parser.error(str(exc))
    except (FormatError, StateError, NetworkError, ValueError, OSError) as exc:
        print(f"cqrelay {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
