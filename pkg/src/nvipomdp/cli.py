"""Command-line interface.

Exit status is 0 on success, 1 on runtime failures (bad config, corrupt
files, domain mismatch, starvation at the root) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .controller import (
    DEFAULT_MAX_STEPS,
    check_policy_domain,
    dumps_policy,
    evaluate_policy,
    load_policy,
    strip_networks,
)
from .domains import make_domain
from .exceptions import InvalidConfiguration, NviError
from .solver import SolverConfig, load_config, plot_rows, read_trace, solve, timing_csv, trace_csv

DOMAIN_HELP = """\
domain specs:
  tiger
  rocksample:n=7,k=8,seed=3      random rock layout drawn from seed
  rocksample:file=instance.json  layout from an instance file
  lightdark:seed=1[,clusters=20] observation quantizer fit with seed
  explicit:file=model.json       tabular model file
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="nvipomdp",
        description="Neural value iteration for POMDPs.",
        epilog=DOMAIN_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("solve", help="solve a domain and write policy, trace and manifest",
                       epilog=DOMAIN_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("domain", nargs="?", help="domain spec (omit with --from-manifest)")
    s.add_argument("--config", help="JSON solver config")
    s.add_argument("--from-manifest", help="rerun the solve recorded in a manifest")
    s.add_argument("--out", default="nvi-out", help="output directory (default: nvi-out)")
    s.add_argument("--seed", type=_nonneg_int)
    s.add_argument("--time-budget", type=_nonneg_float, help="seconds")
    s.add_argument("--max-backups", type=_nonneg_int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--nb-particle", type=_positive_int)
    s.add_argument("--nb-sim", type=_positive_int)
    s.add_argument("--nb-sample", type=_positive_int)
    s.add_argument("--threads", type=_positive_int, default=1, help="worker cap (the solver itself is serial)")
    s.add_argument("--quiet", action="store_true")

    e = sub.add_parser("evaluate", help="Monte-Carlo evaluation of a policy file")
    e.add_argument("policy")
    e.add_argument("domain")
    e.add_argument("--episodes", type=_positive_int, default=10_000)
    e.add_argument("--seed", type=_nonneg_int, default=0)
    e.add_argument("--threads", type=_positive_int, default=1)
    e.add_argument("--max-steps", type=_positive_int, default=DEFAULT_MAX_STEPS)
    e.add_argument("--out", help="directory for evaluation.json and returns histogram")
    e.add_argument("--bins", type=_positive_int, default=50)

    x = sub.add_parser("export", help="re-export a policy as FSC (no networks) or FNC")
    x.add_argument("policy")
    x.add_argument("--mode", choices=("fsc", "fnc"), required=True)
    x.add_argument("--out", required=True)

    i = sub.add_parser("inspect", help="summarize a policy file")
    i.add_argument("policy")

    t = sub.add_parser("plotdata", help="turn a bound trace into backup,upper,lower,gap columns")
    t.add_argument("trace")
    t.add_argument("--out", required=True)
    return p


def _echo(msg, quiet=False):
    if not quiet:
        print(msg, flush=True)


def _solver_config(args) -> tuple[str, SolverConfig]:
    if args.from_manifest:
        path = Path(args.from_manifest)
        if not path.is_file():
            raise InvalidConfiguration(f"manifest not found: {path}")
        manifest = json.loads(path.read_text())
        spec = manifest["domain"]
        if args.domain and args.domain != spec:
            raise InvalidConfiguration(f"domain {args.domain!r} differs from the manifest's {spec!r}")
        cfg = SolverConfig.from_dict(manifest["config"])
    else:
        if not args.domain:
            raise UsageError("nvipomdp solve: a domain spec is required")
        spec = args.domain
        cfg = load_config(args.config) if args.config else SolverConfig()
    overrides = {
        "seed": args.seed,
        "time_budget": args.time_budget,
        "max_backups": args.max_backups,
        "epsilon": args.epsilon,
        "nb_particle": args.nb_particle,
        "nb_sim": args.nb_sim,
        "nb_sample": args.nb_sample,
    }
    data = cfg.to_dict()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return spec, SolverConfig.from_dict(data)


def cmd_solve(args) -> int:
    spec, cfg = _solver_config(args)
    domain = make_domain(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "policy": "policy.json",
        "trace": "trace.csv",
        "timing": "timing.csv",
        "manifest": "manifest.json",
    }
    manifest = {
        "tool": "nvipomdp",
        "version": __version__,
        "domain": spec,
        "instance": domain.describe(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "outputs": paths,
    }
    # written first so an interrupted run can still be replayed
    (out / paths["manifest"]).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def progress(row, res):
        if not args.quiet and (row.backup_index % 50 == 0 or row.backup_index == 1):
            print(f"backup {row.backup_index}: upper={row.upper:.4f} lower={row.lower:.4f} nodes={row.controller_size}",
                  file=sys.stderr, flush=True)

    result = solve(domain, cfg, callback=progress)
    extra = {"solver": {"status": result.status, "upper": result.upper, "lower": result.lower, "epsilon": result.epsilon}}
    (out / paths["policy"]).write_text(dumps_policy(result.policy(extra)))
    (out / paths["trace"]).write_text(trace_csv(result.trace))
    (out / paths["timing"]).write_text(timing_csv(result.trace))
    _echo(
        f"status={result.status} upper={result.upper:.6g} lower={result.lower:.6g} "
        f"nodes={len(result.controller)} seconds={result.elapsed:.1f}",
        args.quiet,
    )
    return 0


def cmd_evaluate(args) -> int:
    policy = load_policy(args.policy)
    domain = make_domain(args.domain)
    check_policy_domain(policy, domain)
    res = evaluate_policy(policy.fsc, policy.start, domain, args.episodes, args.max_steps, args.seed, args.threads)
    print(f"mean={res.mean:.6g} stderr={res.stderr:.6g} episodes={res.n_episodes}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = {
            "policy": str(args.policy),
            "domain": args.domain,
            "episodes": res.n_episodes,
            "seed": args.seed,
            "max_steps": args.max_steps,
            "mean": res.mean,
            "stderr": res.stderr,
        }
        (out / "evaluation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        counts, edges = np.histogram(res.returns, bins=args.bins)
        lines = ["bin_low,bin_high,count"]
        lines += [f"{edges[i]!r},{edges[i + 1]!r},{int(c)}" for i, c in enumerate(counts)]
        (out / "returns_histogram.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_export(args) -> int:
    policy = load_policy(args.policy)
    if args.mode == "fsc":
        policy = strip_networks(policy)
    elif policy.kind != "fnc":
        raise InvalidConfiguration("an FSC policy has no networks to export as FNC")
    Path(args.out).write_text(dumps_policy(policy))
    return 0


def cmd_inspect(args) -> int:
    policy = load_policy(args.policy)
    actions = policy.header.get("actions", [])
    used = sorted({n.action for n in policy.fsc.nodes})
    info = {
        "kind": policy.kind,
        "domain": policy.header.get("domain"),
        "discount": policy.header.get("discount"),
        "nodes": len(policy.fsc.nodes),
        "start_node": policy.start,
        "start_action": actions[policy.fsc.nodes[policy.start].action] if actions else policy.fsc.nodes[policy.start].action,
        "actions_used": [actions[a] if actions else a for a in used],
    }
    if "solver" in policy.header:
        info["solver"] = policy.header["solver"]
    if policy.networks:
        info["network_layers"] = list(policy.networks[0].layer_dims)
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def cmd_plotdata(args) -> int:
    rows = read_trace(args.trace)
    Path(args.out).write_text(plot_rows(rows))
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
    "inspect": cmd_inspect,
    "plotdata": cmd_plotdata,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (NviError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"nvipomdp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
