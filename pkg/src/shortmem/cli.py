"""Command-line entry point: ``shortmem <subcommand> ...``.

Every command that writes ``--out FILE`` also writes ``FILE.manifest.json``
recording the argv, the parsed flags, input file hashes and library versions.
Exit codes: 0 success, 1 usage error, 2 budget/validation/model failure,
3 internal error. Errors are printed to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from . import exactplan, gen, lab, observability, smp
from .errors import ModelFormatError, ShortmemError
from . import model as modelio


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {text}")
    return v


def _positive_int(text):
    v = int(float(text))
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _budget(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"budget must be positive, got {text}")
    return int(v)


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p, model=True, out=False, seed=False, budget=None):
    if model:
        p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--out", required=out, help="output file")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    if seed:
        p.add_argument("--seed", type=_seed, default=0)
    if budget is not None:
        p.add_argument("--budget", type=_budget, default=budget)


def build_parser():
    p = _Parser(prog="shortmem", description="Short-memory planning for observable POMDPs.")
    p.add_argument("--version", action="version", version=f"shortmem {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("plan", help="short-memory planner; writes a policy file")
    _common(q, budget=smp.DEFAULT_TABLE_BUDGET)
    q.add_argument("--window", type=int, required=True, help="window length L")
    q.add_argument("--mode", choices=("dense", "reachable"), default="dense")

    q = sub.add_parser("exact", help="exact optimal value by belief-tree search")
    _common(q, budget=exactplan.DEFAULT_BUDGET)
    q.add_argument("--dump-tree", help="write the optimal policy tree as JSON")

    q = sub.add_parser("eval", help="value of a policy file")
    _common(q, seed=True, budget=exactplan.DEFAULT_BUDGET)
    q.add_argument("--policy", required=True, help="policy JSON from plan, a tree from exact --dump-tree, or 'uniform'")
    q.add_argument("--method", choices=("exact", "mc"), default="exact")
    q.add_argument("--samples", type=_positive_int, default=10000)
    q.add_argument("--confidence", type=float, default=0.99)

    q = sub.add_parser("gamma", help="per-step observability table")
    _common(q, seed=True)
    q.add_argument("--method", choices=("auto", "exact", "mc"), default="auto")
    q.add_argument("--samples", type=_positive_int, default=1000)
    q.add_argument("--format", choices=("text", "csv"), default="text")

    q = sub.add_parser("contract", help="expected belief error against window length")
    _common(q, seed=True, budget=exactplan.DEFAULT_BUDGET)
    q.add_argument("--anchor", type=int, default=2, help="restart step h")
    q.add_argument("--t-max", type=int, required=True)
    q.add_argument("--trials", type=_positive_int, default=1000)
    q.add_argument("--method", choices=("mc", "exact-tree"), default="mc")
    q.add_argument("--policy", choices=("uniform", "open-loop"), default="uniform")
    q.add_argument("--format", choices=("text", "csv"), default="csv")

    q = sub.add_parser("check", help="one-step contraction inequalities on random instances")
    _common(q, model=False, seed=True)
    q.add_argument("--trials", type=_positive_int, default=500)

    q = sub.add_parser("gen", help="generate a model file")
    _common(q, model=False, out=True, seed=True)
    q.add_argument("kind", help="sat | hadamard | contraction-lb | random | random-pomdp | example:<name>")
    q.add_argument("--cnf", help="DIMACS CNF file (sat, hadamard)")
    q.add_argument("--gamma", type=float)
    q.add_argument("--trials", type=int, help="trial count T (sat)")
    q.add_argument("--block-size", type=int)
    q.add_argument("--steps-per-trial", type=int)
    q.add_argument("--size-budget", type=_budget, default=gen.DEFAULT_SIZE_BUDGET)
    q.add_argument("--horizon", type=int)
    q.add_argument("--states", type=int)
    q.add_argument("--actions", type=int)
    q.add_argument("--observations", type=int)
    q.add_argument("--eps", type=float)
    q.add_argument("--m", type=int)

    q = sub.add_parser("compare", help="short-memory planner against the optimum for several windows")
    _common(q, budget=exactplan.DEFAULT_BUDGET)
    q.add_argument("--windows", type=_int_list, default=[1, 2, 3])
    q.add_argument("--mode", choices=("dense", "reachable"), default="dense")
    q.add_argument("--table-budget", type=_budget, default=smp.DEFAULT_TABLE_BUDGET)
    q.add_argument("--no-bound", action="store_true")
    q.add_argument("--format", choices=("text", "csv"), default="csv")
    return p


# ---------------------------------------------------------------------------
# helpers


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(args, argv, inputs):
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "argv": list(argv),
        "command": args.command,
        "flags": flags,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.isfile(p)},
        "versions": {"shortmem": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "seed": flags.get("seed"),
    }
    with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)


def _emit(args, text, inputs, argv):
    """Write primary output to ``--out`` (plus manifest) or stdout."""
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(args, argv, inputs)
    else:
        sys.stdout.write(text)


def _table(rows, columns):
    cells = [[str(c) for c in columns]] + [["" if r.get(c) is None else _fmt_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n" for row in cells)


def _fmt_cell(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _csv(rows, columns):
    import csv

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in columns])
    return buf.getvalue()


class TreePolicy:
    """Deterministic policy read from an ``exact --dump-tree`` file."""

    def __init__(self, nodes):
        self.table = {(tuple(n["actions"]), tuple(n["observations"])): int(n["action"]) for n in nodes}

    def __call__(self, actions, observations):
        return self.table.get((tuple(actions), tuple(observations)), 0)


def _load_policy(path, pomdp):
    if path == "uniform":
        return lab.UniformRandomPolicy(pomdp.num_actions)
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", path) from None
    if isinstance(d, dict) and "nodes" in d:
        return TreePolicy(d["nodes"])
    pol = smp.SmpPolicy.from_dict(d, path)
    pol.pomdp = pomdp
    return pol


# ---------------------------------------------------------------------------
# subcommands


def cmd_plan(args, argv):
    pomdp = modelio.load(args.model)
    pol = smp.smp_plan(pomdp, args.window, args.mode, args.budget, args.threads)
    if args.out:
        pol.save(args.out)
        _write_manifest(args, argv, [args.model])
    print(json.dumps({"value_estimate": pol.value_estimate, "window": args.window, "mode": args.mode}))


def cmd_exact(args, argv):
    pomdp = modelio.load(args.model)
    v, pol = exactplan.solve_exact(pomdp, args.budget, args.threads)
    if args.dump_tree:
        exactplan.dump_policy_tree(pomdp, pol, args.dump_tree, args.budget)
    _emit(args, json.dumps({"value": v, "nodes": pol.num_nodes}) + "\n", [args.model], argv)


def cmd_eval(args, argv):
    pomdp = modelio.load(args.model)
    pol = _load_policy(args.policy, pomdp)
    if args.method == "exact":
        out = {"method": "exact", "value": exactplan.eval_policy_exact(pomdp, pol, args.budget)}
    else:
        est = exactplan.eval_policy_mc(pomdp, pol, args.samples, args.seed, args.confidence, args.threads)
        out = {"method": "mc", "value": est.mean, "half_width": est.half_width,
               "samples": est.samples, "confidence": est.confidence}
    inputs = [args.model] + ([args.policy] if args.policy != "uniform" else [])
    _emit(args, json.dumps(out) + "\n", inputs, argv)


def cmd_gamma(args, argv):
    pomdp = modelio.load(args.model)
    rep = observability.observability_report(pomdp, args.method, args.samples, args.seed, args.threads)
    rows = list(rep.rows())
    cols = ["step", "gamma", "method", "weak_gamma"]
    if args.format == "csv":
        text = _csv(rows, cols)
    else:
        tag = " (upper bound)" if rep.is_upper_bound else ""
        text = _table(rows, cols) + f"pomdp_gamma = {rep.pomdp_gamma:.12g}{tag}\n"
    _emit(args, text, [args.model], argv)


def cmd_contract(args, argv):
    pomdp = modelio.load(args.model)
    if args.policy == "uniform":
        pol = lab.UniformRandomPolicy(pomdp.num_actions)
    else:
        pol = lab.OpenLoopPolicy(pomdp.num_actions)
    rep = observability.observability_report(pomdp, "auto", seed=args.seed)
    gamma = None if rep.is_upper_bound else rep.pomdp_gamma
    curve = lab.contraction_curve(pomdp, pol, args.anchor, args.t_max, args.trials, args.seed, args.method,
                                  args.threads, args.budget, gamma)
    if args.format == "csv":
        text = curve.to_csv()
    else:
        text = _table([vars(p) for p in curve.points], ["t", "mean_l1", "stderr", "trials"])
    _emit(args, text, [args.model], argv)


def cmd_check(args, argv):
    rep = lab.contraction_inequality_suite(args.seed, args.trials)
    _emit(args, rep.to_json() + "\n", [], argv)
    if args.out:
        summary = {k: v.violations for k, v in rep.checks.items()}
        print(json.dumps({"passed": rep.passed, "violations": summary}))


def _build_model(args):
    kind = args.kind
    if kind.startswith("example:"):
        name = kind.split(":", 1)[1]
        params = {"eps": args.eps, "gamma": args.gamma, "m": args.m, "S": args.states, "H": args.horizon}
        params = {k: v for k, v in params.items() if v is not None}
        try:
            return gen.gen_example(name, **params)
        except TypeError as exc:
            raise UsageError(f"example {name!r} does not accept these flags: {exc}") from None
    if kind in ("sat", "hadamard"):
        if not args.cnf:
            raise UsageError(f"gen {kind} needs --cnf FILE")
        formula = gen.load_dimacs(args.cnf)
        if kind == "hadamard":
            return gen.gen_hadamard_sat(formula, args.size_budget)
        if args.gamma is None:
            raise UsageError("gen sat needs --gamma")
        params = gen.SatHardParams(args.gamma, args.trials, args.block_size, args.steps_per_trial)
        return gen.gen_sat_hard(formula, params, args.size_budget)
    if kind == "contraction-lb":
        if args.gamma is None or args.horizon is None:
            raise UsageError("gen contraction-lb needs --gamma and --horizon")
        return gen.gen_contraction_lb(args.gamma, args.horizon)
    if kind == "random":
        need = {"--states": args.states, "--actions": args.actions, "--horizon": args.horizon, "--gamma": args.gamma}
        missing = [k for k, v in need.items() if v is None]
        if missing:
            raise UsageError(f"gen random needs {' '.join(missing)}")
        return gen.gen_random_observable(args.states, args.actions, args.horizon, args.gamma, args.seed)
    if kind == "random-pomdp":
        need = {"--states": args.states, "--actions": args.actions, "--observations": args.observations,
                "--horizon": args.horizon}
        missing = [k for k, v in need.items() if v is None]
        if missing:
            raise UsageError(f"gen random-pomdp needs {' '.join(missing)}")
        return gen.random_pomdp(args.states, args.actions, args.observations, args.horizon, args.seed)
    raise UsageError(f"unknown generator {kind!r}")


def cmd_gen(args, argv):
    pomdp = _build_model(args)
    modelio.save(pomdp, args.out)
    _write_manifest(args, argv, [args.cnf])
    print(json.dumps({"out": args.out, "horizon": pomdp.horizon, "states": pomdp.num_states,
                      "actions": pomdp.num_actions, "observations": pomdp.num_observations}))


def cmd_compare(args, argv):
    pomdp = modelio.load(args.model)
    rows = smp.suboptimality_report(pomdp, args.windows, args.mode, args.budget, args.table_budget,
                                    args.threads, not args.no_bound)
    if args.format == "csv":
        text = smp.report_csv(rows)
    else:
        text = _table([vars(r) for r in rows], list(smp.REPORT_COLUMNS))
    _emit(args, text, [args.model], argv)


COMMANDS = {
    "plan": cmd_plan,
    "exact": cmd_exact,
    "eval": cmd_eval,
    "gamma": cmd_gamma,
    "contract": cmd_contract,
    "check": cmd_check,
    "gen": cmd_gen,
    "compare": cmd_compare,
}


def _fail(code, payload):
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(1, {"error": "UsageError", "message": str(exc)})
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, argv)
    except UsageError as exc:
        return _fail(1, {"error": "UsageError", "message": str(exc)})
    except ShortmemError as exc:
        return _fail(exc.exit_code, exc.to_json())
    except (ValueError, FileNotFoundError) as exc:
        return _fail(1, {"error": type(exc).__name__, "message": str(exc)})
    except AssertionError as exc:
        return _fail(3, {"error": "AssertionError", "message": str(exc)})
    except Exception as exc:  # noqa: BLE001
        return _fail(3, {"error": type(exc).__name__, "message": str(exc)})
    return 0


def main():
    sys.exit(run())
