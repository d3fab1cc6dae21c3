"""Command line interface: ``treevimp <command> ...``.

Exit status: 0 success, 1 usage error, 2 data error, 3 theory-check failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..forest import Forest, ForestConfig, grow_forest, oob_mse
from ..noising import NoisingMode
from ..tree import Dataset
from ..vimp import delta_exact, delta_mc, mse, permutation_vimp
from .checks import run_theory_checks
from .io import AssociationRow, AssociationTable, DataError, emit_report, load_csv
from .protocol import (AIRQUALITY_ORDER, ProtocolConfig, SIMULATION_LABELS, dump_replicates, run_airquality,
                       run_simulation)

EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 1, 2, 3
MODES = ("lr-random", "lr-splits", "permute")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _fmt(out, explicit):
    if explicit:
        return explicit
    return "json" if out and str(out).endswith(".json") else "csv"


def _load_model(path) -> Forest:
    try:
        return Forest.from_json(Path(path).read_text())
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc


def _load_test(model: Forest, path) -> Dataset:
    response = model.extra.get("response")
    columns = model.extra.get("columns")
    if response is None or columns is None:
        raise DataError("model file lacks 'response'/'columns'; grow it with `treevimp grow`")
    data, _ = load_csv(path, response, "drop", columns)
    return data


def _parse_vars(spec: str, columns: list[str]) -> tuple[int, ...]:
    out = []
    for tok in spec.split(","):
        tok = tok.strip()
        if tok in columns:
            out.append(columns.index(tok))
        elif tok.isdigit() and int(tok) < len(columns):
            out.append(int(tok))
        else:
            raise UsageError(f"unknown variable {tok!r}; columns are {columns}")
    if len(out) not in (1, 2) or len(set(out)) != len(out):
        raise UsageError("--vars takes one variable or two distinct variables")
    return tuple(out)


def _importance(model: Forest, vars, test: Dataset, mode: str, replicates: int, rng, sample: bool = False):
    if mode == "permute":
        return permutation_vimp(model, test, vars, replicates, rng)
    if mode == "lr-splits":
        return delta_mc(model, vars, test, replicates, NoisingMode.SPLITS_ONLY, rng)
    if sample:
        return delta_mc(model, vars, test, replicates, NoisingMode.FULL_RANDOM, rng)
    return delta_exact(model, vars, test)


def cmd_grow(args) -> int:
    data, dropped = load_csv(args.data, args.response, args.missing)
    cfg = ForestConfig(num_trees=args.ntree, mtry=args.mtry, bootstrap=args.bootstrap,
                       min_node_size=args.min_node, seed=args.seed, max_depth=args.max_depth)
    forest = grow_forest(data, cfg, threads=args.threads)
    forest.extra.update({"response": data.response_name, "columns": data.column_names,
                         "rows": data.n, "dropped_rows": dropped})
    if cfg.bootstrap:
        forest.extra["oob_mse"], forest.extra["oob_skipped"] = oob_mse(forest, data)
    _write(forest.to_json() + "\n", args.out)
    return 0


def cmd_vimp(args) -> int:
    model = _load_model(args.model)
    test = _load_test(model, args.test)
    vars = _parse_vars(args.vars, model.extra["columns"])
    res = _importance(model, vars, test, args.mode, args.replicates, np.random.default_rng(args.seed), args.sample)
    out = {"vars": [model.extra["columns"][v] for v in vars], "mode": args.mode, **res.to_dict()}
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def cmd_pairs(args) -> int:
    model = _load_model(args.model)
    test = _load_test(model, args.test)
    cols = model.extra["columns"]
    rng = np.random.default_rng(args.seed)
    singles = [_importance(model, v, test, args.mode, args.replicates, rng, args.sample).delta for v in range(len(cols))]
    ref = model.extra.get("oob_mse") or mse(model, test)
    rows = []
    for v, w in itertools.combinations(range(len(cols)), 2):
        paired = _importance(model, (v, w), test, args.mode, args.replicates, rng, args.sample).delta
        additive = singles[v] + singles[w]
        rows.append(AssociationRow(f"{cols[v]}:{cols[w]}", paired, additive, paired - additive,
                                   (paired - additive) / ref * 100.0))
    table = AssociationTable(rows, float(ref), args.replicates, args.seed, dict(zip(cols, singles)),
                             {"mode": args.mode, "model": str(args.model), "test": str(args.test)},
                             ["reference MSE is the model's out-of-bag MSE when stored, else its test MSE"])
    emit_report(table, _fmt(args.out, args.format), args.out or sys.stdout)
    return 0


def _protocol_config(args) -> ProtocolConfig:
    cfg = ProtocolConfig(seed=args.seed)
    if args.fast:
        cfg = cfg.fast()
    overrides = {"replicates": args.replicates, "num_trees": args.ntree, "mtry": args.mtry}
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_airquality(args) -> int:
    cfg = _protocol_config(args)
    table, results = run_airquality(cfg, threads=args.threads)
    emit_report(table, _fmt(args.out, args.format), args.out or sys.stdout)
    if args.dump_replicates:
        cols = ["Solar", "Wind", "Temp", "Month", "Day"]
        idx = [cols.index(c) for c in AIRQUALITY_ORDER]
        pairs = [(idx[i], idx[j]) for i, j in itertools.combinations(range(len(idx)), 2)]
        Path(args.dump_replicates).write_text(dump_replicates(results, cols, pairs))
    return 0


def cmd_simulate(args) -> int:
    cfg = _protocol_config(args)
    datasets = args.datasets if args.datasets is not None else (20 if args.fast else 100)
    table, results = run_simulation(cfg, n=args.n, num_datasets=datasets, threads=args.threads,
                                    signal=not args.null)
    emit_report(table, _fmt(args.out, args.format), args.out or sys.stdout)
    if args.dump_replicates:
        pairs = list(itertools.combinations(range(6), 2))
        Path(args.dump_replicates).write_text(
            dump_replicates(results, SIMULATION_LABELS, pairs, cfg.replicates))
    return 0


def cmd_check(args) -> int:
    report = run_theory_checks(args.seed, args.trials)
    text = "\n".join(report.lines()) + "\n"
    _write(text, args.out)
    if args.out is not None:
        sys.stdout.write(text)
    return 0 if report.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treevimp", description="Variable importance and pairwise association for regression trees.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", default=None)

    g = sub.add_parser("grow", help="grow a forest from a CSV file")
    g.add_argument("--data", required=True)
    g.add_argument("--response", required=True)
    g.add_argument("--ntree", type=int, default=500)
    g.add_argument("--mtry", type=int, default=None)
    g.add_argument("--min-node", type=int, default=5)
    g.add_argument("--max-depth", type=int, default=None)
    g.add_argument("--bootstrap", action="store_true")
    g.add_argument("--missing", choices=("drop", "error"), default="drop")
    common(g)
    g.set_defaults(func=cmd_grow)

    v = sub.add_parser("vimp", help="importance of one variable or a pair")
    v.add_argument("--model", required=True)
    v.add_argument("--test", required=True)
    v.add_argument("--vars", required=True)
    v.add_argument("--mode", choices=MODES, default="lr-random")
    v.add_argument("--replicates", type=int, default=100)
    v.add_argument("--sample", action="store_true", help="Monte Carlo instead of the exact lr-random value")
    common(v)
    v.set_defaults(func=cmd_vimp)

    pr = sub.add_parser("pairs", help="association table over all variable pairs")
    pr.add_argument("--model", required=True)
    pr.add_argument("--test", required=True)
    pr.add_argument("--mode", choices=MODES, default="lr-random")
    pr.add_argument("--replicates", type=int, default=100)
    pr.add_argument("--sample", action="store_true")
    pr.add_argument("--format", choices=("csv", "json"), default=None)
    common(pr)
    pr.set_defaults(func=cmd_pairs)

    for name, func in (("airquality", cmd_airquality), ("simulate", cmd_simulate)):
        sp = sub.add_parser(name, help=f"{name} association table")
        sp.add_argument("--replicates", type=int, default=None)
        sp.add_argument("--ntree", type=int, default=None)
        sp.add_argument("--mtry", type=int, default=None)
        sp.add_argument("--fast", action="store_true", help="200 trees, 100 replicates (20 datasets)")
        sp.add_argument("--format", choices=("csv", "json"), default=None)
        sp.add_argument("--dump-replicates", default=None)
        common(sp)
        sp.set_defaults(func=func)
        if name == "simulate":
            sp.add_argument("--n", type=int, default=100)
            sp.add_argument("--datasets", type=int, default=None)
            sp.add_argument("--null", action="store_true", help="pure-noise response")

    c = sub.add_parser("check", help="run the identity and invariant suite")
    c.add_argument("--trials", type=int, default=100)
    common(c)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"treevimp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"treevimp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
