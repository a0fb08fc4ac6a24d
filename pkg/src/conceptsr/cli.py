"""Command-line entry point.

    conceptsr run data.csv --target y --llm off --out runs/a
    conceptsr bench suite.json --out runs/bench
    conceptsr synth --count 41 --seed 0 --out synthetic/
    conceptsr fit-scaling scaling.csv --skeleton all --split 0.8

Exit codes: 0 success, 2 usage, 3 IO/config, 4 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, set_dotted
from .errors import ConceptSRError, ConfigError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("conceptsr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_hints(values) -> list:
    hints = []
    for v in values or []:
        path = Path(v)
        if path.is_file():
            hints.extend(line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip())
        else:
            hints.append(v)
    return hints


def _build_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_dotted(cfg, key.strip(), value.strip())
    if getattr(args, "p", None) is not None:
        cfg.p = args.p
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "replay_file", None):
        cfg.llm.replay_path = args.replay_file
    hints = _read_hints(getattr(args, "hints", None))
    if hints:
        cfg.hints = list(cfg.hints) + hints
    if getattr(args, "llm", "off") == "off":
        cfg.p = 0.0
    return cfg.validate()


def _backend(args, cfg):
    from .llmops import HttpBackend, ReplayBackend

    kind = getattr(args, "llm", "off")
    if kind == "off":
        return None
    if kind == "http":
        if cfg.llm.api_key_env and not os.environ.get(cfg.llm.api_key_env):
            raise ConfigError(f"environment variable {cfg.llm.api_key_env} is not set")
        return HttpBackend.from_config(cfg.llm)
    if not cfg.llm.replay_path:
        raise ConfigError("--llm replay needs --replay-file or llm.replay_path")
    return ReplayBackend.load(cfg.llm.replay_path)


def _add_search_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--p", type=float, help="probability of using an LLM operator")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hints", action="append", help="hint text, or a file with one hint per line")
    p.add_argument("--llm", choices=["off", "http", "replay"], default="off")
    p.add_argument("--replay-file", help="line-delimited replay store for --llm replay")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conceptsr", description="Concept-guided symbolic regression.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="search for an expression fitting one CSV dataset")
    p.add_argument("dataset")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    _add_search_flags(p)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("suite")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_search_flags(p)

    p = sub.add_parser("synth", help="generate synthetic problems")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-vars", type=int, default=3)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--max-complexity", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--filter-iterations", type=int, default=0,
                   help="keep only problems a p=0 search fails (MSE > 1) within this many iterations")

    p = sub.add_parser("fit-scaling", help="fit scaling-law skeletons on a CSV")
    p.add_argument("dataset")
    p.add_argument("--skeleton", default="all")
    p.add_argument("--target", default="score")
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--group-by")
    p.add_argument("--bootstrap", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    from .data import load_csv
    from .orchestrator import run

    cfg = _build_config(args)
    d = load_csv(args.dataset, args.target)
    backend = _backend(args, cfg)
    result = run(cfg, d, backend)
    result.write(args.out, cfg, figures=not args.no_figures)
    print(f"{'solved' if result.solved else 'best'}: {result.best.text}  "
          f"(loss={result.best.loss:.6g}, complexity={result.best.complexity}, iterations={result.iterations_used})")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .evalbench import load_suite, run_benchmark

    problems = load_suite(args.suite)
    if not problems:
        print("empty suite", file=sys.stderr)
        return EXIT_USAGE
    cfg = _build_config(args)
    backend = _backend(args, cfg)
    report = run_benchmark(problems, cfg, backend, base_dir=Path(args.suite).parent, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2) + "\n", encoding="utf-8")
    if not args.no_figures:
        from .plots import plot_solve_summary

        plot_solve_summary(report, out / "solves.png")
    for r in report.rows:
        status = "EXACT" if r.exact_solve else ("MSE" if r.mse_solved else ("ERROR" if r.error else "-"))
        print(f"{r.name}\t{status}\t{r.loss:.4g}\t{r.expression or r.error}")
    s = report.summary()
    print(f"exact {s['exact_solve']}/{s['problems']}, mse-solved {s['mse_solved']}/{s['problems']}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import SyntheticSpec, add_target_noise, generate_synthetic, write_csv
    from .evalbench import Problem, save_suite
    from .exprcore import format_expr

    if args.count < 1:
        raise UsageError("--count must be >= 1")
    spec = SyntheticSpec(n_vars=args.n_vars, max_complexity=args.max_complexity, n_samples=args.n_samples, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problems, attempts = [], 0
    while len(problems) < args.count:
        attempts += 1
        if attempts > 50 * args.count:
            raise ConceptSRError("could not generate enough problems passing the filter")
        truth, d = generate_synthetic(spec, rng)
        if args.filter_iterations and not _hard_enough(truth, d, args.filter_iterations, args.seed):
            continue
        if args.noise:
            d = add_target_noise(d, args.noise, rng)
        name = f"synthetic_{len(problems) + 1:03d}"
        write_csv(d, out / f"{name}.csv")
        problems.append(Problem(name=name, ground_truth=format_expr(truth), csv=f"{name}.csv",
                                target=d.target_name, variables=list(d.variable_names)))
    save_suite(problems, out / "suite.json")
    with open(out / "ground_truths.txt", "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(f"{p.name}\t{p.ground_truth}\n")
    print(f"wrote {len(problems)} problems to {out}")
    return EXIT_OK


def _hard_enough(truth, d, iterations, seed) -> bool:
    from .orchestrator import run

    cfg = RunConfig(iterations=iterations, p=0.0, seed=seed, early_stop_mse=1.0)
    return run(cfg, d, None).best.loss > 1.0


def cmd_fit_scaling(args) -> int:
    from .data import load_csv, split
    from .evalbench import SKELETONS, fit_skeleton, format_fit_table

    d = load_csv(args.dataset, args.target)
    names = list(SKELETONS) if args.skeleton == "all" else [args.skeleton]
    for n in names:
        if n not in SKELETONS:
            raise UsageError(f"unknown skeleton {n!r}; choose from {', '.join(SKELETONS)} or all")
    train, val = split(d, args.split, np.random.default_rng(args.seed))
    results = [fit_skeleton(n, train, val, restarts=args.restarts, seed=args.seed,
                            group_by=args.group_by, bootstrap=args.bootstrap) for n in names]
    print(f"train rows: {train.n_rows}, validation rows: {val.n_rows}")
    print(format_fit_table(results))
    for r in results:
        print(f"{r.skeleton}: " + ", ".join(f"{k}={v:.6g}" for k, v in r.params.items()))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        import csv

        with open(out / "scaling_fits.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["skeleton", "free_parameters", "train_mse", "val_mse", "params"])
            for r in results:
                w.writerow([r.skeleton, r.n_params, repr(r.train_mse), repr(r.val_mse), json.dumps(r.params)])
        if not args.no_figures:
            from .plots import plot_scaling_fit

            plot_scaling_fit([(r.skeleton, r.val_mse, r.n_params) for r in results], out / "scaling_fits.png")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "synth": cmd_synth, "fit-scaling": cmd_fit_scaling}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"conceptsr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"conceptsr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ConfigError, ConceptSRError, ValueError) as exc:
        print(f"conceptsr: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"conceptsr: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
