"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, dump_config, load_config, parse_overrides
from .errors import ActiveILError, ConfigurationError
from .metrics import balance_trace, read_event_log

log = logging.getLogger("activeil")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _csv_list(kind):
    def parse(text: str):
        return [kind(x) for x in text.split(",") if x.strip()]
    return parse


def _load(args) -> "ExperimentConfig":  # noqa: F821
    overrides = parse_overrides(args.set)
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    return load_config(args.config, overrides)


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    from .pipeline import default_out_root
    return default_out_root() / name


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(dump_config(cfg), end="")
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run_experiment

    cfg = _load(args)
    out = _out_dir(args, "run")
    summary = run_experiment(cfg, out, jobs=args.jobs, mode=args.mode)
    acc = summary["average_incremental_accuracy"]
    cv = summary["mean_cv_labeled"]
    print(f"{cfg.plan.classical_af}->{cfg.plan.balancing_af} B={cfg.budget:g} ({args.mode}): "
          f"acc {100 * acc['mean']:.2f} ± {100 * acc['std']:.2f}  "
          f"cv {cv['mean']:.3f} ± {cv['std']:.3f}  -> {out / 'summary.json'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import run_sweep, sweep_cells

    cfg = _load(args)
    try:
        cells = sweep_cells(args.budgets, args.classical, args.balancing)
    except ValueError as exc:
        raise ConfigError([("sweep axes", None, str(exc))]) from None
    for cell in cells:
        cfg.with_overrides(**{"budget": cell.budget, "plan.classical_af": cell.classical_af,
                              "plan.balancing_af": cell.balancing_af})
    out = _out_dir(args, "sweep")
    results = run_sweep(cfg, cells, out, jobs=args.jobs, dataset=args.dataset)
    print((out / "table.csv").read_text(encoding="utf-8"), end="")
    failed = [r for r in results if not r["ok"]]
    if failed:
        print(f"{len(failed)} of {len(results)} cells failed; see {out / 'failures.json'}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .data import export_stream
    from .pipeline import build_stream

    cfg = _load(args)
    if cfg.data.source != "synthetic":
        raise ConfigError([("data.source", None, "gen-data needs a synthetic source")])
    out = _out_dir(args, "data")
    stream = build_stream(cfg, cfg.base_seed)
    train, test = export_stream(stream, out)
    print(f"wrote {train} and {test}")
    return EXIT_OK


def cmd_export_report(args) -> int:
    from .plots import plot_balance_trace, plot_state_accuracy

    run_dir = Path(args.run)
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    out = Path(args.out) if args.out else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    curves = {f"seed {r['seed']}": [s["acc_top1"] for s in r["states"]] for r in summary["runs"]}
    written = [plot_state_accuracy(curves, out / "state_accuracy.svg")]
    for r in summary["runs"]:
        if not r.get("event_log"):
            continue
        events = read_event_log(run_dir / r["event_log"])
        state_classes = {s["state"]: [int(c) for c in s["labeled_per_class"]] for s in r["states"]}
        series = balance_trace(events, state_classes)
        written.append(plot_balance_trace(series, out / f"balance_seed{r['seed']}.svg",
                                          title=f"seed {r['seed']}"))
    lines = ["seed,state,acc_top1,cv_labeled,n_labeled"]
    for r in summary["runs"]:
        for s in r["states"]:
            lines.append(f"{r['seed']},{s['state']},{s['acc_top1']:.6f},{s['cv_labeled']:.6f},{s['n_labeled']}")
    (out / "per_state.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="activeil", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", type=Path, default=None,
                       help="YAML config (default: bundled desk-scale benchmark)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. plan.balancing_af=poor")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        if out:
            p.add_argument("--out", type=Path, default=None, help="output directory")

    p = sub.add_parser("validate-config", help="check a config and print it with defaults")
    common(p, out=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one configuration over all seeds")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--mode", choices=("al", "sil", "noil"), default="al",
                   help="active learning, supervised incremental or joint upper bound")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="budget x classical AF x balancing AF grid")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--budgets", type=_csv_list(float), default=[0.2, 0.1, 0.05])
    p.add_argument("--classical", type=_csv_list(str), default=["rand", "core", "ent", "marg"])
    p.add_argument("--balancing", type=_csv_list(str), default=["same", "poor", "b-core"])
    p.add_argument("--dataset", default="synthetic", help="row label in table.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-data", help="export the synthetic stream as CSV")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("export-report", help="plots and per-state CSV from a run directory")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_export_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ActiveILError, OSError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
