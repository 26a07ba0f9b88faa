"""moses-lab command line: gen-dataset, pretrain, tune, compare, report.

Exit status is 0 on success, 1 for invalid arguments or input files and 2 when
a run fails after validation.  Every subcommand prints the fully resolved
configuration as JSON on stdout before it starts working.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config, data, experiment, metrics, model, tuner
from .errors import MosesLabError
from .model import TrainHyper

log = logging.getLogger("moses_lab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_list(text, cast=str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a non-empty comma-separated list")
    try:
        return [cast(t) for t in items]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="moses-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-dataset", help="measure random configurations on a device")
    g.add_argument("--device", help="device YAML (default: shipped server device)")
    g.add_argument("--tasks", help="task YAML (default: shipped workload)")
    g.add_argument("--samples", type=int, default=6000, help="samples per task")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("pretrain", help="pretrain the cost model on a record file")
    t.add_argument("--dataset", required=True)
    t.add_argument("--tasks")
    t.add_argument("--epochs", type=int, default=TrainHyper.max_epochs)
    t.add_argument("--lr", type=float, default=TrainHyper.learning_rate)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    def lottery_flags(sp):
        mode = sp.add_mutually_exclusive_group()
        mode.add_argument("--ratio", type=float, help="transferable ratio rho")
        mode.add_argument("--threshold", type=float, help="threshold on normalized xi")
        sp.add_argument("--no-adversarial", action="store_true", help="disable the domain-confusion term")
        sp.add_argument("--source-dataset", help="source records for the adversary's replay buffer")

    u = sub.add_parser("tune", help="tune every task with one strategy")
    u.add_argument("--model", help="pretrained model file (not needed for Raw / RandomInit)")
    u.add_argument("--device", help="target device YAML (default: shipped embedded device)")
    u.add_argument("--tasks")
    u.add_argument("--strategy", required=True)
    u.add_argument("--trials", type=int, default=tuner.TuneBudget.trials_per_task)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--report", required=True)
    lottery_flags(u)

    c = sub.add_parser("compare", help="run several strategies over several seeds")
    c.add_argument("--config", help="run YAML (default: shipped flagship config)")
    c.add_argument("--source-device")
    c.add_argument("--target-device")
    c.add_argument("--tasks")
    c.add_argument("--strategies", type=_csv_list)
    c.add_argument("--trials", type=int)
    c.add_argument("--seeds", type=lambda s: _csv_list(s, int))
    c.add_argument("--model", help="reuse a pretrained model instead of pretraining")
    c.add_argument("--out-dir", required=True)
    lottery_flags(c)

    r = sub.add_parser("report", help="render metric rows from metrics CSVs or tune reports")
    r.add_argument("--in", dest="inputs", nargs="+", required=True)
    r.add_argument("--format", choices=["csv", "markdown", "plot-data"], default="csv")
    r.add_argument("--out", required=True)
    return p


def _echo(cfg: dict) -> None:
    print(json.dumps(cfg, sort_keys=True, default=str))


def _lottery_overrides(args, budget: tuner.TuneBudget) -> tuner.TuneBudget:
    from dataclasses import replace

    if args.ratio is not None:
        budget = replace(budget, ratio=args.ratio, threshold=None)
    elif args.threshold is not None:
        budget = replace(budget, ratio=None, threshold=args.threshold)
    if args.no_adversarial:
        budget = replace(budget, adversary=False)
    return budget


def _check_lottery(args):
    if args.ratio is not None and not 0 < args.ratio <= 1:
        raise UsageError(f"--ratio must lie in (0, 1], got {args.ratio}")
    if args.threshold is not None and not 0 <= args.threshold <= 1:
        raise UsageError(f"--threshold must lie in [0, 1], got {args.threshold}")


# ---------------------------------------------------------------------------
# subcommands: each returns a zero-arg callable that does the work, after validation


def _gen_dataset(args):
    device = config.load_device(args.device) if args.device else config.default_source_device()
    tasks = config.load_tasks(args.tasks)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    _echo({"command": "gen-dataset", "device": device.to_dict(), "tasks": [t.to_dict() for t in tasks],
           "samples": args.samples, "seed": args.seed, "out": args.out})

    def run():
        data.write_records(data.generate_dataset(device, tasks, args.samples, args.seed), args.out)
    return run


def _pretrain(args):
    tasks = config.load_tasks(args.tasks)
    hyper = TrainHyper(learning_rate=args.lr, max_epochs=args.epochs, seed=args.seed)
    _echo({"command": "pretrain", "dataset": args.dataset, "tasks": [t.to_dict() for t in tasks],
           "hyper": vars(hyper), "epochs": hyper.max_epochs, "lr": hyper.learning_rate, "out": args.out})

    def run():
        store = data.read_records(args.dataset)
        result = tuner.pretrain(store, tasks, hyper)
        model.save(result.params, args.out)
        log.info("epoch losses: %s", ", ".join(f"{x:.4f}" for x in result.epoch_losses))
    return run


def _tune(args):
    _check_lottery(args)
    strategy = tuner.Strategy.parse(args.strategy)
    if (args.ratio is not None or args.threshold is not None) and strategy.kind is not tuner.StrategyKind.MOSES:
        raise UsageError("--ratio/--threshold only apply to the Moses strategy")
    needs_model = strategy.kind in (tuner.StrategyKind.PRETRAIN_ONLY, tuner.StrategyKind.VANILLA_FINETUNE,
                                    tuner.StrategyKind.MOSES)
    if needs_model and not args.model:
        raise UsageError(f"--model is required for {strategy.label}")
    device = config.load_device(args.device) if args.device else config.default_target_device()
    tasks = config.load_tasks(args.tasks)
    budget = _lottery_overrides(args, tuner.TuneBudget(trials_per_task=args.trials))
    echo = {"command": "tune", "model": args.model, "source_dataset": args.source_dataset, "report": args.report}
    _echo(dict(echo, strategy=strategy.label, seed=args.seed, budget=budget.to_dict(), device=device.to_dict()))

    def run():
        start = model.load(args.model) if args.model else None
        replay = None
        if args.source_dataset:
            replay = tuner.replay_features(data.read_records(args.source_dataset), tasks, 256, 0)
        rep = tuner.tune_workload(strategy, start, device, tasks, budget, args.seed, replay, config_echo=echo)
        Path(args.report).write_text(json.dumps(rep.to_dict(), indent=1), encoding="utf-8")
    return run


def _compare(args):
    _check_lottery(args)
    doc = config.load_run_config(args.config)
    for key, val in (("source_device", args.source_device), ("target_device", args.target_device),
                     ("tasks", args.tasks), ("strategies", args.strategies), ("seeds", args.seeds)):
        if val is not None:
            doc[key] = val
    if args.trials is not None:
        doc.setdefault("budget", {})["trials_per_task"] = args.trials
    setup = experiment.load_setup(doc=doc)
    setup.budget = _lottery_overrides(args, setup.budget)
    strategies = [tuner.Strategy.parse(s).label for s in doc.get("strategies", [])]
    if tuner.StrategyKind.VANILLA_FINETUNE.value not in strategies:
        raise UsageError("--strategies must include VanillaFinetune (the CMAT reference)")
    seeds = list(doc.get("seeds", [0]))
    out = Path(args.out_dir)
    echo = dict(doc, budget=setup.budget.to_dict(), model=args.model, source_dataset=args.source_dataset,
                out_dir=str(out))
    _echo(dict(echo, command="compare"))

    def run():
        out.mkdir(parents=True, exist_ok=True)
        if args.model:
            setup.pretrained = model.load(args.model)
            if args.source_dataset:
                store = data.read_records(args.source_dataset)
                setup.replay = tuner.replay_features(store, setup.tasks, int(doc.get("replay_size", 256)), 0)
        else:
            store = data.read_records(args.source_dataset) if args.source_dataset else None
            experiment.prepare(setup, store)
        result = experiment.compare(setup, strategies, seeds)
        (out / "config.json").write_text(json.dumps(echo, indent=1, sort_keys=True, default=str), encoding="utf-8")
        for (label, seed), rep in sorted(result.reports.items()):
            (out / f"{_slug(label)}_seed{seed}.json").write_text(json.dumps(rep.to_dict(), indent=1), encoding="utf-8")
        (out / "metrics.csv").write_bytes(metrics.build_report(result.rows, "csv"))
        print(metrics.build_report(result.rows, "markdown").decode("utf-8"), end="")
    return run


def _slug(label: str) -> str:
    return label.replace("[", "_").replace("]", "").replace("=", "")


def _rows_from_reports(reports):
    by_seed = {}
    for rep in reports:
        by_seed.setdefault(rep.seed, {})[rep.strategy] = rep
    ref = tuner.StrategyKind.VANILLA_FINETUNE.value
    rows = []
    for seed, group in sorted(by_seed.items()):
        if ref not in group:
            raise UsageError(f"no {ref} report for seed {seed}; it is the CMAT reference")
        rows.extend(metrics.metric_row(group[ref], rep, name) for name, rep in sorted(group.items()))
    return rows


def _report(args):
    _echo({"command": "report", "in": args.inputs, "format": args.format, "out": args.out})
    missing = [p for p in args.inputs if not Path(p).exists()]
    if missing:
        raise UsageError(f"input not found: {missing[0]}")

    def run():
        rows, reports = [], []
        for path in args.inputs:
            raw = Path(path).read_bytes()
            if path.endswith(".csv"):
                rows.extend(metrics.parse_csv(raw))
            else:
                reports.append(tuner.TuneReport.from_dict(json.loads(raw)))
        if reports:
            rows.extend(_rows_from_reports(reports))
        Path(args.out).write_bytes(metrics.build_report(rows, args.format))
    return run


COMMANDS = {"gen-dataset": _gen_dataset, "pretrain": _pretrain, "tune": _tune, "compare": _compare,
            "report": _report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
        run = COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (MosesLabError, ValueError, KeyError, OSError) as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return 1
    try:
        run()
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - any failure after validation is a runtime error
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
