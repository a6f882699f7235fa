"""Command-line entry point.

Subcommands: gen-dataset, train, evaluate, ablate, report. Exit codes:
0 success, 1 usage error, 2 validation error, 3 runtime failure. Artifacts
written before a failure are removed.
"""

import argparse
import shutil
import sys
import traceback
from pathlib import Path

from ..gfn import load_checkpoint, save_checkpoint
from ..traces import BandwidthClass, ConfigError, synthesize_dataset
from .config import ExperimentConfig, POLICY_NAMES, load_config
from .datasets import load_dataset, write_manifest
from .report import (
    aggregate,
    read_metrics_csv,
    render_loss_curve,
    render_report_figures,
    report_markdown,
    write_loss_curve_csv,
    write_metrics_csv,
    write_report_csv,
)
from .runner import ablate, evaluate_policy, model_arch, train_policy

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="feedflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def common(p):
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-dataset", help="synthesize and write a dataset manifest")
    common(p)

    p = sub.add_parser("train", help="train a policy and write a checkpoint")
    common(p)
    p.add_argument("--policy", choices=POLICY_NAMES, default="gfn_multi")

    p = sub.add_parser("evaluate", help="run policies over the scenario suite")
    common(p)
    p.add_argument("--policy", choices=POLICY_NAMES, help="restrict to one policy")
    p.add_argument(
        "--class",
        dest="bw_class",
        choices=[c.value for c in BandwidthClass],
        help="restrict to one bandwidth class",
    )

    p = sub.add_parser("ablate", help="run the candidate/personalization suites")
    common(p)

    p = sub.add_parser("report", help="aggregate metrics into tables and figures")
    common(p)
    return parser


def _load_experiment_config(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return load_config(path)


class _Workspace:
    """Tracks artifacts so a failing command leaves nothing behind."""

    def __init__(self, out: str):
        self.root = Path(out)
        self.created_root = not self.root.exists()
        self.root.mkdir(parents=True, exist_ok=True)
        self.paths: list[Path] = []

    def track(self, *parts) -> Path:
        path = self.root.joinpath(*parts)
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        if self.created_root:
            shutil.rmtree(self.root, ignore_errors=True)
            return
        for path in reversed(self.paths):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()


def _cmd_gen_dataset(args, ws: _Workspace) -> None:
    cfg = _load_experiment_config(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    dataset = synthesize_dataset(cfg.gen, seed)
    for name in ("network", "videos.csv", "users.csv", "prefs.csv", "manifest"):
        ws.track(name)
    write_manifest(dataset, ws.root, cfg.gen, seed)
    print(f"wrote dataset manifest to {ws.root}")


def _cmd_train(args, ws: _Workspace) -> None:
    cfg = _load_experiment_config(args)
    dataset = load_dataset(cfg.dataset)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    policy = cfg.policy_kind(args.policy)
    model, curve = train_policy(cfg, dataset, policy, seed)
    save_checkpoint(model, ws.track("checkpoint.json"))
    write_loss_curve_csv(curve, ws.track("loss_curve.csv"))
    render_loss_curve(curve, ws.track("loss_curve.png"))
    final = curve[-1]["mean_tb_loss"] if curve else float("nan")
    print(f"trained {args.policy} for {len(curve)} episodes (final TB loss {final:.4g})")
    print(f"wrote {ws.root / 'checkpoint.json'}")


def _cmd_evaluate(args, ws: _Workspace) -> None:
    cfg = _load_experiment_config(args)
    dataset = load_dataset(cfg.dataset)
    policies = (args.policy,) if args.policy else cfg.policies
    seeds = (args.seed,) if args.seed is not None else cfg.seeds
    class_filter = BandwidthClass(args.bw_class) if args.bw_class else None

    model = None
    if any(p != "rule_based" for p in policies):
        checkpoint = Path(cfg.checkpoint) if cfg.checkpoint else ws.root / "checkpoint.json"
        if not checkpoint.is_file():
            raise FileNotFoundError(
                f"no checkpoint at {checkpoint}; run `feedflow train` first"
            )
        model = load_checkpoint(checkpoint, expected_arch=model_arch(cfg, dataset))

    rows = []
    for name in policies:
        rows.extend(
            evaluate_policy(
                cfg,
                dataset,
                name,
                None if name == "rule_based" else model,
                seeds,
                class_filter,
            )
        )
    write_metrics_csv(rows, ws.track("metrics.csv"))
    print(f"wrote {len(rows)} metric rows to {ws.root / 'metrics.csv'}")


def _cmd_ablate(args, ws: _Workspace) -> None:
    cfg = _load_experiment_config(args)
    dataset = load_dataset(cfg.dataset)
    suites = ablate(cfg, dataset)
    sections = []
    for suite_name, rows in suites.items():
        write_metrics_csv(rows, ws.track(f"ablation_{suite_name}.csv"))
        report_rows = aggregate(rows)
        write_report_csv(report_rows, ws.track(f"ablation_{suite_name}_summary.csv"))
        render_report_figures(report_rows, ws.track("figures", suite_name))
        sections.append(f"## {suite_name}\n")
        sections.append(report_markdown(report_rows, cfg.rebuffer_budget_s))
    ws.track("ablation.md").write_text("\n".join(sections), encoding="utf-8")
    print(f"wrote ablation suites to {ws.root}")


def _cmd_report(args, ws: _Workspace) -> None:
    cfg = _load_experiment_config(args)
    metrics_path = ws.root / "metrics.csv"
    if not metrics_path.is_file():
        raise FileNotFoundError(f"no metrics.csv in {ws.root}; run `feedflow evaluate`")
    rows = read_metrics_csv(metrics_path)
    if not rows:
        raise ValueError(f"{metrics_path} contains no metric rows")
    report_rows = aggregate(rows)
    ws.track("report.md").write_text(
        report_markdown(report_rows, cfg.rebuffer_budget_s), encoding="utf-8"
    )
    write_report_csv(report_rows, ws.track("report.csv"))
    figures = render_report_figures(report_rows, ws.track("figures"))
    print(f"wrote report.md, report.csv and {len(figures)} figures to {ws.root}")


_COMMANDS = {
    "gen-dataset": _cmd_gen_dataset,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    ws = _Workspace(args.out)
    try:
        _COMMANDS[args.command](args, ws)
        return EXIT_OK
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        ws.cleanup()
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        ws.cleanup()
        traceback.print_exc()
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
