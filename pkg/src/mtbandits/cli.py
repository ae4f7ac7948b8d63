"""Command-line experiment runner.

Subcommands::

    mtbandits sim-sweep  --config cfg.toml [--out DIR]
    mtbandits bandit     --config cfg.toml [--seed N] [--out DIR] [--format csv|json]
    mtbandits trace      --config cfg.toml ...
    mtbandits theory     --config cfg.toml ...
    mtbandits similarity --config cfg.toml ...

Every run writes a ``manifest.json`` (config echo, library version, seeds)
beside its outputs; passing a manifest back through ``--config`` reproduces
the run byte for byte.  Exit codes: 0 success, 1 configuration error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .harness import (
    build_env,
    collect_warmup_datasets,
    default_context_kernel,
    estimate_similarity,
    run_bandit_experiment,
    run_sim_sweep,
    run_theory_checks,
    write_experiment_outputs,
    write_manifest,
    WARMUP_SEED_OFFSET,
)
from .kernels import KernelSpec
from .similarity import save_similarity_csv

KIND_BY_COMMAND = {
    "sim-sweep": "sim-sweep",
    "bandit": None,  # accepts synthetic-bandit or trace-bandit configs
    "trace": "trace-bandit",
    "theory": "theory-checks",
    "similarity": "similarity",
}


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mtbandits", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in [
        ("sim-sweep", "similarity-vs-MSE sweep on coupled regression data"),
        ("bandit", "bandit experiment (synthetic or trace per config)"),
        ("trace", "bandit experiment on a trace-driven simulator"),
        ("theory", "determinant-ratio bound and monotonicity checks"),
        ("similarity", "estimate and cache a task-similarity matrix"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="TOML config or a previous manifest.json")
        p.add_argument("--seed", type=int, default=None, help="override run.seeds with one seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--format", choices=("csv", "json"), default=None, help="output format")
    return parser


def _cmd_sim_sweep(cfg) -> list[str]:
    result = run_sim_sweep(cfg.sweep)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if cfg.output.format == "json":
        payload = result.to_frame().to_dict(orient="records")
        (out / "sweep.json").write_text(json.dumps(payload, indent=2) + "\n")
        outputs.append("sweep.json")
    else:
        result.to_frame().to_csv(out / "sweep.csv", index=False)
        outputs.append("sweep.csv")
    return outputs


def _cmd_bandit(cfg) -> list[str]:
    result = run_bandit_experiment(cfg)
    outputs = write_experiment_outputs(result, cfg.output.dir)
    if cfg.output.format == "json":
        summary = result.summary_frame().to_dict(orient="records")
        (Path(cfg.output.dir) / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        outputs.append("summary.json")
    return outputs


def _cmd_theory(cfg) -> list[str]:
    report = run_theory_checks(cfg.theory)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "theory_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return ["theory_report.json"]


def _cmd_similarity(cfg) -> list[str]:
    env = build_env(cfg.env)
    M = cfg.run.tasks if cfg.run.tasks is not None else env.num_tasks
    seed = cfg.run.seeds[0]
    warmup = collect_warmup_datasets(env, M, cfg.similarity.warmup_rounds, seed + WARMUP_SEED_OFFSET)
    kx = (
        KernelSpec.from_dict(cfg.policy.kernel)
        if cfg.policy.kernel
        else default_context_kernel(warmup)
    )
    S = estimate_similarity(cfg.similarity.method, M, kx, warmup, cfg.similarity)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    save_similarity_csv(S, out / "kz.csv")
    return ["kz.csv"]


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, kind=KIND_BY_COMMAND[args.command])
        if args.command == "bandit" and cfg.kind not in ("synthetic-bandit", "trace-bandit"):
            raise ConfigError(f"'bandit' expects a *-bandit config, got kind {cfg.kind!r}")
        cfg = cfg.with_overrides(seed=args.seed, out_dir=args.out, out_format=args.format)
    except ConfigError as exc:
        print(f"mtbandits: configuration error: {exc}", file=sys.stderr)
        return 1

    handler = {
        "sim-sweep": _cmd_sim_sweep,
        "bandit": _cmd_bandit,
        "trace": _cmd_bandit,
        "theory": _cmd_theory,
        "similarity": _cmd_similarity,
    }[args.command]
    try:
        outputs = handler(cfg)
        write_manifest(cfg.output.dir, cfg.kind, cfg.to_dict(), cfg.run.seeds, outputs)
    except ConfigError as exc:
        print(f"mtbandits: configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report, exit 2
        print(f"mtbandits: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {', '.join(sorted(outputs))} and manifest.json to {cfg.output.dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
