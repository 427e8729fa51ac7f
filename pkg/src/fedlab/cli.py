"""Command line front end: run one experiment, compare several, print oracles.

Standard output carries only the report tables; progress and errors go
to standard error. Exit codes are part of the contract: 0 on success,
2 for configuration or usage problems, 3 when a run diverges.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import (
    ExperimentConfig,
    build_instance,
    parse_config,
    run_from_config,
)
from .core.metrics import build_report, format_report, write_metrics_csv
from .errors import ConfigurationError, DivergenceError, FedLabError

log = logging.getLogger("fedlab")


def _resolve_seed(args) -> tuple[int | None, str]:
    """Seed precedence: --seed flag, then FEDLAB_SEED, then the config."""
    if getattr(args, "seed", None) is not None:
        return int(args.seed), "--seed"
    env = os.environ.get("FEDLAB_SEED")
    if env is not None:
        try:
            return int(env), "FEDLAB_SEED"
        except ValueError:
            raise ConfigurationError(f"FEDLAB_SEED must be an integer, got {env!r}") from None
    return None, "config"


def _effective_seed(cfg: ExperimentConfig, override: int | None) -> int:
    return override if override is not None else int(cfg.run["seed"])


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    override, source = _resolve_seed(args)
    result, report = run_from_config(cfg, seed_override=override)
    log.info(
        "config %s  seed %d (%s)  %d rounds",
        report.config_digest,
        _effective_seed(cfg, override),
        source,
        len(result.metrics),
    )
    out = args.out or cfg.run.get("out")
    if out:
        write_metrics_csv(result.metrics, out)
        log.info("ledger written to %s", out)
    print(format_report(report))
    return 0


def _num(value, digits: str = ".6g") -> str:
    if value is None:
        return "n/a"
    return format(value, digits)


def _render_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    def fmt(cells):
        # first column is a name, the rest are numbers
        out = [cells[0].ljust(widths[0])]
        out += [cells[i].rjust(widths[i]) for i in range(1, len(cells))]
        return "  ".join(out).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in rows])


def _cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ConfigurationError("compare needs at least two --config files")
    cfgs = [parse_config(path) for path in args.config]
    problem_seeds = {int(cfg.problem["seed"]) for cfg in cfgs}
    if len(problem_seeds) > 1:
        raise ConfigurationError(
            f"compare requires configs on the same problem seed, got {sorted(problem_seeds)}"
        )
    if args.tol <= 0:
        raise ConfigurationError(f"--tol must be > 0, got {args.tol!r}")
    override, source = _resolve_seed(args)

    rows = []
    for path, cfg in zip(args.config, cfgs):
        result, report = run_from_config(cfg, seed_override=override)
        log.info(
            "config %s  seed %d (%s)  %d rounds  [%s]",
            report.config_digest,
            _effective_seed(cfg, override),
            source,
            len(result.metrics),
            path,
        )
        # re-resolve rounds-to-tolerance at the comparison tolerance
        report = build_report(result.metrics, report.config_digest, report.oracle_objective, args.tol)
        hit = report.rounds_to_tolerance
        if hit is None:
            bytes_to_tol = None
        else:
            bytes_to_tol = sum(m.bytes_up for m in result.metrics if m.round_index <= hit)
        n_rounds = max(len(result.metrics), 1)
        rows.append(
            [
                os.path.basename(path),
                report.config_digest,
                _num(report.final_objective),
                _num(report.oracle_gap, ".3e"),
                str(hit) if hit is not None else "unreached",
                _num(bytes_to_tol, "d") if bytes_to_tol is not None else "unreached",
                _num(report.bytes_up_total / n_rounds, ".6g"),
                _num(report.bytes_down_total / n_rounds, ".6g"),
            ]
        )
    header = [
        "config",
        "digest",
        "objective",
        "oracle gap",
        "rounds to tol",
        "bytes up to tol",
        "bytes up/round",
        "bytes down/round",
    ]
    print(_render_table(header, rows))
    return 0


def _cmd_oracle(args) -> int:
    cfg = parse_config(args.config)
    instance = build_instance(cfg, with_oracle=True)
    oracle = instance.oracle
    if oracle is None:
        raise ConfigurationError(f"no centralized oracle is defined for kind={instance.kind!r}")
    width = len("oracle objective")
    for label, value in (
        ("problem kind", instance.kind),
        ("oracle method", oracle.method),
        ("oracle objective", format(oracle.objective, ".12g")),
    ):
        print(f"{label.ljust(width)}  {value}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedlab",
        description="Deterministic federated-optimization experiments from INI configs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one experiment and print its report")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--seed", type=int, default=None, help="override the run seed")
    run.add_argument("--out", default=None, help="write the round ledger CSV here")
    run.set_defaults(handler=_cmd_run)

    compare = sub.add_parser("compare", help="run several configs on one problem and tabulate them")
    compare.add_argument(
        "--config", action="append", default=[], help="config file (repeat; at least two)"
    )
    compare.add_argument("--tol", type=float, default=1e-3, help="gap tolerance for rounds-to-tol")
    compare.add_argument("--seed", type=int, default=None, help="override every run seed")
    compare.set_defaults(handler=_cmd_compare)

    oracle = sub.add_parser("oracle", help="print the centralized oracle for a config's problem")
    oracle.add_argument("--config", required=True, help="experiment config file")
    oracle.set_defaults(handler=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s", force=True)
    try:
        return args.handler(args)
    except DivergenceError as exc:
        log.error("diverged: %s", exc)
        return 3
    except FedLabError as exc:
        log.error("error: %s", exc)
        return 2
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
