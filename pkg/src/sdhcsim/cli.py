"""``sdhcsim`` command line: run benchmark scenarios, list them, dump the register map."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .registers import register_map_markdown

EXIT_OK, EXIT_SIM_ERROR, EXIT_CONFIG_ERROR = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdhcsim", description="SD host controller throughput simulator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run built-in scenarios or scenario files")
    run.add_argument("scenarios", nargs="*", metavar="SCENARIO",
                     help="built-in scenario name or path to a YAML scenario file (default: all built-ins)")
    run.add_argument("--regime", choices=[r.value for r in bench.Regime])
    run.add_argument("--host-freq", type=float, help="host clock in Hz")
    run.add_argument("--sd-freq", type=float, help="target SD clock in Hz")
    run.add_argument("--blocks", type=int, help="blocks per transfer")
    run.add_argument("--direction", choices=bench.DIRECTIONS)
    run.add_argument("--repetitions", type=int)
    run.add_argument("--image", help="raw card image file")
    run.add_argument("--format", choices=("table", "csv", "json"), default="table")
    run.add_argument("--out", default="-", help="output file (default stdout)")
    run.add_argument("--trace", help="write a tab-separated event trace here")

    sub.add_parser("list", help="list built-in scenarios")

    regmap = sub.add_parser("regmap", help="print the register map as markdown")
    regmap.add_argument("--host-freq", type=float, default=50e6)
    regmap.add_argument("--out", default="-")
    return p


def _configs(args) -> list[bench.ScenarioConfig]:
    names = args.scenarios or list(bench.BUILTIN_SCENARIOS)
    configs = []
    for name in names:
        if name in bench.BUILTIN_SCENARIOS:
            cfg = bench.builtin(name)
        elif name.endswith((".yaml", ".yml")):
            try:
                cfg = bench.ScenarioConfig.from_yaml(name)
            except OSError as exc:
                raise bench.ConfigError(f"cannot read {name}: {exc.strerror}") from None
        else:
            raise bench.ConfigError(f"{name!r} is neither a built-in scenario nor a .yaml file")
        cfg = cfg.with_overrides(regime=args.regime, host_freq_hz=args.host_freq, sd_freq_hz=args.sd_freq,
                                 block_count=args.blocks, direction=args.direction,
                                 repetitions=args.repetitions, image=args.image)
        configs.append(cfg.validate())
    return configs


def _run(args) -> int:
    configs = _configs(args)
    results = []
    trace_fh = open(args.trace, "w") if args.trace else None
    try:
        for cfg in configs:
            if trace_fh is not None:
                trace_fh.write(f"# scenario {cfg.name}\n")
                results += bench.trace(cfg, trace_fh)
            else:
                results += bench.run_scenario(cfg)
    finally:
        if trace_fh is not None:
            trace_fh.close()
    bench.emit(results, args.format, args.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            for name, cfg in bench.BUILTIN_SCENARIOS.items():
                print(f"{name:20s} regime={cfg.regime:12s} host={cfg.host_freq_hz / 1e6:g}MHz "
                      f"sd={cfg.sd_freq_hz / 1e6:g}MHz blocks={cfg.block_count} {cfg.direction}")
            return EXIT_OK
        if args.command == "regmap":
            text = register_map_markdown(args.host_freq)
            if args.out == "-":
                sys.stdout.write(text)
            else:
                with open(args.out, "w") as fh:
                    fh.write(text)
            return EXIT_OK
        return _run(args)
    except bench.ConfigError as exc:
        print(f"sdhcsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as exc:  # simulation or I/O failure
        print(f"sdhcsim: error: {exc}", file=sys.stderr)
        return EXIT_SIM_ERROR


if __name__ == "__main__":
    sys.exit(main())
