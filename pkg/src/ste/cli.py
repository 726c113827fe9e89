"""Command-line driver: transform, run, bench, ordered, corebench.

Exit codes: 0 success, 1 usage/parse/configuration errors, 2 soundness
violation (speculative digest differs from the serial oracle).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from . import core, frontend, ir, kernels, runtime, transform
from .htm import HtmConfig
from .source import ConfigError, DeadlockDetected, SteError

CSV_COLUMNS = ["kernel", "threads", "sched", "strip", "commits", "conflict",
               "capacity", "order_inversion", "other", "nonspec",
               "retries_max"]


def _load_program(path_or_kernel: str) -> tuple[ir.Program, str]:
    if path_or_kernel in kernels.KERNELS:
        return kernels.load_kernel(path_or_kernel), path_or_kernel
    program = frontend.parse_file(path_or_kernel)
    name = os.path.splitext(os.path.basename(path_or_kernel))[0]
    return program, name


def _read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _apply_config_defaults(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    cfg = _read_config_file(args.config)
    mapping = {
        "threads": ("threads", int),
        "sched": ("sched", str),
        "strip": ("strip", int),
        "seed": ("seed", int),
        "engine": ("engine", str),
        "granule": ("htm_granule", int),
        "rs_cap": ("rs_cap", int),
        "ws_cap": ("ws_cap", int),
        "other_abort_prob": ("other_abort_prob", float),
    }
    for key, (attr, conv) in mapping.items():
        if key in cfg and not getattr(args, f"_{attr}_set", False) \
                and hasattr(args, attr):
            setattr(args, attr, conv(cfg[key]))


def _htm_config(args: argparse.Namespace) -> HtmConfig:
    return HtmConfig(granule_bytes=args.htm_granule,
                     read_capacity=args.rs_cap,
                     write_capacity=args.ws_cap,
                     other_abort_prob=args.other_abort_prob)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    default_seed = int(os.environ.get("STE_SEED", "1"))
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--sched", default="mono",
                   help="mono, lifo, or rand:<seed>")
    p.add_argument("--strip", type=int, default=None,
                   help="override the directive's strip size")
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--engine", choices=core.ENGINES, default="auto")
    p.add_argument("--htm-granule", dest="htm_granule", type=int, default=64)
    p.add_argument("--rs-cap", dest="rs_cap", type=int, default=512)
    p.add_argument("--ws-cap", dest="ws_cap", type=int, default=512)
    p.add_argument("--other-abort-prob", dest="other_abort_prob",
                   type=float, default=0.0)
    p.add_argument("--config", default=None,
                   help="key=value file supplying defaults")


def _write_trace(path: str, trace: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "worker", "attempt", "outcome", "begin_tick",
                    "end_tick"])
        for row in trace:
            w.writerow(row)


def cmd_transform(args: argparse.Namespace) -> int:
    program, _ = _load_program(args.input)
    report = ir.validate(program)
    if not report.ok:
        for v in report.violations:
            print(str(v), file=sys.stderr)
        return 1
    tp = transform.apply_taskloop_tls(program, strip_size=args.strip)
    text = transform.render(tp)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    _apply_config_defaults(args)
    program, name = _load_program(args.input)
    config = _htm_config(args)
    serial = runtime.interpret_serial(program, seed=args.seed,
                                      engine=args.engine)
    rep = runtime.run_taskloop_tls(
        program, threads=args.threads, sched=args.sched, strip=args.strip,
        htm_config=config, seed=args.seed, engine=args.engine,
        collect_trace=args.trace is not None)
    rep.kernel = name
    matched = rep.digest == serial.digest
    payload = rep.to_json_dict()
    payload["serial_digest"] = serial.digest
    payload["digest_match"] = matched
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    if args.trace and rep.trace is not None:
        _write_trace(args.trace, rep.trace)
    print(f"{name}: commits={rep.commits} nonspec={rep.nonspec} "
          f"aborts={rep.aborts} retries_max={rep.retries_max} "
          f"digest_match={matched}")
    if not matched:
        print("soundness violation: speculative digest differs from serial",
              file=sys.stderr)
        return 2
    return 0


def cmd_ordered(args: argparse.Namespace) -> int:
    _apply_config_defaults(args)
    program, name = _load_program(args.input)
    serial = runtime.interpret_serial(program, seed=args.seed, engine="pure")
    rep = runtime.run_ordered_baseline(program, threads=args.threads,
                                       seed=args.seed,
                                       collect_trace=args.trace is not None)
    matched = rep.digest == serial.digest
    if args.report:
        payload = rep.to_json_dict()
        payload["serial_digest"] = serial.digest
        payload["digest_match"] = matched
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    if args.trace and rep.trace is not None:
        with open(args.trace, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "worker", "begin_tick", "sink_tick",
                        "source_tick", "end_tick"])
            for t in rep.trace:
                w.writerow([t.iteration, t.worker, t.begin_tick, t.sink_tick,
                            t.source_tick, t.end_tick])
    print(f"{name}: ordered iterations={rep.commits} digest_match={matched}")
    return 0 if matched else 2


def cmd_bench(args: argparse.Namespace) -> int:
    _apply_config_defaults(args)
    names = args.kernels.split(",") if args.kernels else list(kernels.KERNELS)
    threads_list = [int(x) for x in args.threads_list.split(",")]
    scheds = args.scheds.split(",")
    strips = [int(x) for x in args.strips.split(",")]
    config = _htm_config(args)
    rows = []
    for name in names:
        program, _ = _load_program(name)
        for threads in threads_list:
            for sched in scheds:
                for strip in strips:
                    try:
                        rep = runtime.run_taskloop_tls(
                            program, threads=threads, sched=sched,
                            strip=strip, htm_config=config, seed=args.seed,
                            engine=args.engine)
                    except (SteError, ConfigError) as err:
                        print(f"bench: {name} threads={threads} "
                              f"sched={sched} strip={strip}: {err}",
                              file=sys.stderr)
                        continue
                    rows.append([name, threads, sched, strip, rep.commits,
                                 rep.aborts["conflict"],
                                 rep.aborts["capacity"],
                                 rep.aborts["order_inversion"],
                                 rep.aborts["other"], rep.nonspec,
                                 rep.retries_max])
    out = sys.stdout if args.out == "-" else \
        open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out)
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_corebench(args: argparse.Namespace) -> int:
    """Compare the pure and compiled cores on one kernel."""
    program, name = _load_program(args.kernel)
    engines = ["pure"] + (["compiled"] if core.HAVE_COMPILED else [])
    print(f"kernel={name} threads={args.threads} sched={args.sched} "
          f"seed={args.seed}")
    base = None
    for engine in engines:
        t0 = time.perf_counter()
        serial = runtime.interpret_serial(program, seed=args.seed,
                                          engine=engine)
        t_serial = time.perf_counter() - t0
        rep = runtime.run_taskloop_tls(program, threads=args.threads,
                                       sched=args.sched, seed=args.seed,
                                       engine=engine)
        ok = rep.digest == serial.digest
        print(f"  {engine:9s} serial={t_serial:8.3f}s "
              f"speculative={rep.wall_time:8.3f}s digest_match={ok}")
        if base is None:
            base = (t_serial, rep.wall_time)
        else:
            print(f"  speedup    serial={base[0] / t_serial:7.1f}x "
                  f"speculative={base[1] / rep.wall_time:7.1f}x")
    if not core.HAVE_COMPILED:
        print("  compiled core not built; only the pure engine ran")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ste",
        description="speculative task execution for annotated loops")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="rewrite a taskloop tls program")
    p.add_argument("input")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--strip", type=int, default=None)
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("run", help="run serial + speculative and compare")
    p.add_argument("input", help=".stec path or bundled kernel name")
    _add_run_flags(p)
    p.add_argument("--report", default=None, help="write a JSON report")
    p.add_argument("--trace", default=None, help="write a scheduler trace CSV")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ordered", help="run the sink/source baseline")
    p.add_argument("input")
    _add_run_flags(p)
    p.add_argument("--report", default=None)
    p.add_argument("--trace", default=None)
    p.set_defaults(fn=cmd_ordered)

    p = sub.add_parser("bench", help="sweep a configuration grid to CSV")
    p.add_argument("--kernels", default=None,
                   help="comma list; defaults to the bundled gallery")
    p.add_argument("--threads-list", default="1,2,4,8")
    p.add_argument("--scheds", default="mono,rand:1,rand:2,rand:3,lifo")
    p.add_argument("--strips", default="1,5,16,101")
    _add_run_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("corebench",
                       help="time the pure core against the compiled core")
    p.add_argument("--kernel", default="loope")
    _add_run_flags(p)
    p.set_defaults(fn=cmd_corebench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SteError, ConfigError, DeadlockDetected, OSError,
            ValueError) as err:
        print(f"ste: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
