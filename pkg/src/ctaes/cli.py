"""Command-line entry point: ``ctaes <subcommand> ...``.

A ``--config FILE`` of ``key=value`` lines supplies defaults for the chosen
subcommand; explicit flags win.  The exit status is 0 only when every
verification the command performs passes.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import aes
from .attack import SimulatedOracle, run_attack
from .experiments import DEFAULT_KEY, ExperimentConfig, SweepError, model_for, profile_csv, sweep
from .micro_ir import decompose_encryption, format_program, interpret, parse_program
from .scheduler import (format_schedule, parse_schedule, schedule_program, sequential,
                        verify_gaps)
from .service import NetworkOracle, ServerConfig, collect, parse_endpoint, serve
from .timing_sim import CacheConfig, LatencyModel, simulate_batch, timing_spread


def _hex16(text):
    try:
        return aes.as_block(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _lm(text):
    try:
        return LatencyModel.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _depths(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _write(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _program_or_schedule(args):
    """A Schedule built from --in (program or schedule text) or the AES decomposition."""
    if getattr(args, "input", None):
        text = Path(args.input).read_text()
        if "NOP" in text or "# depth:" in text:
            return parse_schedule(text)
        program = parse_program(text)
    else:
        program = decompose_encryption()
    if getattr(args, "unscheduled", False) or args.depth is None:
        return sequential(program)
    return schedule_program(program, args.depth)


# --- subcommands


def cmd_tables(args):
    t = aes.generate_tables()
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["table", "index", "value"])
            for name, arr in zip(("te0", "te1", "te2", "te3", "sbox"), (*t.te, t.sbox)):
                for i, v in enumerate(arr):
                    w.writerow([name, i, f"{int(v):0{8 if name != 'sbox' else 2}x}"])
    else:
        for name, arr in zip(("te0", "te1", "te2", "te3"), t.te):
            print(f"{name}: {arr.nbytes} bytes, [0..3] = " + " ".join(f"{int(v):08x}" for v in arr[:4]))
        print(f"sbox: {t.sbox.nbytes} bytes, [0..3] = " + " ".join(f"{int(v):02x}" for v in t.sbox[:4]))
    return 0


def cmd_encrypt(args):
    ks = aes.expand_key(args.key)
    if args.path == "reference":
        ct = aes.encrypt_reference(args.pt, ks)
    elif args.path == "ttable":
        ct = aes.encrypt_ttable(args.pt, ks)
    elif args.path == "micro":
        ct = interpret(decompose_encryption(), args.pt, ks)
    else:
        ct = interpret(schedule_program(decompose_encryption(), args.depth), args.pt, ks)
    print(ct.hex())
    return 0


def cmd_decompose(args):
    _write(format_program(decompose_encryption()), args.out)
    return 0


def cmd_schedule(args):
    program = parse_program(Path(args.input).read_text()) if args.input else decompose_encryption()
    s = schedule_program(program, args.depth)
    _write(format_schedule(s), args.out)
    report = verify_gaps(s, args.depth)
    print(f"slots={s.slot_count} nops={s.nop_count} min_gap={report.min_load_use_gap}",
          file=sys.stderr)
    return 0 if report.passed else 1


def cmd_verify(args):
    s = _program_or_schedule(args)
    depth = args.depth if args.depth is not None else s.depth
    report = verify_gaps(s, depth)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} depth={depth} min_load_use_gap={report.min_load_use_gap} "
          f"nops={report.nop_count} slots={report.slot_count} "
          f"order_violations={len(report.order_violations)}")
    return 0 if report.passed else 1


def cmd_simulate(args):
    s = _program_or_schedule(args)
    spread = timing_spread(s, args.lm, args.samples, args.seed)
    if args.csv:
        m = sum(op.is_memory for op in s.slots)
        rng = np.random.default_rng(args.seed)
        pats = np.concatenate([np.zeros((1, m), bool), np.ones((1, m), bool),
                               rng.random((args.samples, m)) < 0.5])
        cycles = simulate_batch(s, pats, args.lm)
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pattern_id", "cycles"])
            for i, c in enumerate(cycles):
                w.writerow([i, int(c)])
    print(f"slots={s.slot_count} min={spread.min} max={spread.max} spread={spread.width} "
          f"variance={spread.variance:.6g} patterns={spread.n_patterns}")
    constant = spread.width == 0
    if args.expect_constant:
        return 0 if constant else 1
    return 0


def cmd_attack(args):
    if args.target:
        if not args.study_target:
            raise SystemExit("attack over the network needs --study-target (server with --study-key)")
        oracle = NetworkOracle(args.target)
        study = NetworkOracle(args.study_target)
        report = run_attack(oracle, args.packets, args.len, args.margin, true_key=args.true_key,
                            study_oracle=study, study_key=args.study_key, seed=args.seed)
    else:
        program = decompose_encryption()
        sched = (schedule_program(program, args.depth) if args.mode == "protected"
                 else sequential(program))
        cfg = ExperimentConfig(lm=args.lm, line_size=args.line_size, packet_len=args.len)
        oracle = SimulatedOracle(args.key, model_for(sched, cfg))
        report = run_attack(oracle, args.packets, args.len, args.margin,
                            true_key=args.true_key or args.key, study_key=args.study_key,
                            seed=args.seed)
    print(report.text())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    if args.profile_dir:
        d = Path(args.profile_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "study_profile.csv").write_text(report.study.to_csv())
        (d / "attack_profile.csv").write_text(report.attack.to_csv())
    return 0


def cmd_profile(args):
    cfg = ExperimentConfig(lm=args.lm, line_size=args.line_size, packets_per_cell=args.packets,
                           packet_len=args.len, seed=args.seed, key=args.key)
    profile_csv(args.mode, args.packets, args.out, args.depth, cfg)
    return 0


def cmd_serve(args):
    host, port = parse_endpoint(args.bind)
    cfg = ServerConfig(args.key, args.mode, args.depth, host, port, args.timing, args.lm,
                       CacheConfig(args.line_size))
    serve(cfg)
    return 0


def cmd_collect(args):
    res = collect(args.target, args.packets, args.len, args.seed, args.timeout)
    rows = ["nonce_hex,cycles"] + [f"{s.packet_first16.hex()},{s.cycles}" for s in res.samples]
    _write("\n".join(rows) + "\n", args.out)
    print(f"sent={res.sent} lost={res.lost} loss_rate={res.loss_rate:.4f}", file=sys.stderr)
    return 0


def cmd_sweep(args):
    cfg = ExperimentConfig(depths=args.depths, lm=args.lm, line_size=args.line_size,
                           packets_per_cell=args.packets, packet_len=args.len,
                           margin=args.margin, seed=args.seed, samples=args.samples,
                           key=args.key, out_dir=Path(args.out))
    try:
        bundle = sweep(cfg)
    except SweepError as exc:
        print(f"sweep aborted: {exc}", file=sys.stderr)
        return 1
    print(f"unprotected: {bundle.unscheduled_cycles_all_hit} cycles all-hit, "
          f"spread {bundle.unscheduled_spread}, key space 2^{bundle.unprotected_key_space_log2:.2f}")
    print("depth  slots  nops  cycles  overhead  spread  key_space")
    ok = True
    for r in bundle.rows:
        print(f"{r.depth:5d}  {r.slot_count:5d}  {r.nop_count:4d}  {r.cycles_all_hit:6d}  "
              f"{r.overhead:8.3f}  {r.spread_max - r.spread_min:6d}  {r.key_space:.4g}")
        ok &= r.gaps_ok
        if r.depth >= cfg.lm.miss:
            ok &= r.spread_max == r.spread_min
    for f in bundle.files:
        print(f"wrote {f}", file=sys.stderr)
    return 0 if ok else 1


# --- parser


def _common_sim(p):
    p.add_argument("--lm", type=_lm, default=LatencyModel(), metavar="EXEC,HIT,MISS",
                   help="latency model (default 1,2,6)")
    p.add_argument("--line-size", type=int, default=64, help="cache line size in bytes")


def build_parser():
    parser = argparse.ArgumentParser(prog="ctaes", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value defaults file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tables", help="generate the T tables")
    p.add_argument("--out", help="CSV output (table,index,value)")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("encrypt", help="encrypt one block along a chosen path")
    p.add_argument("--key", type=_hex16, required=True)
    p.add_argument("--pt", type=_hex16, required=True)
    p.add_argument("--path", choices=["reference", "ttable", "micro", "scheduled"], default="ttable")
    p.add_argument("--depth", type=int)
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("decompose", help="dump the micro-op program")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("schedule", help="schedule a program at a pipeline depth")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--in", dest="input", help="program text (default: AES decomposition)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("verify", help="check load-use gaps of a schedule")
    p.add_argument("--depth", type=int)
    p.add_argument("--in", dest="input", help="schedule or program text")
    p.add_argument("--unscheduled", action="store_true", help="verify the program-order layout")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="cycle spread of a schedule over hit/miss patterns")
    p.add_argument("--depth", type=int)
    p.add_argument("--in", dest="input")
    p.add_argument("--unscheduled", action="store_true")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write pattern_id,cycles")
    p.add_argument("--expect-constant", action="store_true", help="fail unless spread is 0")
    _common_sim(p)
    p.set_defaults(func=cmd_simulate)

    for name, helptext in (("attack", "run the study/attack key recovery"),
                           ("profile", "export a timing-deviation profile")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--mode", choices=["unprotected", "protected"], default="unprotected")
        p.add_argument("--depth", type=int, default=6)
        p.add_argument("--packets", type=int, default=1024, help="packets per profile cell")
        p.add_argument("--len", type=int, default=800)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--key", type=_hex16, default=DEFAULT_KEY, help="simulated server key")
        _common_sim(p)
        if name == "attack":
            p.add_argument("--margin", type=float, default=1.0)
            p.add_argument("--study-key", type=_hex16, default=bytes(16))
            p.add_argument("--true-key", type=_hex16, help="report containment of this key")
            p.add_argument("--target", help="attack server host:port instead of the simulator")
            p.add_argument("--study-target", help="study server host:port")
            p.add_argument("--json", help="machine-readable summary")
            p.add_argument("--profile-dir")
            p.set_defaults(func=cmd_attack)
        else:
            p.add_argument("--out", required=True)
            p.set_defaults(func=cmd_profile)

    p = sub.add_parser("serve", help="run the datagram timing server")
    p.add_argument("--bind", default="127.0.0.1:9999")
    p.add_argument("--key", type=_hex16)
    p.add_argument("--mode", choices=["unprotected", "protected"], default="unprotected")
    p.add_argument("--depth", type=int)
    p.add_argument("--timing", choices=["real", "sim"], default="sim")
    _common_sim(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("collect", help="time random packets against a server")
    p.add_argument("--target", required=True)
    p.add_argument("--packets", type=int, default=1000)
    p.add_argument("--len", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=0.5)
    p.add_argument("--out", help="CSV nonce_hex,cycles (default stdout)")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("sweep", help="schedule/verify/simulate/attack across depths")
    p.add_argument("--depths", type=_depths, default=(6, 8, 10, 12, 14))
    p.add_argument("--packets", type=int, default=1024, help="packets per profile cell")
    p.add_argument("--len", type=int, default=800)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--key", type=_hex16, default=DEFAULT_KEY)
    p.add_argument("--out", default="sweep_out")
    _common_sim(p)
    p.set_defaults(func=cmd_sweep)

    return parser, sub


def read_config(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def main(argv=None) -> int:
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = sub.choices[args.command]
        known = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in read_config(args.config).items():
            action = known.get(key)
            if action is None:
                parser.error(f"config key {key!r} is not an option of {args.command!r}")
            if action.type is not None:
                value = action.type(value)
            elif isinstance(action, argparse._StoreTrueAction):
                value = value.lower() in ("1", "true", "yes")
            defaults[key] = value
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.command == "encrypt" and args.path == "scheduled" and args.depth is None:
        sub.choices["encrypt"].error("--path scheduled requires --depth")
    if args.command == "serve" and args.key is None:
        sub.choices["serve"].error("--key is required")
    if args.command == "serve" and args.mode == "protected" and args.depth is None:
        sub.choices["serve"].error("--mode protected requires --depth")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
