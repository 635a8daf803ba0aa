"""Command-line driver: dataset tooling, training, power-vs-SINR evaluation,
execution-time benchmarks, and the validation suite.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
Power is reported in linear Watts; plotting is left to downstream scripts.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import checks
from .model import ChannelSet, eq_residuals, read_dataset, record_to_problem, write_dataset
from .network import load_checkpoint, save_checkpoint
from .solvers import OPTIMAL, solve_blp, solve_slp_strict, kkt_oracle
from .training import TrainConfig, TrainingError, generate_records, infer, train

EVAL_HEADER = "sinr_db,method,mean_power,p05_power,p95_power,feasibility_rate,mean_time_us,n_samples"
DETAIL_HEADER = "sinr_db,method,sample,power,feasible,min_margin,max_eq_residual,time_us"
METHODS = ("blp", "slp_ipm", "slp_sdnet", "kkt_oracle")
MARGIN_SLACK = 1e-3   # network outputs count as feasible above -MARGIN_SLACK*g


@dataclass
class SampleOutcome:
    power: float
    feasible: bool
    min_margin: float
    max_eq_residual: float
    time_us: float


def _fmt(x) -> str:
    return repr(float(x))


def _config_from_args(args) -> TrainConfig:
    cfg_kwargs = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            cfg_kwargs.update(json.load(f))
    for name, key in (("k", "K"), ("n", "N"), ("train", "n_train"), ("test", "n_test"),
                      ("epochs", "epochs"), ("eta0", "eta0"), ("seed", "seed"),
                      ("layers", "L"), ("batch_size", "batch_size"),
                      ("dual_mode", "dual_mode"), ("order", "psk_order"),
                      ("n0", "n0"), ("vartheta", "vartheta")):
        val = getattr(args, name, None)
        if val is not None:
            cfg_kwargs[key] = val
    lo = getattr(args, "gamma_low", None)
    hi = getattr(args, "gamma_high", None)
    if lo is not None or hi is not None:
        base = cfg_kwargs.get("gamma_db_range", (0.0, 35.0))
        cfg_kwargs["gamma_db_range"] = (lo if lo is not None else base[0],
                                        hi if hi is not None else base[1])
    if getattr(args, "paper_scale", False):
        cfg_kwargs["n_train"] = 50000
        cfg_kwargs["n_test"] = 2000
    if "gamma_db_range" in cfg_kwargs:
        cfg_kwargs["gamma_db_range"] = tuple(cfg_kwargs["gamma_db_range"])
    return TrainConfig(**cfg_kwargs)


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    out = args.out
    import os
    os.makedirs(out, exist_ok=True)
    train_recs, test_recs = generate_records(cfg)
    fp_train = write_dataset(os.path.join(out, "train.jsonl"), train_recs)
    fp_test = write_dataset(os.path.join(out, "test.jsonl"), test_recs)
    if not args.quiet:
        print("train.jsonl  %d records  sha256 %s" % (len(train_recs), fp_train))
        print("test.jsonl   %d records  sha256 %s" % (len(test_recs), fp_test))
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    import os
    os.makedirs(args.out, exist_ok=True)
    dataset = None
    if args.data:
        recs = read_dataset(os.path.join(args.data, "train.jsonl"))
        dataset = [record_to_problem(r) for r in recs]
        if recs and (recs[0]["K"] != cfg.K or recs[0]["N"] != cfg.N):
            raise ValueError("dataset dimensions do not match the config")
    params, history = train(cfg, dataset)
    if not args.quiet:
        for row in history.epochs:
            print("epoch %2d  loss %.6g  power %.6g  feasible %.3f  lr %.3g"
                  % (row["epoch"], row["loss"], row["power"],
                     row["feasibility_rate"], row["lr"]))
    save_checkpoint(params, os.path.join(args.out, "checkpoint.json"),
                    cfg.config_hash())
    history.write_csv(os.path.join(args.out, "history.csv"))
    return 0


def _eval_method(method, recs, sinr_db, params, timing):
    """Per-sample outcomes of one method at one common SINR target."""
    outcomes = []
    for rec in recs:
        lp = record_to_problem(rec, gamma_db_override=sinr_db)
        t0 = time.perf_counter()
        if method == "blp":
            rep = solve_blp(ChannelSet(np.asarray(rec["h_re"]) + 1j * np.asarray(rec["h_im"])),
                            lp.gamma, lp.noise_power)
            dt = time.perf_counter() - t0
            ok = rep.status == OPTIMAL
            outcomes.append(SampleOutcome(rep.power if ok else float("nan"), ok,
                                          float("nan"), float("nan"),
                                          dt * 1e6 if timing else 0.0))
            continue
        if method == "slp_ipm":
            rep = solve_slp_strict(lp)
        elif method == "kkt_oracle":
            rep = kkt_oracle(lp)
        else:   # slp_sdnet
            pre, dt = infer(params, lp)
            marg = lp.upsilon @ pre.v1 - lp.g
            from .model import eq_residuals
            eq = float(np.max(np.abs(eq_residuals(lp, pre.v1))))
            ok = bool(np.all(marg >= -MARGIN_SLACK * lp.g))
            outcomes.append(SampleOutcome(pre.power, ok, float(np.min(marg)), eq,
                                          dt * 1e6 if timing else 0.0))
            continue
        dt = time.perf_counter() - t0
        ok = rep.status == OPTIMAL
        marg = lp.upsilon @ rep.v1.v1 - lp.g
        from .model import eq_residuals
        eq = float(np.max(np.abs(eq_residuals(lp, rep.v1.v1))))
        outcomes.append(SampleOutcome(rep.power if ok else float("nan"), ok,
                                      float(np.min(marg)), eq,
                                      dt * 1e6 if timing else 0.0))
    return outcomes


def aggregate(outcomes) -> dict:
    powers = np.array([o.power for o in outcomes if o.feasible])
    rate = sum(o.feasible for o in outcomes) / max(len(outcomes), 1)
    times = np.array([o.time_us for o in outcomes])
    if powers.size:
        mean_p, p05, p95 = powers.mean(), np.percentile(powers, 5), np.percentile(powers, 95)
    else:
        mean_p = p05 = p95 = float("nan")
    return {"mean_power": mean_p, "p05_power": p05, "p95_power": p95,
            "feasibility_rate": rate, "mean_time_us": float(times.mean()) if times.size else 0.0,
            "n_samples": len(outcomes)}


def cmd_eval(args) -> int:
    recs = read_dataset(args.data)
    if args.samples:
        recs = recs[:args.samples]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ValueError("unknown method %r (choose from %s)" % (m, ",".join(METHODS)))
    params = None
    if "slp_sdnet" in methods:
        if not args.checkpoint:
            raise ValueError("slp_sdnet requires --checkpoint")
        params = load_checkpoint(args.checkpoint)
    grid = [float(s) for s in args.grid.split(",")]
    rows = []
    detail_rows = []
    for sinr_db in grid:
        for method in methods:
            outs = _eval_method(method, recs, sinr_db, params, args.timing)
            agg = aggregate(outs)
            rows.append((sinr_db, method, agg))
            if args.per_sample:
                for j, o in enumerate(outs):
                    detail_rows.append((sinr_db, method, j, o))
        if not args.quiet:
            print("evaluated %g dB" % sinr_db)
    with open(args.out, "w") as f:
        f.write(EVAL_HEADER + "\n")
        for sinr_db, method, a in rows:
            f.write(",".join([_fmt(sinr_db), method, _fmt(a["mean_power"]),
                              _fmt(a["p05_power"]), _fmt(a["p95_power"]),
                              _fmt(a["feasibility_rate"]), _fmt(a["mean_time_us"]),
                              str(a["n_samples"])]) + "\n")
    if args.per_sample:
        with open(args.per_sample, "w") as f:
            f.write(DETAIL_HEADER + "\n")
            for sinr_db, method, j, o in detail_rows:
                f.write(",".join([_fmt(sinr_db), method, str(j), _fmt(o.power),
                                  str(int(o.feasible)), _fmt(o.min_margin),
                                  _fmt(o.max_eq_residual), _fmt(o.time_us)]) + "\n")
    return 0


def cmd_bench_time(args) -> int:
    recs = read_dataset(args.data)
    if args.samples:
        recs = recs[:args.samples]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    params = None
    if "slp_sdnet" in methods:
        if not args.checkpoint:
            raise ValueError("slp_sdnet requires --checkpoint")
        params = load_checkpoint(args.checkpoint)
    problems = [record_to_problem(r) for r in recs]
    rows = []
    for method in methods:
        times = []
        for rep_idx in range(args.warmup + len(problems)):
            lp = problems[rep_idx % len(problems)]
            if method == "slp_sdnet":
                _, dt = infer(params, lp)
            elif method == "blp":
                rec = recs[rep_idx % len(recs)]
                t0 = time.perf_counter()
                solve_blp(ChannelSet(np.asarray(rec["h_re"]) + 1j * np.asarray(rec["h_im"])),
                          lp.gamma, lp.noise_power)
                dt = time.perf_counter() - t0
            else:
                t0 = time.perf_counter()
                solve_slp_strict(lp)
                dt = time.perf_counter() - t0
            if rep_idx >= args.warmup:
                times.append(dt * 1e6)
        times = np.array(times)
        rows.append((method, float(times.mean()), float(np.percentile(times, 95))))
    with open(args.out, "w") as f:
        f.write("method,mean_time_us,p95_time_us\n")
        for method, mean_us, p95_us in rows:
            f.write("%s,%s,%s\n" % (method, _fmt(mean_us), _fmt(p95_us)))
    if not args.quiet:
        for method, mean_us, p95_us in rows:
            print("%-10s mean %10.1f us   p95 %10.1f us" % (method, mean_us, p95_us))
    return 0


def cmd_validate(args) -> int:
    results = checks.run_all(only=args.only)
    if not results:
        print("no checks matched --only %r" % args.only, file=sys.stderr)
        return 1
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print("[%s] %-12s %-*s %s" % (status, r.group, width, r.name, r.detail))
        failed += not r.passed
    print("%d/%d checks passed" % (len(results) - failed, len(results)))
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="JSON config mirroring TrainConfig fields")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="slpkit",
                                description="Symbol-level precoding toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write JSONL datasets")
    g.add_argument("--k", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--train", type=int)
    g.add_argument("--test", type=int)
    g.add_argument("--order", type=int)
    g.add_argument("--gamma-low", dest="gamma_low", type=float)
    g.add_argument("--gamma-high", dest="gamma_high", type=float)
    g.add_argument("--n0", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the unrolled network")
    t.add_argument("--data", help="dataset directory from gen-data")
    t.add_argument("--out", required=True)
    t.add_argument("--k", type=int)
    t.add_argument("--n", type=int)
    t.add_argument("--train", type=int)
    t.add_argument("--test", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--eta0", type=float)
    t.add_argument("--layers", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--vartheta", type=float)
    t.add_argument("--dual-mode", dest="dual_mode", choices=("gda", "joint"))
    t.add_argument("--paper-scale", dest="paper_scale", action="store_true",
                   help="use the full 50000/2000 sample sizes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="power vs SINR sweep")
    e.add_argument("--data", required=True, help="test.jsonl path")
    e.add_argument("--checkpoint")
    e.add_argument("--grid", default="0,5,10,15,20,25,30,35")
    e.add_argument("--methods", default="blp,slp_ipm,slp_sdnet")
    e.add_argument("--samples", type=int)
    e.add_argument("--per-sample", dest="per_sample",
                   help="also write per-sample rows to this path")
    e.add_argument("--timing", action="store_true",
                   help="record wall times (off by default so CSV bytes are reproducible)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench-time", parents=[common], help="execution-time comparison")
    b.add_argument("--data", required=True, help="test.jsonl path")
    b.add_argument("--checkpoint")
    b.add_argument("--methods", default="blp,slp_ipm,slp_sdnet")
    b.add_argument("--warmup", type=int, default=50)
    b.add_argument("--samples", type=int)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench_time)

    v = sub.add_parser("validate", parents=[common], help="run the invariant suite")
    v.add_argument("--only", choices=checks.GROUPS)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, TrainingError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
