"""Command-line entry point: run, gen, query, report."""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, OverlayError
from .harness import (QueryOutcome, build, load_config, prepare, query_proc, report_from_dir, run_scenario)


def _run_one(cfg, out_dir: Path | None, verify: bool) -> int:
    report = run_scenario(cfg)
    if out_dir is not None:
        report.write(out_dir)
    status = 0 if report.ok else 1
    if verify:
        again = run_scenario(cfg)
        same = again.ndjson() == report.ndjson() and again.summary_json() == report.summary_json()
        print(f"determinism check: {'identical' if same else 'DIFFERENT'}")
        if not same:
            status = 1
    agg = report.summary["aggregates"]
    for phase, stats in agg["phases"].items():
        print(f"seed {cfg.seed} {phase}: {stats['queries']} queries, recall {stats['recall']:.4f}, "
              f"success {stats['success_rate']:.4f}, mean hops {stats['mean_hops']:.2f}")
    if report.summary["errors"]:
        print("errors:", "; ".join(report.summary["errors"]), file=sys.stderr)
    return status


def _repeat_worker(args):
    cfg, out_dir = args
    return _run_one(cfg, out_dir, False)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out) if args.out else None
    if args.repeat <= 1:
        return _run_one(cfg, out, args.verify)
    jobs = [(replace(cfg, seed=cfg.seed + k), out / f"seed-{cfg.seed + k}" if out else None)
            for k in range(args.repeat)]
    with ProcessPoolExecutor() as pool:
        codes = list(pool.map(_repeat_worker, jobs))
    return max(codes)


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    workload = prepare(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dataset.json").write_text(json.dumps(workload.to_dict(), indent=1, sort_keys=True) + "\n",
                                      encoding="utf-8")
    print(f"wrote {len(workload.peers)} peers, {len(workload.reserve)} reserve, "
          f"{len(workload.queries)} queries to {out / 'dataset.json'}")
    return 0


def cmd_query(args) -> int:
    cfg = load_config(args.config)
    workload = prepare(cfg)
    net = build(cfg, workload)
    live = net.live_peers()
    if not live:
        print("no live peers", file=sys.stderr)
        return 1
    origin = live[args.origin % len(live)]
    out = QueryOutcome(0, origin, args.text)
    net.run_process(net.spawn(query_proc(net, out), at=origin))
    print(f"origin {origin} (cluster {net.peers[origin].home})")
    print(f"target clusters: {', '.join(out.clusters) or '-'}")
    for r in sorted(out.routes, key=lambda r: r.target):
        status = "delivered" if r.delivered else f"not delivered ({r.error})"
        print(f"  {r.target}: {r.hops} hops, {status}")
        for pid in r.path:
            print(f"    {pid} [{net.directory.cluster_of(pid)}]")
    print(f"intra-cluster messages: {out.intra_messages}, dereference messages: {out.deref_messages}")
    print(f"results ({len(out.results)}), recall {out.recall:.3f}:")
    for t in sorted(out.results):
        print(f"  {t}")
    for e in out.errors:
        print(f"  error: {e}")
    return 0


def cmd_report(args) -> int:
    rep = report_from_dir(args.in_dir)
    print(json.dumps(rep, indent=2, sort_keys=True))
    return 0 if rep["matches_summary"] else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="semoverlay", description="two-level semantic overlay simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run a scenario and write metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--verify", action="store_true", help="run twice and compare outputs byte for byte")
    p.add_argument("--repeat", type=int, default=1, help="run this many consecutive seeds in parallel")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("gen", help="write the generated dataset and queries")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)
    p = sub.add_parser("query", help="trace a single query through a built network")
    p.add_argument("--config", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--origin", type=int, default=0, help="index into the sorted live peers")
    p.set_defaults(fn=cmd_query)
    p = sub.add_parser("report", help="recompute aggregates from metrics.ndjson")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(fn=cmd_report)
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OverlayError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
