"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 runtime error,
3 chain verification failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .admission import brute_force_oracle, read_instance, solve_exact, solve_greedy, BRUTE_FORCE_MAX_J
from .config import ConfigError, build_config, parse_value, render_toml
from .ledger import ChainDumpError, dump_chain, first_invalid_height, iter_dump, replay_committed
from .metrics import export_report
from .sim import derive_seed
from .workload import Scenario, ScenarioConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3

KEY_ALIASES = {"consensus": "consensus.service"}


@dataclass(frozen=True)
class RunPoint:
    index: int
    label: str
    overrides: tuple[tuple[str, Any], ...]


@dataclass(frozen=True)
class RunManifest:
    config_path: str | None
    overrides: tuple[tuple[str, str], ...]
    out_dir: str
    sweep: tuple[tuple[str, tuple[Any, ...]], ...]
    seeds: int
    paired: bool = False

    def points(self) -> list[RunPoint]:
        if not self.sweep:
            return [RunPoint(0, "base", ())]
        keys = [k for k, _ in self.sweep]
        combos = itertools.product(*(vals for _, vals in self.sweep))
        points = []
        for i, combo in enumerate(combos):
            label = "_".join(f"{k.split('.')[-1]}-{_slug(v)}" for k, v in zip(keys, combo))
            points.append(RunPoint(i, label, tuple(zip(keys, combo))))
        return points


def _slug(value: Any) -> str:
    text = json.dumps(value) if not isinstance(value, str) else value
    return "".join(c if c.isalnum() or c in ".-" else "_" for c in text)


def child_seed(base: int, point: RunPoint, rep: int, paired: bool) -> int:
    """Seed of one (sweep point, repetition); ``paired`` shares seeds across points."""
    if paired:
        return derive_seed(base, rep)
    return derive_seed(base, point.label, rep)


def _parse_kv(text: str, flag: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected KEY=VALUE, got {text!r}", flag)
    key, value = text.split("=", 1)
    key = key.strip()
    return KEY_ALIASES.get(key, key), value


def _parse_sweep(text: str) -> tuple[str, tuple[Any, ...]]:
    key, raw = _parse_kv(text, "--sweep")
    values = tuple(parse_value(v) for v in raw.split(";" if ";" in raw else ","))
    if not values or any(v == "" for v in values):
        raise ConfigError(f"sweep over {key!r} needs at least one value", "--sweep")
    return key, values


# --------------------------------------------------------------------------
# run


def _execute(cfg: ScenarioConfig, out_dir: str, trace: bool) -> dict[str, Any]:
    """One scenario end to end; never raises (errors come back in the result)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        sc = Scenario(cfg, trace=trace)
        report = sc.run()
        export_report(report, out)
        for ch in sc.channels:
            with (out / f"chain-{ch.name}.jsonl").open("w") as fh:
                dump_chain(ch.ledger.chain, fh)
        if trace:
            (out / "trace.log").write_text("\n".join(sc.loop.trace_lines) + "\n")
        s = report.summary()
        return {"status": "ok", "dir": str(out), "seed": cfg.seed, "totals": s["totals"],
                "fractions": s["fractions"], "throughput": s["throughput"]["committed_per_s"],
                "latency_p50_ms": s["latency_ms"].get("p50")}
    except Exception as exc:  # one failing point must not abort the sweep
        (out / "error.txt").write_text(traceback.format_exc())
        return {"status": "error", "dir": str(out), "seed": cfg.seed, "error": f"{type(exc).__name__}: {exc}"}


def cmd_run(args: argparse.Namespace) -> int:
    try:
        overrides = [_parse_kv(s, "--set") for s in args.set]
        if args.consensus:
            overrides.append(("consensus.service", args.consensus))
        manifest = RunManifest(
            config_path=args.config,
            overrides=tuple(overrides),
            out_dir=args.out,
            sweep=tuple(_parse_sweep(s) for s in args.sweep),
            seeds=args.seeds,
            paired=args.paired,
        )
        if manifest.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        base = build_config(manifest.config_path, manifest.overrides, os.environ)
        jobs = []
        single = len(manifest.points()) == 1 and manifest.seeds == 1
        for point in manifest.points():
            for rep in range(manifest.seeds):
                extra = list(manifest.overrides) + list(point.overrides)
                if not single:
                    extra.append(("seed", child_seed(base.seed, point, rep, manifest.paired)))
                cfg = build_config(manifest.config_path, extra, os.environ)
                sub = "." if single else f"{point.index:02d}-{point.label}/rep{rep}"
                jobs.append((point, rep, cfg, str(Path(manifest.out_dir) / sub)))
        out = Path(manifest.out_dir)
        if out.exists() and (not out.is_dir() or any(out.iterdir())):
            raise ConfigError(f"output directory {out} exists and is not empty")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(render_toml(base))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_execute, cfg, d, args.trace) for _, _, cfg, d in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_execute(cfg, d, args.trace) for _, _, cfg, d in jobs]

    rows = []
    for (point, rep, _, _), res in zip(jobs, results):
        rows.append({"point": point.index, "label": point.label,
                     "values": {k: v for k, v in point.overrides}, "rep": rep, **res})
        status = res["status"]
        detail = res.get("error") or (
            f"committed/s={res['throughput']:.2f} rw_conflict={res['fractions']['rw_conflict']:.4f} "
            f"p50={res['latency_p50_ms'] if res['latency_p50_ms'] is None else round(res['latency_p50_ms'], 3)}ms")
        print(f"[{status}] {point.label} rep{rep} seed={res['seed']}: {detail}")
    manifest_doc = {
        "version": __version__,
        "config": args.config,
        "overrides": [list(o) for o in manifest.overrides],
        "sweep": [[k, list(v)] for k, v in manifest.sweep],
        "seeds": manifest.seeds,
        "paired": manifest.paired,
        "runs": rows,
    }
    (out / "sweep_summary.json").write_text(json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all(r["status"] == "ok" for r in results) else EXIT_RUNTIME


# --------------------------------------------------------------------------
# verify


def cmd_verify(args: argparse.Namespace) -> int:
    path = Path(args.dump)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except UnicodeDecodeError:
        print(f"FAIL at height 0: {path} is not a text dump", file=sys.stderr)
        return EXIT_VERIFY
    if not lines:
        print(f"error: {path} is empty", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        chain = list(iter_dump(lines))
    except ChainDumpError as exc:
        print(f"FAIL at height {exc.height}: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    bad = first_invalid_height(chain)
    if bad is not None:
        print(f"FAIL at height {bad}: hash chain broken", file=sys.stderr)
        return EXIT_VERIFY
    try:
        state = replay_committed(chain)
    except ValueError as exc:
        print(f"FAIL at height 0: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    if not state.conserved(full=True):
        print(f"FAIL at height {chain[-1].height}: resource totals not conserved", file=sys.stderr)
        return EXIT_VERIFY
    print(f"OK: {len(chain)} blocks, head {chain[-1].hash.hex()[:16]}, totals conserved")
    return EXIT_OK


# --------------------------------------------------------------------------
# solve


def cmd_solve(args: argparse.Namespace) -> int:
    try:
        text = Path(args.instance).read_text() if args.instance != "-" else sys.stdin.read()
        inst = read_instance(text)
    except OSError as exc:
        print(f"error: cannot read {args.instance}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {args.instance}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    decision = solve_greedy(inst) if args.greedy else solve_exact(inst)
    result = {"objective": decision.objective, "admitted": [j for j, y in enumerate(decision.y) if y]}
    if args.check:
        if inst.J > BRUTE_FORCE_MAX_J:
            print(f"error: --check needs J <= {BRUTE_FORCE_MAX_J}", file=sys.stderr)
            return EXIT_CONFIG
        result["oracle"] = brute_force_oracle(inst)
    print(json.dumps(result, sort_keys=True))
    if args.check and not args.greedy and result["oracle"] != decision.objective:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_config(args: argparse.Namespace) -> int:
    try:
        overrides = [_parse_kv(s, "--set") for s in args.set]
        cfg = build_config(args.config, overrides, os.environ)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(render_toml(cfg))
    return EXIT_OK


# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        # usage errors are configuration errors, not runtime failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slicechain", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario or a sweep of scenarios")
    r.add_argument("--config", help="TOML scenario file")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one setting (repeatable; dotted keys for nested tables)")
    r.add_argument("--sweep", action="append", default=[], metavar="KEY=v1,v2,...",
                   help="sweep axis (repeatable; several axes form a grid)")
    r.add_argument("--seeds", type=int, default=1, help="repetitions per sweep point")
    r.add_argument("--paired", action="store_true",
                   help="use the same seeds at every sweep point (common random numbers)")
    r.add_argument("--out", required=True, help="output directory (must be new or empty)")
    r.add_argument("--consensus", choices=("solo", "raft", "kafka"))
    r.add_argument("--trace", action="store_true", help="write an event trace per run")
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="verify a chain dump")
    v.add_argument("dump")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("solve", help="solve an admission instance file")
    s.add_argument("instance", help="instance file, or - for stdin")
    s.add_argument("--greedy", action="store_true", help="density heuristic instead of exact")
    s.add_argument("--check", action="store_true", help="compare with brute force (J <= 20)")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("config", help="print the effective configuration")
    c.add_argument("--config")
    c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    c.set_defaults(func=cmd_config)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
