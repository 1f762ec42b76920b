"""Command-line entry point: ``preprocess``, ``run``, ``stats``, ``costmodel``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.  Option values resolve as command line > ``GRAPHMP_*``
environment variables > ``--config`` JSON file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .apps import make_program
from .cache import CacheMode
from .costmodel import CostParams, compare, measured_vs_model
from .engine import EngineOptions, metrics_to_csv, read_metrics, run
from .errors import DataError, InvariantViolation, SlideGraphError
from .graph import INF_DISTANCE
from .preprocess import DEFAULT_BUFFER_BYTES, DEFAULT_THRESHOLD_EDGES, preprocess
from .scheduler import DEFAULT_ACTIVATION_THRESHOLD
from .storage import VALUES_FILE, read_meta, read_shard_header, read_vertex_map, shard_path

log = logging.getLogger("slidegraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
ENV_PREFIX = "GRAPHMP_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "1", "yes"):
        return True
    if text.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {text!r}")


def _cache_mode(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(CacheMode(int(text)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"cache mode must be auto or 0-4, got {text!r}") from None


def _size(text: str) -> int:
    units = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30, "t": 1 << 40}
    t = text.strip().lower().rstrip("b")
    mult = units.get(t[-1:], 1)
    if t[-1:] in units:
        t = t[:-1]
    try:
        return int(float(t) * mult)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad byte size {text!r}") from None


# option name -> (converter, default)
SETTINGS: dict[str, tuple[Any, Any]] = {
    "workers": (int, os.cpu_count() or 1),
    "max_iter": (int, 200),
    "selective": (_on_off, True),
    "activation_threshold": (float, DEFAULT_ACTIVATION_THRESHOLD),
    "cache": (_cache_mode, "auto"),
    "cache_budget": (_size, None),
    "seed": (int, 0),
    "source": (int, 0),
    "threshold_edges": (int, DEFAULT_THRESHOLD_EDGES),
    "buffer_bytes": (_size, DEFAULT_BUFFER_BYTES),
}


def resolve_settings(args: argparse.Namespace, env=None, config: Optional[dict] = None) -> dict:
    env = os.environ if env is None else env
    config = config or {}
    out = {}
    for name, (conv, default) in SETTINGS.items():
        value = getattr(args, name, None)
        if value is None:
            raw = env.get(ENV_PREFIX + name.upper())
            if raw is None and name in config:
                raw = config[name]
            if raw is not None:
                try:
                    value = conv(raw) if isinstance(raw, str) else raw
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"bad value for {name}: {exc}") from None
        out[name] = default if value is None else value
    return out


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slidegraph", description="Out-of-core graph analytics on one machine.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--config", help="JSON file with option defaults")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    pre = sub.add_parser("preprocess", help="shard an edge list")
    pre.add_argument("input")
    pre.add_argument("workdir")
    pre.add_argument("--threshold-edges", type=int, dest="threshold_edges")
    pre.add_argument("--symmetrize", action="store_true")
    wgroup = pre.add_mutually_exclusive_group()
    wgroup.add_argument("--weighted", dest="weighted", action="store_const", const=True)
    wgroup.add_argument("--unweighted", dest="weighted", action="store_const", const=False)
    pre.add_argument("--buffer-bytes", type=_size, dest="buffer_bytes")
    pre.add_argument("--workers", type=int)

    r = sub.add_parser("run", help="run a vertex program on a preprocessed graph")
    r.add_argument("workdir")
    r.add_argument("--app", required=True, choices=["pagerank", "sssp", "cc"])
    r.add_argument("--source", type=int)
    r.add_argument("--max-iter", type=int, dest="max_iter")
    r.add_argument("--workers", type=int)
    r.add_argument("--cache", type=_cache_mode)
    r.add_argument("--cache-budget", type=_size, dest="cache_budget")
    r.add_argument("--cache-lru", action="store_true", dest="cache_lru")
    r.add_argument("--selective", type=_on_off)
    r.add_argument("--activation-threshold", type=float, dest="activation_threshold")
    r.add_argument("--seed", type=int)
    r.add_argument("--epsilon", type=float, help="PageRank convergence tolerance (default: exact)")
    r.add_argument("--real-weights", action="store_true", dest="real_weights",
                   help="SSSP with real-valued distances instead of integers")
    r.add_argument("--values", help=f"values output (default WORKDIR/{VALUES_FILE})")
    r.add_argument("--text", help="also write 'vertex<TAB>value' lines here")
    r.add_argument("--metrics", help="per-iteration JSON lines (default WORKDIR/metrics.jsonl)")
    r.add_argument("--metrics-csv", dest="metrics_csv")

    st = sub.add_parser("stats", help="shard size histogram")
    st.add_argument("workdir")

    cm = sub.add_parser("costmodel", help="I/O cost table for PSW/ESG/VSP/DSW/VSW")
    for name in ("C", "D", "V", "E", "P"):
        cm.add_argument(f"--{name}", type=float, required=True)
    cm.add_argument("--N", type=float, default=1)
    tgroup = cm.add_mutually_exclusive_group()
    tgroup.add_argument("--theta", type=float)
    tgroup.add_argument("--theta-from", dest="theta_from",
                        help="metrics file of a finished run; theta = steady-state disk/requested bytes")
    cm.add_argument("--format", choices=["text", "csv"], default="text")
    return p


def _validate_run_flags(args) -> None:
    if args.source is not None and args.app != "sssp":
        raise UsageError("--source only applies to --app sssp")
    if args.epsilon is not None and args.app != "pagerank":
        raise UsageError("--epsilon only applies to --app pagerank")
    if args.real_weights and args.app != "sssp":
        raise UsageError("--real-weights only applies to --app sssp")
    if args.epsilon is not None and args.epsilon < 0:
        raise UsageError("--epsilon must be non-negative")


def cmd_preprocess(args, settings) -> int:
    report = preprocess(args.input, args.workdir, settings["threshold_edges"], args.symmetrize,
                        args.weighted, settings["buffer_bytes"], settings["workers"])
    m = report.meta
    print(f"|V|={m.num_vertices} |E|={m.num_edges} P={m.num_shards} "
          f"weighted={int(m.weighted)} remapped={int(report.remapped)} "
          f"bytes_read={report.bytes_read} bytes_written={report.bytes_written}")
    return EXIT_OK


def format_value(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "inf" if np.isinf(x) else repr(float(x))
    return "inf" if int(x) == INF_DISTANCE else str(int(x))


def cmd_run(args, settings) -> int:
    workdir = Path(args.workdir)
    vmap = read_vertex_map(workdir)
    source = settings["source"]
    if vmap is not None and args.app == "sssp":
        try:
            source = int(vmap.to_dense([source])[0])
        except KeyError:
            raise DataError(f"source vertex {source} does not appear in the graph") from None
    program = make_program(args.app, source=source, real_weights=args.real_weights, epsilon=args.epsilon)
    values_path = Path(args.values) if args.values else workdir / VALUES_FILE
    metrics_path = Path(args.metrics) if args.metrics else workdir / "metrics.jsonl"
    opts = EngineOptions(
        workers=max(1, settings["workers"]),
        max_iterations=settings["max_iter"],
        selective=settings["selective"],
        activation_threshold=settings["activation_threshold"],
        cache_mode=settings["cache"],
        cache_budget=settings["cache_budget"],
        cache_lru=args.cache_lru,
        seed=settings["seed"],
        metrics_path=metrics_path,
        values_path=values_path,
    )
    result = run(workdir, program, opts)
    if args.text:
        ids = np.arange(len(result.values)) if vmap is None else vmap.original
        with open(args.text, "w") as f:
            for vid, x in zip(ids.tolist(), result.values):
                f.write(f"{vid}\t{format_value(x)}\n")
    if args.metrics_csv:
        metrics_to_csv(result.stats, args.metrics_csv)
    print(f"app={args.app} iterations={result.iterations} cache_mode={int(result.cache_mode)} "
          f"values={values_path} metrics={metrics_path}")
    return EXIT_OK


def shard_stats(workdir) -> dict:
    meta, degrees = read_meta(workdir)
    shards = []
    for k in range(meta.num_shards):
        hdr = read_shard_header(shard_path(workdir, k))
        shards.append({"shard": k, "start": hdr.start, "end": hdr.end,
                       "width": hdr.end - hdr.start + 1, "edges": hdr.edge_count})
    edges = [s["edges"] for s in shards]
    return {
        "num_vertices": meta.num_vertices,
        "num_edges": meta.num_edges,
        "num_shards": meta.num_shards,
        "max_in_degree": int(degrees.in_degree.max()) if meta.num_vertices else 0,
        "min_edges": min(edges),
        "max_edges": max(edges),
        "mean_edges": sum(edges) / len(edges),
        "shards": shards,
    }


def cmd_stats(args, settings) -> int:
    st = shard_stats(args.workdir)
    print(f"|V|={st['num_vertices']} |E|={st['num_edges']} P={st['num_shards']} "
          f"max_in_degree={st['max_in_degree']}")
    print(f"edges/shard min={st['min_edges']} max={st['max_edges']} mean={st['mean_edges']:.1f}")
    top = max(st["max_edges"], 1)
    for s in st["shards"]:
        bar = "#" * int(round(40 * s["edges"] / top))
        print(f"{s['shard']:>6} [{s['start']:>10}, {s['end']:>10}] width={s['width']:<8} "
              f"edges={s['edges']:<10} {bar}")
    return EXIT_OK


def cmd_costmodel(args, settings) -> int:
    theta = args.theta if args.theta is not None else 1.0
    if args.theta_from:
        records = read_metrics(args.theta_from)
        steady = [r for r in records if r.iteration >= 2] or records
        requested = sum(r.bytes_requested for r in steady)
        theta = sum(r.bytes_read_disk for r in steady) / requested if requested else 0.0
    try:
        p = CostParams(args.C, args.D, args.V, args.E, args.P, args.N, theta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = compare(p)
    print(table.to_csv() if args.format == "csv" else table.to_text(), end="" if args.format == "csv" else "\n")
    if args.theta_from:
        dev = measured_vs_model(read_metrics(args.theta_from), p)
        print(f"measured steady-state read {dev.measured_bytes:.0f} B vs model {dev.model_bytes:.0f} B "
              f"(relative error {dev.relative_error:.3f})")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "run": cmd_run,
    "stats": cmd_stats,
    "costmodel": cmd_costmodel,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand (preprocess, run, stats, costmodel)")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "run":
            _validate_run_flags(args)
        settings = resolve_settings(args, config=_load_config(args.config))
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except SlideGraphError as exc:
        cause = exc.__cause__
        if isinstance(cause, InvariantViolation):
            print(f"internal error: {exc}", file=sys.stderr)
            return EXIT_INTERNAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
